"""Convex polytope kernel: dual H/V representations and the operations the
feasibility pipeline needs (conversion, Minkowski sums, intersections, affine
images/preimages, support and membership queries).

Polytopes may be degenerate (lower-dimensional): hulls are taken inside the
affine hull of the input and flats are carried as paired +/- halfspace rows.
All numerics are floating point with explicit tolerances; halfspace rows are
kept unit-norm so tolerances read as distances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, HalfspaceIntersection
from scipy.spatial import QhullError

TOL = 1e-9
MEMBERSHIP_TOL = 1e-8


class GeometryError(ValueError):
    pass


class UnboundedPolytopeError(GeometryError):
    def __init__(self, directions):
        self.directions = np.atleast_2d(directions)
        super().__init__(
            f"polytope is unbounded (recession directions: {self.directions.tolist()})")


def _lp(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, bounds=None):
    return linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                   bounds=bounds if bounds is not None else [(None, None)] * len(c),
                   method="highs")


def _normalize_rows(A: np.ndarray, b: np.ndarray):
    norms = np.linalg.norm(A, axis=1)
    keep = norms > TOL
    # zero rows: 0 <= b is vacuous when b >= 0, infeasible otherwise
    if np.any(~keep & (b < -TOL)):
        return None, None
    A, b, norms = A[keep], b[keep], norms[keep]
    return A / norms[:, None], b / norms


def _dedupe_rows(A: np.ndarray, b: np.ndarray, tol: float = 1e-9):
    if len(A) == 0:
        return A, b
    rows = np.hstack([A, b[:, None]])
    order = np.lexsort(rows.T[::-1])
    sorted_rows = rows[order]
    diff = np.abs(np.diff(sorted_rows, axis=0)).max(axis=1)
    keep_mask = np.concatenate([[True], diff >= tol])
    keep = np.sort(order[keep_mask])
    return A[keep], b[keep]


def _dedupe_points(pts: np.ndarray, tol: float):
    if len(pts) == 0:
        return pts
    out = []
    for p in pts:
        if not any(np.linalg.norm(p - q) < tol for q in out):
            out.append(p)
    return np.array(out)


@dataclass
class Polytope:
    """Convex polytope in R^dim with optional halfspace and vertex reps.

    `A x <= b` is the halfspace form; equality constraints of degenerate
    polytopes appear as paired rows (a, b) and (-a, -b).  The `authoritative`
    flag records which representation the polytope was built from.
    """

    dim: int
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    vertices: np.ndarray | None = None
    authoritative: str = "h"
    _empty: bool | None = field(default=None, repr=False)

    # -- constructors -------------------------------------------------------

    @staticmethod
    def from_halfspaces(A, b) -> "Polytope":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.asarray(b, dtype=float).reshape(-1)
        if A.shape[0] != b.shape[0]:
            raise GeometryError("halfspace row count mismatch")
        An, bn = _normalize_rows(A, b)
        if An is None:
            poly = Polytope(dim=A.shape[1], A=np.zeros((1, A.shape[1])), b=np.array([-1.0]),
                            authoritative="h")
            poly._empty = True
            poly.vertices = np.zeros((0, A.shape[1]))
            return poly
        return Polytope(dim=A.shape[1], A=An, b=bn, authoritative="h")

    @staticmethod
    def from_vertices(vertices) -> "Polytope":
        vertices = np.atleast_2d(np.asarray(vertices, dtype=float))
        if vertices.shape[0] == 0:
            raise GeometryError("need at least one vertex")
        return Polytope(dim=vertices.shape[1], vertices=vertices, authoritative="v")

    @staticmethod
    def from_point_hull(points) -> "Polytope":
        """Hull a point cloud once, keeping both reps (extreme points + facets)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        A, b, verts = _points_to_hrep(points)
        return Polytope(dim=points.shape[1], A=A, b=b, vertices=verts,
                        authoritative="v")

    @staticmethod
    def empty(dim: int) -> "Polytope":
        poly = Polytope(dim=dim, A=np.zeros((1, dim)), b=np.array([-1.0]),
                        vertices=np.zeros((0, dim)), authoritative="h")
        poly._empty = True
        return poly

    @staticmethod
    def box(lo, hi) -> "Polytope":
        lo = np.asarray(lo, dtype=float).reshape(-1)
        hi = np.asarray(hi, dtype=float).reshape(-1)
        if np.any(lo > hi):
            return Polytope.empty(len(lo))
        d = len(lo)
        A = np.vstack([np.eye(d), -np.eye(d)])
        b = np.concatenate([hi, -lo])
        return Polytope.from_halfspaces(A, b)

    # -- basic queries -------------------------------------------------------

    @property
    def is_empty(self) -> bool:
        if self._empty is None:
            if self.vertices is not None and self.authoritative == "v":
                self._empty = self.vertices.shape[0] == 0
            elif self.A is not None:
                res = _lp(np.zeros(self.dim), A_ub=self.A, b_ub=self.b)
                self._empty = res.status == 2
            else:
                self._empty = False
        return self._empty

    def has_hrep(self) -> bool:
        return self.A is not None

    def has_vrep(self) -> bool:
        return self.vertices is not None

    def contains(self, x, tol: float = MEMBERSHIP_TOL) -> bool:
        x = np.asarray(x, dtype=float).reshape(self.dim)
        if self.is_empty:
            return False
        A, b = self.hrep()
        return bool(np.all(A @ x <= b + tol))

    def membership_margin(self, x) -> float:
        """max_i (A_i x - b_i) with unit rows: negative inside, positive outside."""
        A, b = self.hrep()
        x = np.asarray(x, dtype=float).reshape(self.dim)
        return float(np.max(A @ x - b))

    def support(self, u) -> float:
        """max u.x over the polytope."""
        if self.is_empty:
            raise GeometryError("support of an empty polytope")
        u = np.asarray(u, dtype=float).reshape(self.dim)
        V = self.vrep()
        return float(np.max(V @ u))

    def boundary_distance(self, x, u) -> float:
        """Largest t with x + t*u inside; negative when x is outside."""
        A, b = self.hrep()
        x = np.asarray(x, dtype=float).reshape(self.dim)
        u = np.asarray(u, dtype=float).reshape(self.dim)
        slack = b - A @ x
        worst = float(np.min(slack))
        if worst < -MEMBERSHIP_TOL:
            return worst  # exterior point: negative distance to the worst face
        along = A @ u
        mask = along > TOL
        if not np.any(mask):
            return np.inf
        return float(np.min(slack[mask] / along[mask]))

    def scale(self, alpha: float) -> "Polytope":
        """Scale about the origin; alpha in (0, 1] keeps the result inside."""
        if not 0.0 < alpha <= 1.0:
            raise GeometryError("scale factor must be in (0, 1]")
        out = Polytope(dim=self.dim, authoritative=self.authoritative)
        if self.A is not None:
            out.A, out.b = self.A.copy(), alpha * self.b
        if self.vertices is not None:
            out.vertices = alpha * self.vertices
        out._empty = self._empty
        return out

    # -- representation conversion -------------------------------------------

    def hrep(self):
        if self.A is None:
            self._compute_hrep()
        return self.A, self.b

    def vrep(self):
        if self.vertices is None:
            self._compute_vrep()
        return self.vertices

    def with_both_reps(self) -> "Polytope":
        """Double-description view: both reps present, redundancy removed."""
        if self.is_empty:
            return Polytope.empty(self.dim)
        if self.has_hrep() and self.has_vrep():
            return self
        if self.authoritative == "v":
            out = Polytope.from_point_hull(self.vrep())
        else:
            A, b = prune_halfspaces(*self.hrep())
            out = Polytope.from_halfspaces(A, b)
            out._compute_vrep()
            out.A, out.b = prune_halfspaces(out.A, out.b)
        return out

    def _compute_hrep(self) -> None:
        A, b, _ = _points_to_hrep(self.vertices)
        self.A, self.b = A, b

    def _compute_vrep(self) -> None:
        self.vertices = _vertex_enumeration(self.A, self.b)
        if self.vertices.shape[0] == 0:
            self._empty = True


# ---------------------------------------------------------------------------
# V -> H (hull in the affine hull of the points)
# ---------------------------------------------------------------------------

def _points_to_hrep(points: np.ndarray, tol: float = TOL):
    """Hull of a point set; returns (A, b, vertex_subset).

    Works on affinely dependent sets: facets are computed inside the affine
    hull and complemented with +/- equality rows for the flat directions.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    d = points.shape[1]
    c = points.mean(axis=0)
    X = points - c
    scale = max(1.0, float(np.max(np.abs(X))) if X.size else 1.0)
    _, s, Vt = np.linalg.svd(X, full_matrices=True) if X.size else (None, np.zeros(0), np.eye(d))
    rank = int(np.sum(s > 1e-9 * scale * max(1.0, np.sqrt(len(points)))))

    # equality rows for every flat direction
    flat_normals = Vt[rank:d]
    flat_offsets = flat_normals @ c
    eq_A = np.vstack([flat_normals, -flat_normals]) if flat_normals.size else np.zeros((0, d))
    eq_b = np.concatenate([flat_offsets, -flat_offsets]) if flat_normals.size else np.zeros(0)

    if rank == 0:
        verts = c[None, :]
        A = eq_A
        b = eq_b
    elif rank == 1:
        axis = Vt[0]
        proj = X @ axis
        lo, hi = float(proj.min()), float(proj.max())
        A = np.vstack([eq_A, axis, -axis])
        b = np.concatenate([eq_b, [hi + axis @ c, -(lo + axis @ c)]])
        verts = np.array([c + lo * axis, c + hi * axis])
    else:
        basis = Vt[:rank].T
        Y = X @ basis
        try:
            hull = ConvexHull(Y)
        except QhullError:
            hull = ConvexHull(Y, qhull_options="QJ")
        A_y = hull.equations[:, :-1]
        off = hull.equations[:, -1]
        A_full = A_y @ basis.T
        b_full = -off + A_full @ c
        A = np.vstack([eq_A, A_full])
        b = np.concatenate([eq_b, b_full])
        verts = points[hull.vertices]
    A, b = _normalize_rows(A, b)
    A, b = _dedupe_rows(A, b, 1e-9)
    return A, b, verts


def hull_vertices(points: np.ndarray) -> np.ndarray:
    """Extreme points of a point set (affine-hull aware)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[0] <= 1:
        return points.copy()
    _, _, verts = _points_to_hrep(points)
    return verts


# ---------------------------------------------------------------------------
# H -> V
# ---------------------------------------------------------------------------

def _chebyshev_center(A: np.ndarray, b: np.ndarray):
    d = A.shape[1]
    c = np.zeros(d + 1)
    c[-1] = -1.0
    A_ub = np.hstack([A, np.ones((A.shape[0], 1))])
    res = _lp(c, A_ub=A_ub, b_ub=b, bounds=[(None, None)] * d + [(0, None)])
    if res.status == 2:
        return None, None
    if res.status != 0:
        # radius unbounded: pick radius-capped center
        res = _lp(c, A_ub=A_ub, b_ub=b, bounds=[(None, None)] * d + [(0, 1.0)])
        if res.status != 0:
            return None, None
    return res.x[:d], float(res.x[-1])


def _recession_directions(A: np.ndarray):
    """Nonzero directions of the recession cone {A r <= 0}, if any."""
    d = A.shape[1]
    dirs = []
    for sign in (1.0, -1.0):
        for i in range(d):
            c = np.zeros(d)
            c[i] = -sign
            res = _lp(c, A_ub=A, b_ub=np.zeros(A.shape[0]), bounds=[(-1, 1)] * d)
            if res.status == 0 and -res.fun > 1e-7:
                r = res.x / np.linalg.norm(res.x)
                if not any(np.linalg.norm(r - e) < 1e-6 for e in dirs):
                    dirs.append(r)
    return np.array(dirs) if dirs else np.zeros((0, d))


def _vertex_enumeration(A: np.ndarray, b: np.ndarray, depth: int = 0) -> np.ndarray:
    d = A.shape[1]
    if depth > d + 1:
        raise GeometryError("vertex enumeration recursion failed to reduce dimension")

    if d == 1:
        a = A[:, 0]
        ups = b[a > TOL] / a[a > TOL]
        los = b[a < -TOL] / a[a < -TOL]
        if ups.size == 0 or los.size == 0:
            raise UnboundedPolytopeError(np.array([[1.0 if ups.size == 0 else -1.0]]))
        hi, lo = float(np.min(ups)), float(np.max(los))
        if lo > hi + 1e-9 * max(1.0, abs(hi), abs(lo)):
            return np.zeros((0, 1))
        if abs(hi - lo) < 1e-12:
            return np.array([[lo]])
        return np.array([[lo], [hi]])

    x0, radius = _chebyshev_center(A, b)
    if x0 is None:
        return np.zeros((0, d))
    scale = max(1.0, float(np.max(np.abs(b))))

    if radius > 1e-9 * scale:
        rec = _recession_directions(A)
        if rec.shape[0]:
            raise UnboundedPolytopeError(rec)
        try:
            hs = HalfspaceIntersection(np.hstack([A, -b[:, None]]), x0)
            pts = hs.intersections
        except QhullError:
            # fall back on a slightly pruned system
            A2, b2 = prune_halfspaces(A, b)
            hs = HalfspaceIntersection(np.hstack([A2, -b2[:, None]]), x0)
            pts = hs.intersections
        pts = pts[np.all(np.isfinite(pts), axis=1)]
        pts = _dedupe_points(pts, 1e-7 * scale)
        return hull_vertices(pts)

    # flat polytope: find implicit equalities (max slack == 0) and reduce
    slack_max = np.zeros(A.shape[0])
    for i in range(A.shape[0]):
        res = _lp(A[i], A_ub=A, b_ub=b)  # minimize A_i x -> max slack = b_i - min
        if res.status == 3:
            slack_max[i] = np.inf
        elif res.status == 0:
            slack_max[i] = b[i] - res.fun
        else:
            return np.zeros((0, d))
    eq = slack_max < 1e-7 * scale
    if not np.any(eq):
        # numerically thin but no implicit equalities found: treat center as vertex
        return x0[None, :]
    A_eq, b_eq = A[eq], b[eq]
    x_p, *_ = np.linalg.lstsq(A_eq, b_eq, rcond=None)
    _, s, Vt = np.linalg.svd(A_eq, full_matrices=True)
    rank = int(np.sum(s > 1e-10 * max(1.0, s[0] if s.size else 1.0)))
    if rank == d:
        return x_p[None, :]
    U = Vt[rank:].T                      # null-space basis (d x m)
    A_red = A[~eq] @ U
    b_red = b[~eq] - A[~eq] @ x_p
    keep = np.linalg.norm(A_red, axis=1) > TOL
    if np.any(~keep & (b_red < -1e-7 * scale)):
        return np.zeros((0, d))
    A_red, b_red = A_red[keep], b_red[keep]
    if A_red.shape[0] == 0:
        raise UnboundedPolytopeError(U.T)
    An, bn = _normalize_rows(A_red, b_red)
    if An is None:
        return np.zeros((0, d))
    ys = _vertex_enumeration(An, bn, depth + 1)
    return x_p[None, :] + ys @ U.T


# ---------------------------------------------------------------------------
# redundancy removal
# ---------------------------------------------------------------------------

def prune_halfspaces(A: np.ndarray, b: np.ndarray, tol: float = 1e-9):
    """Remove duplicate and redundant rows (LP certificate per removal)."""
    An, bn = _normalize_rows(np.atleast_2d(A), np.asarray(b, dtype=float).reshape(-1))
    if An is None:
        return np.zeros((1, A.shape[1])), np.array([-1.0])
    An, bn = _dedupe_rows(An, bn, tol)
    # protect equality pairs: row i with a matching opposite row
    n = An.shape[0]
    protected = np.zeros(n, dtype=bool)
    for i in range(n):
        if protected[i]:
            continue
        diff = np.abs(An + An[i]).sum(axis=1) + np.abs(bn + bn[i])
        j = np.nonzero(diff < 1e-9)[0]
        if j.size:
            protected[i] = True
            protected[j] = True

    keep = list(range(n))
    i = 0
    while i < len(keep):
        idx = keep[i]
        if protected[idx]:
            i += 1
            continue
        others = [k for k in keep if k != idx]
        if not others:
            break
        res = _lp(-An[idx], A_ub=np.vstack([An[others], An[idx][None, :]]),
                  b_ub=np.concatenate([bn[others], [bn[idx] + 1.0]]))
        if res.status == 0 and -res.fun <= bn[idx] + tol:
            keep.pop(i)
        else:
            i += 1
    return An[keep], bn[keep]


# ---------------------------------------------------------------------------
# polytope algebra
# ---------------------------------------------------------------------------

def minkowski_sum(p1: Polytope, p2: Polytope) -> Polytope:
    if p1.dim != p2.dim:
        raise GeometryError("dimension mismatch in Minkowski sum")
    if p1.is_empty or p2.is_empty:
        return Polytope.empty(p1.dim)
    v1, v2 = p1.vrep(), p2.vrep()
    sums = (v1[:, None, :] + v2[None, :, :]).reshape(-1, p1.dim)
    return Polytope.from_point_hull(sums)


def intersect(p1: Polytope, p2: Polytope) -> Polytope:
    if p1.dim != p2.dim:
        raise GeometryError("dimension mismatch in intersection")
    if p1.is_empty or p2.is_empty:
        return Polytope.empty(p1.dim)
    A1, b1 = p1.hrep()
    A2, b2 = p2.hrep()
    A = np.vstack([A1, A2])
    b = np.concatenate([b1, b2])
    res = _lp(np.zeros(p1.dim), A_ub=A, b_ub=b)
    if res.status == 2:
        return Polytope.empty(p1.dim)
    A, b = prune_halfspaces(A, b)
    return Polytope.from_halfspaces(A, b)


def affine_image(p: Polytope, T: np.ndarray, offset=None) -> Polytope:
    """Image {T x + c : x in P}.

    Invertible square maps transform both representations exactly; general
    maps go through the vertex representation and a fresh hull.
    """
    T = np.atleast_2d(np.asarray(T, dtype=float))
    if T.shape[1] != p.dim:
        raise GeometryError(f"map expects dimension {T.shape[1]}, polytope has {p.dim}")
    if p.is_empty:
        return Polytope.empty(T.shape[0])
    c = np.zeros(T.shape[0]) if offset is None else np.asarray(offset, dtype=float).reshape(T.shape[0])
    square = T.shape[0] == T.shape[1]
    if square and np.linalg.cond(T) < 1e8:
        T_inv = np.linalg.inv(T)
        out = Polytope(dim=T.shape[0], authoritative=p.authoritative)
        if p.has_vrep():
            out.vertices = p.vertices @ T.T + c
        if p.has_hrep():
            A_new = p.A @ T_inv
            b_new = p.b + A_new @ c
            out.A, out.b = _normalize_rows(A_new, b_new)
        out._empty = p._empty
        return out
    verts = p.vrep() @ T.T + c
    return Polytope.from_point_hull(verts)


def preimage_halfspaces(p: Polytope, T: np.ndarray) -> Polytope:
    """{x : T x in P} from the halfspace form of P."""
    T = np.atleast_2d(np.asarray(T, dtype=float))
    if T.shape[0] != p.dim:
        raise GeometryError(f"map produces dimension {T.shape[0]}, polytope has {p.dim}")
    A, b = p.hrep()
    return Polytope.from_halfspaces(A @ T, b)
