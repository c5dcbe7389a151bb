"""Orthogonal split of the dynamics into motion and constraint spaces.

P = I - J_c^+ J_c maps generalized torques into the subspace that produces no
contact-space effect; M_c = P M + I - P restores invertibility of the
projected inertia; N_s filters secondary-task torques so they cause zero
acceleration of the primary task under the projected dynamics metric.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .maths import svd_pinv
from .model import NV

PINV_RTOL = 1e-8


class ProjectionError(RuntimeError):
    """Raised when a task-space operator is numerically singular."""


@dataclass
class ProjectionSet:
    """Projection operators for one contact configuration snapshot."""

    P: np.ndarray                  # (18,18) motion-space projector
    Pdot: np.ndarray               # (18,18)
    M_c: np.ndarray                # (18,18) constraint-consistent inertia
    N_s: np.ndarray | None         # (18,18) or None when no swing task given
    pinv_rtol: float
    mc_condition: float
    rank_deficient: bool = False


def null_projector(J_c: np.ndarray, rtol: float = PINV_RTOL) -> np.ndarray:
    """P = I - pinv(J_c) J_c (orthogonal projector onto the contact null space)."""
    J_c = np.atleast_2d(np.asarray(J_c, dtype=float))
    if J_c.shape[0] == 0 or not np.any(J_c):
        return np.eye(J_c.shape[1] if J_c.size else NV)
    P = np.eye(J_c.shape[1]) - svd_pinv(J_c, rtol) @ J_c
    return 0.5 * (P + P.T)


def projector_rate(J_c: np.ndarray, Jdot_c: np.ndarray, P: np.ndarray,
                   rtol: float = PINV_RTOL) -> np.ndarray:
    """dP/dt under the constant-rank assumption:
    Pdot = -(J_c^+ Jdot_c P) - (J_c^+ Jdot_c P)^T."""
    J_c = np.atleast_2d(np.asarray(J_c, dtype=float))
    if J_c.shape[0] == 0 or not np.any(J_c):
        return np.zeros_like(P)
    A = svd_pinv(J_c, rtol) @ np.atleast_2d(Jdot_c) @ P
    return -A - A.T


def constrained_inertia(M: np.ndarray, P: np.ndarray) -> tuple[np.ndarray, float]:
    """M_c = P M + I - P and its condition number."""
    n = M.shape[0]
    M_c = P @ M + np.eye(n) - P
    cond = float(np.linalg.cond(M_c))
    return M_c, cond


def dyn_consistent_null(J_s: np.ndarray, M_c: np.ndarray, P: np.ndarray,
                        sigma_min: float = 1e-8) -> np.ndarray:
    """N_s = I - J_s^T (J_s M_c^-1 P J_s^T)^-1 J_s M_c^-1 P.

    Guarantees J_s M_c^-1 P N_s = 0, so torques filtered through N_s produce
    no acceleration of the J_s task in the projected dynamics.
    """
    J_s = np.atleast_2d(np.asarray(J_s, dtype=float))
    if J_s.shape[0] == 0:
        raise ProjectionError("swing task Jacobian must have at least one row")
    Mc_inv_P = np.linalg.solve(M_c, P)
    lam_inv = J_s @ Mc_inv_P @ J_s.T
    svals = np.linalg.svd(lam_inv, compute_uv=False)
    if svals[-1] < sigma_min * max(1.0, svals[0]):
        raise ProjectionError(
            f"task-space inertia near singular (sigma_min={svals[-1]:.3e})")
    return np.eye(J_s.shape[1]) - J_s.T @ np.linalg.solve(lam_inv, J_s @ Mc_inv_P)


def compute_projection(J_c: np.ndarray, Jdot_c: np.ndarray, M: np.ndarray,
                       J_s: np.ndarray | None = None,
                       rtol: float = PINV_RTOL) -> ProjectionSet:
    """Assemble the full projection set for one snapshot."""
    J_c = np.atleast_2d(np.asarray(J_c, dtype=float))
    P = null_projector(J_c, rtol)
    Pdot = projector_rate(J_c, Jdot_c, P, rtol)
    M_c, cond = constrained_inertia(M, P)
    rank_deficient = False
    if J_c.shape[0] and np.any(J_c):
        svals = np.linalg.svd(J_c, compute_uv=False)
        rank_deficient = bool(np.sum(svals > rtol * svals[0]) < J_c.shape[0])
    N_s = None
    if J_s is not None:
        N_s = dyn_consistent_null(J_s, M_c, P)
    return ProjectionSet(P=P, Pdot=Pdot, M_c=M_c, N_s=N_s, pinv_rtol=rtol,
                         mc_condition=cond, rank_deficient=rank_deficient)
