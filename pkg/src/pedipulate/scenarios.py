"""Scenario scripting over the simulator + controller loop.

A scenario script (dict or YAML) names the stance, environment objects,
command program, boundary settings and duration; running it produces a
deterministic trace (CSV rows + JSON metadata) with slip events, estimated
vs ground-truth interaction forces and safety margins.

Built-in scenarios mirror the four experiment families: button press (force
estimation accuracy), pipe approach (posture tracking), surface sweep
(reachability extension) and scaffold push (feasible-force boundary).
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import __version__
from .control import (
    ControllerConfig,
    WholeBodyController,
    manipulation_stance,
    targets_from_state,
)
from .feasibility import (
    com_boundary,
    displacement_polytope,
    feasible_force_polytope,
)
from .impedance import TaskTarget
from .model import RobotModel, RobotState, evaluate_kinematics, load_model
from .sim import Button, Pipe, SimWorld, Wall, step


class ScenarioError(ValueError):
    pass


_OBJECT_TYPES = {"button": Button, "wall": Wall, "pipe": Pipe}


def _build_objects(entries):
    objects = []
    for entry in entries or []:
        entry = dict(entry)
        kind = entry.pop("type", None)
        if kind not in _OBJECT_TYPES:
            raise ScenarioError(f"unknown environment object type {kind!r}")
        objects.append(_OBJECT_TYPES[kind](**entry))
    return objects


@dataclass
class CommandSample:
    """One evaluated command: translation offset with derivatives plus an
    optional rotation (angle about a world axis) with derivatives."""

    offset: np.ndarray
    vel: np.ndarray
    acc: np.ndarray
    rot_axis: np.ndarray
    angle: float = 0.0
    angle_rate: float = 0.0
    angle_acc: float = 0.0


@dataclass
class CommandProgram:
    """Time-parameterized manipulating-foot target (relative to the start)."""

    kind: str                          # "hold" | "ramp" | "waypoints" | "sine"
    axis: np.ndarray = field(default_factory=lambda: np.zeros(3))
    distance: float = 0.0
    rate: float = 0.05                 # m/s
    start: float = 0.0
    waypoints: list = field(default_factory=list)   # [(t, offset3), ...]
    amplitude: float = 0.0             # sine: full excursion (m)
    frequency: float = 0.5             # Hz
    rot_axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0, 0.0]))
    rot_amplitude: float = 0.0         # rad, full excursion

    @staticmethod
    def from_dict(data) -> "CommandProgram":
        data = dict(data or {"type": "hold"})
        kind = data.pop("type", "hold")
        if kind == "hold":
            return CommandProgram(kind="hold")
        if kind == "ramp":
            axis = np.asarray(data.pop("axis"), dtype=float).reshape(3)
            n = np.linalg.norm(axis)
            if n < 1e-12:
                raise ScenarioError("ramp axis must be nonzero")
            return CommandProgram(kind="ramp", axis=axis / n,
                                  distance=float(data.pop("distance")),
                                  rate=float(data.pop("rate", 0.05)),
                                  start=float(data.pop("start", 0.0)))
        if kind == "waypoints":
            pts = [(float(t), np.asarray(off, dtype=float).reshape(3))
                   for t, off in data.pop("points")]
            if not pts:
                raise ScenarioError("waypoints command needs at least one point")
            return CommandProgram(kind="waypoints", waypoints=pts)
        if kind == "sine":
            axis = np.asarray(data.pop("axis", [1.0, 0.0, 0.0]), dtype=float).reshape(3)
            axis /= np.linalg.norm(axis)
            rot_axis = np.asarray(data.pop("rot_axis", [0.0, 1.0, 0.0]),
                                  dtype=float).reshape(3)
            rot_axis /= np.linalg.norm(rot_axis)
            return CommandProgram(kind="sine", axis=axis,
                                  amplitude=float(data.pop("amplitude", 0.1)),
                                  frequency=float(data.pop("frequency", 0.5)),
                                  rot_axis=rot_axis,
                                  rot_amplitude=float(data.pop("rot_amplitude", 0.0)))
        raise ScenarioError(f"unknown command type {kind!r}")

    def sample(self, t: float) -> CommandSample:
        zero = np.zeros(3)
        if self.kind == "hold":
            return CommandSample(zero, zero.copy(), zero.copy(), self.rot_axis)
        if self.kind == "ramp":
            travelled = max(0.0, t - self.start) * self.rate
            moving = 0.0 < (t - self.start) and travelled < self.distance
            return CommandSample(
                self.axis * min(travelled, self.distance),
                self.axis * (self.rate if moving else 0.0),
                zero.copy(), self.rot_axis)
        if self.kind == "waypoints":
            pts = self.waypoints
            if t <= pts[0][0]:
                return CommandSample(pts[0][1].copy(), zero.copy(), zero.copy(),
                                     self.rot_axis)
            for (t0, p0), (t1, p1) in zip(pts, pts[1:]):
                if t <= t1:
                    a = (t - t0) / max(t1 - t0, 1e-12)
                    vel = (p1 - p0) / max(t1 - t0, 1e-12)
                    return CommandSample((1 - a) * p0 + a * p1, vel, zero.copy(),
                                         self.rot_axis)
            return CommandSample(pts[-1][1].copy(), zero.copy(), zero.copy(),
                                 self.rot_axis)
        # sine: smooth (1 - cos) profile, zero initial velocity
        w = 2.0 * np.pi * self.frequency
        s = 0.5 * (1.0 - np.cos(w * t))
        sd = 0.5 * w * np.sin(w * t)
        sdd = 0.5 * w * w * np.cos(w * t)
        return CommandSample(
            offset=self.axis * (self.amplitude * s),
            vel=self.axis * (self.amplitude * sd),
            acc=self.axis * (self.amplitude * sdd),
            rot_axis=self.rot_axis,
            angle=self.rot_amplitude * s,
            angle_rate=self.rot_amplitude * sd,
            angle_acc=self.rot_amplitude * sdd,
        )


@dataclass
class BoundarySettings:
    enabled: bool = False
    alpha: float = 0.8                 # polytope shrink used when enabled
    facets: int = 4

    @staticmethod
    def from_dict(data) -> "BoundarySettings":
        data = dict(data or {})
        return BoundarySettings(
            enabled=bool(data.get("enabled", False)),
            alpha=float(data.get("alpha", 0.8)),
            facets=int(data.get("facets", 4)),
        )


@dataclass
class Scenario:
    name: str
    duration: float
    dt: float
    seed: int
    model_overrides: dict
    stance_kwargs: dict
    objects: list
    command: CommandProgram
    boundary: BoundarySettings
    controller: dict
    raw: dict

    @staticmethod
    def from_dict(data: dict) -> "Scenario":
        if not isinstance(data, dict) or not data:
            raise ScenarioError("scenario script must be a non-empty mapping")
        if "name" not in data:
            raise ScenarioError("scenario script needs a name")
        if "duration" not in data:
            raise ScenarioError("scenario script needs a duration")
        duration = float(data["duration"])
        if duration <= 0:
            raise ScenarioError("duration must be positive")
        return Scenario(
            name=str(data["name"]),
            duration=duration,
            dt=float(data.get("dt", 1.0 / 400.0)),
            seed=int(data.get("seed", 0)),
            model_overrides=dict(data.get("model", {})),
            stance_kwargs=dict(data.get("stance", {})),
            objects=_build_objects(data.get("environment")),
            command=CommandProgram.from_dict(data.get("command")),
            boundary=BoundarySettings.from_dict(data.get("boundary")),
            controller=dict(data.get("controller", {})),
            raw=data,
        )

    @staticmethod
    def from_yaml(text: str) -> "Scenario":
        return Scenario.from_dict(yaml.safe_load(text))


# ---------------------------------------------------------------------------
# built-in scripts (desk-scale analogs of the experiment families)
# ---------------------------------------------------------------------------

def builtin_scripts() -> dict:
    return {
        "button": {
            "name": "button",
            "duration": 5.0,
            "environment": [{
                "type": "button",
                "surface_point": [0.38, 0.2, 0.06],
                "axis": [0.0, 0.0, 1.0],
                "stiffness": 1000.0,
                "damping": 60.0,
                "travel": 0.02,
                "stop_stiffness_ratio": 8.0,
            }],
            # descend onto the button, press past the travel stop, release
            "command": {"type": "waypoints", "points": [
                [0.0, [0.0, 0.0, 0.0]],
                [0.5, [0.0, 0.0, 0.0]],
                [1.5, [0.0, 0.0, -0.03]],
                [3.0, [0.0, 0.0, -0.09]],
                [3.8, [0.0, 0.0, -0.09]],
                [4.6, [0.0, 0.0, 0.0]],
            ]},
        },
        "push": {
            "name": "push",
            "duration": 5.0,
            "model": {"friction_coeff": 0.4},
            "environment": [{
                "type": "wall",
                "point": [0.46, 0.2, 0.08],
                "normal": [-1.0, 0.0, 0.0],
                "stiffness": 5000.0,
                "damping": 100.0,
            }],
            "command": {"type": "ramp", "axis": [1.0, 0.0, 0.25],
                        "distance": 0.16, "rate": 0.05, "start": 0.5},
            "boundary": {"enabled": False, "alpha": 0.8, "facets": 8},
            "controller": {"friction_facets": 8},
        },
        "pipe": {
            "name": "pipe",
            "duration": 4.0,
            "environment": [{
                "type": "pipe",
                "axis_point": [0.5, 0.2, 0.16],
                "axis_dir": [1.0, 0.0, 0.0],
                "radius": 0.06,
            }],
            "command": {"type": "waypoints", "points": [
                [0.0, [0.0, 0.0, 0.0]],
                [1.5, [0.02, 0.0, 0.08]],
                [3.5, [0.1, 0.0, 0.08]],
            ]},
            "controller": {"pipe_align": True},
        },
        "surface": {
            "name": "surface",
            "duration": 6.0,
            "stance": {"foot_lift": 0.05},
            # deep low sweep: the torso must lean to extend the reach
            "command": {"type": "waypoints", "points": [
                [0.0, [0.0, 0.0, 0.0]],
                [1.5, [0.05, 0.0, -0.22]],
                [3.0, [0.17, 0.0, -0.22]],
                [4.5, [-0.03, 0.0, -0.22]],
                [6.0, [0.05, 0.0, -0.22]],
            ]},
        },
        "tracking": {
            "name": "tracking",
            "duration": 10.0,
            "command": {"type": "sine", "axis": [1.0, 0.0, 0.0],
                        "amplitude": 0.1, "frequency": 0.5,
                        "rot_axis": [0.0, 1.0, 0.0], "rot_amplitude": 0.25},
        },
    }


# ---------------------------------------------------------------------------
# trace
# ---------------------------------------------------------------------------

@dataclass
class ScenarioTrace:
    scenario: Scenario
    model: RobotModel
    columns: list
    rows: list                         # list of float lists
    events: list
    metrics: dict

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(self.columns) + "\n")
        for row in self.rows:
            buf.write(",".join(repr(v) if isinstance(v, float) else str(v)
                               for v in row) + "\n")
        return buf.getvalue()

    def metadata(self) -> dict:
        return {
            "package_version": __version__,
            "scenario": self.scenario.raw,
            "model_hash": self.model.config_hash(),
            "dt": self.scenario.dt,
            "seed": self.scenario.seed,
            "columns": self.columns,
            "events": [
                {"time": ev.time, "leg": ev.leg, "constraint": ev.constraint,
                 "magnitude": ev.magnitude, "direction": list(ev.direction)}
                for ev in self.events
            ],
            "metrics": self.metrics,
        }

    def metadata_json(self) -> str:
        return json.dumps(self.metadata(), sort_keys=True)


def _pipe_orientation(pipe: Pipe) -> np.ndarray:
    """Foot orientation whose z axis (shank) aligns with the pipe axis."""
    z = pipe.axis_dir
    ref = np.array([0.0, 0.0, 1.0])
    if abs(z @ ref) > 0.95:
        ref = np.array([0.0, 1.0, 0.0])
    x = np.cross(ref, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.column_stack([x, y, z])


def run_scenario(script, model: RobotModel | None = None) -> ScenarioTrace:
    """Run a scripted scenario at the control rate and record the trace."""
    if isinstance(script, str):
        scripts = builtin_scripts()
        if script in scripts:
            scenario = Scenario.from_dict(scripts[script])
        else:
            scenario = Scenario.from_yaml(script)
    elif isinstance(script, Scenario):
        scenario = script
    else:
        scenario = Scenario.from_dict(script)

    if model is None:
        model = load_model(scenario.model_overrides or None)

    stance = manipulation_stance(model, **scenario.stance_kwargs)
    world = SimWorld(model=model, state=stance.copy(), dt=scenario.dt,
                     objects=scenario.objects)

    ctrl_kwargs = dict(scenario.controller)
    pipe_align = bool(ctrl_kwargs.pop("pipe_align", False))
    cfg = ControllerConfig(dt=scenario.dt, **ctrl_kwargs)
    ctrl = WholeBodyController(model, world.state, cfg)
    foot0, base0 = targets_from_state(model, world.state)

    pipe = next((o for o in scenario.objects if isinstance(o, Pipe)), None)
    target_rot = _pipe_orientation(pipe) if (pipe_align and pipe is not None) else foot0.rot

    # boundary data from the starting configuration (offline precompute)
    disp_poly = None
    ffp = None
    if scenario.boundary.enabled:
        ffp = feasible_force_polytope(model, stance, shrink=scenario.boundary.alpha,
                                      facets=scenario.boundary.facets)
        disp_poly = displacement_polytope(ffp, ctrl.foot_gains.K[0:3])

    n_steps = int(round(scenario.duration / scenario.dt))
    columns = (["t"]
               + [f"q{i}" for i in range(19)]
               + [f"u{i}" for i in range(18)]
               + [f"tau{i}" for i in range(12)]
               + [f"lambda{i}" for i in range(9)]
               + [f"f_est{i}" for i in range(3)]
               + [f"f_true{i}" for i in range(3)]
               + ["com_margin", "boundary_clamped", "n_events"])
    rows = []
    est_err = []
    track_err = []
    rot_err = []
    align_err = []
    clamped_any = False

    from .maths import quat_exp, quat_to_rot

    for k in range(n_steps):
        t = k * scenario.dt
        cmd = scenario.command.sample(t)
        target_pos = foot0.pos + cmd.offset
        vel6 = np.concatenate([cmd.vel, cmd.rot_axis * cmd.angle_rate])
        acc6 = np.concatenate([cmd.acc, cmd.rot_axis * cmd.angle_acc])
        rot = target_rot
        if cmd.angle != 0.0:
            rot = quat_to_rot(quat_exp(cmd.rot_axis * cmd.angle)) @ target_rot
        clamped = 0
        if disp_poly is not None:
            kin_now = evaluate_kinematics(model, world.state)
            delta = target_pos - kin_now.foot_pos[0]
            if not disp_poly.contains(delta):
                direction = delta / max(np.linalg.norm(delta), 1e-12)
                t_max = disp_poly.boundary_distance(np.zeros(3), direction)
                if np.isfinite(t_max) and t_max > 0:
                    target_pos = kin_now.foot_pos[0] + direction * min(
                        np.linalg.norm(delta), t_max)
                    clamped = 1
                    clamped_any = True
        foot_target = TaskTarget(pos=target_pos, rot=rot, vel=vel6, acc=acc6)

        res = ctrl.tick(world.state, foot_target, base0)
        step(world, res.tau)
        if world.halted:
            raise ScenarioError(f"simulation halted: {world.halted}")

        boundary = com_boundary(model, world.state)
        margin = boundary.margin()
        f_true = world.last_foot_force.copy()          # force on foot
        f_est = res.wrench_estimate.force
        lam = world.last_contact_force
        row = ([t]
               + world.state.flat_q().tolist()
               + world.state.velocity.tolist()
               + res.tau.tolist()
               + lam.tolist()
               + f_est.tolist()
               + (-f_true).tolist()                    # applied convention
               + [margin, float(clamped), float(len(world.events))])
        rows.append(row)

        if np.linalg.norm(f_true) > 1.0:
            est_err.append(np.linalg.norm(f_est - (-f_true)))
        track_err.append(float(np.linalg.norm(res.foot_error[0:3])))
        rot_err.append(float(np.linalg.norm(res.foot_error[3:])))
        if pipe is not None:
            kin_now = evaluate_kinematics(model, world.state)
            align_err.append(pipe.alignment_error(kin_now.foot_rot[0]))

    metrics = {
        "steps": n_steps,
        "slip_events": len(world.events),
        "max_tracking_error": float(np.max(track_err)) if track_err else 0.0,
        "max_orientation_error": float(np.max(rot_err)) if rot_err else 0.0,
        "boundary_clamped": clamped_any,
        "final_com_margin": rows[-1][columns.index("com_margin")] if rows else None,
    }
    if est_err:
        metrics["mean_force_estimation_error"] = float(np.mean(est_err))
    if align_err:
        metrics["final_alignment_error_deg"] = float(np.degrees(align_err[-1]))
        metrics["min_alignment_error_deg"] = float(np.degrees(np.min(align_err)))

    return ScenarioTrace(scenario=scenario, model=model, columns=columns,
                         rows=rows, events=list(world.events), metrics=metrics)
