"""Whole-body haptic teleoperation of a quadruped foot.

Core package: model/kinematics/dynamics, motion-constraint projection,
Cartesian impedance control, contact-force QP, polytope geometry, feasibility
boundaries, a ground-truth simulator and the teleoperation service.
"""

__version__ = "0.1.0"

from .model import RobotModel, RobotState, load_model  # noqa: F401
