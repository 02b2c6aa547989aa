"""Whole-body quadruped loco-manipulation stack.

One control stack (FSM, PD, policy inference, arm IK, contact estimation,
teleop shaping) running unchanged over swappable backends: a reduced-order
physics simulator with two contact models, and a UDP robot bridge. A bench
harness reproduces the velocity-tracking RMSE methodology, and a telemetry
server feeds the browser dashboard.
"""

__version__ = "0.1.0"

from .model import RobotModel, StackConfig, load_config, load_default_config

__all__ = ["RobotModel", "StackConfig", "load_config", "load_default_config", "__version__"]
