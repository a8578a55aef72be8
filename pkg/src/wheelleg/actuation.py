"""PD control law, DC-motor torque envelope, and torque clamping.

Joint order everywhere: (front hip, front knee, front wheel,
rear hip, rear knee, rear wheel).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NUM_JOINTS = 6
LEG_JOINTS = np.array([0, 1, 3, 4])
KNEE_JOINTS = np.array([1, 4])
WHEEL_JOINTS = np.array([2, 5])
_IS_WHEEL = np.array([False, False, True, False, False, True])
_IS_KNEE = np.array([False, True, False, False, True, False])


@dataclass
class GainSet:
    """Per-joint PD gains; K_p is zero on wheel joints (velocity control)."""

    kp: np.ndarray
    kd: np.ndarray

    def __post_init__(self):
        self.kp = np.asarray(self.kp, dtype=np.float64)
        self.kd = np.asarray(self.kd, dtype=np.float64)
        if self.kp.shape != (NUM_JOINTS,) or self.kd.shape != (NUM_JOINTS,):
            raise ValueError("gains must have length 6")
        if np.any(self.kd <= 0):
            raise ValueError("K_d must be positive for all joints")
        if np.any(self.kp[LEG_JOINTS] <= 0) or np.any(self.kp[WHEEL_JOINTS] != 0):
            raise ValueError("K_p must be positive on leg joints, zero on wheels")

    @classmethod
    def from_config(cls, cfg: dict) -> "GainSet":
        kp = np.where(_IS_WHEEL, 0.0, float(cfg["kp"]))
        kd = np.where(_IS_WHEEL, float(cfg["kd_wheel"]), float(cfg["kd_leg"]))
        return cls(kp, kd)


@dataclass
class MotorLimitModel:
    """Piecewise torque-speed envelope with cosine calf-position scaling.

    tau_v(w) is flat at tau_max up to omega_break, falls linearly to zero
    at omega_max, and stays zero beyond. Knee joints additionally scale by
    max(floor, cos(q - q_ref)).
    """

    tau_max: np.ndarray          # per joint
    omega_break: np.ndarray
    omega_max: np.ndarray
    q_ref: float = 0.0           # knee reference angle
    floor: float = 0.3
    unlimited: bool = False

    def __post_init__(self):
        self.tau_max = np.asarray(self.tau_max, dtype=np.float64)
        self.omega_break = np.asarray(self.omega_break, dtype=np.float64)
        self.omega_max = np.asarray(self.omega_max, dtype=np.float64)
        if np.any(self.tau_max <= 0):
            raise ValueError("tau_max must be positive")
        if np.any(self.omega_break <= 0) or np.any(self.omega_max <= self.omega_break):
            raise ValueError("require 0 < omega_break < omega_max")
        if not (0.0 < self.floor <= 1.0):
            raise ValueError("floor must be in (0, 1]")

    @classmethod
    def from_config(cls, cfg: dict, q_stand_knee: float) -> "MotorLimitModel":
        tau = np.where(_IS_WHEEL, float(cfg["tau_max_wheel"]), float(cfg["tau_max_leg"]))
        wb = np.where(
            _IS_WHEEL, float(cfg["omega_break_wheel"]), float(cfg["omega_break_leg"])
        )
        wm = np.where(
            _IS_WHEEL, float(cfg["omega_max_wheel"]), float(cfg["omega_max_leg"])
        )
        return cls(
            tau, wb, wm,
            q_ref=q_stand_knee,
            floor=float(cfg["calf_scale_floor"]),
            unlimited=bool(cfg.get("unlimited", False)),
        )

    def limits(self, q: np.ndarray, qd: np.ndarray) -> np.ndarray:
        """Torque limit per joint at the given joint state."""
        if self.unlimited:
            return np.full(NUM_JOINTS, np.inf)
        w = np.abs(qd)
        frac = (self.omega_max - w) / (self.omega_max - self.omega_break)
        tau_v = self.tau_max * np.clip(frac, 0.0, 1.0)
        scale = np.where(
            _IS_KNEE, np.maximum(self.floor, np.cos(q - self.q_ref)), 1.0
        )
        return tau_v * scale


def torque_limit(joint_index: int, q: float, qd: float, model: MotorLimitModel) -> float:
    qv = np.zeros(NUM_JOINTS)
    wv = np.zeros(NUM_JOINTS)
    qv[joint_index] = q
    wv[joint_index] = qd
    return float(model.limits(qv, wv)[joint_index])


def pd_torque(action, q, qd, gains: GainSet, gain_multiplier=None) -> np.ndarray:
    """Stabilizing PD: position tracking on legs, velocity tracking on wheels."""
    action = np.asarray(action, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    qd = np.asarray(qd, dtype=np.float64)
    if action.shape != (NUM_JOINTS,):
        raise ValueError("action must have length 6")
    tau = np.where(
        _IS_WHEEL,
        gains.kd * (action - qd),
        gains.kp * (action - q) - gains.kd * qd,
    )
    if gain_multiplier is not None:
        tau = tau * np.asarray(gain_multiplier, dtype=np.float64)
    return tau


def clamp_torque(desired: np.ndarray, limits: np.ndarray):
    """Clip to the envelope; flag joints whose request meets or exceeds it.

    The simulator receives the clipped torque; the constraint cost counts
    pre-clamp violations (inclusive >=).
    """
    desired = np.asarray(desired, dtype=np.float64)
    limits = np.asarray(limits, dtype=np.float64)
    if desired.shape != (NUM_JOINTS,):
        raise ValueError("torque vector must have length 6")
    applied = np.clip(desired, -limits, limits)
    flags = (np.abs(desired) >= limits).astype(np.int64)
    return applied, flags


def dc_motor_cost(violation_flags) -> int:
    return int(np.sum(violation_flags))
