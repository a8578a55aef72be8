"""World assembly, stepping, and domain randomization.

Body order: 0 base, 1 front thigh, 2 front calf, 3 front wheel,
4 rear thigh, 5 rear calf, 6 rear wheel.
Joint order: front hip, front knee, front wheel, rear hip, rear knee,
rear wheel. Leg joint angles are relative child-minus-parent angles;
wheel angles accumulate without wrapping.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .terrain import Heightfield, query_height

NUM_BODIES = 7
NUM_JOINTS = 6

# contact-report segment order:
# base, front-thigh, front-calf, rear-thigh, rear-calf, front-wheel, rear-wheel
SEGMENT_NAMES = (
    "base", "front_thigh", "front_calf", "rear_thigh", "rear_calf",
    "front_wheel", "rear_wheel",
)


class PhysicsError(RuntimeError):
    """Non-finite state after integration."""

    def __init__(self, body_index: int):
        super().__init__(f"non-finite state on body {body_index}")
        self.body_index = body_index


@dataclass
class MorphologySpec:
    base_half_x: float
    base_half_z: float
    thigh_len: float
    calf_len: float
    wheel_radius: float
    link_radius: float
    masses: np.ndarray          # per body (7,)
    inertias: np.ndarray        # per body (7,)
    hip_offset_x: float
    hip_offset_z: float
    hip_limits: tuple[float, float]
    knee_limits: tuple[float, float]
    q_stand: np.ndarray         # (front hip, front knee, rear hip, rear knee)

    def __post_init__(self):
        self.masses = np.asarray(self.masses, dtype=np.float64)
        self.inertias = np.asarray(self.inertias, dtype=np.float64)
        self.q_stand = np.asarray(self.q_stand, dtype=np.float64)
        for name in ("base_half_x", "base_half_z", "thigh_len", "calf_len",
                     "wheel_radius", "link_radius"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if np.any(self.masses <= 0) or np.any(self.inertias <= 0):
            raise ValueError("masses and inertias must be positive")
        for lo, hi in (self.hip_limits, self.knee_limits):
            if not lo < hi:
                raise ValueError("joint limits must be a nonempty interval")
        hips = self.q_stand[[0, 2]]
        knees = self.q_stand[[1, 3]]
        if np.any(hips <= self.hip_limits[0]) or np.any(hips >= self.hip_limits[1]):
            raise ValueError("q_stand hip angles must lie strictly inside limits")
        if np.any(knees <= self.knee_limits[0]) or np.any(knees >= self.knee_limits[1]):
            raise ValueError("q_stand knee angles must lie strictly inside limits")

    @classmethod
    def from_config(cls, m: dict) -> "MorphologySpec":
        split = m["mass_split"]
        total = m["total_mass"]
        mb = total * split[0]
        mt = total * split[1] / 2
        mc = total * split[2] / 2
        mw = total * split[3] / 2
        masses = np.array([mb, mt, mc, mw, mt, mc, mw])
        hx, hz = m["base_half_x"], m["base_half_z"]
        lt, lc, rw = m["thigh_len"], m["calf_len"], m["wheel_radius"]
        inertias = np.array([
            mb * ((2 * hx) ** 2 + (2 * hz) ** 2) / 12.0,
            mt * lt**2 / 12.0, mc * lc**2 / 12.0, mw * rw**2,
            mt * lt**2 / 12.0, mc * lc**2 / 12.0, mw * rw**2,
        ])
        return cls(
            base_half_x=hx, base_half_z=hz, thigh_len=lt, calf_len=lc,
            wheel_radius=rw, link_radius=m["link_radius"],
            masses=masses, inertias=inertias,
            hip_offset_x=m["hip_offset_x"], hip_offset_z=m["hip_offset_z"],
            hip_limits=tuple(m["hip_limits"]), knee_limits=tuple(m["knee_limits"]),
            q_stand=np.asarray(m["q_stand"], dtype=np.float64),
        )

    def q_stand6(self) -> np.ndarray:
        """Standing pose over all 6 joints (wheels at 0)."""
        q = np.zeros(6)
        q[[0, 1]] = self.q_stand[[0, 1]]
        q[[3, 4]] = self.q_stand[[2, 3]]
        return q

    def mirrored(self) -> "MorphologySpec":
        """Reflection about the vertical axis (hip offsets and angles negate)."""
        return MorphologySpec(
            base_half_x=self.base_half_x, base_half_z=self.base_half_z,
            thigh_len=self.thigh_len, calf_len=self.calf_len,
            wheel_radius=self.wheel_radius, link_radius=self.link_radius,
            masses=self.masses.copy(), inertias=self.inertias.copy(),
            hip_offset_x=-self.hip_offset_x, hip_offset_z=self.hip_offset_z,
            hip_limits=(-self.hip_limits[1], -self.hip_limits[0]),
            knee_limits=(-self.knee_limits[1], -self.knee_limits[0]),
            q_stand=-self.q_stand,
        )


@dataclass
class ContactReport:
    seg_flags: np.ndarray        # (7,) 0/1, SEGMENT_NAMES order
    clearances: np.ndarray       # (2,) front/rear wheel, >= 0
    normal_impulses: np.ndarray      # per contact candidate
    tangential_impulses: np.ndarray  # per contact candidate
    max_penetration: float

    @property
    def base_contact(self) -> bool:
        return bool(self.seg_flags[0])

    @property
    def thigh_calf_count(self) -> int:
        return int(self.seg_flags[1:5].sum())


def _rot(theta, v):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])


def forward_kinematics(morph: MorphologySpec, base_pos, base_angle, q6):
    """Body poses from base pose and leg joint angles (wheel spin from q)."""
    pos = np.zeros((NUM_BODIES, 2))
    angle = np.zeros(NUM_BODIES)
    pos[0] = base_pos
    angle[0] = base_angle
    for leg, (ti, ci, wi) in enumerate(((1, 2, 3), (4, 5, 6))):
        sgn = 1.0 if leg == 0 else -1.0
        hip_local = np.array([sgn * morph.hip_offset_x, morph.hip_offset_z])
        hip = pos[0] + _rot(base_angle, hip_local)
        qh = q6[0] if leg == 0 else q6[3]
        qk = q6[1] if leg == 0 else q6[4]
        qw = q6[2] if leg == 0 else q6[5]
        th_t = base_angle + qh
        th_c = th_t + qk
        pos[ti] = hip - _rot(th_t, np.array([0.0, morph.thigh_len / 2]))
        angle[ti] = th_t
        knee = hip - _rot(th_t, np.array([0.0, morph.thigh_len]))
        pos[ci] = knee - _rot(th_c, np.array([0.0, morph.calf_len / 2]))
        angle[ci] = th_c
        pos[wi] = knee - _rot(th_c, np.array([0.0, morph.calf_len]))
        angle[wi] = th_c + qw
    return pos, angle


class World:
    """Mutable simulation state for one robot on one terrain."""

    def __init__(self, morph: MorphologySpec, terrain: Heightfield, cfg_sim: dict):
        self.morph = morph
        self.terrain = terrain
        self.dt = float(cfg_sim["dt"])
        self.gravity = float(cfg_sim["gravity"])
        self.velocity_iters = int(cfg_sim["velocity_iters"])
        self.position_iters = int(cfg_sim["position_iters"])
        self.joint_damping = np.full(NUM_JOINTS, float(cfg_sim["joint_damping"]))

        self.pos = np.zeros((NUM_BODIES, 2))
        self.angle = np.zeros(NUM_BODIES)
        self.vel = np.zeros((NUM_BODIES, 2))
        self.omega = np.zeros(NUM_BODIES)
        self.t = 0.0

        self.base_mass_bias = 0.0
        self.mu_static = 0.8
        self.mu_dynamic = 0.6
        self._rebuild_mass_arrays()

        # joints: parent, child, local anchors
        self.jp = np.array([0, 1, 2, 0, 4, 5], dtype=np.int64)
        self.jc = np.array([1, 2, 3, 4, 5, 6], dtype=np.int64)
        lt, lc = morph.thigh_len, morph.calf_len
        hx, hz = morph.hip_offset_x, morph.hip_offset_z
        self.anchor_p = np.array([
            [hx, hz], [0.0, -lt / 2], [0.0, -lc / 2],
            [-hx, hz], [0.0, -lt / 2], [0.0, -lc / 2],
        ])
        self.anchor_c = np.array([
            [0.0, lt / 2], [0.0, lc / 2], [0.0, 0.0],
            [0.0, lt / 2], [0.0, lc / 2], [0.0, 0.0],
        ])
        hlo, hhi = morph.hip_limits
        klo, khi = morph.knee_limits
        self.jlim_lo = np.array([hlo, klo, 0.0, hlo, klo, 0.0])
        self.jlim_hi = np.array([hhi, khi, 0.0, hhi, khi, 0.0])
        self.jlimited = np.array([1, 1, 0, 1, 1, 0], dtype=np.int64)

        # contact candidates: base corners, leg link sample circles, wheels
        cr = 0.01
        bx = morph.base_half_x - cr
        bz = morph.base_half_z - cr
        bodies, offs, radii, flags = [], [], [], []
        # corner order follows the leg layout so a mirrored morphology visits
        # its corners in the geometrically mirrored sequence; sequential
        # impulses are order-sensitive, and matching orders keeps mirrored
        # trajectories bit-for-bit symmetric
        fwd = 1.0 if morph.hip_offset_x >= 0 else -1.0
        for sx in (fwd, -fwd):
            for sz in (1.0, -1.0):
                bodies.append(0)
                offs.append([sx * bx, sz * bz])
                radii.append(cr)
                flags.append(0)
        for body, half_len, flag in ((1, lt / 2, 1), (2, lc / 2, 2),
                                     (4, lt / 2, 3), (5, lc / 2, 4)):
            for frac in (1.0, 0.0, -1.0):
                bodies.append(body)
                offs.append([0.0, frac * half_len])
                radii.append(morph.link_radius)
                flags.append(flag)
        for body, flag in ((3, 5), (6, 6)):
            bodies.append(body)
            offs.append([0.0, 0.0])
            radii.append(morph.wheel_radius)
            flags.append(flag)
        self.cand_body = np.array(bodies, dtype=np.int64)
        self.cand_off = np.array(offs)
        self.cand_r = np.array(radii)
        self.cand_flag = np.array(flags, dtype=np.int64)

    # ---- state ------------------------------------------------------------

    def _rebuild_mass_arrays(self):
        m = self.morph.masses.copy()
        m[0] += self.base_mass_bias
        self.inv_m = 1.0 / m
        self.inv_i = 1.0 / self.morph.inertias

    def set_pose(self, base_pos, base_angle, q6, zero_velocity=True):
        self.pos, self.angle = forward_kinematics(
            self.morph, np.asarray(base_pos, dtype=np.float64), base_angle, q6
        )
        if zero_velocity:
            self.vel[...] = 0.0
            self.omega[...] = 0.0

    def joint_q(self) -> np.ndarray:
        q = self.angle[self.jc] - self.angle[self.jp]
        return q

    def joint_qd(self) -> np.ndarray:
        return self.omega[self.jc] - self.omega[self.jp]

    def joint_residuals(self) -> np.ndarray:
        """Positional constraint errors of all joints (each as a 2-norm)."""
        res = np.zeros(NUM_JOINTS)
        for j in range(NUM_JOINTS):
            a, b = self.jp[j], self.jc[j]
            pa = self.pos[a] + _rot(self.angle[a], self.anchor_p[j])
            pb = self.pos[b] + _rot(self.angle[b], self.anchor_c[j])
            res[j] = np.linalg.norm(pb - pa)
        return res

    # ---- stepping -----------------------------------------------------------

    def step(self, torques: np.ndarray, ext_force=(0.0, 0.0)) -> ContactReport:
        torques = np.asarray(torques, dtype=np.float64)
        if torques.shape != (NUM_JOINTS,):
            raise ValueError("torque vector must have length 6")
        seg_flags, clearances, pn, pt, max_pen, err = kernels.step_kernel(
            self.pos, self.angle, self.vel, self.omega,
            self.inv_m, self.inv_i,
            self.jp, self.jc, self.anchor_p, self.anchor_c,
            self.jlim_lo, self.jlim_hi, self.jlimited,
            self.cand_body, self.cand_off, self.cand_r, self.cand_flag,
            torques, self.joint_damping, float(ext_force[0]), float(ext_force[1]),
            self.terrain.heights, self.terrain.x0, self.terrain.dx,
            self.mu_static, self.mu_dynamic,
            self.dt, self.gravity, self.velocity_iters, self.position_iters,
        )
        if err >= 0:
            raise PhysicsError(int(err))
        self.t += self.dt
        return ContactReport(
            seg_flags=seg_flags, clearances=clearances,
            normal_impulses=pn, tangential_impulses=pt,
            max_penetration=float(max_pen),
        )

    # ---- persistence ----------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "pos": self.pos.tolist(),
            "angle": self.angle.tolist(),
            "vel": self.vel.tolist(),
            "omega": self.omega.tolist(),
            "t": self.t,
            "base_mass_bias": self.base_mass_bias,
            "mu_static": self.mu_static,
            "mu_dynamic": self.mu_dynamic,
        }

    def load_state_dict(self, state: dict):
        self.pos = np.asarray(state["pos"], dtype=np.float64)
        self.angle = np.asarray(state["angle"], dtype=np.float64)
        self.vel = np.asarray(state["vel"], dtype=np.float64)
        self.omega = np.asarray(state["omega"], dtype=np.float64)
        self.t = float(state["t"])
        self.base_mass_bias = float(state["base_mass_bias"])
        self.mu_static = float(state["mu_static"])
        self.mu_dynamic = float(state["mu_dynamic"])
        self._rebuild_mass_arrays()


def standing_base_height(morph: MorphologySpec, terrain: Heightfield,
                         base_x: float, q6=None) -> float:
    """Base z that puts the lower wheel rim exactly on the terrain."""
    q6 = morph.q_stand6() if q6 is None else q6
    pos, _ = forward_kinematics(morph, np.array([base_x, 0.0]), 0.0, q6)
    z = -np.inf
    for wi in (3, 6):
        h = query_height(terrain, float(pos[wi, 0]))
        z = max(z, h + morph.wheel_radius - pos[wi, 1])
    return float(z)


def build_world(morph: MorphologySpec, terrain: Heightfield, seed: int,
                cfg_sim: dict, base_x: float = 0.0) -> World:
    """Assemble the robot standing on the terrain at base_x.

    Deterministic given seed (the seed feeds no randomness here; it is kept
    for interface symmetry with randomized resets).
    """
    q6 = morph.q_stand6()
    world = World(morph, terrain, cfg_sim)
    z = standing_base_height(morph, terrain, base_x, q6)
    world.set_pose(np.array([base_x, z]), 0.0, q6)
    return world


@dataclass
class RandomizationSpec:
    static_friction: tuple[float, float]
    dynamic_friction: tuple[float, float]
    base_mass_bias: tuple[float, float]
    external_force: tuple[float, float]
    external_force_interval: tuple[float, float]
    push_velocity: tuple[float, float]
    push_interval: tuple[float, float]
    motor_gain_multiplier: tuple[float, float]
    enabled: bool = True

    def __post_init__(self):
        for name in ("static_friction", "dynamic_friction", "base_mass_bias",
                     "external_force", "external_force_interval",
                     "push_velocity", "push_interval", "motor_gain_multiplier"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ValueError(f"{name} range is empty")

    @classmethod
    def from_config(cls, cfg: dict) -> "RandomizationSpec":
        return cls(
            static_friction=tuple(cfg["static_friction"]),
            dynamic_friction=tuple(cfg["dynamic_friction"]),
            base_mass_bias=tuple(cfg["base_mass_bias"]),
            external_force=tuple(cfg["external_force"]),
            external_force_interval=tuple(cfg["external_force_interval"]),
            push_velocity=tuple(cfg["push_velocity"]),
            push_interval=tuple(cfg["push_interval"]),
            motor_gain_multiplier=tuple(cfg["motor_gain_multiplier"]),
            enabled=bool(cfg["enabled"]),
        )


@dataclass
class RandomizationState:
    """Per-episode sampled parameters and disturbance schedule."""

    gain_multiplier: np.ndarray
    next_force_t: float
    force_x: float
    next_push_t: float

    @classmethod
    def sample(cls, world: World, spec: RandomizationSpec,
               rng: np.random.Generator) -> "RandomizationState":
        if not spec.enabled:
            world.mu_static = 0.8
            world.mu_dynamic = 0.6
            world.base_mass_bias = 0.0
            world._rebuild_mass_arrays()
            return cls(np.ones(NUM_JOINTS), np.inf, 0.0, np.inf)
        mu_s = rng.uniform(*spec.static_friction)
        mu_d = min(rng.uniform(*spec.dynamic_friction), mu_s)
        world.mu_static = mu_s
        world.mu_dynamic = mu_d
        world.base_mass_bias = rng.uniform(*spec.base_mass_bias)
        world._rebuild_mass_arrays()
        gains = rng.uniform(*spec.motor_gain_multiplier, size=NUM_JOINTS)
        return cls(
            gain_multiplier=gains,
            next_force_t=world.t + rng.uniform(*spec.external_force_interval),
            force_x=0.0,
            next_push_t=world.t + rng.uniform(*spec.push_interval),
        )

    def update(self, world: World, spec: RandomizationSpec,
               rng: np.random.Generator) -> float:
        """Advance the disturbance schedule; applies pushes to the base.

        Returns the external force on the base for the current step.
        """
        if not spec.enabled:
            return 0.0
        if world.t >= self.next_force_t:
            self.force_x = rng.uniform(*spec.external_force)
            self.next_force_t = world.t + rng.uniform(*spec.external_force_interval)
        if world.t >= self.next_push_t:
            world.vel[0, 0] += rng.uniform(*spec.push_velocity)
            self.next_push_t = world.t + rng.uniform(*spec.push_interval)
        return self.force_x

    def state_dict(self) -> dict:
        return {
            "gain_multiplier": self.gain_multiplier.tolist(),
            "next_force_t": self.next_force_t,
            "force_x": self.force_x,
            "next_push_t": self.next_push_t,
        }

    @classmethod
    def from_state_dict(cls, state: dict) -> "RandomizationState":
        return cls(
            gain_multiplier=np.asarray(state["gain_multiplier"], dtype=np.float64),
            next_force_t=float(state["next_force_t"]),
            force_x=float(state["force_x"]),
            next_push_t=float(state["next_push_t"]),
        )
