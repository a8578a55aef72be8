"""Task environments: observations, rewards, constraint costs, episodes.

Three skills share one robot: velocity tracking over terrain (locomotion),
climbing out of a pit onto the rim (platform), and getting up after being
dropped in a random posture (recovery). Control runs at 50 Hz over a 200 Hz
simulation (decimation 4). Constraint costs are reported separately from
rewards so the trainer can treat them as hard budgets rather than penalties.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .actuation import GainSet, MotorLimitModel, clamp_torque, pd_torque
from .sim.terrain import Heightfield, query_height, sample_terrain
from .sim.world import (
    ContactReport,
    MorphologySpec,
    RandomizationSpec,
    RandomizationState,
    World,
    build_world,
    forward_kinematics,
    standing_base_height,
)

SKILLS = ("locomotion", "platform", "recovery")
OBS_DIM = 25
PRIV_DIM = 47
NUM_COSTS = 2
COST_NAMES = ("dc_motor", "collision")

_LEG_IDX = np.array([0, 1, 3, 4])
_WHEEL_IDX = np.array([2, 5])
_IS_WHEEL = np.array([False, False, True, False, False, True])


class EnvError(RuntimeError):
    pass


def skill_one_hot(skill: str) -> np.ndarray:
    """Fixed encoding order; part of the checkpoint format."""
    if skill not in SKILLS:
        raise ValueError(f"unknown skill: {skill}")
    z = np.zeros(len(SKILLS))
    z[SKILLS.index(skill)] = 1.0
    return z


@dataclass
class Observation:
    omega_b: float        # base pitch rate, rad/s
    gravity_b: np.ndarray  # unit gravity direction in the body frame (2,)
    cmd: float            # target longitudinal velocity, m/s
    q: np.ndarray         # joint positions (6,), wheel entries zeroed
    qd: np.ndarray        # joint velocities (6,)
    a_prev: np.ndarray    # previous action (6,)
    skill: np.ndarray     # one-hot (3,)

    def vector(self) -> np.ndarray:
        return np.concatenate([
            [self.omega_b], self.gravity_b, [self.cmd],
            self.q, self.qd, self.a_prev, self.skill,
        ])


@dataclass
class PrivilegedObservation:
    obs: Observation
    v: np.ndarray  # true base linear velocity (2,)
    c: np.ndarray  # per-segment contact flags (7,)
    u: np.ndarray  # wheel ground clearances (2,)
    h: np.ndarray  # height scan relative to base height (11,)

    def vector(self) -> np.ndarray:
        return np.concatenate([
            self.obs.vector(), self.v, self.c.astype(np.float64),
            self.u, self.h,
        ])


def gravity_in_body(base_angle: float) -> np.ndarray:
    """World down-direction (0, -1) rotated into the body frame."""
    return np.array([-np.sin(base_angle), -np.cos(base_angle)])


def upright_angle(gravity_b: np.ndarray) -> float:
    """Angle between the body-frame gravity and the upright reference."""
    d = float(np.clip(-gravity_b[1] / np.linalg.norm(gravity_b), -1.0, 1.0))
    return float(np.arccos(d))


def make_observation(world: World, cmd: float, a_prev: np.ndarray,
                     skill: str, cfg_env: dict,
                     rng: np.random.Generator | None = None) -> Observation:
    """Proprioceptive observation; additive uniform noise when rng is given."""
    omega_b = float(world.omega[0])
    g_b = gravity_in_body(float(world.angle[0]))
    q = world.joint_q()
    q[_WHEEL_IDX] = 0.0  # unbounded wheel angles carry no information
    qd = world.joint_qd()
    if rng is not None and cfg_env["noise_enabled"]:
        omega_b += rng.uniform(-cfg_env["noise_omega"], cfg_env["noise_omega"])
        g_b = g_b + rng.uniform(-cfg_env["noise_gravity"],
                                cfg_env["noise_gravity"], size=2)
        g_b = g_b / np.linalg.norm(g_b)
        q = q + rng.uniform(-cfg_env["noise_q"], cfg_env["noise_q"], size=6)
        q[_WHEEL_IDX] = 0.0
        qd = qd + rng.uniform(-cfg_env["noise_qd"], cfg_env["noise_qd"], size=6)
    return Observation(
        omega_b=omega_b, gravity_b=g_b, cmd=float(cmd),
        q=q, qd=qd, a_prev=np.asarray(a_prev, dtype=np.float64).copy(),
        skill=skill_one_hot(skill),
    )


def make_privileged(obs: Observation, world: World, contacts: ContactReport,
                    terrain: Heightfield, cfg_env: dict) -> PrivilegedObservation:
    """Simulator ground truth appended to the observation; never noised."""
    n = int(cfg_env["height_scan_count"])
    spacing = float(cfg_env["height_scan_spacing"])
    xs = world.pos[0, 0] + spacing * (np.arange(n) - (n - 1) / 2)
    h = query_height(terrain, xs) - world.pos[0, 1]
    return PrivilegedObservation(
        obs=obs,
        v=world.vel[0].copy(),
        c=contacts.seg_flags.copy(),
        u=contacts.clearances.copy(),
        h=np.asarray(h, dtype=np.float64),
    )


# ---- rewards and costs -----------------------------------------------------


def compute_reward(priv: PrivilegedObservation, task: str, cfg_rewards: dict,
                   q_stand: np.ndarray, action: np.ndarray,
                   prev_action: np.ndarray, qdd: np.ndarray):
    """Weighted task reward and per-term breakdown.

    Tracking terms are exponentials of squared errors; the posture term only
    pays out while the robot is close to upright.
    """
    if task not in SKILLS:
        raise ValueError(f"unknown task: {task}")
    sig = float(cfg_rewards["sigma_sq"])
    terms: dict[str, float] = {}
    if task in ("locomotion", "platform"):
        err = priv.obs.cmd - priv.v[0]
        terms["cmd_v"] = cfg_rewards["w_cmd_v"] * float(np.exp(-(err * err) / sig))
        terms["vertical_vel"] = cfg_rewards["w_vertical_vel"] * float(priv.v[1] ** 2)
    else:
        ang = upright_angle(priv.obs.gravity_b)
        sig_g = float(cfg_rewards["sigma_sq_gravity"])
        sig_p = float(cfg_rewards["sigma_sq_pose"])
        terms["gravity"] = cfg_rewards["w_gravity"] * float(
            np.exp(-ang / sig_g))
        if ang < float(cfg_rewards["upright_eps"]):
            dq = priv.obs.q - q_stand
            terms["poserr"] = cfg_rewards["w_poserr"] * float(
                np.exp(-float(dq @ dq) / sig_p))
        else:
            terms["poserr"] = 0.0
        terms["alive"] = float(cfg_rewards["w_alive"])
    da = np.asarray(action) - np.asarray(prev_action)
    terms["action_rate"] = cfg_rewards["w_action_rate"] * float(da @ da)
    terms["joint_acc"] = cfg_rewards["w_joint_acc"] * float(qdd @ qdd)
    return float(sum(terms.values())), terms


def compute_costs(violation_flags: np.ndarray, contacts: ContactReport,
                  task: str) -> np.ndarray:
    """(motor-limit violation count, thigh/calf contact count).

    Collision cost does not apply to recovery: the robot is expected to
    scramble on its links while getting up.
    """
    if task not in SKILLS:
        raise ValueError(f"unknown task: {task}")
    dc = float(np.count_nonzero(violation_flags))
    if task == "recovery":
        collision = 0.0
    else:
        collision = float(contacts.thigh_calf_count)
    return np.array([dc, collision])


# ---- curriculum ------------------------------------------------------------


@dataclass
class EpisodeSummary:
    task: str
    cmd: float
    duration_s: float
    distance: float
    tracking_fraction: float   # fraction of steps with good velocity tracking
    final_pose_err: float      # ||q - q_stand|| at episode end
    final_upright_angle: float


@dataclass
class CurriculumGrid:
    rows: list          # (terrain kind, task) pairs
    num_levels: int
    env_row: np.ndarray    # per-environment row index
    env_level: np.ndarray  # per-environment level, 1..L

    def row_of(self, env_id: int):
        kind, task = self.rows[int(self.env_row[env_id])]
        return kind, task

    def state_dict(self) -> dict:
        return {
            "rows": [list(r) for r in self.rows],
            "num_levels": self.num_levels,
            "env_row": self.env_row.tolist(),
            "env_level": self.env_level.tolist(),
        }

    @classmethod
    def from_state_dict(cls, s: dict) -> "CurriculumGrid":
        return cls(
            rows=[tuple(r) for r in s["rows"]],
            num_levels=int(s["num_levels"]),
            env_row=np.asarray(s["env_row"], dtype=np.int64),
            env_level=np.asarray(s["env_level"], dtype=np.int64),
        )


def assign_grid(num_envs: int, rows, num_levels: int) -> CurriculumGrid:
    """Round-robin environments over (terrain, task) rows, all at level 1."""
    rows = [tuple(r) for r in rows]
    if num_envs < len(rows):
        raise ValueError("need at least one environment per curriculum row")
    env_row = np.arange(num_envs, dtype=np.int64) % len(rows)
    return CurriculumGrid(
        rows=rows, num_levels=int(num_levels),
        env_row=env_row,
        env_level=np.ones(num_envs, dtype=np.int64),
    )


def update_curriculum(grid: CurriculumGrid, env_id: int,
                      summary: EpisodeSummary, cfg_cur: dict) -> int:
    """Promote/demote one level based on the finished episode."""
    level = int(grid.env_level[env_id])
    if summary.task in ("locomotion", "platform"):
        promoted = (summary.tracking_fraction
                    >= float(cfg_cur["promote_tracking_fraction"]))
        expected = abs(summary.cmd) * summary.duration_s
        demoted = (abs(summary.distance)
                   < float(cfg_cur["demote_distance_fraction"]) * expected)
        if promoted:
            level += 1
        elif demoted:
            level -= 1
    else:
        ok = (summary.final_pose_err < float(cfg_cur["recovery_pose_tol"])
              and summary.final_upright_angle < 0.3)
        level += 1 if ok else -1
    level = max(1, min(grid.num_levels, level))
    grid.env_level[env_id] = level
    return level


# ---- environment -----------------------------------------------------------


@dataclass
class StepResult:
    obs: Observation
    priv: PrivilegedObservation
    reward: float
    reward_terms: dict
    costs: np.ndarray
    terminated: bool
    truncated: bool


class Env:
    """One robot, one terrain row, episodic."""

    def __init__(self, cfg: dict, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self.morph = MorphologySpec.from_config(cfg["sim"]["morphology"])
        self.gains = GainSet.from_config(cfg["actuation"])
        self.motor_model = MotorLimitModel.from_config(
            cfg["actuation"], self.morph.q_stand6())
        self.rand_spec = RandomizationSpec.from_config(cfg["randomization"])
        self.q_stand = self.morph.q_stand6()
        self.decimation = int(cfg["env"]["decimation"])
        self.ctrl_dt = float(cfg["sim"]["dt"]) * self.decimation

        self.task = "locomotion"
        self.terrain: Heightfield | None = None
        self.world: World | None = None
        self.rand_state: RandomizationState | None = None
        self.cmd = 0.0
        self.a_prev = np.zeros(6)
        self.prev_qd = np.zeros(6)
        self.steps = 0
        self.max_steps = 0
        self.start_x = 0.0
        self.tracking_hits = 0
        self.last_contacts: ContactReport | None = None
        self.last_tau = np.zeros((self.decimation, 6))
        self.last_tau_limit = np.zeros((self.decimation, 6))
        self.last_joint_qd = np.zeros((self.decimation, 6))
        self.last_flags = np.zeros(6, dtype=np.int64)

    # -- lifecycle ----------------------------------------------------------

    def episode_seconds(self, task: str) -> float:
        key = {"locomotion": "episode_s_locomotion",
               "platform": "episode_s_platform",
               "recovery": "episode_s_recovery"}[task]
        return float(self.cfg["env"][key])

    def reset(self, kind: str, task: str, level: int) -> tuple[Observation, PrivilegedObservation]:
        if task not in SKILLS:
            raise ValueError(f"unknown task: {task}")
        cfg_env = self.cfg["env"]
        self.task = task
        levels = int(self.cfg["curriculum"]["levels"])
        terrain_seed = int(self.rng.integers(0, 2**31 - 1))
        self.terrain = sample_terrain(
            kind, level, levels, terrain_seed,
            half_extent=float(self.cfg["sim"]["terrain_half_extent"]),
            dx=float(self.cfg["sim"]["terrain_dx"]),
        )
        self.world = build_world(self.morph, self.terrain, terrain_seed,
                                 self.cfg["sim"])
        w = self.world

        if task == "recovery":
            q6 = np.zeros(6)
            hlo, hhi = self.morph.hip_limits
            klo, khi = self.morph.knee_limits
            upright_frac = float(cfg_env.get("recovery_upright_spawn_frac",
                                             0.0))
            if self.rng.uniform() < upright_frac:
                # already righted, legs somewhere between a deep crouch
                # and the stand pose: dense practice for the final push
                q6[[0, 3]] = np.clip(
                    self.q_stand[[0, 3]] + self.rng.uniform(-0.9, 0.2, 2),
                    hlo, hhi)
                q6[[1, 4]] = np.clip(
                    self.q_stand[[1, 4]] + self.rng.uniform(-0.7, 0.2, 2),
                    klo, khi)
                pitch = self.rng.uniform(-0.25, 0.25)
                drop = 0.01
            else:
                q6[[0, 3]] = self.rng.uniform(hlo, hhi, size=2)
                q6[[1, 4]] = self.rng.uniform(klo, khi, size=2)
                pitch = self.rng.uniform(-np.pi, np.pi)
                drop = float(cfg_env["recovery_drop_height"])
            base = np.array([0.0, 0.0])
            w.set_pose(base, pitch, q6)
            # lift so the lowest collision point clears the terrain by `drop`
            low = np.inf
            for k in range(len(w.cand_body)):
                b = w.cand_body[k]
                c = w.pos[b] + _rot2(w.angle[b], w.cand_off[k])
                low = min(low, c[1] - w.cand_r[k] - query_height(self.terrain,
                                                                 float(c[0])))
            w.pos[:, 1] += drop - low
        else:
            jitter_x = self.rng.uniform(-cfg_env["spawn_jitter_pos"],
                                        cfg_env["spawn_jitter_pos"])
            jitter_a = self.rng.uniform(-cfg_env["spawn_jitter_angle"],
                                        cfg_env["spawn_jitter_angle"])
            base_x = jitter_x  # pit terrain centers the pit at x = 0
            jitter_z = self.rng.uniform(0.0, cfg_env["spawn_jitter_pos"])
            z = standing_base_height(self.morph, self.terrain, base_x)
            w.set_pose(np.array([base_x, z + jitter_z]), jitter_a,
                       self.q_stand)

        self.rand_state = RandomizationState.sample(w, self.rand_spec, self.rng)

        if task == "locomotion":
            lo, hi = cfg_env["cmd_range_locomotion"]
            self.cmd = float(self.rng.uniform(lo, hi))
        elif task == "platform":
            lo, hi = cfg_env["cmd_range_platform"]
            self.cmd = float(self.rng.uniform(lo, hi))
        else:
            self.cmd = 0.0

        self.a_prev = np.zeros(6)
        self.prev_qd = w.joint_qd()
        self.steps = 0
        self.max_steps = int(round(self.episode_seconds(task) / self.ctrl_dt))
        self.start_x = float(w.pos[0, 0])
        self.tracking_hits = 0
        self.last_contacts = _initial_report(w, self.terrain)
        obs = make_observation(w, self.cmd, self.a_prev, task,
                               cfg_env, self.rng)
        priv = make_privileged(obs, w, self.last_contacts, self.terrain,
                               cfg_env)
        return obs, priv

    def step(self, action: np.ndarray) -> StepResult:
        if self.world is None:
            raise EnvError("step before reset")
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (6,) or not np.all(np.isfinite(action)):
            raise ValueError("action must be 6 finite values")
        cfg_env = self.cfg["env"]
        w = self.world
        targets = np.where(
            _IS_WHEEL,
            float(cfg_env["action_scale_wheel"]) * action,
            self.q_stand + float(cfg_env["action_scale_leg"]) * action,
        )
        terminated = False
        first_flags = None
        rep = None
        tau_trace = np.zeros((self.decimation, 6))
        limit_trace = np.zeros((self.decimation, 6))
        qd_trace = np.zeros((self.decimation, 6))
        try:
            for k in range(self.decimation):
                q, qd = w.joint_q(), w.joint_qd()
                tau = pd_torque(targets, q, qd, self.gains,
                                self.rand_state.gain_multiplier)
                limits = self.motor_model.limits(q, qd)
                tau_c, flags = clamp_torque(tau, limits)
                tau_trace[k], limit_trace[k], qd_trace[k] = tau_c, limits, qd
                if k == 0:
                    first_flags = flags
                fx = self.rand_state.update(w, self.rand_spec, self.rng)
                rep = w.step(tau_c, ext_force=(fx, 0.0))
                if rep.base_contact and self.task != "recovery":
                    terminated = True
        except Exception as e:
            raise EnvError(
                f"physics failure in task {self.task} at t={w.t:.3f}s"
            ) from e
        self.last_contacts = rep
        self.last_tau = tau_trace
        self.last_tau_limit = limit_trace
        self.last_joint_qd = qd_trace
        self.last_flags = first_flags
        self.steps += 1
        truncated = self.steps >= self.max_steps and not terminated

        qd_now = w.joint_qd()
        qdd = (qd_now - self.prev_qd) / self.ctrl_dt
        self.prev_qd = qd_now

        obs = make_observation(w, self.cmd, action, self.task, cfg_env,
                               self.rng)
        priv = make_privileged(obs, w, rep, self.terrain, cfg_env)
        reward, terms = compute_reward(priv, self.task, self.cfg["rewards"],
                                       self.q_stand, action, self.a_prev,
                                       qdd)
        costs = compute_costs(first_flags, rep, self.task)
        self.a_prev = action.copy()
        if self.task in ("locomotion", "platform"):
            if terms.get("cmd_v", 0.0) >= float(
                    self.cfg["curriculum"]["promote_tracking_reward"]):
                self.tracking_hits += 1
        return StepResult(obs=obs, priv=priv, reward=reward,
                          reward_terms=terms, costs=costs,
                          terminated=terminated, truncated=truncated)

    def summary(self) -> EpisodeSummary:
        w = self.world
        g_b = gravity_in_body(float(w.angle[0]))
        q = w.joint_q()
        q[_WHEEL_IDX] = 0.0
        return EpisodeSummary(
            task=self.task,
            cmd=self.cmd,
            duration_s=self.steps * self.ctrl_dt,
            distance=float(w.pos[0, 0]) - self.start_x,
            tracking_fraction=(self.tracking_hits / self.steps
                               if self.steps else 0.0),
            final_pose_err=float(np.linalg.norm(q - self.q_stand)),
            final_upright_angle=upright_angle(g_b),
        )

    # -- persistence ----------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "task": self.task,
            "terrain": {
                "kind": self.terrain.kind, "level": self.terrain.level,
                "heights": self.terrain.heights.tolist(),
                "dx": self.terrain.dx, "x0": self.terrain.x0,
            },
            "world": self.world.state_dict(),
            "rand": self.rand_state.state_dict(),
            "mu_static": self.world.mu_static,
            "mu_dynamic": self.world.mu_dynamic,
            "base_mass_bias": self.world.base_mass_bias,
            "cmd": self.cmd,
            "a_prev": self.a_prev.tolist(),
            "prev_qd": self.prev_qd.tolist(),
            "steps": self.steps,
            "max_steps": self.max_steps,
            "start_x": self.start_x,
            "tracking_hits": self.tracking_hits,
        }

    def load_state_dict(self, s: dict):
        t = s["terrain"]
        self.task = s["task"]
        self.terrain = Heightfield(kind=t["kind"], level=int(t["level"]),
                                   heights=np.asarray(t["heights"]),
                                   dx=float(t["dx"]), x0=float(t["x0"]))
        self.world = World(self.morph, self.terrain, self.cfg["sim"])
        self.world.load_state_dict(s["world"])
        self.world.mu_static = float(s["mu_static"])
        self.world.mu_dynamic = float(s["mu_dynamic"])
        self.world.base_mass_bias = float(s["base_mass_bias"])
        self.world._rebuild_mass_arrays()
        self.rand_state = RandomizationState.from_state_dict(s["rand"])
        self.cmd = float(s["cmd"])
        self.a_prev = np.asarray(s["a_prev"], dtype=np.float64)
        self.prev_qd = np.asarray(s["prev_qd"], dtype=np.float64)
        self.steps = int(s["steps"])
        self.max_steps = int(s["max_steps"])
        self.start_x = float(s["start_x"])
        self.tracking_hits = int(s["tracking_hits"])
        self.last_contacts = _initial_report(self.world, self.terrain)


def _rot2(theta: float, v) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])


def _initial_report(world: World, terrain: Heightfield) -> ContactReport:
    """Pre-step report: no impulses yet, clearances from geometry."""
    clearances = np.zeros(2)
    flags = np.zeros(7, dtype=np.int64)
    for i, wb in enumerate((3, 6)):
        h = query_height(terrain, float(world.pos[wb, 0]))
        u = world.pos[wb, 1] - world.morph.wheel_radius - h
        clearances[i] = max(u, 0.0)
        if clearances[i] < 1e-4:
            flags[5 + i] = 1
    return ContactReport(
        seg_flags=flags,
        clearances=clearances,
        normal_impulses=np.zeros(len(world.cand_body)),
        tangential_impulses=np.zeros(len(world.cand_body)),
        max_penetration=0.0,
    )
