"""Deterministic policy evaluation, success metrics, and replay logging.

Success is judged per task:
- locomotion: survive the full episode and track the commanded velocity
  for at least half the steps;
- recovery: reach an upright, near-standing pose within the first 4 s;
- platform: get the base out of the pit (ground level under the base)
  while upright within 3 s.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .autodiff import no_grad
from .checkpoint import load_checkpoint
from .envs import OBS_DIM, Env, gravity_in_body, upright_angle
from .estimator import encode_online, init_memory
from .nets import ParamSet
from .p3o import sample_action
from .sim.terrain import query_height

RECOVERY_SUCCESS_S = 4.0
PLATFORM_SUCCESS_S = 3.0
UPRIGHT_TOL = 0.3
POSE_TOL = 0.5


def eval_env_config(cfg: dict) -> dict:
    """Copy of the config with training-only spawn aids switched off.

    Recovery episodes are always judged from a fallen spawn, regardless
    of how the policy was trained.
    """
    out = json.loads(json.dumps(cfg))
    out["env"]["recovery_upright_spawn_frac"] = 0.0
    return out


def load_s1_policy(path: str) -> tuple:
    """(params, config) from a stage-1 checkpoint."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint not found: {path}")
    payload = load_checkpoint(path)
    if payload.get("kind") != "s1":
        raise ValueError(f"not a stage-1 checkpoint: {payload.get('kind')}")
    params = ParamSet()
    params.load_state_dict(payload["params"])
    return params, payload["config"]


@dataclass
class LowLevelRunner:
    """Single-environment stage-1 execution loop."""

    params: ParamSet
    cfg: dict
    env: Env

    def __post_init__(self):
        h = int(self.cfg["estimator"]["window"])
        self.window = np.zeros((h, OBS_DIM))
        self.memory = init_memory(self.cfg["estimator"])

    def reset(self, kind: str, task: str, level: int):
        obs, priv = self.env.reset(kind, task, level)
        self.window[...] = 0.0
        self.window[-1] = obs.vector()
        self.memory = init_memory(self.cfg["estimator"])
        return obs, priv

    def step(self, act_rng: np.random.Generator | None = None):
        with no_grad():
            out = encode_online(self.params, self.window, self.memory,
                                self.cfg["estimator"])
        actor_in = np.concatenate([out.f(), self.window[-1]])
        action, _ = sample_action(self.params, self.cfg, actor_in, act_rng)
        sr = self.env.step(action)
        self.memory = out.memory.value
        self.window = np.roll(self.window, -1, axis=0)
        self.window[-1] = sr.obs.vector()
        return action, sr


def _pose_error(env: Env) -> float:
    q = env.world.joint_q()
    q[[2, 5]] = 0.0  # wheels are continuous; only leg posture counts
    return float(np.linalg.norm(q - env.q_stand))


def _upright(env: Env) -> float:
    return upright_angle(gravity_in_body(float(env.world.angle[0])))


def _out_of_pit(env: Env) -> bool:
    ground = query_height(env.terrain, float(env.world.pos[0, 0]))
    return ground > -0.01


def eval_episode(runner: LowLevelRunner, kind: str, task: str,
                 level: int, cmd: float | None = None) -> dict:
    env = runner.env
    runner.reset(kind, task, level)
    if cmd is not None and task != "recovery":
        env.cmd = float(cmd)
    term_sums: dict = {}
    flags_total = 0
    recovered = False
    climbed = False
    torque, torque_qd, torque_limit = [], [], []
    steps = 0
    terminated = False
    recovery_steps = int(round(RECOVERY_SUCCESS_S / env.ctrl_dt))
    platform_steps = int(round(PLATFORM_SUCCESS_S / env.ctrl_dt))
    while True:
        _, sr = runner.step()
        steps += 1
        for k, v in sr.reward_terms.items():
            term_sums[k] = term_sums.get(k, 0.0) + v
        flags_total += int(env.last_flags.sum())
        torque.append(env.last_tau.copy())
        torque_qd.append(env.last_joint_qd.copy())
        torque_limit.append(env.last_tau_limit.copy())
        if steps <= recovery_steps and _upright(env) < UPRIGHT_TOL \
                and _pose_error(env) < POSE_TOL:
            recovered = True
        if steps <= platform_steps and _upright(env) < UPRIGHT_TOL \
                and _out_of_pit(env):
            climbed = True
        if sr.terminated or sr.truncated:
            terminated = sr.terminated
            break
    summary = env.summary()
    if task == "locomotion":
        success = not terminated and summary.tracking_fraction >= 0.5
    elif task == "recovery":
        success = recovered
    else:
        success = climbed
    return {
        "success": bool(success),
        "steps": steps,
        "terminated": bool(terminated),
        "tracking_fraction": summary.tracking_fraction,
        "distance": summary.distance,
        "reward_terms": {k: v / steps for k, v in term_sums.items()},
        "flag_count": flags_total,
        "violation_rate": flags_total / (steps * 6),
        "torque": np.concatenate(torque),
        "torque_qd": np.concatenate(torque_qd),
        "torque_limit": np.concatenate(torque_limit),
    }


def evaluate(params: ParamSet, cfg: dict, task: str, kind: str, level: int,
             episodes: int, seed: int, cmd: float | None = None) -> dict:
    """Mean-action evaluation over `episodes` fresh episodes.

    cmd=None keeps the per-episode sampled command; a float pins the
    target velocity for every episode (the fixed-target protocol)."""
    runner = LowLevelRunner(params, cfg, Env(cfg, np.random.default_rng(seed)))
    records = [eval_episode(runner, kind, task, level, cmd=cmd)
               for _ in range(episodes)]
    term_keys = sorted({k for r in records for k in r["reward_terms"]})
    steps = sum(r["steps"] for r in records)
    report = {
        "task": task, "kind": kind, "level": level,
        "episodes": episodes, "seed": seed, "cmd": cmd,
        "success_rate": float(np.mean([r["success"] for r in records])),
        "mean_tracking_fraction": float(
            np.mean([r["tracking_fraction"] for r in records])),
        "violation_rate": sum(r["flag_count"] for r in records) / (steps * 6),
        "reward_terms": {
            k: float(np.mean([r["reward_terms"].get(k, 0.0)
                              for r in records]))
            for k in term_keys},
        "episode_records": records,
    }
    return report


def write_torque_csv(report: dict, path: str) -> int:
    """Per-substep (joint, velocity, torque, limit) rows for scatter plots."""
    rows = 0
    with open(path, "w") as f:
        f.write("joint,qd,tau,tau_limit\n")
        for rec in report["episode_records"]:
            for qd_row, tau_row, lim_row in zip(
                    rec["torque_qd"], rec["torque"], rec["torque_limit"]):
                for j in range(6):
                    f.write(f"{j},{qd_row[j]:.6g},{tau_row[j]:.6g},"
                            f"{lim_row[j]:.6g}\n")
                    rows += 1
    return rows


def write_eval_report(report: dict, path: str) -> None:
    slim = {k: v for k, v in report.items() if k != "episode_records"}
    slim["episode_successes"] = [r["success"]
                                 for r in report["episode_records"]]
    with open(path, "w") as f:
        json.dump(slim, f, indent=2)


# ---- replay --------------------------------------------------------------------


def replay(params: ParamSet, cfg: dict, task: str, kind: str, level: int,
           seed: int, out_path: str) -> int:
    """One deterministic episode as newline-delimited JSON; returns steps."""
    runner = LowLevelRunner(params, cfg, Env(cfg, np.random.default_rng(seed)))
    obs, _ = runner.reset(kind, task, level)
    env = runner.env
    with open(out_path, "w") as f:
        f.write(json.dumps({
            "type": "header", "task": task, "kind": kind, "level": level,
            "seed": seed, "cmd": env.cmd, "ctrl_dt": env.ctrl_dt,
            "terrain": {"kind": env.terrain.kind, "level": env.terrain.level,
                        "x0": env.terrain.x0, "dx": env.terrain.dx,
                        "heights": env.terrain.heights.tolist()},
        }) + "\n")
        steps = 0
        while True:
            action, sr = runner.step()
            steps += 1
            w = env.world
            f.write(json.dumps({
                "type": "step", "tick": steps,
                "time_s": steps * env.ctrl_dt,
                "bodies": [{"id": i, "x": float(w.pos[i, 0]),
                            "z": float(w.pos[i, 1]),
                            "theta": float(w.angle[i])}
                           for i in range(w.pos.shape[0])],
                "joints": {
                    "q": w.joint_q().tolist(),
                    "qd": w.joint_qd().tolist(),
                    "tau_applied": env.last_tau[-1].tolist(),
                    "tau_limit": env.last_tau_limit[-1].tolist(),
                },
                "action": action.tolist(),
                "obs": sr.obs.vector().tolist(),
                "reward": sr.reward,
                "reward_terms": sr.reward_terms,
                "costs": sr.costs.tolist(),
                "violation_flags": env.last_flags.tolist(),
                "terminated": sr.terminated,
                "truncated": sr.truncated,
            }) + "\n")
            if sr.terminated or sr.truncated:
                break
    return steps


def read_replay(path: str) -> tuple:
    """(header, steps) parsed back from a replay file."""
    with open(path) as f:
        lines = [json.loads(line) for line in f if line.strip()]
    if not lines or lines[0].get("type") != "header":
        raise ValueError(f"not a replay file: {path}")
    return lines[0], lines[1:]


def untrained_policy(cfg: dict, seed: int = 0) -> ParamSet:
    """Freshly initialized parameters (the no-training baseline)."""
    from .estimator import build_estimator
    from .p3o import build_policy

    params = ParamSet()
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    build_policy(params, cfg, rng)
    build_estimator(params, cfg["estimator"], rng)
    return params
