"""Run configuration: defaults, strict JSON overrides, resolved dumps.

Unknown or mistyped keys abort before any compute; every output
directory receives a fully resolved copy of the effective config.
"""

from __future__ import annotations

import copy
import json
import os


class ConfigError(ValueError):
    pass


def default_config() -> dict:
    return {
        "seed": 0,
        "out_dir": "runs/default",
        "sim": {
            "dt": 0.005,
            "gravity": 9.81,
            "velocity_iters": 8,
            "position_iters": 4,
            "joint_damping": 0.1,
            "morphology": {
                "base_half_x": 0.40,
                "base_half_z": 0.10,
                "thigh_len": 0.213,
                "calf_len": 0.213,
                "wheel_radius": 0.07,
                "link_radius": 0.02,
                "total_mass": 10.0,
                # base / thighs / calves / wheels mass fractions
                "mass_split": [0.70, 0.12, 0.10, 0.08],
                "hip_offset_x": 0.29,
                "hip_offset_z": -0.06,
                "hip_limits": [-2.9, 2.9],
                "knee_limits": [-2.7, -0.3],
                # (front hip, front knee, rear hip, rear knee)
                "q_stand": [0.8, -1.5, 0.8, -1.5],
            },
            "terrain_half_extent": 10.0,
            "terrain_dx": 0.05,
        },
        "randomization": {
            "enabled": True,
            "static_friction": [0.6, 1.0],
            "dynamic_friction": [0.4, 0.8],
            "base_mass_bias": [-1.0, 3.0],
            "external_force": [-10.0, 10.0],
            "external_force_interval": [2.0, 3.0],
            "push_velocity": [-1.0, 1.0],
            "push_interval": [8.0, 12.0],
            "motor_gain_multiplier": [0.8, 1.2],
        },
        "actuation": {
            "kp": 80.0,
            "kd_leg": 0.8,
            "kd_wheel": 0.5,
            "tau_max_leg": 23.0,
            "tau_max_wheel": 10.0,
            "omega_break_leg": 10.0,
            "omega_max_leg": 30.0,
            "omega_break_wheel": 10.0,
            "omega_max_wheel": 30.0,
            "calf_scale_floor": 0.3,
            "unlimited": False,
        },
        "env": {
            "decimation": 4,
            "episode_s_locomotion": 20.0,
            "episode_s_platform": 20.0,
            "episode_s_recovery": 6.0,
            "recovery_fall_s": 2.0,
            "action_scale_leg": 0.5,
            "action_scale_wheel": 10.0,
            "cmd_range_locomotion": [-1.5, 1.5],
            "cmd_range_platform": [0.5, 1.5],
            "spawn_jitter_pos": 0.02,
            "spawn_jitter_angle": 0.05,
            "recovery_drop_height": 0.5,
            # fraction of recovery spawns that start upright partway
            # through a stand-up, so the final push to the stand pose is
            # visited often during training; evaluation pins this to zero
            "recovery_upright_spawn_frac": 0.3,
            "height_scan_count": 11,
            "height_scan_spacing": 0.2,
            "noise_q": 0.05,
            "noise_qd": 0.4,
            "noise_omega": 0.1,
            "noise_gravity": 0.03,
            "noise_enabled": True,
        },
        "rewards": {
            "sigma_sq": 0.25,
            # wider kernels for the recovery terms: their errors live on the
            # scale of radians (base angle) and multi-joint norms, so the
            # tracking-width kernel would be flat almost everywhere
            "sigma_sq_gravity": 1.0,
            "sigma_sq_pose": 4.0,
            "upright_eps": 0.3,
            "w_cmd_v": 1.0,
            "w_gravity": 1.0,
            "w_poserr": 1.0,
            "w_action_rate": -0.01,
            "w_joint_acc": -2.5e-7,
            "w_vertical_vel": -1.0,
            "w_alive": 0.5,
        },
        "constraints": {
            "delta_dc": 0.1,
            "delta_collision": 0.2,
        },
        "curriculum": {
            "levels": 10,
            # rows: (terrain kind, task) pairs
            "rows": [
                ["stairs", "locomotion"],
                ["slope", "locomotion"],
                ["rough", "locomotion"],
                ["discretized", "locomotion"],
                ["pit", "platform"],
                ["stairs", "recovery"],
                ["rough", "recovery"],
                ["flat", "recovery"],
            ],
            "promote_tracking_reward": 0.8,
            "promote_tracking_fraction": 0.5,
            "demote_distance_fraction": 0.5,
            "recovery_pose_tol": 0.5,
        },
        "nets": {
            "actor_hidden": [256, 128],
            "critic_hidden": [256, 128],
        },
        "estimator": {
            "window": 6,
            "frame_embed": 64,
            "gru_hidden": 128,
            "embed_dim": 32,
            "num_prototypes": 16,
            "temperature": 0.1,
            "sinkhorn_eps": 0.05,
            "sinkhorn_iters": 3,
            "lambda_swav": 0.5,
            "lr": 1e-3,
            "batch_size": 256,
            "disabled_heads": [],
        },
        "p3o": {
            "gamma": 0.99,
            "lam": 0.95,
            "clip": 0.2,
            "kappa": 1.0,
            "lr": 3e-4,
            "epochs": 4,
            "minibatches": 4,
            "entropy_coef": 0.005,
            "value_coef": 0.5,
            "max_grad_norm": 1.0,
            "horizon": 64,
            "num_envs": 64,
            "iterations": 500,
            "checkpoint_every": 100,
            "dc_constraint": True,
            "collision_constraint": True,
        },
        "selector": {
            "hidden": [128, 64],
            "lr": 3e-4,
            "iterations": 500,
            "horizon": 64,
            "num_envs": 64,
            "epochs": 4,
            "minibatches": 4,
            "entropy_coef": 0.01,
            "hold_steps": 1,
            "switch_penalty": 0.0,
            "checkpoint_every": 100,
        },
        "teleop": {
            "port": 8765,
            "http_port": 8766,
            "broadcast_hz": 20,
        },
    }


def _merge_strict(base: dict, override: dict, path: str = "") -> None:
    for key, val in override.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key: {here}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {here} expects a section, got {type(val).__name__}")
            _merge_strict(base[key], val, here)
        else:
            if isinstance(val, dict):
                raise ConfigError(f"config key {here} is a value, got a section")
            base[key] = val


def load_config(path: str | None = None, overrides: dict | None = None) -> dict:
    cfg = default_config()
    if path is not None:
        with open(path) as f:
            try:
                user = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"invalid JSON in {path}: {e}") from e
        _merge_strict(cfg, user)
    if overrides:
        _merge_strict(cfg, overrides)
    return cfg


def dump_config(cfg: dict, out_dir: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "config.resolved.json")
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        json.dump(cfg, f, indent=2, sort_keys=True)
    os.replace(tmp, path)
    return path


def clone(cfg: dict) -> dict:
    return copy.deepcopy(cfg)
