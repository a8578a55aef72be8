"""Figure emission: torque-velocity scatter with the feasible envelope,
learning curves, and violation-rate curves. Every figure is written as SVG
alongside a CSV of exactly the points drawn."""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .actuation import MotorLimitModel, torque_limit  # noqa: E402

HIP_JOINTS = (0, 3)


def envelope_polyline(model: MotorLimitModel, joint: int, q: float,
                      n: int = 200) -> np.ndarray:
    """(qd, tau_limit) samples of the feasible boundary for one joint."""
    omega_max = float(model.omega_max[joint])
    qd = np.linspace(-omega_max, omega_max, n)
    tau = np.array([torque_limit(joint, q, w, model) for w in qd])
    return np.column_stack([qd, tau])


def _write_csv(path: str, header: list, rows) -> int:
    count = 0
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow(row)
            count += 1
    return count


def plot_torque_velocity(torque_csv: str, cfg: dict, out_base: str,
                         joints=HIP_JOINTS) -> dict:
    """Scatter (joint velocity, applied torque) against the envelope.

    torque_csv is the per-substep file from evaluation (columns
    joint, qd, tau, tau_limit). Returns written paths and point count.
    """
    rows = []
    if os.path.exists(torque_csv):
        with open(torque_csv) as f:
            for rec in csv.DictReader(f):
                if int(rec["joint"]) in joints:
                    rows.append((int(rec["joint"]), float(rec["qd"]),
                                 float(rec["tau"]), float(rec["tau_limit"])))
    model = MotorLimitModel.from_config(cfg["actuation"], _q_stand6(cfg))

    fig, ax = plt.subplots(figsize=(6, 4))
    if rows:
        data = np.asarray([(r[1], r[2]) for r in rows])
        ax.scatter(data[:, 0], data[:, 1], s=2, alpha=0.3, label="applied")
    q_ref = _q_stand6(cfg)[HIP_JOINTS[0]]
    env = envelope_polyline(model, HIP_JOINTS[0], q_ref)
    ax.plot(env[:, 0], env[:, 1], "r-", lw=1, label="limit")
    ax.plot(env[:, 0], -env[:, 1], "r-", lw=1)
    ax.set_xlabel("joint velocity [rad/s]")
    ax.set_ylabel("torque [N*m]")
    ax.legend(loc="upper right")
    fig.savefig(out_base + ".svg")
    plt.close(fig)

    points = _write_csv(out_base + ".csv", ["joint", "qd", "tau", "tau_limit"],
                        rows)
    return {"svg": out_base + ".svg", "csv": out_base + ".csv",
            "points": points, "envelope": env}


def _q_stand6(cfg: dict) -> np.ndarray:
    fh, fk, rh, rk = cfg["sim"]["morphology"]["q_stand"]
    return np.array([fh, fk, 0.0, rh, rk, 0.0])


def _read_metrics(path: str) -> list:
    if not os.path.exists(path):
        return []
    with open(path) as f:
        return list(csv.DictReader(f))


def plot_learning_curves(metrics_csv: str, out_base: str,
                         columns=("mean_reward", "term_cmd_v")) -> dict:
    rows = _read_metrics(metrics_csv)
    fig, ax = plt.subplots(figsize=(6, 4))
    present = [c for c in columns if rows and c in rows[0]]
    iters = [int(r["iteration"]) for r in rows]
    for col in present:
        ax.plot(iters, [float(r[col]) for r in rows], label=col)
    ax.set_xlabel("iteration")
    if present:
        ax.legend()
    fig.savefig(out_base + ".svg")
    plt.close(fig)
    points = _write_csv(
        out_base + ".csv", ["iteration"] + list(present),
        ([r["iteration"]] + [r[c] for c in present] for r in rows))
    return {"svg": out_base + ".svg", "csv": out_base + ".csv",
            "points": points}


def plot_violation_rate(metrics_csv: str, out_base: str) -> dict:
    return plot_learning_curves(metrics_csv, out_base,
                                columns=("violation_rate",))
