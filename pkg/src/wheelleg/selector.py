"""High-level skill selection over a frozen low-level policy.

A categorical policy reads the last H proprioceptive frames (with the
skill indicator stripped, so it can never echo its own output) and picks
which skill indicator to inject into the frozen low-level stack each
control step. It is trained with plain clipped policy gradients on the
unified velocity-tracking reward, so switching to the right skill — get
up first, then drive — is the only way to score.
"""

from __future__ import annotations

import copy
import csv
import os
import time
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, log_softmax, minimum, no_grad, softmax
from .checkpoint import (
    content_hash,
    load_checkpoint,
    restore_rng,
    rng_state,
    save_checkpoint,
)
from .envs import (
    OBS_DIM,
    PRIV_DIM,
    SKILLS,
    CurriculumGrid,
    Env,
    EnvError,
    assign_grid,
    make_observation,
    skill_one_hot,
)
from .estimator import encode_online, init_memory
from .nets import ParamSet, add_mlp, mlp
from .p3o import gae, sample_action

NUM_SKILLS = len(SKILLS)
SEL_FRAME_DIM = OBS_DIM - NUM_SKILLS  # observation with the indicator stripped


def selector_input_dim(cfg: dict) -> int:
    return int(cfg["estimator"]["window"]) * SEL_FRAME_DIM


def strip_skill(obs_vec: np.ndarray) -> np.ndarray:
    """Drop the trailing skill one-hot from an observation vector."""
    return np.asarray(obs_vec, dtype=np.float64)[..., :SEL_FRAME_DIM]


def inject_skill(obs_vec: np.ndarray, skill_idx: int) -> np.ndarray:
    out = np.array(obs_vec, dtype=np.float64)
    out[..., SEL_FRAME_DIM:] = skill_one_hot(SKILLS[skill_idx])
    return out


def build_selector(params: ParamSet, cfg: dict, rng: np.random.Generator) -> None:
    hidden = list(cfg["selector"]["hidden"])
    add_mlp(params, "sel", selector_input_dim(cfg), hidden, NUM_SKILLS, rng)
    # zero logit layer: the untrained selector is exactly uniform
    params["sel.out.W"].value[...] = 0.0
    add_mlp(params, "sel_critic", PRIV_DIM + NUM_SKILLS, hidden, 1, rng)


def selector_param_names(params: ParamSet) -> list:
    return [n for n in params.names() if n.startswith(("sel.", "sel_critic."))]


def selector_forward(params: ParamSet, cfg: dict, window: np.ndarray) -> Tensor:
    """Categorical skill probabilities from the flattened stripped window."""
    window = np.asarray(window, dtype=np.float64)
    expected = selector_input_dim(cfg)
    if window.shape[-1] != expected:
        raise ValueError(
            f"selector window width {window.shape[-1]} != {expected}; "
            "frames must have the skill indicator stripped")
    logits = mlp(params, "sel", Tensor(window), len(cfg["selector"]["hidden"]))
    return softmax(logits, axis=-1)


def _selector_log_probs(params: ParamSet, cfg: dict, window) -> Tensor:
    logits = mlp(params, "sel", Tensor(np.asarray(window, dtype=np.float64)),
                 len(cfg["selector"]["hidden"]))
    return log_softmax(logits, axis=-1)


def sample_skill(params: ParamSet, cfg: dict, window: np.ndarray,
                 rng: np.random.Generator | None):
    """Pick skill indices (argmax when rng is None) and their log-probs."""
    with no_grad():
        probs = selector_forward(params, cfg, window).value
    if rng is None:
        idx = np.argmax(probs, axis=-1)
    else:
        cdf = np.cumsum(probs, axis=-1)
        draw = rng.random(probs.shape[:-1] + (1,))
        idx = (draw >= cdf).sum(axis=-1)
    logp = np.log(np.take_along_axis(probs, idx[..., None], axis=-1))[..., 0]
    return idx, logp


def _selector_critic(params: ParamSet, cfg: dict, priv_and_skill) -> Tensor:
    return mlp(params, "sel_critic",
               Tensor(np.asarray(priv_and_skill, dtype=np.float64)),
               len(cfg["selector"]["hidden"]))[..., 0]


# ---- hierarchical execution ----------------------------------------------------


@dataclass
class HierarchicalRunner:
    """Per-environment state for selector-in-the-loop stepping."""

    env: Env
    est_window: np.ndarray   # (H, OBS_DIM) frames with the injected indicator
    sel_window: np.ndarray   # (H, SEL_FRAME_DIM) stripped frames
    memory: np.ndarray
    raw_obs: np.ndarray      # latest observation as the env produced it
    priv_vec: np.ndarray
    skill_idx: int
    hold_left: int


def reset_hierarchical(runner: HierarchicalRunner, cfg: dict, kind: str,
                       task: str, level: int) -> None:
    obs, priv = runner.env.reset(kind, task, level)
    h = int(cfg["estimator"]["window"])
    runner.est_window = np.zeros((h, OBS_DIM))
    runner.sel_window = np.zeros((h, SEL_FRAME_DIM))
    runner.raw_obs = obs.vector()
    runner.sel_window[-1] = strip_skill(runner.raw_obs)
    runner.est_window[-1] = runner.raw_obs  # indicator injected before use
    runner.memory = init_memory(cfg["estimator"])
    runner.priv_vec = priv.vector()
    runner.skill_idx = 0
    runner.hold_left = 0


def make_hierarchical_runner(cfg: dict, rng: np.random.Generator,
                             kind: str, task: str,
                             level: int = 1) -> HierarchicalRunner:
    h = int(cfg["estimator"]["window"])
    runner = HierarchicalRunner(
        env=Env(cfg, rng),
        est_window=np.zeros((h, OBS_DIM)),
        sel_window=np.zeros((h, SEL_FRAME_DIM)),
        memory=init_memory(cfg["estimator"]),
        raw_obs=np.zeros(OBS_DIM), priv_vec=np.zeros(PRIV_DIM),
        skill_idx=0, hold_left=0,
    )
    reset_hierarchical(runner, cfg, kind, task, level)
    return runner


def hierarchical_step(sel_params: ParamSet, low_params: ParamSet, cfg: dict,
                      runner: HierarchicalRunner,
                      sel_rng: np.random.Generator | None,
                      forced_skill: int | None = None) -> dict:
    """One 50 Hz control step under the selector.

    The chosen indicator is written into every frame the estimator and
    actor see; the low-level parameters are read-only. Returns the
    transition record used for selector training.
    """
    if forced_skill is not None:
        skill, logp = int(forced_skill), 0.0
    elif runner.hold_left > 0:
        skill, logp = runner.skill_idx, 0.0
        runner.hold_left -= 1
    else:
        idx, lp = sample_skill(sel_params, cfg, runner.sel_window.ravel(),
                               sel_rng)
        skill, logp = int(idx), float(lp)
        runner.hold_left = int(cfg["selector"]["hold_steps"]) - 1
    switched = skill != runner.skill_idx
    runner.skill_idx = skill

    # only the newest frame gets the fresh decision; older frames keep the
    # indicator they were executed under, and padding stays zero
    obs_vec = inject_skill(runner.raw_obs, skill)
    runner.est_window[-1] = obs_vec
    with no_grad():
        out = encode_online(low_params, runner.est_window, runner.memory,
                            cfg["estimator"])
    actor_in = np.concatenate([out.f(), obs_vec])
    action, _ = sample_action(low_params, cfg, actor_in, None)

    sr = runner.env.step(action)

    # unified tracking reward: the same velocity kernel every skill is
    # scored by, independent of the active indicator
    sig = float(cfg["rewards"]["sigma_sq"])
    err = runner.env.cmd - sr.priv.v[0]
    reward = float(np.exp(-(err * err) / sig))
    if switched:
        reward -= float(cfg["selector"]["switch_penalty"])

    record = {
        "sel_window": runner.sel_window.ravel().copy(),
        "critic_in": np.concatenate([runner.priv_vec,
                                     skill_one_hot(SKILLS[skill])]),
        "skill": skill,
        "logp": logp,
        "reward": reward,
        "terminated": sr.terminated,
        "truncated": sr.truncated,
        "reward_terms": sr.reward_terms,
        "costs": sr.costs,
        "tracking": float(np.exp(-(err * err) / sig)),
    }

    runner.memory = out.memory.value
    runner.raw_obs = sr.obs.vector()
    runner.priv_vec = sr.priv.vector()
    runner.est_window = np.roll(runner.est_window, -1, axis=0)
    runner.est_window[-1] = runner.raw_obs
    runner.sel_window = np.roll(runner.sel_window, -1, axis=0)
    runner.sel_window[-1] = strip_skill(runner.raw_obs)
    return record


# ---- training (S2) -------------------------------------------------------------


def load_low_level(path: str) -> tuple:
    """Frozen low-level parameters, their content hash, and the config."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"low-level checkpoint not found: {path}")
    payload = load_checkpoint(path)
    if payload.get("kind") != "s1":
        raise ValueError(f"not a low-level checkpoint: {payload.get('kind')}")
    params = ParamSet()
    params.load_state_dict(payload["params"])
    return params, content_hash(payload), payload["config"]


class TrainerS2:
    """Clipped policy-gradient training of the categorical selector with the
    low-level stack held bit-frozen."""

    def __init__(self, cfg: dict, low_params: ParamSet, low_hash: str):
        self.cfg = cfg
        self.low_params = low_params
        self.low_hash = low_hash
        sel = cfg["selector"]
        n = int(sel["num_envs"])
        ss = np.random.SeedSequence(int(cfg["seed"]) + 1)
        children = ss.spawn(n + 3)
        self.sel_rng = np.random.default_rng(children[n])
        self.opt_rng = np.random.default_rng(children[n + 1])
        self.params = ParamSet()
        build_selector(self.params, cfg, np.random.default_rng(children[n + 2]))
        self.grid = assign_grid(n, cfg["curriculum"]["rows"],
                                int(cfg["curriculum"]["levels"]))
        # all rows trained at mixed, fixed difficulty (no curriculum in S2)
        assign_rng = np.random.default_rng(children[n + 2])
        self.grid.env_level[:] = assign_rng.integers(
            1, int(cfg["curriculum"]["levels"]) + 1, size=n)
        self.env_rngs = [np.random.default_rng(c) for c in children[:n]]
        self.runners = []
        for i in range(n):
            kind, task = self.grid.row_of(i)
            self.runners.append(make_hierarchical_runner(
                cfg, self.env_rngs[i], kind, task,
                int(self.grid.env_level[i])))
        self.iteration = 0

    def state_payload(self) -> dict:
        return {
            "kind": "s2",
            "iteration": self.iteration,
            "config": self.cfg,
            "low_level_hash": self.low_hash,
            "params": self.params.state_dict(),
            "grid": self.grid.state_dict(),
            "envs": [r.env.state_dict() for r in self.runners],
            "runners": [{
                "est_window": r.est_window.tolist(),
                "sel_window": r.sel_window.tolist(),
                "memory": r.memory.tolist(),
                "raw_obs": r.raw_obs.tolist(),
                "priv_vec": r.priv_vec.tolist(),
                "skill_idx": r.skill_idx,
                "hold_left": r.hold_left,
            } for r in self.runners],
            "env_rngs": [rng_state(g) for g in self.env_rngs],
            "sel_rng": rng_state(self.sel_rng),
            "opt_rng": rng_state(self.opt_rng),
        }

    def load_payload(self, payload: dict) -> None:
        if payload.get("kind") != "s2":
            raise ValueError(f"not an s2 checkpoint: {payload.get('kind')}")
        if payload["low_level_hash"] != self.low_hash:
            raise ValueError("checkpoint was trained against a different "
                             "low-level policy")
        self.iteration = int(payload["iteration"])
        self.params.load_state_dict(payload["params"])
        self.grid = CurriculumGrid.from_state_dict(payload["grid"])
        for runner, env_state, rs, rng_s in zip(
                self.runners, payload["envs"], payload["runners"],
                payload["env_rngs"]):
            runner.env.load_state_dict(env_state)
            runner.est_window = np.asarray(rs["est_window"])
            runner.sel_window = np.asarray(rs["sel_window"])
            runner.memory = np.asarray(rs["memory"])
            runner.raw_obs = np.asarray(rs["raw_obs"])
            runner.priv_vec = np.asarray(rs["priv_vec"])
            runner.skill_idx = int(rs["skill_idx"])
            runner.hold_left = int(rs["hold_left"])
            runner.env.rng.bit_generator.state = rng_s
        self.sel_rng = restore_rng(payload["sel_rng"])
        self.opt_rng = restore_rng(payload["opt_rng"])

    # -- rollouts --------------------------------------------------------

    def collect(self) -> dict:
        sel = self.cfg["selector"]
        t_steps, n = int(sel["horizon"]), len(self.runners)
        keys = ("sel_window", "critic_in", "skill", "logp", "reward")
        batch = {k: [] for k in keys}
        dones = np.zeros((t_steps, n))
        values = np.zeros((t_steps, n))
        tracking = np.zeros((t_steps, n))
        for t in range(t_steps):
            step_records = []
            for i, runner in enumerate(self.runners):
                try:
                    rec = hierarchical_step(self.params, self.low_params,
                                            self.cfg, runner, self.sel_rng)
                except EnvError as e:
                    raise EnvError(f"env {i}, batch step {t}: {e}") from e
                step_records.append(rec)
                tracking[t, i] = rec["tracking"]
                if rec["terminated"] or rec["truncated"]:
                    dones[t, i] = 1.0
                    kind, task = self.grid.row_of(i)
                    reset_hierarchical(runner, self.cfg, kind, task,
                                       int(self.grid.env_level[i]))
            with no_grad():
                values[t] = _selector_critic(
                    self.params, self.cfg,
                    np.stack([r["critic_in"] for r in step_records])).value
            for k in keys:
                batch[k].append([r[k] for r in step_records])
        out = {k: np.asarray(v) for k, v in batch.items()}
        out["dones"] = dones
        out["values"] = values
        out["tracking"] = tracking
        boot_in = np.stack([
            np.concatenate([r.priv_vec, skill_one_hot(SKILLS[r.skill_idx])])
            for r in self.runners])
        with no_grad():
            out["bootstrap"] = _selector_critic(self.params, self.cfg,
                                                boot_in).value
        return out

    # -- optimization -------------------------------------------------------

    def update(self, batch: dict) -> dict:
        sel = self.cfg["selector"]
        adv, ret = gae(batch["reward"], batch["values"], batch["bootstrap"],
                       float(self.cfg["p3o"]["gamma"]),
                       float(self.cfg["p3o"]["lam"]), batch["dones"],
                       normalize=True)

        def flat(a):
            return a.reshape(-1, *a.shape[2:])

        data = {
            "sel_window": flat(batch["sel_window"]),
            "critic_in": flat(batch["critic_in"]),
            "onehot": np.eye(NUM_SKILLS)[flat(batch["skill"]).astype(int)],
            "logp": flat(batch["logp"]),
            "adv": flat(adv), "ret": flat(ret),
        }
        eps = float(self.cfg["p3o"]["clip"])
        names = selector_param_names(self.params)
        n_samples = data["logp"].shape[0]
        last: dict = {}
        for _ in range(int(sel["epochs"])):
            perm = self.opt_rng.permutation(n_samples)
            sums: dict = {}
            for chunk in np.array_split(perm, int(sel["minibatches"])):
                mb = {k: v[chunk] for k, v in data.items()}
                lp = _selector_log_probs(self.params, self.cfg,
                                         mb["sel_window"])
                logp_new = (lp * Tensor(mb["onehot"])).sum(axis=-1)
                ratio = (logp_new - Tensor(mb["logp"])).exp()
                adv_t = Tensor(mb["adv"])
                pi_loss = -minimum(ratio * adv_t,
                                   ratio.clip(1 - eps, 1 + eps) * adv_t).mean()
                v_loss = (_selector_critic(self.params, self.cfg,
                                           mb["critic_in"])
                          - Tensor(mb["ret"])).square().mean()
                entropy = -(lp.exp() * lp).sum(axis=-1).mean()
                total = (pi_loss + v_loss * float(self.cfg["p3o"]["value_coef"])
                         - entropy * float(sel["entropy_coef"]))
                self.params.zero_grad()
                total.backward()
                self.params.clip_grad_norm(
                    float(self.cfg["p3o"]["max_grad_norm"]), names=names)
                self.params.adam_step(float(sel["lr"]), names=names)
                for k, v in (("pi", pi_loss.value), ("value", v_loss.value),
                             ("entropy", entropy.value),
                             ("total", total.value)):
                    sums[k] = sums.get(k, 0.0) + float(v)
            last = {k: v / int(sel["minibatches"]) for k, v in sums.items()}
        return last

    def run(self, out_dir: str, iterations: int | None = None) -> str:
        sel = self.cfg["selector"]
        total = int(sel["iterations"]) if iterations is None else int(iterations)
        every = int(sel["checkpoint_every"])
        os.makedirs(out_dir, exist_ok=True)
        ckpt_path = os.path.join(out_dir, "s2.ckpt.json")
        metrics_path = os.path.join(out_dir, "metrics_s2.csv")
        cols = ["iteration", "mean_reward", "mean_tracking", "loss_pi",
                "loss_value", "entropy", "loss_total", "wall_time_s"]
        fresh = self.iteration == 0 or not os.path.exists(metrics_path)
        t0 = time.monotonic()
        low_before = {n: self.low_params[n].value.copy()
                      for n in self.low_params.names()}
        with open(metrics_path, "w" if fresh else "a", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=cols)
            if fresh:
                writer.writeheader()
            while self.iteration < total:
                try:
                    batch = self.collect()
                except EnvError:
                    save_checkpoint(ckpt_path, self.state_payload())
                    raise
                comps = self.update(batch)
                self.iteration += 1
                writer.writerow({
                    "iteration": self.iteration,
                    "mean_reward": batch["reward"].mean(),
                    "mean_tracking": batch["tracking"].mean(),
                    "loss_pi": comps.get("pi", 0.0),
                    "loss_value": comps.get("value", 0.0),
                    "entropy": comps.get("entropy", 0.0),
                    "loss_total": comps.get("total", 0.0),
                    "wall_time_s": time.monotonic() - t0,
                })
                f.flush()
                if self.iteration % every == 0 or self.iteration == total:
                    save_checkpoint(ckpt_path, self.state_payload())
        for name, before in low_before.items():
            if not np.array_equal(before, self.low_params[name].value):
                raise RuntimeError(f"frozen parameter mutated: {name}")
        if total == 0 or not os.path.exists(ckpt_path):
            save_checkpoint(ckpt_path, self.state_payload())
        return ckpt_path


def train_s2(low_level_checkpoint: str, cfg: dict, out_dir: str,
             resume: str | None = None,
             iterations: int | None = None) -> str:
    low_params, low_hash, _ = load_low_level(low_level_checkpoint)
    trainer = TrainerS2(copy.deepcopy(cfg), low_params, low_hash)
    if resume is not None:
        trainer.load_payload(load_checkpoint(resume))
    return trainer.run(out_dir, iterations=iterations)


# ---- course evaluation -----------------------------------------------------------


def run_course(sel_params: ParamSet | None, low_params: ParamSet, cfg: dict,
               rng: np.random.Generator, cmd: float = 1.0,
               duration_s: float = 8.0,
               fixed_skill: int | None = None) -> dict:
    """Two-stage course: fallen spawn on flat ground, then velocity tracking.

    With sel_params the trained selector drives; with fixed_skill one
    indicator is held for the whole episode (baseline sweep). Success
    means ending upright and having covered at least half the commanded
    distance.
    """
    runner = make_hierarchical_runner(cfg, rng, "flat", "recovery")
    env = runner.env
    env.cmd = float(cmd)
    env.max_steps = int(round(duration_s / env.ctrl_dt))
    # rebuild the observation so the command is visible from the first frame
    obs = make_observation(env.world, env.cmd, env.a_prev, env.task,
                           cfg["env"], env.rng)
    runner.raw_obs = obs.vector()
    runner.sel_window[-1] = strip_skill(runner.raw_obs)
    runner.est_window[-1] = runner.raw_obs

    start_x = float(env.world.pos[0, 0])
    skills_used = []
    for _ in range(env.max_steps):
        rec = hierarchical_step(sel_params, low_params, cfg, runner,
                                None if sel_params is None else rng,
                                forced_skill=fixed_skill)
        skills_used.append(rec["skill"])
        if rec["terminated"] or rec["truncated"]:
            break
    summary = env.summary()
    distance = float(env.world.pos[0, 0]) - start_x
    target = cmd * duration_s
    success = (summary.final_upright_angle < 0.3
               and distance >= 0.5 * target)
    return {
        "success": bool(success),
        "distance": distance,
        "upright": summary.final_upright_angle,
        "skills_used": skills_used,
    }
