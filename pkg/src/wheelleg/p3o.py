"""Constrained on-policy training: rollouts, advantage estimation, and the
penalized clipped-surrogate objective.

The policy objective is the usual clipped PPO surrogate plus, for each
active constraint, a hinged penalty on a pessimistic (max-form) clipped
cost surrogate offset by how far the estimated discounted cost return sits
above its limit. With the penalty weight at zero the update reduces
bit-for-bit to plain PPO.
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, maximum, minimum, no_grad
from .checkpoint import load_checkpoint, restore_rng, rng_state, save_checkpoint
from .envs import (
    COST_NAMES,
    NUM_COSTS,
    OBS_DIM,
    PRIV_DIM,
    CurriculumGrid,
    Env,
    EnvError,
    assign_grid,
    make_observation,
    update_curriculum,
)
from .estimator import (
    build_estimator,
    encode_online,
    estimator_update,
    f_dim,
    init_memory,
)
from .nets import (
    LOG_STD_MAX,
    LOG_STD_MIN,
    ParamSet,
    add_dense,
    add_gaussian_head,
    add_mlp,
    dense,
    gaussian_entropy,
    gaussian_head,
    gaussian_log_prob,
    mlp,
)

ACT_DIM = 6

REWARD_TERM_KEYS = ("cmd_v", "vertical_vel", "gravity", "poserr", "alive",
                    "action_rate", "joint_acc")


# ---- policy and critics --------------------------------------------------------


def actor_input_dim(cfg: dict) -> int:
    return f_dim(cfg["estimator"]) + OBS_DIM


def build_policy(params: ParamSet, cfg: dict, rng: np.random.Generator) -> None:
    hidden = list(cfg["nets"]["actor_hidden"])
    dims = [actor_input_dim(cfg)] + hidden
    for i in range(len(hidden)):
        add_dense(params, f"actor.h{i}", dims[i], dims[i + 1], rng)
    add_gaussian_head(params, "actor.pi", hidden[-1], ACT_DIM, rng)
    ch = list(cfg["nets"]["critic_hidden"])
    add_mlp(params, "critic_r", PRIV_DIM, ch, 1, rng)
    for i in range(NUM_COSTS):
        add_mlp(params, f"critic_c{i}", PRIV_DIM, ch, 1, rng)


def policy_param_names(params: ParamSet) -> list:
    return [n for n in params.names()
            if n.startswith(("actor.", "critic_"))]


def actor_distribution(params: ParamSet, cfg: dict, actor_in: np.ndarray):
    """(mean, log_std) of the action distribution for a batch of inputs."""
    x = Tensor(np.asarray(actor_in, dtype=np.float64))
    for i in range(len(cfg["nets"]["actor_hidden"])):
        x = dense(params, f"actor.h{i}", x).elu()
    return gaussian_head(params, "actor.pi", x)


def sample_action(params: ParamSet, cfg: dict, actor_in: np.ndarray,
                  rng: np.random.Generator | None):
    """Draw actions (mean action when rng is None) and their log-probs."""
    with no_grad():
        mean, log_std = actor_distribution(params, cfg, actor_in)
        if rng is None:
            a = mean.value.copy()
        else:
            a = mean.value + np.exp(log_std.value) * rng.standard_normal(
                mean.value.shape)
        logp = gaussian_log_prob(mean, log_std, a).value
    return a, logp


def _critic(params: ParamSet, name: str, x: Tensor, cfg: dict) -> Tensor:
    return mlp(params, name, x, len(cfg["nets"]["critic_hidden"]))[..., 0]


def critic_values(params: ParamSet, priv: np.ndarray, cfg: dict) -> np.ndarray:
    """Stacked (reward, cost_0, cost_1) state values, no gradient."""
    with no_grad():
        x = Tensor(np.asarray(priv, dtype=np.float64))
        cols = [_critic(params, "critic_r", x, cfg).value]
        for i in range(NUM_COSTS):
            cols.append(_critic(params, f"critic_c{i}", x, cfg).value)
    return np.stack(cols, axis=-1)


# ---- rollout storage --------------------------------------------------------


@dataclass
class RolloutBatch:
    """T steps of N environments, plus estimator training views."""

    actor_in: np.ndarray    # (T, N, f+obs)
    priv: np.ndarray        # (T, N, PRIV_DIM)
    actions: np.ndarray     # (T, N, 6)
    logp: np.ndarray        # (T, N)
    rewards: np.ndarray     # (T, N)
    costs: np.ndarray       # (T, N, k)
    values_r: np.ndarray    # (T, N)
    values_c: np.ndarray    # (T, N, k)
    dones: np.ndarray       # (T, N) episode ended after this step
    boot_r: np.ndarray      # (N,)
    boot_c: np.ndarray      # (N, k)
    windows: np.ndarray     # (T, N, H, OBS_DIM)
    memories: np.ndarray    # (T, N, hidden)
    ref_obs: np.ndarray     # (T, N, OBS_DIM) noiseless view of the same state
    target_v: np.ndarray    # (T, N, 2)
    target_c: np.ndarray    # (T, N, 7)
    target_u: np.ndarray    # (T, N, 2)
    jc: np.ndarray          # (k,) mean discounted cost return per episode
    term_sums: dict = field(default_factory=dict)
    episodes_finished: int = 0

    @property
    def size(self) -> int:
        return self.rewards.shape[0] * self.rewards.shape[1]


@dataclass
class EnvRunner:
    """Per-environment rolling state between batches."""

    env: Env
    window: np.ndarray    # (H, OBS_DIM), zero-padded young episodes
    memory: np.ndarray    # (hidden,)
    obs_vec: np.ndarray   # (OBS_DIM,)
    priv_vec: np.ndarray  # (PRIV_DIM,)
    ref_vec: np.ndarray   # (OBS_DIM,) noiseless observation of the same state
    target: tuple         # (v, c, u) ground truth for the current state
    cost_acc: np.ndarray  # (k,) discounted cost sum since episode start
    gamma_pow: float

    def state_dict(self) -> dict:
        return {
            "window": self.window.tolist(),
            "memory": self.memory.tolist(),
            "obs_vec": self.obs_vec.tolist(),
            "priv_vec": self.priv_vec.tolist(),
            "ref_vec": self.ref_vec.tolist(),
            "target": [t.tolist() for t in self.target],
            "cost_acc": self.cost_acc.tolist(),
            "gamma_pow": self.gamma_pow,
        }

    def load_state_dict(self, s: dict) -> None:
        self.window = np.asarray(s["window"], dtype=np.float64)
        self.memory = np.asarray(s["memory"], dtype=np.float64)
        self.obs_vec = np.asarray(s["obs_vec"], dtype=np.float64)
        self.priv_vec = np.asarray(s["priv_vec"], dtype=np.float64)
        self.ref_vec = np.asarray(s["ref_vec"], dtype=np.float64)
        self.target = tuple(np.asarray(t, dtype=np.float64)
                            for t in s["target"])
        self.cost_acc = np.asarray(s["cost_acc"], dtype=np.float64)
        self.gamma_pow = float(s["gamma_pow"])


def _noiseless_obs(env: Env) -> np.ndarray:
    return make_observation(env.world, env.cmd, env.a_prev, env.task,
                            env.cfg["env"], None).vector()


def reset_runner(runner: EnvRunner, grid, env_id: int, cfg: dict) -> None:
    kind, task = grid.row_of(env_id)
    obs, priv = runner.env.reset(kind, task, int(grid.env_level[env_id]))
    h = int(cfg["estimator"]["window"])
    runner.window = np.zeros((h, OBS_DIM))
    runner.window[-1] = obs.vector()
    runner.memory = init_memory(cfg["estimator"])
    runner.obs_vec = obs.vector()
    runner.priv_vec = priv.vector()
    runner.ref_vec = _noiseless_obs(runner.env)
    runner.target = (priv.v.copy(), priv.c.astype(np.float64),
                     priv.u.copy())
    runner.cost_acc = np.zeros(NUM_COSTS)
    runner.gamma_pow = 1.0


def make_runners(cfg: dict, env_rngs) -> tuple:
    p3o = cfg["p3o"]
    grid = assign_grid(int(p3o["num_envs"]), cfg["curriculum"]["rows"],
                       int(cfg["curriculum"]["levels"]))
    runners = []
    h = int(cfg["estimator"]["window"])
    for i in range(int(p3o["num_envs"])):
        runner = EnvRunner(
            env=Env(cfg, env_rngs[i]),
            window=np.zeros((h, OBS_DIM)), memory=init_memory(cfg["estimator"]),
            obs_vec=np.zeros(OBS_DIM), priv_vec=np.zeros(PRIV_DIM),
            ref_vec=np.zeros(OBS_DIM),
            target=(np.zeros(2), np.zeros(7), np.zeros(2)),
            cost_acc=np.zeros(NUM_COSTS), gamma_pow=1.0,
        )
        reset_runner(runner, grid, i, cfg)
        runners.append(runner)
    return grid, runners


def collect_rollouts(params: ParamSet, runners, grid, cfg: dict,
                     act_rng: np.random.Generator | None,
                     horizon: int | None = None) -> RolloutBatch:
    """Advance every environment T steps under the current policy.

    act_rng=None runs the mean action (deterministic evaluation of the
    same code path). Episode ends reset the recurrent memory and update
    the curriculum level before the replacement episode starts.
    """
    p3o = cfg["p3o"]
    cfg_est = cfg["estimator"]
    t_steps = int(p3o["horizon"]) if horizon is None else int(horizon)
    n = len(runners)
    h = int(cfg_est["window"])
    hidden = int(cfg_est["gru_hidden"])
    gamma = float(p3o["gamma"])

    b = RolloutBatch(
        actor_in=np.zeros((t_steps, n, actor_input_dim(cfg))),
        priv=np.zeros((t_steps, n, PRIV_DIM)),
        actions=np.zeros((t_steps, n, ACT_DIM)),
        logp=np.zeros((t_steps, n)),
        rewards=np.zeros((t_steps, n)),
        costs=np.zeros((t_steps, n, NUM_COSTS)),
        values_r=np.zeros((t_steps, n)),
        values_c=np.zeros((t_steps, n, NUM_COSTS)),
        dones=np.zeros((t_steps, n)),
        boot_r=np.zeros(n), boot_c=np.zeros((n, NUM_COSTS)),
        windows=np.zeros((t_steps, n, h, OBS_DIM)),
        memories=np.zeros((t_steps, n, hidden)),
        ref_obs=np.zeros((t_steps, n, OBS_DIM)),
        target_v=np.zeros((t_steps, n, 2)),
        target_c=np.zeros((t_steps, n, 7)),
        target_u=np.zeros((t_steps, n, 2)),
        jc=np.zeros(NUM_COSTS),
        term_sums={k: 0.0 for k in REWARD_TERM_KEYS},
    )
    episode_returns: list = []

    for t in range(t_steps):
        windows = np.stack([r.window for r in runners])
        memories = np.stack([r.memory for r in runners])
        obs_vecs = np.stack([r.obs_vec for r in runners])
        priv_vecs = np.stack([r.priv_vec for r in runners])
        with no_grad():
            out = encode_online(params, windows, memories, cfg_est)
        actor_in = np.concatenate([out.f(), obs_vecs], axis=-1)
        actions, logp = sample_action(params, cfg, actor_in, act_rng)
        values = critic_values(params, priv_vecs, cfg)

        b.windows[t] = windows
        b.memories[t] = memories
        b.actor_in[t] = actor_in
        b.priv[t] = priv_vecs
        b.actions[t] = actions
        b.logp[t] = logp
        b.values_r[t] = values[:, 0]
        b.values_c[t] = values[:, 1:]
        b.ref_obs[t] = np.stack([r.ref_vec for r in runners])
        b.target_v[t] = np.stack([r.target[0] for r in runners])
        b.target_c[t] = np.stack([r.target[1] for r in runners])
        b.target_u[t] = np.stack([r.target[2] for r in runners])

        new_memories = out.memory.value
        for i, runner in enumerate(runners):
            try:
                sr = runner.env.step(actions[i])
            except EnvError as e:
                raise EnvError(f"env {i}, batch step {t}: {e}") from e
            b.rewards[t, i] = sr.reward
            b.costs[t, i] = sr.costs
            for key, val in sr.reward_terms.items():
                b.term_sums[key] += val
            runner.cost_acc += runner.gamma_pow * sr.costs
            runner.gamma_pow *= gamma
            if sr.terminated or sr.truncated:
                b.dones[t, i] = 1.0
                b.episodes_finished += 1
                episode_returns.append(runner.cost_acc.copy())
                update_curriculum(grid, i, runner.env.summary(),
                                  cfg["curriculum"])
                reset_runner(runner, grid, i, cfg)
            else:
                runner.memory = new_memories[i]
                runner.obs_vec = sr.obs.vector()
                runner.priv_vec = sr.priv.vector()
                runner.ref_vec = _noiseless_obs(runner.env)
                runner.target = (sr.priv.v.copy(),
                                 sr.priv.c.astype(np.float64),
                                 sr.priv.u.copy())
                runner.window = np.roll(runner.window, -1, axis=0)
                runner.window[-1] = runner.obs_vec

    boot = critic_values(params, np.stack([r.priv_vec for r in runners]), cfg)
    b.boot_r = boot[:, 0]
    b.boot_c = boot[:, 1:]
    # constraint-return estimate: finished episodes plus in-flight partials
    episode_returns.extend(r.cost_acc.copy() for r in runners)
    b.jc = np.mean(episode_returns, axis=0)
    return b


# ---- advantages ---------------------------------------------------------------


def gae(signal: np.ndarray, values: np.ndarray, bootstrap: np.ndarray,
        gamma: float, lam: float, dones: np.ndarray,
        normalize: bool = False) -> tuple:
    """Exponentially weighted advantages over TD residuals.

    signal/values/dones are (T, ...) aligned; bootstrap is the value of
    the state after the last step (ignored where dones[-1] is set).
    """
    signal = np.asarray(signal, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if not (signal.shape == values.shape == dones.shape):
        raise ValueError("signal, values, and dones must be aligned")
    t_steps = signal.shape[0]
    adv = np.zeros_like(signal)
    next_adv = np.zeros_like(bootstrap, dtype=np.float64)
    next_val = np.asarray(bootstrap, dtype=np.float64)
    for t in range(t_steps - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = signal[t] + gamma * next_val * live - values[t]
        next_adv = delta + gamma * lam * live * next_adv
        adv[t] = next_adv
        next_val = values[t]
    returns = adv + values
    if normalize:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return adv, returns


# ---- losses -------------------------------------------------------------------


def _ratio(params: ParamSet, cfg: dict, mb: dict):
    mean, log_std = actor_distribution(params, cfg, mb["actor_in"])
    logp_new = gaussian_log_prob(mean, log_std, mb["actions"])
    ratio = (logp_new - Tensor(mb["logp"])).exp()
    return ratio, log_std


def clip_reward_loss(params: ParamSet, cfg: dict, mb: dict) -> Tensor:
    """Clipped surrogate on the (normalized) reward advantages."""
    eps = float(cfg["p3o"]["clip"])
    ratio, _ = _ratio(params, cfg, mb)
    adv = Tensor(mb["adv_r"])
    return -minimum(ratio * adv, ratio.clip(1.0 - eps, 1.0 + eps) * adv).mean()


def clip_cost_loss(params: ParamSet, cfg: dict, mb: dict, i: int) -> Tensor:
    """Pessimistic clipped surrogate for constraint i plus the scaled
    excess of its estimated discounted cost return over the limit."""
    p3o = cfg["p3o"]
    eps = float(p3o["clip"])
    delta = float(cfg["constraints"][f"delta_{_constraint_key(i)}"])
    ratio, _ = _ratio(params, cfg, mb)
    adv = Tensor(mb["adv_c"][:, i])
    surrogate = maximum(ratio * adv,
                        ratio.clip(1.0 - eps, 1.0 + eps) * adv).mean()
    offset = (1.0 - float(p3o["gamma"])) * (float(mb["jc"][i]) - delta)
    return surrogate + offset


def _constraint_key(i: int) -> str:
    return {"dc_motor": "dc", "collision": "collision"}[COST_NAMES[i]]


def active_constraints(cfg: dict) -> list:
    flags = (cfg["p3o"]["dc_constraint"], cfg["p3o"]["collision_constraint"])
    return [i for i in range(NUM_COSTS) if flags[i]]


def p3o_loss(params: ParamSet, cfg: dict, mb: dict):
    """Total minibatch loss and its components.

    total = clipped reward surrogate
          + kappa * sum_i max(0, clipped cost surrogate_i)
          + value_coef * (reward and cost critic MSEs)
          - entropy_coef * entropy
    """
    p3o = cfg["p3o"]
    kappa = float(p3o["kappa"])
    eps = float(p3o["clip"])
    ratio, _ = _ratio(params, cfg, mb)
    clipped = ratio.clip(1.0 - eps, 1.0 + eps)
    adv_r = Tensor(mb["adv_r"])
    pi_loss = -minimum(ratio * adv_r, clipped * adv_r).mean()
    components = {"pi": float(pi_loss.value)}

    total = pi_loss
    cost_pen = 0.0
    if kappa != 0.0:
        for i in active_constraints(cfg):
            adv = Tensor(mb["adv_c"][:, i])
            delta = float(cfg["constraints"][f"delta_{_constraint_key(i)}"])
            li = (maximum(ratio * adv, clipped * adv).mean()
                  + (1.0 - float(p3o["gamma"])) * (float(mb["jc"][i]) - delta))
            components[f"cost_{COST_NAMES[i]}"] = float(li.value)
            total = total + maximum(li, 0.0) * kappa
            cost_pen += kappa * max(float(li.value), 0.0)
    components["cost_penalty"] = cost_pen

    x = Tensor(mb["priv"])
    v_loss = (_critic(params, "critic_r", x, cfg)
              - Tensor(mb["ret_r"])).square().mean()
    for i in range(NUM_COSTS):
        v_loss = v_loss + (_critic(params, f"critic_c{i}", x, cfg)
                           - Tensor(mb["ret_c"][:, i])).square().mean()
    components["value"] = float(v_loss.value)

    log_std = params.leaf("actor.pi.log_std").clip(LOG_STD_MIN, LOG_STD_MAX)
    entropy = gaussian_entropy(log_std)
    components["entropy"] = float(entropy.value)

    total = (total + v_loss * float(p3o["value_coef"])
             - entropy * float(p3o["entropy_coef"]))
    components["total"] = float(total.value)
    return total, components


def flatten_batch(b: RolloutBatch, cfg: dict) -> dict:
    """Per-sample arrays with computed advantages and returns."""
    p3o = cfg["p3o"]
    adv_r, ret_r = gae(b.rewards, b.values_r, b.boot_r, float(p3o["gamma"]),
                       float(p3o["lam"]), b.dones, normalize=True)
    adv_c = np.zeros_like(b.costs)
    ret_c = np.zeros_like(b.costs)
    for i in range(NUM_COSTS):
        adv_c[..., i], ret_c[..., i] = gae(
            b.costs[..., i], b.values_c[..., i], b.boot_c[:, i],
            float(p3o["gamma"]), float(p3o["lam"]), b.dones)
        # scale (no centering, the sign carries meaning) so the penalty and
        # reward surrogates act on comparable magnitudes
        adv_c[..., i] /= adv_c[..., i].std() + 1e-8
    def flat(a):
        return a.reshape(-1, *a.shape[2:])
    return {
        "actor_in": flat(b.actor_in), "priv": flat(b.priv),
        "actions": flat(b.actions), "logp": flat(b.logp),
        "adv_r": flat(adv_r), "ret_r": flat(ret_r),
        "adv_c": flat(adv_c), "ret_c": flat(ret_c),
        "windows": flat(b.windows), "memories": flat(b.memories),
        "ref_obs": flat(b.ref_obs), "target_v": flat(b.target_v),
        "target_c": flat(b.target_c), "target_u": flat(b.target_u),
        "jc": b.jc,
    }


def _select(data: dict, idx: np.ndarray) -> dict:
    mb = {k: (v[idx] if isinstance(v, np.ndarray) and v.ndim and
              v.shape[0] == data["logp"].shape[0] else v)
          for k, v in data.items()}
    return mb


def policy_update(params: ParamSet, data: dict, cfg: dict,
                  opt_rng: np.random.Generator) -> dict:
    """Minibatched Adam epochs on the combined objective; returns the
    component means of the final epoch."""
    p3o = cfg["p3o"]
    names = policy_param_names(params)
    n_samples = data["logp"].shape[0]
    n_mb = int(p3o["minibatches"])
    last: dict = {}
    for _ in range(int(p3o["epochs"])):
        perm = opt_rng.permutation(n_samples)
        sums: dict = {}
        for chunk in np.array_split(perm, n_mb):
            loss, comps = p3o_loss(params, cfg, _select(data, chunk))
            params.zero_grad()
            loss.backward()
            params.clip_grad_norm(float(p3o["max_grad_norm"]), names=names)
            params.adam_step(float(p3o["lr"]), names=names)
            for k, v in comps.items():
                sums[k] = sums.get(k, 0.0) + v
        last = {k: v / n_mb for k, v in sums.items()}
    return last


def estimator_epoch(params: ParamSet, data: dict, cfg: dict,
                    opt_rng: np.random.Generator) -> dict:
    cfg_est = cfg["estimator"]
    n_samples = data["logp"].shape[0]
    size = min(int(cfg_est["batch_size"]), n_samples)
    perm = opt_rng.permutation(n_samples)
    sums: dict = {}
    chunks = np.array_split(perm, max(1, n_samples // size))
    for chunk in chunks:
        batch = {
            "windows": data["windows"][chunk],
            "memories": data["memories"][chunk],
            "next_obs": data["ref_obs"][chunk],
            "v": data["target_v"][chunk],
            "c": data["target_c"][chunk],
            "u": data["target_u"][chunk],
        }
        report = estimator_update(params, batch, cfg_est)
        for k, v in report.items():
            sums[k] = sums.get(k, 0.0) + v
    return {k: v / len(chunks) for k, v in sums.items()}


# ---- training loop --------------------------------------------------------------


METRIC_LOSS_KEYS = ("pi", "cost_penalty", "value", "entropy", "total")


def _metric_columns(cfg: dict) -> list:
    cols = ["iteration", "mean_reward"]
    cols += [f"term_{k}" for k in REWARD_TERM_KEYS]
    cols += [f"cost_{n}" for n in COST_NAMES]
    cols += ["violation_rate"]
    cols += [f"jc_{n}" for n in COST_NAMES]
    cols += [f"level_{kind}_{task}" for kind, task in cfg["curriculum"]["rows"]]
    cols += [f"loss_{k}" for k in METRIC_LOSS_KEYS]
    cols += ["loss_est_pred", "loss_est_swav", "wall_time_s"]
    return cols


def _metric_row(cfg, iteration, batch, comps, est_report, grid, wall):
    steps = batch.size
    row = {
        "iteration": iteration,
        "mean_reward": batch.rewards.mean(),
        "violation_rate": float(np.mean(batch.costs[..., 0] > 0)),
        "wall_time_s": wall,
        "loss_est_pred": est_report.get("pred", 0.0),
        "loss_est_swav": est_report.get("swav", 0.0),
    }
    for k in REWARD_TERM_KEYS:
        row[f"term_{k}"] = batch.term_sums[k] / steps
    for i, name in enumerate(COST_NAMES):
        row[f"cost_{name}"] = batch.costs[..., i].mean()
        row[f"jc_{name}"] = batch.jc[i]
    for r, (kind, task) in enumerate(cfg["curriculum"]["rows"]):
        mask = grid.env_row == r
        row[f"level_{kind}_{task}"] = (float(grid.env_level[mask].mean())
                                       if mask.any() else 0.0)
    for k in METRIC_LOSS_KEYS:
        row[f"loss_{k}"] = comps.get(k, 0.0)
    return row


class TrainerS1:
    """Owns all mutable training state so runs can pause and resume
    bit-exactly from a checkpoint."""

    def __init__(self, cfg: dict):
        self.cfg = cfg
        seed = int(cfg["seed"])
        n = int(cfg["p3o"]["num_envs"])
        ss = np.random.SeedSequence(seed)
        children = ss.spawn(n + 3)
        self.act_rng = np.random.default_rng(children[n])
        self.opt_rng = np.random.default_rng(children[n + 1])
        self.params = ParamSet()
        build_policy(self.params, cfg, np.random.default_rng(children[n + 2]))
        build_estimator(self.params, cfg["estimator"],
                        np.random.default_rng(children[n + 2]))
        env_rngs = [np.random.default_rng(c) for c in children[:n]]
        self.env_rngs = env_rngs
        self.grid, self.runners = make_runners(cfg, env_rngs)
        self.iteration = 0

    # -- persistence -----------------------------------------------------

    def state_payload(self) -> dict:
        return {
            "kind": "s1",
            "iteration": self.iteration,
            "config": self.cfg,
            "params": self.params.state_dict(),
            "grid": self.grid.state_dict(),
            "envs": [r.env.state_dict() for r in self.runners],
            "runners": [r.state_dict() for r in self.runners],
            "env_rngs": [rng_state(g) for g in self.env_rngs],
            "act_rng": rng_state(self.act_rng),
            "opt_rng": rng_state(self.opt_rng),
        }

    def load_payload(self, payload: dict) -> None:
        if payload.get("kind") != "s1":
            raise ValueError(f"not an s1 checkpoint: {payload.get('kind')}")
        self.iteration = int(payload["iteration"])
        self.params.load_state_dict(payload["params"])
        self.grid = CurriculumGrid.from_state_dict(payload["grid"])
        for runner, env_state, run_state, rng_s in zip(
                self.runners, payload["envs"], payload["runners"],
                payload["env_rngs"]):
            runner.env.load_state_dict(env_state)
            runner.load_state_dict(run_state)
            runner.env.rng.bit_generator.state = rng_s
        self.act_rng = restore_rng(payload["act_rng"])
        self.opt_rng = restore_rng(payload["opt_rng"])

    # -- loop --------------------------------------------------------------

    def run(self, out_dir: str, iterations: int | None = None) -> str:
        cfg = self.cfg
        total = (int(cfg["p3o"]["iterations"]) if iterations is None
                 else int(iterations))
        every = int(cfg["p3o"]["checkpoint_every"])
        os.makedirs(out_dir, exist_ok=True)
        ckpt_path = os.path.join(out_dir, "s1.ckpt.json")
        metrics_path = os.path.join(out_dir, "metrics_s1.csv")
        cols = _metric_columns(cfg)
        fresh = self.iteration == 0 or not os.path.exists(metrics_path)
        mode = "w" if fresh else "a"
        t0 = time.monotonic()
        with open(metrics_path, mode, newline="") as f:
            writer = csv.DictWriter(f, fieldnames=cols)
            if fresh:
                writer.writeheader()
            while self.iteration < total:
                try:
                    batch = collect_rollouts(self.params, self.runners,
                                             self.grid, cfg, self.act_rng)
                except EnvError:
                    save_checkpoint(ckpt_path, self.state_payload())
                    raise
                data = flatten_batch(batch, cfg)
                comps = policy_update(self.params, data, cfg, self.opt_rng)
                est_report = estimator_epoch(self.params, data, cfg,
                                             self.opt_rng)
                self.iteration += 1
                writer.writerow(_metric_row(cfg, self.iteration, batch,
                                            comps, est_report, self.grid,
                                            time.monotonic() - t0))
                f.flush()
                if self.iteration % every == 0 or self.iteration == total:
                    save_checkpoint(ckpt_path, self.state_payload())
        if total == 0 or not os.path.exists(ckpt_path):
            save_checkpoint(ckpt_path, self.state_payload())
        return ckpt_path


def train_s1(cfg: dict, out_dir: str, resume: str | None = None,
             iterations: int | None = None) -> str:
    trainer = TrainerS1(cfg)
    if resume is not None:
        trainer.load_payload(load_checkpoint(resume))
    return trainer.run(out_dir, iterations=iterations)
