"""Tests for advantage estimation, the penalized clipped objective, rollout
collection, and the stage-1 training loop."""

import copy
import csv
import os

import numpy as np
import pytest

from wheelleg.config import default_config
from wheelleg.envs import NUM_COSTS, PRIV_DIM
from wheelleg.estimator import build_estimator, estimator_param_names
from wheelleg.nets import ParamSet, grad_check
from wheelleg.p3o import (
    ACT_DIM,
    TrainerS1,
    actor_input_dim,
    build_policy,
    clip_cost_loss,
    clip_reward_loss,
    collect_rollouts,
    estimator_epoch,
    flatten_batch,
    gae,
    p3o_loss,
    policy_param_names,
    policy_update,
    sample_action,
    train_s1,
)


def small_cfg():
    cfg = default_config()
    cfg["nets"]["actor_hidden"] = [16]
    cfg["nets"]["critic_hidden"] = [16]
    cfg["estimator"].update(frame_embed=8, gru_hidden=8, embed_dim=4,
                            num_prototypes=4, batch_size=16)
    cfg["p3o"].update(num_envs=2, horizon=4, iterations=2,
                      checkpoint_every=1, minibatches=2, epochs=2)
    cfg["curriculum"]["rows"] = [["flat", "locomotion"]]
    return cfg


@pytest.fixture()
def cfg():
    return small_cfg()


@pytest.fixture()
def params(cfg):
    p = ParamSet()
    rng = np.random.default_rng(3)
    build_policy(p, cfg, rng)
    build_estimator(p, cfg["estimator"], rng)
    return p


def make_minibatch(params, cfg, rng, n=8):
    actor_in = rng.normal(size=(n, actor_input_dim(cfg)))
    actions, logp = sample_action(params, cfg, actor_in, rng)
    return {
        "actor_in": actor_in,
        "actions": actions,
        "logp": logp,
        "priv": rng.normal(size=(n, PRIV_DIM)),
        "adv_r": rng.normal(size=n),
        "ret_r": rng.normal(size=n),
        "adv_c": rng.normal(size=(n, NUM_COSTS)),
        "ret_c": rng.normal(size=(n, NUM_COSTS)),
        "jc": np.zeros(NUM_COSTS),
    }


# ---- GAE ---------------------------------------------------------------------


def _brute_force_gae(x, v, boot, gamma, lam, dones):
    t_steps = len(x)
    v_next = np.append(v[1:], boot)
    delta = x + gamma * v_next * (1.0 - dones) - v
    adv = np.zeros(t_steps)
    for t in range(t_steps):
        acc, w = 0.0, 1.0
        for l in range(t, t_steps):
            acc += w * delta[l]
            if dones[l]:
                break
            w *= gamma * lam
        adv[t] = acc
    return adv, adv + v


def test_gae_lambda_zero_is_td_residual():
    rng = np.random.default_rng(0)
    x, v, d = rng.normal(size=6), rng.normal(size=6), np.zeros(6)
    boot = 0.3
    adv, _ = gae(x, v, np.array(boot), 0.9, 0.0, d)
    v_next = np.append(v[1:], boot)
    np.testing.assert_allclose(adv, x + 0.9 * v_next - v, atol=1e-15)


def test_gae_gamma_zero_ignores_future():
    rng = np.random.default_rng(1)
    x, v = rng.normal(size=5), rng.normal(size=5)
    adv, _ = gae(x, v, np.array(0.0), 0.0, 0.95, np.zeros(5))
    np.testing.assert_allclose(adv, x - v, atol=1e-15)


def test_gae_matches_brute_force_double_sum():
    rng = np.random.default_rng(2)
    for trial in range(20):
        t_steps = int(rng.integers(1, 11))
        x = rng.normal(size=t_steps)
        v = rng.normal(size=t_steps)
        dones = (rng.random(t_steps) < 0.25).astype(float)
        boot = float(rng.normal())
        adv, ret = gae(x, v, np.array(boot), 0.99, 0.95, dones)
        adv_bf, ret_bf = _brute_force_gae(x, v, boot, 0.99, 0.95, dones)
        np.testing.assert_allclose(adv, adv_bf, atol=1e-12)
        np.testing.assert_allclose(ret, ret_bf, atol=1e-12)


def test_gae_normalization():
    rng = np.random.default_rng(3)
    adv, _ = gae(rng.normal(size=(32, 4)), rng.normal(size=(32, 4)),
                 rng.normal(size=4), 0.99, 0.95, np.zeros((32, 4)),
                 normalize=True)
    assert abs(adv.mean()) < 1e-12
    np.testing.assert_allclose(adv.std(), 1.0, atol=1e-6)


def test_gae_rejects_misaligned():
    with pytest.raises(ValueError):
        gae(np.zeros(4), np.zeros(5), np.array(0.0), 0.99, 0.95, np.zeros(4))


# ---- clipped surrogates ---------------------------------------------------------


def test_reward_loss_at_behavior_policy(params, cfg):
    rng = np.random.default_rng(4)
    mb = make_minibatch(params, cfg, rng)
    loss = clip_reward_loss(params, cfg, mb)
    np.testing.assert_allclose(loss.value, -mb["adv_r"].mean(), atol=1e-12)


def test_reward_loss_zero_advantage_zero_gradient(params, cfg):
    rng = np.random.default_rng(5)
    mb = make_minibatch(params, cfg, rng)
    mb["adv_r"] = np.zeros_like(mb["adv_r"])
    params.zero_grad()
    loss = clip_reward_loss(params, cfg, mb)
    loss.backward()
    assert loss.value == 0.0
    for name in policy_param_names(params):
        if name.startswith("actor."):
            np.testing.assert_array_equal(params[name].grad, 0.0)


def test_reward_loss_uses_clipped_ratio(params, cfg):
    rng = np.random.default_rng(6)
    mb = make_minibatch(params, cfg, rng, n=1)
    eps = cfg["p3o"]["clip"]
    # shift the behavior log-prob so the current policy's ratio is 1 + 2eps
    mb["logp"] = mb["logp"] - np.log(1.0 + 2.0 * eps)
    mb["adv_r"] = np.array([2.0])
    loss = clip_reward_loss(params, cfg, mb)
    np.testing.assert_allclose(loss.value, -(1.0 + eps) * 2.0, atol=1e-12)


def test_cost_loss_boundary_is_zero(params, cfg):
    rng = np.random.default_rng(7)
    mb = make_minibatch(params, cfg, rng)
    mb["adv_c"] = np.zeros_like(mb["adv_c"])
    mb["jc"] = np.array([cfg["constraints"]["delta_dc"],
                         cfg["constraints"]["delta_collision"]])
    for i in range(NUM_COSTS):
        np.testing.assert_allclose(
            clip_cost_loss(params, cfg, mb, i).value, 0.0, atol=1e-12)


def test_cost_loss_negative_margin_hinged_away(params, cfg):
    rng = np.random.default_rng(8)
    mb = make_minibatch(params, cfg, rng)
    mb["adv_c"] = np.zeros_like(mb["adv_c"])
    margin = 0.05
    mb["jc"] = np.array([cfg["constraints"]["delta_dc"] - margin,
                         cfg["constraints"]["delta_collision"] - margin])
    gamma = cfg["p3o"]["gamma"]
    loss = clip_cost_loss(params, cfg, mb, 0)
    np.testing.assert_allclose(loss.value, -(1.0 - gamma) * margin,
                               atol=1e-12)
    # satisfied constraints contribute nothing to the total
    total_pen, _ = p3o_loss(params, cfg, mb)
    cfg0 = copy.deepcopy(cfg)
    cfg0["p3o"]["kappa"] = 0.0
    total_ppo, _ = p3o_loss(params, cfg0, mb)
    np.testing.assert_allclose(total_pen.value, total_ppo.value, atol=1e-12)


def test_cost_loss_pessimistic_when_clipping_binds(params, cfg):
    rng = np.random.default_rng(9)
    mb = make_minibatch(params, cfg, rng, n=1)
    eps = cfg["p3o"]["clip"]
    mb["logp"] = mb["logp"] - np.log(1.0 + 2.0 * eps)  # ratio = 1 + 2eps
    mb["adv_c"] = np.full((1, NUM_COSTS), 3.0)
    mb["jc"] = np.array([cfg["constraints"]["delta_dc"],
                         cfg["constraints"]["delta_collision"]])
    loss = clip_cost_loss(params, cfg, mb, 0)
    # max-form keeps the unclipped (larger) term
    np.testing.assert_allclose(loss.value, (1.0 + 2.0 * eps) * 3.0,
                               atol=1e-12)
    assert loss.value >= (1.0 + eps) * 3.0


# ---- combined objective ----------------------------------------------------------


def test_kappa_zero_reduces_to_ppo(params, cfg):
    rng = np.random.default_rng(10)
    mb = make_minibatch(params, cfg, rng)
    cfg0 = copy.deepcopy(cfg)
    cfg0["p3o"]["kappa"] = 0.0
    total, comps = p3o_loss(params, cfg0, mb)
    expected = (comps["pi"] + cfg["p3o"]["value_coef"] * comps["value"]
                - cfg["p3o"]["entropy_coef"] * comps["entropy"])
    np.testing.assert_allclose(total.value, expected, rtol=1e-12)
    assert comps["cost_penalty"] == 0.0


def test_penalty_monotone_in_kappa(params, cfg):
    rng = np.random.default_rng(11)
    mb = make_minibatch(params, cfg, rng)
    mb["jc"] = np.array([1.0, 1.0])  # clearly violating
    totals = []
    for kappa in (0.0, 0.5, 1.0, 2.0):
        c = copy.deepcopy(cfg)
        c["p3o"]["kappa"] = kappa
        totals.append(p3o_loss(params, c, mb)[0].value)
    assert all(b >= a - 1e-12 for a, b in zip(totals, totals[1:]))


def test_p3o_loss_gradient_check(params, cfg):
    rng = np.random.default_rng(12)
    mb = make_minibatch(params, cfg, rng, n=4)
    names = [n for n in policy_param_names(params)
             if not n.endswith("log_std")]  # clamp kink excluded

    def loss_fn():
        return p3o_loss(params, cfg, mb)[0]

    assert grad_check(params, loss_fn, names=names, max_entries=2) < 1e-4


# ---- rollouts ------------------------------------------------------------------


def test_collect_single_transition_shapes(cfg):
    cfg = copy.deepcopy(cfg)
    cfg["p3o"]["num_envs"] = 1
    trainer = TrainerS1(cfg)
    batch = collect_rollouts(trainer.params, trainer.runners, trainer.grid,
                             cfg, trainer.act_rng, horizon=1)
    assert batch.rewards.shape == (1, 1)
    assert batch.actions.shape == (1, 1, ACT_DIM)
    assert batch.boot_r.shape == (1,)
    assert np.all(np.isfinite(batch.actor_in))


def test_collect_is_deterministic(cfg):
    batches = []
    for _ in range(2):
        trainer = TrainerS1(cfg)
        batches.append(collect_rollouts(trainer.params, trainer.runners,
                                        trainer.grid, cfg, trainer.act_rng))
    a, b = batches
    np.testing.assert_array_equal(a.rewards, b.rewards)
    np.testing.assert_array_equal(a.actions, b.actions)
    np.testing.assert_array_equal(a.actor_in, b.actor_in)
    np.testing.assert_array_equal(a.costs, b.costs)


def test_updates_touch_disjoint_parameters(cfg):
    trainer = TrainerS1(cfg)
    params = trainer.params
    batch = collect_rollouts(params, trainer.runners, trainer.grid, cfg,
                             trainer.act_rng)
    data = flatten_batch(batch, cfg)
    est_names = estimator_param_names(params)
    pol_names = policy_param_names(params)
    assert not set(est_names) & set(pol_names)

    est_before = {n: params[n].value.copy() for n in est_names}
    policy_update(params, data, cfg, trainer.opt_rng)
    for n in est_names:
        np.testing.assert_array_equal(est_before[n], params[n].value)

    pol_before = {n: params[n].value.copy() for n in pol_names}
    estimator_epoch(params, data, cfg, trainer.opt_rng)
    for n in pol_before:
        np.testing.assert_array_equal(pol_before[n], params[n].value)


# ---- training loop ---------------------------------------------------------------


def _params_equal(a, b):
    if set(a.names()) != set(b.names()):
        return False
    return all(np.array_equal(a[n].value, b[n].value) for n in a.names())


def test_zero_iterations_checkpoint_is_initialization(cfg, tmp_path):
    from wheelleg.checkpoint import load_checkpoint

    path = train_s1(cfg, str(tmp_path), iterations=0)
    payload = load_checkpoint(path)
    fresh = TrainerS1(cfg)
    restored = ParamSet()
    restored.load_state_dict(payload["params"])
    assert _params_equal(fresh.params, restored)
    assert payload["iteration"] == 0


def test_metrics_rows_equal_iterations(cfg, tmp_path):
    train_s1(cfg, str(tmp_path), iterations=3)
    with open(os.path.join(str(tmp_path), "metrics_s1.csv")) as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 3
    assert [int(r["iteration"]) for r in rows] == [1, 2, 3]
    assert all(np.isfinite(float(v)) for r in rows for v in r.values())


def test_resume_is_bit_exact(cfg, tmp_path):
    straight = str(tmp_path / "straight")
    split = str(tmp_path / "split")
    from wheelleg.checkpoint import load_checkpoint

    p_straight = load_checkpoint(train_s1(cfg, straight, iterations=2))
    train_s1(cfg, split, iterations=1)
    p_split = load_checkpoint(train_s1(
        cfg, split, resume=os.path.join(split, "s1.ckpt.json"), iterations=2))
    a, b = ParamSet(), ParamSet()
    a.load_state_dict(p_straight["params"])
    b.load_state_dict(p_split["params"])
    assert _params_equal(a, b)
    assert p_straight["grid"] == p_split["grid"]
    assert p_straight["act_rng"] == p_split["act_rng"]
