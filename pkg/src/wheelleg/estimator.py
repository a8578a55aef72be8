"""Proprioceptive state estimator with a contrastive auxiliary objective.

A GRU over the last H observation frames predicts what the simulator knows
but the robot cannot sense directly: base velocity, per-segment contact
probabilities, wheel ground clearances, and a latent embedding. A separate
reference encoder maps the successor observation to the same embedding
space; a swapped-prediction loss over a small bank of prototypes
(Sinkhorn-balanced soft cluster assignments) keeps the two embeddings
consistent without collapsing them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor, log_softmax, no_grad
from .nets import ParamSet, add_dense, add_gru, add_mlp, dense, gru_step, mlp

OBS_DIM = 25
V_DIM = 2
C_DIM = 7
U_DIM = 2


def embed_dim(cfg_est: dict) -> int:
    return int(cfg_est["embed_dim"])


def f_dim(cfg_est: dict) -> int:
    """Width of the estimator output consumed by the actor."""
    return V_DIM + C_DIM + U_DIM + embed_dim(cfg_est)


@dataclass
class EstimatorOutput:
    v: Tensor       # predicted base velocity (B, 2)
    c: Tensor       # contact probabilities (B, 7), sigmoid outputs
    u: Tensor       # wheel clearances (B, 2), unclamped
    e: Tensor       # latent embedding (B, embed)
    memory: Tensor  # carried recurrent state (B, hidden)

    def f(self) -> np.ndarray:
        """Actor-facing feature vector; clearances clamped to physical range."""
        return np.concatenate([
            self.v.value, self.c.value, np.maximum(self.u.value, 0.0),
            self.e.value,
        ], axis=-1)


def build_estimator(params: ParamSet, cfg_est: dict,
                    rng: np.random.Generator) -> None:
    frame = int(cfg_est["frame_embed"])
    hidden = int(cfg_est["gru_hidden"])
    emb = embed_dim(cfg_est)
    k = int(cfg_est["num_prototypes"])
    add_dense(params, "est.frame", OBS_DIM, frame, rng)
    add_gru(params, "est.gru", frame, hidden, rng)
    add_dense(params, "est.head_v", hidden, V_DIM, rng)
    add_dense(params, "est.head_c", hidden, C_DIM, rng)
    add_dense(params, "est.head_u", hidden, U_DIM, rng)
    add_dense(params, "est.head_e", hidden, emb, rng)
    add_mlp(params, "ref", OBS_DIM, [frame], emb, rng)
    proto = rng.normal(size=(emb, k))
    proto /= np.linalg.norm(proto, axis=0, keepdims=True)
    params.add("proto", proto)


def estimator_param_names(params: ParamSet) -> list:
    return [n for n in params.names()
            if n.startswith(("est.", "ref.")) or n == "proto"]


def init_memory(cfg_est: dict, batch: int | None = None) -> np.ndarray:
    hidden = int(cfg_est["gru_hidden"])
    return np.zeros(hidden) if batch is None else np.zeros((batch, hidden))


def encode_online(params: ParamSet, window: np.ndarray, memory,
                  cfg_est: dict) -> EstimatorOutput:
    """Run the H-frame window through the recurrent encoder.

    window: (H, OBS_DIM) or (B, H, OBS_DIM), zero-padded at episode starts.
    memory: matching (hidden,) or (B, hidden) carried state.
    """
    h_frames = int(cfg_est["window"])
    window = np.asarray(window, dtype=np.float64)
    if window.shape[-2:] != (h_frames, OBS_DIM):
        raise ValueError(
            f"window must be (..., {h_frames}, {OBS_DIM}), got {window.shape}")
    h = as_tensor(memory)
    for t in range(h_frames):
        x = dense(params, "est.frame", Tensor(window[..., t, :])).elu()
        h = gru_step(params, "est.gru", x, h)
    return EstimatorOutput(
        v=dense(params, "est.head_v", h),
        c=dense(params, "est.head_c", h).sigmoid(),
        u=dense(params, "est.head_u", h),
        e=dense(params, "est.head_e", h),
        memory=h,
    )


def encode_reference(params: ParamSet, next_obs: np.ndarray) -> Tensor:
    """Embed the successor observation (the training-time target view)."""
    return mlp(params, "ref", Tensor(np.asarray(next_obs, dtype=np.float64)), 1)


# ---- losses ------------------------------------------------------------------

_BCE_CLIP = 1e-7


HEAD_NAMES = ("velocity", "collision", "wheel")


def prediction_loss(out: EstimatorOutput, v: np.ndarray, c: np.ndarray,
                    u: np.ndarray, disabled=()) -> Tensor:
    """MSE on velocity and clearance, binary cross-entropy on contacts.

    disabled: head names ("velocity", "collision", "wheel") whose terms
    are dropped — the ablation switch for training without that signal.
    """
    unknown = set(disabled) - set(HEAD_NAMES)
    if unknown:
        raise ValueError(f"unknown estimator heads: {sorted(unknown)}")
    c = np.asarray(c, dtype=np.float64)
    if not np.all((c == 0.0) | (c == 1.0)):
        raise ValueError("contact targets must be 0 or 1")
    loss = Tensor(0.0)
    if "velocity" not in disabled:
        loss = loss + (out.v
                       - Tensor(np.asarray(v, dtype=np.float64))).square().mean()
    if "collision" not in disabled:
        p = out.c.clip(_BCE_CLIP, 1.0 - _BCE_CLIP)
        loss = loss - (Tensor(c) * p.log()
                       + Tensor(1.0 - c) * (1.0 - p).log()).mean()
    if "wheel" not in disabled:
        loss = loss + (out.u
                       - Tensor(np.asarray(u, dtype=np.float64))).square().mean()
    return loss


def sinkhorn_assign(scores: np.ndarray, eps: float, iters: int) -> np.ndarray:
    """Balanced soft assignments of B samples over K prototypes.

    Alternating normalization drives columns toward mass 1/K and rows toward
    1/B; the result is row-renormalized into per-sample soft targets.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise ValueError("non-finite prototype scores")
    b, k = scores.shape
    q = np.exp((scores - scores.max()) / eps)
    q /= q.sum()
    for _ in range(iters):
        q /= q.sum(axis=0, keepdims=True) * k
        q /= q.sum(axis=1, keepdims=True) * b
    return q / q.sum(axis=1, keepdims=True)


def _l2_normalize(t: Tensor) -> Tensor:
    sumsq = t.square().sum(axis=-1, keepdims=True) + 1e-12
    return t * (sumsq.log() * -0.5).exp()


def swav_loss(params: ParamSet, e_online: Tensor, e_ref: Tensor,
              cfg_est: dict) -> Tensor:
    """Swapped prediction between the online and reference embeddings.

    Each view's Sinkhorn assignment (computed without gradients) supervises
    the other view's softmax over prototype scores.
    """
    if e_online.value.shape[0] < 2:
        raise ValueError("swav loss needs a batch of at least 2")
    temp = float(cfg_est["temperature"])
    eps = float(cfg_est["sinkhorn_eps"])
    iters = int(cfg_est["sinkhorn_iters"])
    proto = params.leaf("proto")
    z_on = _l2_normalize(e_online)
    z_ref = _l2_normalize(e_ref)
    s_on = z_on @ proto
    s_ref = z_ref @ proto
    with no_grad():
        q_on = sinkhorn_assign(s_on.value, eps, iters)
        q_ref = sinkhorn_assign(s_ref.value, eps, iters)
    lp_on = log_softmax(s_on * (1.0 / temp), axis=-1)
    lp_ref = log_softmax(s_ref * (1.0 / temp), axis=-1)
    half_a = -(Tensor(q_ref) * lp_on).sum(axis=-1).mean()
    half_b = -(Tensor(q_on) * lp_ref).sum(axis=-1).mean()
    return (half_a + half_b) * 0.5


def renormalize_prototypes(params: ParamSet) -> None:
    """Keep prototype columns unit-norm; call after each optimizer step."""
    proto = params["proto"].value
    proto /= np.linalg.norm(proto, axis=0, keepdims=True)


def estimator_update(params: ParamSet, batch: dict, cfg_est: dict) -> dict:
    """One Adam step on the combined prediction + contrastive objective.

    batch: windows (B,H,25), memories (B,hidden), next_obs (B,25),
    v (B,2), c (B,7), u (B,2).
    """
    lam = float(cfg_est["lambda_swav"])
    out = encode_online(params, batch["windows"], batch["memories"], cfg_est)
    l_pred = prediction_loss(out, batch["v"], batch["c"], batch["u"],
                             disabled=tuple(cfg_est.get("disabled_heads", ())))
    report = {"pred": float(l_pred.value)}
    if lam != 0.0:
        e_ref = encode_reference(params, batch["next_obs"])
        l_swav = swav_loss(params, out.e, e_ref, cfg_est)
        report["swav"] = float(l_swav.value)
        loss = l_pred + l_swav * lam
    else:
        report["swav"] = 0.0
        loss = l_pred
    report["total"] = float(loss.value)
    params.zero_grad()
    loss.backward()
    params.adam_step(float(cfg_est["lr"]), names=estimator_param_names(params))
    renormalize_prototypes(params)
    return report
