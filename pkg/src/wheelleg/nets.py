"""Network building blocks on top of the autodiff tape.

Parameters live in a flat named ParamSet so the whole model (actor,
critics, encoders, prototypes, selector) serializes to one checkpoint
document and gradient checks can iterate every parameter by name.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, concat

LOG_STD_MIN = -4.0
LOG_STD_MAX = 1.0


class Param:
    __slots__ = ("value", "grad", "m", "v")

    def __init__(self, value: np.ndarray):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)


class ParamSet:
    """Ordered name -> Param map with Adam state."""

    def __init__(self):
        self._params: dict[str, Param] = {}
        self.step_count = 0

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self._params:
            raise KeyError(f"duplicate parameter name: {name}")
        self._params[name] = Param(value)

    def __contains__(self, name):
        return name in self._params

    def __getitem__(self, name) -> Param:
        return self._params[name]

    def names(self):
        return list(self._params.keys())

    def items(self):
        return self._params.items()

    def leaf(self, name: str) -> Tensor:
        """Tensor view of a parameter whose backward writes param.grad."""
        p = self._params[name]
        t = Tensor(p.value, requires_grad=True)

        def bwd(g):
            p.grad += g

        t._backward = bwd
        return t

    def zero_grad(self):
        for p in self._params.values():
            p.grad[...] = 0.0

    def clip_grad_norm(self, max_norm, names=None) -> float:
        """Scale the named gradients so their global L2 norm is at most
        ``max_norm``; returns the pre-clip norm."""
        selected = names if names is not None else list(self._params)
        total = 0.0
        for name in selected:
            g = self._params[name].grad
            total += float(np.sum(g * g))
        norm = float(np.sqrt(total))
        if norm > max_norm:
            scale = max_norm / (norm + 1e-12)
            for name in selected:
                self._params[name].grad *= scale
        return norm

    def adam_step(self, lr, beta1=0.9, beta2=0.999, eps=1e-8, names=None):
        """Bias-corrected Adam on the named subset; zeroes applied grads."""
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - beta1**t
        c2 = 1.0 - beta2**t
        for name in names if names is not None else self._params:
            p = self._params[name]
            p.m[...] = beta1 * p.m + (1.0 - beta1) * p.grad
            p.v[...] = beta2 * p.v + (1.0 - beta2) * p.grad**2
            p.value[...] -= lr * (p.m / c1) / (np.sqrt(p.v / c2) + eps)
            p.grad[...] = 0.0

    def state_dict(self):
        return {
            "step_count": self.step_count,
            "params": {
                name: {
                    "shape": list(p.value.shape),
                    "value": p.value.ravel().tolist(),
                    "m": p.m.ravel().tolist(),
                    "v": p.v.ravel().tolist(),
                }
                for name, p in self._params.items()
            },
        }

    def load_state_dict(self, state):
        self.step_count = state["step_count"]
        self._params.clear()
        for name, rec in state["params"].items():
            shape = tuple(rec["shape"])
            p = Param(np.asarray(rec["value"], dtype=np.float64).reshape(shape))
            p.m = np.asarray(rec["m"], dtype=np.float64).reshape(shape)
            p.v = np.asarray(rec["v"], dtype=np.float64).reshape(shape)
            self._params[name] = p


# ---- initialization ------------------------------------------------------


def orthogonal_init(shape, rng: np.random.Generator, gain=1.0) -> np.ndarray:
    a = rng.normal(size=shape)
    q, r = np.linalg.qr(a if shape[0] >= shape[1] else a.T)
    q = q * np.sign(np.diag(r))
    if shape[0] < shape[1]:
        q = q.T
    return gain * q[: shape[0], : shape[1]]


def fanin_uniform_init(shape, rng: np.random.Generator, scale=1.0) -> np.ndarray:
    fan_in = shape[0]
    limit = scale * np.sqrt(3.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


# ---- layers --------------------------------------------------------------


def add_dense(params: ParamSet, name, in_dim, out_dim, rng, scale=1.0):
    params.add(f"{name}.W", fanin_uniform_init((in_dim, out_dim), rng, scale))
    params.add(f"{name}.b", np.zeros(out_dim))


def dense(params: ParamSet, name, x: Tensor) -> Tensor:
    W = params.leaf(f"{name}.W")
    if x.value.shape[-1] != W.value.shape[0]:
        raise ValueError(
            f"dense {name}: input width {x.value.shape[-1]} != {W.value.shape[0]}"
        )
    return x @ W + params.leaf(f"{name}.b")


def add_mlp(params, name, in_dim, hidden, out_dim, rng, out_scale=1.0):
    dims = [in_dim] + list(hidden)
    for i in range(len(dims) - 1):
        add_dense(params, f"{name}.h{i}", dims[i], dims[i + 1], rng)
    add_dense(params, f"{name}.out", dims[-1], out_dim, rng, scale=out_scale)


def mlp(params, name, x: Tensor, n_hidden: int) -> Tensor:
    for i in range(n_hidden):
        x = dense(params, f"{name}.h{i}", x).elu()
    return dense(params, f"{name}.out", x)


def add_gru(params: ParamSet, name, in_dim, hidden, rng):
    for gate in ("z", "r", "h"):
        params.add(f"{name}.W{gate}", fanin_uniform_init((in_dim, hidden), rng))
        params.add(f"{name}.U{gate}", orthogonal_init((hidden, hidden), rng))
        params.add(f"{name}.b{gate}", np.zeros(hidden))


def gru_step(params: ParamSet, name, x: Tensor, h: Tensor) -> Tensor:
    """z = sig(Wz x + Uz h + bz); r = sig(...); h' = (1-z)h + z*htilde."""
    if x.value.shape[-1] != params[f"{name}.Wz"].value.shape[0]:
        raise ValueError(f"gru {name}: input width mismatch")
    if h.value.shape[-1] != params[f"{name}.Uz"].value.shape[0]:
        raise ValueError(f"gru {name}: hidden width mismatch")
    z = (
        x @ params.leaf(f"{name}.Wz")
        + h @ params.leaf(f"{name}.Uz")
        + params.leaf(f"{name}.bz")
    ).sigmoid()
    r = (
        x @ params.leaf(f"{name}.Wr")
        + h @ params.leaf(f"{name}.Ur")
        + params.leaf(f"{name}.br")
    ).sigmoid()
    htilde = (
        x @ params.leaf(f"{name}.Wh")
        + (r * h) @ params.leaf(f"{name}.Uh")
        + params.leaf(f"{name}.bh")
    ).tanh()
    return (1.0 - z) * h + z * htilde


# ---- diagonal Gaussian policy head ----------------------------------------

LOG_2PI = float(np.log(2.0 * np.pi))


def add_gaussian_head(params: ParamSet, name, feat_dim, action_dim, rng):
    add_dense(params, f"{name}.mean", feat_dim, action_dim, rng, scale=0.01)
    params.add(f"{name}.log_std", np.full(action_dim, -0.5))


def gaussian_head(params: ParamSet, name, features: Tensor):
    mean = dense(params, f"{name}.mean", features)
    log_std = params.leaf(f"{name}.log_std").clip(LOG_STD_MIN, LOG_STD_MAX)
    return mean, log_std


def gaussian_log_prob(mean: Tensor, log_std: Tensor, action: np.ndarray) -> Tensor:
    a = Tensor(action)
    d = mean.value.shape[-1]
    inv_var = (log_std * -2.0).exp()
    quad = ((a - mean).square() * inv_var).sum(axis=-1)
    return -0.5 * quad - log_std.sum(axis=-1) - 0.5 * d * LOG_2PI


def gaussian_entropy(log_std: Tensor) -> Tensor:
    d = log_std.value.shape[-1]
    return log_std.sum(axis=-1) + 0.5 * d * (LOG_2PI + 1.0)


# ---- gradient checking -----------------------------------------------------


def grad_check(params: ParamSet, loss_fn, names=None, eps=1e-5, max_entries=6,
               rng=None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn()`` must rebuild the graph from ``params`` on every call.
    Checks up to ``max_entries`` random entries per parameter.
    """
    rng = rng or np.random.default_rng(0)
    params.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = {n: params[n].grad.copy() for n in (names or params.names())}
    params.zero_grad()
    worst = 0.0
    for name in names or params.names():
        p = params[name]
        flat = p.value.ravel()
        idxs = rng.choice(flat.size, size=min(max_entries, flat.size), replace=False)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            lp = loss_fn().item()
            flat[i] = orig - eps
            lm = loss_fn().item()
            flat[i] = orig
            fd = (lp - lm) / (2.0 * eps)
            an = analytic[name].ravel()[i]
            denom = max(abs(fd), abs(an), 1e-8)
            worst = max(worst, abs(fd - an) / denom)
    return worst
