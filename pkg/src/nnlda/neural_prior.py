"""Two-layer network mapping side features to a Dirichlet parameter.

    alpha = softplus(W2 @ relu(W1 @ s + b1) + b2) + alpha_floor

Gradients are computed by hand; the optimizer is Adam with decoupled
weight decay. All functions accept a single side vector of shape (q,) or a
batch of shape (B, q); for a batch, ``backward`` returns the gradient of
the sum over rows.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .numerics import sigmoid, softplus, softplus_inverse

PARAM_NAMES = ("W1", "b1", "W2", "b2")


class StaleCacheError(RuntimeError):
    """A backward pass was given a cache produced by a different network."""


@dataclass(eq=False)
class PriorNet:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    alpha_floor: float = 1e-3

    def __post_init__(self):
        h, q = self.W1.shape
        K = self.W2.shape[0]
        if h < 1 or self.b1.shape != (h,) or self.W2.shape != (K, h) or self.b2.shape != (K,):
            raise ValueError(
                f"inconsistent shapes W1{self.W1.shape} b1{self.b1.shape} "
                f"W2{self.W2.shape} b2{self.b2.shape}"
            )
        if not self.alpha_floor > 0:
            raise ValueError("alpha_floor must be positive")

    @property
    def q(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def K(self) -> int:
        return self.W2.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "PriorNet":
        return replace(self, **{k: v.copy() for k, v in self.params().items()})

    @classmethod
    def constant(cls, q: int, alpha, hidden_dim: int = 20, alpha_floor: float = 1e-3,
                 seed: int = 0) -> "PriorNet":
        """Network whose output is ``alpha`` for every input (W2 = 0).

        W1 keeps a Kaiming draw so the hidden layer is live once W2 moves.
        """
        alpha = np.asarray(alpha, dtype=np.float64)
        if np.any(alpha <= alpha_floor):
            raise ValueError("constant alpha must exceed alpha_floor")
        net = init_kaiming(q, hidden_dim, alpha.size, seed, alpha_floor=alpha_floor)
        net.W2[:] = 0.0
        net.b2[:] = softplus_inverse(alpha - alpha_floor)
        return net


@dataclass(eq=False)
class ForwardCache:
    net: PriorNet
    s: np.ndarray
    pre_hidden: np.ndarray
    hidden: np.ndarray
    pre_out: np.ndarray


@dataclass(eq=False)
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    learning_rate: float = 1e-3
    weight_decay: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_net(cls, net: PriorNet, **hyper) -> "AdamState":
        zeros = {k: np.zeros_like(v) for k, v in net.params().items()}
        return cls(m=zeros, v={k: z.copy() for k, z in zeros.items()}, **hyper)

    def copy(self) -> "AdamState":
        return replace(self, m={k: v.copy() for k, v in self.m.items()},
                       v={k: v.copy() for k, v in self.v.items()})

    def hyper(self) -> dict:
        return dict(learning_rate=self.learning_rate, weight_decay=self.weight_decay,
                    beta1=self.beta1, beta2=self.beta2, epsilon=self.epsilon)


def init_kaiming(q: int, hidden_dim: int, K: int, seed: int,
                 alpha_floor: float = 1e-3) -> PriorNet:
    """Weights ~ N(0, 2 / fan_in), biases zero."""
    if min(q, hidden_dim, K) < 1:
        raise ValueError("all dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    W1 = rng.normal(0.0, np.sqrt(2.0 / q), size=(hidden_dim, q))
    W2 = rng.normal(0.0, np.sqrt(2.0 / hidden_dim), size=(K, hidden_dim))
    return PriorNet(W1, np.zeros(hidden_dim), W2, np.zeros(K), alpha_floor)


def forward(net: PriorNet, s) -> tuple[np.ndarray, ForwardCache]:
    s = np.asarray(s, dtype=np.float64)
    if s.shape[-1] != net.q or s.ndim not in (1, 2):
        raise ValueError(f"side input shape {s.shape} does not match q={net.q}")
    pre_hidden = s @ net.W1.T + net.b1
    hidden = np.maximum(pre_hidden, 0.0)
    pre_out = hidden @ net.W2.T + net.b2
    alpha = softplus(pre_out) + net.alpha_floor
    return alpha, ForwardCache(net, s, pre_hidden, hidden, pre_out)


def backward(net: PriorNet, cache: ForwardCache, grad_alpha) -> dict[str, np.ndarray]:
    """Gradients of sum(grad_alpha * alpha) with respect to every parameter."""
    if cache.net is not net:
        raise StaleCacheError("cache was produced by a different network")
    grad_alpha = np.asarray(grad_alpha, dtype=np.float64)
    if grad_alpha.shape != cache.pre_out.shape:
        raise StaleCacheError(
            f"grad_alpha shape {grad_alpha.shape} does not match cached output {cache.pre_out.shape}"
        )
    batched = grad_alpha.ndim == 2
    g_pre_out = grad_alpha * sigmoid(cache.pre_out)
    g_hidden = g_pre_out @ net.W2
    g_pre_hidden = g_hidden * (cache.pre_hidden > 0)
    if batched:
        return {
            "W1": g_pre_hidden.T @ cache.s,
            "b1": g_pre_hidden.sum(axis=0),
            "W2": g_pre_out.T @ cache.hidden,
            "b2": g_pre_out.sum(axis=0),
        }
    return {
        "W1": np.outer(g_pre_hidden, cache.s),
        "b1": g_pre_hidden,
        "W2": np.outer(g_pre_out, cache.hidden),
        "b2": g_pre_out,
    }


def adam_step(net: PriorNet, grads: dict[str, np.ndarray],
              state: AdamState) -> tuple[PriorNet, AdamState]:
    """One minimization step; returns new objects, inputs are left untouched.

    Weight decay is decoupled: each parameter is first shrunk by
    ``lr * weight_decay``, then moved by the bias-corrected Adam update.
    """
    for name in PARAM_NAMES:
        g = grads[name]
        if g.shape != getattr(net, name).shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter block {name}")

    lr, b1, b2 = state.learning_rate, state.beta1, state.beta2
    t = state.step + 1
    new_m, new_v, new_params = {}, {}, {}
    for name in PARAM_NAMES:
        g = grads[name]
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p = getattr(net, name) * (1.0 - lr * state.weight_decay)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
        new_m[name], new_v[name] = m, v
    return (replace(net, **new_params),
            replace(state, m=new_m, v=new_v, step=t))


def params_to_json(net: PriorNet) -> dict:
    out = {name: {"shape": list(p.shape), "data": p.tolist()} for name, p in net.params().items()}
    out["alpha_floor"] = net.alpha_floor
    return out


def params_from_json(obj: dict) -> PriorNet:
    arrays = {}
    for name in PARAM_NAMES:
        entry = obj[name]
        arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        arrays[name] = arr
    return PriorNet(alpha_floor=float(obj["alpha_floor"]), **arrays)


def adam_to_json(state: AdamState) -> dict:
    return {
        "step": state.step,
        **state.hyper(),
        "m": {k: v.tolist() for k, v in state.m.items()},
        "v": {k: v.tolist() for k, v in state.v.items()},
    }


def adam_from_json(obj: dict, net: PriorNet) -> AdamState:
    shapes = {k: p.shape for k, p in net.params().items()}
    m = {k: np.asarray(obj["m"][k], dtype=np.float64).reshape(shapes[k]) for k in PARAM_NAMES}
    v = {k: np.asarray(obj["v"][k], dtype=np.float64).reshape(shapes[k]) for k in PARAM_NAMES}
    hyper = {k: obj[k] for k in ("learning_rate", "weight_decay", "beta1", "beta2", "epsilon")}
    return AdamState(m=m, v=v, step=int(obj["step"]), **hyper)
