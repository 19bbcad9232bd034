"""Small classical network kernel: linear layers, ReLU, softmax cross-entropy,
explicit backward passes, Adam/SGD, and a step learning-rate schedule.

Everything works on numpy arrays.  Layer functions accept either one sample
(1-d) or a batch of row vectors (2-d).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    pass


@dataclass
class LinearLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    grad_weights: np.ndarray = field(default=None, repr=False)
    grad_bias: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.weights = np.array(self.weights, dtype=float, ndmin=2)
        self.bias = np.array(self.bias, dtype=float).reshape(-1)
        if self.bias.shape[0] != self.weights.shape[0]:
            raise ShapeError(f"bias length {self.bias.shape[0]} != output dim {self.weights.shape[0]}")
        self.zero_grad()

    @classmethod
    def glorot(cls, n_in: int, n_out: int, rng: np.random.Generator) -> "LinearLayer":
        limit = np.sqrt(6.0 / (n_in + n_out))
        return cls(rng.uniform(-limit, limit, size=(n_out, n_in)), np.zeros(n_out))

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def zero_grad(self) -> None:
        self.grad_weights = np.zeros_like(self.weights)
        self.grad_bias = np.zeros_like(self.bias)


def linear_forward(layer: LinearLayer, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != layer.in_dim:
        raise ShapeError(f"linear layer expects input dim {layer.in_dim}, got {x.shape[-1]}")
    return x @ layer.weights.T + layer.bias


def linear_backward(layer: LinearLayer, x, upstream) -> np.ndarray:
    """Accumulate parameter gradients and return the input gradient.

    For a batch, gradients are summed over rows; callers wanting a mean scale
    ``upstream`` beforehand.
    """
    x = np.asarray(x, dtype=float)
    up = np.asarray(upstream, dtype=float)
    if x.shape[-1] != layer.in_dim or up.shape[-1] != layer.out_dim or x.shape[:-1] != up.shape[:-1]:
        raise ShapeError(f"backward shapes x={x.shape}, upstream={up.shape} do not fit layer {layer.weights.shape}")
    x2, up2 = np.atleast_2d(x), np.atleast_2d(up)
    layer.grad_weights += up2.T @ x2
    layer.grad_bias += up2.sum(axis=0)
    return up @ layer.weights


def relu(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=float), 0.0)


def relu_backward(x, upstream) -> np.ndarray:
    # subgradient at 0 is 0
    return np.where(np.asarray(x) > 0, upstream, 0.0)


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, label):
    """Loss ``-log softmax(logits)[label]`` and its gradient w.r.t. the logits.

    Batched logits ``(m, C)`` with labels ``(m,)`` give per-sample losses and
    gradients.
    """
    z = np.asarray(logits, dtype=float)
    shifted = z - z.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_p = shifted - log_norm
    onehot = np.zeros_like(z)
    label = np.asarray(label)
    if z.ndim == 1:
        onehot[int(label)] = 1.0
        loss = -log_p[int(label)]
    else:
        onehot[np.arange(z.shape[0]), label] = 1.0
        loss = -log_p[np.arange(z.shape[0]), label]
    return loss, np.exp(log_p) - onehot


# ----------------------------------------------------------------------------
# optimizers

@dataclass
class OptimizerState:
    kind: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    timestep: int = 0
    m: list = field(default_factory=list, repr=False)
    v: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.kind = self.kind.lower()
        if self.kind not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")


def optimizer_step(state: OptimizerState, params: list, grads: list) -> list:
    """Update ``params`` in place and return them."""
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameter arrays but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if np.shape(p) != np.shape(g):
            raise ShapeError(f"parameter shape {np.shape(p)} != gradient shape {np.shape(g)}")
    state.timestep += 1
    lr = state.learning_rate
    if state.kind == "sgd":
        for p, g in zip(params, grads):
            p -= lr * g
        return params
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    t = state.timestep
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        m_hat = m / (1 - state.beta1**t)
        v_hat = v / (1 - state.beta2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


@dataclass(frozen=True)
class LrScheduler:
    step_size: int
    gamma: float = 0.1

    def __post_init__(self):
        if self.step_size < 1:
            raise ValueError("step_size must be a positive integer")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")


def scheduler_lr(s: LrScheduler, lr0: float, epoch: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return lr0 * s.gamma ** (epoch // s.step_size)
