"""Classical and hybrid binary classifiers over precomputed feature vectors.

Classical head::

    features -> linear1 -> ReLU -> linear2 -> softmax

Hybrid head::

    features -> linear1 -> angle scaling -> QNN (per-qubit <P>) -> linear2 -> softmax

Features are treated as frozen leaves: gradients flow back to them (for the
attacks) but are only returned, never applied.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from hcqlab import nn, qnn
from hcqlab.data import Dataset, DatasetError
from hcqlab.metrics import ConfusionMatrix

CHECKPOINT_SCHEMA = "hcqlab.checkpoint/v1"

SCALINGS = ("tanh_half_pi", "identity")


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 25
    batch_size: int = 8
    learning_rate: float = 0.00291
    optimizer: str = "adam"
    step_size: int = 9
    gamma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("epochs", "batch_size", "step_size"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"train config {name} must be a positive integer, got {v!r}")
            setattr(self, name, int(v))
        if self.learning_rate <= 0:
            raise ValueError("train config learning_rate must be positive")
        if not 0 < self.gamma <= 1:
            raise ValueError("train config gamma must lie in (0, 1]")
        if self.optimizer.lower() not in ("adam", "sgd"):
            raise ValueError(f"train config optimizer must be adam or sgd, got {self.optimizer!r}")
        self.optimizer = self.optimizer.lower()


# Tuned settings per model variant: width is hidden units (classical) or qubits (hybrid).
VARIANTS = {
    "classical-vgg": dict(kind="classical", width=2, batch_size=32, learning_rate=0.000697, step_size=8),
    "classical-alex": dict(kind="classical", width=6, batch_size=64, learning_rate=0.000269, step_size=9),
    "hybrid-vgg": dict(kind="hybrid", width=4, circuit="vgg", batch_size=2, learning_rate=0.000194, step_size=8),
    "hybrid-alex": dict(kind="hybrid", width=3, circuit="alexnet", batch_size=8, learning_rate=0.00291, step_size=9),
}

CIRCUITS = {"vgg": qnn.vgg_circuit, "alexnet": qnn.alexnet_circuit}


# "desk" settings for small synthetic benchmarks: the tuned step sizes with
# learning rate / batch size moved within the tuned ranges (lr 1e-4..1e-2,
# batch 2..64) so that 25 epochs over ~180 samples give enough optimizer steps.
DESK_OVERRIDES = {
    "classical-vgg": dict(batch_size=8, learning_rate=0.01),
    "classical-alex": dict(batch_size=8, learning_rate=0.01),
    "hybrid-vgg": dict(batch_size=8, learning_rate=0.01),
    "hybrid-alex": {},
}

PROFILES = ("tuned", "desk")


def default_train_config(variant: str, seed: int = 0, profile: str = "tuned", **overrides) -> TrainConfig:
    if variant not in VARIANTS:
        raise ValueError(f"unknown model variant {variant!r}; choose from {sorted(VARIANTS)}")
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}; choose from {PROFILES}")
    v = VARIANTS[variant]
    kw = dict(batch_size=v["batch_size"], learning_rate=v["learning_rate"], step_size=v["step_size"], seed=seed)
    if profile == "desk":
        kw.update(DESK_OVERRIDES[variant])
    kw.update(overrides)
    return TrainConfig(**kw)


# ----------------------------------------------------------------------------
# models

def _input_only_backward(layer, x, upstream):
    # leaves the layer's gradient buffers untouched so read-only use stays read-only
    return np.asarray(upstream) @ layer.weights


def _layer_grads(model, scale: float) -> dict:
    return {"linear1.weights": model.linear1.grad_weights * scale, "linear1.bias": model.linear1.grad_bias * scale,
            "linear2.weights": model.linear2.grad_weights * scale, "linear2.bias": model.linear2.grad_bias * scale}


class ClassicalModel:
    kind = "classical"

    def __init__(self, linear1: nn.LinearLayer, linear2: nn.LinearLayer, variant: str = "classical"):
        if linear1.out_dim != linear2.in_dim:
            raise ValueError(f"hidden width mismatch: {linear1.out_dim} vs {linear2.in_dim}")
        if linear2.out_dim != 2:
            raise ValueError("output layer must have 2 units")
        self.linear1, self.linear2, self.variant = linear1, linear2, variant

    @classmethod
    def create(cls, feature_dim: int, hidden: int, seed: int, variant: str = "classical"):
        rng = np.random.default_rng(seed)
        return cls(nn.LinearLayer.glorot(feature_dim, hidden, rng),
                   nn.LinearLayer.glorot(hidden, 2, rng), variant)

    @property
    def feature_dim(self) -> int:
        return self.linear1.in_dim

    def named_parameters(self) -> list:
        return [("linear1.weights", self.linear1.weights), ("linear1.bias", self.linear1.bias),
                ("linear2.weights", self.linear2.weights), ("linear2.bias", self.linear2.bias)]

    def logits(self, X):
        X = self._check(X)
        z = nn.linear_forward(self.linear1, X)
        h = nn.relu(z)
        return nn.linear_forward(self.linear2, h), (X, z, h)

    def backward(self, cache, grad_logits, scale: float, need_params: bool = True):
        X, z, h = cache
        if need_params:
            self.linear2.zero_grad()
            self.linear1.zero_grad()
        back = nn.linear_backward if need_params else _input_only_backward
        grad_h = back(self.linear2, h, grad_logits)
        grad_z = nn.relu_backward(z, grad_h)
        grad_x = back(self.linear1, X, grad_z)
        grads = {}
        if need_params:
            grads = _layer_grads(self, scale)
        return grads, grad_x

    def _check(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.feature_dim:
            raise ValueError(f"model expects {self.feature_dim} features, got {X.shape[1]}")
        return X


class HybridModel:
    kind = "hybrid"

    def __init__(self, linear1: nn.LinearLayer, layer: qnn.QnnLayer, linear2: nn.LinearLayer,
                 input_scaling: str = "tanh_half_pi", variant: str = "hybrid"):
        n = layer.spec.n_qubits
        if linear1.out_dim != n or linear2.in_dim != n:
            raise ValueError(
                f"layer widths {linear1.out_dim}/{linear2.in_dim} do not match {n} qubits"
            )
        if linear2.out_dim != 2:
            raise ValueError("output layer must have 2 units")
        if input_scaling not in SCALINGS:
            raise ValueError(f"unknown input scaling {input_scaling!r}")
        self.linear1, self.qnn, self.linear2 = linear1, layer, linear2
        self.input_scaling, self.variant = input_scaling, variant

    @classmethod
    def create(cls, feature_dim: int, spec: qnn.CircuitSpec, seed: int,
               input_scaling: str = "tanh_half_pi", variant: str = "hybrid"):
        rng = np.random.default_rng(seed)
        n = spec.n_qubits
        linear1 = nn.LinearLayer.glorot(feature_dim, n, rng)
        layer = qnn.QnnLayer(spec, qnn.init_theta(spec, rng))
        linear2 = nn.LinearLayer.glorot(n, 2, rng)
        return cls(linear1, layer, linear2, input_scaling, variant)

    @property
    def feature_dim(self) -> int:
        return self.linear1.in_dim

    def named_parameters(self) -> list:
        return [("linear1.weights", self.linear1.weights), ("linear1.bias", self.linear1.bias),
                ("theta", self.qnn.theta),
                ("linear2.weights", self.linear2.weights), ("linear2.bias", self.linear2.bias)]

    def angles(self, z):
        if self.input_scaling == "identity":
            return z, np.ones_like(z)
        t = np.tanh(z)
        return (np.pi / 2) * t, (np.pi / 2) * (1 - t * t)

    def logits(self, X):
        X = self._check(X)
        z = nn.linear_forward(self.linear1, X)
        a, da = self.angles(z)
        e = qnn.qnn_forward(self.qnn, a)
        return nn.linear_forward(self.linear2, e), (X, a, da, e)

    def backward(self, cache, grad_logits, scale: float, need_params: bool = True):
        X, a, da, e = cache
        if need_params:
            self.linear2.zero_grad()
            self.linear1.zero_grad()
        back = nn.linear_backward if need_params else _input_only_backward
        grad_e = back(self.linear2, e, grad_logits)
        grad_theta, grad_a = qnn.param_shift_grads(self.qnn, a, grad_e, wrt_theta=need_params)
        grad_z = grad_a * da
        grad_x = back(self.linear1, X, grad_z)
        grads = {}
        if need_params:
            grads = _layer_grads(self, scale)
            grads["theta"] = grad_theta * scale
        return grads, grad_x

    def _check(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.feature_dim:
            raise ValueError(f"model expects {self.feature_dim} features, got {X.shape[1]}")
        return X


def build_model(variant: str, feature_dim: int, seed: int = 0, spec: Optional[qnn.CircuitSpec] = None,
                input_scaling: str = "tanh_half_pi"):
    """Construct one of the named variants (see ``VARIANTS``)."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown model variant {variant!r}; choose from {sorted(VARIANTS)}")
    v = VARIANTS[variant]
    if v["kind"] == "classical":
        return ClassicalModel.create(feature_dim, v["width"], seed, variant)
    return HybridModel.create(feature_dim, spec or CIRCUITS[v["circuit"]](), seed, input_scaling, variant)


# ----------------------------------------------------------------------------
# forward / gradients

def forward(model, features):
    """Class probabilities for one feature vector (or a batch) plus the forward cache."""
    single = np.asarray(features).ndim == 1
    logits, cache = model.logits(features)
    probs = nn.softmax(logits)
    return (probs[0] if single else probs), cache


def batch_loss_grads(model, X, y, need_params: bool = True):
    """Mean loss, mean parameter gradients, and per-sample input gradients.

    Each row of the returned input gradient is the derivative of that
    sample's own loss with respect to its features.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y).astype(int).reshape(-1)
    if np.any((y != 0) & (y != 1)):
        raise ValueError("labels must be 0 or 1")
    logits, cache = model.logits(X)
    losses, grad_logits = nn.softmax_cross_entropy(logits, y)
    grads, grad_x = model.backward(cache, grad_logits, 1.0 / X.shape[0], need_params)
    return float(losses.mean()), grads, grad_x


def loss_grads(model, features, label):
    """Loss, parameter gradients and input gradient for a single sample."""
    loss, grads, grad_x = batch_loss_grads(model, np.asarray(features)[None, :], [label])
    return loss, grads, grad_x[0]


def input_gradients(model, X, y) -> np.ndarray:
    """Per-sample d(loss)/d(features) without computing parameter gradients."""
    return batch_loss_grads(model, X, y, need_params=False)[2]


def per_sample_losses(model, X, y) -> np.ndarray:
    logits, _ = model.logits(X)
    return nn.softmax_cross_entropy(logits, np.asarray(y).astype(int))[0]


def predict(model, X) -> np.ndarray:
    probs, _ = forward(model, np.atleast_2d(X))
    # ties go to label 0
    return (probs[:, 1] > probs[:, 0]).astype(int)


def predict_shots(model: HybridModel, X, shots: int = 1000, seed: int = 0) -> np.ndarray:
    """Inference with the most frequent measured bitstring as the quantum read-out.

    Each qubit is rotated into the measurement basis and sampled ``shots``
    times; bit ``b`` of the winning outcome is fed to linear2 as ``1 - 2b``.
    """
    X = model._check(X)
    z = nn.linear_forward(model.linear1, X)
    a, _ = model.angles(z)
    n = model.qnn.spec.n_qubits
    feats = np.empty((X.shape[0], n))
    for i, row in enumerate(a):
        idx = qnn.qnn_sample_readout(model.qnn, row, shots, seed + i, rotate_to_basis=True)
        feats[i] = [1 - 2 * ((idx >> q) & 1) for q in range(n)]
    probs = nn.softmax(nn.linear_forward(model.linear2, feats))
    return (probs[:, 1] > probs[:, 0]).astype(int)


def evaluate(model, dataset: Dataset) -> ConfusionMatrix:
    return ConfusionMatrix.from_predictions(predict(model, dataset.features), dataset.labels)


# ----------------------------------------------------------------------------
# training

HISTORY_FIELDS = ("epoch", "learning_rate", "train_loss", "train_acc", "test_loss", "test_acc")


def train(model, train_set: Dataset, cfg: TrainConfig, test_set: Optional[Dataset] = None):
    """Mini-batch training; returns ``(model, history)`` with one dict per epoch.

    Shuffling is seeded from ``cfg.seed`` so the whole run is deterministic.
    """
    counts = train_set.class_counts()
    if min(counts) == 0:
        raise DatasetError("training set must contain both classes")
    rng = np.random.default_rng([cfg.seed, 1])
    opt = nn.OptimizerState(cfg.optimizer, cfg.learning_rate)
    sched = nn.LrScheduler(cfg.step_size, cfg.gamma)
    names = [n for n, _ in model.named_parameters()]
    params = [p for _, p in model.named_parameters()]
    X, y = train_set.features, train_set.labels
    history = []
    for epoch in range(cfg.epochs):
        opt.learning_rate = nn.scheduler_lr(sched, cfg.learning_rate, epoch)
        order = rng.permutation(len(train_set))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            _, grads, _ = batch_loss_grads(model, X[idx], y[idx])
            nn.optimizer_step(opt, params, [grads[n] for n in names])
        row = {"epoch": epoch + 1, "learning_rate": opt.learning_rate}
        row["train_loss"], row["train_acc"] = _loss_acc(model, train_set)
        if test_set is not None:
            row["test_loss"], row["test_acc"] = _loss_acc(model, test_set)
        else:
            row["test_loss"] = row["test_acc"] = math.nan
        history.append(row)
    model.trained_epochs = getattr(model, "trained_epochs", 0) + cfg.epochs
    return model, history


def _loss_acc(model, dataset: Dataset) -> tuple:
    losses = per_sample_losses(model, dataset.features, dataset.labels)
    acc = float(np.mean(predict(model, dataset.features) == dataset.labels))
    return float(losses.mean()), acc


def accuracy(model, dataset: Dataset) -> float:
    return float(np.mean(predict(model, dataset.features) == dataset.labels))


# ----------------------------------------------------------------------------
# checkpoints

def _layer_dict(layer: nn.LinearLayer) -> dict:
    return {"weights": layer.weights.tolist(), "bias": layer.bias.tolist()}


def checkpoint_dict(model, cfg: Optional[TrainConfig] = None, seed: Optional[int] = None) -> dict:
    arch = {"kind": model.kind, "variant": model.variant, "feature_dim": model.feature_dim}
    params = {"linear1": _layer_dict(model.linear1), "linear2": _layer_dict(model.linear2)}
    if model.kind == "hybrid":
        arch["input_scaling"] = model.input_scaling
        arch["circuit"] = qnn.spec_to_dict(model.qnn.spec)
        params["theta"] = model.qnn.theta.tolist()
    else:
        arch["hidden"] = model.linear1.out_dim
    return {
        "schema": CHECKPOINT_SCHEMA,
        "architecture": arch,
        "params": params,
        "train_config": asdict(cfg) if cfg is not None else None,
        "epoch": int(getattr(model, "trained_epochs", 0)),
        "seed": seed if seed is not None else (cfg.seed if cfg is not None else None),
    }


def save_checkpoint(model, path, cfg: Optional[TrainConfig] = None, seed: Optional[int] = None) -> None:
    # json writes floats with repr(), which round-trips every float64 exactly
    text = json.dumps(checkpoint_dict(model, cfg, seed), indent=1)
    Path(path).write_text(text + "\n")


def _get(d, dotted: str):
    cur = d
    for key in dotted.split("."):
        if not isinstance(cur, dict) or key not in cur:
            raise CheckpointError(f"checkpoint: missing field {dotted!r}")
        cur = cur[key]
    return cur


def _array(d, dotted: str, ndim: int) -> np.ndarray:
    try:
        arr = np.array(_get(d, dotted), dtype=float)
    except (TypeError, ValueError):
        raise CheckpointError(f"checkpoint: field {dotted!r} is not a numeric array") from None
    if arr.ndim != ndim or not np.all(np.isfinite(arr)):
        raise CheckpointError(f"checkpoint: field {dotted!r} must be a finite {ndim}-d array")
    return arr


def model_from_dict(d: dict):
    if _get(d, "schema") != CHECKPOINT_SCHEMA:
        raise CheckpointError(f"checkpoint: unsupported schema {d.get('schema')!r}")
    kind = _get(d, "architecture.kind")
    variant = d["architecture"].get("variant", kind)
    try:
        lin1 = nn.LinearLayer(_array(d, "params.linear1.weights", 2), _array(d, "params.linear1.bias", 1))
        lin2 = nn.LinearLayer(_array(d, "params.linear2.weights", 2), _array(d, "params.linear2.bias", 1))
    except nn.ShapeError as exc:
        raise CheckpointError(f"checkpoint: {exc}") from None
    fdim = _get(d, "architecture.feature_dim")
    if lin1.in_dim != fdim:
        raise CheckpointError(f"checkpoint: linear1 input dim {lin1.in_dim} != feature_dim {fdim}")
    try:
        if kind == "classical":
            model = ClassicalModel(lin1, lin2, variant)
        elif kind == "hybrid":
            try:
                spec = qnn.spec_from_dict(_get(d, "architecture.circuit"))
            except (qnn.CircuitError, KeyError, TypeError) as exc:
                raise CheckpointError(f"checkpoint: architecture.circuit: {exc}") from None
            if lin1.out_dim != spec.n_qubits:
                raise CheckpointError(
                    f"checkpoint: linear1 output dim {lin1.out_dim} != circuit qubit count {spec.n_qubits}"
                )
            layer = qnn.QnnLayer(spec, _array(d, "params.theta", 1))
            scaling = d["architecture"].get("input_scaling", "tanh_half_pi")
            model = HybridModel(lin1, layer, lin2, scaling, variant)
        else:
            raise CheckpointError(f"checkpoint: unknown architecture kind {kind!r}")
    except (ValueError, qnn.CircuitError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"checkpoint: {exc}") from None
    model.trained_epochs = int(d.get("epoch") or 0)
    return model


def load_checkpoint(path):
    """Load a model; returns ``(model, train_config_or_None)``."""
    text = Path(path).read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint {path}: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    model = model_from_dict(d)
    cfg = d.get("train_config")
    if cfg is not None:
        known = {f.name for f in fields(TrainConfig)}
        cfg = TrainConfig(**{k: v for k, v in cfg.items() if k in known})
    return model, cfg
