"""White-box evasion attacks on the feature vector.

* gradient attack:  ``x + eps * grad``
* FGSA:             ``x + eps * sign(grad)``
* PGD:              repeated signed steps projected back into the l-inf ball
                    of radius ``eps`` around the clean input

``grad`` is the gradient of the sample's cross-entropy loss with respect to
its features.  ``sign(0)`` is 0.  All functions accept a single vector with a
scalar label, or a batch ``(m, d)`` with ``m`` labels, and never modify their
inputs.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from hcqlab import model as M
from hcqlab.data import Dataset

KINDS = ("ga", "fgsa", "pgd")

CSV_HEADER = ("epsilon", "clean_acc", "adv_acc", "success_rate")


@dataclass(frozen=True)
class AttackSpec:
    kind: str = "fgsa"
    epsilon: float = 0.0
    pgd_steps: int = 10
    pgd_step_size: Optional[float] = None  # None -> epsilon / 4
    random_start: bool = True
    clip_min: Optional[float] = None
    clip_max: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", self.kind.lower())
        if self.kind not in KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}; choose from {KINDS}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.pgd_steps < 1:
            raise ValueError("pgd_steps must be >= 1")
        if self.pgd_step_size is not None and self.pgd_step_size <= 0:
            raise ValueError("pgd_step_size must be > 0")

    @property
    def step_size(self) -> float:
        return self.pgd_step_size if self.pgd_step_size is not None else self.epsilon / 4


def _batch(x, label):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    y = np.atleast_1d(np.asarray(label)).astype(int)
    if y.shape[0] != X.shape[0]:
        raise ValueError(f"{X.shape[0]} inputs but {y.shape[0]} labels")
    return X, y, single


def _clip(x, clip_min, clip_max):
    if clip_min is None and clip_max is None:
        return x
    return np.clip(x, clip_min, clip_max)


def gradient_perturbation(model, x, label, epsilon: float) -> np.ndarray:
    """The raw-gradient step ``eps * grad`` before it is added to ``x``."""
    X, y, single = _batch(x, label)
    delta = epsilon * M.input_gradients(model, X, y)
    return delta[0] if single else delta


def gradient_attack(model, x, label, epsilon: float, clip_min=None, clip_max=None) -> np.ndarray:
    X, y, single = _batch(x, label)
    adv = _clip(X + gradient_perturbation(model, X, y, epsilon), clip_min, clip_max)
    return adv[0] if single else adv


def fgsa(model, x, label, epsilon: float, clip_min=None, clip_max=None) -> np.ndarray:
    X, y, single = _batch(x, label)
    g = M.input_gradients(model, X, y)
    adv = _clip(X + epsilon * np.sign(g), clip_min, clip_max)
    return adv[0] if single else adv


def project_linf(x, center, epsilon: float) -> np.ndarray:
    return np.clip(x, center - epsilon, center + epsilon)


def pgd(model, x, label, spec: AttackSpec) -> np.ndarray:
    X0, y, single = _batch(x, label)
    eps = spec.epsilon
    X = X0.copy()
    if spec.random_start and eps > 0:
        rng = np.random.default_rng(spec.seed)
        X = _clip(X0 + rng.uniform(-eps, eps, size=X0.shape), spec.clip_min, spec.clip_max)
    for _ in range(spec.pgd_steps):
        g = M.input_gradients(model, X, y)
        X = project_linf(X + spec.step_size * np.sign(g), X0, eps)
        X = _clip(X, spec.clip_min, spec.clip_max)
    return X[0] if single else X


def run_attack(model, X, y, spec: AttackSpec) -> np.ndarray:
    if spec.kind == "ga":
        return gradient_attack(model, X, y, spec.epsilon, spec.clip_min, spec.clip_max)
    if spec.kind == "fgsa":
        return fgsa(model, X, y, spec.epsilon, spec.clip_min, spec.clip_max)
    return pgd(model, X, y, spec)


# ----------------------------------------------------------------------------
# sweeps

def default_epsilons(start: float = 0.05, stop: float = 0.5, step: float = 0.05) -> list:
    """Inclusive grid ``start, start+step, ..., stop``, rounded to kill float drift."""
    n = int(round((stop - start) / step)) + 1
    return [round(start + k * step, 10) for k in range(n)]


@dataclass(frozen=True)
class SweepRow:
    epsilon: float
    clean_acc: float
    adv_acc: float
    success_rate: float


@dataclass(frozen=True)
class SweepResult:
    kind: str
    rows: tuple

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow([repr(float(r.epsilon)), repr(r.clean_acc), repr(r.adv_acc), repr(r.success_rate)])
        return buf.getvalue()

    def minimum(self) -> SweepRow:
        """Row with the lowest adversarial accuracy; ties go to the smallest epsilon."""
        return min(self.rows, key=lambda r: (r.adv_acc, r.epsilon))

    @property
    def epsilons(self) -> list:
        return [r.epsilon for r in self.rows]

    @property
    def adv_accuracies(self) -> list:
        return [r.adv_acc for r in self.rows]


def success_rate(clean_pred, adv_pred, labels) -> float:
    """Fraction of correctly classified clean inputs whose adversarial version is misclassified."""
    ok = np.asarray(clean_pred) == np.asarray(labels)
    if not ok.any():
        return 0.0
    flipped = ok & (np.asarray(adv_pred) != np.asarray(labels))
    return float(flipped.sum() / ok.sum())


def epsilon_sweep(model, dataset: Dataset, kind: str, epsilons=None, spec: Optional[AttackSpec] = None) -> SweepResult:
    """Attack every sample of ``dataset`` at each epsilon.

    ``spec`` supplies the PGD controls, clipping bounds and seed; its kind and
    epsilon are overridden per row.  The same seed is reused at every epsilon.
    """
    epsilons = default_epsilons() if epsilons is None else [float(e) for e in epsilons]
    if not epsilons:
        raise ValueError("epsilon grid is empty")
    base = replace(spec or AttackSpec(), kind=kind)
    X, y = dataset.features, dataset.labels
    clean_pred = M.predict(model, X)
    clean_acc = float(np.mean(clean_pred == y))
    rows = []
    for eps in epsilons:
        adv = run_attack(model, X, y, replace(base, epsilon=eps))
        adv_pred = M.predict(model, adv)
        rows.append(SweepRow(eps, clean_acc, float(np.mean(adv_pred == y)), success_rate(clean_pred, adv_pred, y)))
    return SweepResult(base.kind, tuple(rows))
