"""Quantum neural-network layer built on :mod:`hcqlab.qsim`.

A :class:`CircuitSpec` describes four stages: data encoding, a variational
block repeated ``repetitions`` times, a pre-measurement stage, and a Pauli
measurement on every qubit.  Each gate angle is bound to a parameter source:

* ``Fixed(value)``    a constant angle,
* ``Input(slot)``     the ``slot``-th input feature (one feature per qubit),
* ``Trainable(slot)`` an entry of the layer's ``theta`` vector.

Trainable slots are numbered locally inside each stage, starting at 0.  When
the circuit is unrolled, the global layout of ``theta`` is
``[encoding | block rep 0 | block rep 1 | ... | pre-measurement]``, so every
repetition of the variational block gets its own fresh angles.

Gradients use the parameter-shift rule: for gates generated by a Pauli with
eigenvalues +-1/2 (RX, RY, RZ, U1 and each angle of U2/U3, which equal
RZ.RY.RZ up to a global phase) the two-term rule with shift pi/2 is exact.
Controlled rotations have generator eigenvalues {0, +-1/2} and use the exact
four-term rule.  A ``finite_difference`` mode evaluates a central divided
difference with a user-chosen shift instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from hcqlab import qsim

HALF_PI = np.pi / 2

# exact four-term shift coefficients for generators with spectrum {0, +-1/2}
_C_PLUS = (np.sqrt(2) + 1) / (4 * np.sqrt(2))
_C_MINUS = (np.sqrt(2) - 1) / (4 * np.sqrt(2))

TWO_TERM = ((HALF_PI, 0.5), (-HALF_PI, -0.5))
FOUR_TERM = (
    (HALF_PI, _C_PLUS), (-HALF_PI, -_C_PLUS),
    (3 * HALF_PI, -_C_MINUS), (-3 * HALF_PI, _C_MINUS),
)


class CircuitError(ValueError):
    pass


@dataclass(frozen=True)
class Fixed:
    value: float


@dataclass(frozen=True)
class Input:
    slot: int


@dataclass(frozen=True)
class Trainable:
    slot: int


ParamSource = Union[Fixed, Input, Trainable]


@dataclass(frozen=True)
class GateOp:
    """A gate placement with one parameter source per angle."""

    tag: str
    target: int
    control: Optional[int] = None
    params: tuple = ()

    def __post_init__(self):
        if self.tag not in qsim.ARITY:
            raise CircuitError(f"unknown gate tag {self.tag!r}")
        if len(self.params) != qsim.ARITY[self.tag]:
            raise CircuitError(
                f"gate {self.tag} takes {qsim.ARITY[self.tag]} parameter(s), got {len(self.params)}"
            )
        if (self.tag in qsim.CONTROLLED_TAGS) != (self.control is not None):
            raise CircuitError(f"gate {self.tag}: control qubit given/missing incorrectly")
        if self.control is not None and self.control == self.target:
            raise CircuitError(f"gate {self.tag}: control equals target ({self.target})")


@dataclass(frozen=True)
class CircuitSpec:
    n_qubits: int
    encoding: tuple
    variational_block: tuple
    repetitions: int
    pre_measurement: tuple
    measurement_basis: str = "Y"
    name: str = ""

    def __post_init__(self):
        for attr in ("encoding", "variational_block", "pre_measurement"):
            object.__setattr__(self, attr, tuple(getattr(self, attr)))
        if not 1 <= self.n_qubits <= qsim.MAX_QUBITS:
            raise CircuitError(f"qubit count out of range: {self.n_qubits}")
        if self.repetitions < 1:
            raise CircuitError(f"repetitions must be >= 1, got {self.repetitions}")
        if self.measurement_basis not in qsim.PAULI_BASES:
            raise CircuitError(f"unknown measurement basis {self.measurement_basis!r}")
        for stage in ("encoding", "variational_block", "pre_measurement"):
            trainable = set()
            for op in getattr(self, stage):
                for q in (op.target, op.control):
                    if q is not None and not 0 <= q < self.n_qubits:
                        raise CircuitError(f"{stage}: qubit index {q} out of range")
                for src in op.params:
                    if isinstance(src, Input) and not 0 <= src.slot < self.n_qubits:
                        raise CircuitError(f"{stage}: input slot {src.slot} out of range")
                    if isinstance(src, Trainable):
                        trainable.add(src.slot)
            if trainable != set(range(len(trainable))):
                raise CircuitError(f"{stage}: trainable slots {sorted(trainable)} are not dense from 0")

    def stage_sizes(self) -> tuple:
        """Number of distinct trainable slots in (encoding, block, pre-measurement)."""
        def count(ops):
            return len({s.slot for op in ops for s in op.params if isinstance(s, Trainable)})
        return count(self.encoding), count(self.variational_block), count(self.pre_measurement)

    @property
    def n_trainable(self) -> int:
        e, b, p = self.stage_sizes()
        return e + b * self.repetitions + p


def _shift_slots(ops, offset: int) -> list:
    out = []
    for op in ops:
        params = tuple(Trainable(s.slot + offset) if isinstance(s, Trainable) else s for s in op.params)
        out.append(GateOp(op.tag, op.target, op.control, params))
    return out


def unrolled_ops(spec: CircuitSpec) -> list:
    """Full gate sequence with trainable slots mapped to global theta indices."""
    e, b, _ = spec.stage_sizes()
    ops = list(spec.encoding)
    for r in range(spec.repetitions):
        ops += _shift_slots(spec.variational_block, e + r * b)
    ops += _shift_slots(spec.pre_measurement, e + spec.repetitions * b)
    return ops


# ----------------------------------------------------------------------------
# circuit templates

def entangler_chain(n_qubits: int, tag: str = "CZ", first_slot: int = 0) -> list:
    """Nearest-neighbour chain (0-1, 1-2, ...); rotation entanglers get trainable angles."""
    ops = []
    for q in range(n_qubits - 1):
        params = (Trainable(first_slot + q),) if qsim.ARITY[tag] else ()
        ops.append(GateOp(tag, target=q + 1, control=q, params=params))
    return ops


def rotation_layer(n_qubits: int, tag: str, first_slot: int = 0) -> list:
    """One ``tag`` gate per qubit, each angle its own trainable slot."""
    ops, slot = [], first_slot
    for q in range(n_qubits):
        k = qsim.ARITY[tag]
        ops.append(GateOp(tag, q, params=tuple(Trainable(slot + i) for i in range(k))))
        slot += k
    return ops


def u1_encoding(n_qubits: int, entangler: Optional[str] = "CZ") -> list:
    # U1 is diagonal, so a Hadamard layer first makes the encoded phase observable
    ops = [GateOp("H", q) for q in range(n_qubits)]
    ops += [GateOp("U1", q, params=(Input(q),)) for q in range(n_qubits)]
    if entangler:
        ops += entangler_chain(n_qubits, entangler)
    return ops


def vgg_circuit() -> CircuitSpec:
    """4-qubit circuit: U1 + CZ encoding, (RZ + CZ) x 3, U2 pre-measurement, Y readout."""
    n = 4
    block = rotation_layer(n, "RZ") + entangler_chain(n, "CZ")
    return CircuitSpec(
        n_qubits=n,
        encoding=u1_encoding(n),
        variational_block=block,
        repetitions=3,
        pre_measurement=rotation_layer(n, "U2"),
        measurement_basis="Y",
        name="vgg",
    )


def alexnet_circuit() -> CircuitSpec:
    """3-qubit circuit: U1 + CZ encoding, (U3 + CZ) x 5, U1 pre-measurement, Y readout."""
    n = 3
    block = rotation_layer(n, "U3") + entangler_chain(n, "CZ")
    return CircuitSpec(
        n_qubits=n,
        encoding=u1_encoding(n),
        variational_block=block,
        repetitions=5,
        pre_measurement=rotation_layer(n, "U1"),
        measurement_basis="Y",
        name="alexnet",
    )


# ----------------------------------------------------------------------------
# compilation to a flat occurrence vector

_FIXED, _INPUT, _TRAIN = 0, 1, 2


class _Compiled:
    """Unrolled gate list where every angle occurrence has its own index."""

    def __init__(self, spec: CircuitSpec):
        self.spec = spec
        self.gates = []  # (tag, target, control, occurrence indices)
        kinds, slots, fixed = [], [], []
        for op in unrolled_ops(spec):
            idx = []
            for src in op.params:
                idx.append(len(kinds))
                if isinstance(src, Fixed):
                    kinds.append(_FIXED); slots.append(-1); fixed.append(float(src.value))
                elif isinstance(src, Input):
                    kinds.append(_INPUT); slots.append(src.slot); fixed.append(0.0)
                else:
                    kinds.append(_TRAIN); slots.append(src.slot); fixed.append(0.0)
            self.gates.append((op.tag, op.target, op.control, np.array(idx, dtype=int)))
        self.kinds = np.array(kinds, dtype=int)
        self.slots = np.array(slots, dtype=int)
        self.fixed = np.array(fixed)
        self.occurrence_tag = [None] * len(kinds)
        for tag, _, _, idx in self.gates:
            for k in idx:
                self.occurrence_tag[k] = tag

    def values(self, theta: np.ndarray, inputs: np.ndarray) -> np.ndarray:
        """Angle of every occurrence for each input row; shape (m, K)."""
        m = inputs.shape[0]
        vals = np.tile(self.fixed, (m, 1))
        t = self.kinds == _TRAIN
        vals[:, t] = theta[self.slots[t]]
        i = self.kinds == _INPUT
        vals[:, i] = inputs[:, self.slots[i]]
        return vals

    def run(self, values: np.ndarray) -> np.ndarray:
        """Simulate every row of ``values``; returns per-qubit expectations (R, n)."""
        n = self.spec.n_qubits
        psi = qsim.zero_states(values.shape[0], n)
        no_params = np.zeros((1, 0))
        for tag, target, control, idx in self.gates:
            params = values[:, idx] if idx.size else no_params
            psi = qsim.apply_batch(psi, tag, params, target, control, n)
        return qsim.pauli_expectations(psi, self.spec.measurement_basis, n)

    def final_state(self, values: np.ndarray) -> np.ndarray:
        n = self.spec.n_qubits
        psi = qsim.zero_states(1, n)
        for tag, target, control, idx in self.gates:
            psi = qsim.apply_batch(psi, tag, values[None, idx] if idx.size else np.zeros((1, 0)),
                                   target, control, n)
        return psi[0]


_COMPILE_CACHE: dict = {}


def _compiled(spec: CircuitSpec) -> _Compiled:
    c = _COMPILE_CACHE.get(spec)
    if c is None:
        if len(_COMPILE_CACHE) > 256:
            _COMPILE_CACHE.clear()
        c = _COMPILE_CACHE[spec] = _Compiled(spec)
    return c


# ----------------------------------------------------------------------------
# layer

@dataclass
class QnnLayer:
    spec: CircuitSpec
    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if self.theta.shape != (self.spec.n_trainable,):
            raise CircuitError(
                f"theta has shape {self.theta.shape}, circuit needs ({self.spec.n_trainable},)"
            )


def init_theta(spec: CircuitSpec, rng: np.random.Generator, scale: float = np.pi / 100) -> np.ndarray:
    return rng.uniform(-scale, scale, size=spec.n_trainable)


def _as_batch(layer: QnnLayer, inputs) -> tuple:
    x = np.asarray(inputs, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != layer.spec.n_qubits:
        raise CircuitError(f"expected {layer.spec.n_qubits} inputs, got {x.shape[1]}")
    return x, single


def qnn_forward(layer: QnnLayer, inputs) -> np.ndarray:
    """Per-qubit Pauli expectations; accepts one input vector or a batch (m, n)."""
    x, single = _as_batch(layer, inputs)
    comp = _compiled(layer.spec)
    out = comp.run(comp.values(layer.theta, x))
    return out[0] if single else out


def qnn_state(layer: QnnLayer, inputs) -> qsim.StateVector:
    x, _ = _as_batch(layer, inputs)
    comp = _compiled(layer.spec)
    return qsim.StateVector(layer.spec.n_qubits, comp.final_state(comp.values(layer.theta, x[:1])[0]))


# maps each Pauli eigenbasis onto the computational basis (+1 eigenstate -> |0>)
_BASIS_CHANGE = {"X": ("H", ()), "Y": ("RX", (HALF_PI,)), "Z": None}


def qnn_sample_readout(layer: QnnLayer, inputs, shots: int, seed: int, rotate_to_basis: bool = False) -> int:
    """Most frequent computational-basis outcome over ``shots`` samples (ties -> lowest index).

    With ``rotate_to_basis`` every qubit is first rotated so that sampling
    measures the circuit's Pauli basis instead of Z.
    """
    state = qnn_state(layer, inputs)
    change = _BASIS_CHANGE[layer.spec.measurement_basis]
    if rotate_to_basis and change:
        tag, params = change
        for q in range(layer.spec.n_qubits):
            state = qsim.apply_gate(state, qsim.GateApplication(qsim.GateKind(tag, params), q))
    return qsim.sample_shots(state, shots, seed).most_frequent()


def param_shift_grads(
    layer: QnnLayer,
    inputs,
    upstream,
    method: str = "shift",
    shift: float = 1e-3,
    wrt_theta: bool = True,
):
    """Contract d(outputs)/d(angles) with ``upstream`` by shifted re-evaluation.

    Returns ``(grad_theta, grad_inputs)``.  For a batch of inputs ``(m, n)``
    with upstream ``(m, n)``, ``grad_theta`` is summed over the batch and
    ``grad_inputs`` has shape ``(m, n)``.  An angle bound to several gates
    collects one shift contribution per occurrence.

    ``method="finite_difference"`` replaces the exact rule with
    ``[f(a + shift) - f(a - shift)] / (2 * shift)`` for every occurrence.
    With ``wrt_theta=False`` only input-bound angles are shifted and
    ``grad_theta`` is returned as zeros.
    """
    x, single = _as_batch(layer, inputs)
    up = np.atleast_2d(np.asarray(upstream, dtype=float))
    if up.shape != x.shape:
        raise CircuitError(f"upstream shape {up.shape} does not match inputs {x.shape}")
    comp = _compiled(layer.spec)
    base = comp.values(layer.theta, x)
    m, K = base.shape

    # (occurrence, shift, coefficient) triples
    terms = []
    for k in range(K):
        kind = comp.kinds[k]
        if kind == _FIXED or (kind == _TRAIN and not wrt_theta):
            continue
        if method == "shift":
            rule = FOUR_TERM if comp.occurrence_tag[k] in ("CRX", "CRY", "CRZ") else TWO_TERM
        elif method == "finite_difference":
            rule = ((shift, 0.5 / shift), (-shift, -0.5 / shift))
        else:
            raise CircuitError(f"unknown gradient method {method!r}")
        terms += [(k, s, c) for s, c in rule]

    grad_theta = np.zeros(layer.spec.n_trainable)
    grad_inputs = np.zeros_like(x)
    if not terms:
        return (grad_theta, grad_inputs[0]) if single else (grad_theta, grad_inputs)

    occ = np.array([t[0] for t in terms])
    shifts = np.array([t[1] for t in terms])
    coefs = np.array([t[2] for t in terms])
    T = len(terms)

    rows = np.repeat(base, T, axis=0)  # sample-major: row i*T + j
    rows[np.arange(m * T), np.tile(occ, m)] += np.tile(shifts, m)
    f = comp.run(rows).reshape(m, T, -1)
    # d(upstream . outputs)/d(occurrence) per sample, term-wise then reduced
    contrib = np.einsum("mtq,mq->mt", f, up) * coefs
    d_occ = np.zeros((m, K))
    for j in range(T):
        d_occ[:, occ[j]] += contrib[:, j]

    t = comp.kinds == _TRAIN
    if wrt_theta:
        np.add.at(grad_theta, comp.slots[t], d_occ[:, t].sum(axis=0))
    i = comp.kinds == _INPUT
    for k in np.flatnonzero(i):
        grad_inputs[:, comp.slots[k]] += d_occ[:, k]
    if single:
        return grad_theta, grad_inputs[0]
    return grad_theta, grad_inputs


# ----------------------------------------------------------------------------
# JSON schema
#
# {"n_qubits": int, "repetitions": int, "measurement_basis": "X"|"Y"|"Z",
#  "name": str,
#  "encoding" | "variational_block" | "pre_measurement": [
#     {"gate": tag, "target": int, "control": int|null,
#      "params": [{"source": "fixed", "value": float}
#                 | {"source": "input", "slot": int}
#                 | {"source": "trainable", "slot": int}, ...]}, ...]}

def _source_to_dict(src) -> dict:
    if isinstance(src, Fixed):
        return {"source": "fixed", "value": float(src.value)}
    if isinstance(src, Input):
        return {"source": "input", "slot": int(src.slot)}
    return {"source": "trainable", "slot": int(src.slot)}


def _source_from_dict(d: dict, where: str):
    kind = d.get("source")
    try:
        if kind == "fixed":
            return Fixed(float(d["value"]))
        if kind == "input":
            return Input(int(d["slot"]))
        if kind == "trainable":
            return Trainable(int(d["slot"]))
    except KeyError as exc:
        raise CircuitError(f"{where}: missing field {exc.args[0]!r}") from None
    raise CircuitError(f"{where}: unknown parameter source {kind!r}")


def spec_to_dict(spec: CircuitSpec) -> dict:
    def ops(seq):
        return [
            {"gate": op.tag, "target": op.target, "control": op.control,
             "params": [_source_to_dict(s) for s in op.params]}
            for op in seq
        ]
    return {
        "name": spec.name,
        "n_qubits": spec.n_qubits,
        "encoding": ops(spec.encoding),
        "variational_block": ops(spec.variational_block),
        "repetitions": spec.repetitions,
        "pre_measurement": ops(spec.pre_measurement),
        "measurement_basis": spec.measurement_basis,
    }


def spec_from_dict(d: dict) -> CircuitSpec:
    def ops(stage):
        if stage not in d:
            raise CircuitError(f"circuit: missing field {stage!r}")
        out = []
        for i, g in enumerate(d[stage]):
            where = f"circuit.{stage}[{i}]"
            if g.get("gate") not in qsim.ARITY:
                raise CircuitError(f"{where}: unknown gate tag {g.get('gate')!r}")
            params = tuple(_source_from_dict(p, f"{where}.params") for p in g.get("params", []))
            control = g.get("control")
            out.append(GateOp(g["gate"], int(g["target"]), None if control is None else int(control), params))
        return out
    for key in ("n_qubits", "repetitions"):
        if key not in d:
            raise CircuitError(f"circuit: missing field {key!r}")
    return CircuitSpec(
        n_qubits=int(d["n_qubits"]),
        encoding=ops("encoding"),
        variational_block=ops("variational_block"),
        repetitions=int(d["repetitions"]),
        pre_measurement=ops("pre_measurement"),
        measurement_basis=d.get("measurement_basis", "Y"),
        name=d.get("name", ""),
    )
