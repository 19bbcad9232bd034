"""Dense state-vector simulator for small registers (1 to 8 qubits).

Basis indices are little-endian: qubit 0 is the least significant bit of the
index, so on two qubits ``|q1 q0>`` sits at index ``2*q1 + q0``.

Gates are applied by reshaping the amplitude array so that the target bit
becomes its own axis (stride ``2**target``) and contracting that axis with
the 2x2 gate matrix.  Every kernel accepts a leading batch axis so that many
circuits sharing one gate layout can be simulated together; the public
single-state helpers are thin wrappers around those kernels.

Sampling uses numpy's ``PCG64`` bit generator, which is portable and produces
identical streams on every platform for a given seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

MAX_QUBITS = 8

SINGLE_QUBIT_TAGS = ("H", "X", "Y", "Z", "RX", "RY", "RZ", "U1", "U2", "U3")
CONTROLLED_TAGS = ("CX", "CY", "CZ", "CRX", "CRY", "CRZ")
GATE_TAGS = SINGLE_QUBIT_TAGS + CONTROLLED_TAGS

ARITY = {
    "H": 0, "X": 0, "Y": 0, "Z": 0,
    "CX": 0, "CY": 0, "CZ": 0,
    "RX": 1, "RY": 1, "RZ": 1, "U1": 1,
    "CRX": 1, "CRY": 1, "CRZ": 1,
    "U2": 2, "U3": 3,
}

# controlled tag -> matrix applied to the target in the control-|1> subspace
_CONTROLLED_BASE = {"CX": "X", "CY": "Y", "CZ": "Z", "CRX": "RX", "CRY": "RY", "CRZ": "RZ"}

PAULI_BASES = ("X", "Y", "Z")


class SimulatorError(ValueError):
    """Raised for invalid registers, gates, or indices."""


def _check_n_qubits(n_qubits: int) -> None:
    if not isinstance(n_qubits, (int, np.integer)) or not 1 <= n_qubits <= MAX_QUBITS:
        raise SimulatorError(f"qubit count out of range: {n_qubits!r} (allowed 1..{MAX_QUBITS})")


@dataclass(frozen=True)
class GateKind:
    tag: str
    params: tuple = ()

    def __post_init__(self):
        if self.tag not in ARITY:
            raise SimulatorError(f"unknown gate tag {self.tag!r}")
        params = tuple(float(p) for p in self.params)
        if len(params) != ARITY[self.tag]:
            raise SimulatorError(
                f"gate {self.tag} takes {ARITY[self.tag]} parameter(s), got {len(params)}"
            )
        object.__setattr__(self, "params", params)

    @property
    def controlled(self) -> bool:
        return self.tag in CONTROLLED_TAGS


@dataclass(frozen=True)
class GateApplication:
    kind: GateKind
    target: int
    control: Optional[int] = None

    def __post_init__(self):
        if self.kind.controlled and self.control is None:
            raise SimulatorError(f"gate {self.kind.tag} needs a control qubit")
        if not self.kind.controlled and self.control is not None:
            raise SimulatorError(f"gate {self.kind.tag} takes no control qubit")
        if self.control is not None and self.control == self.target:
            raise SimulatorError(f"control and target coincide (qubit {self.target})")

    def validate(self, n_qubits: int) -> None:
        for q in (self.target, self.control):
            if q is not None and not 0 <= q < n_qubits:
                raise SimulatorError(f"qubit index {q} out of range for {n_qubits} qubits")


@dataclass(frozen=True)
class StateVector:
    n_qubits: int
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self):
        _check_n_qubits(self.n_qubits)
        amps = np.asarray(self.amplitudes, dtype=np.complex128)
        if amps.shape != (2**self.n_qubits,):
            raise SimulatorError(
                f"expected {2**self.n_qubits} amplitudes for {self.n_qubits} qubits, got shape {amps.shape}"
            )
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    def norm_squared(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)


@dataclass(frozen=True)
class ShotCounts:
    shots: int
    counts: dict

    def most_frequent(self) -> int:
        """Basis index seen most often; ties go to the lowest index."""
        best = max(self.counts.values())
        return min(i for i, c in self.counts.items() if c == best)


# ----------------------------------------------------------------------------
# gate matrices

def base_matrices(tag: str, params) -> np.ndarray:
    """Batched 2x2 matrices for a single-qubit tag.

    ``params`` has shape ``(B, arity)``; the result has shape ``(B, 2, 2)``.
    """
    params = np.asarray(params, dtype=float)
    if params.ndim == 1:
        # a 1-d input is a batch of angles for 1-parameter tags, else a single row
        params = params[:, None] if ARITY[tag] == 1 else params[None, :]
    B = params.shape[0]
    out = np.zeros((B, 2, 2), dtype=np.complex128)
    if tag == "H":
        out[:] = np.array([[1, 1], [1, -1]]) / np.sqrt(2)
    elif tag == "X":
        out[:] = [[0, 1], [1, 0]]
    elif tag == "Y":
        out[:] = [[0, -1j], [1j, 0]]
    elif tag == "Z":
        out[:] = [[1, 0], [0, -1]]
    elif tag in ("RX", "RY", "RZ"):
        half = params[:, 0] / 2
        c, s = np.cos(half), np.sin(half)
        if tag == "RX":
            out[:, 0, 0] = c
            out[:, 0, 1] = -1j * s
            out[:, 1, 0] = -1j * s
            out[:, 1, 1] = c
        elif tag == "RY":
            out[:, 0, 0] = c
            out[:, 0, 1] = -s
            out[:, 1, 0] = s
            out[:, 1, 1] = c
        else:
            out[:, 0, 0] = np.exp(-1j * half)
            out[:, 1, 1] = np.exp(1j * half)
    elif tag == "U1":
        out[:, 0, 0] = 1
        out[:, 1, 1] = np.exp(1j * params[:, 0])
    elif tag == "U2":
        phi, lam = params[:, 0], params[:, 1]
        r = 1 / np.sqrt(2)
        out[:, 0, 0] = r
        out[:, 0, 1] = -r * np.exp(1j * lam)
        out[:, 1, 0] = r * np.exp(1j * phi)
        out[:, 1, 1] = r * np.exp(1j * (phi + lam))
    elif tag == "U3":
        theta, phi, lam = params[:, 0], params[:, 1], params[:, 2]
        c, s = np.cos(theta / 2), np.sin(theta / 2)
        out[:, 0, 0] = c
        out[:, 0, 1] = -np.exp(1j * lam) * s
        out[:, 1, 0] = np.exp(1j * phi) * s
        out[:, 1, 1] = np.exp(1j * (phi + lam)) * c
    else:
        raise SimulatorError(f"{tag!r} is not a single-qubit tag")
    return out


def target_matrices(tag: str, params) -> np.ndarray:
    """Batched 2x2 matrix acting on the target (control-|1> block for controlled tags)."""
    return base_matrices(_CONTROLLED_BASE.get(tag, tag), params)


def gate_matrix(kind: GateKind) -> np.ndarray:
    """Unitary of a gate: 2x2, or 4x4 for controlled gates.

    The 4x4 form is written in the ordered basis ``|control, target>``
    (index ``2*control_bit + target_bit``): identity on the control-|0>
    block and the target matrix on the control-|1> block.
    """
    block = target_matrices(kind.tag, np.array([kind.params]))[0]
    if not kind.controlled:
        return block
    full = np.eye(4, dtype=np.complex128)
    full[2:, 2:] = block
    return full


# ----------------------------------------------------------------------------
# batched kernels; psi has shape (B, 2**n)

def apply_single(psi: np.ndarray, mats: np.ndarray, target: int, n: int) -> np.ndarray:
    B = psi.shape[0]
    view = psi.reshape(B, 2 ** (n - 1 - target), 2, 2**target)
    if mats.ndim == 2:
        out = np.einsum("ij,bajc->baic", mats, view)
    else:
        out = np.einsum("bij,bajc->baic", mats, view)
    return out.reshape(B, -1)


def apply_controlled(psi: np.ndarray, mats: np.ndarray, control: int, target: int, n: int) -> np.ndarray:
    B = psi.shape[0]
    hi, lo = max(control, target), min(control, target)
    view = psi.reshape(B, 2 ** (n - 1 - hi), 2, 2 ** (hi - lo - 1), 2, 2**lo).copy()
    control_high = control == hi
    sl = [slice(None)] * 6
    sl[2 if control_high else 4] = 1
    sl = tuple(sl)
    sub = view[sl]
    # target axis inside the 5-d slice
    t_ax = 3 if control_high else 2
    sub = np.moveaxis(sub, t_ax, -1)
    if mats.ndim == 2:
        new = np.einsum("ij,b...j->b...i", mats, sub)
    else:
        new = np.einsum("bij,b...j->b...i", mats, sub)
    view[sl] = np.moveaxis(new, -1, t_ax)
    return view.reshape(B, -1)


def apply_batch(psi: np.ndarray, tag: str, params, target: int, control: Optional[int], n: int) -> np.ndarray:
    """Apply one gate layout to a batch of states with per-row parameters."""
    mats = target_matrices(tag, params)
    if mats.shape[0] == 1:
        mats = mats[0]
    if control is None:
        return apply_single(psi, mats, target, n)
    return apply_controlled(psi, mats, control, target, n)


def zero_states(batch: int, n: int) -> np.ndarray:
    psi = np.zeros((batch, 2**n), dtype=np.complex128)
    psi[:, 0] = 1.0
    return psi


def pauli_expectations(psi: np.ndarray, basis: str, n: int) -> np.ndarray:
    """Per-qubit <P> for every row of ``psi``; returns shape ``(B, n)``."""
    if basis not in PAULI_BASES:
        raise SimulatorError(f"unknown measurement basis {basis!r}")
    B = psi.shape[0]
    out = np.empty((B, n))
    for q in range(n):
        view = psi.reshape(B, 2 ** (n - 1 - q), 2, 2**q)
        a0, a1 = view[:, :, 0, :], view[:, :, 1, :]
        if basis == "Z":
            out[:, q] = (np.abs(a0) ** 2).sum(axis=(1, 2)) - (np.abs(a1) ** 2).sum(axis=(1, 2))
        else:
            cross = (np.conj(a0) * a1).sum(axis=(1, 2))
            out[:, q] = 2 * (cross.real if basis == "X" else cross.imag)
    return out


# ----------------------------------------------------------------------------
# single-state API

def new_state(n_qubits: int) -> StateVector:
    _check_n_qubits(n_qubits)
    return StateVector(n_qubits, zero_states(1, n_qubits)[0])


def apply_gate(state: StateVector, app: GateApplication) -> StateVector:
    app.validate(state.n_qubits)
    psi = apply_batch(
        state.amplitudes[None, :], app.kind.tag, np.array([app.kind.params]),
        app.target, app.control, state.n_qubits,
    )
    return StateVector(state.n_qubits, psi[0])


def probabilities(state: StateVector) -> np.ndarray:
    return np.abs(state.amplitudes) ** 2


def sample_shots(state: StateVector, shots: int, seed: int) -> ShotCounts:
    """Multinomial draw of ``shots`` measurement outcomes in the computational basis."""
    if shots < 1:
        raise SimulatorError(f"shots must be >= 1, got {shots}")
    p = probabilities(state)
    p = p / p.sum()
    rng = np.random.Generator(np.random.PCG64(seed))
    draws = rng.multinomial(shots, p)
    counts = {int(i): int(c) for i, c in enumerate(draws) if c}
    return ShotCounts(shots, counts)


def expectation_pauli(state: StateVector, basis: str, qubit: int) -> float:
    if not 0 <= qubit < state.n_qubits:
        raise SimulatorError(f"qubit index {qubit} out of range for {state.n_qubits} qubits")
    return float(pauli_expectations(state.amplitudes[None, :], basis, state.n_qubits)[0, qubit])
