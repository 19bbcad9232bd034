"""Circuit-architecture search over a cartesian space of QNN layer designs.

Each candidate is trained briefly inside a hybrid model, then scored on a
validation split by ``w * clean_accuracy + (1 - w) * fgsa_accuracy`` at a
single probe epsilon.

The default space has 4 encodings x 6 rotation gates x 6 entanglers x 3
depths x 5 pre-measurement choices = 2160 circuits.  By default the qubit
count is paired with the depth (1 -> 2, 3 -> 4, 5 -> 3 qubits) so that the
4-qubit RZ/CZ x 3 + U2 circuit and the 3-qubit U3/CZ x 5 + U1 circuit are
both members.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from hcqlab import attacks, qnn, qsim
from hcqlab import model as M
from hcqlab.data import Dataset

SEARCH_SCHEMA = "hcqlab.search/v1"
CSV_HEADER = ("rank", "spec_id", "clean_acc", "adv_acc", "objective", "seconds")

ENCODINGS = ("u1_cz", "ry", "rx", "h_rz")
DEFAULT_WIDTH_FOR_DEPTH = {1: 2, 3: 4, 5: 3}


@dataclass(frozen=True)
class SearchSpace:
    encoding_options: tuple = ENCODINGS
    variational_gate_options: tuple = ("RX", "RY", "RZ", "U1", "U2", "U3")
    entangler_options: tuple = ("CX", "CY", "CZ", "CRX", "CRY", "CRZ")
    repetition_options: tuple = (1, 3, 5)
    pre_measurement_options: tuple = ("none", "U1", "U2", "U3", "H")
    # None pairs the width with the depth through width_for_depth
    n_qubits_options: tuple = (None,)
    width_for_depth: dict = field(default_factory=lambda: dict(DEFAULT_WIDTH_FOR_DEPTH))
    measurement_basis: str = "Y"

    def __post_init__(self):
        for name in ("encoding_options", "variational_gate_options", "entangler_options",
                     "repetition_options", "pre_measurement_options", "n_qubits_options"):
            opts = tuple(getattr(self, name))
            if not opts:
                raise ValueError(f"search space option list {name!r} is empty")
            if len(set(opts)) != len(opts):
                raise ValueError(f"search space option list {name!r} has duplicates")
            object.__setattr__(self, name, opts)
        for e in self.encoding_options:
            if e not in ENCODINGS:
                raise ValueError(f"unknown encoding option {e!r}")
        if None in self.n_qubits_options:
            missing = [r for r in self.repetition_options if r not in self.width_for_depth]
            if missing:
                raise ValueError(f"no paired qubit count for repetitions {missing}")

    @property
    def size(self) -> int:
        return (len(self.encoding_options) * len(self.variational_gate_options) * len(self.entangler_options)
                * len(self.repetition_options) * len(self.pre_measurement_options) * len(self.n_qubits_options))


@dataclass
class SearchRecord:
    spec: qnn.CircuitSpec
    val_accuracy: float
    adv_accuracy_at_probe_epsilon: float
    objective: float
    train_seconds: float
    rank: int = 0
    index: int = 0

    @property
    def spec_id(self) -> str:
        return self.spec.name


def spec_id(encoding, gate, entangler, reps, pre, n_qubits) -> str:
    return f"enc={encoding}|var={gate}|ent={entangler}|reps={reps}|pre={pre}|q={n_qubits}"


def _encoding_ops(kind: str, n: int) -> list:
    if kind == "u1_cz":
        return qnn.u1_encoding(n, "CZ")
    if kind == "h_rz":
        return [qnn.GateOp("H", q) for q in range(n)] + [qnn.GateOp("RZ", q, params=(qnn.Input(q),)) for q in range(n)]
    tag = {"ry": "RY", "rx": "RX"}[kind]
    return [qnn.GateOp(tag, q, params=(qnn.Input(q),)) for q in range(n)]


def build_candidate(encoding: str, gate: str, entangler: str, reps: int, pre: str, n_qubits: int,
                    basis: str = "Y") -> qnn.CircuitSpec:
    rot = qnn.rotation_layer(n_qubits, gate)
    block = rot + qnn.entangler_chain(n_qubits, entangler, first_slot=n_qubits * qsim.ARITY[gate])
    if pre == "none":
        pre_ops = []
    elif pre == "H":
        pre_ops = [qnn.GateOp("H", q) for q in range(n_qubits)]
    else:
        pre_ops = qnn.rotation_layer(n_qubits, pre)
    return qnn.CircuitSpec(
        n_qubits=n_qubits,
        encoding=_encoding_ops(encoding, n_qubits),
        variational_block=block,
        repetitions=reps,
        pre_measurement=pre_ops,
        measurement_basis=basis,
        name=spec_id(encoding, gate, entangler, reps, pre, n_qubits),
    )


def enumerate_space(space: SearchSpace) -> list:
    """All candidate circuits, ordered lexicographically by option index."""
    out = []
    for enc, gate, ent, reps, pre, nq in itertools.product(
        space.encoding_options, space.variational_gate_options, space.entangler_options,
        space.repetition_options, space.pre_measurement_options, space.n_qubits_options,
    ):
        n = space.width_for_depth[reps] if nq is None else nq
        out.append(build_candidate(enc, gate, ent, reps, pre, n, space.measurement_basis))
    return out


def same_circuit(a: qnn.CircuitSpec, b: qnn.CircuitSpec) -> bool:
    """Structural equality, ignoring names."""
    return replace(a, name="") == replace(b, name="")


def candidate_seed(seed: int, spec: qnn.CircuitSpec) -> int:
    """Per-candidate seed, independent of the candidate's position in any list."""
    ss = np.random.SeedSequence([seed, zlib.crc32(spec.name.encode())])
    return int(ss.generate_state(1)[0])


def default_search_config(seed: int = 0, epochs: int = 5) -> M.TrainConfig:
    return M.default_train_config("hybrid-alex", seed=seed, epochs=epochs)


def evaluate_candidate(spec: qnn.CircuitSpec, train_set: Dataset, val_set: Dataset, cfg: M.TrainConfig,
                       probe_epsilon: float, weight: float = 0.5) -> SearchRecord:
    """Train one candidate with ``cfg`` and score it on ``val_set``."""
    start = time.perf_counter()
    model = M.HybridModel.create(train_set.feature_dim, spec, cfg.seed, variant="search")
    M.train(model, train_set, cfg)
    seconds = time.perf_counter() - start
    clean = M.accuracy(model, val_set)
    adv_x = attacks.fgsa(model, val_set.features, val_set.labels, probe_epsilon)
    adv = float(np.mean(M.predict(model, adv_x) == val_set.labels))
    return SearchRecord(spec, clean, adv, weight * clean + (1 - weight) * adv, seconds)


def _run_one(args):
    i, spec, train_set, val_set, base_cfg, probe_epsilon, weight, seed = args
    cfg = replace(base_cfg, seed=candidate_seed(seed, spec))
    rec = evaluate_candidate(spec, train_set, val_set, cfg, probe_epsilon, weight)
    rec.index = i
    return rec


def rank_records(records: list) -> list:
    ordered = sorted(records, key=lambda r: (-r.objective, r.index))
    for k, r in enumerate(ordered, start=1):
        r.rank = k
    return ordered


def run_search(candidates, train_set: Dataset, val_set: Dataset, budget: int = 5, probe_epsilon: float = 0.1,
               seed: int = 0, train_config: Optional[M.TrainConfig] = None, weight: float = 0.5,
               workers: int = 1) -> list:
    """Train and score every candidate; returns records sorted by rank.

    ``candidates`` is a :class:`SearchSpace` or a list of circuit specs.
    ``train_config`` supplies batch size, learning rate and schedule; its
    epoch count is replaced by ``budget`` and its seed by a per-candidate
    seed derived from ``seed``.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1 epoch")
    specs = enumerate_space(candidates) if isinstance(candidates, SearchSpace) else list(candidates)
    base = replace(train_config or default_search_config(seed), epochs=budget)
    jobs = [(i, s, train_set, val_set, base, probe_epsilon, weight, seed) for i, s in enumerate(specs)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_one, jobs))
    else:
        records = [_run_one(j) for j in jobs]
    return rank_records(records)


def refine_top_k(records: list, train_set: Dataset, val_set: Dataset, k: int = 3, epochs: int = 25,
                 probe_epsilon: float = 0.1, seed: int = 0, train_config: Optional[M.TrainConfig] = None,
                 weight: float = 0.5) -> list:
    """Retrain the ``k`` best records for ``epochs`` and re-rank them."""
    base = replace(train_config or default_search_config(seed), epochs=epochs)
    top = sorted(records, key=lambda r: r.rank)[:k]
    refined = [_run_one((r.index, r.spec, train_set, val_set, base, probe_epsilon, weight, seed)) for r in top]
    return rank_records(refined)


def records_csv(records: list, include_timing: bool = False) -> str:
    """CSV of ranked records; wall-clock seconds are written only when asked for."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in sorted(records, key=lambda r: r.rank):
        secs = f"{r.train_seconds:.3f}" if include_timing else "NA"
        w.writerow([r.rank, r.spec_id, repr(r.val_accuracy), repr(r.adv_accuracy_at_probe_epsilon),
                    repr(r.objective), secs])
    return buf.getvalue()


def top_k_json(records: list, k: int) -> str:
    top = sorted(records, key=lambda r: r.rank)[:k]
    doc = {
        "schema": SEARCH_SCHEMA,
        "top_k": [
            {"rank": r.rank, "spec_id": r.spec_id, "clean_acc": r.val_accuracy,
             "adv_acc": r.adv_accuracy_at_probe_epsilon, "objective": r.objective,
             "circuit": qnn.spec_to_dict(r.spec)}
            for r in top
        ],
    }
    return json.dumps(doc, indent=1) + "\n"
