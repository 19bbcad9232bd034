import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hcqlab import qnn, qsim
from hcqlab.qnn import CircuitSpec, Fixed, GateOp, Input, QnnLayer, Trainable

import oracles


def ry_encoding_spec(n, basis="Z"):
    enc = [GateOp("RY", q, params=(Input(q),)) for q in range(n)]
    return CircuitSpec(n, enc, [], 1, [], basis)


def single_ry(basis="Z"):
    return CircuitSpec(1, [], [GateOp("RY", 0, params=(Trainable(0),))], 1, [], basis)


def mixed_spec(reps=2):
    """3 qubits touching every parameterized gate family, controlled rotations included."""
    n = 3
    enc = [GateOp("RY", q, params=(Input(q),)) for q in range(n)] + [GateOp("RX", 0, params=(Input(1),))]
    block = [
        GateOp("U3", 0, params=(Trainable(0), Trainable(1), Trainable(2))),
        GateOp("U2", 1, params=(Trainable(3), Trainable(4))),
        GateOp("RZ", 2, params=(Trainable(5),)),
        GateOp("CRX", 1, 0, (Trainable(6),)),
        GateOp("CRY", 2, 1, (Trainable(7),)),
        GateOp("CRZ", 0, 2, (Trainable(8),)),
        GateOp("CY", 2, 0),
        GateOp("U1", 1, params=(Fixed(0.3),)),
    ]
    pre = [GateOp("RX", q, params=(Trainable(q),)) for q in range(n)]
    return CircuitSpec(n, enc, block, reps, pre, "Y")


def contracted(spec, up):
    """Scalar objective sum(up * outputs) as a function of (theta, inputs)."""
    return lambda theta, x: float(up @ oracles.spec_expectations(spec, theta, x))


# ---------------------------------------------------------------- templates

def test_vgg_template():
    s = qnn.vgg_circuit()
    assert (s.n_qubits, s.repetitions, s.measurement_basis) == (4, 3, "Y")
    assert s.n_trainable == 4 * 3 + 4 * 2


def test_alexnet_template():
    s = qnn.alexnet_circuit()
    assert (s.n_qubits, s.repetitions, s.measurement_basis) == (3, 5, "Y")
    assert s.n_trainable == 48


def test_templates_use_cz_chain_and_u1_inputs():
    for s in (qnn.vgg_circuit(), qnn.alexnet_circuit()):
        inputs = [op for op in s.encoding if op.tag == "U1"]
        assert [op.params for op in inputs] == [(Input(q),) for q in range(s.n_qubits)]
        cz = [(op.control, op.target) for op in s.variational_block if op.tag == "CZ"]
        assert cz == [(q, q + 1) for q in range(s.n_qubits - 1)]


# ---------------------------------------------------------------- forward

def test_forward_zero_inputs_z_basis():
    layer = QnnLayer(ry_encoding_spec(3), [])
    assert np.allclose(qnn.qnn_forward(layer, np.zeros(3)), 1.0, atol=1e-15)


def test_forward_pi_inputs_z_basis():
    layer = QnnLayer(ry_encoding_spec(3), [])
    assert np.allclose(qnn.qnn_forward(layer, np.full(3, np.pi)), -1.0, atol=1e-12)


def test_alexnet_zero_matches_oracle():
    spec = qnn.alexnet_circuit()
    n = 3
    # written out by hand: H and U1 encoding, CZ chain, five U3/CZ blocks, U1 layer
    gates = [("H", (), q, None) for q in range(n)] + [("U1", (0.0,), q, None) for q in range(n)]
    chain = [("CZ", (), 1, 0), ("CZ", (), 2, 1)]
    gates += chain
    for _ in range(5):
        gates += [("U3", (0.0, 0.0, 0.0), q, None) for q in range(n)] + chain
    gates += [("U1", (0.0,), q, None) for q in range(n)]
    psi = oracles.simulate(gates, n)
    expected = [oracles.pauli_expectation(psi, "Y", q, n) for q in range(n)]
    got = qnn.qnn_forward(QnnLayer(spec, np.zeros(48)), np.zeros(n))
    assert np.max(np.abs(got - expected)) <= 1e-10


@pytest.mark.parametrize("factory", [qnn.alexnet_circuit, qnn.vgg_circuit, mixed_spec])
def test_forward_matches_oracle_random(factory, rng):
    spec = factory()
    for _ in range(5):
        theta = rng.uniform(-np.pi, np.pi, spec.n_trainable)
        x = rng.uniform(-np.pi, np.pi, spec.n_qubits)
        got = qnn.qnn_forward(QnnLayer(spec, theta), x)
        assert np.max(np.abs(got - oracles.spec_expectations(spec, theta, x))) <= 1e-10


def test_batch_forward_equals_rowwise(rng):
    layer = QnnLayer(qnn.alexnet_circuit(), rng.uniform(-1, 1, 48))
    X = rng.uniform(-1, 1, (6, 3))
    batch = qnn.qnn_forward(layer, X)
    for i in range(6):
        assert np.array_equal(batch[i], qnn.qnn_forward(layer, X[i]))


def test_binding_determinism(rng):
    layer = QnnLayer(qnn.vgg_circuit(), rng.uniform(-1, 1, 20))
    x = rng.uniform(-1, 1, 4)
    assert np.array_equal(qnn.qnn_forward(layer, x), qnn.qnn_forward(layer, x))


@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(0.1, 50))
@settings(max_examples=30, deadline=None)
def test_output_bounds(seed, scale):
    rng = np.random.default_rng(seed)
    spec = mixed_spec()
    layer = QnnLayer(spec, rng.uniform(-scale, scale, spec.n_trainable))
    out = qnn.qnn_forward(layer, rng.uniform(-scale, scale, (4, 3)))
    assert np.all(np.abs(out) <= 1 + 1e-12)


def test_wrong_theta_length():
    with pytest.raises(qnn.CircuitError):
        QnnLayer(qnn.alexnet_circuit(), np.zeros(47))


def test_wrong_input_length():
    with pytest.raises(qnn.CircuitError):
        qnn.qnn_forward(QnnLayer(qnn.alexnet_circuit(), np.zeros(48)), np.zeros(4))


def test_sparse_slots_rejected():
    with pytest.raises(qnn.CircuitError, match="dense"):
        CircuitSpec(1, [], [GateOp("RY", 0, params=(Trainable(1),))], 1, [])


def test_init_theta_range_and_seed():
    spec = qnn.alexnet_circuit()
    a = qnn.init_theta(spec, np.random.default_rng(3))
    b = qnn.init_theta(spec, np.random.default_rng(3))
    assert np.array_equal(a, b) and np.all(np.abs(a) <= np.pi / 100)


# ---------------------------------------------------------------- readout

def test_readout_identity_circuit():
    layer = QnnLayer(CircuitSpec(2, [], [], 1, [], "Z"), [])
    assert qnn.qnn_sample_readout(layer, np.zeros(2), 1000, seed=0) == 0


def test_readout_little_endian():
    spec = CircuitSpec(2, [GateOp("RY", 0, params=(Input(0),))], [], 1, [], "Z")
    layer = QnnLayer(spec, [])
    assert qnn.qnn_sample_readout(layer, [np.pi, 0.0], 1000, seed=0) == 1


def test_readout_reproducible(rng):
    layer = QnnLayer(qnn.alexnet_circuit(), rng.uniform(-1, 1, 48))
    x = rng.uniform(-1, 1, 3)
    assert qnn.qnn_sample_readout(layer, x, 200, 9) == qnn.qnn_sample_readout(layer, x, 200, 9)


@pytest.mark.parametrize("basis,prep,expected", [("Y", ("RX", -np.pi / 2), 0), ("Y", ("RX", np.pi / 2), 1),
                                                  ("X", ("RY", np.pi / 2), 0), ("X", ("RY", -np.pi / 2), 1)])
def test_readout_rotated_basis(basis, prep, expected):
    # prepare a +/-1 eigenstate of the readout Pauli; the rotated sample must report it
    tag, angle = prep
    spec = CircuitSpec(1, [GateOp(tag, 0, params=(Fixed(angle),))], [], 1, [], basis)
    layer = QnnLayer(spec, [])
    assert np.sign(qnn.qnn_forward(layer, [0.0])[0]) == 1 - 2 * expected
    assert qnn.qnn_sample_readout(layer, [0.0], 500, 1, rotate_to_basis=True) == expected


# ---------------------------------------------------------------- gradients

def test_shift_grad_ry_at_zero():
    g, _ = qnn.param_shift_grads(QnnLayer(single_ry(), [0.0]), [0.0], [1.0])
    assert g[0] == pytest.approx(0.0, abs=1e-15)


def test_shift_grad_ry_at_half_pi():
    g, _ = qnn.param_shift_grads(QnnLayer(single_ry(), [np.pi / 2]), [0.0], [1.0])
    assert g[0] == pytest.approx(-1.0, abs=1e-12)


@pytest.mark.parametrize("factory", [qnn.alexnet_circuit, qnn.vgg_circuit, mixed_spec])
def test_shift_grads_match_finite_differences(factory, rng):
    spec = factory()
    theta = rng.uniform(-np.pi, np.pi, spec.n_trainable)
    x = rng.uniform(-np.pi, np.pi, spec.n_qubits)
    up = rng.normal(size=spec.n_qubits)
    g_theta, g_x = qnn.param_shift_grads(QnnLayer(spec, theta), x, up)
    f = contracted(spec, up)
    fd_theta = oracles.central_difference(lambda t: f(t, x), theta)
    fd_x = oracles.central_difference(lambda v: f(theta, v), x)
    assert np.max(np.abs(g_theta - fd_theta)) <= 1e-6
    assert np.max(np.abs(g_x - fd_x)) <= 1e-6


@pytest.mark.parametrize("tag", ["CRX", "CRY", "CRZ"])
def test_controlled_rotation_rule_is_exact(tag):
    # control in superposition so both branches contribute
    spec = CircuitSpec(2, [GateOp("H", 0), GateOp("RY", 1, params=(Fixed(0.4),))],
                       [GateOp(tag, 1, 0, (Trainable(0),))], 1, [GateOp("RX", 1, params=(Fixed(0.7),))], "Y")
    for t in np.linspace(-3, 3, 7):
        g, _ = qnn.param_shift_grads(QnnLayer(spec, [t]), [0.0, 0.0], [0.3, 1.0])
        f = contracted(spec, np.array([0.3, 1.0]))
        fd = oracles.central_difference(lambda v: f(v, np.zeros(2)), np.array([t]), h=1e-6)
        assert g[0] == pytest.approx(fd[0], abs=1e-8)


def test_shared_slot_sums_occurrences(rng):
    spec = CircuitSpec(2, [GateOp("H", 0)],
                       [GateOp("RY", 0, params=(Trainable(0),)), GateOp("CRX", 1, 0, (Trainable(0),)),
                        GateOp("U3", 1, params=(Trainable(0), Input(1), Trainable(0)))], 1, [], "Y")
    theta, x, up = np.array([0.8]), np.array([0.0, 0.5]), np.array([1.0, -0.4])
    g, gx = qnn.param_shift_grads(QnnLayer(spec, theta), x, up)
    f = contracted(spec, up)
    assert g == pytest.approx(oracles.central_difference(lambda t: f(t, x), theta), abs=1e-8)
    assert gx == pytest.approx(oracles.central_difference(lambda v: f(theta, v), x), abs=1e-8)


def test_finite_difference_mode_agrees(rng):
    spec = mixed_spec()
    layer = QnnLayer(spec, rng.uniform(-1, 1, spec.n_trainable))
    x, up = rng.uniform(-1, 1, 3), rng.normal(size=3)
    exact = qnn.param_shift_grads(layer, x, up)
    approx = qnn.param_shift_grads(layer, x, up, method="finite_difference", shift=1e-5)
    assert np.allclose(exact[0], approx[0], atol=1e-7)
    assert np.allclose(exact[1], approx[1], atol=1e-7)


def test_unknown_gradient_method():
    with pytest.raises(qnn.CircuitError):
        qnn.param_shift_grads(QnnLayer(single_ry(), [0.0]), [0.0], [1.0], method="adjoint")


def test_batched_gradients(rng):
    spec = qnn.alexnet_circuit()
    layer = QnnLayer(spec, rng.uniform(-1, 1, 48))
    X, U = rng.uniform(-1, 1, (4, 3)), rng.normal(size=(4, 3))
    g_theta, g_x = qnn.param_shift_grads(layer, X, U)
    rows = [qnn.param_shift_grads(layer, X[i], U[i]) for i in range(4)]
    assert np.allclose(g_theta, sum(r[0] for r in rows), atol=1e-12)
    assert np.allclose(g_x, np.stack([r[1] for r in rows]), atol=1e-12)


def test_inputs_only_mode(rng):
    layer = QnnLayer(qnn.vgg_circuit(), rng.uniform(-1, 1, 20))
    x, up = rng.uniform(-1, 1, 4), rng.normal(size=4)
    full = qnn.param_shift_grads(layer, x, up)
    g_theta, g_x = qnn.param_shift_grads(layer, x, up, wrt_theta=False)
    assert np.all(g_theta == 0)
    assert np.allclose(g_x, full[1], atol=1e-14)


def test_repetition_unrolling(rng):
    spec = mixed_spec(reps=3)
    e, b, p = spec.stage_sizes()
    block = []
    for r in range(3):
        block += qnn._shift_slots(spec.variational_block, r * b)
    pre = qnn._shift_slots(spec.pre_measurement, 0)
    manual = CircuitSpec(3, spec.encoding, block, 1, pre, spec.measurement_basis)
    assert manual.n_trainable == spec.n_trainable
    theta = rng.uniform(-2, 2, spec.n_trainable)
    x, up = rng.uniform(-2, 2, 3), rng.normal(size=3)
    a, m = QnnLayer(spec, theta), QnnLayer(manual, theta)
    assert np.max(np.abs(qnn.qnn_forward(a, x) - qnn.qnn_forward(m, x))) <= 1e-12
    ga, gm = qnn.param_shift_grads(a, x, up), qnn.param_shift_grads(m, x, up)
    assert np.max(np.abs(ga[0] - gm[0])) <= 1e-12
    assert np.max(np.abs(ga[1] - gm[1])) <= 1e-12


# ---------------------------------------------------------------- serialization

@pytest.mark.parametrize("factory", [qnn.alexnet_circuit, qnn.vgg_circuit, mixed_spec])
def test_spec_round_trip(factory):
    spec = factory()
    assert qnn.spec_from_dict(qnn.spec_to_dict(spec)) == spec


def test_spec_from_dict_unknown_gate():
    d = qnn.spec_to_dict(qnn.vgg_circuit())
    d["variational_block"][2]["gate"] = "QQ"
    with pytest.raises(qnn.CircuitError, match=r"circuit.variational_block\[2\].*unknown gate tag"):
        qnn.spec_from_dict(d)


def test_spec_from_dict_missing_field():
    d = qnn.spec_to_dict(qnn.vgg_circuit())
    del d["encoding"]
    with pytest.raises(qnn.CircuitError, match="encoding"):
        qnn.spec_from_dict(d)


def test_spec_from_dict_bad_source():
    d = qnn.spec_to_dict(qnn.vgg_circuit())
    d["pre_measurement"][0]["params"][0] = {"source": "weird"}
    with pytest.raises(qnn.CircuitError, match="unknown parameter source"):
        qnn.spec_from_dict(d)


def test_qubit_count_bounds():
    with pytest.raises(qnn.CircuitError):
        CircuitSpec(qsim.MAX_QUBITS + 1, [], [], 1, [])
