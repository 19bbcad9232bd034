import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hcqlab import data, nn, qnn
from hcqlab import model as M

import oracles


def hybrid(seed=0, feature_dim=5, spec=None, scaling="tanh_half_pi"):
    rng = np.random.default_rng(seed)
    mdl = M.HybridModel.create(feature_dim, spec or qnn.alexnet_circuit(), seed, scaling)
    # spread theta well beyond the near-identity init so every gate matters
    mdl.qnn.theta[:] = rng.uniform(-np.pi, np.pi, mdl.qnn.theta.shape)
    mdl.linear1.bias[:] = rng.normal(scale=0.3, size=mdl.linear1.bias.shape)
    mdl.linear2.bias[:] = rng.normal(scale=0.3, size=2)
    return mdl


def check_against_fd(mdl, x, label):
    loss, grads, gx = M.loss_grads(mdl, x, label)
    loss_fn = lambda: M.loss_grads(mdl, x, label)[0]  # noqa: E731
    fd = oracles.model_param_fd(mdl, loss_fn)
    for name, ref in fd.items():
        assert grads[name].shape == ref.shape
        assert oracles.grad_close(grads[name], ref), name
    fdx = oracles.central_difference(lambda v: M.loss_grads(mdl, v, label)[0], x)
    assert oracles.grad_close(gx, fdx)
    return loss


@pytest.fixture(scope="module")
def separable2d():
    ds = data.synth_dataset(231, 2, 6.0, 3)
    train, test = data.split(ds, seed=3, n_train=182)
    train, test, _ = data.normalize(train, test)
    return train, test


# ---------------------------------------------------------------- forward

def test_zero_hybrid_gives_half():
    mdl = M.build_model("hybrid-alex", 4, seed=0)
    for layer in (mdl.linear1, mdl.linear2):
        layer.weights[:] = 0
        layer.bias[:] = 0
    probs, _ = M.forward(mdl, np.ones(4))
    assert np.array_equal(probs, [0.5, 0.5])


def test_classical_hand_case():
    mdl = M.ClassicalModel(nn.LinearLayer(np.eye(2), np.zeros(2)), nn.LinearLayer(np.eye(2), np.zeros(2)))
    probs, _ = M.forward(mdl, np.array([1.0, 2.0]))
    e = np.e
    assert np.allclose(probs, [1 / (1 + e), e / (1 + e)], atol=1e-15)


def test_hybrid_layer_widths_must_match():
    lin1 = nn.LinearLayer(np.zeros((2, 4)), np.zeros(2))
    layer = qnn.QnnLayer(qnn.alexnet_circuit(), np.zeros(48))
    with pytest.raises(ValueError):
        M.HybridModel(lin1, layer, nn.LinearLayer(np.zeros((2, 3)), np.zeros(2)))


def test_feature_dim_checked():
    with pytest.raises(ValueError):
        M.forward(M.build_model("classical-alex", 4), np.zeros(5))


def test_build_model_widths():
    assert M.build_model("classical-vgg", 8).linear1.out_dim == 2
    assert M.build_model("classical-alex", 8).linear1.out_dim == 6
    assert M.build_model("hybrid-vgg", 8).qnn.spec.n_qubits == 4
    assert M.build_model("hybrid-alex", 8).qnn.spec.n_qubits == 3


@given(st.floats(-1e3, 1e3, allow_nan=False))
def test_scaled_angles_bounded(z):
    mdl = M.build_model("hybrid-alex", 2)
    a, da = mdl.angles(np.array([z]))
    assert -np.pi / 2 <= a[0] <= np.pi / 2 and da[0] >= 0


# ---------------------------------------------------------------- gradients

@pytest.mark.parametrize("seed", [0, 1, 2])
def test_hybrid_gradients_match_fd(seed):
    mdl = hybrid(seed)
    rng = np.random.default_rng(100 + seed)
    check_against_fd(mdl, rng.normal(size=5), int(rng.integers(2)))


def test_hybrid_vgg_identity_scaling_gradients():
    mdl = hybrid(4, feature_dim=3, spec=qnn.vgg_circuit(), scaling="identity")
    check_against_fd(mdl, np.array([0.3, -0.7, 1.1]), 1)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_classical_gradients_match_fd(seed):
    rng = np.random.default_rng(seed)
    mdl = M.ClassicalModel.create(6, 5, seed)
    mdl.linear1.bias[:] = rng.normal(scale=0.3, size=5)
    check_against_fd(mdl, rng.normal(size=6), int(rng.integers(2)))


def test_duplicate_logits_gradient_flows():
    mdl = hybrid(0)
    mdl.linear2.weights[:] = 0
    mdl.linear2.bias[:] = 0
    _, grads, _ = M.loss_grads(mdl, np.ones(5), 0)
    assert np.allclose(grads["linear2.bias"], [-0.5, 0.5], atol=1e-15)


def test_dead_relu_blocks_input_gradient():
    lin1 = nn.LinearLayer(np.ones((3, 2)), -100 * np.ones(3))
    mdl = M.ClassicalModel(lin1, nn.LinearLayer(np.ones((2, 3)), np.zeros(2)))
    _, _, gx = M.loss_grads(mdl, np.array([1.0, 2.0]), 1)
    assert np.array_equal(gx, [0.0, 0.0])


def test_batch_gradient_is_mean(rng):
    mdl = hybrid(1)
    X, y = rng.normal(size=(4, 5)), np.array([0, 1, 1, 0])
    loss, grads, gx = M.batch_loss_grads(mdl, X, y)
    singles = [M.loss_grads(mdl, X[i], y[i]) for i in range(4)]
    assert loss == pytest.approx(np.mean([s[0] for s in singles]), abs=1e-14)
    for name in grads:
        assert np.allclose(grads[name], np.mean([s[1][name] for s in singles], axis=0), atol=1e-14)
    assert np.allclose(gx, np.stack([s[2] for s in singles]), atol=1e-14)


def test_input_gradients_leave_buffers_and_features(rng):
    mdl = hybrid(2)
    X = rng.normal(size=(3, 5))
    X.setflags(write=False)
    before = mdl.linear1.grad_weights.copy()
    g = M.input_gradients(mdl, X, [0, 1, 0])
    assert np.array_equal(mdl.linear1.grad_weights, before)
    full = M.batch_loss_grads(mdl, X, [0, 1, 0])[2]
    assert np.allclose(g, full, atol=1e-14)


# ---------------------------------------------------------------- training / evaluation

def test_default_tuned_configs():
    c = M.default_train_config("hybrid-alex")
    assert (c.batch_size, c.learning_rate, c.step_size, c.optimizer) == (8, 0.00291, 9, "adam")
    c = M.default_train_config("hybrid-vgg")
    assert (c.batch_size, c.learning_rate, c.step_size) == (2, 0.000194, 8)
    c = M.default_train_config("classical-alex")
    assert (c.batch_size, c.learning_rate, c.step_size) == (64, 0.000269, 9)
    c = M.default_train_config("classical-vgg")
    assert (c.batch_size, c.learning_rate, c.step_size) == (32, 0.000697, 8)
    assert c.epochs == 25


def test_separable_oracle(separable2d):
    train, test = separable2d
    acc = oracles.logistic_regression_accuracy(train.features, train.labels, test.features, test.labels)
    assert acc >= 0.95


def test_classical_learns_separable(separable2d):
    train, test = separable2d
    mdl = M.build_model("classical-alex", 2, seed=0)
    M.train(mdl, train, M.default_train_config("classical-alex", 0, "desk"))
    assert M.accuracy(mdl, test) >= 0.95


def test_hybrid_learns_separable(separable2d):
    train, test = separable2d
    mdl = M.build_model("hybrid-alex", 2, seed=0)
    _, hist = M.train(mdl, train, M.default_train_config("hybrid-alex", 0), test)
    assert len(hist) == 25
    assert M.accuracy(mdl, test) >= 0.90


def test_training_is_deterministic(separable2d):
    train, _ = separable2d
    runs = []
    for _ in range(2):
        mdl = M.build_model("hybrid-vgg", 2, seed=5)
        _, hist = M.train(mdl, train, M.default_train_config("hybrid-vgg", 5, "desk", epochs=2))
        runs.append((mdl, hist))
    for (_, a), (_, b) in zip(runs[0][0].named_parameters(), runs[1][0].named_parameters()):
        assert np.array_equal(a, b)
    assert runs[0][1] == runs[1][1]


def test_lr_schedule_in_history(separable2d):
    train, _ = separable2d
    _, hist = M.train(M.build_model("classical-vgg", 2), train,
                      M.default_train_config("classical-vgg", 0, epochs=10, step_size=4))
    lrs = [h["learning_rate"] for h in hist]
    assert lrs[:4] == [0.000697] * 4 and lrs[4] == pytest.approx(0.0000697) and lrs[8] == pytest.approx(0.00000697)


def test_train_rejects_single_class():
    ds = data.Dataset(np.zeros((4, 2)), [1, 1, 1, 1])
    with pytest.raises(data.DatasetError):
        M.train(M.build_model("classical-vgg", 2), ds, M.TrainConfig(epochs=1))


def test_evaluate_perfect_and_constant():
    X = np.r_[np.full((5, 1), -1.0), np.full((5, 1), 1.0)]
    y = np.array([0] * 5 + [1] * 5)
    ds = data.Dataset(X, y)
    perfect = M.ClassicalModel(nn.LinearLayer([[1.0], [-1.0]], [0.0, 0.0]),
                               nn.LinearLayer([[-1.0, 1.0], [1.0, -1.0]], [0.0, 0.0]))
    cm = M.evaluate(perfect, ds)
    assert cm.tp + cm.tn == 10 and cm.fp == cm.fn == 0
    constant = M.ClassicalModel(nn.LinearLayer([[0.0]], [0.0]), nn.LinearLayer([[0.0], [0.0]], [0.0, 1.0]))
    cm = M.evaluate(constant, ds)
    assert (cm.tp + cm.tn) / cm.total == 0.5


def test_predict_tie_goes_to_zero():
    mdl = M.ClassicalModel(nn.LinearLayer([[0.0]], [0.0]), nn.LinearLayer([[0.0], [0.0]], [0.0, 0.0]))
    assert M.predict(mdl, [[3.0]]).tolist() == [0]


def test_predict_shots_deterministic(rng):
    mdl = hybrid(3)
    X = rng.normal(size=(4, 5))
    a = M.predict_shots(mdl, X, shots=200, seed=1)
    assert np.array_equal(a, M.predict_shots(mdl, X, shots=200, seed=1))
    assert set(a.tolist()) <= {0, 1}


# ---------------------------------------------------------------- checkpoints

@pytest.mark.parametrize("variant", sorted(M.VARIANTS))
def test_checkpoint_round_trip_bitwise(variant, tmp_path, rng):
    mdl = M.build_model(variant, 5, seed=2)
    for _, arr in mdl.named_parameters():
        arr[:] = rng.normal(size=arr.shape)
    cfg = M.default_train_config(variant, 2)
    p = tmp_path / "ck.json"
    M.save_checkpoint(mdl, p, cfg)
    back, back_cfg = M.load_checkpoint(p)
    X = rng.normal(size=(6, 5))
    assert np.array_equal(M.forward(mdl, X)[0], M.forward(back, X)[0])
    assert back_cfg == cfg
    M.save_checkpoint(back, tmp_path / "again.json", back_cfg)
    assert (tmp_path / "again.json").read_bytes() == p.read_bytes()


def test_truncated_checkpoint(tmp_path):
    p = tmp_path / "ck.json"
    M.save_checkpoint(M.build_model("hybrid-alex", 3), p)
    p.write_text(p.read_text()[:200])
    with pytest.raises(M.CheckpointError, match="line"):
        M.load_checkpoint(p)


def test_checkpoint_missing_field_named(tmp_path):
    d = M.checkpoint_dict(M.build_model("hybrid-alex", 3))
    del d["params"]["theta"]
    with pytest.raises(M.CheckpointError, match="params.theta"):
        M.model_from_dict(d)


def test_checkpoint_width_mismatch():
    d = M.checkpoint_dict(M.build_model("hybrid-alex", 3))
    d["params"]["linear1"]["weights"].append([0.0, 0.0, 0.0])
    d["params"]["linear1"]["bias"].append(0.0)
    with pytest.raises(M.CheckpointError, match="linear1 output dim"):
        M.model_from_dict(d)


def test_checkpoint_is_plain_json(tmp_path):
    p = tmp_path / "ck.json"
    M.save_checkpoint(M.build_model("classical-vgg", 3), p)
    d = json.loads(p.read_text())
    assert d["schema"] == M.CHECKPOINT_SCHEMA and d["architecture"]["hidden"] == 2
