import time

import numpy as np
import pytest

from hcqlab import data
from hcqlab import model as M

BENCH_DATA_SEED = 7
BENCH_MODEL_SEED = 0


def pytest_configure(config):
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def record_criterion(request):
    def record(name, ok, detail=""):
        line = f"{name}: {'PASS' if ok else 'FAIL'} {detail}".rstrip()
        request.config._acceptance_lines.append(line)
        print(line)
        return ok
    return record


@pytest.fixture(scope="session")
def bench_split():
    """231 synthetic samples split 182/49 and standardized."""
    ds = data.synth_dataset(231, 8, 6.0, BENCH_DATA_SEED)
    train, test = data.split(ds, seed=BENCH_DATA_SEED, n_train=182)
    train, test, _ = data.normalize(train, test)
    return train, test


@pytest.fixture(scope="session")
def bench_models(bench_split):
    """The four variants trained for 25 epochs with the desk profile.

    Maps variant -> (model, history, training seconds).
    """
    train, test = bench_split
    out = {}
    for variant in M.VARIANTS:
        start = time.perf_counter()
        mdl = M.build_model(variant, train.feature_dim, BENCH_MODEL_SEED)
        cfg = M.default_train_config(variant, BENCH_MODEL_SEED, "desk")
        mdl, history = M.train(mdl, train, cfg, test)
        out[variant] = (mdl, history, time.perf_counter() - start)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
