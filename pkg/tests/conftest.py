import numpy as np
import pytest

from quadaware.harness.collect import collect_training_data, default_collection, fit_model
from quadaware.harness.config import ScenarioConfig, load_config
from quadaware.oracle.gp import Dataset, Hyperparams, condition


ACCEPTANCE_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_LINES] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def report(request):
    """Record one acceptance line; it is printed now and again in the terminal summary."""
    def _report(label: str, ok: bool, detail: str = "") -> bool:
        line = f"criterion {label}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        print(line)
        request.config.stash[ACCEPTANCE_LINES].append(line)
        return ok
    return _report


@pytest.fixture
def cfg() -> ScenarioConfig:
    return load_config()


@pytest.fixture
def short_cfg() -> ScenarioConfig:
    """Two-second horizon for fast closed-loop unit tests."""
    return load_config().replace(**{"simulation.horizon": 2.0, "simulation.transient_end": 1.0})


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def trained(tmp_path_factory):
    """Dataset and fitted model from the default collection, written once per session."""
    base = load_config()
    out = tmp_path_factory.mktemp("trained")
    data = collect_training_data(default_collection(base))
    data.save(out / "dataset.csv")
    model = fit_model(base, data)
    model.save(out / "model.json", out / "dataset.csv")
    return {"dir": out, "data": data, "model": model, "cfg": base}


def small_model(rng, n=30, d=20, normalize=False, noise=1e-2, lengthscale=1.5):
    Z = rng.normal(size=(n, d))
    Z[:, -1] = 1.0
    Y = np.column_stack([np.sin(Z[:, j]) + 0.1 * Z[:, (j + 1) % d] for j in range(6)])
    hyper = Hyperparams(np.full(6, 1.0), np.full((6, d), lengthscale), np.full(6, noise))
    return condition(hyper, Dataset(Z, Y, noise, normalize))
