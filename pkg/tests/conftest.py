import numpy as np
import pytest

from kwspot.trainer import init_lstm


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_lstm(n_i, n_c, n_r, n_o=2, seed=0, scale=0.8):
    """LSTM with every tensor, biases included, drawn from U[-scale, scale]."""
    p = init_lstm(n_i, n_c, n_r, n_o, seed=seed)
    r = np.random.default_rng(seed + 1)
    for t in p.tensors().values():
        t[...] = r.uniform(-scale, scale, t.shape)
    return p


# ---------------------------------------------------------------- acceptance report

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, text): acceptance criterion number and summary")
    config.addinivalue_line("markers", "slow: desk-scale training, minutes of CPU")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, text = mark.args
    ok = _CRITERIA.get(n, (text, True))[1]
    if rep.when == "call" or rep.failed:
        ok = ok and rep.passed
        _CRITERIA[n] = (text, ok)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        text, ok = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {text}")
