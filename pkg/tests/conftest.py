import numpy as np
import pytest

from deepsched.env import ChannelParams, Scenario, SchedulingEnv, ServiceClass


def table_1a(rho=0.5, K=10, W=1e6, n_slots=100, seed=0):
    classes = (ServiceClass(2000.0, 2, 1.0, 0.3, name="c1"),
               ServiceClass(16000.0, 10, 1.0, 0.2, name="c2"))
    return Scenario(classes, K=K, W=W, channel=ChannelParams(rho=rho), n_slots=n_slots, seed=seed)


@pytest.fixture
def scenario():
    return table_1a()


@pytest.fixture
def env(scenario):
    e = SchedulingEnv(scenario)
    e.reset(0)
    return e


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def central_diff(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. the entries of ``x`` (modified in place)."""
    g = np.zeros(x.size)
    flat = x.reshape(-1)
    for i in range(x.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g.reshape(x.shape)


def rel_err(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE = {}


def record(criterion: str, ok: bool, detail: str = ""):
    ACCEPTANCE[criterion] = (bool(ok), detail)
    print(f"{criterion} {'PASS' if ok else 'FAIL'}  {detail}")
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE, key=lambda s: int(s[1:])):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"{k:<4}{'PASS' if ok else 'FAIL'}  {detail}")
