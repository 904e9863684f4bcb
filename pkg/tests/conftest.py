import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from refractor_lab.hypotheses import build_example_scene

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def unit(v):
    v = np.asarray(v, float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def random_unit(rng, n, size=None):
    shape = (n,) if size is None else (size, n)
    return unit(rng.normal(size=shape))


def admissible_triple(rng, n, kappa=None):
    """``(x, Y, X0, kappa)`` with ``Y`` inside the refraction cone at ``X0``."""
    kappa = rng.uniform(0.2, 0.8) if kappa is None else kappa
    x0 = random_unit(rng, n)
    X0 = rng.uniform(1.0, 2.0) * x0
    while True:
        m = random_unit(rng, n)
        if m @ x0 >= kappa + 0.05:
            break
    Y = X0 + rng.uniform(3.0, 20.0) * m
    x = unit(x0 + 0.3 * random_unit(rng, n))
    return x, Y, X0, kappa


@pytest.fixture(scope="session")
def scene3():
    return build_example_scene(0.5, 2.0, None, 1.0, 3)


@pytest.fixture(scope="session")
def scene2():
    return build_example_scene(0.5, 2.0, None, 1.0, 2)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[k])
