import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=30, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_state(rng, n, batch=()):
    z = rng.standard_normal(tuple(batch) + (1 << n,)) + 1j * rng.standard_normal(tuple(batch) + (1 << n,))
    return z / np.linalg.norm(z, axis=-1, keepdims=True)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(results):
        ok, detail = results[num]
        terminalreporter.write_line(f"CRITERION {num:2d} {'PASS' if ok else 'FAIL'}: {detail}")
