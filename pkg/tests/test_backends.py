import numpy as np
import pytest

from conftest import random_suite
from multitask_ggm import ProblemSpec, solve
from multitask_ggm import _backend

compiled = pytest.mark.skipif("compiled" not in _backend.available(),
                              reason="extension not built")


def test_python_always_available():
    assert "python" in _backend.available()
    assert _backend.get_kernel("python").name == "python"


def test_unknown_backend():
    with pytest.raises(ValueError):
        _backend.get_kernel("fortran")


@compiled
def test_default_prefers_compiled(monkeypatch):
    monkeypatch.delenv("MULTITASK_GGM_BACKEND", raising=False)
    assert _backend.get_kernel().name in ("compiled", "python")
    assert _backend.get_kernel("compiled").name == "compiled"


@compiled
@pytest.mark.parametrize("norm", ["2", "inf"])
@pytest.mark.parametrize("pen", [False, True])
def test_backends_agree(rng, norm, pen):
    for _ in range(4):
        suite = random_suite(rng, int(rng.integers(3, 9)),
                             int(rng.integers(1, 5)))
        spec = ProblemSpec(rho=float(rng.uniform(0.5, 5)), norm=norm,
                           penalize_diagonal=pen, max_sweeps=20)
        a, ra = solve(suite, spec, backend="python")
        b, rb = solve(suite, spec, backend="compiled")
        assert ra.backend == "python" and rb.backend == "compiled"
        assert np.max(np.abs(a.matrices - b.matrices)) < 1e-10
        assert ra.sweeps_run == rb.sweeps_run
        assert np.allclose(ra.objective_trace, rb.objective_trace,
                           rtol=1e-12)
        assert ra.newton_fallbacks == rb.newton_fallbacks


@compiled
def test_compiled_rejects_bad_layout(rng):
    kern = _backend.get_kernel("compiled")
    omega = np.asfortranarray(np.stack([np.eye(3)] * 2))
    with pytest.raises((ValueError, TypeError)):
        kern.update_variable(omega, omega.copy(), omega.copy(),
                             np.ones(2), 0, 1.0, True, False,
                             np.zeros(3, np.uint8), 10)
