import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from streamdeq import _kernels
from streamdeq.cell import cell_apply, make_random_cell
from streamdeq.linalg import spectral_norm_estimate
from streamdeq.solver import SolverConfig, reference_solve, solve
from streamdeq.stream import stream_infer

BACKENDS = ["numpy", "numba"]


def backend_in_fresh_process(value):
    env = dict(os.environ)
    env.pop("STREAMDEQ_NO_NUMBA", None)
    if value is not None:
        env["STREAMDEQ_NO_NUMBA"] = value
    code = "from streamdeq import _kernels; print(_kernels.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return out.stdout.strip()


@pytest.mark.parametrize("value, expected", [
    (None, "numba"), ("", "numba"), ("0", "numba"), ("1", "numpy"), ("true", "numpy"),
])
def test_env_flag_selects_backend(value, expected):
    assert backend_in_fresh_process(value) == expected


def test_unknown_backend():
    with pytest.raises(ValueError, match="unknown backend"):
        _kernels.get_kernels("cuda")


@given(seed=st.integers(0, 10_000), dz=st.integers(1, 40), act=st.sampled_from(["tanh", "identity"]),
       method=st.sampled_from(["picard", "broyden"]), iters=st.integers(1, 30))
def test_backends_agree(seed, dz, act, method, iters):
    cell = make_random_cell(seed, dz, 5, activation=act)
    rng = np.random.default_rng(seed)
    x, z0 = rng.standard_normal(5), rng.standard_normal(dz)
    np.testing.assert_allclose(cell_apply(cell, z0, x, "numpy"), cell_apply(cell, z0, x, "numba"),
                               rtol=0, atol=1e-13)
    cfg = SolverConfig(method, iters, 0.0)
    a, b = solve(cell, x, z0, cfg, "numpy"), solve(cell, x, z0, cfg, "numba")
    # with tol 0 a run stops early only on an exactly zero residual, which is rounding-dependent
    if not (a.converged or b.converged):
        assert a.iterations == b.iterations == iters
    np.testing.assert_allclose(a.z, b.z, rtol=0, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_reference_agrees_across_backends(seed):
    cell = make_random_cell(seed, 64, 16)
    x = np.random.default_rng(seed).standard_normal(16)
    a, b = reference_solve(cell, x, "numpy").z, reference_solve(cell, x, "numba").z
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_power_iteration_agrees():
    m = np.random.default_rng(0).standard_normal((20, 20))
    a = spectral_norm_estimate(m, 200, backend="numpy")
    b = spectral_norm_estimate(m, 200, backend="numba")
    assert abs(a - b) <= 1e-12 * a


@pytest.mark.parametrize("backend", BACKENDS)
def test_bitwise_guarantees_hold_within_each_backend(backend):
    cell = make_random_cell(1, 32, 16)
    x = np.random.default_rng(1).standard_normal(16)
    z0 = np.random.default_rng(2).standard_normal(32)
    p = solve(cell, x, z0, SolverConfig("picard", 1, 0.0), backend)
    b = solve(cell, x, z0, SolverConfig("broyden", 1, 0.0), backend)
    assert np.array_equal(p.z, b.z)
    cfg = SolverConfig("picard", 1, 0.0)
    recs = stream_infer(cell, [x] * 6, "stream-zero", 3, cfg, keep_states=True, backend=backend)
    once = solve(cell, x, np.zeros(32), cfg.with_iters(18), backend)
    assert np.array_equal(recs[-1].z_final, once.z)


@pytest.mark.parametrize("backend", BACKENDS)
def test_divergence_status_in_each_backend(backend):
    from streamdeq.solver import DivergenceError

    cell = make_random_cell(0, 4, 2, activation="identity")
    for method in ("picard", "broyden"):
        with pytest.raises(DivergenceError):
            solve(cell, np.array([1e308, 0.0]), np.zeros(4), SolverConfig(method, 3, 0.0), backend)
