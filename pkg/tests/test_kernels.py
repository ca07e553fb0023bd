"""The compiled loop kernels and the numpy fallbacks must agree."""

import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from zcurvemeta import kernels as K
from zcurvemeta.densities import kernel_code

from conftest import spec_named

NAMES = ["mu-tau-none", "mu0-tau0-S1", "mu-tau0-S3", "mu-tau-S4", "mu0-tau-S6", "mu-tau-PET", "mu-tau-PEESE"]


@pytest.mark.parametrize("name", NAMES)
def test_log_post_backends_agree(space, data30, name):
    spec = spec_named(space, name)
    code = kernel_code(spec)
    U = np.random.default_rng(1).normal(0, 1.0, (64, spec.n_params))
    a = K.log_post_batch_loop(U, data30.y, data30.se, *code)
    b = K.log_post_batch_np(U, data30.y, data30.se, *code)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-9)
    assert K.log_post_loop(U[0], data30.y, data30.se, *code) == pytest.approx(b[0], rel=1e-12)
    np.testing.assert_allclose(K.constrain_batch_loop(U, code.icode, code.fcode),
                               K.constrain_batch_np(U, code.icode, code.fcode), rtol=1e-13, atol=1e-15)


@pytest.mark.parametrize("name", ["mu-tau-S2", "mu-tau-PET"])
def test_run_chain_backends_agree(space, data30, name):
    spec = spec_named(space, name)
    code = kernel_code(spec)
    d = spec.n_params
    rng = np.random.default_rng(2)
    n = 300
    noise = rng.standard_normal((n, d))
    log_unif = np.log(rng.random((n, d)))
    args = (np.zeros(d), 100, 200, 100, 0.3, np.full(d, -0.7), noise, log_unif, data30.y, data30.se, *code)
    ka, wa, ca, sa = K.run_chain_loop(*args)
    kb, wb, cb, sb = K.run_chain_np(*args)
    # accept/reject decisions can differ only if a log ratio lands within rounding of a uniform draw
    np.testing.assert_allclose(ka, kb, rtol=1e-9, atol=1e-9)
    np.testing.assert_array_equal(wa, wb)
    np.testing.assert_array_equal(ca, cb)


@given(st.integers(0, 10_000))
def test_density_and_mass_backends_agree(seed):
    rng = np.random.default_rng(seed)
    n = 5
    mu = rng.normal(0.2, 0.3, n)
    tau = np.abs(rng.normal(0.1, 0.1, n))
    beta = np.abs(rng.normal(0.5, 0.5, n))
    omega = np.sort(rng.uniform(0.01, 1, (n, 3)), axis=1)
    omega[:, -1] = 1.0
    cut = np.array([1.2815515655446004, 1.6448536269514722])
    se = rng.uniform(0.05, 0.6, 7)
    grid = np.linspace(-6, 6, 61)
    for bias_kind in (K.BIAS_NONE, K.BIAS_SELECTION, K.BIAS_PET, K.BIAS_PEESE):
        for side in (K.ONE_SIDED, K.TWO_SIDED):
            np.testing.assert_allclose(
                K.study_mass_loop(mu, tau, beta, omega, bias_kind, side, cut, se),
                K.study_mass_np(mu, tau, beta, omega, bias_kind, side, cut, se), rtol=1e-12, atol=1e-15)
            for mode in (K.MODE_FITTED, K.MODE_EXTRAPOLATED, K.MODE_EXTRAPOLATED_PRINTED):
                np.testing.assert_allclose(
                    K.z_density_loop(mu, tau, beta, omega, bias_kind, side, cut, se, grid, mode),
                    K.z_density_np(mu, tau, beta, omega, bias_kind, side, cut, se, grid, mode),
                    rtol=1e-11, atol=1e-15)


def test_env_flag_forces_numpy_backend():
    env = dict(os.environ, ZCURVEMETA_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", "import zcurvemeta; print(zcurvemeta.backend())"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
