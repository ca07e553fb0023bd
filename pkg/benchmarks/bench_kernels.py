"""Time the compiled kernels against their numpy fallbacks.

Run with ``python3 benchmarks/bench_kernels.py``. Both paths are imported
from the same module, so no environment flag is needed here.
"""

import argparse
import time

import numpy as np

from zcurvemeta import kernels as K
from zcurvemeta._jit import HAS_NUMBA
from zcurvemeta.densities import kernel_code
from zcurvemeta.evidence import default_model_space


def _time(fn, repeat):
    fn()  # warm-up (includes compilation on the first call)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--studies", type=int, default=300)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    n = rng.integers(10, 101, args.studies) / 2
    se = np.sqrt(2 / n)
    y = rng.normal(0.3, np.sqrt(se**2 + 0.15**2))
    spec = default_model_space().specs[default_model_space().index("mu-tau-S4")]
    code = kernel_code(spec)
    d = spec.n_params
    U = rng.normal(0, 0.5, (2000, d))
    steps = 2000
    noise = rng.standard_normal((steps, d))
    log_unif = np.log(rng.random((steps, d)))
    mu = rng.normal(0.2, 0.05, 200)
    tau = np.abs(rng.normal(0.1, 0.03, 200))
    beta = np.zeros(200)
    omega = np.sort(rng.random((200, 4)), axis=1)
    omega[:, -1] = 1.0
    grid = np.linspace(-6, 6, 601)

    cases = {
        "log_post_batch (2000 points)": (
            lambda: K.log_post_batch_loop(U, y, se, *code),
            lambda: K.log_post_batch_np(U, y, se, *code)),
        "run_chain (2000 steps)": (
            lambda: K.run_chain_loop(np.zeros(d), 1000, 1000, 1000, 0.3, np.full(d, -0.7), noise, log_unif, y, se, *code),
            lambda: K.run_chain_np(np.zeros(d), 1000, 1000, 1000, 0.3, np.full(d, -0.7), noise, log_unif, y, se, *code)),
        "study_mass (200 draws)": (
            lambda: K.study_mass_loop(mu, tau, beta, omega, K.BIAS_SELECTION, K.ONE_SIDED, code.cut, se),
            lambda: K.study_mass_np(mu, tau, beta, omega, K.BIAS_SELECTION, K.ONE_SIDED, code.cut, se)),
        "z_density (200 draws x 601 points)": (
            lambda: K.z_density_loop(mu, tau, beta, omega, K.BIAS_SELECTION, K.ONE_SIDED, code.cut, se, grid, K.MODE_FITTED),
            lambda: K.z_density_np(mu, tau, beta, omega, K.BIAS_SELECTION, K.ONE_SIDED, code.cut, se, grid, K.MODE_FITTED)),
    }
    label = "numba" if HAS_NUMBA else "loop (no numba)"
    print(f"{'kernel':<38}{label:>16}{'numpy':>12}{'ratio':>9}")
    for name, (fast, slow) in cases.items():
        a = _time(fast, args.repeat)
        b = _time(slow, args.repeat)
        print(f"{name:<38}{a * 1e3:>14.2f}ms{b * 1e3:>10.2f}ms{b / a:>9.1f}")


if __name__ == "__main__":
    main()
