"""Log-densities, step weight functions, selection normalizing constants, priors."""

from __future__ import annotations

import math
from statistics import NormalDist
from typing import NamedTuple

import numpy as np

from . import kernels as K
from .model import ModelSpec, ValidationError, WeightFunction

_STD_NORMAL = NormalDist()
I_UNDERFLOW = 1e-300


def norm_cdf(x: float) -> float:
    return K.norm_cdf(float(x))


def norm_sf(x: float) -> float:
    return K.norm_sf(float(x))


def norm_ppf(p: float) -> float:
    """Standard normal quantile (Wichura AS241, as shipped in :mod:`statistics`)."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {p}")
    return _STD_NORMAL.inv_cdf(p)


def z_cutpoints(wf: WeightFunction) -> np.ndarray:
    """Ascending z thresholds at which ``wf`` changes value.

    Two-sided cutpoints are returned mirrored, e.g. ``[-1.96, 1.96]`` for a
    two-sided .05 step; :func:`interval_cutpoints` gives the one-sided
    magnitudes the kernels work with.
    """
    pos = interval_cutpoints(wf)
    if wf.side == "two-sided":
        pts = np.concatenate([-pos, pos])
    else:
        pts = pos
    return np.unique(pts)


def interval_cutpoints(wf: WeightFunction) -> np.ndarray:
    """Ascending thresholds on z (one-sided) or |z| (two-sided), one per alpha."""
    if wf.side == "two-sided":
        cut = [norm_ppf(1.0 - a / 2.0) for a in wf.alphas]
    else:
        cut = [norm_ppf(1.0 - a) for a in wf.alphas]
    return np.asarray(cut, dtype=float)


def _side_code(wf: WeightFunction) -> int:
    return K.TWO_SIDED if wf.side == "two-sided" else K.ONE_SIDED


def re_log_density(y, se, mu, tau):
    """log Normal(y | mu, tau^2 + se^2)."""
    se = np.asarray(se, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if np.any(se <= 0) or np.any(tau < 0):
        raise ValidationError("re_log_density needs se > 0 and tau >= 0")
    v = tau * tau + se * se
    r = (np.asarray(y, dtype=float) - mu) ** 2 / v
    out = -0.5 * r - 0.5 * np.log(v) - K.LOG_SQRT_2PI
    return float(out) if np.ndim(out) == 0 else out


def weight_at(wf: WeightFunction, z: float) -> float:
    """Relative publication weight of a study with test statistic ``z``."""
    if wf.is_constant:
        return 1.0
    om = wf.omega_array()
    return float(om[K.interval_index(float(z), interval_cutpoints(wf), _side_code(wf))])


def selection_integral_I(mu: float, tau: float, wf: WeightFunction, se: float) -> float:
    """Expected publication weight of Normal(mu, tau^2 + se^2) under ``wf``.

    Closed form: ``omega_0 + sum_j (omega_j - omega_{j-1}) P(z beyond cutpoint j)``.
    """
    if se <= 0 or tau < 0:
        raise ValidationError("selection_integral_I needs se > 0 and tau >= 0")
    if wf.is_constant:
        return 1.0
    sd = math.sqrt(tau * tau + se * se)
    return float(K.selection_mass(float(mu), sd, float(se), interval_cutpoints(wf), wf.omega_array(), _side_code(wf)))


def weighted_normal_log_density(y, se, mu, tau, wf: WeightFunction) -> float:
    base = re_log_density(y, se, mu, tau)
    if wf.is_constant:
        return base
    mass = selection_integral_I(mu, tau, wf, se)
    if mass < I_UNDERFLOW:
        raise ValidationError(f"selection mass underflow (I={mass:.3g}) at mu={mu}, tau={tau}, se={se}, omegas={wf.omegas}")
    return base + math.log(weight_at(wf, y / se)) - math.log(mass)


# ---------------------------------------------------------------------------
# kernel encoding of a ModelSpec
# ---------------------------------------------------------------------------


class KernelCode(NamedTuple):
    icode: np.ndarray
    fcode: np.ndarray
    alpha: np.ndarray
    cut: np.ndarray


def kernel_code(spec: ModelSpec) -> KernelCode:
    icode = np.zeros(5, dtype=np.int64)
    fcode = np.zeros(6)
    if spec.has_effect:
        icode[0] = K.MU_NORMAL
        fcode[0], fcode[1] = spec.effect.params
    else:
        fcode[0] = spec.effect.params[0]
    if spec.has_heterogeneity:
        icode[1] = K.TAU_INVGAMMA
        fcode[2], fcode[3] = spec.heterogeneity.params
    else:
        fcode[2] = spec.heterogeneity.params[0]
    kind = spec.bias.kind
    alpha = np.ones(1)
    cut = np.zeros(0)
    icode[4] = 1
    if kind in ("pet", "peese"):
        icode[2] = K.BIAS_PET if kind == "pet" else K.BIAS_PEESE
        fcode[4] = spec.bias.prior.params[0]
    elif kind == "selection":
        wf = spec.bias.weight_function
        icode[2] = K.BIAS_SELECTION
        icode[3] = _side_code(wf)
        icode[4] = wf.n_intervals
        alpha = np.asarray(spec.bias.prior.params, dtype=float)
        fcode[5] = math.lgamma(alpha.sum()) - sum(math.lgamma(a) for a in alpha)
        cut = interval_cutpoints(wf)
    return KernelCode(icode, fcode, alpha, cut)


def params_to_vector(spec: ModelSpec, theta) -> tuple[float, float, float, np.ndarray]:
    """Constrained (mu, tau, beta, full omega) from a mapping or a vector in ``param_names`` order."""
    names = spec.param_names
    if not isinstance(theta, dict):
        vals = np.atleast_1d(np.asarray(theta, dtype=float))
        if vals.size != len(names):
            raise ValidationError(f"expected {len(names)} parameters {names}, got {vals.size}")
        theta = dict(zip(names, vals.tolist()))
    mu = theta.get("mu", spec.effect.params[0] if not spec.has_effect else None)
    tau = theta.get("tau", spec.heterogeneity.params[0] if not spec.has_heterogeneity else None)
    beta = theta.get("beta", 0.0)
    if mu is None or tau is None:
        raise ValidationError(f"missing parameters; need {names}")
    if spec.bias.kind == "selection":
        n_int = spec.bias.weight_function.n_intervals
        omega = np.array([theta[f"omega[{j}]"] for j in range(1, n_int)] + [1.0])
    else:
        omega = np.ones(1)
    return float(mu), float(tau), float(beta), omega


def log_prior(spec: ModelSpec, theta) -> float:
    """Log prior density of constrained parameters; ``-inf`` outside the support.

    Spike components are fixed and contribute nothing.
    """
    mu, tau, beta, omega = params_to_vector(spec, theta)
    code = kernel_code(spec)
    if spec.bias.kind == "selection":
        if np.any(omega <= 0) or np.any(omega > 1) or np.any(np.diff(omega) < 0):
            return -math.inf
    return float(K.log_prior_params(mu, tau, beta, omega, code.icode, code.fcode, code.alpha))


def log_likelihood(spec: ModelSpec, theta, y, se) -> float:
    mu, tau, beta, omega = params_to_vector(spec, theta)
    code = kernel_code(spec)
    y = np.ascontiguousarray(y, dtype=float)
    se = np.ascontiguousarray(se, dtype=float)
    return float(K.log_lik_params(mu, tau, beta, omega, y, se, code.icode, code.cut))


def unconstrain(spec: ModelSpec, theta) -> np.ndarray:
    """Inverse of the sampler transform: constrained parameters to the working scale."""
    mu, tau, beta, omega = params_to_vector(spec, theta)
    out = []
    if spec.has_effect:
        out.append(mu)
    if spec.has_heterogeneity:
        out.append(math.log(tau))
    if spec.bias.kind in ("pet", "peese"):
        out.append(math.log(beta))
    if spec.bias.kind == "selection":
        delta = np.diff(omega, prepend=0.0)
        n_int = omega.size
        rem = 1.0
        for k in range(n_int - 1):
            zk = delta[k] / rem
            out.append(math.log(zk) - math.log1p(-zk) + math.log(n_int - 1 - k))
            rem -= delta[k]
    return np.asarray(out, dtype=float)
