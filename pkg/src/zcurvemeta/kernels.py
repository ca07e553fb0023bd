"""Hot numeric kernels.

Each kernel exists twice: an explicit-loop version compiled with numba
(``*_loop``) and a vectorized numpy version (``*_np``). The public names at
the bottom of the module bind to one of them depending on
:data:`zcurvemeta._jit.HAS_NUMBA`. Both versions implement the same
arithmetic and agree to rounding error; they are not guaranteed to be
bit-identical, so a given run is reproducible within one backend only.

A model is passed to the kernels as plain arrays (see
:func:`zcurvemeta.densities.kernel_code`):

``icode``  int64 ``[mu_kind, tau_kind, bias_kind, side, n_intervals]``
``fcode``  float64 ``[mu_a, mu_b, tau_a, tau_b, beta_scale, log_dirichlet_norm]``
``alpha``  float64 cumulative-Dirichlet concentrations, one per interval
``cut``    float64 ascending z thresholds (``n_intervals - 1`` of them)
"""

import math

import numpy as np
from scipy import special

from ._jit import HAS_NUMBA, njit

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
SQRT2 = math.sqrt(2.0)
LOG2 = math.log(2.0)
LOG_PI = math.log(math.pi)

MU_SPIKE, MU_NORMAL = 0, 1
TAU_SPIKE, TAU_INVGAMMA = 0, 1
BIAS_NONE, BIAS_SELECTION, BIAS_PET, BIAS_PEESE = 0, 1, 2, 3
ONE_SIDED, TWO_SIDED = 0, 1

MODE_FITTED, MODE_EXTRAPOLATED, MODE_EXTRAPOLATED_PRINTED = 0, 1, 2


# ---------------------------------------------------------------------------
# scalar building blocks (compiled when numba is present)
# ---------------------------------------------------------------------------


@njit
def norm_sf(x):
    return 0.5 * math.erfc(x / SQRT2)


@njit
def norm_cdf(x):
    return 0.5 * math.erfc(-x / SQRT2)


@njit
def _softplus(x):
    if x > 0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


@njit
def interval_index(z, cut, side):
    """Index of the weight interval containing ``z`` (0 = least significant)."""
    a = abs(z) if side == TWO_SIDED else z
    k = 0
    for c in cut:
        if a >= c:
            k += 1
    return k


@njit
def selection_mass(m, sd, se, cut, omega, side):
    """Expected publication weight of Normal(m, sd^2) with weights on x/se."""
    total = omega[0]
    for j in range(cut.shape[0]):
        c = cut[j] * se
        p = norm_sf((c - m) / sd)
        if side == TWO_SIDED:
            p += norm_sf((c + m) / sd)
        total += (omega[j + 1] - omega[j]) * p
    return total


@njit
def unpack(u, icode, fcode, omega):
    """Map unconstrained ``u`` to (mu, tau, beta, log|J|); fills ``omega`` in place."""
    idx = 0
    logjac = 0.0
    if icode[0] == MU_NORMAL:
        mu = u[idx]
        idx += 1
    else:
        mu = fcode[0]
    if icode[1] == TAU_INVGAMMA:
        tau = math.exp(u[idx])
        logjac += u[idx]
        idx += 1
    else:
        tau = fcode[2]
    beta = 0.0
    bias = icode[2]
    if bias == BIAS_PET or bias == BIAS_PEESE:
        beta = math.exp(u[idx])
        logjac += u[idx]
        idx += 1
    n_int = icode[4]
    if bias == BIAS_SELECTION:
        rem = 1.0
        acc = 0.0
        for k in range(n_int - 1):
            x = u[idx + k] - math.log(n_int - 1 - k)
            log_z = -_softplus(-x)
            log_1mz = -_softplus(x)
            logjac += log_z + log_1mz + math.log(rem)
            delta = rem * math.exp(log_z)
            rem -= delta
            acc += delta
            omega[k] = acc
        omega[n_int - 1] = 1.0
    else:
        for k in range(omega.shape[0]):
            omega[k] = 1.0
    return mu, tau, beta, logjac


@njit
def log_prior_params(mu, tau, beta, omega, icode, fcode, alpha):
    lp = 0.0
    if icode[0] == MU_NORMAL:
        r = (mu - fcode[0]) / fcode[1]
        lp += -0.5 * r * r - math.log(fcode[1]) - LOG_SQRT_2PI
    if icode[1] == TAU_INVGAMMA:
        if tau <= 0.0:
            return -np.inf
        a = fcode[2]
        b = fcode[3]
        lp += a * math.log(b) - math.lgamma(a) - (a + 1.0) * math.log(tau) - b / tau
    bias = icode[2]
    if bias == BIAS_PET or bias == BIAS_PEESE:
        if beta < 0.0:
            return -np.inf
        s = fcode[4]
        r = beta / s
        lp += LOG2 - LOG_PI - math.log(s) - math.log1p(r * r)
    if bias == BIAS_SELECTION:
        lp += fcode[5]
        prev = 0.0
        for j in range(icode[4]):
            delta = omega[j] - prev
            prev = omega[j]
            if delta <= 0.0:
                if alpha[j] != 1.0:
                    return -np.inf
                continue
            lp += (alpha[j] - 1.0) * math.log(delta)
    return lp


@njit
def log_lik_params(mu, tau, beta, omega, y, se, icode, cut):
    bias = icode[2]
    side = icode[3]
    tau2 = tau * tau
    total = 0.0
    for i in range(y.shape[0]):
        s = se[i]
        v = tau2 + s * s
        sd = math.sqrt(v)
        m = mu
        if bias == BIAS_PET:
            m += beta * s
        elif bias == BIAS_PEESE:
            m += beta * s * s
        r = (y[i] - m) / sd
        total += -0.5 * r * r - math.log(sd) - LOG_SQRT_2PI
        if bias == BIAS_SELECTION:
            w = omega[interval_index(y[i] / s, cut, side)]
            mass = selection_mass(m, sd, s, cut, omega, side)
            if w <= 0.0 or mass <= 0.0:
                return -np.inf
            total += math.log(w) - math.log(mass)
    return total


@njit
def log_post_loop(u, y, se, icode, fcode, alpha, cut):
    """Unnormalized log posterior on the unconstrained scale (incl. log-Jacobian)."""
    omega = np.empty(max(icode[4], 1))
    mu, tau, beta, logjac = unpack(u, icode, fcode, omega)
    lp = log_prior_params(mu, tau, beta, omega, icode, fcode, alpha)
    if not np.isfinite(lp):
        return -np.inf
    ll = log_lik_params(mu, tau, beta, omega, y, se, icode, cut)
    if not np.isfinite(ll):
        return -np.inf
    return ll + lp + logjac


@njit
def log_post_batch_loop(U, y, se, icode, fcode, alpha, cut):
    out = np.empty(U.shape[0])
    for r in range(U.shape[0]):
        out[r] = log_post_loop(U[r], y, se, icode, fcode, alpha, cut)
    return out


@njit
def constrain_batch_loop(U, icode, fcode):
    """Constrained parameters for each row: columns mu, tau, beta, omega_0..omega_{J-1}."""
    n_int = max(icode[4], 1)
    out = np.empty((U.shape[0], 3 + n_int))
    omega = np.empty(n_int)
    for r in range(U.shape[0]):
        mu, tau, beta, _ = unpack(U[r], icode, fcode, omega)
        out[r, 0] = mu
        out[r, 1] = tau
        out[r, 2] = beta
        for j in range(n_int):
            out[r, 3 + j] = omega[j]
    return out


@njit
def run_chain_loop(u0, n_warmup, n_keep, adapt_window, target, log_step0,
                   noise, log_unif, y, se, icode, fcode, alpha, cut):
    """Per-coordinate random-walk Metropolis with Robbins-Monro step adaptation.

    Adaptation runs for the first ``adapt_window`` warmup iterations and is
    frozen afterwards. ``noise`` and ``log_unif`` hold pre-drawn standard
    normal and log-uniform variates, one row per iteration.
    """
    d = u0.shape[0]
    u = u0.copy()
    log_step = log_step0.copy()
    lp = log_post_loop(u, y, se, icode, fcode, alpha, cut)
    kept = np.empty((n_keep, d))
    acc_warm = np.zeros(d)
    acc_keep = np.zeros(d)
    n_total = n_warmup + n_keep
    for t in range(n_total):
        for k in range(d):
            old = u[k]
            u[k] = old + math.exp(log_step[k]) * noise[t, k]
            lp_new = log_post_loop(u, y, se, icode, fcode, alpha, cut)
            accepted = 0.0
            if log_unif[t, k] < lp_new - lp:
                lp = lp_new
                accepted = 1.0
            else:
                u[k] = old
            if t < n_warmup:
                acc_warm[k] += accepted
                if t < adapt_window:
                    log_step[k] += (accepted - target) / (t + 1.0) ** 0.6
            else:
                acc_keep[k] += accepted
        if t >= n_warmup:
            kept[t - n_warmup] = u
    return kept, acc_warm, acc_keep, log_step


@njit
def study_mass_loop(mu, tau, beta, omega, bias_kind, side, cut, se):
    """Per-draw, per-study selection mass ``I`` (1 for non-selection draws)."""
    n_draw = mu.shape[0]
    out = np.ones((n_draw, se.shape[0]))
    if bias_kind != BIAS_SELECTION:
        return out
    for r in range(n_draw):
        t2 = tau[r] * tau[r]
        for i in range(se.shape[0]):
            s = se[i]
            sd = math.sqrt(t2 + s * s)
            out[r, i] = selection_mass(mu[r], sd, s, cut, omega[r], side)
    return out


@njit
def z_density_loop(mu, tau, beta, omega, bias_kind, side, cut, se, grid, mode):
    """Study-averaged predictive density of z for each draw (rows) on ``grid``."""
    n_draw = mu.shape[0]
    n_grid = grid.shape[0]
    n_study = se.shape[0]
    out = np.zeros((n_draw, n_grid))
    widx = np.empty(n_grid, dtype=np.int64)
    for g in range(n_grid):
        widx[g] = interval_index(grid[g], cut, side)
    for r in range(n_draw):
        t2 = tau[r] * tau[r]
        for i in range(n_study):
            s = se[i]
            sd = math.sqrt(t2 + s * s)
            m = mu[r]
            if mode == MODE_FITTED:
                if bias_kind == BIAS_PET:
                    m += beta[r] * s
                elif bias_kind == BIAS_PEESE:
                    m += beta[r] * s * s
            scale = 1.0
            mass = 1.0
            if bias_kind == BIAS_SELECTION:
                mass = selection_mass(m, sd, s, cut, omega[r], side)
                if mode == MODE_EXTRAPOLATED_PRINTED:
                    scale = mass
                else:
                    scale = 1.0 / mass
            zs = sd / s
            zm = m / s
            c = scale / (zs * n_study)
            for g in range(n_grid):
                x = (grid[g] - zm) / zs
                dens = c * math.exp(-0.5 * x * x - LOG_SQRT_2PI)
                if bias_kind == BIAS_SELECTION and mode == MODE_FITTED:
                    dens *= omega[r, widx[g]]
                out[r, g] += dens
    return out


# ---------------------------------------------------------------------------
# numpy fallbacks
# ---------------------------------------------------------------------------


def _norm_sf_np(x):
    return 0.5 * special.erfc(np.asarray(x) / SQRT2)


def _interval_index_np(z, cut, side):
    a = np.abs(z) if side == TWO_SIDED else np.asarray(z)
    return np.searchsorted(cut, a, side="right")


def _selection_mass_np(m, sd, se, cut, omega, side):
    """Broadcasting version; ``omega`` has intervals on its last axis."""
    omega = np.asarray(omega, dtype=float)
    total = omega[..., 0] * np.ones(np.broadcast(m, sd, se).shape)
    for j in range(cut.shape[0]):
        c = cut[j] * se
        p = _norm_sf_np((c - m) / sd)
        if side == TWO_SIDED:
            p = p + _norm_sf_np((c + m) / sd)
        total = total + (omega[..., j + 1] - omega[..., j]) * p
    return total


def _unpack_np(U, icode, fcode):
    """Vectorized :func:`unpack` over rows of ``U``; returns mu, tau, beta, omega, logjac."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    m = U.shape[0]
    idx = 0
    logjac = np.zeros(m)
    if icode[0] == MU_NORMAL:
        mu = U[:, idx].copy()
        idx += 1
    else:
        mu = np.full(m, fcode[0])
    if icode[1] == TAU_INVGAMMA:
        tau = np.exp(U[:, idx])
        logjac += U[:, idx]
        idx += 1
    else:
        tau = np.full(m, fcode[2])
    beta = np.zeros(m)
    bias = icode[2]
    if bias in (BIAS_PET, BIAS_PEESE):
        beta = np.exp(U[:, idx])
        logjac += U[:, idx]
        idx += 1
    n_int = max(int(icode[4]), 1)
    omega = np.ones((m, n_int))
    if bias == BIAS_SELECTION:
        rem = np.ones(m)
        acc = np.zeros(m)
        for k in range(n_int - 1):
            x = U[:, idx + k] - math.log(n_int - 1 - k)
            log_z = -np.logaddexp(0.0, -x)
            log_1mz = -np.logaddexp(0.0, x)
            logjac += log_z + log_1mz + np.log(rem)
            delta = rem * np.exp(log_z)
            rem = rem - delta
            acc = acc + delta
            omega[:, k] = acc
        omega[:, n_int - 1] = 1.0
    return mu, tau, beta, omega, logjac


def _log_prior_np(mu, tau, beta, omega, icode, fcode, alpha):
    lp = np.zeros(mu.shape[0])
    if icode[0] == MU_NORMAL:
        r = (mu - fcode[0]) / fcode[1]
        lp += -0.5 * r * r - math.log(fcode[1]) - LOG_SQRT_2PI
    if icode[1] == TAU_INVGAMMA:
        a, b = fcode[2], fcode[3]
        with np.errstate(divide="ignore", invalid="ignore"):
            lp += np.where(tau > 0, a * math.log(b) - math.lgamma(a) - (a + 1) * np.log(tau) - b / tau, -np.inf)
    bias = icode[2]
    if bias in (BIAS_PET, BIAS_PEESE):
        s = fcode[4]
        lp += np.where(beta >= 0, LOG2 - LOG_PI - math.log(s) - np.log1p((beta / s) ** 2), -np.inf)
    if bias == BIAS_SELECTION:
        lp += fcode[5]
        delta = np.diff(omega, axis=1, prepend=0.0)
        a = np.asarray(alpha)[: omega.shape[1]]
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(a == 1.0, 0.0, (a - 1.0) * np.log(delta))
        terms = np.where((delta <= 0) & (a != 1.0), -np.inf, terms)
        lp += terms.sum(axis=1)
    return lp


def _log_lik_np(mu, tau, beta, omega, y, se, icode, cut):
    """Log-likelihood per row of parameters; returns shape ``(m,)``."""
    bias, side = icode[2], icode[3]
    mu = mu[:, None]
    v = tau[:, None] ** 2 + se[None, :] ** 2
    sd = np.sqrt(v)
    m = mu
    if bias == BIAS_PET:
        m = mu + beta[:, None] * se[None, :]
    elif bias == BIAS_PEESE:
        m = mu + beta[:, None] * se[None, :] ** 2
    r = (y[None, :] - m) / sd
    ll = -0.5 * r * r - np.log(sd) - LOG_SQRT_2PI
    if bias == BIAS_SELECTION:
        k = _interval_index_np(y / se, cut, side)
        w = omega[:, k]
        mass = _selection_mass_np(m, sd, se[None, :], cut, omega[:, None, :], side)
        with np.errstate(divide="ignore", invalid="ignore"):
            ll = ll + np.where((w > 0) & (mass > 0), np.log(w) - np.log(mass), -np.inf)
    return ll.sum(axis=1)


def log_post_batch_np(U, y, se, icode, fcode, alpha, cut):
    mu, tau, beta, omega, logjac = _unpack_np(U, icode, fcode)
    lp = _log_prior_np(mu, tau, beta, omega, icode, fcode, alpha)
    out = np.full(mu.shape[0], -np.inf)
    ok = np.isfinite(lp)
    if ok.any():
        ll = _log_lik_np(mu[ok], tau[ok], beta[ok], omega[ok], y, se, icode, cut)
        out[ok] = np.where(np.isfinite(ll), ll + lp[ok] + logjac[ok], -np.inf)
    return out


def log_post_np(u, y, se, icode, fcode, alpha, cut):
    return float(log_post_batch_np(np.asarray(u, dtype=float)[None, :], y, se, icode, fcode, alpha, cut)[0])


def constrain_batch_np(U, icode, fcode):
    mu, tau, beta, omega, _ = _unpack_np(U, icode, fcode)
    return np.column_stack([mu, tau, beta, omega])


def run_chain_np(u0, n_warmup, n_keep, adapt_window, target, log_step0,
                 noise, log_unif, y, se, icode, fcode, alpha, cut):
    d = u0.shape[0]
    u = np.array(u0, dtype=float)
    log_step = np.array(log_step0, dtype=float)
    lp = log_post_np(u, y, se, icode, fcode, alpha, cut)
    kept = np.empty((n_keep, d))
    acc_warm = np.zeros(d)
    acc_keep = np.zeros(d)
    for t in range(n_warmup + n_keep):
        for k in range(d):
            old = u[k]
            u[k] = old + math.exp(log_step[k]) * noise[t, k]
            lp_new = log_post_np(u, y, se, icode, fcode, alpha, cut)
            accepted = 0.0
            if log_unif[t, k] < lp_new - lp:
                lp = lp_new
                accepted = 1.0
            else:
                u[k] = old
            if t < n_warmup:
                acc_warm[k] += accepted
                if t < adapt_window:
                    log_step[k] += (accepted - target) / (t + 1.0) ** 0.6
            else:
                acc_keep[k] += accepted
        if t >= n_warmup:
            kept[t - n_warmup] = u
    return kept, acc_warm, acc_keep, log_step


def study_mass_np(mu, tau, beta, omega, bias_kind, side, cut, se):
    if bias_kind != BIAS_SELECTION:
        return np.ones((mu.shape[0], se.shape[0]))
    sd = np.sqrt(tau[:, None] ** 2 + se[None, :] ** 2)
    return _selection_mass_np(mu[:, None], sd, se[None, :], cut, omega[:, None, :], side)


def z_density_np(mu, tau, beta, omega, bias_kind, side, cut, se, grid, mode):
    n_study = se.shape[0]
    out = np.zeros((mu.shape[0], grid.shape[0]))
    widx = _interval_index_np(grid, cut, side)
    for r in range(mu.shape[0]):
        sd = np.sqrt(tau[r] ** 2 + se ** 2)
        m = np.full(n_study, mu[r])
        if mode == MODE_FITTED:
            if bias_kind == BIAS_PET:
                m = m + beta[r] * se
            elif bias_kind == BIAS_PEESE:
                m = m + beta[r] * se ** 2
        scale = np.ones(n_study)
        if bias_kind == BIAS_SELECTION:
            mass = _selection_mass_np(m, sd, se, cut, omega[r], side)
            scale = mass if mode == MODE_EXTRAPOLATED_PRINTED else 1.0 / mass
        zs = sd / se
        zm = m / se
        x = (grid[None, :] - zm[:, None]) / zs[:, None]
        dens = (scale / (zs * n_study))[:, None] * np.exp(-0.5 * x * x - LOG_SQRT_2PI)
        row = dens.sum(axis=0)
        if bias_kind == BIAS_SELECTION and mode == MODE_FITTED:
            row = row * omega[r, widx]
        out[r] = row
    return out


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

if HAS_NUMBA:
    log_post = log_post_loop
    log_post_batch = log_post_batch_loop
    constrain_batch = constrain_batch_loop
    run_chain = run_chain_loop
    study_mass = study_mass_loop
    z_density = z_density_loop
else:
    log_post = log_post_np
    log_post_batch = log_post_batch_np
    constrain_batch = constrain_batch_np
    run_chain = run_chain_np
    study_mass = study_mass_np
    z_density = z_density_np
