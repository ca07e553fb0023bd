"""Marginal likelihoods, the default model space, and Bayesian model averaging."""

from __future__ import annotations

import json
import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import integrate, optimize, special, stats

from . import kernels as K
from .densities import kernel_code
from .mcmc import SamplerConfig, prior_center, sample_posterior
from .model import (
    Bias,
    Dataset,
    FitResult,
    ModelFit,
    ModelSpace,
    ModelSpec,
    PosteriorDraws,
    Prior,
    SPIKE_ZERO,
    Summary,
    ValidationError,
    WeightFunction,
)

log = logging.getLogger(__name__)

COMPONENTS = ("effect", "heterogeneity", "bias")

# Default selection set: one-sided steps first, then two-sided ones.
DEFAULT_SELECTION = (
    ("S1", "one-sided", (0.05,)),
    ("S2", "one-sided", (0.05, 0.10)),
    ("S3", "one-sided", (0.05, 0.50)),
    ("S4", "one-sided", (0.05, 0.10, 0.50)),
    ("S5", "two-sided", (0.05,)),
    ("S6", "two-sided", (0.05, 0.10)),
)

MU_PRIOR = Prior("normal", (0.0, 1.0))
TAU_PRIOR = Prior("invgamma", (1.0, 0.15))


class EvidenceError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# model space
# ---------------------------------------------------------------------------


def default_model_space() -> ModelSpace:
    """2 (effect) x 2 (heterogeneity) x 9 (bias) = 36 models.

    Effect and heterogeneity each get prior inclusion 1/2. Within the bias
    component, "none" gets 1/2, the six selection models share 1/4 and
    PET/PEESE share the remaining 1/4.
    """
    bias_options = [("none", Bias("none"), 0.5)]
    for label, side, alphas in DEFAULT_SELECTION:
        bias_options.append((label, Bias("selection", WeightFunction(side, alphas)), 0.25 / 6))
    bias_options.append(("PET", Bias("pet"), 0.125))
    bias_options.append(("PEESE", Bias("peese"), 0.125))

    specs = []
    for e_label, effect in (("mu0", SPIKE_ZERO), ("mu", MU_PRIOR)):
        for h_label, het in (("tau0", SPIKE_ZERO), ("tau", TAU_PRIOR)):
            for b_label, bias, p_bias in bias_options:
                specs.append(ModelSpec(f"{e_label}-{h_label}-{b_label}", effect, het, bias, 0.25 * p_bias))
    return ModelSpace(tuple(specs))


def load_model_space(path) -> ModelSpace:
    """Read a model-space JSON file, or the bundled default for ``"default"``."""
    if str(path) == "default":
        return default_model_space()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"model-space file not found: {path}")
    return ModelSpace.from_dict(json.loads(path.read_text(encoding="utf-8")))


def bundled_default_space_path():
    return resources.files("zcurvemeta") / "data" / "default_space.json"


def save_model_space(space: ModelSpace, path) -> None:
    Path(path).write_text(json.dumps(space.to_dict(), indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# marginal likelihood
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Evidence:
    log_ml: float
    error: float
    method: str
    diagnostics: dict

    def __iter__(self):
        # allows ``log_ml, err = estimate``
        return iter((self.log_ml, self.error))


class _Target:
    """Log posterior of one model on the unconstrained scale, bound to data."""

    def __init__(self, spec: ModelSpec, data: Dataset):
        self.spec = spec
        self.code = kernel_code(spec)
        self.y = np.ascontiguousarray(data.y)
        self.se = np.ascontiguousarray(data.se)
        self.d = spec.n_params

    def __call__(self, u) -> float:
        return float(K.log_post(np.ascontiguousarray(u, dtype=float), self.y, self.se, *self.code))

    def batch(self, U) -> np.ndarray:
        return K.log_post_batch(np.ascontiguousarray(U, dtype=float), self.y, self.se, *self.code)

    def log_lik_fixed(self) -> float:
        omega = np.ones(1)
        return float(K.log_lik_params(self.code.fcode[0], self.code.fcode[2], 0.0, omega,
                                      self.y, self.se, self.code.icode, self.code.cut))


def _hessian(f, x, h=1e-4):
    d = x.size
    H = np.empty((d, d))
    f0 = f(x)
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h
        H[i, i] = (f(x + ei) - 2 * f0 + f(x - ei)) / h**2
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = h
            H[i, j] = H[j, i] = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4 * h * h)
    return H


def laplace_frame(target: _Target, start=None):
    """Posterior mode and a Cholesky factor of the Laplace covariance."""
    x0 = prior_center(target.spec) if start is None else np.asarray(start, dtype=float)

    def nlp(u):
        v = target(u)
        return 1e300 if not np.isfinite(v) else -v

    best = None
    for x in (x0, x0 + 0.5, x0 - 0.5):
        res = optimize.minimize(nlp, x, method="BFGS", options={"gtol": 1e-8, "maxiter": 2000})
        res = optimize.minimize(nlp, res.x, method="Nelder-Mead",
                                options={"xatol": 1e-9, "fatol": 1e-12, "maxiter": 20000})
        if best is None or res.fun < best.fun:
            best = res
    mode = best.x
    H = _hessian(nlp, mode)
    H = 0.5 * (H + H.T)
    vals, vecs = np.linalg.eigh(H)
    vals = np.clip(vals, 1e-4, None)
    cov = (vecs / vals) @ vecs.T
    L = np.linalg.cholesky(cov)
    return mode, -best.fun, L


def _line_map(t, scale):
    """s = a t / (1 - t^2) maps (-1, 1) onto the real line; returns (s, ds/dt)."""
    return scale * t / (1.0 - t * t), scale * (1.0 + t * t) / (1.0 - t * t) ** 2


def _quad_1d(target, mode, lp_mode, L, scale):
    def f(t):
        s, jac = _line_map(t, scale)
        return math.exp(target(mode + L[:, 0] * s) - lp_mode) * jac

    # accuracy is judged by agreement across map scales, not quadpack's own flag
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, _ = integrate.quad(f, -1.0, 1.0, points=[0.0], limit=400, epsabs=1e-13, epsrel=1e-11)
    return val


def _quad_2d(target, mode, lp_mode, L, scale):
    def f(t2, t1):
        s1, j1 = _line_map(t1, scale)
        s2, j2 = _line_map(t2, scale)
        return math.exp(target(mode + L @ np.array([s1, s2])) - lp_mode) * j1 * j2

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, _ = integrate.dblquad(f, -1.0, 1.0, -1.0, 1.0, epsabs=1e-11, epsrel=1e-9)
    return val


def _tensor_gl(target, mode, lp_mode, L, scale, nodes):
    """Tensor Gauss-Legendre rule after mapping each axis via s = a t / (1 - t^2)."""
    t, w = np.polynomial.legendre.leggauss(nodes)
    s = scale * t / (1.0 - t * t)
    ws = w * scale * (1.0 + t * t) / (1.0 - t * t) ** 2
    d = mode.size
    S = np.stack(np.meshgrid(*([s] * d), indexing="ij"), axis=-1).reshape(-1, d)
    W = np.prod(np.stack(np.meshgrid(*([ws] * d), indexing="ij"), axis=-1).reshape(-1, d), axis=1)
    total = 0.0
    chunk = 200_000
    for start in range(0, S.shape[0], chunk):
        lp = target.batch(mode + S[start:start + chunk] @ L.T) - lp_mode
        total += float(np.sum(W[start:start + chunk] * np.exp(lp)))
    return total


def log_marginal_quadrature(spec: ModelSpec, data: Dataset, tol: float = 1e-4) -> Evidence:
    """Log marginal likelihood by deterministic quadrature.

    The integrand is the unnormalized posterior on the unconstrained scale,
    centred and rotated by its Laplace approximation. One and two free
    parameters use nested adaptive quadrature over ``s = a t / (1 - t^2)``,
    repeated for increasing ``a`` until two successive estimates agree to
    ``tol``.
    Three or more parameters use tensor Gauss-Legendre rules on an algebraic
    map of the real line, refined in node count, with a looser tolerance of
    ``max(tol, 2e-3)``.
    """
    target = _Target(spec, data)
    d = target.d
    if d == 0:
        return Evidence(target.log_lik_fixed(), 0.0, "exact", {})
    mode, lp_mode, L = laplace_frame(target)
    log_det = float(np.sum(np.log(np.diag(L))))

    if d <= 2:
        rule = _quad_1d if d == 1 else _quad_2d
        schedule = [(2.0, None), (3.0, None), (5.0, None)]
        tol_used = tol
    else:
        rule = _tensor_gl
        schedule = [(3.0, 16), (3.0, 22), (3.0, 28)] if d <= 4 else [(3.0, 14), (3.0, 18), (3.0, 22)]
        tol_used = max(tol, 2e-3)

    estimates = []
    for width, nodes in schedule:
        args = (target, mode, lp_mode, L, width) + (() if nodes is None else (nodes,))
        val = rule(*args)
        if not val > 0:
            raise EvidenceError(f"{spec.name}: quadrature returned non-positive mass {val!r}")
        estimates.append(lp_mode + log_det + math.log(val))
        if len(estimates) >= 2 and abs(estimates[-1] - estimates[-2]) < tol_used:
            return Evidence(float(estimates[-1]), float(abs(estimates[-1] - estimates[-2])), "quadrature",
                            {"refinements": len(estimates), "dimension": d})
    raise EvidenceError(
        f"{spec.name}: quadrature did not converge; last two estimates {estimates[-2]:.8f}, {estimates[-1]:.8f}"
    )


def log_marginal_importance(spec: ModelSpec, data: Dataset, draws: PosteriorDraws,
                            n_samples: int = 50_000, seed: int = 0, stream: int = 0,
                            df: float = 5.0) -> Evidence:
    """Log marginal likelihood by importance sampling.

    The proposal is a multivariate Student-t with ``df`` degrees of freedom
    whose location and scale match the posterior draws on the unconstrained
    scale. ``error`` is the delta-method Monte Carlo standard error of the
    log estimate.
    """
    target = _Target(spec, data)
    if target.d == 0:
        return Evidence(target.log_lik_fixed(), 0.0, "exact", {})
    U = np.asarray(draws.unconstrained)
    if U.shape[0] < 2:
        raise EvidenceError(f"{spec.name}: importance sampling needs posterior draws")
    loc = U.mean(axis=0)
    scale = np.atleast_2d(np.cov(U, rowvar=False))
    scale = scale + 1e-10 * np.eye(target.d)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream, 10_007])))
    proposal = stats.multivariate_t(loc=loc, shape=scale, df=df)
    X = proposal.rvs(size=n_samples, random_state=rng).reshape(n_samples, target.d)
    log_w = target.batch(X) - proposal.logpdf(X)
    log_w = np.where(np.isfinite(log_w), log_w, -np.inf)
    top = np.max(log_w)
    w = np.exp(log_w - top)
    mean_w = w.mean()
    log_ml = float(top + math.log(mean_w))
    mcse = float(w.std(ddof=1) / (mean_w * math.sqrt(n_samples)))
    ess_frac = float(w.sum() ** 2 / np.sum(w * w) / n_samples)
    notes = []
    if ess_frac < 0.005:
        raise EvidenceError(f"{spec.name}: importance ESS {ess_frac:.2%} of samples; proposal unusable")
    if ess_frac < 0.05:
        notes.append(f"{spec.name}: low importance ESS ({ess_frac:.2%} of samples)")
        log.warning(notes[-1])
    return Evidence(log_ml, mcse, "importance", {"ess_fraction": ess_frac, "warnings": notes})


# ---------------------------------------------------------------------------
# averaging
# ---------------------------------------------------------------------------


def posterior_model_probs(space: ModelSpace, log_ml) -> np.ndarray:
    log_ml = np.asarray(log_ml, dtype=float)
    if log_ml.shape != (len(space),):
        raise ValidationError(f"need one log evidence per model ({len(space)}), got {log_ml.shape}")
    if np.any(np.isnan(log_ml)) or np.any(log_ml == np.inf):
        raise ValidationError("log evidences must be finite or -inf")
    with np.errstate(divide="ignore"):
        a = log_ml + np.log(space.prior_probs)
    if not np.any(np.isfinite(a)):
        raise ValidationError("every model has zero evidence or zero prior probability")
    p = np.exp(a - special.logsumexp(a))
    return p / p.sum()


def inclusion_bf(space: ModelSpace, probs, component: str) -> float:
    """Posterior inclusion odds over prior inclusion odds of ``component``.

    Returns ``inf`` (or ``0.0``) when the posterior puts no mass on the
    excluding (or including) side; check :func:`bf_flag` for reporting.
    """
    mask = space.component_mask(component)
    if mask.all() or not mask.any():
        raise ValidationError(f"component {component!r} has models on only one side")
    prior_in = math.fsum(space.prior_probs[mask])
    prior_out = math.fsum(space.prior_probs[~mask])
    probs = np.asarray(probs, dtype=float)
    post_in = math.fsum(probs[mask])
    post_out = math.fsum(probs[~mask])
    if post_out == 0:
        return math.inf
    if post_in == 0:
        return 0.0
    return (post_in / post_out) / (prior_in / prior_out)


def bf_flag(bf: float) -> str:
    if bf == math.inf:
        return "posterior mass on excluding models is zero"
    if bf == 0.0:
        return "posterior mass on including models is zero"
    return ""


@dataclass(frozen=True)
class PooledDraws:
    """Mixture draws over models: which model, and which row of its draws."""

    model_idx: np.ndarray
    row_idx: np.ndarray

    def __len__(self) -> int:
        return self.model_idx.size


def model_averaged_draws(space: ModelSpace, fits, count: int, seed: int, probs=None) -> PooledDraws:
    """Resample ``count`` draws from the posterior-probability mixture of ``fits``.

    Models without free parameters are recorded with ``row_idx = -1``.
    """
    p = np.asarray(probs if probs is not None else [1.0], dtype=float)
    if probs is None and len(space) != 1:
        raise ValidationError("posterior model probabilities are required for a multi-model space")
    p = p / p.sum()
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 777])))
    model_idx = rng.choice(len(space), size=count, p=p)
    row_idx = np.full(count, -1, dtype=np.int64)
    for k in np.unique(model_idx):
        sel = model_idx == k
        n_rows = fits[k].draws.n_draws
        if n_rows > 0:
            row_idx[sel] = rng.integers(0, n_rows, size=int(sel.sum()))
    return PooledDraws(model_idx.astype(np.int64), row_idx)


def pooled_column(space: ModelSpace, fits, pooled: PooledDraws, name: str) -> np.ndarray:
    """Values of ``mu`` or ``tau`` across pooled draws; spikes contribute their fixed value."""
    out = np.empty(len(pooled))
    for k in np.unique(pooled.model_idx):
        sel = pooled.model_idx == k
        spec = space.specs[k]
        if name in spec.param_names:
            out[sel] = fits[k].draws.column(name)[pooled.row_idx[sel]]
        elif name == "mu":
            out[sel] = spec.effect.params[0]
        elif name == "tau":
            out[sel] = spec.heterogeneity.params[0]
        else:
            out[sel] = 0.0
    return out


def bias_conditional_probs(space: ModelSpace, probs) -> np.ndarray | None:
    """Posterior model probabilities renormalized over bias-adjusted models (None if no mass)."""
    mask = space.component_mask("bias")
    p = np.where(mask, np.asarray(probs, dtype=float), 0.0)
    if p.sum() <= 0:
        return None
    return p / p.sum()


# ---------------------------------------------------------------------------
# fitting a whole space
# ---------------------------------------------------------------------------


def fit_model(spec: ModelSpec, data: Dataset, cfg: SamplerConfig, stream: int,
              n_importance: int = 50_000) -> ModelFit:
    draws = sample_posterior(spec, data, cfg, stream=stream)
    if spec.n_params <= 2:
        ev = log_marginal_quadrature(spec, data)
    else:
        ev = log_marginal_importance(spec, data, draws, n_samples=n_importance, seed=cfg.seed, stream=stream)
    notes = tuple(draws.warnings) + tuple(ev.diagnostics.get("warnings", ()))
    return ModelFit(spec, draws, ev.log_ml, ev.error, ev.method, notes)


def _fit_model_star(args):
    return fit_model(*args)


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("ZCURVEMETA_WORKERS", "1")))
    except ValueError:
        return 1


def fit_space(space: ModelSpace, data: Dataset, cfg: SamplerConfig | None = None,
              workers: int | None = None, n_importance: int = 50_000) -> FitResult:
    """Fit every model, then average. Output is independent of ``workers``."""
    cfg = cfg or SamplerConfig()
    workers = default_workers() if workers is None else max(1, workers)
    jobs = [(spec, data, cfg, k, n_importance) for k, spec in enumerate(space.specs)]
    if workers == 1:
        fits = [_fit_model_star(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            fits = list(pool.map(_fit_model_star, jobs))
    return summarize_fits(space, fits, cfg.seed)


def summarize_fits(space: ModelSpace, fits, seed: int, pool_size: int = 10_000) -> FitResult:
    probs = posterior_model_probs(space, [f.log_ml for f in fits])
    bfs = {}
    for comp in COMPONENTS:
        mask = space.component_mask(comp)
        if mask.any() and not mask.all():
            bfs[comp] = inclusion_bf(space, probs, comp)
    pooled = model_averaged_draws(space, fits, pool_size, seed, probs)
    mu = Summary.of(pooled_column(space, fits, pooled, "mu"))
    tau = Summary.of(pooled_column(space, fits, pooled, "tau"))
    return FitResult(space, tuple(fits), probs, bfs, mu, tau)
