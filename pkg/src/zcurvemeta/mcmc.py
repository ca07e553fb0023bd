"""Adaptive random-walk Metropolis sampling and convergence diagnostics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import kernels as K
from .densities import kernel_code
from .model import Dataset, ModelSpec, PosteriorDraws, ValidationError

log = logging.getLogger(__name__)

RHAT_WARN = 1.05


class SamplerError(RuntimeError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 4
    warmup: int = 2000
    iterations: int = 5000
    seed: int = 0
    target_accept: float = 0.3
    adapt_window: int | None = None  # defaults to the whole warmup
    init_jitter: float = 0.5
    init_step: float = 0.5

    def __post_init__(self):
        errors = []
        if self.chains < 1:
            errors.append("chains must be >= 1")
        if self.iterations < 1 or self.warmup < 0:
            errors.append("iterations must be > 0 and warmup >= 0")
        if not 0 < self.target_accept < 1:
            errors.append("target_accept must lie in (0, 1)")
        if self.adapt_window is not None and self.adapt_window < 0:
            errors.append("adapt_window must be >= 0")
        if errors:
            raise ValidationError(errors)

    @property
    def window(self) -> int:
        return self.warmup if self.adapt_window is None else min(self.adapt_window, self.warmup)

    def to_dict(self) -> dict:
        return {
            "chains": self.chains,
            "warmup": self.warmup,
            "iterations": self.iterations,
            "seed": self.seed,
            "target_accept": self.target_accept,
            "adapt_window": self.window,
            "init_jitter": self.init_jitter,
            "init_step": self.init_step,
        }


def chain_rng(seed: int, stream: int, chain: int) -> np.random.Generator:
    """Independent counter-based stream for (master seed, model stream, chain)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream, chain])))


def prior_center(spec: ModelSpec) -> np.ndarray:
    """Prior medians of the free parameters on the sampler's working scale."""
    out = []
    if spec.has_effect:
        out.append(spec.effect.params[0])
    if spec.has_heterogeneity:
        a, b = spec.heterogeneity.params
        out.append(math.log(stats.invgamma.median(a, scale=b)))
    if spec.bias.kind in ("pet", "peese"):
        out.append(math.log(spec.bias.prior.params[0]))
    if spec.bias.kind == "selection":
        # stick-breaking logits are offset so that zeros give equal increments
        out += [0.0] * (spec.bias.weight_function.n_intervals - 1)
    return np.asarray(out, dtype=float)


def sample_posterior(spec: ModelSpec, data: Dataset, cfg: SamplerConfig | None = None,
                     stream: int = 0) -> PosteriorDraws:
    """Draw from the posterior of ``spec`` given ``data``.

    Chains are run one after another with independent RNG streams; the result
    depends only on ``(spec, data, cfg, stream)``.
    """
    cfg = cfg or SamplerConfig()
    names = spec.param_names
    d = len(names)
    if d == 0:
        return PosteriorDraws(names, np.zeros((0, 0)), np.zeros((0, 0)), np.zeros(0), cfg.seed)

    code = kernel_code(spec)
    y = np.ascontiguousarray(data.y)
    se = np.ascontiguousarray(data.se)
    center = prior_center(spec)
    n_total = cfg.warmup + cfg.iterations

    kept_u, chain_ids, acc_rows = [], [], []
    acc_warm_total = np.zeros(d)
    for c in range(cfg.chains):
        rng = chain_rng(cfg.seed, stream, c)
        for _ in range(100):
            u0 = center + cfg.init_jitter * rng.standard_normal(d)
            if np.isfinite(K.log_post(u0, y, se, *code)):
                break
        else:
            raise SamplerError(f"{spec.name}: no finite starting point found near the prior centre")
        noise = rng.standard_normal((n_total, d))
        log_unif = np.log(rng.random((n_total, d)))
        step0 = np.full(d, math.log(cfg.init_step))
        kept, acc_warm, acc_keep, _ = K.run_chain(
            u0, cfg.warmup, cfg.iterations, cfg.window, cfg.target_accept, step0,
            noise, log_unif, y, se, *code,
        )
        kept_u.append(kept)
        chain_ids.append(np.full(cfg.iterations, c))
        acc_warm_total += acc_warm
        acc_rows.append(acc_keep / cfg.iterations)

    if cfg.warmup > 0 and np.any(acc_warm_total == 0):
        bad = [names[k] for k in np.flatnonzero(acc_warm_total == 0)]
        raise SamplerError(f"{spec.name}: every warmup proposal was rejected for {bad}; posterior looks degenerate")

    U = np.vstack(kept_u)
    C = K.constrain_batch(U, code.icode, code.fcode)
    draws = _constrained_columns(spec, C)
    ids = np.concatenate(chain_ids)

    rh, es, warnings = {}, {}, []
    for k, name in enumerate(names):
        per_chain = draws[:, k].reshape(cfg.chains, cfg.iterations)
        if cfg.chains >= 2 and cfg.iterations >= 4:
            rh[name] = rhat(per_chain)
            if rh[name] > RHAT_WARN:
                warnings.append(f"{spec.name}: R-hat {rh[name]:.3f} > {RHAT_WARN} for {name}")
        if cfg.iterations >= 8:
            es[name] = ess(per_chain)
    for w in warnings:
        log.warning(w)
    return PosteriorDraws(names, draws, U, ids, cfg.seed, rh, es, np.vstack(acc_rows), tuple(warnings))


def _constrained_columns(spec: ModelSpec, C: np.ndarray) -> np.ndarray:
    """Pick the free-parameter columns out of the kernel's (mu, tau, beta, omega...) layout."""
    cols = []
    if spec.has_effect:
        cols.append(C[:, 0])
    if spec.has_heterogeneity:
        cols.append(C[:, 1])
    if spec.bias.kind in ("pet", "peese"):
        cols.append(C[:, 2])
    if spec.bias.kind == "selection":
        for j in range(spec.bias.weight_function.n_intervals - 1):
            cols.append(C[:, 3 + j])
    return np.column_stack(cols)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------


def rhat(chains) -> float:
    """Split-chain potential scale reduction factor.

    ``chains`` has shape (n_chains, n_draws). Returns 1.0 when every draw is
    identical (the statistic is undefined there).
    """
    x = np.asarray(chains, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 4:
        raise ValidationError("rhat needs at least 2 chains with 4 draws each")
    half = x.shape[1] // 2
    split = np.vstack([x[:, :half], x[:, x.shape[1] - half:]])
    n = split.shape[1]
    means = split.mean(axis=1)
    W = split.var(axis=1, ddof=1).mean()
    B = n * means.var(ddof=1)
    if W == 0:
        return 1.0 if B == 0 else math.inf
    var_plus = (n - 1) / n * W + B / n
    return float(math.sqrt(var_plus / W))


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    xc = x - x.mean(axis=-1, keepdims=True)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size, axis=-1)
    ac = np.fft.irfft(f * np.conj(f), size, axis=-1)[..., :n]
    return ac / n


def ess(draws) -> float:
    """Effective sample size via Geyer's initial positive sequence.

    Accepts a single sequence or an array of shape (n_chains, n_draws).
    A constant input returns the sentinel 1.
    """
    x = np.atleast_2d(np.asarray(draws, dtype=float))
    m, n = x.shape
    if n < 8:
        raise ValidationError("ess needs at least 8 draws")
    acov = _autocov(x)
    W = acov[:, 0].mean() * n / (n - 1)
    if W <= 0:
        return 1.0
    B = n * x.mean(axis=1).var(ddof=1) if m > 1 else 0.0
    var_plus = (n - 1) / n * W + B / n
    rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    total = 0.0
    prev = math.inf
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0:
            break
        pair = min(pair, prev)  # initial monotone sequence
        total += pair
        prev = pair
    tau = -1.0 + 2.0 * total
    return float(m * n / max(tau, 1.0 / math.log10(max(m * n, 10))))
