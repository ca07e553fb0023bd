import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from zcurvemeta.evidence import (
    EvidenceError,
    PooledDraws,
    bf_flag,
    bias_conditional_probs,
    bundled_default_space_path,
    default_model_space,
    inclusion_bf,
    load_model_space,
    log_marginal_importance,
    log_marginal_quadrature,
    model_averaged_draws,
    pooled_column,
    posterior_model_probs,
    save_model_space,
    summarize_fits,
)
from zcurvemeta.mcmc import SamplerConfig, sample_posterior
from zcurvemeta.model import (
    Bias,
    Dataset,
    ModelFit,
    ModelSpace,
    ModelSpec,
    Prior,
    SPIKE_ZERO,
    ValidationError,
)

from conftest import small_dataset, spec_named


def _two_model_space(p=(0.5, 0.5)):
    a = ModelSpec("null", SPIKE_ZERO, SPIKE_ZERO, Bias("none"), p[0])
    b = ModelSpec("alt", Prior("normal", (0.0, 1.0)), SPIKE_ZERO, Bias("none"), p[1])
    return ModelSpace((a, b))


def test_default_space_composition(space):
    assert len(space) == 36
    assert math.fsum(space.prior_probs) == pytest.approx(1.0, abs=1e-12)
    assert math.fsum(space.prior_probs[space.component_mask("bias")]) == pytest.approx(0.5, abs=1e-12)
    assert math.fsum(space.prior_probs[space.component_mask("effect")]) == pytest.approx(0.5, abs=1e-12)
    sel = [s for s in space.specs if s.bias.kind == "selection"]
    assert math.fsum(s.prior_prob for s in sel) == pytest.approx(0.25, abs=1e-12)
    assert max(s.n_params for s in space.specs) == 5


def test_bundled_space_file_matches(tmp_path, space):
    assert load_model_space(bundled_default_space_path()) == space
    save_model_space(space, tmp_path / "s.json")
    assert load_model_space(tmp_path / "s.json") == space
    with pytest.raises(FileNotFoundError):
        load_model_space(tmp_path / "missing.json")


def test_quadrature_closed_forms(space):
    data = Dataset.from_arrays([0.5], [1.0])
    null = log_marginal_quadrature(spec_named(space, "mu0-tau0-none"), data)
    assert null.log_ml == pytest.approx(-1.04394, abs=1e-5)
    assert null.error == 0.0
    fe = log_marginal_quadrature(spec_named(space, "mu-tau0-none"), data)
    # Normal(0.5 | 0, 2): density 0.26503, log -1.328012
    assert fe.log_ml == pytest.approx(stats.norm.logpdf(0.5, 0.0, math.sqrt(2.0)), abs=1e-6)
    assert math.exp(fe.log_ml) == pytest.approx(0.26500, abs=5e-5)


def test_quadrature_pooled_fixed_effect_against_grid_oracle(space):
    a = small_dataset(12, seed=7)
    b = small_dataset(9, seed=8)
    pooled = Dataset.from_arrays(np.concatenate([a.y, b.y]), np.concatenate([a.se, b.se]))
    got = log_marginal_quadrature(spec_named(space, "mu-tau0-none"), pooled).log_ml
    grid = np.linspace(-3, 3, 600_001)
    ll = np.zeros_like(grid)
    for y, se in zip(pooled.y, pooled.se):
        ll += stats.norm.logpdf(y, grid, se)
    lp = ll + stats.norm.logpdf(grid)
    top = lp.max()
    oracle = top + math.log(integrate.trapezoid(np.exp(lp - top), grid))
    assert got == pytest.approx(oracle, abs=1e-3)
    cov = np.diag(pooled.se**2) + 1.0
    assert got == pytest.approx(stats.multivariate_normal(np.zeros(pooled.n), cov).logpdf(pooled.y), abs=1e-6)


def test_importance_agrees_with_quadrature_on_small_models(space, data30):
    cfg = SamplerConfig(chains=2, warmup=500, iterations=2000, seed=2)
    for name in ["mu-tau-none", "mu-tau0-PET", "mu0-tau-PEESE", "mu0-tau0-S3", "mu-tau0-S1"]:
        spec = spec_named(space, name)
        draws = sample_posterior(spec, data30, cfg)
        q = log_marginal_quadrature(spec, data30).log_ml
        ev = log_marginal_importance(spec, data30, draws, n_samples=50_000)
        assert ev.log_ml == pytest.approx(q, abs=0.01), name


def test_importance_null_is_exact(space):
    data = Dataset.from_arrays([0.5], [1.0])
    spec = spec_named(space, "mu0-tau0-none")
    draws = sample_posterior(spec, data, SamplerConfig(chains=1, warmup=10, iterations=10))
    ev = log_marginal_importance(spec, data, draws)
    assert ev.log_ml == pytest.approx(-1.04394, abs=1e-5) and ev.error == 0.0


def test_importance_seed_spread_matches_mcse(space, data30):
    spec = spec_named(space, "mu-tau-S2")
    draws = sample_posterior(spec, data30, SamplerConfig(chains=2, warmup=500, iterations=2000, seed=4))
    runs = [log_marginal_importance(spec, data30, draws, n_samples=10_000, seed=s) for s in range(8)]
    spread = np.std([r.log_ml for r in runs], ddof=1)
    mcse = np.mean([r.error for r in runs])
    assert spread < 4 * mcse and mcse < 4 * spread


def test_importance_requires_draws(space, data30):
    spec = spec_named(space, "mu-tau-S2")
    draws = sample_posterior(spec, data30, SamplerConfig(chains=1, warmup=5, iterations=1))
    with pytest.raises(EvidenceError):
        log_marginal_importance(spec, data30, draws)


def test_posterior_model_probs_examples():
    sp = _two_model_space()
    np.testing.assert_allclose(posterior_model_probs(sp, [0.0, 0.0]), [0.5, 0.5])
    np.testing.assert_allclose(posterior_model_probs(sp, [math.log(3), 0.0]), [0.75, 0.25])
    np.testing.assert_allclose(posterior_model_probs(_two_model_space((0.8, 0.2)), [1.0, 1.0]), [0.8, 0.2])
    with pytest.raises(ValidationError):
        posterior_model_probs(sp, [-math.inf, -math.inf])


@given(st.lists(st.floats(-500, 500), min_size=36, max_size=36), st.floats(-1e4, 1e4))
def test_posterior_model_probs_shift_invariant(log_ml, c):
    sp = default_model_space()
    p = posterior_model_probs(sp, log_ml)
    assert math.fsum(p) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(posterior_model_probs(sp, np.asarray(log_ml) + c), p, atol=1e-9)


def _bias_probs(space, p_bias):
    mask = space.component_mask("bias")
    prior = space.prior_probs
    out = np.where(mask, prior / prior[mask].sum() * p_bias, prior / prior[~mask].sum() * (1 - p_bias))
    return out


@pytest.mark.parametrize("p_bias,bf", [(0.5, 1.0), (0.9, 9.0), (0.08, 0.0869565)])
def test_inclusion_bf_examples(space, p_bias, bf):
    assert inclusion_bf(space, _bias_probs(space, p_bias), "bias") == pytest.approx(bf, rel=1e-5)


def test_inclusion_bf_sentinels(space):
    p = _bias_probs(space, 1.0)
    assert inclusion_bf(space, p, "bias") == math.inf and bf_flag(math.inf)
    p = _bias_probs(space, 0.0)
    assert inclusion_bf(space, p, "bias") == 0.0 and bf_flag(0.0)
    assert bf_flag(2.0) == ""


@given(st.lists(st.floats(1e-6, 1.0), min_size=36, max_size=36))
def test_inclusion_bf_above_one_iff_posterior_exceeds_prior(raw):
    sp = default_model_space()
    p = np.asarray(raw) / np.sum(raw)
    for comp in ("effect", "heterogeneity", "bias"):
        mask = sp.component_mask(comp)
        post, prior = p[mask].sum(), sp.prior_probs[mask].sum()
        bf = inclusion_bf(sp, p, comp)
        if abs(post - prior) > 1e-9:
            assert (bf > 1) == (post > prior)


def _fake_fits(space, data, cfg):
    return [ModelFit(s, sample_posterior(s, data, cfg, stream=k), 0.0, 0.0, "test") for k, s in enumerate(space.specs)]


def test_model_averaged_draws(data30):
    sp = _two_model_space()
    cfg = SamplerConfig(chains=1, warmup=200, iterations=500)
    fits = _fake_fits(sp, data30, cfg)
    pooled = model_averaged_draws(sp, fits, 5000, seed=1, probs=[0.6, 0.4])
    mu = pooled_column(sp, fits, pooled, "mu")
    zeros = np.mean(mu == 0.0)
    assert abs(zeros - 0.6) < 3 * math.sqrt(0.24 / 5000)
    assert np.all(pooled.row_idx[pooled.model_idx == 0] == -1)
    only = model_averaged_draws(sp, fits, 1000, seed=1, probs=[0.0, 1.0])
    assert np.all(only.model_idx == 1)
    sub = mu[pooled.model_idx == 1]
    assert sub.mean() == pytest.approx(fits[1].draws.column("mu").mean(), abs=0.02)


def test_single_model_space_mixture(data30):
    spec = ModelSpec("only", Prior("normal", (0.0, 1.0)), SPIKE_ZERO, Bias("none"), 1.0)
    sp = ModelSpace((spec,))
    fits = _fake_fits(sp, data30, SamplerConfig(chains=1, warmup=100, iterations=200))
    pooled = model_averaged_draws(sp, fits, 300, seed=0)
    assert isinstance(pooled, PooledDraws) and np.all(pooled.model_idx == 0)


def test_bias_conditional_probs(space):
    p = _bias_probs(space, 0.3)
    cond = bias_conditional_probs(space, p)
    assert cond.sum() == pytest.approx(1.0)
    assert np.all(cond[~space.component_mask("bias")] == 0)
    assert bias_conditional_probs(space, _bias_probs(space, 0.0)) is None


def test_summarize_fits_probabilities_sum_to_one(data30):
    sp = _two_model_space()
    fits = _fake_fits(sp, data30, SamplerConfig(chains=1, warmup=100, iterations=200))
    res = summarize_fits(sp, fits, seed=0)
    assert math.fsum(res.posterior_probs) == pytest.approx(1.0, abs=1e-12)
    assert all(v > 0 for v in res.inclusion_bf.values())
