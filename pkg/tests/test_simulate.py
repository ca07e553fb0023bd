import json

import numpy as np
import pytest
from scipy import stats

from zcurvemeta.ingest import observed_discovery_rate, read_table
from zcurvemeta.model import ValidationError, WeightFunction
from zcurvemeta.plot import bin_edges
from zcurvemeta.simulate import (
    SimConfig,
    preset_config,
    simulate_studies,
    survival_probability,
    two_group_se,
    write_simulation,
)


def test_no_censoring_keeps_everything():
    d, prov = simulate_studies(SimConfig(k=50, seed=1))
    assert d.n == 50 and prov["generated"] == 50


def test_significance_filter_rate():
    wf = WeightFunction("one-sided", (0.05,), (1e-300, 1.0))
    d, prov = simulate_studies(SimConfig(k=200, d=0.0, tau=0.0, selection=wf, seed=4))
    assert np.all(d.z >= 1.6448536269514722)
    rate = 200 / prov["generated"]
    assert abs(rate - 0.05) < 3 * np.sqrt(0.05 * 0.95 / prov["generated"]) + 0.005


@pytest.mark.parametrize("k", [1, 7, 300])
def test_exact_retained_count(k):
    d, prov = simulate_studies(preset_config(k, "moderate", seed=k))
    assert d.n == k and prov["retained"] == k and prov["generated"] >= k


def test_deterministic_given_seed():
    a, pa = simulate_studies(preset_config(100, "moderate", seed=9))
    b, pb = simulate_studies(preset_config(100, "moderate", seed=9))
    c, _ = simulate_studies(preset_config(100, "moderate", seed=10))
    assert a == b and pa == pb and a != c


def test_moderate_preset_odr():
    d, _ = simulate_studies(preset_config(300, "moderate", seed=0))
    assert abs(observed_discovery_rate(d) - 0.57) <= 0.08


def test_survival_one_histogram_is_smooth():
    d, _ = simulate_studies(SimConfig(k=20_000, seed=2))
    edges = bin_edges(width=0.25)
    counts, _ = np.histogram(d.z, edges)
    i = int(np.flatnonzero(edges == 1.96)[0])
    left, right = counts[i - 1], counts[i]
    # the bin just below 1.96 is narrower (1.64 to 1.96), compare per-unit-width rates
    wl, wr = edges[i] - edges[i - 1], edges[i + 1] - edges[i]
    rl, rr = left / wl, right / wr
    se = np.sqrt(left / wl**2 + right / wr**2)
    assert abs(rl - rr) < 4 * se


def test_too_little_survival_errors():
    wf = WeightFunction("one-sided", (0.0001,), (1e-300, 1.0))
    with pytest.raises(ValidationError, match="candidates"):
        simulate_studies(SimConfig(k=200, d=-1.0, tau=0.0, selection=wf, seed=0))


def test_config_validation():
    with pytest.raises(ValidationError):
        SimConfig(k=0)
    with pytest.raises(ValidationError):
        SimConfig(k=5, tau=-0.1)
    with pytest.raises(ValidationError):
        preset_config(5, "extreme")


def test_standard_error_formula():
    assert two_group_se(0.0, 50, 50) == pytest.approx(np.sqrt(0.04))
    assert two_group_se(0.5, 10, 12) == pytest.approx(np.sqrt(22 / 120 + 0.25 / 44))


def test_survival_probability_steps():
    wf = WeightFunction("two-sided", (0.05,), (0.1, 1.0))
    np.testing.assert_array_equal(survival_probability(wf, [-2.5, 0.0, 1.96, 3.0]), [1.0, 0.1, 1.0, 1.0])
    np.testing.assert_array_equal(survival_probability(None, [0.0, 5.0]), [1.0, 1.0])


def test_sampling_distribution_of_effects():
    d, _ = simulate_studies(SimConfig(k=20_000, d=0.3, tau=0.15, seed=3))
    # y ~ Normal(0.3, tau^2 + se^2) marginally; check the mean and a standardized KS fit
    std = (d.y - 0.3) / np.sqrt(0.15**2 + d.se**2)
    assert abs(d.y.mean() - 0.3) < 0.01
    assert stats.kstest(std, "norm").pvalue > 1e-3


def test_write_simulation(tmp_path):
    d, prov = simulate_studies(preset_config(20, "moderate", seed=1))
    side = write_simulation(d, prov, tmp_path / "s.csv")
    assert read_table(tmp_path / "s.csv") == type(d)(d.studies, "s")
    meta = json.loads(side.read_text())
    assert meta["generated"] == prov["generated"] and meta["config"]["seed"] == 1
