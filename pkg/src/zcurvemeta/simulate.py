"""Synthetic two-group literatures with optional publication filtering."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .densities import interval_cutpoints
from .ingest import write_table
from .model import Dataset, ValidationError, WeightFunction

MAX_CANDIDATES = 1_000_000

# desk-scale calibration of the sample-size design and the survival of
# non-significant results; see README for the resulting rates
DEFAULT_N_RANGE = (10, 100)
MODERATE_SURVIVAL = 0.10


def moderate_bias() -> WeightFunction:
    """Significant results (one-sided p < .05) always survive, others with probability 0.10."""
    return WeightFunction("one-sided", (0.05,), (MODERATE_SURVIVAL, 1.0))


PRESETS = {"none": None, "moderate": moderate_bias}


@dataclass(frozen=True)
class SimConfig:
    """Simulation design.

    Parameters
    ----------
    k : int
        Number of retained (published) studies.
    d, tau : float
        Mean and standard deviation of true standardized effects.
    n_range : tuple of int
        Inclusive bounds of the uniform total sample size; groups split it
        as evenly as possible.
    selection : WeightFunction or None
        Absolute survival probability per p-value interval; ``None`` keeps
        every study.
    seed : int
    """

    k: int
    d: float = 0.3
    tau: float = 0.15
    n_range: tuple[int, int] = DEFAULT_N_RANGE
    selection: WeightFunction | None = None
    seed: int = 0
    chunk: int = field(default=4096, repr=False)

    def __post_init__(self):
        errors = []
        if int(self.k) != self.k or self.k < 1:
            errors.append("k must be a positive integer")
        if not math.isfinite(self.d):
            errors.append("d must be finite")
        if not (math.isfinite(self.tau) and self.tau >= 0):
            errors.append("tau must be finite and >= 0")
        lo, hi = self.n_range
        if not (4 <= lo <= hi):
            errors.append("n_range must satisfy 4 <= low <= high")
        if self.chunk < 1:
            errors.append("chunk must be >= 1")
        if errors:
            raise ValidationError(errors)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "d": self.d,
            "tau": self.tau,
            "n_range": list(self.n_range),
            "selection": None if self.selection is None else self.selection.to_dict(),
            "seed": self.seed,
        }


def two_group_se(d_obs, n1, n2):
    """Large-sample standard error of Cohen's d for two independent groups."""
    n1 = np.asarray(n1, dtype=float)
    n2 = np.asarray(n2, dtype=float)
    return np.sqrt((n1 + n2) / (n1 * n2) + np.asarray(d_obs) ** 2 / (2.0 * (n1 + n2)))


def survival_probability(wf: WeightFunction | None, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if wf is None or wf.is_constant:
        return np.ones_like(z)
    cut = interval_cutpoints(wf)
    a = np.abs(z) if wf.side == "two-sided" else z
    return wf.omega_array()[np.searchsorted(cut, a, side="right")]


def simulate_studies(cfg: SimConfig) -> tuple[Dataset, dict]:
    """Generate candidates in fixed-size chunks until ``cfg.k`` survive.

    Returns the retained studies (in generation order) and a provenance
    record with the number of candidates generated.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed)))
    lo, hi = cfg.n_range
    ys, ses = [], []
    kept = 0
    generated = 0
    while kept < cfg.k:
        if generated >= MAX_CANDIDATES:
            raise ValidationError(
                f"needed more than {MAX_CANDIDATES} candidates for {cfg.k} studies; survival is too low")
        m = cfg.chunk
        theta = cfg.d + cfg.tau * rng.standard_normal(m)
        total = rng.integers(lo, hi + 1, m)
        n1 = total // 2
        n2 = total - n1
        d_obs = theta + two_group_se(theta, n1, n2) * rng.standard_normal(m)
        se = two_group_se(d_obs, n1, n2)
        z = d_obs / se
        keep = rng.random(m) < survival_probability(cfg.selection, z)
        idx = np.flatnonzero(keep)
        need = cfg.k - kept
        if idx.size >= need:
            idx = idx[:need]
            generated += int(idx[-1]) + 1
        else:
            generated += m
        ys.append(d_obs[idx])
        ses.append(se[idx])
        kept += idx.size
    data = Dataset.from_arrays(np.concatenate(ys), np.concatenate(ses))
    provenance = {"config": cfg.to_dict(), "generated": generated, "retained": cfg.k}
    return data, provenance


def preset_config(k: int, bias: str = "none", d: float = 0.3, tau: float = 0.15, seed: int = 0) -> SimConfig:
    if bias not in PRESETS:
        raise ValidationError(f"unknown bias preset {bias!r}; choose from {sorted(PRESETS)}")
    make = PRESETS[bias]
    return SimConfig(k=k, d=d, tau=tau, selection=None if make is None else make(), seed=seed)


def write_simulation(data: Dataset, provenance: dict, path) -> Path:
    """Write the CSV and a ``<name>.provenance.json`` sidecar; returns the sidecar path."""
    path = Path(path)
    write_table(data, path)
    side = path.with_suffix(".provenance.json")
    side.write_text(json.dumps(provenance, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return side
