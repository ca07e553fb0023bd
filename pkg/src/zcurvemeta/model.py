"""Domain types shared across the package.

Every type here is an immutable value object. Arrays held by the frozen
dataclasses are marked read-only on construction so they can be handed to
worker processes without defensive copies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

SIDES = ("one-sided", "two-sided")
BIAS_KINDS = ("none", "selection", "pet", "peese")
PRIOR_FAMILIES = {
    "spike": ("value",),
    "normal": ("mean", "sd"),
    "invgamma": ("shape", "scale"),
    "halfcauchy": ("scale",),
    "cumdirichlet": ("alpha",),
}


class ValidationError(ValueError):
    """Raised when input data or a configuration violates its invariants.

    ``errors`` holds every violation found, not just the first one.
    """

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Study:
    y: float
    se: float

    def __post_init__(self):
        if not math.isfinite(self.y):
            raise ValidationError(f"effect size must be finite, got {self.y!r}")
        if not (math.isfinite(self.se) and self.se > 0):
            raise ValidationError(f"standard error must be finite and > 0, got {self.se!r}")

    @property
    def z(self) -> float:
        return self.y / self.se


def zstat(study: Study) -> float:
    """Test statistic of a single study, ``y / se``."""
    return study.y / study.se


@dataclass(frozen=True)
class Dataset:
    studies: tuple[Study, ...]
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "studies", tuple(self.studies))
        if not self.studies:
            raise ValidationError("empty dataset")

    @classmethod
    def from_arrays(cls, y, se, label: str = "") -> "Dataset":
        y = np.asarray(y, dtype=float).ravel()
        se = np.asarray(se, dtype=float).ravel()
        if y.shape != se.shape:
            raise ValidationError(f"y and se lengths differ ({y.size} vs {se.size})")
        rows = [{"y": a, "se": b} for a, b in zip(y.tolist(), se.tolist())]
        return validate_dataset(rows, label=label)

    def __len__(self) -> int:
        return len(self.studies)

    @property
    def n(self) -> int:
        return len(self.studies)

    @property
    def y(self) -> np.ndarray:
        return _frozen([s.y for s in self.studies])

    @property
    def se(self) -> np.ndarray:
        return _frozen([s.se for s in self.studies])

    @property
    def z(self) -> np.ndarray:
        return _frozen([s.y / s.se for s in self.studies])

    def flipped(self) -> "Dataset":
        """Dataset with every effect sign-reversed (expected direction negative)."""
        return Dataset(tuple(Study(-s.y, s.se) for s in self.studies), self.label)


def validate_dataset(rows, label: str = "") -> Dataset:
    """Build a :class:`Dataset` from row mappings, collecting every violation.

    ``rows`` may be a sequence of ``Study`` objects or of mappings with ``y``
    and ``se`` keys. Row numbers in error messages are 1-based data rows.
    Raises :class:`ValidationError` listing all bad rows at once.
    """
    errors = []
    studies = []
    for i, row in enumerate(rows, start=1):
        if isinstance(row, Study):
            studies.append(row)
            continue
        y, se = row["y"], row["se"]
        bad = False
        if y is None or not math.isfinite(y):
            errors.append(f"row {i}: y is not finite ({y!r})")
            bad = True
        if se is None or not math.isfinite(se):
            errors.append(f"row {i}: se is not finite ({se!r})")
            bad = True
        elif se <= 0:
            errors.append(f"row {i}: se must be > 0 (got {se!r})")
            bad = True
        if not bad:
            studies.append(Study(float(y), float(se)))
    if not studies and not errors:
        errors.append("empty dataset")
    if errors:
        raise ValidationError(errors)
    return Dataset(tuple(studies), label)


# ---------------------------------------------------------------------------
# Model specification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WeightFunction:
    """Step selection function over p-value intervals.

    ``alphas`` are stored strictly decreasing; ``omegas`` (optional) run from
    the least significant interval to the most significant one, whose weight
    is fixed at 1. ``omegas=None`` describes the shape only, as used inside a
    :class:`ModelSpec` whose weights are estimated.
    """

    side: str = "two-sided"
    alphas: tuple[float, ...] = ()
    omegas: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.side not in SIDES:
            raise ValidationError(f"side must be one of {SIDES}, got {self.side!r}")
        alphas = tuple(sorted((float(a) for a in self.alphas), reverse=True))
        if any(not 0 < a < 1 for a in alphas):
            raise ValidationError(f"alphas must lie in (0, 1): {alphas}")
        if len(set(alphas)) != len(alphas):
            raise ValidationError(f"alphas must be distinct: {alphas}")
        object.__setattr__(self, "alphas", alphas)
        if self.omegas is not None:
            om = tuple(float(w) for w in self.omegas)
            if len(om) != len(alphas) + 1:
                raise ValidationError(f"need {len(alphas) + 1} omegas, got {len(om)}")
            if any(not 0 < w <= 1 for w in om):
                raise ValidationError(f"omegas must lie in (0, 1]: {om}")
            if om[-1] != 1.0:
                raise ValidationError("the most significant interval's omega must equal 1")
            if any(b < a for a, b in zip(om, om[1:])):
                raise ValidationError(f"omegas must be non-decreasing toward significance: {om}")
            object.__setattr__(self, "omegas", om)

    @property
    def n_intervals(self) -> int:
        return len(self.alphas) + 1

    @property
    def is_constant(self) -> bool:
        return not self.alphas

    def with_omegas(self, omegas) -> "WeightFunction":
        return WeightFunction(self.side, self.alphas, tuple(omegas))

    def omega_array(self) -> np.ndarray:
        if self.omegas is None:
            if self.is_constant:
                return np.ones(1)
            raise ValidationError("weight function has no omega values")
        return np.asarray(self.omegas, dtype=float)

    def to_dict(self) -> dict:
        out = {"side": self.side, "alphas": list(self.alphas)}
        if self.omegas is not None:
            out["omegas"] = list(self.omegas)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "WeightFunction":
        om = d.get("omegas")
        return cls(d.get("side", "two-sided"), tuple(d.get("alphas", ())), None if om is None else tuple(om))


@dataclass(frozen=True)
class Prior:
    family: str
    params: tuple[float, ...] = ()

    def __post_init__(self):
        if self.family not in PRIOR_FAMILIES:
            raise ValidationError(f"unknown prior family {self.family!r}")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        p = self.params
        if self.family == "spike" and len(p) != 1:
            raise ValidationError("spike prior takes one value")
        if self.family == "normal" and (len(p) != 2 or p[1] <= 0):
            raise ValidationError(f"normal prior needs (mean, sd > 0), got {p}")
        if self.family == "invgamma" and (len(p) != 2 or min(p) <= 0):
            raise ValidationError(f"invgamma prior needs (shape > 0, scale > 0), got {p}")
        if self.family == "halfcauchy" and (len(p) != 1 or p[0] <= 0):
            raise ValidationError(f"halfcauchy prior needs (scale > 0), got {p}")
        if self.family == "cumdirichlet" and (len(p) < 2 or min(p) <= 0):
            raise ValidationError(f"cumdirichlet prior needs >= 2 positive alphas, got {p}")

    @property
    def is_spike(self) -> bool:
        return self.family == "spike"

    def to_dict(self) -> dict:
        if self.family == "cumdirichlet":
            return {"family": self.family, "alpha": list(self.params)}
        names = PRIOR_FAMILIES[self.family]
        return {"family": self.family, **dict(zip(names, self.params))}

    @classmethod
    def from_dict(cls, d: dict) -> "Prior":
        fam = d["family"]
        if fam not in PRIOR_FAMILIES:
            raise ValidationError(f"unknown prior family {fam!r}")
        if fam == "cumdirichlet":
            return cls(fam, tuple(d["alpha"]))
        try:
            return cls(fam, tuple(d[k] for k in PRIOR_FAMILIES[fam]))
        except KeyError as exc:
            raise ValidationError(f"prior {fam!r} missing parameter {exc.args[0]!r}") from None


SPIKE_ZERO = Prior("spike", (0.0,))


@dataclass(frozen=True)
class Bias:
    kind: str = "none"
    weight_function: WeightFunction | None = None
    prior: Prior | None = None

    def __post_init__(self):
        if self.kind not in BIAS_KINDS:
            raise ValidationError(f"bias kind must be one of {BIAS_KINDS}, got {self.kind!r}")
        if self.kind == "selection":
            wf = self.weight_function
            if wf is None or wf.is_constant:
                raise ValidationError("selection bias needs a weight function with at least one cutpoint")
            prior = self.prior or Prior("cumdirichlet", (1.0,) * wf.n_intervals)
            if prior.family != "cumdirichlet" or len(prior.params) != wf.n_intervals:
                raise ValidationError("selection weights need a cumdirichlet prior with one alpha per interval")
            object.__setattr__(self, "prior", prior)
        elif self.kind in ("pet", "peese"):
            prior = self.prior or Prior("halfcauchy", (1.0 if self.kind == "pet" else 5.0,))
            if prior.family != "halfcauchy":
                raise ValidationError(f"{self.kind} slope needs a halfcauchy prior")
            object.__setattr__(self, "prior", prior)

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"kind": self.kind}
        if self.weight_function is not None:
            out["weight_function"] = self.weight_function.to_dict()
        if self.prior is not None:
            out["prior"] = self.prior.to_dict()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Bias":
        wf = d.get("weight_function")
        pr = d.get("prior")
        return cls(
            d.get("kind", "none"),
            None if wf is None else WeightFunction.from_dict(wf),
            None if pr is None else Prior.from_dict(pr),
        )


@dataclass(frozen=True)
class ModelSpec:
    """One meta-analytic model: effect x heterogeneity x bias component."""

    name: str
    effect: Prior = SPIKE_ZERO
    heterogeneity: Prior = SPIKE_ZERO
    bias: Bias = field(default_factory=Bias)
    prior_prob: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.prior_prob <= 1.0:
            raise ValidationError(f"prior_prob must lie in [0, 1], got {self.prior_prob}")
        if self.effect.family not in ("spike", "normal"):
            raise ValidationError(f"effect prior must be spike or normal, got {self.effect.family}")
        if self.heterogeneity.family not in ("spike", "invgamma"):
            raise ValidationError(f"heterogeneity prior must be spike or invgamma, got {self.heterogeneity.family}")
        if self.heterogeneity.is_spike and self.heterogeneity.params[0] < 0:
            raise ValidationError("heterogeneity spike must be >= 0")

    @property
    def has_effect(self) -> bool:
        return not self.effect.is_spike

    @property
    def has_heterogeneity(self) -> bool:
        return not self.heterogeneity.is_spike

    @property
    def has_bias(self) -> bool:
        return self.bias.kind != "none"

    @property
    def param_names(self) -> tuple[str, ...]:
        names = []
        if self.has_effect:
            names.append("mu")
        if self.has_heterogeneity:
            names.append("tau")
        if self.bias.kind in ("pet", "peese"):
            names.append("beta")
        elif self.bias.kind == "selection":
            names += [f"omega[{j}]" for j in range(1, self.bias.weight_function.n_intervals)]
        return tuple(names)

    @property
    def n_params(self) -> int:
        return len(self.param_names)

    def with_prior_prob(self, p: float) -> "ModelSpec":
        return ModelSpec(self.name, self.effect, self.heterogeneity, self.bias, p)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "effect": self.effect.to_dict(),
            "heterogeneity": self.heterogeneity.to_dict(),
            "bias": self.bias.to_dict(),
            "prior_prob": self.prior_prob,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            d["name"],
            Prior.from_dict(d["effect"]),
            Prior.from_dict(d["heterogeneity"]),
            Bias.from_dict(d.get("bias", {"kind": "none"})),
            float(d.get("prior_prob", 1.0)),
        )


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Summary:
    median: float
    lower: float
    upper: float

    @classmethod
    def of(cls, values, level: float = 0.95) -> "Summary":
        v = np.asarray(values, dtype=float)
        lo, med, hi = np.quantile(v, [(1 - level) / 2, 0.5, (1 + level) / 2])
        return cls(float(med), float(lo), float(hi))

    def to_dict(self) -> dict:
        return {"median": self.median, "lower": self.lower, "upper": self.upper}

    @classmethod
    def from_dict(cls, d: dict) -> "Summary":
        return cls(d["median"], d["lower"], d["upper"])


@dataclass(frozen=True)
class PosteriorDraws:
    """Retained MCMC draws of one model on the constrained scale.

    ``unconstrained`` carries the same draws on the sampler's working scale
    (log for tau and beta, stick-breaking logits for omega).
    """

    names: tuple[str, ...]
    draws: np.ndarray
    unconstrained: np.ndarray
    chain_ids: np.ndarray
    seed: int
    rhat: dict = field(default_factory=dict)
    ess: dict = field(default_factory=dict)
    acceptance: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        for name in ("draws", "unconstrained", "acceptance"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        ids = np.array(self.chain_ids, dtype=np.int64)
        ids.setflags(write=False)
        object.__setattr__(self, "chain_ids", ids)

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.draws[:, self.names.index(name)]


@dataclass(frozen=True)
class ModelFit:
    spec: ModelSpec
    draws: PosteriorDraws
    log_ml: float
    log_ml_se: float
    method: str
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class PredictiveCurve:
    grid: np.ndarray
    fitted: np.ndarray
    fitted_lower: np.ndarray
    fitted_upper: np.ndarray
    extrapolated: np.ndarray
    extrapolated_lower: np.ndarray
    extrapolated_upper: np.ndarray
    mass_fitted: float
    mass_extrapolated: float
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        for name in ("grid", "fitted", "fitted_lower", "fitted_upper",
                     "extrapolated", "extrapolated_lower", "extrapolated_upper"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))


@dataclass(frozen=True)
class BiasMetrics:
    edr: Summary
    fdr: Summary
    n_missing: Summary
    odr: float
    per_draw: np.ndarray | None = None
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "odr": self.odr,
            "edr": self.edr.to_dict(),
            "fdr": self.fdr.to_dict(),
            "n_missing": self.n_missing.to_dict(),
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BiasMetrics":
        return cls(
            Summary.from_dict(d["edr"]),
            Summary.from_dict(d["fdr"]),
            Summary.from_dict(d["n_missing"]),
            float(d["odr"]),
            None,
            tuple(d.get("flags", ())),
        )


@dataclass(frozen=True)
class ModelSpace:
    """A set of models with prior model probabilities summing to one."""

    specs: tuple[ModelSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "specs", tuple(self.specs))
        if not self.specs:
            raise ValidationError("model space is empty")
        names = [s.name for s in self.specs]
        if len(set(names)) != len(names):
            raise ValidationError("model names must be unique")
        total = math.fsum(s.prior_prob for s in self.specs)
        if abs(total - 1.0) > 1e-12:
            raise ValidationError(f"prior model probabilities sum to {total!r}, not 1")

    def __len__(self) -> int:
        return len(self.specs)

    def __iter__(self):
        return iter(self.specs)

    @property
    def prior_probs(self) -> np.ndarray:
        return np.array([s.prior_prob for s in self.specs])

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.specs)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def component_mask(self, component: str) -> np.ndarray:
        attr = {"effect": "has_effect", "heterogeneity": "has_heterogeneity", "bias": "has_bias"}
        if component not in attr:
            raise ValidationError(f"component must be one of {sorted(attr)}, got {component!r}")
        return np.array([getattr(s, attr[component]) for s in self.specs])

    def to_dict(self) -> dict:
        return {"models": [s.to_dict() for s in self.specs]}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpace":
        return cls(tuple(ModelSpec.from_dict(m) for m in d["models"]))


@dataclass(frozen=True)
class FitResult:
    """Per-model fits plus ensemble-level model averaging."""

    space: ModelSpace
    fits: tuple[ModelFit, ...]
    posterior_probs: np.ndarray
    inclusion_bf: dict
    mu: Summary
    tau: Summary

    def fit_named(self, name: str) -> ModelFit:
        return self.fits[self.space.index(name)]
