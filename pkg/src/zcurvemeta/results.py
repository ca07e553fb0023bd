"""Fit-result persistence: a versioned, deterministic JSON document."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .densities import interval_cutpoints
from .evidence import bias_conditional_probs, bf_flag, model_averaged_draws
from .model import (
    BiasMetrics,
    Dataset,
    FitResult,
    ModelFit,
    ModelSpace,
    PosteriorDraws,
    Summary,
    ValidationError,
)
from .predictive import DrawTable, bias_metrics, draw_table

SCHEMA_VERSION = 1
MAX_STORED_DRAWS = 10_000
METRIC_DRAWS = 10_000


class SchemaError(RuntimeError):
    """The fit file was written by an incompatible version."""


def _num(x):
    """JSON-safe float: non-finite values become strings that ``float()`` reads back."""
    x = float(x)
    if math.isfinite(x):
        return x
    return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")


def draw_count_budget(space: ModelSpace, total: int) -> int:
    """Per-model stored draws so that all models together keep at most ``total``."""
    n_free = sum(1 for s in space.specs if s.n_params > 0)
    return max(1, total // max(n_free, 1))


def _thin_rows(n: int, keep: int) -> np.ndarray:
    if keep >= n:
        return np.arange(n)
    return np.unique(np.linspace(0, n - 1, keep).round().astype(np.int64))


def ensemble_table(result: FitResult, ensemble: str, count: int, seed: int) -> tuple[DrawTable, list[str]]:
    """Pooled parameter draws for the requested reference ensemble.

    ``ensemble`` is ``"bias"`` (bias-adjusted models only, renormalized) or
    ``"full"``. Falls back to the full ensemble when the bias-adjusted
    models carry no posterior mass.
    """
    notes = []
    probs = result.posterior_probs
    if ensemble == "bias":
        cond = bias_conditional_probs(result.space, probs)
        if cond is None:
            notes.append("bias-adjusted models have zero posterior mass; using the full ensemble")
        else:
            probs = cond
    elif ensemble != "full":
        raise ValidationError(f"ensemble must be 'bias' or 'full', got {ensemble!r}")
    pooled = model_averaged_draws(result.space, result.fits, count, seed, probs)
    return draw_table(result.space, result.fits, pooled), notes


def fit_document(result: FitResult, data: Dataset, config: dict, ensemble: str = "bias",
                 full_draws: bool = False) -> dict:
    """Serializable summary of a fitted model space.

    ``config`` is recorded verbatim and must hold ``seed``.
    """
    seed = int(config["seed"])
    space = result.space
    table, notes = ensemble_table(result, ensemble, METRIC_DRAWS, seed)
    metrics = bias_metrics(table, data)
    budget = draw_count_budget(space, MAX_STORED_DRAWS)
    models = []
    for k, (spec, fit) in enumerate(zip(space.specs, result.fits)):
        pd_ = fit.draws
        rows = np.arange(pd_.n_draws) if full_draws else _thin_rows(pd_.n_draws, budget)
        entry = {
            "name": spec.name,
            "spec": spec.to_dict(),
            "prior_prob": spec.prior_prob,
            "posterior_prob": _num(result.posterior_probs[k]),
            "log_ml": _num(fit.log_ml),
            "log_ml_se": _num(fit.log_ml_se),
            "method": fit.method,
            "warnings": list(fit.warnings),
            "diagnostics": {
                "rhat": {n: _num(v) for n, v in pd_.rhat.items()},
                "ess": {n: _num(v) for n, v in pd_.ess.items()},
                "acceptance": [[_num(v) for v in row] for row in pd_.acceptance],
            },
            "draws": {
                "names": list(pd_.names),
                "chain": pd_.chain_ids[rows].tolist() if pd_.n_draws else [],
                "values": pd_.draws[rows].tolist() if pd_.n_draws else [],
            },
        }
        if spec.bias.kind == "selection":
            entry["cutpoints"] = interval_cutpoints(spec.bias.weight_function).tolist()
        models.append(entry)
    return {
        "schema_version": SCHEMA_VERSION,
        "config": {**config, "ensemble": ensemble, "full_draws": bool(full_draws),
                   "space": space.to_dict()},
        "data": {"n": data.n, "odr": metrics.odr},
        "models": models,
        "inclusion_bf": {c: _num(v) for c, v in result.inclusion_bf.items()},
        "bf_flags": {c: bf_flag(v) for c, v in result.inclusion_bf.items() if bf_flag(v)},
        "mu": result.mu.to_dict(),
        "tau": result.tau.to_dict(),
        "bias_metrics": metrics.to_dict(),
        "notes": notes,
    }


def dumps(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=1, allow_nan=False) + "\n"


def save_fit(doc: dict, path) -> None:
    Path(path).write_text(dumps(doc), encoding="utf-8")


def load_fit(path) -> dict:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    check_schema(doc)
    return doc


def check_schema(doc: dict) -> None:
    version = doc.get("schema_version") if isinstance(doc, dict) else None
    if version != SCHEMA_VERSION:
        raise SchemaError(
            f"fit file has schema_version {version!r} but this version reads {SCHEMA_VERSION}; "
            "re-run 'fit' to migrate it"
        )


def result_from_document(doc: dict) -> FitResult:
    """Rebuild a :class:`FitResult` carrying the stored (possibly thinned) draws."""
    check_schema(doc)
    space = ModelSpace.from_dict(doc["config"]["space"])
    fits = []
    for spec, m in zip(space.specs, doc["models"]):
        if m["name"] != spec.name:
            raise SchemaError(f"model order mismatch: {m['name']!r} vs {spec.name!r}")
        names = tuple(m["draws"]["names"])
        values = np.asarray(m["draws"]["values"], dtype=float).reshape(-1, len(names)) if names else np.zeros((0, 0))
        diag = m["diagnostics"]
        draws = PosteriorDraws(
            names, values, np.zeros((0, len(names))), np.asarray(m["draws"]["chain"], dtype=np.int64),
            int(doc["config"]["seed"]),
            {k: float(v) for k, v in diag["rhat"].items()},
            {k: float(v) for k, v in diag["ess"].items()},
            np.asarray(diag["acceptance"], dtype=float).reshape(-1, len(names)) if names else np.zeros((0, 0)),
            tuple(m["warnings"]),
        )
        fits.append(ModelFit(spec, draws, float(m["log_ml"]), float(m["log_ml_se"]), m["method"], tuple(m["warnings"])))
    probs = np.array([float(m["posterior_prob"]) for m in doc["models"]])
    return FitResult(space, tuple(fits), probs,
                     {c: float(v) for c, v in doc["inclusion_bf"].items()},
                     Summary.from_dict(doc["mu"]), Summary.from_dict(doc["tau"]))


def metrics_from_document(doc: dict) -> BiasMetrics:
    return BiasMetrics.from_dict(doc["bias_metrics"])
