"""Fitted and extrapolated posterior predictive z densities, bands and bias metrics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from . import kernels as K
from .densities import interval_cutpoints, kernel_code, norm_ppf
from .evidence import PooledDraws
from .ingest import observed_discovery_rate
from .model import BiasMetrics, Dataset, ModelSpace, ModelSpec, PredictiveCurve, Summary, ValidationError

log = logging.getLogger(__name__)

MIN_MASS = 1e-10
# exact two-sided .05 critical value, so a null draw has EDR equal to the test size
Z_CRIT = norm_ppf(0.975)


@dataclass(frozen=True)
class GridConfig:
    z_min: float = -6.0
    z_max: float = 6.0
    points: int = 601
    band: float = 0.95

    def __post_init__(self):
        errors = []
        if not self.z_min < self.z_max:
            errors.append("z_min must be below z_max")
        if self.points < 51:
            errors.append("grid needs at least 51 points")
        if not 0 < self.band < 1:
            errors.append("band level must lie in (0, 1)")
        if errors:
            raise ValidationError(errors)

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(self.z_min, self.z_max, self.points)


@dataclass(frozen=True)
class DrawTable:
    """Constrained parameter draws, possibly mixing several models.

    ``omega`` is padded with ones to the widest weight function in ``specs``.
    Row ``r`` belongs to ``specs[model_idx[r]]``.
    """

    specs: tuple[ModelSpec, ...]
    model_idx: np.ndarray
    mu: np.ndarray
    tau: np.ndarray
    beta: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        n = self.mu.size
        errors = []
        if any(np.shape(a) != (n,) for a in (self.model_idx, self.tau, self.beta)):
            errors.append("mu, tau, beta and model_idx must have one entry per draw")
        if self.omega.ndim != 2 or self.omega.shape[0] != n:
            errors.append("omega must have one row per draw")
        else:
            need = max(s.bias.weight_function.n_intervals if s.bias.kind == "selection" else 1 for s in self.specs)
            if self.omega.shape[1] < need:
                errors.append(f"omega needs {need} columns (one per p-value interval), got {self.omega.shape[1]}")
        if n and (self.model_idx.min() < 0 or self.model_idx.max() >= len(self.specs)):
            errors.append("model_idx out of range")
        if errors:
            raise ValidationError(errors)

    def __len__(self) -> int:
        return self.mu.size

    @classmethod
    def single(cls, spec: ModelSpec, mu, tau=0.0, beta=0.0, omega=None) -> "DrawTable":
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        n = mu.size
        tau = np.broadcast_to(np.asarray(tau, dtype=float), (n,)).copy()
        beta = np.broadcast_to(np.asarray(beta, dtype=float), (n,)).copy()
        if omega is None:
            omega = np.ones((n, 1))
        else:
            omega = np.atleast_2d(np.asarray(omega, dtype=float))
            omega = np.broadcast_to(omega, (n, omega.shape[1])).copy()
        return cls((spec,), np.zeros(n, dtype=np.int64), mu, tau, beta, omega)

    def subset(self, mask) -> "DrawTable":
        mask = np.asarray(mask)
        return DrawTable(self.specs, self.model_idx[mask], self.mu[mask], self.tau[mask],
                         self.beta[mask], self.omega[mask])

    def groups(self):
        """Yield ``(spec, row indices)`` per model present, in model order."""
        for k in np.unique(self.model_idx):
            yield self.specs[k], np.flatnonzero(self.model_idx == k)

    @property
    def is_selection(self) -> np.ndarray:
        kinds = np.array([s.bias.kind == "selection" for s in self.specs])
        return kinds[self.model_idx]


def _spec_arrays(spec: ModelSpec, draws: np.ndarray, rows: np.ndarray, width: int):
    """mu, tau, beta, padded omega for selected rows of one model's constrained draws."""
    n = rows.size
    names = spec.param_names
    pick = (lambda name: draws[rows, names.index(name)]) if n and draws.size else None
    mu = pick("mu") if spec.has_effect else np.full(n, spec.effect.params[0])
    tau = pick("tau") if spec.has_heterogeneity else np.full(n, spec.heterogeneity.params[0])
    beta = pick("beta") if spec.bias.kind in ("pet", "peese") else np.zeros(n)
    omega = np.ones((n, width))
    if spec.bias.kind == "selection":
        J = spec.bias.weight_function.n_intervals
        for j in range(1, J):
            omega[:, j - 1] = pick(f"omega[{j}]")
    return mu, tau, beta, omega


def draw_table(space: ModelSpace, fits, pooled: PooledDraws) -> DrawTable:
    """Materialize pooled mixture draws into parameter arrays."""
    width = max(s.bias.weight_function.n_intervals if s.bias.kind == "selection" else 1 for s in space.specs)
    n = len(pooled)
    mu, tau, beta = np.empty(n), np.empty(n), np.empty(n)
    omega = np.ones((n, width))
    for k in np.unique(pooled.model_idx):
        sel = np.flatnonzero(pooled.model_idx == k)
        rows = pooled.row_idx[sel]
        rows = np.where(rows < 0, 0, rows)
        m, t, b, o = _spec_arrays(space.specs[k], fits[k].draws.draws, rows, width)
        mu[sel], tau[sel], beta[sel], omega[sel] = m, t, b, o
    return DrawTable(space.specs, pooled.model_idx.copy(), mu, tau, beta, omega)


def _group_code(spec: ModelSpec):
    code = kernel_code(spec)
    bias_kind = int(code.icode[2])
    side = int(code.icode[3])
    return bias_kind, side, code.cut, int(code.icode[4])


def study_masses(table: DrawTable, data: Dataset) -> np.ndarray:
    """Selection mass ``I`` per draw (rows) and study (columns); 1 for non-selection draws."""
    se = np.ascontiguousarray(data.se)
    out = np.ones((len(table), se.size))
    for spec, rows in table.groups():
        bias_kind, side, cut, J = _group_code(spec)
        if bias_kind != K.BIAS_SELECTION:
            continue
        out[rows] = K.study_mass(
            np.ascontiguousarray(table.mu[rows]), np.ascontiguousarray(table.tau[rows]),
            np.ascontiguousarray(table.beta[rows]), np.ascontiguousarray(table.omega[rows, :J]),
            bias_kind, side, cut, se,
        )
    return out


def z_density_matrix(table: DrawTable, data: Dataset, grid, mode: int = K.MODE_FITTED) -> np.ndarray:
    """Per-draw predictive density of z, averaged over the observed standard errors."""
    grid = np.ascontiguousarray(grid, dtype=float)
    se = np.ascontiguousarray(data.se)
    out = np.empty((len(table), grid.size))
    for spec, rows in table.groups():
        bias_kind, side, cut, J = _group_code(spec)
        out[rows] = K.z_density(
            np.ascontiguousarray(table.mu[rows]), np.ascontiguousarray(table.tau[rows]),
            np.ascontiguousarray(table.beta[rows]), np.ascontiguousarray(table.omega[rows, :J]),
            bias_kind, side, cut, se, grid, mode,
        )
    return out


def pointwise_band(matrix, level: float = 0.95):
    """Central ``level`` quantiles of each column (linear interpolation, type 7)."""
    m = np.asarray(matrix, dtype=float)
    if m.shape[0] < 2:
        raise ValidationError("a pointwise band needs at least 2 draws")
    lo, hi = np.quantile(m, [(1 - level) / 2, (1 + level) / 2], axis=0)
    return lo, hi


@dataclass(frozen=True)
class CurveBand:
    grid: np.ndarray
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    mass: float


def _summarize(matrix, grid, level) -> CurveBand:
    mean = matrix.mean(axis=0)
    if matrix.shape[0] >= 2:
        lo, hi = pointwise_band(matrix, level)
    else:
        lo, hi = mean.copy(), mean.copy()
    # quantiles can sit a rounding error away from an identical mean
    lo = np.minimum(lo, mean)
    hi = np.maximum(hi, mean)
    return CurveBand(grid, mean, lo, hi, float(np.trapezoid(mean, grid)))


def fitted_z_density(table: DrawTable, data: Dataset, grid_cfg: GridConfig | None = None):
    """Per-draw fitted density matrix and its mean/band summary."""
    grid_cfg = grid_cfg or GridConfig()
    if len(table) == 0:
        raise ValidationError("no draws")
    grid = grid_cfg.grid
    mat = z_density_matrix(table, data, grid, K.MODE_FITTED)
    return mat, _summarize(mat, grid, grid_cfg.band)


def extrapolated_z_density(table: DrawTable, data: Dataset, grid_cfg: GridConfig | None = None,
                           printed_variant: bool = False):
    """Per-draw density with publication bias removed.

    Selection draws use the unweighted normal divided by the selection mass;
    with ``printed_variant`` they are multiplied by it instead. PET/PEESE
    draws drop the standard-error term. Unadjusted draws pass through.
    """
    grid_cfg = grid_cfg or GridConfig()
    if len(table) == 0:
        raise ValidationError("no draws")
    if table.is_selection.any():
        masses = study_masses(table.subset(table.is_selection), data)
        if masses.min() < MIN_MASS:
            raise ValidationError(f"selection mass {masses.min():.3g} below {MIN_MASS}; weights are pathological")
    grid = grid_cfg.grid
    mode = K.MODE_EXTRAPOLATED_PRINTED if printed_variant else K.MODE_EXTRAPOLATED
    mat = z_density_matrix(table, data, grid, mode)
    return mat, _summarize(mat, grid, grid_cfg.band)


def predictive_curve(table: DrawTable, data: Dataset, grid_cfg: GridConfig | None = None,
                     extrapolation_table: DrawTable | None = None,
                     printed_variant: bool = False) -> PredictiveCurve:
    """Fitted and extrapolated curves for one set of draws.

    ``extrapolation_table`` defaults to ``table``.
    """
    grid_cfg = grid_cfg or GridConfig()
    _, fit = fitted_z_density(table, data, grid_cfg)
    _, ext = extrapolated_z_density(extrapolation_table or table, data, grid_cfg, printed_variant)
    warnings = []
    if fit.mass < 0.98:
        warnings.append(f"grid [{grid_cfg.z_min}, {grid_cfg.z_max}] holds only {fit.mass:.3f} of the fitted mass")
        log.warning(warnings[-1])
    return PredictiveCurve(fit.grid, fit.mean, fit.lower, fit.upper, ext.mean, ext.lower, ext.upper,
                           fit.mass, ext.mass, tuple(warnings))


def per_draw_mass(table: DrawTable, data: Dataset, mode: int = K.MODE_FITTED,
                  piece: float = 1.0, nodes: int = 12, reach: float = 10.0) -> np.ndarray:
    """Integral of each draw's z density over the real line.

    Uses composite Gauss-Legendre on pieces split at every weight-function
    cutpoint, over a range covering ``reach`` predictive standard deviations
    of every study. On the z scale those deviations are at least 1, so unit
    pieces with 12 nodes resolve each normal component.
    """
    se = data.se
    out = np.empty(len(table))
    x, w = np.polynomial.legendre.leggauss(nodes)
    for spec, rows in table.groups():
        sd = np.sqrt(table.tau[rows, None] ** 2 + se[None, :] ** 2) / se[None, :]
        shift = np.abs(table.beta[rows, None]) * (se[None, :] + se[None, :] ** 2) / se[None, :]
        zm = table.mu[rows, None] / se[None, :]
        lo = float(np.min(zm - shift - reach * sd))
        hi = float(np.max(zm + shift + reach * sd))
        breaks = [lo, hi]
        if spec.bias.kind == "selection":
            cut = interval_cutpoints(spec.bias.weight_function)
            if spec.bias.weight_function.side == "two-sided":
                cut = np.concatenate([-cut, cut])
            breaks += [c for c in cut if lo < c < hi]
        breaks = np.unique(breaks)
        pts, wts = [], []
        for a, b in zip(breaks[:-1], breaks[1:]):
            n_piece = max(1, math.ceil((b - a) / piece))
            edges = np.linspace(a, b, n_piece + 1)
            for u, v in zip(edges[:-1], edges[1:]):
                pts.append(0.5 * (v - u) * x + 0.5 * (u + v))
                wts.append(0.5 * (v - u) * w)
        pts = np.concatenate(pts)
        wts = np.concatenate(wts)
        dens = z_density_matrix(table.subset(rows), data, pts, mode)
        out[rows] = dens @ wts
    return out


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def edr(table: DrawTable, data: Dataset, threshold: float = Z_CRIT):
    """Expected two-sided discovery rate with bias removed, per draw and summarized."""
    se = data.se[None, :]
    sd = np.sqrt(table.tau[:, None] ** 2 + se**2)
    mu = table.mu[:, None]
    upper = 0.5 * erfc((threshold * se - mu) / sd / math.sqrt(2.0))
    lower = 0.5 * erfc((threshold * se + mu) / sd / math.sqrt(2.0))
    vals = (upper + lower).mean(axis=1)
    return vals, Summary.of(vals)


def fdr_from_edr(edr_value, alpha: float = 0.05):
    """Soric upper bound on the false discovery rate, capped at 1.

    Works elementwise on arrays; an EDR of 0 maps to 1.
    """
    e = np.asarray(edr_value, dtype=float)
    if np.any((e < 0) | (e > 1)):
        raise ValidationError("EDR must lie in [0, 1]")
    safe = np.where(e > 0, e, 1.0)
    # written as a ratio so that edr == alpha gives exactly 1
    val = np.where(e > 0, alpha * (1.0 - safe) / (safe * (1.0 - alpha)), 1.0)
    val = np.minimum(val, 1.0)
    return float(val) if val.ndim == 0 else val


def n_missing(table: DrawTable, data: Dataset, printed_variant: bool = False):
    """Expected number of suppressed studies per draw, and its summary.

    With the study-averaged selection mass ``Ibar`` this is
    ``N (1 - Ibar) / Ibar``; ``printed_variant`` gives ``N (1 - Ibar)``.
    Non-selection draws yield exactly 0.
    """
    N = data.n
    vals = np.zeros(len(table))
    sel = table.is_selection
    if sel.any():
        ibar = study_masses(table.subset(sel), data).mean(axis=1)
        if ibar.min() < MIN_MASS:
            raise ValidationError(f"mean selection mass {ibar.min():.3g} below {MIN_MASS}")
        vals[sel] = N * (1.0 - ibar) if printed_variant else N * (1.0 - ibar) / ibar
    vals = np.maximum(vals, 0.0)
    return vals, Summary.of(vals)


def bias_metrics(table: DrawTable, data: Dataset, alpha: float = 0.05,
                 printed_variant: bool = False, keep_draws: bool = False) -> BiasMetrics:
    """EDR, FDR and missing-study summaries; ODR counts ``|z| >= 1.96``."""
    e_vals, e_sum = edr(table, data)
    f_vals = np.asarray(fdr_from_edr(e_vals, alpha))
    n_vals, n_sum = n_missing(table, data, printed_variant)
    flags = []
    if np.any(e_vals == 0):
        flags.append("EDR of 0 in some draws; FDR set to 1 there")
    per_draw = np.column_stack([e_vals, f_vals, n_vals]) if keep_draws else None
    return BiasMetrics(e_sum, Summary.of(f_vals), n_sum, observed_discovery_rate(data),
                       per_draw, tuple(flags))

