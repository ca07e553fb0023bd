"""Threshold-aligned z histograms and SVG z-curve figures."""

from __future__ import annotations

import math
from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

from .model import Dataset, ValidationError

DEFAULT_EDGES = (-1.96, -1.64, 0.0, 1.64, 1.96)
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")


@dataclass(frozen=True)
class Histogram:
    """Density-scaled histogram of z statistics.

    ``heights`` are count / (n * width), so in-range bars plus the two
    overflow shares ``below`` and ``above`` account for the whole sample.
    """

    edges: np.ndarray
    heights: np.ndarray
    counts: np.ndarray
    mandatory: tuple[float, ...]
    below: float
    above: float
    n: int

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def area(self) -> float:
        return float(np.sum(self.heights * self.widths))

    @property
    def has_overflow(self) -> bool:
        return self.below > 0 or self.above > 0


def bin_edges(mandatory=DEFAULT_EDGES, width: float = 0.25, z_range=(-6.0, 6.0)) -> np.ndarray:
    """Edges that contain every mandatory edge verbatim.

    Each gap between consecutive mandatory edges and range bounds gets
    ``ceil(gap / width)`` equal bins.
    """
    if not (width > 0 and math.isfinite(width)):
        raise ValidationError(f"bin width must be positive, got {width}")
    lo, hi = float(z_range[0]), float(z_range[1])
    if not lo < hi:
        raise ValidationError("histogram range must be increasing")
    mand = sorted(set(float(m) for m in mandatory))
    if mand and (mand[0] < lo or mand[-1] > hi):
        raise ValidationError(f"range [{lo}, {hi}] does not cover mandatory edges {mand}")
    knots = sorted(set([lo, hi] + mand))
    edges = [knots[0]]
    for a, b in zip(knots[:-1], knots[1:]):
        # guard against 1.64 / 0.41 style round-off pushing the count up
        n = max(1, math.ceil((b - a) / width - 1e-9))
        edges += [a + (b - a) * i / n for i in range(1, n)] + [b]
    return np.asarray(edges)


def histogram_bins(d: Dataset, mandatory=DEFAULT_EDGES, width: float = 0.25, z_range=(-6.0, 6.0)) -> Histogram:
    """Bin ``d.z`` with bins ``[lo, hi)``; the last bin also holds the upper bound."""
    edges = bin_edges(mandatory, width, z_range)
    z = d.z
    n = z.size
    inside = (z >= edges[0]) & (z <= edges[-1])
    idx = np.searchsorted(edges, z[inside], side="right") - 1
    idx = np.minimum(idx, edges.size - 2)
    counts = np.bincount(idx, minlength=edges.size - 1)
    heights = counts / (n * np.diff(edges))
    below = float(np.count_nonzero(z < edges[0])) / n
    above = float(np.count_nonzero(z > edges[-1])) / n
    return Histogram(edges, heights, counts, tuple(sorted(set(float(m) for m in mandatory))), below, above, n)


@dataclass(frozen=True)
class PlotOptions:
    width: int = 800
    height: int = 480
    margin_left: int = 64
    margin_right: int = 24
    margin_top: int = 28
    margin_bottom: int = 52
    extrapolate: bool = False
    band: bool = False
    title: str = ""

    @property
    def plot_width(self) -> int:
        return self.width - self.margin_left - self.margin_right

    @property
    def plot_height(self) -> int:
        return self.height - self.margin_top - self.margin_bottom


def _f(x: float) -> str:
    s = f"{x:.6g}"
    return "0" if s == "-0" else s


def x_to_px(z, hist: Histogram, opts: PlotOptions):
    lo, hi = hist.edges[0], hist.edges[-1]
    return opts.margin_left + (np.asarray(z, dtype=float) - lo) / (hi - lo) * opts.plot_width


def _nice_step(top: float) -> float:
    raw = top / 5
    mag = 10 ** math.floor(math.log10(raw))
    for m in (1, 2, 2.5, 5, 10):
        if m * mag >= raw:
            return m * mag
    return 10 * mag


def _check_grids(curves):
    if not curves:
        return None
    grid = curves[0][1].grid
    for name, c in curves[1:]:
        if c.grid.shape != grid.shape or not np.array_equal(c.grid, grid):
            raise ValidationError(f"curve {name!r} uses a different grid from {curves[0][0]!r}")
    return grid


def _series(curves, opts: PlotOptions):
    """(label, values, lower, upper, dashed, colour) for every line to draw."""
    out = []
    for k, (name, c) in enumerate(curves):
        colour = PALETTE[k % len(PALETTE)]
        out.append((name, c.fitted, c.fitted_lower, c.fitted_upper, False, colour))
        if opts.extrapolate:
            out.append((f"{name} (extrapolated)", c.extrapolated, c.extrapolated_lower,
                        c.extrapolated_upper, True, colour))
    return out


def render_zcurve(hist: Histogram, curves, opts: PlotOptions | None = None) -> tuple[str, str]:
    """Render an SVG figure and the matching plot-data CSV.

    Parameters
    ----------
    hist : Histogram
    curves : sequence of (name, PredictiveCurve)
        All curves must share one grid.
    opts : PlotOptions, optional

    Returns
    -------
    svg, csv : str
    """
    opts = opts or PlotOptions()
    curves = list(curves)
    grid = _check_grids(curves)
    series = _series(curves, opts)

    top = float(hist.heights.max()) if hist.heights.size else 0.0
    if grid is not None:
        in_view = (grid >= hist.edges[0]) & (grid <= hist.edges[-1])
        for _, vals, lo, hi, _, _ in series:
            ref = hi if opts.band else vals
            top = max(top, float(np.max(ref[in_view])) if in_view.any() else 0.0)
    top = top * 1.05 if top > 0 else 1.0
    step = _nice_step(top)
    top = step * math.ceil(top / step - 1e-9)

    def px(z):
        return x_to_px(z, hist, opts)

    def py(v):
        return opts.margin_top + opts.plot_height * (1.0 - np.asarray(v, dtype=float) / top)

    x0, x1 = opts.margin_left, opts.margin_left + opts.plot_width
    y0, y1 = opts.margin_top, opts.margin_top + opts.plot_height
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{opts.width}" height="{opts.height}" '
        f'viewBox="0 0 {opts.width} {opts.height}">',
        f'<rect x="0" y="0" width="{opts.width}" height="{opts.height}" fill="white"/>',
    ]
    if opts.title:
        out.append(f'<text x="{_f(opts.width / 2)}" y="18" text-anchor="middle" font-size="14">{escape(opts.title)}</text>')

    out.append('<g id="histogram" fill="#c8c8c8" stroke="#8a8a8a" stroke-width="0.5">')
    for a, b, h in zip(hist.edges[:-1], hist.edges[1:], hist.heights):
        if h <= 0:
            continue
        xa, xb, yt = float(px(a)), float(px(b)), float(py(h))
        out.append(f'<rect x="{_f(xa)}" y="{_f(yt)}" width="{_f(xb - xa)}" height="{_f(y1 - yt)}"/>')
    out.append("</g>")

    if grid is not None:
        keep = (grid >= hist.edges[0]) & (grid <= hist.edges[-1])
        gx = px(grid[keep])
        if opts.band:
            out.append('<g id="bands" stroke="none">')
            for label, _, lo, hi, _, colour in series:
                upper = [f"{_f(x)},{_f(y)}" for x, y in zip(gx, py(np.minimum(hi[keep], top)))]
                lower = [f"{_f(x)},{_f(y)}" for x, y in zip(gx[::-1], py(np.minimum(lo[keep], top))[::-1])]
                out.append(f'<polygon fill="{colour}" fill-opacity="0.2" points="{" ".join(upper + lower)}"/>')
            out.append("</g>")
        out.append('<g id="curves" fill="none" stroke-width="2">')
        for label, vals, _, _, dashed, colour in series:
            pts = " ".join(f"{_f(x)},{_f(y)}" for x, y in zip(gx, py(np.minimum(vals[keep], top))))
            dash = ' stroke-dasharray="6,4"' if dashed else ""
            out.append(f'<polyline stroke="{colour}"{dash} points="{pts}"/>')
        out.append("</g>")

    out.append('<g id="thresholds" stroke="#444444" stroke-width="1" stroke-dasharray="2,3">')
    for m in hist.mandatory:
        xm = _f(float(px(m)))
        out.append(f'<line x1="{xm}" y1="{_f(y0)}" x2="{xm}" y2="{_f(y1)}"/>')
    out.append("</g>")

    out.append('<g id="axes" stroke="black" stroke-width="1" font-size="11" text-anchor="middle">')
    out.append(f'<line x1="{x0}" y1="{y1}" x2="{x1}" y2="{y1}"/>')
    out.append(f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/>')
    for t in range(math.ceil(hist.edges[0]), math.floor(hist.edges[-1]) + 1):
        xt = _f(float(px(t)))
        out.append(f'<line x1="{xt}" y1="{y1}" x2="{xt}" y2="{y1 + 5}"/>')
        out.append(f'<text x="{xt}" y="{y1 + 18}" stroke="none">{t}</text>')
    n_y = int(round(top / step))
    for i in range(n_y + 1):
        v = i * step
        yt = _f(float(py(v)))
        out.append(f'<line x1="{x0 - 5}" y1="{yt}" x2="{x0}" y2="{yt}"/>')
        out.append(f'<text x="{x0 - 8}" y="{yt}" dy="4" stroke="none" text-anchor="end">{_f(v)}</text>')
    out.append(f'<text x="{_f((x0 + x1) / 2)}" y="{opts.height - 12}" stroke="none">z statistic</text>')
    out.append(f'<text x="16" y="{_f((y0 + y1) / 2)}" stroke="none" '
               f'transform="rotate(-90 16 {_f((y0 + y1) / 2)})">density</text>')
    out.append("</g>")

    if series:
        out.append('<g id="legend" font-size="11">')
        for k, (label, _, _, _, dashed, colour) in enumerate(series):
            ly = y0 + 12 + 16 * k
            dash = ' stroke-dasharray="6,4"' if dashed else ""
            out.append(f'<line x1="{x1 - 170}" y1="{ly}" x2="{x1 - 146}" y2="{ly}" stroke="{colour}" stroke-width="2"{dash}/>')
            out.append(f'<text x="{x1 - 140}" y="{ly + 4}">{escape(label)}</text>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n", plot_data_csv(hist, curves, opts)


def _col_name(label: str) -> str:
    return label.replace(",", "_").replace(" ", "_")


def plot_data_csv(hist: Histogram, curves, opts: PlotOptions | None = None) -> str:
    """Rows ``bin`` (including the two overflow rows) and ``curve`` (one per grid point).

    For overflow rows ``hist_height`` is the share of studies outside the
    range, so ``sum(height * width) + overflow shares`` is 1.
    """
    opts = opts or PlotOptions()
    curves = list(curves)
    grid = _check_grids(curves)
    cols = []
    for name, _ in curves:
        base = _col_name(name)
        cols.append((base, "fitted"))
        if opts.extrapolate:
            cols.append((base + "_extrapolated", "extrapolated"))
    header = ["row", "z", "bin_lo", "bin_hi", "hist_height", "overflow"]
    for base, _ in cols:
        header += [f"curve_{base}", f"band_lo_{base}", f"band_hi_{base}"]
    blank = [""] * (3 * len(cols))
    lines = [",".join(header)]
    lo0, hi0 = hist.edges[0], hist.edges[-1]
    lines.append(",".join(["bin", "", "-inf", repr(float(lo0)), repr(hist.below), "1"] + blank))
    for a, b, h in zip(hist.edges[:-1], hist.edges[1:], hist.heights):
        lines.append(",".join(["bin", repr(float((a + b) / 2)), repr(float(a)), repr(float(b)), repr(float(h)), "0"] + blank))
    lines.append(",".join(["bin", "", repr(float(hi0)), "inf", repr(hist.above), "1"] + blank))
    if grid is not None:
        arrays = []
        for (name, c) in curves:
            arrays.append((c.fitted, c.fitted_lower, c.fitted_upper))
            if opts.extrapolate:
                arrays.append((c.extrapolated, c.extrapolated_lower, c.extrapolated_upper))
        for g, z in enumerate(grid):
            row = ["curve", repr(float(z)), "", "", "", ""]
            for v, lo, hi in arrays:
                row += [repr(float(v[g])), repr(float(lo[g])), repr(float(hi[g]))]
            lines.append(",".join(row))
    return "\n".join(lines) + "\n"
