"""Reading effect-size tables and observed summary statistics."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import Dataset, ValidationError, validate_dataset


@dataclass(frozen=True)
class IngestConfig:
    y_column: str = "y"
    se_column: str = "se"
    delimiter: str = ","
    header: bool = True

    def __post_init__(self):
        if self.y_column == self.se_column:
            raise ValidationError("y and se column names must differ")


def _to_float(text: str, row: int, column: str) -> float:
    try:
        value = float(text.strip())
    except ValueError:
        raise ValidationError(f"row {row}, column {column!r}: cannot parse {text!r} as a number") from None
    return value


def parse_table(text: str, cfg: IngestConfig | None = None, label: str = "") -> Dataset:
    """Parse CSV text into a validated :class:`Dataset`.

    Columns are located by header name, so their order does not matter.
    Blank rows are skipped; a row with an empty cell is an error.
    """
    cfg = cfg or IngestConfig()
    reader = csv.reader(io.StringIO(text), delimiter=cfg.delimiter)
    rows = [r for r in reader if any(cell.strip() for cell in r)]
    if cfg.header:
        if not rows:
            raise ValidationError("empty dataset")
        header = [h.strip() for h in rows[0]]
        dupes = sorted({h for h in header if header.count(h) > 1})
        if dupes:
            raise ValidationError(f"duplicate header column(s): {', '.join(dupes)}")
        missing = [c for c in (cfg.y_column, cfg.se_column) if c not in header]
        if missing:
            raise ValidationError(f"missing column(s): {', '.join(missing)}")
        iy, ise = header.index(cfg.y_column), header.index(cfg.se_column)
        body = rows[1:]
    else:
        iy, ise = 0, 1
        body = rows

    records, errors = [], []
    for i, r in enumerate(body, start=1):
        rec = {}
        for col, idx in ((cfg.y_column, iy), (cfg.se_column, ise)):
            if idx >= len(r) or not r[idx].strip():
                errors.append(f"row {i}, column {col!r}: missing value")
                continue
            try:
                rec[col] = _to_float(r[idx], i, col)
            except ValidationError as exc:
                errors.extend(exc.errors)
        if len(rec) == 2:
            records.append({"y": rec[cfg.y_column], "se": rec[cfg.se_column]})
        else:
            records.append(None)
    if errors:
        raise ValidationError(errors)
    if not records:
        raise ValidationError("empty dataset")
    return validate_dataset(records, label=label)


def read_table(path, cfg: IngestConfig | None = None) -> Dataset:
    path = Path(path)
    text = path.read_bytes().decode("utf-8-sig")  # tolerate a byte-order mark
    return parse_table(text, cfg, label=path.stem)


def format_table(d: Dataset) -> str:
    """Serialize to the CSV schema read by :func:`parse_table` (round-trip exact)."""
    lines = ["y,se"]
    lines += [f"{s.y!r},{s.se!r}" for s in d.studies]
    return "\n".join(lines) + "\n"


def write_table(d: Dataset, path) -> None:
    Path(path).write_text(format_table(d), encoding="utf-8")


def observed_discovery_rate(d: Dataset, threshold: float = 1.96) -> float:
    """Share of studies with ``|z| >= threshold`` (boundary counts as significant)."""
    if not math.isfinite(threshold) or threshold < 0:
        raise ValidationError(f"threshold must be a finite non-negative z value, got {threshold}")
    z = d.z
    return float(np.count_nonzero(np.abs(z) >= threshold)) / z.size
