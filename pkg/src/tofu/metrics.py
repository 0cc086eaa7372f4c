"""Depth evaluation: RMSE, relative errors and 1.25^n threshold accuracies over valid pixels."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass

import numpy as np

from .core import Raster, depth_valid

METRIC_COLUMNS = ("rmse", "rel_abs", "rel_sqr", "delta1", "delta2", "delta3")


@dataclass(frozen=True)
class MetricsReport:
    rmse: float
    rel_abs: float
    rel_sqr: float
    delta1: float
    delta2: float
    delta3: float
    n_valid: int

    def as_row(self) -> dict:
        return asdict(self)

    def csv_row(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(METRIC_COLUMNS) + ["n_valid"], lineterminator="\n")
        writer.writeheader()
        writer.writerow({k: format_value(v) for k, v in self.as_row().items()})
        return buf.getvalue()


def format_value(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.6g}"


def _plane(depth) -> np.ndarray:
    if isinstance(depth, Raster):
        return depth.data[0].astype(np.float64)
    arr = np.asarray(depth, dtype=np.float64)
    return arr[0] if arr.ndim == 3 and arr.shape[0] == 1 else arr


def evaluation_mask(gt, range_clip: tuple[float, float] | None = None) -> np.ndarray:
    g = _plane(gt)
    mask = depth_valid(g)
    if range_clip is not None:
        lo, hi = range_clip
        mask &= (g >= lo) & (g <= hi)
    return mask


def compute_metrics(pred, gt, range_clip: tuple[float, float] | None = None) -> MetricsReport:
    """Metrics over pixels with valid ground truth (optionally within ``range_clip``).

    Threshold accuracies use the strict comparison max(d/g, g/d) < 1.25^n and are percentages.
    """
    p = _plane(pred)
    g = _plane(gt)
    if p.shape != g.shape:
        raise ValueError(f"prediction {p.shape} and ground truth {g.shape} differ in size")
    mask = evaluation_mask(g, range_clip)
    if not mask.any():
        raise ValueError("no valid ground-truth pixels to evaluate")
    return metrics_from_pairs(p[mask], g[mask])


def metrics_from_pairs(pred: np.ndarray, gt: np.ndarray) -> MetricsReport:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.size == 0:
        raise ValueError("no valid ground-truth pixels to evaluate")
    err = pred - gt
    sq = err**2
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.maximum(pred / gt, gt / pred)
    ratio = np.where(np.isfinite(ratio) & (pred > 0), ratio, np.inf)
    deltas = [100.0 * int(np.count_nonzero(ratio < 1.25**n)) / pred.size for n in (1, 2, 3)]
    return MetricsReport(
        rmse=float(np.sqrt(sq.mean())),
        rel_abs=float(np.mean(np.abs(err) / gt)),
        rel_sqr=float(np.mean(sq / gt)),
        delta1=deltas[0],
        delta2=deltas[1],
        delta3=deltas[2],
        n_valid=int(pred.size),
    )


def gross_error_rate(pred, gt, threshold: float) -> float:
    """Fraction of valid ground-truth pixels with |pred - gt| > threshold."""
    p = _plane(pred)
    g = _plane(gt)
    mask = depth_valid(g)
    if not mask.any():
        raise ValueError("no valid ground-truth pixels to evaluate")
    return float(np.mean(np.abs(p[mask] - g[mask]) > threshold))


def format_table(rows: list[dict], columns: list[str]) -> str:
    """Aligned plain-text table."""
    cells = [[str(r.get(c, "")) if not isinstance(r.get(c), float) else f"{r[c]:.4g}" for c in columns] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) if cells else len(c) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)
