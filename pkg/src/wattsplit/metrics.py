"""Classification and regression metrics for disaggregation output.

On/off events come from thresholding normalized power; precision, recall and
F1 follow the usual confusion-count definitions with explicit conventions
for empty denominators.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .data import NormStats, TimeSeries, denormalize
from .errors import DomainError, ShapeError


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise DomainError("confusion counts must be non-negative")

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn


def _values(x) -> np.ndarray:
    if isinstance(x, TimeSeries):
        return x.values
    return np.asarray(x, dtype=np.float64)


def confusion(est, truth, threshold: float) -> ConfusionCounts:
    """Pointwise on/off confusion: on iff value >= threshold."""
    est = _values(est)
    truth = _values(truth)
    if est.shape != truth.shape:
        raise ShapeError(f"series lengths differ: {est.shape} vs {truth.shape}")
    if not 0.0 < threshold < 1.0:
        raise DomainError(f"threshold must be in (0, 1), got {threshold}")
    pred_on = est >= threshold
    true_on = truth >= threshold
    return ConfusionCounts(
        tp=int(np.sum(pred_on & true_on)),
        fp=int(np.sum(pred_on & ~true_on)),
        fn=int(np.sum(~pred_on & true_on)),
        tn=int(np.sum(~pred_on & ~true_on)),
    )


def precision_recall_f1(c: ConfusionCounts) -> tuple[float, float, float]:
    """p = tp/(tp+fp), r = tp/(tp+fn), f1 = 2pr/(p+r).

    Conventions: with tp = fp = fn = 0 all three are vacuously 1; with
    tp = 0 but fp or fn positive, any 0/0 member is 0 and f1 is 0.
    """
    if c.tp == 0 and c.fp == 0 and c.fn == 0:
        return 1.0, 1.0, 1.0
    p = c.tp / (c.tp + c.fp) if (c.tp + c.fp) > 0 else 0.0
    r = c.tp / (c.tp + c.fn) if (c.tp + c.fn) > 0 else 0.0
    f1 = 2.0 * p * r / (p + r) if (p + r) > 0 else 0.0
    return p, r, f1


def regression_errors(est, truth, stats: NormStats) -> dict[str, float]:
    """MAE and MSE in normalized units and in watts (via denormalization)."""
    est = _values(est)
    truth = _values(truth)
    if est.shape != truth.shape:
        raise ShapeError(f"series lengths differ: {est.shape} vs {truth.shape}")
    diff = est - truth
    mae = float(np.mean(np.abs(diff)))
    mse = float(np.mean(diff * diff))
    watt_diff = denormalize(est, stats) - denormalize(truth, stats)
    mae_w = float(np.mean(np.abs(watt_diff)))
    mse_w = float(np.mean(watt_diff * watt_diff))
    return {"mae_norm": mae, "mse_norm": mse, "mae_watts": mae_w, "mse_watts": mse_w}


@dataclass
class ApplianceReport:
    name: str
    precision: float
    recall: float
    f1: float
    mae_norm: float
    mse_norm: float
    mae_watts: float
    mse_watts: float
    counts: ConfusionCounts


def evaluate_appliance(name: str, est, truth, stats: NormStats,
                       threshold: float) -> ApplianceReport:
    counts = confusion(est, truth, threshold)
    p, r, f1 = precision_recall_f1(counts)
    errs = regression_errors(est, truth, stats)
    return ApplianceReport(name=name, precision=p, recall=r, f1=f1,
                           counts=counts, **errs)


CSV_HEADER = "appliance,precision,recall,f1,mae_norm,mse_norm,mae_watts,mse_watts"


def render_report(reports: list[ApplianceReport], fmt: str = "table") -> str:
    """Render per-appliance metrics, 4 decimal places."""
    if not reports:
        raise DomainError("cannot render an empty report list")
    if fmt == "csv":
        out = io.StringIO()
        out.write(CSV_HEADER + "\n")
        for r in reports:
            out.write(f"{r.name},{r.precision:.4f},{r.recall:.4f},{r.f1:.4f},"
                      f"{r.mae_norm:.4f},{r.mse_norm:.4f},{r.mae_watts:.4f},{r.mse_watts:.4f}\n")
        return out.getvalue()
    if fmt == "table":
        width = max(len("appliance"), max(len(r.name) for r in reports))
        lines = [f"{'appliance':<{width}}  precision  recall  f1      mae_w     mse_w"]
        for r in reports:
            lines.append(f"{r.name:<{width}}  {r.precision:>9.4f}  {r.recall:>6.4f}  "
                         f"{r.f1:.4f}  {r.mae_watts:>8.4f}  {r.mse_watts:>8.4f}")
        return "\n".join(lines) + "\n"
    raise DomainError(f"unknown report format {fmt!r}")


def parse_report_csv(text: str) -> list[dict]:
    """Parse a report CSV back into rows of floats (for round-trip checks)."""
    lines = [ln for ln in text.splitlines() if ln]
    if not lines or lines[0] != CSV_HEADER:
        raise DomainError("not a report CSV")
    rows = []
    keys = CSV_HEADER.split(",")
    for line in lines[1:]:
        cells = line.split(",")
        row = {"appliance": cells[0]}
        row.update({k: float(v) for k, v in zip(keys[1:], cells[1:])})
        rows.append(row)
    return rows


def write_plot_csv(path, timestamps: np.ndarray, truth_watts: np.ndarray,
                   estimate_watts: np.ndarray) -> None:
    """Per-appliance plot data: timestamp,truth_watts,estimate_watts."""
    with open(path, "w", newline="") as fh:
        fh.write("timestamp,truth_watts,estimate_watts\n")
        for t, tv, ev in zip(timestamps, truth_watts, estimate_watts):
            fh.write(f"{int(t)},{tv:.6f},{ev:.6f}\n")
