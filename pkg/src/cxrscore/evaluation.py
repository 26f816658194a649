"""Metrics and evaluation reports.

mae is the plain mean absolute error. pearson uses population (1/n)
normalization; the 1/(n-1) variant cancels in the ratio, so both conventions
coincide, but the population form matches the definition implemented here.
cmc gives the fraction of samples whose absolute error falls at or below
each threshold; error_histogram buckets errors into uniform half-open bins
(the last bin is closed so the maximum is counted).
"""

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .data import SCORE_RANGES, CxrSample, PreprocessConfig, preprocess_batch
from .errors import ArgumentError, UndefinedCorrelationError


def _check_lengths(pred, truth, op: str, minimum: int = 1) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.ndim != 1 or t.ndim != 1:
        raise ArgumentError(f"{op}: inputs must be 1-D")
    if p.shape[0] != t.shape[0]:
        raise ArgumentError(f"{op}: length mismatch, {p.shape[0]} vs {t.shape[0]}")
    if p.shape[0] < minimum:
        raise ArgumentError(f"{op}: needs at least {minimum} values, got {p.shape[0]}")
    return p, t


def mae(pred: list[float], truth: list[float]) -> float:
    """Mean absolute error."""
    p, t = _check_lengths(pred, truth, "mae")
    return float(np.abs(t - p).sum() / p.shape[0])


def pearson(pred: list[float], truth: list[float]) -> float:
    """Pearson correlation with population normalization.

    Raises UndefinedCorrelationError when either input has zero variance
    rather than returning NaN.
    """
    x, y = _check_lengths(pred, truth, "pearson", minimum=2)
    n = x.shape[0]
    dx = x - x.sum() / n
    dy = y - y.sum() / n
    var_x = float((dx * dx).sum() / n)
    var_y = float((dy * dy).sum() / n)
    if var_x == 0.0 or var_y == 0.0:
        which = "pred" if var_x == 0.0 else "truth"
        raise UndefinedCorrelationError(f"pearson: {which} input has zero variance")
    cov = float((dx * dy).sum() / n)
    return cov / math.sqrt(var_x * var_y)


def cmc(errors: list[float], thresholds: list[float]) -> list[tuple[float, float]]:
    """Cumulative matching curve: fraction of errors <= t for each t."""
    err = np.asarray(errors, dtype=np.float64)
    if err.ndim != 1 or err.shape[0] == 0:
        raise ArgumentError("cmc: errors must be a non-empty 1-D list")
    if (err < 0).any():
        raise ArgumentError("cmc: errors must be nonnegative")
    ts = np.asarray(thresholds, dtype=np.float64)
    if ts.ndim != 1 or ts.shape[0] == 0:
        raise ArgumentError("cmc: thresholds must be a non-empty 1-D list")
    if (np.diff(ts) < 0).any():
        raise ArgumentError("cmc: thresholds must be sorted ascending")
    n = err.shape[0]
    return [(float(t), float((err <= t).sum() / n)) for t in ts]


def error_histogram(errors: list[float], bins: int = 16) -> list[tuple[float, float, int]]:
    """Histogram of absolute errors over uniform bins spanning [0, max].

    Bins are half-open except the last, which is closed, so every error is
    counted exactly once. An all-zero error list spans [0, 1] by convention.
    """
    err = np.asarray(errors, dtype=np.float64)
    if err.ndim != 1 or err.shape[0] == 0:
        raise ArgumentError("error_histogram: errors must be a non-empty 1-D list")
    if (err < 0).any():
        raise ArgumentError("error_histogram: errors must be nonnegative")
    if bins < 1:
        raise ArgumentError(f"error_histogram: bins must be >= 1, got {bins}")
    top = float(err.max())
    if top == 0.0:
        top = 1.0
    counts, edges = np.histogram(err, bins=bins, range=(0.0, top))
    return [
        (float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(bins)
    ]


@dataclass
class PredictionRow:
    source_id: str
    y_true: float
    p_total: float
    p_left: float
    p_right: float


@dataclass
class EvalReport:
    mae: float
    pearson: float
    cmc: list[tuple[float, float]]
    histogram: list[tuple[float, float, int]]
    predictions: list[PredictionRow] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "n": len(self.predictions),
            "mae": self.mae,
            "pearson": self.pearson,
            "cmc": [[t, f] for t, f in self.cmc],
            "histogram": [[lo, hi, c] for lo, hi, c in self.histogram],
            "predictions": [
                {
                    "source_id": r.source_id,
                    "y_true": r.y_true,
                    "p_total": r.p_total,
                    "p_left": r.p_left,
                    "p_right": r.p_right,
                }
                for r in self.predictions
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        return cls(
            mae=float(data["mae"]),
            pearson=float(data["pearson"]),
            cmc=[(float(t), float(f)) for t, f in data["cmc"]],
            histogram=[(float(lo), float(hi), int(c)) for lo, hi, c in data["histogram"]],
            predictions=[
                PredictionRow(
                    source_id=str(p["source_id"]),
                    y_true=float(p["y_true"]),
                    p_total=float(p["p_total"]),
                    p_left=float(p["p_left"]),
                    p_right=float(p["p_right"]),
                )
                for p in data.get("predictions", [])
            ],
        )


def write_report_json(report: EvalReport, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_predictions_csv(report: EvalReport, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["source_id", "y_true", "p_total", "p_left", "p_right"])
        for r in report.predictions:
            writer.writerow([r.source_id, repr(r.y_true), repr(r.p_total), repr(r.p_left), repr(r.p_right)])


def _threshold_grid(samples: list[CxrSample], max_error: float, step: float = 0.25) -> list[float]:
    """0 .. score-range max in `step` increments, extended to cover max_error
    so the curve always terminates at fraction 1.0."""
    top = max(SCORE_RANGES[s.score_kind][1] for s in samples)
    grid = [round(i * step, 10) for i in range(int(round(top / step)) + 1)]
    while grid[-1] < max_error:
        grid.append(round(grid[-1] + step, 10))
    return grid


def evaluate(
    model,
    test_set: list[CxrSample],
    pre_cfg: PreprocessConfig,
    batch_size: int = 32,
    histogram_bins: int = 16,
    cmc_step: float = 0.25,
    clamp_to_range: bool = False,
) -> EvalReport:
    """Predict every sample and assemble the metric report.

    `model` is anything callable on a preprocessed (B, H, W, 3) batch that
    returns (B, 2) scores. clamp_to_range clips displayed predictions to the
    score range of each sample's rubric; metrics then use the clipped values
    (intended for reports, not for model comparison; raw is the default).
    """
    if not test_set:
        raise ArgumentError("evaluate: test set is empty")
    if batch_size < 1:
        raise ArgumentError(f"evaluate: batch_size must be >= 1, got {batch_size}")
    rows: list[PredictionRow] = []
    with torch.no_grad():
        for start in range(0, len(test_set), batch_size):
            chunk = test_set[start : start + batch_size]
            out = model(preprocess_batch(chunk, pre_cfg))
            for sample, pair in zip(chunk, out):
                p_left, p_right = float(pair[0]), float(pair[1])
                p_total = p_left + p_right
                if clamp_to_range:
                    lo, hi = SCORE_RANGES[sample.score_kind]
                    p_total = min(max(p_total, lo), hi)
                    p_left = min(max(p_left, lo / 2), hi / 2)
                    p_right = min(max(p_right, lo / 2), hi / 2)
                rows.append(
                    PredictionRow(
                        source_id=sample.source_id,
                        y_true=sample.score_total,
                        p_total=p_total,
                        p_left=p_left,
                        p_right=p_right,
                    )
                )
    totals = [r.p_total for r in rows]
    truths = [r.y_true for r in rows]
    errors = [abs(t - p) for p, t in zip(totals, truths)]
    thresholds = _threshold_grid(test_set, max(errors), step=cmc_step)
    return EvalReport(
        mae=mae(totals, truths),
        pearson=pearson(totals, truths),
        cmc=cmc(errors, thresholds),
        histogram=error_histogram(errors, bins=histogram_bins),
        predictions=rows,
    )


__all__ = [
    "EvalReport",
    "PredictionRow",
    "cmc",
    "error_histogram",
    "evaluate",
    "mae",
    "pearson",
    "write_predictions_csv",
    "write_report_json",
]
