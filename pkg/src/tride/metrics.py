"""Depth evaluation metrics with distance caps, pixel-weighted aggregation and CSV export."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError

CAPS = (50.0, 70.0, 80.0)
SUBSETS = ("all", "normal", "rainy", "night")
CSV_COLUMNS = ("subset", "cap_m", "n_pixels", "mae", "rmse", "absrel", "log10", "rmselog", "d1", "d2", "d3")
METRIC_NAMES = CSV_COLUMNS[3:]
MIN_PRED = 1e-3


@dataclass
class MetricsReport:
    mae: float
    rmse: float
    absrel: float
    log10: float
    rmselog: float
    d1: float
    d2: float
    d3: float
    n_pixels: int
    cap: float = 80.0
    subset: str = "all"

    def as_row(self) -> dict:
        row = {"subset": self.subset, "cap_m": self.cap, "n_pixels": self.n_pixels}
        row.update({k: getattr(self, k) for k in METRIC_NAMES})
        return row


@dataclass
class MetricAccumulator:
    """Running sums so metrics over many maps are pixel-weighted, not per-map averaged."""

    cap: float = 80.0
    n: int = 0
    sums: dict = field(default_factory=lambda: dict.fromkeys(
        ("abs", "sq", "rel", "log", "logsq", "d1", "d2", "d3"), 0.0))

    def update(self, pred: np.ndarray, gt: np.ndarray) -> None:
        pred = np.asarray(pred, dtype=np.float64)
        gt = np.asarray(gt, dtype=np.float64)
        if pred.shape != gt.shape:
            raise ContractError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
        valid = (gt > 0) & (gt <= self.cap)
        raw = pred[valid]
        d = gt[valid]
        err = raw - d
        # the clamp only guards the log and ratio terms
        p = np.maximum(raw, MIN_PRED)
        s = self.sums
        # subnormal ground truth overflows to inf, which is the right limit
        with np.errstate(over="ignore"):
            ldiff = np.log10(p) - np.log10(d)
            ratio = np.maximum(p / d, d / p)
            s["rel"] += (np.abs(err) / d).sum()
        s["abs"] += np.abs(err).sum()
        s["sq"] += (err ** 2).sum()
        s["log"] += np.abs(ldiff).sum()
        s["logsq"] += (ldiff ** 2).sum()
        for k in (1, 2, 3):
            s[f"d{k}"] += np.count_nonzero(ratio < 1.25 ** k)
        self.n += int(d.size)

    def report(self, subset: str = "all") -> MetricsReport:
        if self.n == 0:
            nan = math.nan
            return MetricsReport(nan, nan, nan, nan, nan, nan, nan, nan, 0, self.cap, subset)
        s, n = self.sums, self.n
        return MetricsReport(
            mae=s["abs"] / n, rmse=math.sqrt(s["sq"] / n), absrel=s["rel"] / n,
            log10=s["log"] / n, rmselog=math.sqrt(s["logsq"] / n),
            d1=s["d1"] / n, d2=s["d2"] / n, d3=s["d3"] / n,
            n_pixels=n, cap=self.cap, subset=subset)


def compute_metrics(pred: np.ndarray, gt: np.ndarray, cap: float = 80.0) -> MetricsReport:
    """Metrics over pixels with ``0 < gt <= cap``.

    Predictions are clamped to at least 1 mm inside the log and ratio terms.
    """
    if cap <= 0:
        raise ContractError("cap must be positive")
    acc = MetricAccumulator(cap)
    acc.update(pred, gt)
    return acc.report()


def write_metrics_csv(path, reports) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for r in reports:
            writer.writerow(r.as_row())


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        row["cap_m"] = float(row["cap_m"])
        row["n_pixels"] = int(row["n_pixels"])
        for k in METRIC_NAMES:
            row[k] = float(row[k])
    return rows
