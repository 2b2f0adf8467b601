"""Evaluation: metrics per (cap, weather subset), weather accuracy and modality checks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError
from ..metrics import CAPS, SUBSETS, MetricAccumulator, MetricsReport, write_metrics_csv
from ..model import ModelConfig, TrideModel, prepare_batch
from ..text.encoding import WEATHER_LABELS


class ModalityMismatch(ContractError):
    pass


def dataset_modalities(samples) -> set[str]:
    """Modalities every sample can supply: radar needs points, text needs a description."""
    mods = {"I"}
    if samples and all(s.cloud is not None and len(s.cloud) > 0 for s in samples):
        mods.add("R")
    if samples and all(s.text for s in samples):
        mods.add("T")
    return mods


def check_modalities(config: ModelConfig, samples) -> None:
    missing = config.modality_set - dataset_modalities(samples)
    if missing:
        raise ModalityMismatch(f"checkpoint expects modalities {config.modalities} but the dataset "
                               f"lacks {'+'.join(sorted(missing))}")


def subset_mask(weathers: np.ndarray, subset: str) -> np.ndarray:
    if subset == "all":
        return np.ones(len(weathers), dtype=bool)
    if subset not in WEATHER_LABELS:
        raise ContractError(f"unknown subset {subset!r}")
    return weathers == WEATHER_LABELS.index(subset)


@dataclass
class Predictions:
    depth: np.ndarray                 # N×H×W
    weather_logits: np.ndarray | None  # N×3


def predict_samples(model: TrideModel, samples, batch_size: int = 8) -> Predictions:
    depths, logits = [], []
    for i in range(0, len(samples), batch_size):
        batch = prepare_batch(samples[i:i + batch_size], model.config)
        out = model(batch)
        depths.append(out.depth.data)
        if out.weather_logits is not None:
            logits.append(out.weather_logits.data)
    return Predictions(np.concatenate(depths), np.concatenate(logits) if logits else None)


def oracle_predictions(samples) -> Predictions:
    return Predictions(np.stack([s.depth for s in samples]), None)


def metric_table(pred: np.ndarray, samples, caps=CAPS, subsets=SUBSETS,
                 target: str = "dense") -> list[MetricsReport]:
    """One report per (cap, subset), pixel-weighted over the subset's scenes.

    ``target="sparse"`` scores against the single-scan map instead of the dense one.
    """
    if target not in ("dense", "sparse"):
        raise ContractError(f"unknown metric target {target!r}")
    if len(pred) != len(samples):
        raise ContractError(f"{len(pred)} predictions for {len(samples)} samples")
    weathers = np.array([s.weather for s in samples])
    reports = []
    for cap in caps:
        for subset in subsets:
            acc = MetricAccumulator(float(cap))
            for i in np.flatnonzero(subset_mask(weathers, subset)):
                acc.update(pred[i], samples[i].depth if target == "dense" else samples[i].sparse)
            reports.append(acc.report(subset))
    return reports


def weather_accuracy(logits: np.ndarray, samples) -> float:
    labels = np.array([s.weather for s in samples])
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def evaluate(model: TrideModel | None, samples, caps=CAPS, subsets=SUBSETS, out_csv=None,
             oracle: bool = False, sparse_csv=None) -> tuple[list[MetricsReport], float | None]:
    """Metrics table plus weather top-1 accuracy (None without a classifier).

    ``oracle=True`` feeds ground truth as the prediction.  ``sparse_csv``
    additionally writes the table scored against the single-scan maps.
    """
    if not samples:
        raise ContractError("no evaluation samples")
    if oracle:
        preds = oracle_predictions(samples)
    else:
        check_modalities(model.config, samples)
        preds = predict_samples(model, samples)
    reports = metric_table(preds.depth, samples, caps, subsets)
    if out_csv is not None:
        write_metrics_csv(out_csv, reports)
    if sparse_csv is not None:
        write_metrics_csv(sparse_csv, metric_table(preds.depth, samples, caps, subsets, target="sparse"))
    acc = weather_accuracy(preds.weather_logits, samples) if preds.weather_logits is not None else None
    return reports, acc


def find_report(reports, cap: float, subset: str) -> MetricsReport:
    for r in reports:
        if r.cap == float(cap) and r.subset == subset:
            return r
    raise KeyError((cap, subset))
