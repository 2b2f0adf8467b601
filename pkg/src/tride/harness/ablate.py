"""Ablation sweeps: a cartesian grid of model variants, trained and evaluated per seed."""
from __future__ import annotations

import csv
import hashlib
import itertools
import json
import statistics
import traceback
import warnings
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ContractError
from ..metrics import SUBSETS
from ..model import MODALITY_SETS
from .config import RunConfig
from .evaluate import evaluate, find_report
from .train import train

ABLATION_COLUMNS = ("arm", "seed", "metric", "value")
CACHE_SCHEMA = 1


@dataclass
class AblationGrid:
    modalities: list = field(default_factory=lambda: ["I+R+T"])
    fusions: list = field(default_factory=lambda: ["wafb"])
    scales: list = field(default_factory=lambda: [(32, 16)])   # (ga_scale, ra_scale)
    dims: list = field(default_factory=lambda: [(128, 256)])    # (c_t, c_r)

    def __post_init__(self):
        for name in ("modalities", "fusions", "scales", "dims"):
            if not getattr(self, name):
                raise ContractError(f"ablation grid axis {name!r} is empty")
        for m in self.modalities:
            if m not in MODALITY_SETS:
                raise ContractError(f"unknown modality set {m!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "AblationGrid":
        unknown = sorted(set(d) - {"modalities", "fusions", "scales", "dims"})
        if unknown:
            raise ContractError(f"unknown grid keys: {unknown}")
        d = dict(d)
        for key in ("scales", "dims"):
            if key in d:
                d[key] = [tuple(x) for x in d[key]]
        return cls(**d)


@dataclass(frozen=True)
class Arm:
    name: str
    overrides: tuple   # sorted (dotted key, value) pairs

    def config(self, base: RunConfig, seed: int) -> RunConfig:
        return base.replace(**dict(self.overrides), seed=seed)


def arm_name(modalities, fusion, scales, dims) -> str:
    return f"{modalities}|{fusion}|ga{scales[0]}-ra{scales[1]}|ct{dims[0]}-cr{dims[1]}"


def expand_grid(grid: AblationGrid, base: RunConfig) -> list[Arm]:
    """Cartesian product of the grid axes, deduplicated on the resulting model config.

    Arms that build the same model (a repeated axis value, or a fusion kind on
    an image-only model where fusion has no effect) are merged with a warning.
    """
    arms, seen = [], {}
    for mods, fusion, scales, dims in itertools.product(grid.modalities, grid.fusions, grid.scales, grid.dims):
        overrides = {"model.modalities": mods, "model.fusion": fusion,
                     "model.ga_scale": scales[0], "model.ra_scale": scales[1],
                     "model.c_t": dims[0], "model.c_r": dims[1]}
        name = arm_name(mods, fusion, scales, dims)
        cfg = base.replace(**overrides).model
        key = _effective_model_key(cfg)
        if key in seen:
            warnings.warn(f"duplicate ablation arm {name} (same model as {seen[key]}); skipped", stacklevel=2)
            continue
        seen[key] = name
        arms.append(Arm(name, tuple(sorted(overrides.items()))))
    return arms


def _effective_model_key(cfg) -> str:
    d = cfg.to_dict()
    if not cfg.uses_radar:
        d.pop("fusion")
    if not cfg.uses_text:
        for k in ("ga_scale", "ra_scale", "embed_dim", "text_minus", "share_lstm", "paragraph_order"):
            d.pop(k, None)
    if not cfg.needs_weather_feature:
        d.pop("c_t", None)
    if not cfg.uses_points:
        d.pop("c_r", None)
    return json.dumps(d, sort_keys=True)


def run_metrics(reports, weather_acc) -> dict:
    out = {}
    for subset in SUBSETS:
        r = find_report(reports, 80.0, subset)
        out[f"mae_{subset}"] = r.mae
        out[f"rmse_{subset}"] = r.rmse
    adverse = [find_report(reports, 80.0, s) for s in ("rainy", "night")]
    n = sum(r.n_pixels for r in adverse)
    out["mae_adverse"] = sum(r.mae * r.n_pixels for r in adverse if r.n_pixels) / n if n else float("nan")
    r = find_report(reports, 80.0, "all")
    out.update(absrel=r.absrel, d1=r.d1)
    if weather_acc is not None:
        out["weather_acc"] = weather_acc
    return out


def dataset_id(manifest) -> str:
    """Content hash of a dataset: the manifest plus every scene file it lists."""
    manifest = Path(manifest)
    h = hashlib.sha256(manifest.read_bytes())
    for line in manifest.read_text(encoding="utf-8").split():
        path = manifest.parent / line
        if path.is_file():
            h.update(path.read_bytes())
    return h.hexdigest()[:20]


def cache_key(config: RunConfig, data_id: str) -> str:
    blob = json.dumps({"schema": CACHE_SCHEMA, "config": config.to_dict(), "data": data_id}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:20]


def run_arm(config: RunConfig, train_set, val_set, test_set, out_dir: Path, data_id: str = "",
            cache_dir=None) -> dict:
    """Train and evaluate one configuration; results are memoised in ``cache_dir`` when given."""
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"{cache_key(config, data_id)}.json"
        if path.exists():
            return json.loads(path.read_text(encoding="utf-8"))["metrics"]
    result = train(config, train_set, val_set, out_dir=out_dir)
    reports, acc = evaluate(result.model, test_set, out_csv=Path(out_dir) / "metrics.csv")
    metrics = run_metrics(reports, acc)
    if path is not None:
        # wall time is kept beside the metrics, not in them, so sweep CSVs stay reproducible
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps({"config": config.to_dict(), "data": data_id, "metrics": metrics,
                                    "train_seconds": result.elapsed_s, "steps": result.steps_done},
                                   indent=2, sort_keys=True), encoding="utf-8")
    return metrics


def cached_run(cache_dir, config: RunConfig, data_id: str) -> dict | None:
    path = Path(cache_dir) / f"{cache_key(config, data_id)}.json"
    return json.loads(path.read_text(encoding="utf-8")) if path.exists() else None


def ablate(grid: AblationGrid, base: RunConfig, seeds, train_set, val_set, test_set, out_dir,
           data_id: str = "", cache_dir=None, progress=None) -> list[dict]:
    """Run every arm for every seed; failures are recorded as a ``failed`` row and the sweep moves on."""
    out_dir = Path(out_dir)
    rows = []
    for arm in expand_grid(grid, base):
        per_seed = {}
        for seed in seeds:
            cfg = arm.config(base, seed)
            run_dir = out_dir / _slug(arm.name) / f"seed{seed}"
            try:
                metrics = run_arm(cfg, train_set, val_set, test_set, run_dir, data_id, cache_dir)
            except Exception as exc:  # noqa: BLE001 - a broken arm must not stop the sweep
                rows.append({"arm": arm.name, "seed": seed, "metric": "failed",
                             "value": f"{type(exc).__name__}: {exc}"})
                if progress:
                    progress(arm.name, seed, None, traceback.format_exc())
                continue
            per_seed[seed] = metrics
            rows.extend({"arm": arm.name, "seed": seed, "metric": k, "value": v} for k, v in metrics.items())
            if progress:
                progress(arm.name, seed, metrics, None)
        if per_seed:
            for k in next(iter(per_seed.values())):
                rows.append({"arm": arm.name, "seed": "median", "metric": k,
                             "value": statistics.median(m[k] for m in per_seed.values())})
    write_ablation_csv(out_dir / "ablation.csv", rows)
    return rows


def _slug(name: str) -> str:
    return name.replace("|", "_").replace("+", "")


def write_ablation_csv(path, rows) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=ABLATION_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)


def read_ablation_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def medians(rows) -> dict[tuple[str, str], float]:
    return {(r["arm"], r["metric"]): float(r["value"]) for r in rows if str(r["seed"]) == "median"}


def per_seed(rows, metric: str) -> dict[str, dict]:
    out: dict[str, dict] = {}
    for r in rows:
        if r["metric"] == metric and str(r["seed"]) != "median":
            out.setdefault(r["arm"], {})[int(r["seed"])] = float(r["value"])
    return out
