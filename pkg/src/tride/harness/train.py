"""Training loop: Adam with polynomial decay, loss logging, validation and checkpoints."""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..autodiff import Adam, Tape, load_checkpoint, poly_lr, save_checkpoint
from ..errors import ContractError, TrideError
from ..geometry import Intrinsics
from ..losses import LossWeights, loss_cls, loss_depth, total_loss
from ..metrics import MetricAccumulator
from ..model import TrideModel, prepare_batch
from ..synth import SceneSample
from ..text.description import format_description, parse_description
from .config import RunConfig

LOSS_COLUMNS = ("step", "lr", "loss_depth", "loss_cls", "loss_total")
STEP_KEY = "train.step"


class TrainingDiverged(TrideError):
    """The loss became NaN or infinite."""

    def __init__(self, step: int):
        super().__init__(f"non-finite loss at step {step}")
        self.step = step


@dataclass
class TrainResult:
    model: TrideModel
    steps_done: int
    rows: list = field(default_factory=list)
    best_val_mae: float = math.inf
    elapsed_s: float = 0.0
    stopped_early: bool = False
    out_dir: Path | None = None


def warmup_factor(step: int, warmup_steps: int) -> float:
    """Linear ramp ``(step + 1) / warmup_steps`` capped at 1; no ramp when ``warmup_steps`` is 0."""
    return 1.0 if warmup_steps <= 0 else min(1.0, (step + 1) / warmup_steps)


def flip_sample(sample: SceneSample, K: Intrinsics | None = None) -> SceneSample:
    """Mirror a scene left-right, keeping radar and regional text consistent with the image."""
    h, w = sample.depth.shape
    K = K or Intrinsics.default(h, w)
    cloud = np.array(sample.cloud, dtype=np.float64, copy=True).reshape(-1, 5)
    # u' = W - 1 - u  =>  x' = (W - 1 - 2 cx) z / fx - x
    cloud[:, 0] = (w - 1 - 2 * K.cx) * cloud[:, 2] / K.fx - cloud[:, 0]
    desc = parse_description(sample.text)
    # read the regional paragraphs back in reverse order: L<->R, ML<->MR
    text = format_description(desc.general, desc.regional[::-1]) if sample.text else sample.text
    return replace(sample, image=np.ascontiguousarray(sample.image[:, ::-1]),
                   cloud=cloud.astype(sample.cloud.dtype),
                   depth=np.ascontiguousarray(sample.depth[:, ::-1]),
                   sparse=np.ascontiguousarray(sample.sparse[:, ::-1]), text=text)


def checkpoint_paths(path) -> tuple[Path, Path]:
    path = Path(path)
    return path, path.with_name(path.name + ".config.json")


def save_model(path, model: TrideModel, config: RunConfig, optimizer: Adam | None = None,
               step: int | None = None) -> None:
    tensors = dict(model.state_dict())
    if optimizer is not None:
        for name, m in optimizer.state.m.items():
            tensors[f"optim.m.{name}"] = m
            tensors[f"optim.v.{name}"] = optimizer.state.v[name]
    if step is not None:
        tensors[STEP_KEY] = np.array([step], dtype=np.float32)
    ckpt, cfg_path = checkpoint_paths(path)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, tensors)
    config.save(cfg_path)


def load_model(path, dtype=np.float32) -> tuple[TrideModel, RunConfig, dict]:
    """Load a checkpoint and its run config; returns (model, config, extra tensors)."""
    ckpt, cfg_path = checkpoint_paths(path)
    config = RunConfig.load(cfg_path)
    tensors = load_checkpoint(ckpt)
    model = TrideModel(config.model, seed=config.seed, dtype=dtype)
    params = {n for n, _ in model.named_parameters()}
    model.load_state_dict({k: v for k, v in tensors.items() if k in params})
    for p in model.parameters():
        p.data = p.data.astype(dtype)
    extra = {k: v for k, v in tensors.items() if k not in params}
    return model, config, extra


def _batches(rng: np.random.Generator, n: int, size: int):
    """Endless stream of index batches drawn epoch by epoch without replacement."""
    size = min(size, n)
    pool = np.zeros(0, dtype=np.int64)
    while True:
        if pool.size < size:
            pool = np.concatenate([pool, rng.permutation(n)])
        yield pool[:size]
        pool = pool[size:]


def validation_mae(model: TrideModel, samples, batch_size: int = 8, cap: float = 80.0) -> float:
    acc = MetricAccumulator(cap)
    for i in range(0, len(samples), batch_size):
        chunk = samples[i:i + batch_size]
        batch = prepare_batch(chunk, model.config)
        acc.update(model(batch).depth.data, batch.depth)
    return acc.report().mae


def train(config: RunConfig, train_samples, val_samples=None, resume=None, out_dir=None,
          progress=None, save: bool = True) -> TrainResult:
    """Train a model on in-memory samples.

    ``resume`` is a checkpoint path written by a previous run with the same
    config; the step counter, weights and optimiser moments continue from it.
    """
    if not train_samples:
        raise ContractError("no training samples")
    out = Path(out_dir or config.out_dir)
    oc = config.optim
    weights = LossWeights(config.loss.w_d, config.loss.w_c)
    model = TrideModel(config.model, seed=config.seed, dtype=np.float32)
    optimizer = Adam(model.named_parameters(), lr=oc.base_lr, betas=(oc.beta1, oc.beta2), eps=oc.eps)
    start = 0
    rows: list = []
    if resume is not None:
        loaded, _, extra = load_model(resume)
        model.load_state_dict(loaded.state_dict())
        optimizer = Adam(model.named_parameters(), lr=oc.base_lr, betas=(oc.beta1, oc.beta2), eps=oc.eps)
        for name in optimizer.params:
            if f"optim.m.{name}" in extra:
                optimizer.state.m[name] = extra[f"optim.m.{name}"].copy()
                optimizer.state.v[name] = extra[f"optim.v.{name}"].copy()
        start = int(extra.get(STEP_KEY, np.zeros(1))[0])
        optimizer.state.step = start
        loss_csv = out / "losses.csv"
        if loss_csv.exists():
            with open(loss_csv, newline="") as fh:
                rows = [r for r in csv.DictReader(fh) if int(r["step"]) < start]

    h, w = train_samples[0].depth.shape
    K = Intrinsics.default(h, w)
    rng = np.random.default_rng([config.seed, start])
    stream = _batches(rng, len(train_samples), oc.batch_size)
    flipped = {}
    best = math.inf
    t0 = time.perf_counter()
    stopped = False
    step = start
    for step in range(start, oc.steps):
        lr = poly_lr(step, oc.steps, oc.base_lr, oc.power) * warmup_factor(step, oc.warmup_steps)
        idx = next(stream)
        chosen = []
        for i in idx:
            if config.augment_flip and rng.random() < 0.5:
                if i not in flipped:
                    flipped[i] = flip_sample(train_samples[i], K)
                chosen.append(flipped[i])
            else:
                chosen.append(train_samples[i])
        batch = prepare_batch(chosen, config.model, K)
        with Tape() as tape:
            result = model(batch)
            l_depth = loss_depth(result.depth, batch.depth, batch.sparse)
            l_cls = loss_cls(result.weather_logits, batch.weather) if result.weather_logits is not None else None
            loss = total_loss(l_depth, l_cls, weights)
            if not np.isfinite(loss.data):
                raise TrainingDiverged(step)
            optimizer.zero_grad()
            tape.backward(loss)
        optimizer.step(lr)
        row = {"step": step, "lr": lr, "loss_depth": float(l_depth.data),
               "loss_cls": float(l_cls.data) if l_cls is not None else 0.0, "loss_total": float(loss.data)}
        rows.append(row)
        if progress is not None and (step % config.log_every == 0 or step == oc.steps - 1):
            progress(row)
        done = step + 1
        if val_samples and (done % config.val_every == 0 or done == oc.steps):
            mae = validation_mae(model, val_samples)
            if mae < best:
                best = mae
                if save:
                    save_model(out / "best", model, config, optimizer, done)
        if config.stop_loss is not None and row["loss_depth"] < config.stop_loss:
            stopped = True
            break
        if config.time_limit_s is not None and time.perf_counter() - t0 > config.time_limit_s:
            break
    steps_done = step + 1 if oc.steps > start else start
    elapsed = time.perf_counter() - t0
    if save:
        out.mkdir(parents=True, exist_ok=True)
        config.save(out / "config.json")
        save_model(out / "final", model, config, optimizer, steps_done)
        write_loss_csv(out / "losses.csv", rows)
    return TrainResult(model, steps_done, rows, best, elapsed, stopped, out if save else None)


def write_loss_csv(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOSS_COLUMNS)
        writer.writeheader()
        for r in rows:
            writer.writerow({k: r[k] for k in LOSS_COLUMNS})
