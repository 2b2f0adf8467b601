"""Run configuration: model, generator, optimiser and loss settings in one strict JSON document."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..errors import ContractError, FormatError
from ..model import ModelConfig
from ..synth import GenParams


def _strict(cls, d, section: str):
    if not isinstance(d, dict):
        raise ContractError(f"config section {section!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ContractError(f"unknown keys in {section!r}: {unknown}")
    return cls(**d)


@dataclass
class OptimConfig:
    base_lr: float = 1e-4
    power: float = 0.9
    warmup_steps: int = 0   # linear ramp applied on top of the poly decay
    steps: int = 3000
    batch_size: int = 8
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.steps <= 0 or self.batch_size <= 0 or self.base_lr <= 0:
            raise ContractError("steps, batch_size and base_lr must be positive")
        if self.warmup_steps < 0:
            raise ContractError("warmup_steps must be non-negative")


@dataclass
class LossConfig:
    w_d: float = 1.0
    w_c: float = 1.0


@dataclass
class DataConfig:
    n_train: int = 256
    n_val: int = 32
    n_test: int = 200


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    gen: GenParams = field(default_factory=GenParams)
    optim: OptimConfig = field(default_factory=OptimConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    data: DataConfig = field(default_factory=DataConfig)
    seed: int = 0
    out_dir: str = "runs/default"
    augment_flip: bool = True
    log_every: int = 50
    val_every: int = 500
    stop_loss: float | None = None    # stop once loss_depth falls below this
    time_limit_s: float | None = None

    _SECTIONS = {"model": ModelConfig, "gen": GenParams, "optim": OptimConfig,
                 "loss": LossConfig, "data": DataConfig}

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["model"] = self.model.to_dict()
        d["gen"] = asdict(self.gen)
        d["gen"]["weather_mix"] = list(self.gen.weather_mix)
        for name in ("optim", "loss", "data"):
            d[name] = asdict(d[name])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ContractError("run config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ContractError(f"unknown config keys: {unknown}")
        kwargs = dict(d)
        for name, sub in cls._SECTIONS.items():
            if name in kwargs:
                kwargs[name] = sub.from_dict(kwargs[name]) if sub is ModelConfig else \
                    _strict(sub, kwargs[name], name)
        return cls(**kwargs)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON: {exc.msg}", exc.pos) from None
        return cls.from_dict(d)

    def replace(self, **overrides) -> "RunConfig":
        """Copy with dotted-key overrides, e.g. ``{"model.fusion": "gated", "seed": 3}``."""
        d = self.to_dict()
        for key, value in overrides.items():
            target = d
            *parents, leaf = key.split(".")
            for p in parents:
                target = target[p]
            if leaf not in target:
                raise ContractError(f"unknown config key {key!r}")
            target[leaf] = value
        return RunConfig.from_dict(d)
