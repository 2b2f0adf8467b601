"""Model configuration, batch preparation, the UNet-style decoder and the full forward pass."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache

import numpy as np

from .autodiff import default_dtype, get_default_dtype, ops
from .autodiff.nn import Conv2d, Module
from .autodiff.tensor import Tensor
from .encoders import (ImageEncoder, PointEncoder, RadarEncoder, normalize_radar_image,
                       pyramid_widths)
from .errors import ContractError
from .fusion import DASPP, FUSION_KINDS, GeneralAttention, RegionalAttention, make_fusion
from .geometry import DEPTH_CAP, Intrinsics, partition_regions, project_points
from .text.description import LEFT_TO_RIGHT, parse_description
from .text.embedding import embed_description
from .text.encoding import ParagraphEncoder, RadarEnrichment, WeatherClassifier, weather_feature

ATTENTION_SCALES = (32, 16, 8)  # denominators: 1/32, 1/16, 1/8
MODALITY_SETS = ("I", "I+T", "I+R", "I+R+T")
DECODER_SLOPE = 0.1


@dataclass
class ModelConfig:
    modalities: str = "I+R+T"
    fusion: str = "wafb"
    c: int = 16
    c_t: int = 128
    c_r: int = 256
    embed_dim: int = 512
    ga_scale: int = 32
    ra_scale: int = 16
    depth_cap: float = DEPTH_CAP
    text_minus: bool = False
    share_lstm: bool = True
    fusion_kernel: int = 3
    daspp_dilations: tuple = (1, 2, 4)
    paragraph_order: str = LEFT_TO_RIGHT
    decoder_slope: float = DECODER_SLOPE   # negative-side slope of the decoder activations
    row_coord: bool = True                 # append a pixel-row channel to the image input

    def __post_init__(self):
        self.daspp_dilations = tuple(self.daspp_dilations)
        self.validate()

    @property
    def modality_set(self) -> frozenset:
        return frozenset(self.modalities.split("+"))

    @property
    def uses_radar(self) -> bool:
        return "R" in self.modality_set

    @property
    def uses_text(self) -> bool:
        return "T" in self.modality_set

    @property
    def uses_points(self) -> bool:
        return self.uses_radar and self.uses_text and not self.text_minus

    @property
    def needs_weather_feature(self) -> bool:
        return self.uses_text or (self.uses_radar and self.fusion == "wafb")

    def validate(self) -> None:
        mods = self.modality_set
        if not mods <= {"I", "R", "T"} or "I" not in mods:
            raise ContractError(f"modalities {self.modalities!r} must include I and be a subset of I, R, T")
        if self.fusion not in FUSION_KINDS:
            raise ContractError(f"unknown fusion kind {self.fusion!r}")
        for name in ("ga_scale", "ra_scale"):
            if getattr(self, name) not in ATTENTION_SCALES:
                raise ContractError(f"{name} must be one of 1/32, 1/16, 1/8 (got 1/{getattr(self, name)})")
        if self.text_minus and not self.uses_text:
            raise ContractError("text_minus requires the text modality")
        if not 0.0 <= self.decoder_slope < 1.0:
            raise ContractError("decoder_slope must lie in [0, 1)")
        if min(self.c, self.c_t, self.c_r, self.embed_dim) <= 0 or self.depth_cap <= 0:
            raise ContractError("widths and depth_cap must be positive")
        if self.needs_weather_feature and 8 * self.c < self.c_t:
            raise ContractError(f"deepest image width {8 * self.c} is below C_t={self.c_t}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["daspp_dilations"] = list(self.daspp_dilations)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ContractError(f"unknown model config keys: {unknown}")
        return cls(**d)


@dataclass
class Batch:
    """Model inputs and targets for ``N`` samples, channels-last."""

    image: np.ndarray                   # N×H×W×3 in [0, 1]
    radar_image: np.ndarray | None      # N×H×W×3, normalised
    clouds: list                        # per sample, kept raw radar rows n_i×5
    regions: list                       # per sample RegionAssignment
    text: list | None                   # per sample, five sentences×C arrays
    weather: np.ndarray                 # N labels
    depth: np.ndarray | None = None     # N×H×W dense GT
    sparse: np.ndarray | None = None    # N×H×W single-scan GT
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.image.shape[0]


@lru_cache(maxsize=4096)
def _text_features(text: str, dim: int, order: str) -> tuple:
    return tuple(embed_description(parse_description(text, order), dim))


def prepare_batch(samples, config: ModelConfig, K: Intrinsics | None = None,
                  dtype=np.float32, text_features=None) -> Batch:
    """Project radar, partition points and embed descriptions for a list of scene samples.

    ``text_features`` optionally supplies per-sample sentence features (for
    example loaded from files) instead of the hashing stub.
    """
    if not samples:
        raise ContractError("empty batch")
    h, w = samples[0].image.shape[:2]
    K = K or Intrinsics.default(h, w)
    images, radar, clouds, regions, texts = [], [], [], [], []
    for i, s in enumerate(samples):
        if s.image.shape[:2] != (h, w):
            raise ContractError("samples in a batch must share one resolution")
        images.append(s.image)
        if config.uses_radar:
            if s.cloud is None:
                raise ContractError("radar modality requested but sample has no point cloud")
            proj = project_points(s.cloud, K, h, w, config.depth_cap)
            radar.append(normalize_radar_image(proj.image))
            clouds.append(np.asarray(s.cloud, dtype=np.float64)[proj.kept])
            regions.append(partition_regions(proj.pixels, w))
        if config.uses_text:
            if text_features is not None:
                texts.append([np.asarray(a, dtype=dtype) for a in text_features[i]])
            else:
                if not s.text:
                    raise ContractError("text modality requested but sample has no description")
                feats = _text_features(s.text, config.embed_dim, config.paragraph_order)
                texts.append([a.astype(dtype) for a in feats])
    return Batch(
        image=np.stack(images).astype(dtype),
        radar_image=np.stack(radar).astype(dtype) if radar else None,
        clouds=clouds,
        regions=regions,
        text=texts or None,
        weather=np.array([s.weather for s in samples], dtype=np.int64),
        depth=np.stack([s.depth for s in samples]).astype(dtype),
        sparse=np.stack([s.sparse for s in samples]).astype(dtype),
    )


@dataclass
class ModelOutput:
    depth: Tensor                        # N×H×W metres
    weather_logits: Tensor | None        # N×3
    t_gen: Tensor | None = None
    t_reg: Tensor | None = None
    t_wea: Tensor | None = None
    decoder: dict = field(default_factory=dict)


def leaky_relu(x: Tensor, slope: float = DECODER_SLOPE) -> Tensor:
    """``max(x, slope * x)`` written as ``(1 - slope) relu(x) + slope x``."""
    return ops.add(ops.scalar_mul(ops.relu(x), 1.0 - slope), ops.scalar_mul(x, slope))


def row_coordinate(image: np.ndarray) -> np.ndarray:
    """One extra channel holding the pixel row scaled to [-1, 1]."""
    h = image.shape[-3]
    rows = np.linspace(-1.0, 1.0, h, dtype=image.dtype).reshape(h, 1, 1)
    return np.broadcast_to(rows, image.shape[:-1] + (1,))


class DecoderStage(Module):
    """Two 3x3 convs.  The leaky slope keeps a channel trainable on flat regions
    (sky, far ground) where a plain ReLU can go silent and never recover."""

    def __init__(self, rng, c_in: int, c_out: int, slope: float = DECODER_SLOPE):
        self.conv1 = Conv2d(rng, c_in, c_out)
        self.conv2 = Conv2d(rng, c_out, c_out)
        self._slope = slope

    def __call__(self, x: Tensor) -> Tensor:
        return leaky_relu(self.conv2(leaky_relu(self.conv1(x), self._slope)), self._slope)


def decoder_widths(c: int) -> dict[int, int]:
    """Output width of the decoder stage at each scale denominator."""
    return {16: 4 * c, 8: 2 * c, 4: c, 2: c, 1: c}


def arrival_width(c: int, scale: int) -> int:
    """Width of the decoder feature as it arrives at ``scale`` (where attention is applied)."""
    return {32: 8 * c, 16: 8 * c, 8: 4 * c}[scale]


class TrideModel(Module):
    def __init__(self, config: ModelConfig, seed: int = 0, dtype=None):
        """Parameters use ``dtype`` (default: the autodiff default dtype)."""
        with default_dtype(dtype or get_default_dtype()):
            self._build(config, seed)

    def _build(self, config: ModelConfig, seed: int) -> None:
        config.validate()
        self._config = config
        rng = np.random.default_rng(seed)
        c, c_t = config.c, config.c_t
        widths = pyramid_widths(c)
        self.image_encoder = ImageEncoder(rng, c, c_in=4 if config.row_coord else 3)
        if config.uses_radar:
            self.radar_encoder = RadarEncoder(rng, c)
            self.fusions = [make_fusion(config.fusion, rng, ch, c_t, config.fusion_kernel) for ch in widths]
        if config.uses_text:
            self.paragraph_encoder = ParagraphEncoder(rng, config.embed_dim, c_t)
            if not config.share_lstm:
                self.regional_encoder = ParagraphEncoder(rng, config.embed_dim, c_t)
            if config.uses_points:
                self.point_encoder = PointEncoder(rng, config.c_r)
                self.reb = RadarEnrichment(rng, c_t, config.c_r)
            self.weather_head = WeatherClassifier(rng, c_t)
            self.ga = GeneralAttention(rng, arrival_width(c, config.ga_scale), c_t)
            self.ra = RegionalAttention(rng, arrival_width(c, config.ra_scale), c_t)
        self.daspp = DASPP(rng, widths[4], config.daspp_dilations)
        dec = decoder_widths(c)
        # the full-resolution stage takes the raw inputs as its skip
        raw = (6 if config.uses_radar else 3) + (1 if config.row_coord else 0)
        skip = {16: widths[3], 8: widths[2], 4: widths[1], 2: widths[0], 1: raw}
        incoming = {16: widths[4], 8: dec[16], 4: dec[8], 2: dec[4], 1: dec[2]}
        self.stages = [DecoderStage(rng, incoming[s] + skip[s], dec[s], config.decoder_slope)
                       for s in (16, 8, 4, 2, 1)]
        self.head = Conv2d(rng, dec[1], 1)
        self.head.weight.data[...] = 0.0

    @property
    def config(self) -> ModelConfig:
        return self._config

    # --- text branch -------------------------------------------------------
    def encode_text(self, batch: Batch) -> tuple[Tensor, Tensor]:
        n = len(batch)
        paras = [p for sample in batch.text for p in sample]
        if len(paras) != 5 * n:
            raise ContractError("every sample needs exactly five paragraphs of sentence features")
        if self.config.share_lstm:
            enc = ops.reshape(self.paragraph_encoder.encode_batch(paras), (n, 5, self.config.c_t))
            t_gen = ops.reshape(ops.slice(enc, 1, 0, 1), (n, self.config.c_t))
            f_reg = ops.slice(enc, 1, 1, 5)
        else:
            t_gen = self.paragraph_encoder.encode_batch(paras[0::5])
            regional = [p for k, p in enumerate(paras) if k % 5]
            f_reg = ops.reshape(self.regional_encoder.encode_batch(regional), (n, 4, self.config.c_t))
        return t_gen, f_reg

    def encode_point_tables(self, batch: Batch) -> list[Tensor]:
        counts = [len(cl) for cl in batch.clouds]
        total = sum(counts)
        if total == 0:
            return [self.point_encoder(np.zeros((0, 5))) for _ in counts]
        table = self.point_encoder(np.concatenate([np.asarray(cl).reshape(-1, 5) for cl in batch.clouds]))
        out, start = [], 0
        for n in counts:
            out.append(ops.slice(table, 0, start, start + n) if n else self.point_encoder(np.zeros((0, 5))))
            start += n
        return out

    # --- full pass ---------------------------------------------------------
    def __call__(self, batch: Batch) -> ModelOutput:
        return self.forward(batch)

    def forward(self, batch: Batch) -> ModelOutput:
        cfg = self.config
        if cfg.uses_radar and batch.radar_image is None:
            raise ContractError("radar modality enabled but batch carries no radar image")
        if cfg.uses_text and batch.text is None:
            raise ContractError("text modality enabled but batch carries no text features")
        image = batch.image
        if cfg.row_coord:
            image = np.concatenate([image, row_coordinate(image)], axis=-1)
        img = self.image_encoder(Tensor(image))
        rad = self.radar_encoder(Tensor(batch.radar_image)) if cfg.uses_radar else None

        t_gen = t_reg = t_wea = logits = None
        if cfg.uses_text:
            t_gen, t_reg = self.encode_text(batch)
            if cfg.uses_points:
                t_reg = self.reb.enrich_batch(t_reg, self.encode_point_tables(batch), batch.regions)
        if cfg.needs_weather_feature:
            t_wea = weather_feature(img[4], t_gen, cfg.c_t)
        if cfg.uses_text:
            logits = self.weather_head(t_wea)

        skips = [self.fusions[i](img[i], rad[i], t_wea) if rad is not None else img[i] for i in range(5)]
        raw = [image] if rad is None else [image, batch.radar_image]
        skips.insert(0, Tensor(np.concatenate(raw, axis=-1)))
        depth, inter = self.decode(skips, t_gen, t_reg)
        return ModelOutput(depth, logits, t_gen, t_reg, t_wea, inter)

    def _attend(self, x: Tensor, scale: int, t_gen, t_reg) -> Tensor:
        if not self.config.uses_text:
            return x
        if scale == self.config.ga_scale:
            x = self.ga(x, t_gen)
        if scale == self.config.ra_scale:
            x = self.ra(x, t_reg)
        return x

    def decode(self, skips: list[Tensor], t_gen: Tensor | None, t_reg: Tensor | None):
        """Run the decoder over skip features at scales 1/1 (raw input) ... 1/32."""
        inter = {}
        x = self._attend(skips[5], 32, t_gen, t_reg)
        inter[32] = x
        skip_at = dict(zip((1, 2, 4, 8, 16), skips))
        for stage, scale in zip(self.stages, (16, 8, 4, 2, 1)):
            x = ops.upsample_nearest_2x(x)
            if scale == 16:
                x = self.daspp(x)
            x = self._attend(x, scale, t_gen, t_reg)
            x = ops.concat([x, skip_at[scale]], axis=-1)
            x = stage(x)
            inter[scale] = x
        logit = self.head(x)
        depth = ops.scalar_mul(ops.sigmoid(logit), self.config.depth_cap)
        return ops.reshape(depth, depth.shape[:-1]), inter


def forward(model: TrideModel, batch: Batch) -> ModelOutput:
    return model.forward(batch)


def predict(model: TrideModel, batch: Batch) -> tuple[np.ndarray, np.ndarray | None]:
    """Inference without recording: depth maps and weather logits as arrays."""
    out = model.forward(batch)
    return out.depth.data, None if out.weather_logits is None else out.weather_logits.data
