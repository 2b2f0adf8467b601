"""Procedural street scenes with image, radar, dense/sparse depth, weather and a text description.

Each scene draws its randomness from independent streams spawned from one
seed, so the layout and radar of a scene do not change when only the
weather (and therefore the image corruption) changes.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError
from .geometry import DEPTH_CAP, Intrinsics, region_of_column
from .text.description import format_description
from .text.encoding import WEATHER_LABELS

OBJECT_TYPES = ("car", "truck", "bus", "person", "sign")
# physical width, height (m)
OBJECT_SIZE = {"car": (1.8, 1.5), "truck": (2.5, 3.4), "bus": (2.6, 3.1), "person": (0.6, 1.75), "sign": (0.7, 2.4)}
OBJECT_COLOR = {"car": (0.8, 0.15, 0.1), "truck": (0.9, 0.75, 0.2), "bus": (0.15, 0.35, 0.85),
                "person": (0.95, 0.55, 0.75), "sign": (0.2, 0.8, 0.3)}
# radial velocity range (m/s) and rcs range (dBsm) per class
RADAR_SIGNATURE = {"car": ((-15, 15), (5, 15)), "truck": ((-10, 10), (15, 30)), "bus": ((-10, 10), (15, 30)),
                   "person": ((-2, 2), (-10, 0)), "sign": ((0, 0), (0, 10)), "ground": ((-0.5, 0.5), (-10, -5)),
                   "clutter": ((-20, 20), (-10, 40))}
SKY_ALBEDO = (0.55, 0.7, 0.95)
GROUND_ALBEDO = (0.45, 0.45, 0.42)
WEATHER_WORD = {"normal": "sunny", "rainy": "rainy", "night": "night-time"}
FILLERS = (
    "The road stretches ahead toward the horizon.",
    "Buildings line both sides of the street.",
    "The lane markings are visible on the asphalt.",
    "The scene shows a typical urban road.",
)
EMPTY_BAND = "There are no notable objects here."
SCENE_MAGIC = b"TRIDESCN"
SCENE_VERSION = 1


@dataclass
class GenParams:
    height: int = 64
    width: int = 128
    n_radar: int = 24
    radar_sigma: float = 0.3
    clutter: float = 0.1
    text_round: float = 5.0
    text_noise: float = 0.2
    depth_cap: float = DEPTH_CAP
    camera_height: float = 1.5
    min_objects: int = 1
    max_objects: int = 8
    object_fraction: float = 0.7
    weather_mix: tuple = (0.7, 0.15, 0.15)

    def __post_init__(self):
        self.weather_mix = tuple(float(x) for x in self.weather_mix)
        self.validate()

    def validate(self) -> None:
        if self.height % 32 or self.width % 32 or self.height <= 0 or self.width <= 0:
            raise ContractError(f"image size {self.height}x{self.width} must be divisible by 32")
        for name in ("clutter", "text_noise", "object_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ContractError(f"{name} must lie in [0, 1]")
        if self.radar_sigma < 0 or self.n_radar < 0 or self.text_round <= 0:
            raise ContractError("radar_sigma, n_radar must be non-negative and text_round positive")
        if not 1 <= self.min_objects <= self.max_objects:
            raise ContractError("object count bounds must satisfy 1 <= min <= max")
        if len(self.weather_mix) != 3 or min(self.weather_mix) < 0 or sum(self.weather_mix) <= 0:
            raise ContractError("weather_mix needs three non-negative weights with a positive sum")

    def intrinsics(self) -> Intrinsics:
        return Intrinsics.default(self.height, self.width)


@dataclass
class SceneObject:
    kind: str
    depth: float
    box: tuple  # u0, v0, u1, v1 half-open pixel rectangle

    @property
    def center_u(self) -> float:
        return (self.box[0] + self.box[2]) / 2.0


@dataclass
class SceneLayout:
    objects: list
    weather: int
    owner: np.ndarray = field(repr=False)   # H×W: -2 sky, -1 ground, k object index
    depth: np.ndarray = field(repr=False)


@dataclass
class SceneSample:
    image: np.ndarray     # H×W×3 float32 in [0, 1]
    cloud: np.ndarray     # N×5 float32 (x, y, z, v_r, rcs)
    depth: np.ndarray     # H×W float32
    sparse: np.ndarray    # H×W float32, 0 = invalid
    weather: int
    text: str

    def equals(self, other: "SceneSample") -> bool:
        arrays = ("image", "cloud", "depth", "sparse")
        return (all(getattr(self, a).dtype == getattr(other, a).dtype and
                    getattr(self, a).tobytes() == getattr(other, a).tobytes() and
                    getattr(self, a).shape == getattr(other, a).shape for a in arrays)
                and self.weather == other.weather and self.text == other.text)


def _streams(seed: int) -> dict[str, np.random.Generator]:
    names = ("weather", "layout", "corrupt", "radar", "sparse", "text")
    children = np.random.SeedSequence(int(seed)).spawn(len(names))
    return {n: np.random.default_rng(s) for n, s in zip(names, children)}


def weather_index(weather) -> int:
    if isinstance(weather, str):
        if weather not in WEATHER_LABELS:
            raise ContractError(f"unknown weather {weather!r}")
        return WEATHER_LABELS.index(weather)
    w = int(weather)
    if not 0 <= w < len(WEATHER_LABELS):
        raise ContractError(f"weather label {w} out of range")
    return w


def ground_depth(params: GenParams) -> np.ndarray:
    """Depth of the flat ground plane (capped), with sky above the horizon at the cap."""
    K = params.intrinsics()
    v = np.arange(params.height, dtype=np.float64) + 0.5 - K.cy
    with np.errstate(divide="ignore"):
        d = np.where(v > 0, K.fy * params.camera_height / np.where(v > 0, v, 1.0), np.inf)
    col = np.minimum(d, params.depth_cap)
    return np.repeat(col[:, None], params.width, axis=1)


def build_layout(rng: np.random.Generator, params: GenParams, weather: int) -> SceneLayout:
    K = params.intrinsics()
    h, w = params.height, params.width
    depth = ground_depth(params)
    owner = np.where(np.arange(h)[:, None] + 0.5 > K.cy, -1, -2) * np.ones((1, w), dtype=np.int64)
    objects = []
    n = int(rng.integers(params.min_objects, params.max_objects + 1))
    for _ in range(n):
        kind = OBJECT_TYPES[int(rng.integers(len(OBJECT_TYPES)))]
        d = float(rng.uniform(4.0, 75.0))
        wm, hm = OBJECT_SIZE[kind]
        jitter = rng.uniform(0.75, 1.25, size=2)
        width_px = max(K.fx * wm * jitter[0] / d, 1.0)
        height_px = max(K.fy * hm * jitter[1] / d, 1.0)
        cu = rng.uniform(0, w)
        bottom = K.cy + K.fy * params.camera_height / d
        u0 = int(np.clip(np.floor(cu - width_px / 2), 0, w - 1))
        u1 = int(np.clip(np.ceil(cu + width_px / 2), u0 + 1, w))
        v1 = int(np.clip(np.ceil(bottom), 1, h))
        v0 = int(np.clip(np.floor(bottom - height_px), 0, v1 - 1))
        objects.append(SceneObject(kind, d, (u0, v0, u1, v1)))
    # paint far to near so nearer objects occlude
    for k in sorted(range(n), key=lambda i: -objects[i].depth):
        u0, v0, u1, v1 = objects[k].box
        depth[v0:v1, u0:u1] = objects[k].depth
        owner[v0:v1, u0:u1] = k
    return SceneLayout(objects, weather, owner, depth)


def render_clean(layout: SceneLayout, params: GenParams) -> np.ndarray:
    h, w = params.height, params.width
    albedo = np.empty((h, w, 3))
    albedo[layout.owner == -2] = SKY_ALBEDO
    albedo[layout.owner == -1] = GROUND_ALBEDO
    for k, obj in enumerate(layout.objects):
        albedo[layout.owner == k] = OBJECT_COLOR[obj.kind]
    shading = 1.0 - 0.6 * (layout.depth / params.depth_cap)
    shading[layout.owner == -2] = 1.0
    return np.clip(albedo * shading[..., None], 0.0, 1.0)


def corrupt_weather(image: np.ndarray, weather, seed) -> np.ndarray:
    """``normal`` is the identity; ``rainy`` blurs and adds vertical streaks; ``night`` dims and adds noise."""
    label = WEATHER_LABELS[weather_index(weather)]
    if label == "normal":
        return image
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    if label == "rainy":
        padded = np.pad(img, ((1, 1), (1, 1), (0, 0)), mode="edge")
        blurred = sum(padded[i:i + h, j:j + w] for i in range(3) for j in range(3)) / 9.0
        seg = 8
        streaks = rng.normal(0.0, 0.08, size=(-(-h // seg), w, 1))
        streaks = np.repeat(streaks, seg, axis=0)[:h]
        out = blurred + streaks
    else:
        out = img * 0.25 + rng.normal(0.0, 0.05, size=img.shape)
    return np.clip(out, 0.0, 1.0)


def sample_radar(depth: np.ndarray, layout: SceneLayout, params: GenParams, seed,
                 K: Intrinsics | None = None) -> np.ndarray:
    """Sample ``n_radar`` returns, mostly on objects, back-projected through the pinhole model."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    K = K or params.intrinsics()
    m = params.n_radar
    obj_pix = np.flatnonzero(layout.owner.ravel() >= 0)
    ground_pix = np.flatnonzero((layout.owner.ravel() == -1) & (depth.ravel() < params.depth_cap - 1.0))
    n_obj = int(round(params.object_fraction * m)) if obj_pix.size else 0
    if not ground_pix.size:
        n_obj = m if obj_pix.size else 0
    picks = np.concatenate([
        rng.choice(obj_pix, size=n_obj) if n_obj else np.zeros(0, dtype=np.int64),
        rng.choice(ground_pix, size=m - n_obj) if m - n_obj and ground_pix.size else np.zeros(0, dtype=np.int64),
    ]).astype(np.int64)
    v, u = np.divmod(picks, params.width)
    z = depth.ravel()[picks] + rng.normal(0.0, params.radar_sigma, size=picks.size)
    kinds = [layout.objects[o].kind if o >= 0 else "ground" for o in layout.owner.ravel()[picks]]
    n_clutter = int(round(params.clutter * picks.size))
    clutter_idx = rng.choice(picks.size, size=n_clutter, replace=False) if n_clutter else np.zeros(0, dtype=int)
    z[clutter_idx] = rng.uniform(1.0, params.depth_cap, size=n_clutter)
    for i in clutter_idx:
        kinds[i] = "clutter"
    vel = np.array([rng.uniform(*RADAR_SIGNATURE[k][0]) for k in kinds])
    rcs = np.array([rng.uniform(*RADAR_SIGNATURE[k][1]) for k in kinds])
    x = (u - K.cx) * z / K.fx
    y = (v - K.cy) * z / K.fy
    return np.stack([x, y, z, vel, rcs], axis=1).reshape(-1, 5)


def sparse_depth(depth: np.ndarray, params: GenParams, seed) -> np.ndarray:
    """Every fourth row, a random 30% of columns, never on sky or capped far ground."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    keep = np.zeros(depth.shape, dtype=bool)
    keep[::4] = rng.random((keep[::4].shape)) < 0.3
    keep &= (depth > 0) & (depth < params.depth_cap)
    return np.where(keep, depth, 0.0)


def round_to(x: float, step: float) -> float:
    return float(np.floor(x / step + 0.5) * step)


def render_text(layout: SceneLayout, weather, params: GenParams, seed) -> str:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    label = WEATHER_LABELS[weather_index(weather)]
    general = [f"The image depicts a street scene in {WEATHER_WORD[label]} conditions.",
               FILLERS[int(rng.integers(len(FILLERS)))]]
    visible = set(np.unique(layout.owner[layout.owner >= 0]).tolist())
    bands: list[list[str]] = [[], [], [], []]
    for k in sorted(visible, key=lambda i: layout.objects[i].depth):
        obj = layout.objects[k]
        noisy = obj.depth * (1.0 + rng.uniform(-params.text_noise, params.text_noise))
        approx = max(round_to(noisy, params.text_round), params.text_round)
        bands[region_of_column(obj.center_u, params.width)].append(
            f"A {obj.kind} is about {approx:g} meters away.")
    regional = [b or [EMPTY_BAND] for b in bands]
    return format_description(general, regional)


def generate_scene(seed: int, params: GenParams | None = None, weather=None) -> SceneSample:
    params = params or GenParams()
    rng = _streams(seed)
    if weather is None:
        mix = np.asarray(params.weather_mix) / sum(params.weather_mix)
        weather = int(rng["weather"].choice(len(mix), p=mix))
    weather = weather_index(weather)
    layout = build_layout(rng["layout"], params, weather)
    image = corrupt_weather(render_clean(layout, params), weather, rng["corrupt"])
    cloud = sample_radar(layout.depth, layout, params, rng["radar"])
    sparse = sparse_depth(layout.depth, params, rng["sparse"])
    text = render_text(layout, weather, params, rng["text"])
    return SceneSample(image.astype(np.float32), cloud.astype(np.float32), layout.depth.astype(np.float32),
                       sparse.astype(np.float32), weather, text)


def generate_layout(seed: int, params: GenParams | None = None, weather=0) -> SceneLayout:
    params = params or GenParams()
    return build_layout(_streams(seed)["layout"], params, weather_index(weather))


# --- scene container ------------------------------------------------------------

def encode_scene(sample: SceneSample) -> bytes:
    h, w = sample.depth.shape
    text = sample.text.encode("utf-8")
    cloud = np.asarray(sample.cloud, dtype="<f4").reshape(-1, 5)
    return b"".join([
        SCENE_MAGIC, struct.pack("<III", SCENE_VERSION, h, w),
        np.asarray(sample.image, dtype="<f4").tobytes(),
        np.asarray(sample.depth, dtype="<f4").tobytes(),
        np.asarray(sample.sparse, dtype="<f4").tobytes(),
        struct.pack("<I", cloud.shape[0]), cloud.tobytes(),
        struct.pack("<B", sample.weather), struct.pack("<I", len(text)), text,
    ])


def decode_scene(blob: bytes) -> SceneSample:
    if blob[:8] != SCENE_MAGIC:
        raise FormatError("bad magic, expected TRIDESCN", 0)
    pos = 8

    def take(n, what):
        nonlocal pos
        if pos + n > len(blob):
            raise FormatError(f"truncated while reading {what}", pos)
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    version, h, w = struct.unpack("<III", take(12, "header"))
    if version != SCENE_VERSION:
        raise FormatError(f"unsupported version {version}", 8)

    def floats(count, shape, what):
        return np.frombuffer(take(4 * count, what), dtype="<f4").reshape(shape).astype(np.float32)

    image = floats(h * w * 3, (h, w, 3), "image")
    depth = floats(h * w, (h, w), "dense depth")
    sparse = floats(h * w, (h, w), "sparse depth")
    (n,) = struct.unpack("<I", take(4, "point count"))
    cloud = floats(n * 5, (n, 5), "point rows")
    (weather,) = struct.unpack("<B", take(1, "weather"))
    if weather >= len(WEATHER_LABELS):
        raise FormatError(f"weather label {weather} out of range", pos - 1)
    (length,) = struct.unpack("<I", take(4, "text length"))
    raw = take(length, "text")
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"text is not valid UTF-8: {exc.reason}", pos - length + exc.start) from None
    if pos != len(blob):
        raise FormatError(f"{len(blob) - pos} trailing bytes", pos)
    return SceneSample(image, cloud, depth, sparse, int(weather), text)


def save_scene(sample: SceneSample, path) -> None:
    Path(path).write_bytes(encode_scene(sample))


def load_scene(path) -> SceneSample:
    return decode_scene(Path(path).read_bytes())


# --- dataset manifest -----------------------------------------------------------

def write_manifest(path, entries) -> None:
    """``entries`` are ``(relative_path, split)`` pairs."""
    lines = []
    for rel, split in entries:
        if any(ch.isspace() for ch in str(rel)) or any(ch.isspace() for ch in split):
            raise ContractError(f"manifest fields may not contain whitespace: {rel!r} {split!r}")
        lines.append(f"{rel} {split}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> list[tuple[str, str]]:
    path = Path(path)
    entries = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise FormatError(f"{path}: line {lineno} should be '<path> <split>'")
        entries.append((parts[0], parts[1]))
    return entries


def load_split(manifest_path, split: str) -> list[SceneSample]:
    root = Path(manifest_path).parent
    return [load_scene(root / rel) for rel, s in read_manifest(manifest_path) if s == split]
