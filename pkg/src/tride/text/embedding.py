"""Sentence embeddings: a hashing stub and a loader for precomputed features.

The stub stands in for a frozen CLIP text encoder.  Real features can be
computed offline and stored in the ``TRIDETXT`` container::

    b"TRIDETXT"  u32 paragraph_count (= 5)
    per paragraph: u32 sentence_count, u32 dim, sentence_count*dim float32

All integers and floats are little-endian.
"""
from __future__ import annotations

import re
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .description import SceneDescription

MAGIC = b"TRIDETXT"
DEFAULT_DIM = 512
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1
_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


def tokenize(sentence: str) -> list[str]:
    return [t for t in _TOKEN_SPLIT.split(sentence.lower()) if t]


def embed_sentence(sentence: str, dim: int = DEFAULT_DIM) -> np.ndarray:
    """Signed feature hashing of lowercase alphanumeric tokens, L2-normalised."""
    if dim <= 0:
        raise ValueError("embedding dimension must be positive")
    vec = np.zeros(dim, dtype=np.float64)
    for token in tokenize(sentence):
        h = fnv1a_64(token.encode("utf-8"))
        vec[h % dim] += -1.0 if h >> 63 else 1.0
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


def embed_description(desc: SceneDescription, dim: int = DEFAULT_DIM) -> list[np.ndarray]:
    """Per paragraph (general, L, ML, MR, R) an ``n_sentences×dim`` array."""
    return [np.stack([embed_sentence(s, dim) for s in para]) for para in desc.paragraphs()]


def save_sentence_features(path, features: list[np.ndarray]) -> None:
    if len(features) != 5:
        raise ValueError(f"expected 5 paragraphs, got {len(features)}")
    chunks = [MAGIC, struct.pack("<I", len(features))]
    for para in features:
        para = np.asarray(para, dtype="<f4")
        if para.ndim != 2:
            raise ValueError("each paragraph must be a sentences×dim array")
        chunks.append(struct.pack("<II", *para.shape))
        chunks.append(para.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_sentence_features(path) -> list[np.ndarray]:
    return parse_sentence_features(Path(path).read_bytes())


def parse_sentence_features(blob: bytes) -> list[np.ndarray]:
    if blob[:8] != MAGIC:
        raise FormatError("bad magic, expected TRIDETXT", 0)
    pos = 8

    def read_u32(what):
        nonlocal pos
        if pos + 4 > len(blob):
            raise FormatError(f"truncated while reading {what}", pos)
        (value,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        return value

    count = read_u32("paragraph count")
    if count != 5:
        raise FormatError(f"paragraph count must be 5, got {count}", 8)
    out = []
    for k in range(count):
        n = read_u32(f"sentence count of paragraph {k}")
        dim = read_u32(f"dimension of paragraph {k}")
        nbytes = n * dim * 4
        if pos + nbytes > len(blob):
            raise FormatError(f"paragraph {k} declares {n} vectors of dim {dim} "
                              f"but only {len(blob) - pos} bytes remain", pos)
        out.append(np.frombuffer(blob, dtype="<f4", count=n * dim, offset=pos).reshape(n, dim).copy())
        pos += nbytes
    if pos != len(blob):
        raise FormatError(f"{len(blob) - pos} trailing bytes after last paragraph", pos)
    return out
