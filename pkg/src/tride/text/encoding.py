"""Text feature encoding: paragraph LSTM, radar enrichment, weather feature and classifier."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from ..autodiff import ops
from ..autodiff.nn import Linear, LSTMCell, Module
from ..autodiff.tensor import Tensor
from ..errors import ContractError
from ..geometry import RegionAssignment

WEATHER_LABELS = ("normal", "rainy", "night")
MASK_BIAS = -1e9


class ParagraphEncoder(Module):
    """Runs one LSTM cell over the sentence vectors of a paragraph; returns the last hidden state."""

    def __init__(self, rng, n_in: int, c_t: int):
        self.cell = LSTMCell(rng, n_in, c_t)

    def __call__(self, sentences) -> Tensor:
        return self.encode_batch([sentences])[0]

    def encode_batch(self, paragraphs: Sequence) -> Tensor:
        """Encode ``B`` paragraphs of varying length at once.  Returns ``B×C_t``.

        Shorter paragraphs are padded; a per-row mask freezes their state
        after their last sentence so each row ends at its own final step.
        """
        arrays = [p.data if isinstance(p, Tensor) else np.asarray(p) for p in paragraphs]
        if any(a.ndim != 2 or a.shape[0] == 0 for a in arrays):
            raise ContractError("every paragraph needs at least one sentence vector")
        dtype = self.cell.w_ih.dtype
        lengths = np.array([a.shape[0] for a in arrays])
        steps = int(lengths.max())
        n, width = len(arrays), arrays[0].shape[1]
        xs = np.zeros((steps, n, width), dtype=dtype)
        for b, a in enumerate(arrays):
            xs[:a.shape[0], b] = a
        hid = self.cell.hidden
        h = Tensor(np.zeros((n, hid), dtype=dtype))
        c = Tensor(np.zeros((n, hid), dtype=dtype))
        for t in range(steps):
            h_new, c_new = self.cell(Tensor(xs[t]), h, c)
            live = lengths > t
            if live.all():
                h, c = h_new, c_new
            else:
                keep = live[:, None].astype(dtype)
                h = ops.add(ops.mul(h_new, keep), ops.mul(h, 1 - keep))
                c = ops.add(ops.mul(c_new, keep), ops.mul(c, 1 - keep))
        return h


def encode_paragraph(encoder: ParagraphEncoder, sentences) -> Tensor:
    if len(sentences) == 0:
        raise ContractError("encode_paragraph needs at least one sentence")
    return encoder(sentences)


class RadarEnrichment(Module):
    """Residual cross-attention from each regional text feature onto the radar points of its band."""

    def __init__(self, rng, c_t: int, c_r: int):
        self.w_q = Linear(rng, c_t, c_t, bias=False)
        self.w_k = Linear(rng, c_r, c_t, bias=False)
        self.w_v = Linear(rng, c_r, c_t, bias=False)

    def __call__(self, f_reg: Tensor, points: Tensor, regions: RegionAssignment) -> Tensor:
        """Single sample: ``f_reg`` 4×C_t, ``points`` N×C_r'."""
        return self.enrich_batch(ops.reshape(f_reg, (1,) + f_reg.shape), [points], [regions])[0]

    def enrich_batch(self, f_reg: Tensor, points: Sequence[Tensor],
                     regions: Sequence[RegionAssignment]) -> Tensor:
        """``f_reg`` is B×4×C_t; points and regions are per sample."""
        b = f_reg.shape[0]
        counts = [p.shape[0] for p in points]
        n_max = max(counts, default=0)
        if n_max == 0:
            return f_reg
        membership = np.zeros((b, 4, n_max), dtype=bool)
        for s, (assign, n) in enumerate(zip(regions, counts)):
            for k, idx in enumerate(assign.as_list()):
                idx = np.asarray(idx, dtype=np.int64)
                if idx.size and (idx.min() < 0 or idx.max() >= n):
                    raise ContractError(f"region index out of range for {n} points")
                membership[s, k, idx] = True
        width = next(p.shape[1] for p in points if p.shape[0])
        dtype = f_reg.dtype
        padded = []
        for p, n in zip(points, counts):
            if n == n_max:
                padded.append(ops.reshape(p, (1, n, width)))
            elif n == 0:
                padded.append(Tensor(np.zeros((1, n_max, width), dtype=dtype)))
            else:
                pad = Tensor(np.zeros((n_max - n, width), dtype=dtype))
                padded.append(ops.reshape(ops.concat([p, pad], axis=0), (1, n_max, width)))
        table = padded[0] if b == 1 else ops.concat(padded, axis=0)
        q = self.w_q(f_reg)
        k = self.w_k(table)
        v = self.w_v(table)
        bias = np.where(membership, 0.0, MASK_BIAS).astype(dtype)
        attended, _ = ops.attention(q, k, v, key_bias=bias)
        nonempty = membership.any(axis=2)[..., None].astype(dtype)
        return ops.add(f_reg, ops.mul(attended, nonempty))


def radar_enrich(block: RadarEnrichment, f_reg: Tensor, points: Tensor,
                 regions: RegionAssignment) -> Tensor:
    return block(f_reg, points, regions)


def weather_feature(f_img5: Tensor, t_gen: Tensor | None, c_t: int) -> Tensor:
    """GAP over space, adaptive pooling of channels down to ``c_t``, plus ``T_gen``."""
    c_img = f_img5.shape[-1]
    if c_img < c_t:
        raise ContractError(f"image feature width {c_img} is below text width {c_t}")
    pooled = ops.adaptive_avg_pool_1d(ops.global_avg_pool_2d(f_img5), c_t)
    return pooled if t_gen is None else ops.add(pooled, t_gen)


class WeatherClassifier(Module):
    def __init__(self, rng, c_t: int, n_classes: int = len(WEATHER_LABELS)):
        self.fc1 = Linear(rng, c_t, c_t)
        self.fc2 = Linear(rng, c_t, n_classes)

    def __call__(self, t_wea: Tensor) -> Tensor:
        return self.fc2(ops.relu(self.fc1(t_wea)))


def classify_weather(clf: WeatherClassifier, t_wea: Tensor) -> Tensor:
    return clf(t_wea)
