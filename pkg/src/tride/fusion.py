"""Image/radar fusion blocks, text cross-attention (general and regional) and DASPP."""
from __future__ import annotations

import numpy as np

from .autodiff import ops
from .autodiff.nn import Conv2d, Linear, Module
from .autodiff.tensor import Tensor
from .errors import ContractError, DimensionError

FUSION_KINDS = ("concat", "add", "gated", "wafb")


def _check_pair(f_img: Tensor, f_rad: Tensor) -> None:
    if f_img.shape != f_rad.shape:
        raise DimensionError(f"image and radar features differ: {f_img.shape} vs {f_rad.shape}")


class GatedFusion(Module):
    """``alpha * beta + f_img`` with ``alpha = sigmoid(conv f_rad)`` and ``beta = relu(conv f_rad)``."""

    def __init__(self, rng, ch: int, k: int = 3):
        self.alpha_conv = Conv2d(rng, ch, ch, k)
        self.beta_conv = Conv2d(rng, ch, ch, k)

    def gates(self, f_rad: Tensor) -> tuple[Tensor, Tensor]:
        return ops.sigmoid(self.alpha_conv(f_rad)), ops.relu(self.beta_conv(f_rad))

    def __call__(self, f_img: Tensor, f_rad: Tensor, t_wea: Tensor | None = None) -> Tensor:
        _check_pair(f_img, f_rad)
        alpha, beta = self.gates(f_rad)
        return ops.add(ops.mul(alpha, beta), f_img)


class WaFB(GatedFusion):
    """Gated fusion plus a weather gate ``gamma = sigmoid(conv [T_wea, f_rad])`` on the same ``beta``."""

    def __init__(self, rng, ch: int, c_t: int, k: int = 3):
        super().__init__(rng, ch, k)
        self.gamma_conv = Conv2d(rng, c_t + ch, ch, k)

    def gamma(self, f_rad: Tensor, t_wea: Tensor) -> Tensor:
        h, w = f_rad.shape[-3:-1]
        cond = ops.concat([ops.broadcast_spatial(t_wea, h, w), f_rad], axis=-1)
        return ops.sigmoid(self.gamma_conv(cond))

    def parts(self, f_img: Tensor, f_rad: Tensor, t_wea: Tensor) -> dict[str, Tensor]:
        _check_pair(f_img, f_rad)
        alpha, beta = self.gates(f_rad)
        return {"alpha": alpha, "beta": beta, "gamma": self.gamma(f_rad, t_wea)}

    def gated(self, f_img: Tensor, f_rad: Tensor) -> Tensor:
        return GatedFusion.__call__(self, f_img, f_rad)

    def __call__(self, f_img: Tensor, f_rad: Tensor, t_wea: Tensor | None = None) -> Tensor:
        if t_wea is None:
            raise ContractError("WaFB needs a weather feature")
        p = self.parts(f_img, f_rad, t_wea)
        return ops.add(ops.add(ops.mul(p["alpha"], p["beta"]), ops.mul(p["gamma"], p["beta"])), f_img)


class ConcatFusion(Module):
    def __init__(self, rng, ch: int, k: int = 3):
        self.conv = Conv2d(rng, 2 * ch, ch, k)

    def __call__(self, f_img: Tensor, f_rad: Tensor, t_wea: Tensor | None = None) -> Tensor:
        _check_pair(f_img, f_rad)
        return self.conv(ops.concat([f_img, f_rad], axis=-1))


class AddFusion(Module):
    def __call__(self, f_img: Tensor, f_rad: Tensor, t_wea: Tensor | None = None) -> Tensor:
        _check_pair(f_img, f_rad)
        return ops.add(f_img, f_rad)


def make_fusion(kind: str, rng, ch: int, c_t: int, k: int = 3) -> Module:
    if kind == "wafb":
        return WaFB(rng, ch, c_t, k)
    if kind == "gated":
        return GatedFusion(rng, ch, k)
    if kind == "concat":
        return ConcatFusion(rng, ch, k)
    if kind == "add":
        return AddFusion()
    raise ContractError(f"unknown fusion kind {kind!r}; expected one of {FUSION_KINDS}")


def wafb(block: WaFB, f_img: Tensor, f_rad: Tensor, t_wea: Tensor) -> Tensor:
    return block(f_img, f_rad, t_wea)


def gated_fusion(block: GatedFusion, f_img: Tensor, f_rad: Tensor) -> Tensor:
    return GatedFusion.__call__(block, f_img, f_rad)


class GeneralAttention(Module):
    """Bidirectional cross-attention between a feature map and one text vector.

    ``A1`` lets the text vector attend over all spatial tokens; ``A2`` lets
    every position attend to the text vector.  ``A1`` is broadcast to every
    position, concatenated with ``A2``, mapped back to the feature width by a
    1×1 conv and added to the input.
    """

    def __init__(self, rng, ch: int, c_t: int):
        self.q1 = Linear(rng, c_t, c_t, bias=False)
        self.k1 = Linear(rng, ch, c_t, bias=False)
        self.v1 = Linear(rng, ch, c_t, bias=False)
        self.q2 = Linear(rng, ch, c_t, bias=False)
        self.k2 = Linear(rng, c_t, c_t, bias=False)
        self.v2 = Linear(rng, c_t, c_t, bias=False)
        self.out = Conv2d(rng, 2 * c_t, ch, k=1)
        self._last_weights: Tensor | None = None

    def __call__(self, f: Tensor, t: Tensor) -> Tensor:
        """``f`` is (N×)H×W×C, ``t`` is (N×)C_t."""
        unbatched = f.ndim == 3
        if unbatched:
            f = ops.reshape(f, (1,) + f.shape)
            t = ops.reshape(t, (1,) + t.shape)
        n, h, w, ch = f.shape
        tokens = ops.reshape(f, (n, h * w, ch))
        text = ops.reshape(t, (n, 1, t.shape[-1]))
        a1, weights = ops.attention(self.q1(text), self.k1(tokens), self.v1(tokens))
        a2, _ = ops.attention(self.q2(tokens), self.k2(text), self.v2(text))
        self._last_weights = weights
        a1_map = ops.broadcast_spatial(ops.reshape(a1, (n, a1.shape[-1])), h, w)
        a2_map = ops.reshape(a2, (n, h, w, a2.shape[-1]))
        out = ops.add(f, self.out(ops.concat([a1_map, a2_map], axis=-1)))
        return ops.reshape(out, out.shape[1:]) if unbatched else out


class RegionalAttention(Module):
    """General-attention mechanics applied per horizontal quarter with shared weights."""

    def __init__(self, rng, ch: int, c_t: int):
        self.attn = GeneralAttention(rng, ch, c_t)

    def __call__(self, f: Tensor, t_reg: Tensor) -> Tensor:
        """``f`` is (N×)H×W×C, ``t_reg`` is (N×)4×C_t ordered L, ML, MR, R."""
        unbatched = f.ndim == 3
        if unbatched:
            f = ops.reshape(f, (1,) + f.shape)
            t_reg = ops.reshape(t_reg, (1,) + t_reg.shape)
        n, h, w, ch = f.shape
        if w % 4:
            raise ContractError(f"feature width {w} is not divisible by 4")
        q = w // 4
        bands = ops.transpose(ops.reshape(f, (n, h, 4, q, ch)), (0, 2, 1, 3, 4))
        bands = ops.reshape(bands, (n * 4, h, q, ch))
        text = ops.reshape(t_reg, (n * 4, t_reg.shape[-1]))
        out = ops.reshape(self.attn(bands, text), (n, 4, h, q, ch))
        out = ops.reshape(ops.transpose(out, (0, 2, 1, 3, 4)), (n, h, w, ch))
        return ops.reshape(out, out.shape[1:]) if unbatched else out


def general_attention(block: GeneralAttention, f_dec5: Tensor, t_gen: Tensor) -> Tensor:
    return block(f_dec5, t_gen)


def regional_attention(block: RegionalAttention, f_dec4: Tensor, t_reg: Tensor) -> Tensor:
    return block(f_dec4, t_reg)


class DASPP(Module):
    """Densely connected dilated 3×3 convs, a 1×1 conv back to the input width, and a residual add."""

    def __init__(self, rng, ch: int, dilations=(1, 2, 4), growth: int | None = None):
        g = growth or max(ch // 2, 1)
        self.branches = [Conv2d(rng, ch + i * g, g, k=3, dilation=d) for i, d in enumerate(dilations)]
        self.project = Conv2d(rng, ch + len(dilations) * g, ch, k=1)

    def __call__(self, f: Tensor) -> Tensor:
        feats = [f]
        for conv in self.branches:
            x = feats[0] if len(feats) == 1 else ops.concat(feats, axis=-1)
            feats.append(ops.relu(conv(x)))
        return ops.add(f, self.project(ops.concat(feats, axis=-1)))


def daspp(block: DASPP, f: Tensor) -> Tensor:
    return block(f)


def zero_module(module: Module) -> None:
    """Set every parameter of ``module`` to zero (used by identity checks)."""
    for p in module.parameters():
        p.data = np.zeros_like(p.data)
