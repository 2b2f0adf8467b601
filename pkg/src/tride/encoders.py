"""Toy-scale image, radar-image and per-point encoders."""
from __future__ import annotations

import numpy as np

from .autodiff import ops
from .autodiff.nn import Conv2d, Linear, Module
from .autodiff.tensor import Tensor
from .errors import ContractError

N_LEVELS = 5
RADAR_SCALE = np.array([80.0, 20.0, 40.0])  # depth, radial velocity, rcs
POINT_SCALE = np.array([80.0, 80.0, 80.0, 20.0, 40.0])


def pyramid_widths(c: int) -> tuple[int, ...]:
    return (c, 2 * c, 4 * c, 8 * c, 8 * c)


class ResidualBlock(Module):
    def __init__(self, rng, ch: int):
        self.conv1 = Conv2d(rng, ch, ch)
        self.conv2 = Conv2d(rng, ch, ch)
        # zero-initialised branch output: each block starts as the identity
        self.conv2.weight.data[...] = 0.0

    def __call__(self, x: Tensor) -> Tensor:
        return ops.relu(ops.add(x, self.conv2(ops.relu(self.conv1(x)))))


class Stage(Module):
    """Stride-2 conv followed by residual blocks."""

    def __init__(self, rng, c_in: int, c_out: int, n_blocks: int):
        self.down = Conv2d(rng, c_in, c_out, stride=2)
        self.blocks = [ResidualBlock(rng, c_out) for _ in range(n_blocks)]

    def __call__(self, x: Tensor) -> Tensor:
        x = ops.relu(self.down(x))
        for block in self.blocks:
            x = block(x)
        return x


class PyramidEncoder(Module):
    """Five stages producing features at 1/2 ... 1/32 of the input resolution."""

    def __init__(self, rng, c: int, n_blocks: int, c_in: int = 3):
        widths = pyramid_widths(c)
        ins = (c_in,) + widths[:-1]
        self.stages = [Stage(rng, a, b, n_blocks) for a, b in zip(ins, widths)]

    def __call__(self, x: Tensor) -> list[Tensor]:
        h, w = x.shape[-3:-1]
        if h % 32 or w % 32:
            raise ContractError(f"input {h}x{w} is not divisible by 32")
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


def ImageEncoder(rng, c: int = 16, c_in: int = 3) -> PyramidEncoder:  # noqa: N802
    return PyramidEncoder(rng, c, n_blocks=2, c_in=c_in)


def RadarEncoder(rng, c: int = 16) -> PyramidEncoder:  # noqa: N802
    return PyramidEncoder(rng, c, n_blocks=1)


def encode_image(encoder: PyramidEncoder, x_img: Tensor) -> list[Tensor]:
    return encoder(x_img)


def encode_radar_image(encoder: PyramidEncoder, x_rad: Tensor) -> list[Tensor]:
    return encoder(x_rad)


def normalize_radar_image(image: np.ndarray) -> np.ndarray:
    return image / RADAR_SCALE.astype(image.dtype)


def normalize_points(cloud: np.ndarray) -> np.ndarray:
    return cloud / POINT_SCALE.astype(cloud.dtype)


class PointEncoder(Module):
    """Shared per-point MLP 5 -> 64 -> C_r' with no global pooling."""

    def __init__(self, rng, c_r: int = 256, hidden: int = 64):
        self.fc1 = Linear(rng, 5, hidden)
        self.fc2 = Linear(rng, hidden, c_r)
        self.out_dim = c_r

    def __call__(self, cloud) -> Tensor:
        """``cloud`` holds raw ``N×5`` rows; normalisation happens here."""
        dtype = self.fc1.weight.dtype
        if not isinstance(cloud, Tensor):
            cloud = Tensor(np.asarray(cloud, dtype=dtype).reshape(-1, 5))
        if cloud.shape[0] == 0:
            return Tensor(np.zeros((0, self.out_dim), dtype=dtype))
        x = ops.mul(cloud, (1.0 / POINT_SCALE).astype(cloud.dtype))
        return self.fc2(ops.relu(self.fc1(x)))


def encode_points(encoder: PointEncoder, cloud) -> Tensor:
    return encoder(cloud)
