"""Pinhole projection of radar points, image-band partitioning and sparse/dense depth merging."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError

REGIONS = ("L", "ML", "MR", "R")
DEPTH_CAP = 80.0


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def validate(self, height: int, width: int) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ContractError("focal lengths must be positive")
        if not (0 <= self.cx < width and 0 <= self.cy < height):
            raise ContractError(f"principal point ({self.cx}, {self.cy}) outside {width}x{height} image")

    @classmethod
    def default(cls, height: int, width: int) -> "Intrinsics":
        """Square pixels, focal length equal to the image width, centred principal point."""
        return cls(float(width), float(width), width / 2.0, height / 2.0)


@dataclass
class Projection:
    """Result of :func:`project_points`.

    ``image`` is H×W×3 (depth, radial velocity, RCS) with zeros where no
    point landed.  ``kept`` indexes the cloud rows that survived, and
    ``pixels`` holds their integer ``(u, v)`` in the same order.
    """

    image: np.ndarray
    pixels: np.ndarray
    kept: np.ndarray
    n_dropped: int


@dataclass
class RegionAssignment:
    """Four disjoint index arrays (into the kept points) for the L, ML, MR, R bands."""

    L: np.ndarray
    ML: np.ndarray
    MR: np.ndarray
    R: np.ndarray

    def as_list(self) -> list[np.ndarray]:
        return [self.L, self.ML, self.MR, self.R]


def project_points(cloud: np.ndarray, K: Intrinsics, height: int, width: int,
                   depth_cap: float = DEPTH_CAP) -> Projection:
    """Project ``N×5`` radar rows ``(x, y, z, v_r, rcs)`` into radar image channels.

    Pixel coordinates round half up.  Points behind the camera, beyond
    ``depth_cap`` or outside the image are dropped.  When several points hit
    one pixel the nearest wins.
    """
    if depth_cap <= 0:
        raise ContractError("depth_cap must be positive")
    cloud = np.asarray(cloud, dtype=np.float64).reshape(-1, 5)
    x, y, z = cloud[:, 0], cloud[:, 1], cloud[:, 2]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        u = np.floor(K.fx * x / z + K.cx + 0.5)
        v = np.floor(K.fy * y / z + K.cy + 0.5)
    ok = (z > 0) & (z <= depth_cap) & np.isfinite(u) & np.isfinite(v)
    ok &= (u >= 0) & (u < width) & (v >= 0) & (v < height)
    kept = np.flatnonzero(ok)
    pixels = np.stack([u[kept], v[kept]], axis=1).astype(np.int64) if kept.size else \
        np.zeros((0, 2), dtype=np.int64)

    image = np.zeros((height, width, 3), dtype=np.float64)
    # Paint far-to-near so the nearest point at a pixel is written last.
    order = kept[np.argsort(-z[kept], kind="stable")]
    for row in order:
        image[int(v[row]), int(u[row])] = (z[row], cloud[row, 3], cloud[row, 4])
    return Projection(image, pixels, kept, int(cloud.shape[0] - kept.size))


def partition_regions(pixels: np.ndarray, width: int) -> RegionAssignment:
    """Split points into four equal half-open column bands."""
    pixels = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
    band = np.minimum((pixels[:, 0] * 4) // width, 3)
    return RegionAssignment(*(np.flatnonzero(band == b) for b in range(4)))


def region_of_column(u: float, width: int) -> int:
    return int(min(max(int(u * 4 // width), 0), 3))


def merge_sparse_into_dense(dense: np.ndarray, sparse: np.ndarray) -> np.ndarray:
    """Overwrite ``dense`` with every valid (``> 0``) value of ``sparse``."""
    dense = np.asarray(dense)
    sparse = np.asarray(sparse)
    if dense.shape != sparse.shape:
        raise DimensionError(f"depth maps differ in shape: {dense.shape} vs {sparse.shape}")
    return np.where(sparse > 0, sparse, dense).astype(np.result_type(dense, sparse))
