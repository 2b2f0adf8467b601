"""Training objectives: weather cross-entropy and the two-term masked L1 depth loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ops
from .autodiff.tensor import Tensor
from .errors import ContractError


@dataclass(frozen=True)
class LossWeights:
    w_d: float = 1.0
    w_c: float = 1.0

    def __post_init__(self):
        if self.w_d < 0 or self.w_c < 0:
            raise ContractError("loss weights must be non-negative")


def loss_cls(logits: Tensor, labels) -> Tensor:
    return ops.cross_entropy_logits(logits, labels)


def loss_depth(pred: Tensor, depth, sparse) -> Tensor:
    """Masked L1 against the sparse scan plus masked L1 against the dense map.

    Works on one ``H×W`` map or a ``N×H×W`` batch (batch mean of the
    per-sample sums).  A sample with neither valid sparse nor dense pixels
    cannot be supervised.
    """
    depth = np.asarray(depth, dtype=pred.dtype)
    sparse = np.asarray(sparse, dtype=pred.dtype)
    omega_s = sparse > 0
    omega = depth > 0
    empty = ~(omega_s.any(axis=(-2, -1)) | omega.any(axis=(-2, -1)))
    if np.any(empty):
        raise ContractError("sample has no valid depth supervision")
    per_sample = ops.add(ops.l1_loss_masked(pred, sparse, omega_s), ops.l1_loss_masked(pred, depth, omega))
    return ops.mean(per_sample) if per_sample.ndim else per_sample


def total_loss(depth_term: Tensor, cls_term: Tensor | None, weights: LossWeights = LossWeights()) -> Tensor:
    total = ops.scalar_mul(depth_term, weights.w_d)
    if cls_term is not None and weights.w_c:
        total = ops.add(total, ops.scalar_mul(cls_term, weights.w_c))
    return total
