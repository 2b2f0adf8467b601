"""Central finite-difference verification of recorded gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor


def _as_list(x) -> list[Tensor]:
    return [x] if isinstance(x, Tensor) else list(x)


def analytic_grads(f: Callable, inputs: Sequence[Tensor]) -> list[np.ndarray]:
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    with Tape() as tape:
        out = f(*inputs)
    tape.backward(out)
    return [np.zeros_like(t.data) if t.grad is None else t.grad for t in inputs]


def grad_check(f: Callable, x, eps: float = 1e-4, max_entries: int | None = None,
               seed: int = 0) -> float:
    """Largest relative disagreement between backward() and central differences.

    ``x`` is a tensor or a sequence of tensors; ``f`` is called as ``f(*x)``
    and must return a scalar.  The error per element is
    ``|a - b| / max(|a|, |b|, 1e-8)``.  With ``max_entries`` only that many
    randomly chosen elements per input are perturbed.
    """
    return max((err for _, _, err in grad_check_report(f, x, eps, max_entries, seed)),
               default=0.0)


def grad_check_report(f: Callable, x, eps: float = 1e-4, max_entries: int | None = None,
                      seed: int = 0) -> list[tuple[int, int, float]]:
    """Per-element ``(input index, flat index, relative error)`` triples."""
    inputs = _as_list(x)
    grads = analytic_grads(f, inputs)
    rng = np.random.default_rng(seed)
    rows = []
    for k, (t, g) in enumerate(zip(inputs, grads)):
        flat = t.data.reshape(-1)
        if flat.base is None and t.data.size:
            raise RuntimeError("tensor data must be contiguous for perturbation")
        n = flat.size
        idx = np.arange(n) if max_entries is None or max_entries >= n else \
            np.sort(rng.choice(n, size=max_entries, replace=False))
        gflat = g.reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f(*inputs).data)
            flat[i] = orig - eps
            fm = float(f(*inputs).data)
            flat[i] = orig
            numeric = (fp - fm) / (2 * eps)
            a = float(gflat[i])
            rows.append((k, int(i), abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)))
    return rows


def grad_check_steps(f: Callable, x, steps=(1e-4, 1e-5, 1e-6, 1e-7), tol: float = 1e-4,
                     max_entries: int | None = None, seed: int = 0) -> float:
    """:func:`grad_check` over a ladder of step sizes, for deep piecewise-linear networks.

    Large steps cross ReLU kinks; small steps drown tiny gradients in
    rounding noise.  Each element is compared at successive steps until one
    agrees within ``tol``, and its error is the smallest seen.  A wrong
    backward pass disagrees at every step size.
    """
    inputs = _as_list(x)
    grads = analytic_grads(f, inputs)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t, g in zip(inputs, grads):
        flat = t.data.reshape(-1)
        n = flat.size
        idx = np.arange(n) if max_entries is None or max_entries >= n else \
            np.sort(rng.choice(n, size=max_entries, replace=False))
        gflat = g.reshape(-1)
        for i in idx:
            orig = flat[i]
            a = float(gflat[i])
            best = np.inf
            for h in steps:
                flat[i] = orig + h
                fp = float(f(*inputs).data)
                flat[i] = orig - h
                fm = float(f(*inputs).data)
                flat[i] = orig
                numeric = (fp - fm) / (2 * h)
                best = min(best, abs(a - numeric) / max(abs(a), abs(numeric), 1e-8))
                if best <= tol:
                    break
            worst = max(worst, best)
    return worst
