"""Differentiable primitives.

Every function takes and returns :class:`Tensor` objects.  Each primitive
computes its forward value with numpy and, when recording, registers a
closure producing input gradients from the output gradient.  Elementwise
binary ops follow numpy broadcasting; gradients are summed back to the
input shapes.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

from ..errors import ContractError, DimensionError
from .tensor import Tensor, active_tape

PRIMITIVES = (
    "matmul", "conv2d", "add", "mul", "sub", "relu", "sigmoid", "tanh",
    "softmax_lastdim", "concat", "slice", "sum", "mean", "global_avg_pool_2d",
    "adaptive_avg_pool_1d", "upsample_nearest_2x", "lstm_cell", "l1_loss_masked",
    "cross_entropy_logits", "scalar_mul", "broadcast_spatial", "reshape", "transpose",
)


def _emit(kind, data, inputs, backward, **saved) -> Tensor:
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(kind, inputs, (out,), backward, **saved)
    return out


def _coerce(a, b):
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        return Tensor(a), Tensor(b)
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    return a, b


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor, kind: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{kind}: cannot broadcast {a.shape} with {b.shape}") from None


# --- elementwise --------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _broadcast_shape(a, b, "add")

    def backward(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)

    return _emit("add", a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _broadcast_shape(a, b, "sub")

    def backward(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.shape) if b.requires_grad else None)

    return _emit("sub", a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _broadcast_shape(a, b, "mul")

    def backward(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return _emit("mul", a.data * b.data, (a, b), backward)


def scalar_mul(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _emit("scalar_mul", a.data * a.dtype.type(s), (a,),
                 lambda g: (g * g.dtype.type(s),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _emit("relu", x.data * mask, (x,), lambda g: (g * mask,))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return _emit("sigmoid", y, (x,), lambda g: (g * y * (1 - y),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _emit("tanh", y, (x,), lambda g: (g * (1 - y * y),))


def softmax_lastdim(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _emit("softmax_lastdim", y, (x,), backward)


# --- linear algebra -------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _coerce(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(f"matmul batch extents incompatible: {a.shape} x {b.shape}") from exc

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _emit("matmul", out, (a, b), backward)


_SMALL_MAP_ROWS = 1200


def _conv_out(n, k, stride, pad, dilation):
    return (n + 2 * pad - dilation * (k - 1) - 1) // stride + 1


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
           pad: int = 0, dilation: int = 1) -> Tensor:
    """Cross-correlation with zero padding on channels-last maps.

    ``x`` is ``H×W×C`` or ``N×H×W×C``; ``w`` is ``O×C×k×k`` with odd ``k``;
    the optional bias ``b`` has length ``O``.  The result is ``(N×)H'×W'×O``.
    """
    unbatched = x.ndim == 3
    xd = x.data[None] if unbatched else x.data
    if xd.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects (N,)H,W,C input and O,C,k,k kernel; got {x.shape}, {w.shape}")
    n, h, wid, c = xd.shape
    o, cw, kh, kw = w.shape
    if cw != c:
        raise DimensionError(f"conv2d channel mismatch: input has {c}, kernel expects {cw}")
    if kh != kw or kh % 2 == 0:
        raise DimensionError(f"conv2d kernel must be square with odd size, got {kh}x{kw}")
    if b is not None and b.shape != (o,):
        raise DimensionError(f"conv2d bias must have shape ({o},), got {b.shape}")
    ho = _conv_out(h, kh, stride, pad, dilation)
    wo = _conv_out(wid, kw, stride, pad, dilation)
    if ho <= 0 or wo <= 0:
        raise DimensionError(f"conv2d output extent is non-positive ({ho}x{wo})")

    k = kh
    hp, wp = h + 2 * pad, wid + 2 * pad
    if pad:
        xp = np.zeros((n, hp, wp, c), dtype=xd.dtype)
        xp[:, pad:pad + h, pad:pad + wid] = xd
    else:
        xp = np.ascontiguousarray(xd)
    # taps[i, j] is the C×O matrix applied at kernel offset (i, j)
    taps = np.ascontiguousarray(w.data.transpose(2, 3, 1, 0))
    cols = None
    if stride == 1:
        # Flattened padded grid: each kernel tap is a contiguous row shift.
        flat = xp.reshape(-1, c)
        total = flat.shape[0]
        span = (k - 1) * dilation * (wp + 1)
        rows = total - span
        acc = np.zeros((total, o), dtype=xd.dtype)
        head = acc[:rows]
        if total <= _SMALL_MAP_ROWS:
            # Small maps: gather all taps once and use a single matmul.
            s0, s1 = flat.strides
            cols = as_strided(flat, (rows, k, k, c), (s0, wp * dilation * s0, dilation * s0, s1))
            cols = cols.reshape(rows, k * k * c)
            head += cols @ taps.reshape(k * k * c, o)
        else:
            for i in range(k):
                for j in range(k):
                    off = (i * wp + j) * dilation
                    head += flat[off:off + rows] @ taps[i, j]
        out = acc.reshape(n, hp, wp, o)[:, :ho, :wo]
    else:
        cols = np.empty((n, ho, wo, k, k, c), dtype=xd.dtype)
        for i in range(k):
            for j in range(k):
                r0, c0 = i * dilation, j * dilation
                cols[:, :, :, i, j] = xp[:, r0:r0 + stride * (ho - 1) + 1:stride,
                                         c0:c0 + stride * (wo - 1) + 1:stride]
        cols = cols.reshape(n * ho * wo, k * k * c)
        out = (cols @ taps.reshape(k * k * c, o)).reshape(n, ho, wo, o)
    if b is not None:
        out = out + b.data
    else:
        out = np.ascontiguousarray(out)
    if unbatched:
        out = out[0]

    def backward(g):
        g = g.reshape(n, ho, wo, o)
        gx = gw = gb = None
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 1, 2))
        if stride == 1:
            gfull = np.zeros((n, hp, wp, o), dtype=g.dtype)
            gfull[:, :ho, :wo] = g
            gflat = gfull.reshape(-1, o)[:rows]
            if cols is not None:
                if w.requires_grad:
                    gw = (cols.T @ gflat).reshape(k, k, c, o).transpose(3, 2, 0, 1)
                if x.requires_grad:
                    gc = (gflat @ taps.reshape(k * k * c, o).T).reshape(rows, k, k, c)
                    gxp = np.zeros((total, c), dtype=g.dtype)
                    for i in range(k):
                        for j in range(k):
                            off = (i * wp + j) * dilation
                            gxp[off:off + rows] += gc[:, i, j]
                    gxp = gxp.reshape(n, hp, wp, c)
            elif w.requires_grad:
                gtaps = np.empty_like(taps)
                for i in range(k):
                    for j in range(k):
                        off = (i * wp + j) * dilation
                        gtaps[i, j] = flat[off:off + rows].T @ gflat
                gw = gtaps.transpose(3, 2, 0, 1)
            if x.requires_grad and cols is None:
                gxp = np.zeros((total, c), dtype=g.dtype)
                for i in range(k):
                    for j in range(k):
                        off = (i * wp + j) * dilation
                        gxp[off:off + rows] += gflat @ taps[i, j].T
                gxp = gxp.reshape(n, hp, wp, c)
        else:
            g2 = g.reshape(-1, o)
            if w.requires_grad:
                gw = (cols.T @ g2).reshape(k, k, c, o).transpose(3, 2, 0, 1)
            if x.requires_grad:
                gcols = (g2 @ taps.reshape(k * k * c, o).T).reshape(n, ho, wo, k, k, c)
                gxp = np.zeros((n, hp, wp, c), dtype=g.dtype)
                for i in range(k):
                    for j in range(k):
                        r0, c0 = i * dilation, j * dilation
                        gxp[:, r0:r0 + stride * (ho - 1) + 1:stride,
                            c0:c0 + stride * (wo - 1) + 1:stride] += gcols[:, :, :, i, j]
        if x.requires_grad:
            gx = gxp[:, pad:pad + h, pad:pad + wid] if pad else gxp
            gx = gx[0] if unbatched else gx
        return gx, gw, gb

    inputs = (x, w) if b is None else (x, w, b)
    return _emit("conv2d", out, inputs, backward, stride=stride, pad=pad, dilation=dilation)


# --- shape plumbing -------------------------------------------------------------

def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ContractError("concat of an empty sequence")
    nd = tensors[0].ndim
    ax = axis % nd
    for t in tensors:
        if t.ndim != nd or any(t.shape[i] != tensors[0].shape[i] for i in range(nd) if i != ax):
            raise DimensionError(f"concat shapes disagree off axis {axis}: "
                                 f"{[t.shape for t in tensors]}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) if t.requires_grad else None
            for i, t in enumerate(tensors))

    return _emit("concat", np.concatenate([t.data for t in tensors], axis=ax), tensors, backward)


def slice(x: Tensor, axis: int, start: int, stop: int) -> Tensor:  # noqa: A001
    ax = axis % x.ndim
    n = x.shape[ax]
    if not 0 <= start < stop <= n:
        raise DimensionError(f"slice [{start}, {stop}) out of range for extent {n}")
    index = [np.s_[:]] * x.ndim
    index[ax] = np.s_[start:stop]
    index = tuple(index)

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[index] = g
        return (gx,)

    return _emit("slice", x.data[index], (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}") from exc
    return _emit("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(a % x.ndim for a in axes)
    inverse = tuple(np.argsort(axes))
    return _emit("transpose", np.transpose(x.data, axes), (x,),
                 lambda g: (np.transpose(g, inverse),))


def broadcast_spatial(v: Tensor, height: int, width: int) -> Tensor:
    """Tile a ``(N,)C`` vector to ``(N,)H×W×C``."""
    if v.ndim not in (1, 2):
        raise DimensionError(f"broadcast_spatial expects a vector or batch of vectors, got {v.shape}")
    lead = v.shape[:-1]
    out = np.broadcast_to(v.data[..., None, None, :], lead + (height, width, v.shape[-1])).copy()
    return _emit("broadcast_spatial", out, (v,), lambda g: (g.sum(axis=(-3, -2)),))


def upsample_nearest_2x(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling of the spatial axes of a ``(N,)H×W×C`` map."""
    lead, (h, w, c) = x.shape[:-3], x.shape[-3:]
    out = np.broadcast_to(x.data[..., :, None, :, None, :], lead + (h, 2, w, 2, c))
    out = out.reshape(lead + (2 * h, 2 * w, c))

    def backward(g):
        return (g.reshape(lead + (h, 2, w, 2, c)).sum(axis=(-4, -2)),)

    return _emit("upsample_nearest_2x", out, (x,), backward)


# --- reductions -----------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axes(axis, x.ndim)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _emit("sum", np.sum(x.data, axis=axes, keepdims=keepdims), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return _emit("mean", np.mean(x.data, axis=axes, keepdims=keepdims), (x,), backward)


def global_avg_pool_2d(x: Tensor) -> Tensor:
    """Mean over the spatial axes of a ``(N,)H×W×C`` map."""
    if x.ndim < 3:
        raise DimensionError(f"global_avg_pool_2d expects (N,)H×W×C, got {x.shape}")
    h, w = x.shape[-3:-1]

    def backward(g):
        return (np.broadcast_to(g[..., None, None, :] / (h * w), x.shape).copy(),)

    return _emit("global_avg_pool_2d", x.data.mean(axis=(-3, -2)), (x,), backward)


def adaptive_bucket_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Averaging matrix for adaptive 1-D pooling: bucket j covers
    ``[floor(j*n_in/n_out), ceil((j+1)*n_in/n_out))``."""
    m = np.zeros((n_in, n_out), dtype=dtype)
    for j in range(n_out):
        lo = (j * n_in) // n_out
        hi = -((-(j + 1) * n_in) // n_out)
        m[lo:hi, j] = 1.0 / (hi - lo)
    return m


def adaptive_avg_pool_1d(x: Tensor, out_len: int) -> Tensor:
    n_in = x.shape[-1]
    if out_len <= 0 or out_len > n_in:
        raise ContractError(f"adaptive_avg_pool_1d cannot pool length {n_in} to {out_len}")
    m = adaptive_bucket_matrix(n_in, out_len, x.dtype)
    return _emit("adaptive_avg_pool_1d", x.data @ m, (x,), lambda g: (g @ m.T,))


# --- recurrent cell -------------------------------------------------------------

def lstm_cell(x: Tensor, h: Tensor, c: Tensor, w_ih: Tensor, w_hh: Tensor,
              b: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step.  Gate order in the stacked weights is (i, f, g, o).

    Shapes: ``x`` (N,)C, ``h``/``c`` (N,)H, ``w_ih`` 4H×C, ``w_hh`` 4H×H, ``b`` 4H.
    """
    hid = h.shape[-1]
    if w_ih.shape != (4 * hid, x.shape[-1]) or w_hh.shape != (4 * hid, hid) or b.shape != (4 * hid,):
        raise DimensionError(
            f"lstm_cell weight shapes {w_ih.shape}, {w_hh.shape}, {b.shape} inconsistent "
            f"with input width {x.shape[-1]} and hidden width {hid}")
    if c.shape != h.shape:
        raise DimensionError(f"lstm_cell state shapes differ: {h.shape} vs {c.shape}")
    z = x.data @ w_ih.data.T + h.data @ w_hh.data.T + b.data
    i = _sigmoid(z[..., :hid])
    f = _sigmoid(z[..., hid:2 * hid])
    gg = np.tanh(z[..., 2 * hid:3 * hid])
    o = _sigmoid(z[..., 3 * hid:])
    c_new = f * c.data + i * gg
    tc = np.tanh(c_new)
    h_new = o * tc
    h_out, c_out = Tensor(h_new), Tensor(c_new)

    def backward(grads):
        gh, gc = grads
        dc = gc + gh * o * (1 - tc * tc)
        dz = np.concatenate([
            dc * gg * i * (1 - i),
            dc * c.data * f * (1 - f),
            dc * i * (1 - gg * gg),
            gh * tc * o * (1 - o),
        ], axis=-1)
        z2 = dz.reshape(-1, 4 * hid)
        return (
            dz @ w_ih.data if x.requires_grad else None,
            dz @ w_hh.data if h.requires_grad else None,
            dc * f if c.requires_grad else None,
            z2.T @ x.data.reshape(-1, x.shape[-1]) if w_ih.requires_grad else None,
            z2.T @ h.data.reshape(-1, hid) if w_hh.requires_grad else None,
            z2.sum(axis=0) if b.requires_grad else None,
        )

    inputs = (x, h, c, w_ih, w_hh, b)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record("lstm_cell", inputs, (h_out, c_out), backward)
    return h_out, c_out


# --- losses ---------------------------------------------------------------------

def l1_loss_masked(pred: Tensor, target, mask) -> Tensor:
    """Mean of ``|pred - target|`` over masked pixels of the last two axes.

    Leading axes are kept, so a ``N×H×W`` batch gives ``N`` values.  An empty
    mask contributes 0.
    """
    target = np.asarray(target.data if isinstance(target, Tensor) else target)
    mask = np.asarray(mask.data if isinstance(mask, Tensor) else mask).astype(bool)
    if pred.shape != target.shape or pred.shape != mask.shape:
        raise DimensionError(f"l1_loss_masked shapes differ: {pred.shape}, {target.shape}, {mask.shape}")
    diff = pred.data - target
    counts = mask.sum(axis=(-2, -1))
    denom = np.maximum(counts, 1).astype(pred.dtype)
    out = (np.abs(diff) * mask).sum(axis=(-2, -1)) / denom

    def backward(g):
        scale = (np.asarray(g) / denom)[..., None, None]
        return (np.sign(diff) * mask * scale,)

    return _emit("l1_loss_masked", out.astype(pred.dtype), (pred,), backward)


def cross_entropy_logits(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of ``-log softmax(logits)[label]``."""
    labels = np.asarray(labels, dtype=np.int64)
    single = logits.ndim == 1
    z = logits.data[None] if single else logits.data
    labels = labels.reshape(-1)
    if z.ndim != 2 or labels.shape[0] != z.shape[0]:
        raise DimensionError(f"cross_entropy_logits: logits {logits.shape} vs labels {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= z.shape[1]):
        raise ContractError("cross_entropy_logits: label out of range")
    shifted = z - z.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(z.shape[0])
    loss = -logp[rows, labels].mean()

    def backward(g):
        grad = np.exp(logp)
        grad[rows, labels] -= 1.0
        grad *= np.asarray(g) / z.shape[0]
        return (grad[0] if single else grad,)

    return _emit("cross_entropy_logits", np.asarray(loss, dtype=logits.dtype), (logits,), backward)


def attention(q: Tensor, k: Tensor, v: Tensor, key_bias=None) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention ``softmax(QK^T/sqrt(d_k))V`` over the last two axes.

    ``key_bias`` is an optional constant added to the scores before the
    softmax (large negative values mask keys out).  Returns the attended
    values and the attention weights.
    """
    d_k = q.shape[-1]
    scores = scalar_mul(matmul(q, transpose(k, _swap_last(k.ndim))), 1.0 / math.sqrt(d_k))
    if key_bias is not None:
        scores = add(scores, np.asarray(key_bias, dtype=scores.dtype))
    weights = softmax_lastdim(scores)
    return matmul(weights, v), weights


def _swap_last(ndim: int) -> tuple:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)
