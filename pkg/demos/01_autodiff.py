"""Build a tiny graph on the tape, backpropagate, and compare against finite differences."""
import numpy as np

from tride.autodiff import Tape, Tensor, default_dtype, grad_check, ops

rng = np.random.default_rng(0)

with default_dtype(np.float64):
    x = Tensor(rng.normal(size=(1, 6, 6, 2)), requires_grad=True)
    w = Tensor(rng.normal(size=(3, 2, 3, 3)) * 0.3, requires_grad=True)

    def f(x, w):
        return ops.mean(ops.tanh(ops.conv2d(x, w, None, 1, 1, 1)))

    with Tape() as tape:
        y = f(x, w)
        tape.backward(y)
    print(f"loss {y.data.item():.6f}, |dL/dw| = {np.abs(w.grad).sum():.6f}")
    print(f"relative error vs central differences: {grad_check(f, [x, w]):.2e}")
