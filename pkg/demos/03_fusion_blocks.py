"""The weather-aware block is gated fusion plus one extra gamma*beta term."""
import numpy as np

from tride.autodiff import Tensor, default_dtype, ops
from tride.fusion import WaFB

rng = np.random.default_rng(1)
with default_dtype(np.float32):
    block = WaFB(rng, ch=8, c_t=16)
    f_img = Tensor(rng.normal(size=(2, 8, 16, 8)).astype(np.float32))
    f_rad = Tensor(rng.normal(size=(2, 8, 16, 8)).astype(np.float32))
    t_wea = Tensor(rng.normal(size=(2, 16)).astype(np.float32))

    p = block.parts(f_img, f_rad, t_wea)
    gap = block(f_img, f_rad, t_wea).data - block.gated(f_img, f_rad).data
    print("max |wafb - gated - gamma*beta| =", np.abs(gap - ops.mul(p["gamma"], p["beta"]).data).max())

    # with no radar signal and zero biases beta vanishes, so the image passes through untouched
    for conv in (block.alpha_conv, block.beta_conv, block.gamma_conv):
        conv.bias.data[...] = 0
    out = block(f_img, Tensor(np.zeros_like(f_rad.data)), t_wea)
    print("zero radar returns the image feature bitwise:", out.data.tobytes() == f_img.data.tobytes())
