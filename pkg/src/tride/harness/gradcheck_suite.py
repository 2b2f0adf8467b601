"""Finite-difference gradient suites over primitives, composed blocks and a micro model."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..autodiff import Tensor, default_dtype, grad_check, grad_check_steps, ops
from ..autodiff.nn import Module
from ..errors import ContractError

SCOPES = ("primitives", "blocks", "model")
TOLERANCE = 1e-4
EPS = 1e-6


@dataclass
class Case:
    name: str
    build: Callable[[np.random.Generator], tuple[Callable, list]]
    max_entries: int | None = None
    step_ladder: bool = False   # try several FD step sizes per element


@dataclass
class CaseResult:
    name: str
    scope: str
    error: float
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error)) and self.error <= TOLERANCE


def _t(rng, *shape, scale=1.0) -> Tensor:
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)


def _weighted(out: Tensor, rng) -> Callable[[Tensor], Tensor]:
    """A fixed random linear functional, so every output element contributes a distinct weight."""
    w = rng.normal(size=out.shape)
    return lambda y: ops.sum(ops.mul(y, Tensor(w)))


def _case(fn, inputs, rng) -> tuple[Callable, list]:
    probe = _weighted(fn(*inputs), rng)
    return (lambda *xs: probe(fn(*xs))), inputs


def _randomize(module: Module, rng, scale: float = 0.3) -> list[Tensor]:
    """Give every parameter non-zero values so no gradient path is structurally dead."""
    params = module.parameters()
    for p in params:
        if not np.any(p.data):
            p.data = rng.normal(0.0, scale, size=p.shape)
    return params


# --- primitives -------------------------------------------------------------------

def _prim(name: str, make) -> Case:
    # the op is looked up at call time so a patched op is the one checked
    def build(rng):
        fn, inputs = make(rng, lambda *a, **k: getattr(ops, name)(*a, **k))
        return _case(fn, inputs, rng)
    return Case(name, build)


def primitive_cases() -> list[Case]:
    def conv(stride, pad, dil, k=3):
        def make(rng, op):
            x, w, b = _t(rng, 2, 7, 6, 3), _t(rng, 4, 3, k, k, scale=0.5), _t(rng, 4)
            return (lambda x, w, b: op(x, w, b, stride=stride, pad=pad, dilation=dil)), [x, w, b]
        return make

    def lstm(rng, op):
        n_in, n_h = 3, 4
        xs = [_t(rng, 2, n_in), _t(rng, 2, n_h), _t(rng, 2, n_h),
              _t(rng, 4 * n_h, n_in, scale=0.5), _t(rng, 4 * n_h, n_h, scale=0.5), _t(rng, 4 * n_h)]
        return (lambda *a: ops.concat(list(op(*a)), axis=-1)), xs

    def l1(rng, op):
        target = rng.normal(size=(2, 4, 5))
        mask = rng.random((2, 4, 5)) < 0.6
        mask[:, 0, 0] = True
        # keep prediction away from the target so |.| is differentiable at every sample
        pred = Tensor(target + np.where(rng.random(target.shape) < 0.5, -1, 1) * rng.uniform(0.2, 1, target.shape),
                      requires_grad=True)
        return (lambda p: op(p, target, mask)), [pred]

    def attention(rng, op):
        q, k, v = _t(rng, 2, 3, 4), _t(rng, 2, 5, 4), _t(rng, 2, 5, 6)
        bias = np.where(rng.random((2, 1, 5)) < 0.3, -1e9, 0.0)
        bias[..., 0] = 0.0
        return (lambda q, k, v: op(q, k, v, bias)[0]), [q, k, v]

    return [
        _prim("matmul", lambda r, op: (op, [_t(r, 2, 3, 4), _t(r, 4, 5)])),
        _prim("conv2d", conv(1, 1, 1)),
        Case("conv2d_stride2", _prim("conv2d", conv(2, 1, 1)).build),
        Case("conv2d_dilation2", _prim("conv2d", conv(1, 2, 2)).build),
        Case("conv2d_1x1", _prim("conv2d", conv(1, 0, 1, k=1)).build),
        _prim("add", lambda r, op: (op, [_t(r, 3, 4), _t(r, 4)])),
        _prim("sub", lambda r, op: (op, [_t(r, 3, 4), _t(r, 3, 1)])),
        _prim("mul", lambda r, op: (op, [_t(r, 2, 3, 4), _t(r, 3, 4)])),
        _prim("scalar_mul", lambda r, op: ((lambda x: op(x, -2.5)), [_t(r, 3, 4)])),
        _prim("relu", lambda r, op: (op, [Tensor(r.uniform(0.1, 1, (3, 4)) * r.choice([-1, 1], (3, 4)),
                                                 requires_grad=True)])),
        _prim("sigmoid", lambda r, op: (op, [_t(r, 3, 4, scale=2)])),
        _prim("tanh", lambda r, op: (op, [_t(r, 3, 4)])),
        _prim("softmax_lastdim", lambda r, op: (op, [_t(r, 2, 3, 5)])),
        _prim("concat", lambda r, op: ((lambda a, b: op([a, b], axis=-1)), [_t(r, 2, 3), _t(r, 2, 4)])),
        _prim("slice", lambda r, op: ((lambda x: op(x, 1, 1, 4)), [_t(r, 2, 5, 3)])),
        _prim("reshape", lambda r, op: ((lambda x: op(x, (6, 4))), [_t(r, 2, 3, 4)])),
        _prim("transpose", lambda r, op: ((lambda x: op(x, (2, 0, 1))), [_t(r, 2, 3, 4)])),
        _prim("sum", lambda r, op: ((lambda x: op(x, axis=1, keepdims=True)), [_t(r, 2, 3, 4)])),
        _prim("mean", lambda r, op: ((lambda x: op(x, axis=(0, 2))), [_t(r, 2, 3, 4)])),
        _prim("global_avg_pool_2d", lambda r, op: (op, [_t(r, 2, 4, 5, 3)])),
        _prim("adaptive_avg_pool_1d", lambda r, op: ((lambda x: op(x, 3)), [_t(r, 2, 7)])),
        _prim("upsample_nearest_2x", lambda r, op: (op, [_t(r, 2, 3, 4, 2)])),
        _prim("broadcast_spatial", lambda r, op: ((lambda v: op(v, 3, 4)), [_t(r, 2, 5)])),
        _prim("lstm_cell", lstm),
        _prim("l1_loss_masked", l1),
        _prim("cross_entropy_logits", lambda r, op: ((lambda z: op(z, np.array([0, 2, 1, 2]))),
                                                      [_t(r, 4, 3)])),
        _prim("attention", attention),
    ]


# --- blocks ----------------------------------------------------------------------

def _block(name: str, make, max_entries: int = 12) -> Case:
    def build(rng):
        module, fn, inputs = make(rng)
        params = _randomize(module, rng)
        return _case(lambda *xs: fn(*xs[:len(inputs)]), inputs + params, rng)
    return Case(name, build, max_entries)


def block_cases() -> list[Case]:
    from ..encoders import PointEncoder, ResidualBlock
    from ..fusion import DASPP, GatedFusion, GeneralAttention, RegionalAttention, WaFB
    from ..geometry import partition_regions
    from ..text.encoding import ParagraphEncoder, RadarEnrichment, WeatherClassifier, weather_feature

    ch, c_t = 4, 6

    def wafb(r):
        m = WaFB(r, ch, c_t)
        return m, (lambda fi, fr, t: m(fi, fr, t)), [_t(r, 2, 4, 4, ch), _t(r, 2, 4, 4, ch), _t(r, 2, c_t)]

    def gated(r):
        m = GatedFusion(r, ch)
        return m, (lambda fi, fr: m(fi, fr)), [_t(r, 2, 4, 4, ch), _t(r, 2, 4, 4, ch)]

    def ga(r):
        m = GeneralAttention(r, ch, c_t)
        return m, (lambda f, t: m(f, t)), [_t(r, 2, 2, 4, ch), _t(r, 2, c_t)]

    def ra(r):
        m = RegionalAttention(r, ch, c_t)
        return m, (lambda f, t: m(f, t)), [_t(r, 2, 2, 8, ch), _t(r, 2, 4, c_t)]

    def reb(r):
        c_r = 5
        m = RadarEnrichment(r, c_t, c_r)
        regions = [partition_regions(np.array([[3, 0], [40, 1], [50, 0], [100, 1], [120, 0]]), 128),
                   partition_regions(np.array([[10, 0], [70, 1]]), 128)]
        f = _t(r, 2, 4, c_t)
        pts = [_t(r, 5, c_r), _t(r, 2, c_r)]
        return m, (lambda f, p0, p1: m.enrich_batch(f, [p0, p1], regions)), [f, *pts]

    def daspp(r):
        m = DASPP(r, ch)
        return m, (lambda f: m(f)), [_t(r, 1, 8, 8, ch)]

    def lstm(r):
        m = ParagraphEncoder(r, 5, 4)
        paragraphs = [r.normal(size=(3, 5)), r.normal(size=(1, 5))]
        # sentence features are data, not parameters; gradients flow to the LSTM weights
        return m, (lambda: m.encode_batch(paragraphs)), []

    def weather(r):
        m = WeatherClassifier(r, c_t)
        return m, (lambda f5, tg: m(weather_feature(f5, tg, c_t))), [_t(r, 2, 2, 4, 8), _t(r, 2, c_t)]

    def points(r):
        m = PointEncoder(r, c_r=6, hidden=5)
        cloud = np.column_stack([r.normal(0, 10, 7), r.normal(0, 1, 7), r.uniform(5, 70, 7),
                                 r.uniform(-20, 20, 7), r.uniform(-10, 40, 7)])
        return m, (lambda: m(cloud)), []

    def residual(r):
        m = ResidualBlock(r, ch)
        return m, (lambda x: m(x)), [_t(r, 1, 5, 5, ch)]

    return [_block("wafb", wafb), _block("gated_fusion", gated), _block("general_attention", ga),
            _block("regional_attention", ra), _block("radar_enrichment", reb), _block("daspp", daspp),
            _block("paragraph_lstm", lstm), _block("weather_mlp", weather), _block("point_encoder", points),
            _block("residual_block", residual)]


# --- model -------------------------------------------------------------------------

def micro_model_case(modalities: str = "I+R+T", fusion: str = "wafb") -> Case:
    def build(rng):
        from ..model import ModelConfig, TrideModel, prepare_batch
        from ..synth import GenParams, generate_scene

        params = GenParams(height=32, width=64, n_radar=12)
        samples = [generate_scene(s, params, weather=w) for s, w in ((1, 0), (2, 2))]
        cfg = ModelConfig(modalities=modalities, fusion=fusion, c=2, c_t=8, c_r=8, embed_dim=16)
        model = TrideModel(cfg, seed=0)
        for p in model.parameters():
            p.data = p.data.astype(np.float64)
        weights = _randomize(model, rng, scale=0.1)
        batch = prepare_batch(samples, cfg, dtype=np.float64)
        wd = Tensor(rng.normal(size=batch.depth.shape) / batch.depth[0].size)
        wc = Tensor(rng.normal(size=(len(samples), 3)))

        def f(*_):
            out = model(batch)
            total = ops.sum(ops.mul(out.depth, wd))
            if out.weather_logits is not None:
                total = ops.add(total, ops.sum(ops.mul(out.weather_logits, wc)))
            return total
        return f, weights
    return Case(f"model_{modalities}_{fusion}", build, max_entries=2, step_ladder=True)


def cases_for(scope: str) -> list[Case]:
    if scope == "primitives":
        return primitive_cases()
    if scope == "blocks":
        return block_cases()
    if scope == "model":
        return [micro_model_case()]
    raise ContractError(f"unknown gradcheck scope {scope!r}; expected one of {SCOPES}")


def run_suite(scope: str, cases: list[Case] | None = None, seed: int = 0, eps: float = EPS) -> list[CaseResult]:
    """Run every case in 64-bit mode; a case that raises is reported with an infinite error."""
    results = []
    with default_dtype(np.float64):
        for i, case in enumerate(cases if cases is not None else cases_for(scope)):
            rng = np.random.default_rng([seed, i])
            t0 = time.perf_counter()
            try:
                f, inputs = case.build(rng)
                if case.step_ladder:
                    err = grad_check_steps(f, inputs, max_entries=case.max_entries, seed=seed)
                else:
                    err = grad_check(f, inputs, eps=eps, max_entries=case.max_entries, seed=seed)
            except Exception:  # noqa: BLE001 - a crashing backward is a failed check
                err = float("inf")
            results.append(CaseResult(case.name, scope, float(err), time.perf_counter() - t0))
    return results


def format_report(results: list[CaseResult]) -> str:
    lines = [f"{'PASS' if r.passed else 'FAIL'} {r.scope}/{r.name} max_rel_err={r.error:.3e} ({r.seconds:.2f}s)"
             for r in results]
    failed = [r.name for r in results if not r.passed]
    lines.append(f"{len(results) - len(failed)}/{len(results)} passed" +
                 (f"; failed: {', '.join(failed)}" if failed else ""))
    return "\n".join(lines)
