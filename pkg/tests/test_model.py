from dataclasses import replace

import numpy as np
import pytest

from tride.autodiff import Tape, Tensor, ops
from tride.errors import ContractError
from tride.losses import loss_depth
from tride.model import (MODALITY_SETS, ModelConfig, TrideModel, decoder_widths, leaky_relu, predict,
                         prepare_batch, row_coordinate)
from tride.synth import GenParams, generate_scene

PARAMS = GenParams(height=32, width=64, n_radar=12)
SAMPLES = [generate_scene(1, PARAMS, "normal"), generate_scene(2, PARAMS, "night")]


def small(modalities="I+R+T", **kw):
    return ModelConfig(modalities=modalities, c=2, c_t=8, c_r=8, embed_dim=16, **kw)


def _wake_head(model, seed=0):
    rng = np.random.default_rng(seed)
    model.head.weight.data[...] = rng.normal(scale=0.5, size=model.head.weight.shape)


@pytest.mark.parametrize("mods", MODALITY_SETS)
def test_every_modality_set_runs(mods):
    cfg = small(mods)
    out = TrideModel(cfg, seed=0)(prepare_batch(SAMPLES, cfg))
    assert out.depth.shape == (2, 32, 64)
    assert np.all((out.depth.data > 0) & (out.depth.data < 80))
    if cfg.uses_text:
        assert out.weather_logits.shape == (2, 3)
    else:
        assert out.weather_logits is None


def test_initial_prediction_is_constant():
    cfg = small()
    depth = TrideModel(cfg)(prepare_batch(SAMPLES, cfg)).depth.data
    assert np.ptp(depth) == 0


def test_forward_is_deterministic():
    cfg = small()
    a = TrideModel(cfg, seed=3)
    b = TrideModel(cfg, seed=3)
    _wake_head(a)
    _wake_head(b)
    batch = prepare_batch(SAMPLES, cfg)
    da, la = predict(a, batch)
    db, lb = predict(b, batch)
    assert da.tobytes() == db.tobytes() and la.tobytes() == lb.tobytes()
    assert predict(a, batch)[0].tobytes() == da.tobytes()


def test_batch_of_one_matches_batch_row():
    cfg = small()
    model = TrideModel(cfg, seed=1)
    _wake_head(model)
    both = predict(model, prepare_batch(SAMPLES, cfg))[0]
    one = predict(model, prepare_batch(SAMPLES[1:], cfg))[0]
    np.testing.assert_allclose(one[0], both[1], rtol=1e-4, atol=1e-4)


def test_text_changes_prediction():
    cfg = small("I+T")
    model = TrideModel(cfg, seed=2)
    _wake_head(model)
    other = replace(SAMPLES[0], text=SAMPLES[1].text)
    d0 = predict(model, prepare_batch(SAMPLES[:1], cfg))[0]
    d1 = predict(model, prepare_batch([other], cfg))[0]
    assert not np.allclose(d0, d1)


def test_missing_modalities_rejected():
    cfg = small()
    batch = prepare_batch(SAMPLES, cfg)
    model = TrideModel(cfg)
    with pytest.raises(ContractError):
        model(replace(batch, radar_image=None))
    with pytest.raises(ContractError):
        model(replace(batch, text=None))
    with pytest.raises(ContractError):
        prepare_batch([replace(SAMPLES[0], text="")], cfg)
    with pytest.raises(ContractError):
        prepare_batch([replace(SAMPLES[0], cloud=None)], cfg)


def test_config_validation():
    with pytest.raises(ContractError):
        small("R+T")
    with pytest.raises(ContractError):
        small(fusion="mystery")
    with pytest.raises(ContractError):
        small(ga_scale=4)
    with pytest.raises(ContractError):
        small("I+R", text_minus=True)
    with pytest.raises(ContractError):
        ModelConfig(c=2, c_t=32)
    with pytest.raises(ContractError):
        ModelConfig.from_dict({"c": 4, "colour": 1})
    cfg = small(ga_scale=16, ra_scale=8)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_optional_branches_built_only_when_needed():
    names = lambda cfg: {n.split(".")[0] for n, _ in TrideModel(cfg).named_parameters()}
    assert not {"radar_encoder", "fusions", "paragraph_encoder", "reb"} & names(small("I"))
    assert "reb" not in names(small(text_minus=True))
    assert {"radar_encoder", "fusions", "reb", "point_encoder", "ga", "ra"} <= names(small())
    assert "regional_encoder" in names(small(share_lstm=False))


@pytest.mark.parametrize("ga,ra", [(32, 16), (16, 8), (8, 16)])
def test_attention_scales(ga, ra):
    cfg = small(ga_scale=ga, ra_scale=ra)
    out = TrideModel(cfg)(prepare_batch(SAMPLES, cfg))
    assert out.depth.shape == (2, 32, 64)


def test_leaky_relu_values_and_slope():
    x = Tensor(np.array([-2.0, -0.5, 0.0, 3.0]), requires_grad=True)
    with Tape() as tape:
        y = leaky_relu(x, 0.1)
        tape.backward(ops.sum(y))
    np.testing.assert_allclose(y.data, [-0.2, -0.05, 0.0, 3.0], atol=1e-15)
    np.testing.assert_allclose(x.grad[[0, 1, 3]], [0.1, 0.1, 1.0])


def test_row_coordinate_channel():
    img = np.zeros((2, 4, 3, 3), dtype=np.float32)
    rc = row_coordinate(img)
    assert rc.shape == (2, 4, 3, 1) and rc.dtype == np.float32
    np.testing.assert_allclose(rc[0, :, 0, 0], [-1, -1 / 3, 1 / 3, 1], rtol=1e-6)
    assert np.all(rc[1] == rc[0]) and np.all(rc[:, :, 2] == rc[:, :, 0])


@pytest.mark.parametrize("mods", ["I", "I+R+T"])
def test_row_coord_and_slope_options(mods):
    cfg = small(mods, row_coord=True, decoder_slope=0.0)
    model = TrideModel(cfg)
    assert model.image_encoder.stages[0].down.weight.shape[1] == 4
    assert model.stages[-1].conv1.weight.shape[1] == cfg.c + (7 if cfg.uses_radar else 4)
    _wake_head(model)
    assert predict(model, prepare_batch(SAMPLES, cfg))[0].shape == (2, 32, 64)
    with pytest.raises(ContractError):
        small(decoder_slope=1.0)


def test_decoder_widths():
    assert decoder_widths(16) == {16: 64, 8: 32, 4: 16, 2: 16, 1: 16}


def test_every_parameter_receives_gradient():
    cfg = small()
    model = TrideModel(cfg, seed=4)
    _wake_head(model)
    for _, p in model.named_parameters():
        if not p.data.any():
            p.data[...] = np.random.default_rng(0).normal(scale=0.1, size=p.shape)
    batch = prepare_batch(SAMPLES, cfg)
    with Tape() as tape:
        out = model(batch)
        tape.backward(loss_depth(out.depth, batch.depth, batch.sparse))
    missing = {n for n, p in model.named_parameters()
               if (p.grad is None or not np.any(p.grad)) and not n.startswith("weather_head")}
    # position-to-text attention has a single key, so its softmax is constant
    assert missing == {"ga.q2.weight", "ga.k2.weight", "ra.attn.q2.weight", "ra.attn.k2.weight"}
