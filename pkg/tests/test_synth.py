import numpy as np
import pytest
from hypothesis import given, strategies as st

from tride.errors import ContractError, FormatError
from tride.geometry import DEPTH_CAP, project_points
from tride.synth import (SCENE_VERSION, GenParams, SceneLayout, SceneObject, corrupt_weather, decode_scene,
                         encode_scene, generate_layout, generate_scene, load_scene, load_split, read_manifest,
                         render_clean, render_text, round_to, sample_radar, save_scene, write_manifest)
from tride.text import WEATHER_LABELS, parse_description

SMALL = GenParams(height=32, width=64, n_radar=12)


def test_same_seed_bitwise_identical():
    assert generate_scene(11).equals(generate_scene(11))
    assert not generate_scene(11).equals(generate_scene(12))


def test_normal_image_is_clean_render():
    s = generate_scene(5, weather="normal")
    clean = render_clean(generate_layout(5, weather="normal"), GenParams())
    np.testing.assert_array_equal(s.image, clean.astype(np.float32))


def test_weather_corruptions():
    rng = np.random.default_rng(0)
    img = rng.uniform(0.2, 0.9, (64, 128, 3))
    assert corrupt_weather(img, "normal", 1) is img
    night = corrupt_weather(img, "night", 1)
    assert night.mean() == pytest.approx(0.25 * img.mean(), abs=0.01)
    rainy = corrupt_weather(img, "rainy", 1)
    assert rainy.min() >= 0 and rainy.max() <= 1 and not np.allclose(rainy, img)
    with pytest.raises(ContractError):
        corrupt_weather(img, "snow", 1)


def test_radar_is_weather_independent():
    a = generate_scene(21, weather="normal")
    b = generate_scene(21, weather="night")
    c = generate_scene(21, weather="rainy")
    assert a.cloud.tobytes() == b.cloud.tobytes() == c.cloud.tobytes()
    assert a.depth.tobytes() == b.depth.tobytes()
    assert not np.array_equal(a.image, b.image)


def test_radar_point_count():
    assert generate_scene(3).cloud.shape == (GenParams().n_radar, 5)
    assert generate_scene(3, SMALL).cloud.shape == (12, 5)


def test_noise_free_radar_reprojects_exactly():
    p = GenParams(radar_sigma=0.0, clutter=0.0)
    layout = generate_layout(9, p)
    cloud = sample_radar(layout.depth, layout, p, 4)
    proj = project_points(cloud, p.intrinsics(), p.height, p.width, DEPTH_CAP)
    assert proj.kept.size == len(cloud)
    u, v = proj.pixels[:, 0], proj.pixels[:, 1]
    np.testing.assert_allclose(cloud[proj.kept, 2], layout.depth[v, u], rtol=1e-12)


def test_radar_signature_ranges():
    cloud = generate_scene(8).cloud
    assert np.all(np.abs(cloud[:, 3]) <= 20) and np.all((cloud[:, 4] >= -10) & (cloud[:, 4] <= 40))


@given(st.integers(0, 10**6))
def test_scene_invariants(seed):
    s = generate_scene(seed, SMALL)
    p = SMALL
    below = np.arange(p.height) + 0.5 > p.intrinsics().cy
    assert np.all(s.depth[below] > 0)
    assert np.all(s.depth <= DEPTH_CAP)
    support = s.sparse > 0
    assert np.all(s.depth[support] == s.sparse[support]) and support.sum() < (s.depth > 0).sum()
    assert s.image.min() >= 0 and s.image.max() <= 1
    d = parse_description(s.text)
    assert WEATHER_LABELS[s.weather] in ("normal", "rainy", "night")
    word = {"normal": "sunny", "rainy": "rainy", "night": "night-time"}[WEATHER_LABELS[s.weather]]
    assert f"in {word} conditions" in d.general[0]
    assert len(d.regional) == 4


@given(st.integers(0, 10**6))
def test_layout_invariants(seed):
    layout = generate_layout(seed, SMALL)
    assert 1 <= len(layout.objects) <= 8
    for obj in layout.objects:
        u0, v0, u1, v1 = obj.box
        assert 0 <= u0 < u1 <= SMALL.width and 0 <= v0 < v1 <= SMALL.height
        assert 4 <= obj.depth <= 75


def _single_object_layout(depth, u):
    p = GenParams()
    owner = np.full((p.height, p.width), -1)
    owner[40:44, u:u + 2] = 0
    return p, SceneLayout([SceneObject("car", depth, (u, 40, u + 2, 44))], 0, owner, np.zeros((p.height, p.width)))


def test_text_rounds_to_five_meters():
    p, layout = _single_object_layout(23.0, 10)
    p.text_noise = 0.0
    d = parse_description(render_text(layout, 0, p, 0))
    assert d.regional[0] == ["A car is about 25 meters away"]
    assert d.regional[1:] == [["There are no notable objects here"]] * 3


def test_text_band_follows_object_column():
    p, layout = _single_object_layout(40.0, 100)
    p.text_noise = 0.0
    d = parse_description(render_text(layout, "night", p, 0))
    assert "night-time" in d.general[0]
    assert d.regional[3] == ["A car is about 40 meters away"]


def test_round_to():
    assert round_to(23.0, 5) == 25.0
    assert round_to(22.4, 5) == 20.0
    assert round_to(22.5, 5) == 25.0


def test_bad_params():
    with pytest.raises(ContractError):
        GenParams(height=60)
    with pytest.raises(ContractError):
        GenParams(clutter=1.5)
    with pytest.raises(ContractError):
        GenParams(weather_mix=(0, 0, 0))


def test_weather_mix_all_normal():
    p = GenParams(height=32, width=64, weather_mix=(1, 0, 0))
    assert {generate_scene(i, p).weather for i in range(20)} == {0}


# --- container -------------------------------------------------------------------------

def test_scene_round_trip(tmp_path):
    s = generate_scene(2, SMALL)
    save_scene(s, tmp_path / "a.scn")
    back = load_scene(tmp_path / "a.scn")
    assert back.equals(s)
    assert encode_scene(back) == (tmp_path / "a.scn").read_bytes()


def test_scene_truncated():
    blob = encode_scene(generate_scene(2, SMALL))
    for cut in (4, 20, len(blob) // 2, len(blob) - 1):
        with pytest.raises(FormatError) as info:
            decode_scene(blob[:cut])
        assert info.value.offset is not None


def test_scene_bad_magic_and_version():
    blob = encode_scene(generate_scene(2, SMALL))
    with pytest.raises(FormatError, match="magic"):
        decode_scene(b"NOTASCNE" + blob[8:])
    bumped = blob[:8] + (SCENE_VERSION + 1).to_bytes(4, "little") + blob[12:]
    with pytest.raises(FormatError, match="unsupported version"):
        decode_scene(bumped)
    with pytest.raises(FormatError, match="trailing"):
        decode_scene(blob + b"x")


def test_manifest(tmp_path):
    samples = [generate_scene(i, SMALL) for i in range(3)]
    entries = []
    for i, s in enumerate(samples):
        save_scene(s, tmp_path / f"s{i}.scn")
        entries.append((f"s{i}.scn", "train" if i < 2 else "test"))
    write_manifest(tmp_path / "manifest.txt", entries)
    assert read_manifest(tmp_path / "manifest.txt") == entries
    train = load_split(tmp_path / "manifest.txt", "train")
    assert len(train) == 2 and train[1].equals(samples[1])
    with pytest.raises(ContractError):
        write_manifest(tmp_path / "m2.txt", [("a b.scn", "train")])
