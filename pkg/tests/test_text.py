import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tride.autodiff import Tensor, grad_check, ops
from tride.errors import ContractError, FormatError, ParseError
from tride.geometry import partition_regions
from tride.text import (ParagraphEncoder, RadarEnrichment, WeatherClassifier, embed_description, embed_sentence,
                        encode_paragraph, fnv1a_64, format_description, load_sentence_features,
                        parse_description, parse_sentence_features, render_prompt, save_sentence_features,
                        weather_feature)
from tride.text.description import RIGHT_TO_LEFT

TRANSCRIPT = (Path(__file__).parent / "fixtures" / "mllm_transcript_overcast.txt").read_text(encoding="utf-8")


# --- prompt and parsing ---------------------------------------------------------------

def test_prompt_content_and_stability():
    p = render_prompt()
    assert "five parts" in p and "maximum 80 meters" in p
    assert p.encode() == render_prompt().encode()


def test_transcript_parses():
    d = parse_description(TRANSCRIPT)
    assert len(d.paragraphs()) == 5
    assert "overcast" in " ".join(d.general)
    assert "left part" in d.regional[0][0]
    assert "right part" in d.regional[3][0]


def test_inline_dashes():
    d = parse_description("-a. -b. -c. -d. -e.")
    assert d.paragraphs() == [["a"], ["b"], ["c"], ["d"], ["e"]]


def test_wrong_paragraph_count():
    with pytest.raises(ParseError, match="expected 5.*got 4"):
        parse_description("- a.\n- b.\n- c.\n- d.\n")


def test_empty_paragraph():
    with pytest.raises(ParseError, match="empty"):
        parse_description("- a.\n- \n- c.\n- d.\n- e.\n")


def test_right_to_left_order():
    text = "- g.\n- r.\n- mr.\n- ml.\n- l.\n"
    assert parse_description(text, RIGHT_TO_LEFT).regional == [["l"], ["ml"], ["mr"], ["r"]]


def test_hyphenated_words_are_not_markers():
    d = parse_description("- A well-lit road. Low-light later.\n- a.\n- b.\n- c.\n- d.\n")
    assert d.general == ["A well-lit road", "Low-light later"]


sentence = st.text(alphabet="abcdefghij klmnop,'", min_size=1, max_size=20).filter(lambda s: s.strip(" ,'"))


@given(st.lists(sentence, min_size=1, max_size=3), st.lists(st.lists(sentence, min_size=1, max_size=3),
                                                             min_size=4, max_size=4))
def test_format_parse_round_trip(general, regional):
    general = [s.strip() for s in general]
    regional = [[s.strip() for s in p] for p in regional]
    d = parse_description(format_description(general, regional))
    assert d.general == general and d.regional == regional


# --- embedding ---------------------------------------------------------------------

def test_fnv_reference_vectors():
    assert fnv1a_64(b"") == 0xCBF29CE484222325
    assert fnv1a_64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a_64(b"foobar") == 0x85944171F73967E8


def reference_embed(sentence, dim):
    """Independent re-implementation of the signed hashing embedder."""
    v = np.zeros(dim)
    for tok in "".join(ch if ch.isascii() and ch.isalnum() else " " for ch in sentence.lower()).split():
        h = 0xCBF29CE484222325
        for byte in tok.encode():
            h = ((h ^ byte) * 0x100000001B3) % (1 << 64)
        v[h % dim] += -1.0 if h >> 63 else 1.0
    n = np.linalg.norm(v)
    return v / n if n else v


def test_embedding_edge_cases():
    assert not embed_sentence("", 16).any()
    np.testing.assert_array_equal(embed_sentence("car car", 64), embed_sentence("car", 64))


@given(st.text(max_size=40), st.sampled_from([1, 7, 64, 512]))
def test_embedding_matches_reference_and_norm(s, dim):
    v = embed_sentence(s, dim)
    np.testing.assert_allclose(v, reference_embed(s, dim), atol=1e-6)
    n = np.linalg.norm(v)
    assert n == 0 or abs(n - 1) <= 1e-6


def test_sentence_feature_round_trip(tmp_path):
    feats = embed_description(parse_description(TRANSCRIPT), 32)
    save_sentence_features(tmp_path / "f.txf", feats)
    back = load_sentence_features(tmp_path / "f.txf")
    assert all(a.astype(np.float32).tobytes() == b.tobytes() and a.shape == b.shape for a, b in zip(feats, back))


def test_sentence_feature_errors(tmp_path):
    feats = embed_description(parse_description(TRANSCRIPT), 8)
    save_sentence_features(tmp_path / "f.txf", feats)
    blob = (tmp_path / "f.txf").read_bytes()
    with pytest.raises(FormatError, match="offset 0"):
        parse_sentence_features(b"XXXXXXXX" + blob[8:])
    with pytest.raises(FormatError):
        parse_sentence_features(blob[:-3])
    with pytest.raises(FormatError):
        parse_sentence_features(blob[:8] + struct.pack("<I", 4) + blob[12:])
    # header says one more sentence than the data holds
    n0 = struct.unpack_from("<I", blob, 12)[0]
    with pytest.raises(FormatError):
        parse_sentence_features(blob[:12] + struct.pack("<I", n0 + 1) + blob[16:])
    with pytest.raises(FormatError, match="trailing"):
        parse_sentence_features(blob + b"\0")


# --- paragraph encoder ----------------------------------------------------------------

def test_single_sentence_is_one_cell_step(rng):
    enc = ParagraphEncoder(rng, 6, 4)
    x = rng.normal(size=(1, 6))
    z = Tensor(np.zeros(4))
    h, _ = enc.cell(Tensor(x[0]), z, z)
    np.testing.assert_allclose(encode_paragraph(enc, x).data, h.data, rtol=1e-6)


def test_sentence_order_matters(rng):
    enc = ParagraphEncoder(rng, 6, 4)
    x = rng.normal(size=(3, 6))
    assert not np.allclose(enc(x).data, enc(x[::-1]).data)


def test_zero_weight_lstm_gives_zero(rng):
    enc = ParagraphEncoder(rng, 6, 4)
    for p in enc.parameters():
        p.data[...] = 0
    assert not enc(rng.normal(size=(3, 6))).data.any()


def test_empty_paragraph_rejected(rng):
    with pytest.raises(ContractError):
        encode_paragraph(ParagraphEncoder(rng, 6, 4), np.zeros((0, 6)))


@given(st.lists(st.integers(1, 32), min_size=1, max_size=5))
def test_batch_matches_individual_any_length(lengths):
    rng = np.random.default_rng(len(lengths))
    enc = ParagraphEncoder(rng, 5, 3)
    paras = [rng.normal(size=(n, 5)) for n in lengths]
    batch = enc.encode_batch(paras).data
    for row, p in zip(batch, paras):
        np.testing.assert_allclose(row, enc(p).data, rtol=1e-5, atol=1e-6)


# --- radar enrichment ----------------------------------------------------------------

def test_reb_empty_regions_is_identity(rng):
    reb = RadarEnrichment(rng, 4, 6)
    f = Tensor(rng.normal(size=(4, 4)))
    out = reb(f, Tensor(np.zeros((0, 6))), partition_regions(np.zeros((0, 2)), 64))
    np.testing.assert_array_equal(out.data, f.data)


def test_reb_zero_value_path_is_identity(rng):
    reb = RadarEnrichment(rng, 4, 6)
    reb.w_v.weight.data[...] = 0
    f = Tensor(rng.normal(size=(4, 4)))
    regions = partition_regions(np.array([[1, 0], [20, 0], [40, 0], [60, 0]]), 64)
    out = reb(f, Tensor(rng.normal(size=(4, 6))), regions)
    np.testing.assert_array_equal(out.data, f.data)


def test_reb_only_touches_nonempty_regions(rng):
    reb = RadarEnrichment(rng, 4, 6)
    f = Tensor(rng.normal(size=(4, 4)))
    regions = partition_regions(np.array([[40, 0], [41, 0]]), 64)   # both in MR
    out = reb(f, Tensor(rng.normal(size=(2, 6))), regions).data
    np.testing.assert_array_equal(out[[0, 1, 3]], f.data[[0, 1, 3]])
    assert not np.allclose(out[2], f.data[2])


def test_reb_index_out_of_range(rng):
    reb = RadarEnrichment(rng, 4, 6)
    regions = partition_regions(np.array([[1, 0], [2, 0], [3, 0]]), 64)
    with pytest.raises(ContractError):
        reb(Tensor(rng.normal(size=(4, 4))), Tensor(rng.normal(size=(2, 6))), regions)


def test_reb_gradcheck(rng, f64):
    reb = RadarEnrichment(rng, 4, 6)
    f, pts = Tensor(rng.normal(size=(4, 4))), Tensor(rng.normal(size=(3, 6)))
    regions = partition_regions(np.array([[1, 0], [50, 0], [55, 0]]), 64)
    g = lambda f, p, *_: ops.sum(ops.mul(reb(f, p, regions), Tensor(np.arange(16.0).reshape(4, 4))))
    assert grad_check(g, [f, pts, *reb.parameters()], eps=1e-6) < 1e-4


# --- weather feature and classifier -----------------------------------------------------

def test_weather_feature_constant():
    out = weather_feature(Tensor(np.full((2, 3, 8), 2.5)), Tensor(np.zeros(4)), 4)
    np.testing.assert_allclose(out.data, 2.5)


def test_weather_feature_identity_pool(rng):
    f5, tg = rng.normal(size=(2, 3, 4)), rng.normal(size=4)
    np.testing.assert_allclose(weather_feature(Tensor(f5), Tensor(tg), 4).data, f5.mean(axis=(0, 1)) + tg)


def test_weather_feature_bucket_means():
    f5 = np.array([1.0, 3.0, 5.0, 7.0]).reshape(1, 1, 4)
    np.testing.assert_allclose(weather_feature(Tensor(f5), Tensor(np.zeros(2)), 2).data, [2.0, 6.0])


def test_weather_feature_too_narrow():
    with pytest.raises(ContractError):
        weather_feature(Tensor(np.ones((1, 1, 2))), Tensor(np.zeros(4)), 4)


def test_classifier_zero_weights_uniform(rng):
    clf = WeatherClassifier(rng, 4)
    for p in clf.parameters():
        p.data[...] = 0
    logits = clf(Tensor(rng.normal(size=(2, 4))))
    assert ops.cross_entropy_logits(logits, [0, 2]).data.item() == pytest.approx(np.log(3), abs=1e-6)


def test_classifier_argmax_shift_invariant(rng):
    logits = WeatherClassifier(rng, 4)(Tensor(rng.normal(size=(5, 4)))).data
    assert np.array_equal(np.argmax(logits, 1), np.argmax(logits + 3.7, 1))


def test_classifier_gradcheck(rng, f64):
    clf = WeatherClassifier(rng, 4)
    x = Tensor(rng.normal(size=(3, 4)))
    assert grad_check(lambda x, *_: ops.cross_entropy_logits(clf(x), [0, 1, 2]), [x, *clf.parameters()],
                      eps=1e-6) < 1e-4
