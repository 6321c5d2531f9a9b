import numpy as np
import pytest

from gfsid.text_pipeline import (
    EncoderConfig,
    EncoderInput,
    MeanPoolEncoder,
    PrecomputedEncoder,
    Utterance,
    Vocab,
    apply_template,
    build_vocab,
    encode,
    init_encoder_params,
    make_encoder,
    split_tokens,
    tokenize,
)
from utils.error_handler import ConfigError, DataFormatError, DimensionMismatchError


def test_apply_template_appends_mask_suffix():
    assert apply_template("play jazz") == "play jazz. The intent is to [MASK]"


def test_apply_template_rejects_empty_text():
    with pytest.raises(DataFormatError):
        apply_template("   ")


def test_split_tokens_lowercases_and_splits_punctuation():
    assert split_tokens("Play Jazz!") == ["play", "jazz", "!"]
    assert split_tokens("book it. The intent is to [MASK]")[-1] == "[MASK]"


def test_vocab_reserves_pad_unk_mask():
    vocab = build_vocab(["play jazz"])
    assert (vocab.pad_id, vocab.unk_id, vocab.mask_id) == (0, 1, 2)
    assert vocab.id_of("play") > 2
    assert vocab.id_of("zzz-unknown") == vocab.unk_id


def test_tokenize_templated_text_ends_with_mask():
    vocab = build_vocab(["play jazz"])
    ids = tokenize(apply_template("play jazz"), vocab)
    assert ids[-1] == vocab.mask_id
    assert ids.count(vocab.mask_id) == 1
    assert vocab.unk_id not in ids


def test_vocab_equality_is_by_tokens():
    assert build_vocab(["a b"]) == Vocab(build_vocab(["b a"]).tokens)
    assert build_vocab(["a"]) != build_vocab(["b"])


def test_utterance_requires_text_and_label():
    with pytest.raises(DataFormatError):
        Utterance("play jazz", "")
    with pytest.raises(DataFormatError):
        Utterance("", "PlayMusic")


def test_meanpool_encoder_shape_and_order_invariance(rng):
    cfg = EncoderConfig(embedding_dim=4, hidden_dim=6)
    params = init_encoder_params(10, cfg, rng)
    encoder = MeanPoolEncoder(cfg)
    out, _ = encoder.forward([EncoderInput((3, 4, 5)), EncoderInput((5, 3, 4))], params)
    assert out.shape == (2, 6)
    np.testing.assert_allclose(out[0], out[1], atol=1e-12)


def test_encode_matches_batched_forward(rng):
    cfg = EncoderConfig(embedding_dim=4, hidden_dim=5)
    params = init_encoder_params(8, cfg, rng)
    batched, _ = MeanPoolEncoder(cfg).forward([EncoderInput((1, 2, 7))], params)
    np.testing.assert_array_equal(encode((1, 2, 7), params, cfg), batched[0])


def test_encoder_rejects_empty_and_out_of_range_ids(rng):
    cfg = EncoderConfig(embedding_dim=3, hidden_dim=3)
    params = init_encoder_params(5, cfg, rng)
    with pytest.raises(DataFormatError):
        encode((), params, cfg)
    with pytest.raises(DimensionMismatchError):
        encode((9,), params, cfg)


def test_init_encoder_params_bounds(rng):
    cfg = EncoderConfig(embedding_dim=16, hidden_dim=9)
    params = init_encoder_params(50, cfg, rng)
    assert np.all(np.abs(params["encoder.embedding"].value) <= 0.1)
    assert np.all(np.abs(params["encoder.w1"].value) <= 1 / np.sqrt(16))
    assert np.all(np.abs(params["encoder.w2"].value) <= 1 / np.sqrt(9))
    assert not params["encoder.b1"].value.any()


def test_precomputed_encoder_looks_up_by_uid():
    encoder = PrecomputedEncoder({0: np.array([1.0, 0.0]), 1: np.array([0.0, 2.0])})
    out, _ = encoder.forward([EncoderInput((2,), uid=1), EncoderInput((2,), uid=0)], None)
    np.testing.assert_array_equal(out, [[0.0, 2.0], [1.0, 0.0]])
    with pytest.raises(DataFormatError):
        encoder.forward([EncoderInput((2,), uid=5)], None)


def test_precomputed_encoder_rejects_mixed_dims():
    with pytest.raises(DataFormatError):
        PrecomputedEncoder({0: np.ones(2), 1: np.ones(3)})


def test_make_encoder_dispatch():
    cfg = EncoderConfig()
    assert make_encoder("meanpool", cfg).kind == "meanpool"
    with pytest.raises(ConfigError):
        make_encoder("precomputed", cfg)
    with pytest.raises(ConfigError):
        make_encoder("transformer", cfg)
