import pytest
import torch

from keepfit.encoders import (
    DOWNSAMPLE_FACTOR,
    EncoderError,
    ImageEncoder,
    ImageEncoderConfig,
    ProjectionHead,
    TextEncoder,
    TextEncoderConfig,
    batch_tokenize,
    encode_images,
    encode_texts,
)
from keepfit.tokenizer import PAD, Vocabulary


def _image_setup(width=16, channels=8, size=32):
    cfg = ImageEncoderConfig(input_size=size, feature_channels=channels, base_width=width)
    torch.manual_seed(0)
    return cfg, ImageEncoder(cfg), ProjectionHead(channels, 12, "vision")


def test_image_encoder_output_shapes():
    cfg, enc, proj = _image_setup()
    images = torch.randn(3, 3, 32, 32)
    batch = encode_images(images, enc, proj, "elite")
    side = 32 // DOWNSAMPLE_FACTOR
    assert batch.flat_features.shape == (3, 12)
    assert batch.spatial_features.shape == (3, cfg.feature_channels, side, side)
    assert batch.source == "elite"


def test_image_encoding_is_batch_independent():
    _, enc, proj = _image_setup()
    torch.manual_seed(1)
    images = torch.randn(4, 3, 32, 32)
    full = encode_images(images, enc, proj)
    solo = encode_images(images[2:3], enc, proj)
    torch.testing.assert_close(full.flat_features[2:3], solo.flat_features)
    torch.testing.assert_close(full.spatial_features[2:3], solo.spatial_features)


def test_image_encoder_rejects_wrong_size():
    cfg, enc, proj = _image_setup(size=32)
    with pytest.raises(EncoderError, match="size"):
        encode_images(torch.randn(1, 3, 48, 48), enc, proj)


def test_input_size_must_divide_downsample():
    with pytest.raises(EncoderError):
        ImageEncoderConfig(input_size=30).validate()


def test_resnet_like_backbone_runs():
    cfg = ImageEncoderConfig(
        backbone="resnet-like", input_size=32, feature_channels=8, base_width=8
    )
    torch.manual_seed(0)
    enc = ImageEncoder(cfg)
    proj = ProjectionHead(8, 6, "vision")
    out = encode_images(torch.randn(2, 3, 32, 32), enc, proj)
    assert out.flat_features.shape == (2, 6)


def test_flat_features_are_not_normalized():
    _, enc, proj = _image_setup()
    out = encode_images(torch.randn(5, 3, 32, 32), enc, proj)
    norms = out.flat_features.norm(dim=-1)
    assert not torch.allclose(norms, torch.ones_like(norms))


def _text_setup(vocab_words="a b c d e f g"):
    vocab = Vocabulary.from_corpus([vocab_words])
    cfg = TextEncoderConfig(
        vocab_size=len(vocab), max_tokens=16, hidden_dim=24, n_layers=1, n_heads=2
    )
    torch.manual_seed(0)
    return vocab, cfg, TextEncoder(cfg), ProjectionHead(24, 12, "text")


def test_text_encoder_cls_pooling_shape():
    vocab, cfg, enc, proj = _text_setup()
    ids = batch_tokenize(["a b c", "d e"], vocab, cfg.max_tokens)
    feats = encode_texts(ids, enc, proj)
    assert feats.shape == (2, 12)


def test_extra_padding_does_not_change_features():
    vocab, cfg, enc, proj = _text_setup()
    ids = batch_tokenize(["a b c"], vocab, cfg.max_tokens)
    padded = torch.cat([ids, torch.full((1, 5), PAD, dtype=torch.long)], dim=1)
    f_short = encode_texts(ids, enc, proj)
    f_long = encode_texts(padded, enc, proj)
    torch.testing.assert_close(f_short, f_long, rtol=1e-5, atol=1e-6)


def test_text_encoder_rejects_out_of_range_ids():
    vocab, cfg, enc, proj = _text_setup()
    bad = torch.tensor([[3, cfg.vocab_size]])
    with pytest.raises(EncoderError, match="out of range"):
        enc(bad)


def test_batch_tokenize_pads_to_longest():
    vocab, cfg, *_ = _text_setup()
    ids = batch_tokenize(["a", "a b c d"], vocab, cfg.max_tokens)
    assert ids.shape == (2, 5)  # CLS + 4 tokens
    assert ids[0, 2:].eq(PAD).all()


def test_batch_tokenize_truncates_at_max():
    vocab, *_ = _text_setup()
    ids = batch_tokenize(["a b c d e f g"], vocab, max_tokens=4)
    assert ids.shape == (1, 4)


def test_projection_head_is_linear_without_bias():
    proj = ProjectionHead(8, 4, "vision")
    linears = [m for m in proj.modules() if isinstance(m, torch.nn.Linear)]
    assert len(linears) == 1
    assert linears[0].bias is None


def test_encoded_batch_requires_matching_counts():
    from keepfit.encoders import EncodedBatch

    with pytest.raises(EncoderError, match="count"):
        EncodedBatch(
            flat_features=torch.zeros(2, 4),
            spatial_features=torch.zeros(3, 4, 2, 2),
            source="elite",
        )


def test_encoders_deterministic_under_seed():
    torch.manual_seed(3)
    cfg = ImageEncoderConfig(input_size=32, feature_channels=8, base_width=8)
    enc_a = ImageEncoder(cfg)
    torch.manual_seed(3)
    enc_b = ImageEncoder(cfg)
    x = torch.randn(2, 3, 32, 32)
    torch.testing.assert_close(enc_a(x), enc_b(x), rtol=0, atol=0)
