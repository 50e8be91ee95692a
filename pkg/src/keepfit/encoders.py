"""Dual encoders and shared-space projectors.

The image encoder yields two views of each image: a projected flat feature
(through the vision projector, for contrastive alignment) and the raw spatial
map bypassing the projector (consumed by the image tokenizer). Text features
are CLS-pooled and projected by the text projector. Neither flat output is
normalized here; cosine normalization belongs to the similarity op.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from . import tokenizer as tok

DOWNSAMPLE_FACTOR = 16  # four stride-2 stages


class EncoderError(ValueError):
    """Configuration or shape mismatch in an encoder call."""


@dataclass
class ImageEncoderConfig:
    backbone: str = "small-conv"  # "small-conv" | "resnet-like"
    input_size: int = 512
    feature_channels: int = 64
    base_width: int = 16

    def validate(self) -> None:
        if self.backbone not in ("small-conv", "resnet-like"):
            raise EncoderError(f"unknown backbone {self.backbone!r}")
        if self.input_size % DOWNSAMPLE_FACTOR != 0:
            raise EncoderError(
                f"input_size {self.input_size} not divisible by {DOWNSAMPLE_FACTOR}"
            )

    @property
    def output_spatial_grid(self) -> tuple[int, int]:
        side = self.input_size // DOWNSAMPLE_FACTOR
        return (side, side)


@dataclass
class TextEncoderConfig:
    vocab_size: int
    max_tokens: int = 256
    hidden_dim: int = 128
    n_layers: int = 2
    n_heads: int = 4

    def validate(self) -> None:
        if self.vocab_size <= len(tok.SPECIAL_TOKENS):
            raise EncoderError(f"vocab_size {self.vocab_size} too small")
        if self.hidden_dim % self.n_heads != 0:
            raise EncoderError("hidden_dim must be divisible by n_heads")


@dataclass
class EncodedBatch:
    """Projected flat features plus (for vision) the pre-projector spatial map."""

    flat_features: torch.Tensor  # B x d
    spatial_features: torch.Tensor | None = None  # B x C x H x W
    source: str | None = None

    def __post_init__(self):
        if self.spatial_features is not None:
            if self.flat_features.shape[0] != self.spatial_features.shape[0]:
                raise EncoderError("flat/spatial batch counts differ")


def _conv_block(c_in: int, c_out: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, kernel_size=3, stride=2, padding=1),
        nn.GroupNorm(num_groups=min(8, c_out), num_channels=c_out),
        nn.ReLU(inplace=True),
    )


class _ResidualBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, stride=2, padding=1)
        self.norm1 = nn.GroupNorm(min(8, c_out), c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, stride=1, padding=1)
        self.norm2 = nn.GroupNorm(min(8, c_out), c_out)
        self.skip = nn.Conv2d(c_in, c_out, 1, stride=2)
        self.act = nn.ReLU(inplace=True)

    def forward(self, x):
        h = self.act(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        return self.act(h + self.skip(x))


class ImageEncoder(nn.Module):
    """Four stride-2 stages mapping B x 3 x S x S to B x C x S/16 x S/16.

    A custom backbone module with the same contract can be passed in place of
    the built-in stages (e.g. a ResNet trunk for larger inputs).
    """

    def __init__(self, config: ImageEncoderConfig, backbone: nn.Module | None = None):
        super().__init__()
        config.validate()
        self.config = config
        if backbone is not None:
            self.backbone = backbone
        else:
            w, c_out = config.base_width, config.feature_channels
            widths = [w, 2 * w, 4 * w, c_out]
            block = _conv_block if config.backbone == "small-conv" else _ResidualBlock
            stages, c_in = [], 3
            for c in widths:
                stages.append(block(c_in, c))
                c_in = c
            self.backbone = nn.Sequential(*stages)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        if images.ndim != 4 or images.shape[1] != 3:
            raise EncoderError(f"expected B x 3 x S x S images, got {tuple(images.shape)}")
        if images.shape[-1] != self.config.input_size:
            raise EncoderError(
                f"expected input_size {self.config.input_size}, got {images.shape[-1]}"
            )
        return self.backbone(images)


class TextEncoder(nn.Module):
    """Token + position embeddings into a small transformer stack."""

    def __init__(self, config: TextEncoderConfig):
        super().__init__()
        config.validate()
        self.config = config
        self.token_embedding = nn.Embedding(config.vocab_size, config.hidden_dim)
        self.position_embedding = nn.Embedding(config.max_tokens, config.hidden_dim)
        layer = nn.TransformerEncoderLayer(
            d_model=config.hidden_dim,
            nhead=config.n_heads,
            dim_feedforward=2 * config.hidden_dim,
            dropout=0.0,
            batch_first=True,
            norm_first=True,
        )
        self.layers = nn.TransformerEncoder(
            layer, num_layers=config.n_layers, enable_nested_tensor=False
        )

    def forward(self, token_ids: torch.Tensor) -> torch.Tensor:
        """B x L ids -> B x L x hidden states; PAD positions are masked out."""
        if token_ids.max() >= self.config.vocab_size or token_ids.min() < 0:
            raise EncoderError(
                f"token id out of range [0, {self.config.vocab_size}): "
                f"min={int(token_ids.min())}, max={int(token_ids.max())}"
            )
        b, length = token_ids.shape
        positions = torch.arange(length, device=token_ids.device).expand(b, length)
        h = self.token_embedding(token_ids) + self.position_embedding(positions)
        pad_mask = token_ids == tok.PAD
        return self.layers(h, src_key_padding_mask=pad_mask)


class ProjectionHead(nn.Module):
    """Single linear map from an encoder's native dim into the shared space."""

    def __init__(self, in_dim: int, shared_dim: int, flavor: str):
        super().__init__()
        if flavor not in ("vision", "text"):
            raise EncoderError(f"unknown projector flavor {flavor!r}")
        self.flavor = flavor
        self.linear = nn.Linear(in_dim, shared_dim, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.linear(x)


def encode_images(
    images: torch.Tensor,
    encoder: ImageEncoder,
    projector: ProjectionHead,
    source: str | None = None,
) -> EncodedBatch:
    """Run the vision path: spatial map (pre-projector) + projected flat feature."""
    spatial = encoder(images)
    pooled = spatial.mean(dim=(2, 3))
    flat = projector(pooled)
    if not torch.isfinite(flat).all():
        raise EncoderError("image encoder produced non-finite features")
    return EncodedBatch(flat_features=flat, spatial_features=spatial, source=source)


def encode_texts(
    token_ids: torch.Tensor,
    encoder: TextEncoder,
    projector: ProjectionHead,
) -> torch.Tensor:
    """Run the text path: CLS-pooled hidden state through the text projector."""
    hidden = encoder(token_ids)
    return projector(hidden[:, 0])


def batch_tokenize(
    texts: list[str], vocab: tok.Vocabulary, max_tokens: int, device=None
) -> torch.Tensor:
    """Tokenize, truncate to max_tokens, and pad to the longest row in the batch."""
    seqs = [tok.tokenize(t, vocab)[:max_tokens] for t in texts]
    width = max(len(s) for s in seqs)
    rows = [tok.pad_or_truncate(s, width) for s in seqs]
    return torch.tensor(rows, dtype=torch.long, device=device)
