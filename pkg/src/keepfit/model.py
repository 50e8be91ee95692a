"""The full trainable model: dual encoders, projectors, temperature, and the
knowledge-extraction heads, with self-describing checkpoint IO.

The quantization codebook is deliberately not part of the model: it is
pretrained offline, loaded separately, and stays frozen.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch
from torch import nn

from . import tokenizer as tok
from .checkpoint import (
    CheckpointError,
    load_payload,
    numpy_to_state_dict,
    save_payload,
    state_dict_to_numpy,
)
from .contrastive import TAU_INIT, clamp_temperature
from .encoders import (
    EncodedBatch,
    ImageEncoder,
    ImageEncoderConfig,
    ProjectionHead,
    TextEncoder,
    TextEncoderConfig,
    batch_tokenize,
    encode_images,
    encode_texts,
)
from .ibq import SpatialProjection
from .knowledge import CrossAttentionExtractor


@dataclass
class ModelConfig:
    image: ImageEncoderConfig = field(default_factory=ImageEncoderConfig)
    text: TextEncoderConfig = field(default_factory=lambda: TextEncoderConfig(vocab_size=8))
    shared_dim: int = 512
    attention_heads: int = 8
    code_dim: int = 64

    def validate(self) -> None:
        self.image.validate()
        self.text.validate()
        if self.shared_dim % self.attention_heads != 0:
            raise ValueError("attention_heads must divide shared_dim")
        if self.code_dim % self.attention_heads != 0:
            raise ValueError("attention_heads must divide code_dim")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        return cls(
            image=ImageEncoderConfig(**raw["image"]),
            text=TextEncoderConfig(**raw["text"]),
            shared_dim=raw["shared_dim"],
            attention_heads=raw["attention_heads"],
            code_dim=raw["code_dim"],
        )


class KnowledgeInjectionModel(nn.Module):
    """Everything optimized during main training, in one module."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        self.config = config
        d, h = config.shared_dim, config.attention_heads
        self.image_encoder = ImageEncoder(config.image)
        self.vision_proj = ProjectionHead(config.image.feature_channels, d, "vision")
        self.text_encoder = TextEncoder(config.text)
        self.text_proj = ProjectionHead(config.text.hidden_dim, d, "text")
        self.raw_tau = nn.Parameter(torch.tensor(float(TAU_INIT)))
        self.semantic_attn = CrossAttentionExtractor(d, d, h, "semantic")
        self.appearance_attn = CrossAttentionExtractor(config.code_dim, d, h, "appearance")
        self.spatial_proj = SpatialProjection(config.image.feature_channels, config.code_dim)

    def temperature(self) -> torch.Tensor:
        return clamp_temperature(self.raw_tau)

    def encode_images(self, images: torch.Tensor, source: str | None = None) -> EncodedBatch:
        return encode_images(images, self.image_encoder, self.vision_proj, source)

    def encode_texts(self, token_ids: torch.Tensor) -> torch.Tensor:
        return encode_texts(token_ids, self.text_encoder, self.text_proj)

    def encode_text_batch(self, texts: list[str], vocab: tok.Vocabulary) -> torch.Tensor:
        ids = batch_tokenize(texts, vocab, self.config.text.max_tokens)
        return self.encode_texts(ids)


def save_model(
    path: str | Path,
    model: KnowledgeInjectionModel,
    vocab: tok.Vocabulary,
    step: int = 0,
    extra: dict | None = None,
) -> None:
    save_payload(
        path,
        {
            "kind": "model",
            "model_config": model.config.to_dict(),
            "vocab": list(vocab.id_to_token),
            "weights": state_dict_to_numpy(model.state_dict()),
            "step": step,
            "extra": extra or {},
        },
    )


def load_model(path: str | Path) -> tuple[KnowledgeInjectionModel, tok.Vocabulary, dict]:
    payload = load_payload(path)
    if payload.get("kind") != "model":
        raise CheckpointError(f"{path} is not a model checkpoint")
    config = ModelConfig.from_dict(payload["model_config"])
    model = KnowledgeInjectionModel(config)
    model.load_state_dict(numpy_to_state_dict(payload["weights"]))
    tokens = payload["vocab"]
    vocab = tok.Vocabulary(tokens[len(tok.SPECIAL_TOKENS):])
    return model, vocab, payload
