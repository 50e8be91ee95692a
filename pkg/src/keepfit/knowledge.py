"""Expert-knowledge extraction and refinement.

Two multi-head cross-attention paths pull knowledge out of the elite batch:
the semantic path keys on encoder features, the appearance path keys on pooled
quantized codes. Both use elite text features as values, and both feed an MSE
refinement loss that drags categorical text features toward the extracted
knowledge. Extraction is training-only machinery; inference uses encoders
alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn


class KnowledgeError(ValueError):
    """Empty elite batch or a head/dimension mismatch."""


@dataclass
class KnowledgeVector:
    """Extracted expert knowledge, one row per categorical (query) item."""

    values: torch.Tensor  # B_p x d
    flavor: str  # "semantic" | "appearance"


class CrossAttentionExtractor(nn.Module):
    """Multi-head cross attention with separate query/key and value widths.

    Queries and keys live in ``qk_dim`` (shared-space d for the semantic
    flavor, code dimension d' for appearance); values are text features of
    width ``value_dim`` and the concatenated heads are projected back to
    ``value_dim``. Projections are bias-free linear maps per head.
    """

    def __init__(self, qk_dim: int, value_dim: int, heads: int, flavor: str):
        super().__init__()
        if flavor not in ("semantic", "appearance"):
            raise KnowledgeError(f"unknown flavor {flavor!r}")
        if qk_dim % heads != 0 or value_dim % heads != 0:
            raise KnowledgeError(
                f"head count {heads} must divide qk_dim {qk_dim} and value_dim {value_dim}"
            )
        self.flavor = flavor
        self.heads = heads
        self.qk_dim = qk_dim
        self.value_dim = value_dim
        self.w_q = nn.Linear(qk_dim, qk_dim, bias=False)
        self.w_k = nn.Linear(qk_dim, qk_dim, bias=False)
        self.w_v = nn.Linear(value_dim, value_dim, bias=False)
        self.w_o = nn.Linear(value_dim, value_dim, bias=False)
        # Start queries and keys on the same map so attention logits form a
        # positive-semidefinite similarity at initialization: rows attend to
        # the most feature-similar elite items as soon as the encoders carry
        # any structure, instead of through an arbitrary random bilinear form.
        with torch.no_grad():
            self.w_k.weight.copy_(self.w_q.weight)

    def _split(self, x: torch.Tensor, width: int) -> torch.Tensor:
        # B x width -> H x B x width/H
        return x.reshape(x.shape[0], self.heads, width // self.heads).transpose(0, 1)

    def attention_weights(self, queries: torch.Tensor, keys: torch.Tensor) -> torch.Tensor:
        """Per-head softmax attention over elite items: H x B_p x B_m."""
        if keys.shape[0] < 1:
            raise KnowledgeError("elite batch is empty")
        if queries.shape[-1] != self.qk_dim or keys.shape[-1] != self.qk_dim:
            raise KnowledgeError(
                f"query/key dim must be {self.qk_dim}, got "
                f"{queries.shape[-1]} and {keys.shape[-1]}"
            )
        q = self._split(self.w_q(queries), self.qk_dim)
        k = self._split(self.w_k(keys), self.qk_dim)
        scale = 1.0 / math.sqrt(self.qk_dim / self.heads)
        return torch.softmax(torch.einsum("hid,hjd->hij", q, k) * scale, dim=-1)

    def forward(
        self, queries: torch.Tensor, keys: torch.Tensor, values: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Return (extracted knowledge B_p x value_dim, attention H x B_p x B_m)."""
        if values.shape[0] != keys.shape[0]:
            raise KnowledgeError("key and value batches must align")
        attn = self.attention_weights(queries, keys)
        v = self._split(self.w_v(values), self.value_dim)
        per_head = torch.einsum("hij,hjd->hid", attn, v)
        concat = per_head.transpose(0, 1).reshape(queries.shape[0], self.value_dim)
        return self.w_o(concat), attn


def semantic_extract(
    image_feats_categorical: torch.Tensor,
    image_feats_elite: torch.Tensor,
    text_feats_elite: torch.Tensor,
    extractor: CrossAttentionExtractor,
) -> tuple[KnowledgeVector, torch.Tensor]:
    """Categorical image features query elite image keys; elite text is the value."""
    if extractor.flavor != "semantic":
        raise KnowledgeError("extractor flavor must be semantic")
    out, attn = extractor(image_feats_categorical, image_feats_elite, text_feats_elite)
    return KnowledgeVector(values=out, flavor="semantic"), attn


def appearance_extract(
    quantized_categorical: torch.Tensor,
    quantized_elite: torch.Tensor,
    text_feats_elite: torch.Tensor,
    extractor: CrossAttentionExtractor,
) -> tuple[KnowledgeVector, torch.Tensor]:
    """Pooled quantized codes query/key; elite text is the value."""
    if extractor.flavor != "appearance":
        raise KnowledgeError("extractor flavor must be appearance")
    out, attn = extractor(quantized_categorical, quantized_elite, text_feats_elite)
    return KnowledgeVector(values=out, flavor="appearance"), attn


def ek_refinement_loss(knowledge: KnowledgeVector, text_feats: torch.Tensor) -> torch.Tensor:
    """Mean squared error between knowledge and text rows as unit directions.

    Rows are L2-normalized before the elementwise-mean MSE: only relative
    feature geometry matters downstream (cosine similarities), and a raw
    coordinate-space pull at large loss weights is minimized by shrinking
    every feature toward zero, which destroys the contrastive alignment
    instead of refining it. The per-element mean keeps the loss scale
    independent of the embedding width, so the large loss weights this term
    is used with stay comparable to the contrastive terms.
    """
    if knowledge.values.shape != text_feats.shape:
        raise KnowledgeError(
            f"shape mismatch: knowledge {tuple(knowledge.values.shape)} "
            f"vs text {tuple(text_feats.shape)}"
        )
    return F.mse_loss(
        F.normalize(knowledge.values, dim=-1), F.normalize(text_feats, dim=-1)
    )
