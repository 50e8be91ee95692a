"""Cross-modal contrastive alignment: similarities, matching targets, ITC loss.

The loss is a symmetric cross-entropy between temperature-scaled softmax
similarity distributions and row-stochastic matching targets. Paired (elite)
batches use identity targets; category-labeled batches use block targets where
every same-category item is an equally weighted positive.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

LOG_EPS = 1e-12
TAU_MIN, TAU_MAX = 1e-3, 1.0
TAU_INIT = 0.07


class ContrastiveError(ValueError):
    """Invalid inputs to a contrastive op."""


@dataclass
class SimilarityMatrix:
    """Pairwise cosine similarities (rows: images, cols: texts) plus temperature."""

    values: torch.Tensor  # B x B in [-1, 1]
    temperature: torch.Tensor | float


@dataclass
class MatchingTargets:
    matrix: torch.Tensor  # B x B row-stochastic
    kind: str  # "identity" | "category-symmetric"


def similarity(
    image_feats: torch.Tensor,
    text_feats: torch.Tensor,
    temperature: torch.Tensor | float = TAU_INIT,
) -> SimilarityMatrix:
    """Cosine similarity matrix; L2 normalization is applied internally."""
    if image_feats.shape[-1] != text_feats.shape[-1]:
        raise ContrastiveError(
            f"feature dims differ: {image_feats.shape[-1]} vs {text_feats.shape[-1]}"
        )
    for name, feats in (("image", image_feats), ("text", text_feats)):
        norms = feats.norm(dim=-1)
        if bool((norms == 0).any()):
            raise ContrastiveError(f"zero-norm {name} feature row")
    img = torch.nn.functional.normalize(image_feats, dim=-1)
    txt = torch.nn.functional.normalize(text_feats, dim=-1)
    return SimilarityMatrix(values=img @ txt.T, temperature=temperature)


def softmax_rows(sim: SimilarityMatrix, direction: str) -> torch.Tensor:
    """Row-stochastic similarity distributions; t2v works on the transpose."""
    if direction == "v2t":
        logits = sim.values
    elif direction == "t2v":
        logits = sim.values.T
    else:
        raise ContrastiveError(f"direction must be v2t or t2v, got {direction!r}")
    tau = sim.temperature
    if isinstance(tau, torch.Tensor):
        if bool((tau <= 0).any()):
            raise ContrastiveError("temperature must be positive")
    elif tau <= 0:
        raise ContrastiveError("temperature must be positive")
    return torch.softmax(logits / tau, dim=-1)


def clamp_temperature(raw_tau: torch.Tensor) -> torch.Tensor:
    """Learnable temperature kept in [TAU_MIN, TAU_MAX]."""
    return raw_tau.clamp(TAU_MIN, TAU_MAX)


def build_targets(
    source: str,
    batch_size: int,
    category_ids: torch.Tensor | None = None,
    device=None,
    dtype=torch.float32,
) -> MatchingTargets:
    """Identity targets for elite batches; category-block targets for categorical.

    Categorical rows are normalized over positives so every row is a proper
    distribution; the matrix stays symmetric because per-category row counts
    are equal for members of the same category.
    """
    if source == "elite":
        return MatchingTargets(
            matrix=torch.eye(batch_size, device=device, dtype=dtype), kind="identity"
        )
    if source != "categorical":
        raise ContrastiveError(f"unknown source {source!r}")
    if category_ids is None:
        raise ContrastiveError("categorical batch requires category ids")
    if len(category_ids) != batch_size:
        raise ContrastiveError("category_ids length does not match batch size")
    same = (category_ids.unsqueeze(0) == category_ids.unsqueeze(1)).to(dtype)
    matrix = same / same.sum(dim=1, keepdim=True)
    if device is not None:
        matrix = matrix.to(device)
    return MatchingTargets(matrix=matrix, kind="category-symmetric")


def cross_entropy_rows(targets: torch.Tensor, predicted: torch.Tensor) -> torch.Tensor:
    """Mean over rows of -sum_k g_k log u_k with an epsilon-floored log."""
    return -(targets * predicted.clamp_min(LOG_EPS).log()).sum(dim=-1).mean()


def itc_loss(
    u_v2t: torch.Tensor, u_t2v: torch.Tensor, targets: MatchingTargets
) -> torch.Tensor:
    """Symmetric image-text contrastive loss over both softmax directions."""
    g = targets.matrix
    if u_v2t.shape != g.shape or u_t2v.shape != g.shape:
        raise ContrastiveError(
            f"shape mismatch: targets {tuple(g.shape)}, "
            f"v2t {tuple(u_v2t.shape)}, t2v {tuple(u_t2v.shape)}"
        )
    return 0.5 * (cross_entropy_rows(g, u_v2t) + cross_entropy_rows(g, u_t2v))


def itc_loss_from_features(
    image_feats: torch.Tensor,
    text_feats: torch.Tensor,
    temperature: torch.Tensor | float,
    targets: MatchingTargets,
) -> torch.Tensor:
    """Convenience composition: similarity -> both softmaxes -> ITC loss."""
    sim = similarity(image_feats, text_feats, temperature)
    return itc_loss(softmax_rows(sim, "v2t"), softmax_rows(sim, "t2v"), targets)
