"""Image tokenization by index backpropagation quantization.

Codes are selected by dot product against a fixed codebook: logits over all K
codes, a softmax distribution, and a hard one-hot at the argmax. The forward
value is exactly the hard lookup while gradients follow the soft distribution,
so every codebook embedding receives gradient through the logits during
codebook pretraining. During main training the codebook is frozen.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .checkpoint import load_payload, save_payload, tensor_checksum


class QuantizerError(ValueError):
    """Codebook/feature dimension mismatch or training divergence."""


@dataclass
class Codebook:
    """Fixed K x D code embeddings plus a training fingerprint."""

    embeddings: torch.Tensor
    fingerprint: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return self.embeddings.shape[0]

    @property
    def d(self) -> int:
        return self.embeddings.shape[1]

    def checksum(self) -> str:
        return tensor_checksum([self.embeddings])

    def validate_distinct(self) -> None:
        """No duplicate rows: pairwise distance strictly positive."""
        with torch.no_grad():
            dists = torch.cdist(self.embeddings, self.embeddings)
            dists.fill_diagonal_(float("inf"))
            if bool((dists == 0).any()):
                raise QuantizerError("codebook contains duplicate rows")

    def save(self, path: str | Path) -> None:
        save_payload(
            path,
            {
                "kind": "codebook",
                "k": self.k,
                "d": self.d,
                "embeddings": self.embeddings.detach().cpu().numpy(),
                "fingerprint": self.fingerprint,
            },
        )

    @classmethod
    def load(cls, path: str | Path) -> "Codebook":
        payload = load_payload(path)
        if payload.get("kind") != "codebook":
            raise QuantizerError(f"{path} is not a codebook checkpoint")
        return cls(
            embeddings=torch.from_numpy(payload["embeddings"]),
            fingerprint=payload.get("fingerprint", {}),
        )


@dataclass
class QuantizedBatch:
    codes: torch.Tensor  # B x P x D, forward value == codebook rows
    hard_indices: torch.Tensor  # B x P ints in [0, K)
    soft_distribution: torch.Tensor  # B x P x K row-stochastic


class SpatialProjection(nn.Module):
    """1x1 convolution aligning encoder channels with the code dimension."""

    def __init__(self, in_channels: int, code_dim: int):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, code_dim, kernel_size=1)

    def forward(self, spatial: torch.Tensor) -> torch.Tensor:
        """B x C x H x W feature map -> B x P x D with P = H*W."""
        if spatial.ndim != 4:
            raise QuantizerError(f"expected B x C x H x W, got {tuple(spatial.shape)}")
        if spatial.shape[1] != self.conv.in_channels:
            raise QuantizerError(
                f"channel mismatch: map has {spatial.shape[1]}, "
                f"projection expects {self.conv.in_channels}"
            )
        projected = self.conv(spatial)
        b, d, h, w = projected.shape
        return projected.permute(0, 2, 3, 1).reshape(b, h * w, d)


def code_logits(projected: torch.Tensor, codebook: Codebook) -> torch.Tensor:
    """Dot products of each position's feature against all K codes."""
    if projected.shape[-1] != codebook.d:
        raise QuantizerError(
            f"feature dim {projected.shape[-1]} != code dim {codebook.d}"
        )
    return projected @ codebook.embeddings.T


def quantize_logits(logits: torch.Tensor, codebook: Codebook) -> QuantizedBatch:
    """Quantize from precomputed logits (B x P x K).

    Forward value of codes is the exact argmax lookup (ties to the lowest
    index); the gradient wrt logits equals the softmax path's gradient.
    """
    soft = torch.softmax(logits, dim=-1)
    hard_idx = torch.argmax(soft, dim=-1)
    # Exact-lookup forward with a zero-valued differentiable correction: the
    # straight-through index is hard + (soft - sg[soft]).
    soft_residual = soft - soft.detach()
    codes = codebook.embeddings[hard_idx] + soft_residual @ codebook.embeddings
    return QuantizedBatch(codes=codes, hard_indices=hard_idx, soft_distribution=soft)


def quantize(projected: torch.Tensor, codebook: Codebook) -> QuantizedBatch:
    """Tokenize B x P x D features: logits, softmax, straight-through lookup."""
    return quantize_logits(code_logits(projected, codebook), codebook)


def pool_quantized(batch: QuantizedBatch) -> torch.Tensor:
    """Mean over positions -> one D-vector per image; keeps straight-through grads."""
    if batch.codes.shape[1] < 1:
        raise QuantizerError("quantized batch has no positions")
    return batch.codes.mean(dim=1)


@dataclass
class CodebookPretrainConfig:
    k: int = 256
    d: int = 64
    image_size: int = 32
    channels: int = 32
    steps: int = 500
    batch_size: int = 16
    lr: float = 1e-3
    commitment_beta: float = 0.25
    entropy_weight: float = 0.5
    seed: int = 0


class _AutoencoderForCodebook(nn.Module):
    """Small encoder-quantize-decoder pipeline used only for codebook pretraining."""

    def __init__(self, cfg: CodebookPretrainConfig):
        super().__init__()
        c = cfg.channels
        self.encoder = nn.Sequential(
            nn.Conv2d(3, c, 3, stride=2, padding=1), nn.GroupNorm(4, c), nn.ReLU(inplace=True),
            nn.Conv2d(c, c, 3, stride=2, padding=1), nn.GroupNorm(4, c), nn.ReLU(inplace=True),
        )
        self.project = SpatialProjection(c, cfg.d)
        self.decoder = nn.Sequential(
            nn.ConvTranspose2d(cfg.d, c, 4, stride=2, padding=1), nn.ReLU(inplace=True),
            nn.ConvTranspose2d(c, 3, 4, stride=2, padding=1),
        )

    def forward(self, images: torch.Tensor, codebook_weight: torch.Tensor):
        grid = images.shape[-1] // 4
        z = self.project(self.encoder(images))
        qb = quantize(z, Codebook(embeddings=codebook_weight))
        codes_map = qb.codes.permute(0, 2, 1).reshape(
            images.shape[0], -1, grid, grid
        )
        recon = self.decoder(codes_map)
        return recon, z, qb


def pretrain_codebook(
    images: np.ndarray | torch.Tensor,
    cfg: CodebookPretrainConfig,
) -> tuple[Codebook, dict]:
    """Train the codebook offline on an image corpus; returns it frozen.

    Loss is reconstruction MSE plus a commitment term pulling encoder outputs
    toward their selected codes. The report carries the loss curve, code
    utilization on a probe pass, and usage perplexity.
    """
    images = torch.as_tensor(np.asarray(images), dtype=torch.float32)
    if images.ndim != 4:
        raise QuantizerError(f"expected N x H x W x 3 images, got {tuple(images.shape)}")
    if images.shape[0] == 0:
        raise QuantizerError("image corpus is empty")
    images = images.permute(0, 3, 1, 2).contiguous()

    torch.manual_seed(cfg.seed)
    model = _AutoencoderForCodebook(cfg)
    gen = torch.Generator().manual_seed(cfg.seed)

    # Seed the codebook from actual encoder outputs: zero-centered random
    # codes make the assignment softmax uniform, which starves every code of
    # a distinct gradient and collapses usage onto a single index.
    with torch.no_grad():
        probe_idx = torch.randperm(len(images), generator=gen)[: min(len(images), 64)]
        z0 = model.project(model.encoder(images[probe_idx])).reshape(-1, cfg.d)
        pick = torch.randint(z0.shape[0], (cfg.k,), generator=gen)
        init = z0[pick] + 1e-3 * torch.randn(cfg.k, cfg.d, generator=gen)
    codebook_weight = nn.Parameter(init)
    opt = torch.optim.AdamW(list(model.parameters()) + [codebook_weight], lr=cfg.lr)

    losses, recon_losses = [], []
    for step in range(cfg.steps):
        idx = torch.randint(len(images), (min(cfg.batch_size, len(images)),), generator=gen)
        batch = images[idx]
        recon, z, qb = model(batch, codebook_weight)
        recon_loss = nn.functional.mse_loss(recon, batch)
        commitment = nn.functional.mse_loss(z, qb.codes.detach())
        # Sharpen each patch's assignment while spreading usage across the
        # batch; without this the soft path drifts all codes in lockstep.
        probs = qb.soft_distribution.reshape(-1, cfg.k)
        per_patch_entropy = -(probs * probs.clamp_min(1e-12).log()).sum(-1).mean()
        mean_probs = probs.mean(0)
        usage_entropy = -(mean_probs * mean_probs.clamp_min(1e-12).log()).sum()
        entropy_term = per_patch_entropy - usage_entropy
        loss = recon_loss + cfg.commitment_beta * commitment + cfg.entropy_weight * entropy_term
        if not torch.isfinite(loss):
            raise QuantizerError(
                f"codebook pretraining diverged at step {step}: "
                f"recon={float(recon_loss)}, commitment={float(commitment)}, "
                f"entropy={float(entropy_term)}"
            )
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(float(loss.detach()))
        recon_losses.append(float(recon_loss.detach()))

    codebook = Codebook(
        embeddings=codebook_weight.detach().clone(),
        fingerprint={"seed": cfg.seed, "steps": cfg.steps, "k": cfg.k, "d": cfg.d,
                     "n_images": int(images.shape[0])},
    )
    codebook.validate_distinct()

    with torch.no_grad():
        counts = torch.zeros(cfg.k)
        for start in range(0, len(images), cfg.batch_size):
            batch = images[start : start + cfg.batch_size]
            _, _, qb = model(batch, codebook_weight)
            counts += torch.bincount(qb.hard_indices.reshape(-1), minlength=cfg.k).float()
    usage = counts / counts.sum()
    nonzero = usage[usage > 0]
    perplexity = float(torch.exp(-(nonzero * nonzero.log()).sum()))
    report = {
        "loss_curve": losses,
        "recon_curve": recon_losses,
        "utilization": float((counts > 0).float().mean()),
        "perplexity": perplexity,
    }
    return codebook, report


def utilization_report_text(report: dict) -> str:
    """Structured-text summary of a codebook pretraining report."""
    lines = [
        f"utilization\t{report['utilization']:.6f}",
        f"perplexity\t{report['perplexity']:.6f}",
        f"first_loss\t{report['loss_curve'][0]:.6f}",
        f"last_loss\t{report['loss_curve'][-1]:.6f}",
    ]
    return "\n".join(lines) + "\n"
