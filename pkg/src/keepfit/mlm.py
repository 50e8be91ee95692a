"""Masked-language-model pretraining for the text encoder.

Standard recipe: select a fraction of non-special positions, replace 80% with
MASK, 10% with a random token, leave 10% unchanged; loss is cross-entropy over
the selected positions only. The trained encoder parameters initialize the
main model's text encoder (the text projector is excluded and starts fresh).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from . import tokenizer as tok
from .encoders import TextEncoder, TextEncoderConfig


class MlmError(ValueError):
    """Invalid MLM corpus or masking policy."""


@dataclass
class MaskingPolicy:
    mask_fraction: float = 0.15
    mask_prob: float = 0.8
    random_prob: float = 0.1

    def validate(self) -> None:
        if not 0.0 < self.mask_fraction < 1.0:
            raise MlmError(f"mask_fraction must be in (0, 1), got {self.mask_fraction}")
        if self.mask_prob + self.random_prob > 1.0:
            raise MlmError("mask_prob + random_prob must be <= 1")


def apply_masking(
    token_ids: torch.Tensor,
    policy: MaskingPolicy,
    vocab_size: int,
    generator: torch.Generator,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Return (corrupted ids, selection mask). CLS and PAD are never selected."""
    policy.validate()
    special = (token_ids == tok.PAD) | (token_ids == tok.CLS)
    roll = torch.rand(token_ids.shape, generator=generator)
    selected = (roll < policy.mask_fraction) & ~special

    corrupted = token_ids.clone()
    action = torch.rand(token_ids.shape, generator=generator)
    use_mask = selected & (action < policy.mask_prob)
    use_random = selected & (action >= policy.mask_prob) & (
        action < policy.mask_prob + policy.random_prob
    )
    corrupted[use_mask] = tok.MASK
    n_random = int(use_random.sum())
    if n_random:
        n_special = len(tok.SPECIAL_TOKENS)
        corrupted[use_random] = torch.randint(
            n_special, vocab_size, (n_random,), generator=generator
        )
    return corrupted, selected


def masked_lm_loss(
    encoder: TextEncoder,
    head: nn.Linear,
    corrupted: torch.Tensor,
    original: torch.Tensor,
    selected: torch.Tensor,
) -> torch.Tensor:
    """Cross-entropy over selected positions; zero tensor if nothing selected."""
    hidden = encoder(corrupted)
    logits = head(hidden)
    if not selected.any():
        return logits.sum() * 0.0
    return nn.functional.cross_entropy(logits[selected], original[selected])


@dataclass
class MlmResult:
    encoder_state: dict
    config: TextEncoderConfig
    losses: list[float]
    step: int


def mlm_pretrain(
    utterances: list[str],
    vocab: tok.Vocabulary,
    config: TextEncoderConfig,
    policy: MaskingPolicy | None = None,
    steps: int = 200,
    batch_size: int = 16,
    lr: float = 1e-3,
    seed: int = 0,
    init_state: dict | None = None,
    start_step: int = 0,
) -> MlmResult:
    """Train a text encoder with MLM on a corpus of utterances.

    Resuming: pass the previous result's encoder_state and step via
    init_state/start_step; the step counter continues.
    """
    if not utterances:
        raise MlmError("MLM corpus is empty")
    policy = policy or MaskingPolicy()
    policy.validate()
    config.validate()

    torch.manual_seed(seed)
    encoder = TextEncoder(config)
    head = nn.Linear(config.hidden_dim, config.vocab_size)
    if init_state is not None:
        encoder.load_state_dict(init_state)
    gen = torch.Generator().manual_seed(seed + start_step)
    opt = torch.optim.AdamW(list(encoder.parameters()) + list(head.parameters()), lr=lr)

    encoded = [tok.tokenize(u, vocab)[: config.max_tokens] for u in utterances]
    width = max(len(e) for e in encoded)
    corpus = torch.tensor([tok.pad_or_truncate(e, width) for e in encoded], dtype=torch.long)

    losses = []
    for step in range(steps):
        idx = torch.randint(len(corpus), (min(batch_size, len(corpus)),), generator=gen)
        batch = corpus[idx]
        corrupted, selected = apply_masking(batch, policy, config.vocab_size, gen)
        loss = masked_lm_loss(encoder, head, corrupted, batch, selected)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(float(loss.detach()))
    return MlmResult(
        encoder_state={k: v.detach().clone() for k, v in encoder.state_dict().items()},
        config=config,
        losses=losses,
        step=start_step + steps,
    )
