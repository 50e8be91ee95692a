"""Training loop composing the overall objective.

Each optimization step consumes one batch from each source: identity-target
contrastive loss on the elite batch, category-target contrastive loss on the
categorical batch, and the two knowledge-refinement losses extracted from the
elite batch into the categorical text features. The codebook stays frozen;
everything else updates under AdamW with a cosine schedule warmed up over the
first epoch.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .contrastive import build_targets, itc_loss_from_features
from .data import ClassSpec, ManifestRecord, load_images
from .ibq import Codebook, pool_quantized, quantize
from .knowledge import appearance_extract, ek_refinement_loss, semantic_extract
from .model import KnowledgeInjectionModel, ModelConfig, save_model
from .synth import PromptTemplate, build_prompt_templates, expand_category_to_text
from .tokenizer import Vocabulary
from .encoders import batch_tokenize

TELEMETRY_NAME = "telemetry.jsonl"
CONFIG_NAME = "config.json"


class TrainerError(RuntimeError):
    """Invalid training setup or a non-finite loss."""


@dataclass
class TrainConfig:
    lambda1: float = 100.0
    lambda2: float = 1e4
    lr: float = 1e-4
    weight_decay: float = 1e-5
    batch_size: int = 32
    epochs: int = 10
    warmup_epochs: int = 1
    seed: int = 0

    def validate(self) -> None:
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise TrainerError("lambda weights must be non-negative")
        if self.lr <= 0:
            raise TrainerError("lr must be positive")
        if self.epochs < 1:
            raise TrainerError("epochs must be >= 1")
        if self.batch_size < 1:
            raise TrainerError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Batch:
    images: torch.Tensor  # B x 3 x S x S, normalized
    token_ids: torch.Tensor  # B x L
    source: str
    category_ids: torch.Tensor | None = None


@dataclass
class SourceData:
    """All records of one source with images preloaded."""

    images: torch.Tensor  # N x 3 x S x S
    captions: list[str | None]
    category_ids: list[int | None]
    source: str

    def __len__(self) -> int:
        return self.images.shape[0]


@dataclass
class TrainState:
    model: KnowledgeInjectionModel
    codebook: Codebook | None
    optimizer: torch.optim.Optimizer
    scheduler: torch.optim.lr_scheduler.LambdaLR
    step: int = 0
    telemetry: list[dict] = field(default_factory=list)


def normalize_images(images: np.ndarray | torch.Tensor) -> torch.Tensor:
    """N x H x W x 3 floats in [0,1] -> N x 3 x H x W centered at zero."""
    t = torch.as_tensor(np.asarray(images), dtype=torch.float32)
    return (t.permute(0, 3, 1, 2) - 0.5) / 0.5


def prepare_source(
    records: list[ManifestRecord], root, source: str
) -> SourceData:
    subset = [r for r in records if r.source == source]
    if not subset:
        return SourceData(
            images=torch.zeros(0, 3, 1, 1), captions=[], category_ids=[], source=source
        )
    images = normalize_images(load_images(subset, root))
    return SourceData(
        images=images,
        captions=[r.caption for r in subset],
        category_ids=[r.category_id for r in subset],
        source=source,
    )


def build_vocabulary(captions: list[str], templates: PromptTemplate) -> Vocabulary:
    lines = list(captions)
    for class_id in sorted(templates.variants):
        lines.extend(templates.variants[class_id])
    return Vocabulary.from_corpus(lines)


def lr_factor(step: int, warmup_steps: int, total_steps: int) -> float:
    """Linear warmup to the peak by the end of warmup, cosine decay after."""
    if warmup_steps > 0 and step < warmup_steps:
        return (step + 1) / warmup_steps
    if total_steps <= warmup_steps:
        return 1.0
    t = min(1.0, (step - warmup_steps) / max(1, total_steps - warmup_steps))
    return 0.5 * (1.0 + math.cos(math.pi * t))


def make_optimizer(model: KnowledgeInjectionModel, config: TrainConfig):
    """AdamW with the temperature excluded from weight decay."""
    decay, no_decay = [], []
    for name, param in model.named_parameters():
        (no_decay if name == "raw_tau" else decay).append(param)
    return torch.optim.AdamW(
        [
            {"params": decay, "weight_decay": config.weight_decay},
            {"params": no_decay, "weight_decay": 0.0},
        ],
        lr=config.lr,
    )


def compute_losses(
    model: KnowledgeInjectionModel,
    codebook: Codebook | None,
    elite: Batch,
    categorical: Batch,
    config: TrainConfig,
) -> dict[str, torch.Tensor]:
    """All four loss components and the weighted total from one paired draw."""
    if elite.images.shape[0] == 0 or categorical.images.shape[0] == 0:
        raise TrainerError("both an elite and a categorical batch are required")
    if categorical.category_ids is None:
        raise TrainerError("categorical batch is missing category ids")

    enc_m = model.encode_images(elite.images, "elite")
    enc_p = model.encode_images(categorical.images, "categorical")
    t_m = model.encode_texts(elite.token_ids)
    t_p = model.encode_texts(categorical.token_ids)
    tau = model.temperature()

    targets_m = build_targets("elite", elite.images.shape[0], dtype=t_m.dtype)
    targets_p = build_targets(
        "categorical",
        categorical.images.shape[0],
        category_ids=categorical.category_ids,
        dtype=t_p.dtype,
    )
    losses = {
        "itc_m": itc_loss_from_features(enc_m.flat_features, t_m, tau, targets_m),
        "itc_p": itc_loss_from_features(enc_p.flat_features, t_p, tau, targets_p),
    }

    total = losses["itc_p"] + losses["itc_m"]
    if config.lambda1 > 0:
        ek_s, _ = semantic_extract(
            enc_p.flat_features, enc_m.flat_features, t_m, model.semantic_attn
        )
        losses["ek_s"] = ek_refinement_loss(ek_s, t_p)
        total = total + config.lambda1 * losses["ek_s"]
    else:
        losses["ek_s"] = torch.zeros((), dtype=total.dtype)
    if config.lambda2 > 0:
        if codebook is None:
            raise TrainerError("lambda2 > 0 requires a pretrained codebook")
        q_p = pool_quantized(quantize(model.spatial_proj(enc_p.spatial_features), codebook))
        q_m = pool_quantized(quantize(model.spatial_proj(enc_m.spatial_features), codebook))
        ek_a, _ = appearance_extract(q_p, q_m, t_m, model.appearance_attn)
        losses["ek_a"] = ek_refinement_loss(ek_a, t_p)
        total = total + config.lambda2 * losses["ek_a"]
    else:
        losses["ek_a"] = torch.zeros((), dtype=total.dtype)
    losses["total"] = total
    return losses


def training_step(
    state: TrainState, elite: Batch, categorical: Batch, config: TrainConfig
) -> dict[str, float]:
    """One optimizer update; returns the loss breakdown as floats."""
    losses = compute_losses(state.model, state.codebook, elite, categorical, config)
    breakdown = {k: float(v.detach()) for k, v in losses.items()}
    if not math.isfinite(breakdown["total"]):
        raise TrainerError(f"non-finite loss at step {state.step}: {breakdown}")
    state.optimizer.zero_grad()
    losses["total"].backward()
    state.optimizer.step()
    state.scheduler.step()
    state.step += 1
    return breakdown


def _iter_batches(n: int, batch_size: int, rng: np.random.Generator, cycle_to: int):
    """Yield index arrays covering a shuffled range, recycling to cycle_to draws."""
    order = rng.permutation(n)
    chunks = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    out, i = [], 0
    while len(out) < cycle_to:
        if i >= len(chunks):
            order = rng.permutation(n)
            chunks = [order[j : j + batch_size] for j in range(0, n, batch_size)]
            i = 0
        out.append(chunks[i])
        i += 1
    return out


def _categorical_texts(
    category_ids: list[int | None], templates: PromptTemplate, rng: np.random.Generator
) -> list[str]:
    return [expand_category_to_text(int(c), templates, rng) for c in category_ids]


def train(
    records: list[ManifestRecord],
    classes: list[ClassSpec],
    corpus_root,
    model_config: ModelConfig,
    config: TrainConfig,
    out_dir: str | Path,
    codebook: Codebook | None = None,
    text_init_state: dict | None = None,
    vocab: Vocabulary | None = None,
    template_variants: int = 3,
) -> Path:
    """Full training run; writes config, checkpoints, and telemetry to out_dir."""
    config.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    elite_data = prepare_source(records, corpus_root, "elite")
    cat_data = prepare_source(records, corpus_root, "categorical")
    if len(cat_data) == 0:
        raise TrainerError("categorical corpus is empty")
    if len(elite_data) == 0 and (config.lambda1 > 0 or config.lambda2 > 0):
        raise TrainerError("elite corpus is empty but knowledge injection is requested")
    if config.lambda2 > 0 and codebook is None:
        raise TrainerError("lambda2 > 0 requires a pretrained codebook")

    templates = build_prompt_templates(classes, template_variants)
    if vocab is None:
        vocab = build_vocabulary(
            [c for c in elite_data.captions if c is not None], templates
        )
    model_config.text.vocab_size = len(vocab)
    model_config.validate()

    torch.manual_seed(config.seed)
    model = KnowledgeInjectionModel(model_config)
    if text_init_state is not None:
        model.text_encoder.load_state_dict(text_init_state)

    steps_per_epoch = math.ceil(len(cat_data) / config.batch_size)
    total_steps = steps_per_epoch * config.epochs
    warmup_steps = steps_per_epoch * config.warmup_epochs
    optimizer = make_optimizer(model, config)
    scheduler = torch.optim.lr_scheduler.LambdaLR(
        optimizer, lambda s: lr_factor(s, warmup_steps, total_steps)
    )
    state = TrainState(model=model, codebook=codebook, optimizer=optimizer, scheduler=scheduler)

    with open(out_dir / CONFIG_NAME, "w", encoding="utf-8") as fh:
        json.dump(
            {"model": model_config.to_dict(), "train": config.to_dict(),
             "template_variants": template_variants},
            fh, indent=2, sort_keys=True,
        )
        fh.write("\n")
    codebook_checksum = None
    if codebook is not None:
        codebook_checksum = codebook.checksum()
        codebook.save(out_dir / "codebook.ckpt")

    elite_tokens = None
    if len(elite_data):
        elite_tokens = batch_tokenize(
            [c or "" for c in elite_data.captions], vocab, model_config.text.max_tokens
        )
    cat_ids_tensor = torch.tensor(
        [int(c) for c in cat_data.category_ids], dtype=torch.long
    )

    telemetry_path = out_dir / TELEMETRY_NAME
    best_epoch_loss = float("inf")
    with open(telemetry_path, "w", encoding="utf-8") as tele:
        for epoch in range(config.epochs):
            rng = np.random.default_rng((config.seed, epoch))
            cat_texts = _categorical_texts(cat_data.category_ids, templates, rng)
            cat_tokens = batch_tokenize(cat_texts, vocab, model_config.text.max_tokens)

            cat_batches = _iter_batches(len(cat_data), config.batch_size, rng, steps_per_epoch)
            elite_bs = min(config.batch_size, max(1, len(elite_data)))
            elite_batches = (
                _iter_batches(len(elite_data), elite_bs, rng, steps_per_epoch)
                if len(elite_data)
                else [None] * steps_per_epoch
            )

            epoch_total = 0.0
            for cat_idx, elite_idx in zip(cat_batches, elite_batches):
                cat_batch = Batch(
                    images=cat_data.images[cat_idx],
                    token_ids=cat_tokens[cat_idx],
                    category_ids=cat_ids_tensor[cat_idx],
                    source="categorical",
                )
                if elite_idx is not None:
                    elite_batch = Batch(
                        images=elite_data.images[elite_idx],
                        token_ids=elite_tokens[elite_idx],
                        source="elite",
                    )
                else:
                    elite_batch = cat_batch  # unreachable when injection is on
                lr_now = state.scheduler.get_last_lr()[0]
                breakdown = training_step(state, elite_batch, cat_batch, config)
                epoch_total += breakdown["total"]
                record = {
                    "step": state.step,
                    "epoch": epoch,
                    "lr": lr_now,
                    **breakdown,
                    "wall_time": time.time(),
                }
                tele.write(json.dumps(record, sort_keys=True))
                tele.write("\n")

            epoch_mean = epoch_total / steps_per_epoch
            if epoch_mean < best_epoch_loss:
                best_epoch_loss = epoch_mean
                save_model(out_dir / "weights-best.ckpt", model, vocab, step=state.step,
                           extra={"epoch": epoch, "epoch_mean_loss": epoch_mean})

    if codebook is not None and codebook.checksum() != codebook_checksum:
        raise TrainerError("frozen codebook changed during training")
    save_model(out_dir / f"weights-{state.step}.ckpt", model, vocab, step=state.step,
               extra={"final": True})
    return out_dir
