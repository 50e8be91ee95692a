"""Command-line entry point.

Subcommands cover the full workflow in order: ``gen-data`` writes a synthetic
corpus, ``pretrain-text`` and ``train-codebook`` produce the two frozen
initializations, ``train`` runs the main objective, and ``eval`` scores a
trained run. Exit codes: 0 success, 1 runtime failure, 2 bad usage or config.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import asdict
from pathlib import Path

from . import config as cfgmod
from .checkpoint import (
    CheckpointError,
    load_payload,
    numpy_to_state_dict,
    save_payload,
    state_dict_to_numpy,
)
from .data import (
    TEXT_CORPUS_NAME,
    ManifestError,
    default_runs_dir,
    load_corpus,
    load_images,
)
from .encoders import EncoderError, TextEncoderConfig
from .evalharness import EvalError, run_eval
from .ibq import Codebook, QuantizerError, pretrain_codebook, utilization_report_text
from .metrics import MetricsError
from .mlm import MlmError, mlm_pretrain
from .model import load_model
from .synth import SynthesisError, build_prompt_templates, write_corpus
from .tokenizer import SPECIAL_TOKENS, Vocabulary
from .trainer import TrainerError, build_vocabulary, train

_RUNTIME_ERRORS = (
    ManifestError,
    SynthesisError,
    EncoderError,
    MlmError,
    QuantizerError,
    TrainerError,
    EvalError,
    MetricsError,
    CheckpointError,
    FileNotFoundError,
)


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="YAML config file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override one config value (repeatable); see `keepfit config` for keys",
    )


def _load_cfg(args) -> dict:
    return cfgmod.load_config(args.config, args.overrides)


def cmd_config(args) -> int:
    sys.stdout.write(cfgmod.dump_default_yaml())
    return 0


def cmd_gen_data(args) -> int:
    cfg = _load_cfg(args)
    spec = cfgmod.make_corpus_spec(cfg)
    out = write_corpus(spec, args.out)
    print(
        f"wrote corpus to {out}: {spec.n_elite} elite + {spec.n_categorical} "
        f"categorical images over {spec.n_classes} classes"
    )
    return 0


def cmd_pretrain_text(args) -> int:
    cfg = _load_cfg(args)
    tp = cfg["text_pretrain"]
    corpus_path = Path(args.data) / TEXT_CORPUS_NAME
    with open(corpus_path, "r", encoding="utf-8") as fh:
        lines = [line.strip() for line in fh if line.strip()]

    init_state, start_step = None, 0
    if args.resume:
        payload = load_payload(args.resume)
        if payload.get("kind") != "text-encoder":
            raise CheckpointError(f"{args.resume} is not a text-encoder checkpoint")
        vocab = Vocabulary(payload["vocab"][len(SPECIAL_TOKENS):])
        text_cfg = TextEncoderConfig(**payload["text_config"])
        init_state = numpy_to_state_dict(payload["weights"])
        start_step = payload["step"]
    else:
        vocab = Vocabulary.from_corpus(lines)
        text_cfg = TextEncoderConfig(**{**cfg["model"]["text"], "vocab_size": len(vocab)})

    result = mlm_pretrain(
        lines,
        vocab,
        text_cfg,
        policy=cfgmod.make_masking_policy(cfg),
        steps=tp["steps"],
        batch_size=tp["batch_size"],
        lr=tp["lr"],
        seed=tp["seed"],
        init_state=init_state,
        start_step=start_step,
    )
    save_payload(
        args.out,
        {
            "kind": "text-encoder",
            "text_config": asdict(result.config),
            "vocab": list(vocab.id_to_token),
            "weights": state_dict_to_numpy(result.encoder_state),
            "step": result.step,
            "loss_tail": result.losses[-10:],
        },
    )
    print(
        f"text encoder pretrained for {len(result.losses)} steps "
        f"(total {result.step}); loss {result.losses[0]:.4f} -> {result.losses[-1]:.4f}; "
        f"saved to {args.out}"
    )
    return 0


def cmd_train_codebook(args) -> int:
    cfg = _load_cfg(args)
    records, _ = load_corpus(args.data)
    images = load_images(records, args.data)
    codebook, report = pretrain_codebook(images, cfgmod.make_codebook_config(cfg))
    codebook.save(args.out)
    print(utilization_report_text(report))
    print(f"saved codebook to {args.out} (checksum {codebook.checksum()[:12]})")
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    records, classes = load_corpus(args.data)
    train_cfg = cfgmod.make_train_config(cfg)

    codebook = Codebook.load(args.codebook) if args.codebook else None
    vocab, text_init = None, None
    if args.text_init:
        payload = load_payload(args.text_init)
        if payload.get("kind") != "text-encoder":
            raise CheckpointError(f"{args.text_init} is not a text-encoder checkpoint")
        vocab = Vocabulary(payload["vocab"][len(SPECIAL_TOKENS):])
        text_init = numpy_to_state_dict(payload["weights"])
        cfg["model"]["text"] = dict(payload["text_config"])
        model_cfg = cfgmod.make_model_config(cfg)
    else:
        templates = build_prompt_templates(classes, cfg["data"]["template_variants"])
        vocab = build_vocabulary(
            [r.caption for r in records if r.caption is not None], templates
        )
        model_cfg = cfgmod.make_model_config(cfg, vocab_size=len(vocab))

    run_dir = Path(args.run_dir) if args.run_dir else (
        default_runs_dir() / f"train-seed{train_cfg.seed}"
    )
    out = train(
        records,
        classes,
        args.data,
        model_cfg,
        train_cfg,
        run_dir,
        codebook=codebook,
        text_init_state=text_init,
        vocab=vocab,
        template_variants=cfg["data"]["template_variants"],
    )
    print(f"training complete; artifacts in {out}")
    return 0


def _find_checkpoint(run_dir: Path) -> Path:
    best = run_dir / "weights-best.ckpt"
    if best.exists():
        return best
    candidates = sorted(run_dir.glob("weights-*.ckpt"))
    if not candidates:
        raise CheckpointError(f"no weights-*.ckpt under {run_dir}")
    return candidates[-1]


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    checkpoint = Path(args.checkpoint) if args.checkpoint else _find_checkpoint(Path(args.run_dir))
    model, vocab, _ = load_model(checkpoint)
    records, classes = load_corpus(args.data)
    templates = build_prompt_templates(classes, cfg["data"]["template_variants"])
    report = run_eval(
        model, vocab, templates, records, args.data, classes,
        config=cfgmod.make_eval_config(cfg),
    )
    print(report.to_text())
    out = Path(args.out) if args.out else (
        checkpoint.parent / "eval.json" if args.run_dir else Path("eval.json")
    )
    report.save(out)
    print(f"full report written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="keepfit",
        description="Knowledge-injected vision-language pretraining at desk scale.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("config", help="print the default config with every known key")
    p.set_defaults(fn=cmd_config)

    p = sub.add_parser("gen-data", help="write a synthetic image-text corpus")
    p.add_argument("--out", type=Path, required=True, help="corpus directory to create")
    _add_config_args(p)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("pretrain-text", help="masked-language-model pretraining")
    p.add_argument("--data", type=Path, required=True, help="corpus directory")
    p.add_argument("--out", type=Path, required=True, help="checkpoint file to write")
    p.add_argument("--resume", type=Path, default=None, help="continue from a checkpoint")
    _add_config_args(p)
    p.set_defaults(fn=cmd_pretrain_text)

    p = sub.add_parser("train-codebook", help="pretrain the frozen quantization codebook")
    p.add_argument("--data", type=Path, required=True, help="corpus directory")
    p.add_argument("--out", type=Path, required=True, help="codebook file to write")
    _add_config_args(p)
    p.set_defaults(fn=cmd_train_codebook)

    p = sub.add_parser("train", help="train the full model")
    p.add_argument("--data", type=Path, required=True, help="corpus directory")
    p.add_argument("--run-dir", type=Path, default=None,
                   help="output directory (default: $KEEPFIT_RUNS_DIR/train-seed<seed>)")
    p.add_argument("--codebook", type=Path, default=None,
                   help="pretrained codebook (required unless train.lambda2=0)")
    p.add_argument("--text-init", type=Path, default=None,
                   help="text-encoder checkpoint from pretrain-text")
    _add_config_args(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained model")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--run-dir", type=Path, help="training run directory")
    group.add_argument("--checkpoint", type=Path, help="explicit model checkpoint")
    p.add_argument("--data", type=Path, required=True, help="corpus directory")
    p.add_argument("--out", type=Path, default=None, help="where to write the JSON report")
    _add_config_args(p)
    p.set_defaults(fn=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except _RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
