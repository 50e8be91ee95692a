import json

import pytest
import yaml

from keepfit import config as cfgmod
from keepfit.checkpoint import load_payload
from keepfit.cli import main
from keepfit.config import ConfigError, load_config
from keepfit.data import load_corpus


# --- config layer ---------------------------------------------------------


def test_default_yaml_round_trips(tmp_path):
    text = cfgmod.dump_default_yaml()
    parsed = yaml.safe_load(text)
    assert set(parsed) == {"data", "text_pretrain", "codebook", "model", "train", "eval"}
    path = tmp_path / "cfg.yaml"
    path.write_text(text)
    assert load_config(path) == cfgmod.default_config()


def test_overrides_parse_and_type_check():
    cfg = load_config(None, [
        "train.lr=0.5",
        "train.epochs=3",
        "train.lambda1=2",          # int coerces into a float slot
        "eval.shots=null",          # explicitly nullable
        "model.text.hidden_dim=64", # nested path
        "eval.tasks=[zero-shot]",
    ])
    assert cfg["train"]["lr"] == 0.5
    assert cfg["train"]["epochs"] == 3
    assert cfg["train"]["lambda1"] == 2.0 and isinstance(cfg["train"]["lambda1"], float)
    assert cfg["eval"]["shots"] is None
    assert cfg["model"]["text"]["hidden_dim"] == 64
    assert cfg["eval"]["tasks"] == ["zero-shot"]


@pytest.mark.parametrize("override,message", [
    ("data.bogus=1", "unknown config key"),
    ("nosection.x=1", "unknown config key"),
    ("data.n_classes=hello", "expected int"),
    ("data.n_classes=2.5", "expected int"),
    ("data.n_classes=true", "expected int"),
    ("train.lr=null", "null is not allowed"),
    ("model.text=3", "is a section"),
    ("justakey", "section.key=value"),
])
def test_bad_overrides_rejected(override, message):
    with pytest.raises(ConfigError, match=message):
        load_config(None, [override])


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("- just\n- a\n- list\n")
    with pytest.raises(ConfigError, match="mapping"):
        load_config(bad)
    unknown = tmp_path / "unknown.yaml"
    unknown.write_text("data:\n  typo_key: 3\n")
    with pytest.raises(ConfigError, match="data.typo_key"):
        load_config(unknown)


def test_factories_reflect_overrides():
    cfg = load_config(None, ["train.lr=0.5", "codebook.k=16", "eval.n_folds=3"])
    assert cfgmod.make_train_config(cfg).lr == 0.5
    assert cfgmod.make_codebook_config(cfg).k == 16
    eval_cfg = cfgmod.make_eval_config(cfg)
    assert eval_cfg.n_folds == 3
    assert isinstance(eval_cfg.tasks, tuple)


def test_model_config_requires_vocab_size():
    cfg = load_config(None)
    with pytest.raises(ConfigError, match="vocab_size"):
        cfgmod.make_model_config(cfg)
    model_cfg = cfgmod.make_model_config(cfg, vocab_size=42)
    assert model_cfg.text.vocab_size == 42


# --- command-line surface -------------------------------------------------


def test_config_command_prints_defaults(capsys):
    assert main(["config"]) == 0
    out = capsys.readouterr().out
    assert yaml.safe_load(out) == cfgmod.default_config()


def test_missing_subcommand_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


def test_eval_requires_run_dir_or_checkpoint(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["eval", "--data", str(tmp_path)])
    assert exc.value.code == 2


def test_unknown_override_key_exits_2(tmp_path, capsys):
    rc = main(["gen-data", "--out", str(tmp_path / "c"), "--set", "data.bogus=1"])
    assert rc == 2
    assert "unknown config key" in capsys.readouterr().err


def test_missing_corpus_exits_1(tmp_path, capsys):
    rc = main(["train-codebook", "--data", str(tmp_path / "nope"),
               "--out", str(tmp_path / "cb.ckpt")])
    assert rc == 1
    assert "error" in capsys.readouterr().err


def test_gen_data_reports_corpus_summary(tmp_path, capsys):
    corpus = tmp_path / "corpus"
    assert main(["gen-data", "--out", str(corpus), *TINY_DATA]) == 0
    assert "3 classes" in capsys.readouterr().out
    records, classes = load_corpus(corpus)
    assert len(records) == 18 and len(classes) == 3


TINY_DATA = [
    "--set", "data.n_classes=3",
    "--set", "data.n_elite=6",
    "--set", "data.n_categorical=12",
]
TINY_MODEL = [
    "--set", "model.image.feature_channels=16",
    "--set", "model.image.base_width=8",
    "--set", "model.text.hidden_dim=32",
    "--set", "model.text.n_layers=1",
    "--set", "model.text.n_heads=2",
    "--set", "model.text.max_tokens=32",
    "--set", "model.shared_dim=32",
    "--set", "model.attention_heads=4",
    "--set", "model.code_dim=8",
]


@pytest.fixture(scope="module")
def cli_pipeline(tmp_path_factory):
    """gen-data -> pretrain-text (+resume) -> train-codebook -> train."""
    ws = tmp_path_factory.mktemp("cli")
    corpus = ws / "corpus"
    text_ckpt = ws / "text.ckpt"
    resumed = ws / "text2.ckpt"
    codebook = ws / "codebook.ckpt"
    run_dir = ws / "run"

    assert main(["gen-data", "--out", str(corpus), *TINY_DATA]) == 0
    assert main([
        "pretrain-text", "--data", str(corpus), "--out", str(text_ckpt),
        "--set", "text_pretrain.steps=5", *TINY_MODEL,
    ]) == 0
    assert main([
        "pretrain-text", "--data", str(corpus), "--out", str(resumed),
        "--resume", str(text_ckpt), "--set", "text_pretrain.steps=3",
    ]) == 0
    assert main([
        "train-codebook", "--data", str(corpus), "--out", str(codebook),
        "--set", "codebook.k=16", "--set", "codebook.d=8",
        "--set", "codebook.channels=8", "--set", "codebook.steps=10",
    ]) == 0
    assert main([
        "train", "--data", str(corpus), "--run-dir", str(run_dir),
        "--codebook", str(codebook), "--text-init", str(resumed),
        "--set", "train.epochs=1", "--set", "train.batch_size=6",
        "--set", "train.lambda1=1", "--set", "train.lambda2=1",
        *TINY_MODEL,
    ]) == 0
    return {"corpus": corpus, "text": text_ckpt, "resumed": resumed,
            "codebook": codebook, "run": run_dir}


def test_pipeline_writes_training_artifacts(cli_pipeline):
    run = cli_pipeline["run"]
    assert (run / "config.json").exists()
    assert (run / "codebook.ckpt").exists()
    assert (run / "weights-best.ckpt").exists()
    assert (run / "telemetry.jsonl").exists()


def test_resumed_text_pretraining_continues_step_count(cli_pipeline):
    first = load_payload(cli_pipeline["text"])
    second = load_payload(cli_pipeline["resumed"])
    assert first["step"] == 5
    assert second["step"] == 8  # 5 prior + 3 resumed
    assert second["vocab"] == first["vocab"]


def test_eval_on_run_dir(cli_pipeline, capsys):
    run = cli_pipeline["run"]
    assert main([
        "eval", "--run-dir", str(run), "--data", str(cli_pipeline["corpus"]),
        "--set", "eval.n_folds=2", "--set", "eval.shots=2",
        "--set", "eval.tasks=[zero-shot,tip-adapter]",
        "--set", "eval.alpha_grid=[1.0]", "--set", "eval.beta_grid=[1.0]",
    ]) == 0
    out = capsys.readouterr().out
    assert "zero-shot" in out and "tip-adapter" in out
    report = json.loads((run / "eval.json").read_text())
    assert report["n_folds"] == 2
    assert set(report["tasks"]) == {"zero-shot", "tip-adapter"}


def test_eval_with_explicit_checkpoint_writes_report(cli_pipeline, tmp_path):
    ckpt = cli_pipeline["run"] / "weights-best.ckpt"
    out = tmp_path / "report.json"
    assert main([
        "eval", "--checkpoint", str(ckpt), "--data", str(cli_pipeline["corpus"]),
        "--out", str(out),
        "--set", "eval.n_folds=2", "--set", "eval.shots=2",
        "--set", "eval.tasks=[zero-shot]",
    ]) == 0
    assert json.loads(out.read_text())["tasks"]["zero-shot"]["folds"]


def test_train_without_codebook_needs_lambda2_off(cli_pipeline, tmp_path, capsys):
    rc = main([
        "train", "--data", str(cli_pipeline["corpus"]),
        "--run-dir", str(tmp_path / "run2"),
        "--set", "train.epochs=1", *TINY_MODEL,
    ])
    assert rc == 1
    assert "codebook" in capsys.readouterr().err
