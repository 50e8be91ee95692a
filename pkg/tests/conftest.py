"""Shared fixtures: tiny corpora and model configs sized for fast CPU tests."""

from __future__ import annotations

import pytest
import torch

from keepfit.encoders import ImageEncoderConfig, TextEncoderConfig
from keepfit.model import ModelConfig
from keepfit.synth import SyntheticCorpusSpec, write_corpus


@pytest.fixture(autouse=True)
def _single_thread():
    # One deterministic CPU thread: intra-op parallelism can reorder float
    # reductions, and several tests compare checkpoints and metrics bitwise.
    torch.set_num_threads(1)


@pytest.fixture(scope="session")
def tiny_spec() -> SyntheticCorpusSpec:
    return SyntheticCorpusSpec(
        n_classes=4, n_elite=12, n_categorical=24, image_size=32, seed=7
    )


@pytest.fixture(scope="session")
def tiny_corpus(tiny_spec, tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    write_corpus(tiny_spec, root)
    return root


def small_model_config(vocab_size: int, image_size: int = 32) -> ModelConfig:
    return ModelConfig(
        image=ImageEncoderConfig(
            input_size=image_size, feature_channels=16, base_width=8
        ),
        text=TextEncoderConfig(
            vocab_size=vocab_size, max_tokens=32, hidden_dim=32, n_layers=1, n_heads=2
        ),
        shared_dim=32,
        attention_heads=4,
        code_dim=8,
    )


@pytest.fixture
def model_config_factory():
    return small_model_config
