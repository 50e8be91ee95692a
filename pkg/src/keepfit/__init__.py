"""Knowledge-injected vision-language pretraining at desk scale.

A dual-encoder contrastive model trained jointly on expert-captioned and
category-labeled image corpora, with cross-attention knowledge extraction and
a frozen quantization codebook for appearance features. Everything runs
deterministically on CPU at sizes suited to tests and small experiments.
"""

__version__ = "0.1.0"

from .contrastive import itc_loss, itc_loss_from_features, similarity
from .data import ClassSpec, ManifestRecord, load_corpus
from .evalharness import EvalConfig, EvalReport, run_eval
from .ibq import Codebook, pretrain_codebook, quantize
from .model import KnowledgeInjectionModel, ModelConfig, load_model, save_model
from .synth import SyntheticCorpusSpec, generate_synthetic_corpus, write_corpus
from .tokenizer import Vocabulary
from .trainer import TrainConfig, train

__all__ = [
    "ClassSpec",
    "Codebook",
    "EvalConfig",
    "EvalReport",
    "KnowledgeInjectionModel",
    "ManifestRecord",
    "ModelConfig",
    "SyntheticCorpusSpec",
    "TrainConfig",
    "Vocabulary",
    "__version__",
    "generate_synthetic_corpus",
    "itc_loss",
    "itc_loss_from_features",
    "load_corpus",
    "load_model",
    "pretrain_codebook",
    "quantize",
    "run_eval",
    "save_model",
    "similarity",
    "train",
    "write_corpus",
]
