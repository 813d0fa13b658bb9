"""Moment retrieval over synthetic clip/query features: contrastive semantic
disentanglement, offset-based temporal denoising, and span grounding."""

from .config import AblationFlags, ConfigError, RunConfig
from .corpus import (CorpusConfig, CorpusFormatError, CorpusSample, MomentSpan,
                     generate_corpus, generate_sample, read_corpus, write_corpus)
from .metrics import EvalRecord, MetricReport, evaluate_records
from .model import MomentNet
from .train import DivergenceError, evaluate_model, init_model, train

__all__ = [
    "AblationFlags",
    "ConfigError",
    "CorpusConfig",
    "CorpusFormatError",
    "CorpusSample",
    "DivergenceError",
    "EvalRecord",
    "MetricReport",
    "MomentNet",
    "MomentSpan",
    "RunConfig",
    "evaluate_model",
    "evaluate_records",
    "generate_corpus",
    "generate_sample",
    "init_model",
    "read_corpus",
    "train",
    "write_corpus",
]
