"""Emulated pool-based active learning for sequence tagging.

A linear-chain CRF and a small dropout tagger serve as acquisition and
successor models; query strategies include least confidence, MNLP and
MC-dropout variation ratio / BALD.
"""

from .config import ConfigError, ExperimentConfig, config_from_dict, load_config
from .corpus import (Corpus, Sentence, SynthSpec, TagSet, Token, extract_spans, parse_conll,
                     spans_to_tags, synth_corpus)
from .crf import CrfModel, train_crf
from .engine import RunRecord, run_experiment, run_single
from .metrics import F1Report, LearningCurve, aggregate_runs, span_f1
from .neural import McConfig, McVariant, NeuralConfig, NeuralModel, train_neural
from .strategies import Strategy, bald_score, lc_score, mnlp_score, score_pool, select_batch, vr_score

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ExperimentConfig", "config_from_dict", "load_config",
    "Corpus", "Sentence", "SynthSpec", "TagSet", "Token", "extract_spans", "parse_conll",
    "spans_to_tags", "synth_corpus", "CrfModel", "train_crf", "RunRecord", "run_experiment",
    "run_single", "F1Report", "LearningCurve", "aggregate_runs", "span_f1", "McConfig",
    "McVariant", "NeuralConfig", "NeuralModel", "train_neural", "Strategy", "bald_score",
    "lc_score", "mnlp_score", "score_pool", "select_batch", "vr_score",
]
