"""Functional segment tagging for conversational text."""
from .corpus import (B, I, TAGSET, Corpus, SourceKind, Tag, TaggedSequence, Token, load_corpus,
                     save_corpus, segments_from_tags, tags_from_segments)
from .crf import CrfModel, crf_decode, crf_decode_many, crf_train
from .features import DEFAULT_TEMPLATES, FeatureTemplate
from .harness import RunConfig, generate_synthetic, load_config, make_folds, run_cv
from .maxent import MaxEntModel, me_decode, me_decode_many, me_train
from .metrics import evaluate, fleiss_kappa
from .neural import NeuralConfig, NeuralModel, nn_decode, nn_decode_many, nn_train
from .normalize import Dictionary, bundled_dictionary, load_dictionary, normalize_corpus
from .optim import OptimizerConfig, minimize

__version__ = "0.1.0"

__all__ = [
    "B", "I", "TAGSET", "Corpus", "SourceKind", "Tag", "TaggedSequence", "Token", "load_corpus",
    "save_corpus", "segments_from_tags", "tags_from_segments", "CrfModel", "crf_decode",
    "crf_decode_many", "crf_train", "DEFAULT_TEMPLATES", "FeatureTemplate", "RunConfig", "generate_synthetic",
    "load_config", "make_folds", "run_cv", "MaxEntModel", "me_decode", "me_decode_many", "me_train", "evaluate",
    "fleiss_kappa", "NeuralConfig", "NeuralModel", "nn_decode", "nn_decode_many", "nn_train", "Dictionary",
    "bundled_dictionary", "load_dictionary", "normalize_corpus", "OptimizerConfig", "minimize",
]
