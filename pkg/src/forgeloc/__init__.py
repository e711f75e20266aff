"""Weakly supervised audio-visual forgery localisation from reconstruction
discrepancies, built on a small numpy autodiff core."""

from .config import RunConfig
from .datagen import CorpusSpec, Episode, FeatureSequence, generate_corpus, read_manifest, reference_corpus
from .estimator import ForgeryLocalizer
from .metrics import EvalConfig, evaluate
from .training import Trainer, train

__version__ = "0.1.0"

__all__ = ["CorpusSpec", "Episode", "EvalConfig", "FeatureSequence", "ForgeryLocalizer", "RunConfig",
           "Trainer", "evaluate", "generate_corpus", "read_manifest", "reference_corpus", "train"]
