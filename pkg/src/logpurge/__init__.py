"""Purification of contaminated log-sequence training sets."""

from .config import RunConfig
from .core import (ANOMALOUS, HIGH, LOW, NORMAL, EmbeddingMatrix, LogRecord, LogSequence, PurgeConfig, Region,
                   RepresentativeSet, Rule, RuleSet, Template)
from .detector import NgramDetector
from .embedding import SequenceEmbedder
from .engine import LogPurge
from .evaluator import BackendConfig, Evaluator
from .exceptions import LogPurgeError
from .parsing import DrainParser, window_sequences
from .pipeline import run_pipeline
from .pluto import PlutoPurifier
from .projection import TSNE, subdivide
from .regions import KMeans, select_representatives

__version__ = "0.1.0"

__all__ = [
    "ANOMALOUS", "HIGH", "LOW", "NORMAL", "BackendConfig", "DrainParser", "EmbeddingMatrix", "Evaluator",
    "KMeans", "LogPurge", "LogPurgeError", "LogRecord", "LogSequence", "NgramDetector", "PlutoPurifier",
    "PurgeConfig", "Region", "RepresentativeSet", "Rule", "RuleSet", "RunConfig", "SequenceEmbedder", "TSNE",
    "Template", "run_pipeline", "select_representatives", "subdivide", "window_sequences",
]
