"""Desk-scale language-guided video denoising.

Momentum contrastive training at video and frame level, language-guided
salient-frame selection, and token-level fusion matching, on a fully
deterministic float64 autodiff substrate.
"""

__version__ = "0.1.0"

from .config import Config
from .synth import CorpusConfig, generate_corpus, load_corpus, save_corpus
from .trainer import Trainer

__all__ = ["Config", "CorpusConfig", "Trainer", "generate_corpus",
           "load_corpus", "save_corpus", "__version__"]
