"""Edge-preserving masked autoencoder pretraining and dual-scale image synthesis."""

from .config import ConfigError, EdgeMaeConfig, MtNetConfig
from .edge_mae import EdgeMAE
from .mtnet import Synthesizer

__all__ = ["ConfigError", "EdgeMAE", "EdgeMaeConfig", "MtNetConfig", "Synthesizer"]
__version__ = "0.1.0"
