"""Self-supervised audio representation learning on log-mel spectrograms, in numpy."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import Config
from .errors import BatchSizeError, ConfigError, ContractError, FormatError, NonFiniteGradientError, ShapeError
from .estimators import LogMelTransformer, SelfSupervisedPretrainer
from .frontend import AudioClip, load_clip, load_wav, logmel
from .probe import LinearProbe
from .trainer import fit, train

__version__ = "0.1.0"

__all__ = [
    "AudioClip",
    "BatchSizeError",
    "Checkpoint",
    "Config",
    "ConfigError",
    "ContractError",
    "FormatError",
    "LinearProbe",
    "LogMelTransformer",
    "NonFiniteGradientError",
    "SelfSupervisedPretrainer",
    "ShapeError",
    "fit",
    "load_checkpoint",
    "load_clip",
    "load_wav",
    "logmel",
    "save_checkpoint",
    "train",
]
