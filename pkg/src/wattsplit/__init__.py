"""wattsplit: non-intrusive load monitoring via a CNN-BiLSTM-attention model."""

__version__ = "0.1.0"

from .errors import (CheckpointError, ConfigError, DivergenceError, DomainError,
                     ParseError, ShapeError, TrainingError, WattsplitError)
from .rng import SeededRng
from .model import ModelConfig, ModelParams, TrainReport, fit
from .checkpoint import checkpoint_load, checkpoint_save
from .data import (SynthSpec, ApplianceSig, TimeSeries, WindowBatch,
                   make_windows, synth_generate)

__all__ = [
    "ApplianceSig", "CheckpointError", "ConfigError", "DivergenceError",
    "DomainError", "ModelConfig", "ModelParams", "ParseError", "SeededRng",
    "ShapeError", "SynthSpec", "TimeSeries", "TrainReport", "TrainingError",
    "WattsplitError", "WindowBatch", "checkpoint_load", "checkpoint_save",
    "fit", "make_windows", "synth_generate", "__version__",
]
