"""Attentive recurrent classifier for multichannel segments, in plain numpy."""

from .cell import CellConfig, CellParams, cell_step
from .data import Segment, SynthConfig, load_manifest, minmax_normalize, synth_generate, write_segments
from .errors import (
    ArnnError, ConfigError, DataError, DimensionError, FormatError, ParameterError, StateError,
)
from .model import ArnnModel, ModelConfig, load, save, window_segment
from .training import Metrics, TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "ArnnError", "ArnnModel", "CellConfig", "CellParams", "ConfigError", "DataError",
    "DimensionError", "FormatError", "Metrics", "ModelConfig", "ParameterError", "Segment",
    "StateError", "SynthConfig", "TrainConfig", "cell_step", "evaluate", "load",
    "load_manifest", "minmax_normalize", "save", "synth_generate", "train", "window_segment",
    "write_segments",
]
