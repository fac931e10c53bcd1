"""Reversible face de-identification on synthetic surveillance streams.

Two-phase pipeline: pairwise attribute matchers are trained first, then a
public encoder / private decoder pair is trained against them so that
published faces carry a configurable virtual identity while remaining
recoverable by key holders. Bounding boxes travel inside the public frames
through a lossless steganographic side channel.
"""

from .core import (
    ATTRIBUTE_NAMES,
    BoundingBox,
    BoundsError,
    CapacityError,
    CheckpointFormatError,
    CheckpointMismatchError,
    ConfigError,
    ContractError,
    CROP_SIZE,
    DivergenceError,
    Frame,
    Histogram,
    MessageFormatError,
    StatisticUndefinedError,
    StreamCorruptionError,
    TrackletIndex,
    crop_roi,
    histogram,
    paste_roi,
)
from .losses import LossWeights
from .matcher import MatcherModel, Phase1Config, train_phase1
from .networks import GeneratorPair, PatchCritic, UNet, decode, encode
from .training import TrainConfig, train_phase2
from .dataset import SyntheticSpec, generate_synthetic_dataset, load_dataset, save_dataset
from .evaluation import DecisionEnvironment, auc, decidability, ks_statistic
from .pipeline import PipelineConfig, deidentify_frame, process_stream, reverse_frame

__version__ = "0.1.0"

__all__ = [
    "ATTRIBUTE_NAMES",
    "BoundingBox",
    "BoundsError",
    "CapacityError",
    "CheckpointFormatError",
    "CheckpointMismatchError",
    "ConfigError",
    "ContractError",
    "CROP_SIZE",
    "DecisionEnvironment",
    "DivergenceError",
    "Frame",
    "GeneratorPair",
    "Histogram",
    "LossWeights",
    "MatcherModel",
    "MessageFormatError",
    "PatchCritic",
    "Phase1Config",
    "PipelineConfig",
    "StatisticUndefinedError",
    "StreamCorruptionError",
    "SyntheticSpec",
    "TrackletIndex",
    "TrainConfig",
    "UNet",
    "auc",
    "crop_roi",
    "decidability",
    "decode",
    "deidentify_frame",
    "encode",
    "generate_synthetic_dataset",
    "histogram",
    "ks_statistic",
    "load_dataset",
    "paste_roi",
    "process_stream",
    "reverse_frame",
    "save_dataset",
    "train_phase1",
    "train_phase2",
]
