"""Depth-aware early accident anticipation over dashcam feature archives."""

from .data import (ArchiveDims, Detection, FrameObservation, PredictionCurve,
                   VideoSample, load_archive, save_archive, select_top_m)
from .errors import (ArchiveError, ConfigError, DepthwarnError, DimensionError,
                     EmptyGraphError, NumericError, ProtocolError, ScenarioError,
                     StructuralError, TrainingDiverged)
from .metrics import EvalReport, evaluate
from .model import AblationFlags, AnticipationModel, ModelConfig, VARIANTS
from .synth import ScenarioDistribution, ScenarioSpec, generate_dataset, occlude
from .training import TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"
