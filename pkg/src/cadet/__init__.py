"""Class-attentive video action detection on a small numpy autodiff engine.

The package is a desk-scale, property-verified implementation of a
set-prediction action detector: a reverse-mode tensor engine
(``cadet.tensor``), box geometry with differentiable GIoU
(``cadet.boxes``), multi-scale deformable encoding (``cadet.encoder``),
alternating localizing/classifying decoder layers (``cadet.ldl``,
``cadet.cdl``), Hungarian-matched detection losses
(``cadet.matching``), and a synthetic-video harness that trains the
whole stack end to end (``cadet.synthetic``, ``cadet.training``,
``cadet.evaluation``, ``cadet.ablation``). ``cadet.checks`` carries the
finite-difference gradient batteries and ``cadet.cli`` the command
line.

The names re-exported here are the working set for driving the
harness from Python; the submodules stay the home of everything else.
"""

from .ablation import ablation_suite, actor_confusion
from .checks import run_suite
from .config import ConfigError, RunConfig, load_run_config
from .evaluation import EvalReport, evaluate_fmap
from .gradcheck import gradcheck
from .matching import GroundTruth, MatchConfig, detection_loss, hungarian, match
from .model import ActionDetector, ModelConfig, ModelOutput
from .pgm import dump_attention
from .serial import (load_checkpoint, read_dataset, save_checkpoint,
                     write_dataset)
from .synthetic import SyntheticClip, TaskConfig, generate_clip, make_dataset
from .tensor import Tensor, no_grad
from .training import (NumericalAbort, TrainConfig, TrainResult,
                       evaluate_model, train)

__version__ = "0.1.0"

__all__ = [
    "Tensor", "no_grad", "gradcheck", "run_suite",
    "ActionDetector", "ModelConfig", "ModelOutput",
    "GroundTruth", "MatchConfig", "match", "hungarian", "detection_loss",
    "TaskConfig", "SyntheticClip", "generate_clip", "make_dataset",
    "TrainConfig", "TrainResult", "train", "evaluate_model",
    "NumericalAbort", "EvalReport", "evaluate_fmap",
    "ablation_suite", "actor_confusion",
    "ConfigError", "RunConfig", "load_run_config",
    "write_dataset", "read_dataset", "save_checkpoint", "load_checkpoint",
    "dump_attention",
    "__version__",
]
