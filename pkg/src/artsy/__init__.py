"""Class-incremental learning on a frozen backbone with gated per-task
adapters and a prototype classifier.

The model never revisits old task data and never rewrites old parameters:
each task adds a small bottleneck adapter plus a binary gate that decides,
per sample at test time, whether that adapter's residual joins the feature.
Silent gates leave rows untouched, so earlier tasks' predictions are
reproduced bit for bit as the stream grows.
"""

from .adapters import Adapter, new_adapter, train_adapter
from .backbone import Backbone, identity_backbone, pretrain
from .checkpoint import inspect_checkpoint, load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .data import (
    Split,
    Task,
    TaskStream,
    batches,
    gen_gaussian_stream,
    load_feature_stream,
    write_feature_stream,
)
from .engine import (
    GATE_MODES,
    EngineConfig,
    ModelState,
    evaluate_seen,
    infer,
    init_state,
    run_experiment,
    run_sequential_baseline,
    train_step,
    verify_frozen,
)
from .errors import (
    ArtsyError,
    CheckpointError,
    ConfigError,
    FrozenError,
    GenerationError,
    InferenceError,
    LabelError,
    NonFiniteError,
    OptimizerError,
    PrototypeError,
    SequencingError,
    ShapeError,
    StreamFormatError,
    TapeError,
    TrainingError,
)
from .gates import ReplayBuffer, SynapseGate, gate_fire, make_ablation_gate, new_gate, train_gate
from .metrics import (
    AccuracyMatrix,
    RunReport,
    avg_accuracy,
    emit_report,
    last_accuracy,
    load_report,
    multi_fire_rate,
    routing_accuracy,
)
from .optim import Sgd, SgdConfig, cosine_lr
from .prototypes import FeatureHead, PrototypeTable, build_prototypes, classify, gated_feature, predict
from .tensor import Tape, Tensor

__version__ = "0.1.0"

__all__ = [
    "Adapter",
    "AccuracyMatrix",
    "ArtsyError",
    "Backbone",
    "CheckpointError",
    "ConfigError",
    "EngineConfig",
    "ExperimentConfig",
    "FeatureHead",
    "FrozenError",
    "GATE_MODES",
    "GenerationError",
    "InferenceError",
    "LabelError",
    "ModelState",
    "NonFiniteError",
    "OptimizerError",
    "PrototypeError",
    "PrototypeTable",
    "ReplayBuffer",
    "RunReport",
    "SequencingError",
    "Sgd",
    "SgdConfig",
    "ShapeError",
    "Split",
    "StreamFormatError",
    "SynapseGate",
    "Tape",
    "TapeError",
    "Task",
    "TaskStream",
    "Tensor",
    "TrainingError",
    "avg_accuracy",
    "batches",
    "build_prototypes",
    "classify",
    "cosine_lr",
    "emit_report",
    "evaluate_seen",
    "gate_fire",
    "gated_feature",
    "gen_gaussian_stream",
    "identity_backbone",
    "infer",
    "init_state",
    "inspect_checkpoint",
    "last_accuracy",
    "load_checkpoint",
    "load_feature_stream",
    "load_report",
    "make_ablation_gate",
    "multi_fire_rate",
    "new_adapter",
    "new_gate",
    "predict",
    "pretrain",
    "routing_accuracy",
    "run_experiment",
    "run_sequential_baseline",
    "save_checkpoint",
    "train_adapter",
    "train_gate",
    "train_step",
    "verify_frozen",
    "write_feature_stream",
]
