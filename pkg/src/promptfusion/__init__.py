"""Two-stage multi-modal prompt tuning for a frozen dual-encoder classifier."""

__version__ = "0.1.0"

from .config import apply_overrides, build_experiment, load_config
from .data import Dataset, DatasetSpec, Example, generate_dataset, materialize
from .encoders import (ModelConfig, PromptPack, build_class_prompts,
                       build_vocab, desk_preset, encode_image, encode_text,
                       init_prompts, init_weights, full_preset)
from .errors import (ArchiveError, ConfigError, DimensionError,
                     DivergenceError, NumericError, PromptFusionError,
                     UsageError)
from .estimator import GaussianFusionAdapter, PromptTunedClassifier
from .fusion import AdapterConfig, adapt
from .head import (ce_loss, kl_loss, predict, similarity, stage1_loss,
                   stage2_loss)
from .metrics import EvalReport, emit_report, evaluate, harmonic_mean
# the sweep entry point stays on its submodule (promptfusion.sweep.sweep);
# re-exporting the function here would shadow the module attribute
from .sweep import SweepResult
from .tensor import Graph, Tensor, backward, grad_check, record
from .trainer import (ExperimentConfig, TeacherCache, TrainConfig, WarmConfig,
                      run_pipeline, stage1_grad_audit, train_stage1,
                      train_stage2, warm_backbone)

__all__ = [
    "AdapterConfig", "ArchiveError", "ConfigError", "Dataset", "DatasetSpec",
    "DimensionError", "DivergenceError", "EvalReport", "Example",
    "ExperimentConfig", "GaussianFusionAdapter", "Graph", "ModelConfig",
    "NumericError", "PromptFusionError", "PromptPack",
    "PromptTunedClassifier", "TeacherCache", "Tensor", "TrainConfig",
    "UsageError", "WarmConfig", "adapt", "apply_overrides",
    "backward", "build_class_prompts", "build_experiment", "build_vocab",
    "ce_loss", "desk_preset", "emit_report", "encode_image", "encode_text",
    "evaluate", "generate_dataset", "grad_check", "harmonic_mean",
    "init_prompts", "init_weights", "kl_loss", "load_config", "materialize",
    "full_preset", "predict", "record", "run_pipeline", "similarity",
    "stage1_grad_audit", "stage1_loss", "stage2_loss",
    "train_stage1", "train_stage2", "warm_backbone",
]
