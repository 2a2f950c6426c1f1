"""Spatio-temporal transformer for tactile action classification.

Pipeline: tactile tensors -> tubelet tokens -> four-way embeddings
(projection + position + spatial + temporal) -> transformer encoder ->
masked-reconstruction / order-discrimination pretraining and CLS
classification, all on a small numpy reverse-mode autodiff core.
"""
from .autodiff import Adam, ParameterStore, Tensor
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .classifier import ClassifierHead, classify, finetune_loss
from .config import ExperimentConfig, default_config, load_config, save_config
from .data import (
    DatasetSplit,
    LabeledSample,
    NormalizationStats,
    SyntheticTaskSpec,
    TactileTensor,
    generate_synthetic,
    load_dataset,
    normalize,
    save_dataset,
)
from .embedding import EmbeddingSet, SinusoidalTable, compose_input, sinusoidal, sinusoidal_table
from .encoder import EncodedSequence, EncoderConfig, encode
from .gradcheck import GradCheckReport, gradient_check
from .metrics import EvalReport, evaluate, evaluate_predictions
from .model import TactileActionModel
from .pretrain import (
    MaskPlan,
    PairBatch,
    apply_mask,
    mtr_loss,
    plan_spatial_mask,
    pretrain_step,
    sample_pairs,
    temporal_loss,
)
from .tokenizer import Tubelet, TubeletConfig, TubeletGrid, detokenize, tokenize
from .train import run_ablation_suite, run_eval, run_finetune, run_pretrain

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "Checkpoint",
    "ClassifierHead",
    "DatasetSplit",
    "EmbeddingSet",
    "EncodedSequence",
    "EncoderConfig",
    "EvalReport",
    "ExperimentConfig",
    "GradCheckReport",
    "LabeledSample",
    "MaskPlan",
    "NormalizationStats",
    "PairBatch",
    "ParameterStore",
    "SinusoidalTable",
    "SyntheticTaskSpec",
    "TactileActionModel",
    "TactileTensor",
    "Tensor",
    "Tubelet",
    "TubeletConfig",
    "TubeletGrid",
    "apply_mask",
    "classify",
    "compose_input",
    "default_config",
    "detokenize",
    "encode",
    "evaluate",
    "evaluate_predictions",
    "finetune_loss",
    "generate_synthetic",
    "gradient_check",
    "load_checkpoint",
    "load_config",
    "load_dataset",
    "mtr_loss",
    "normalize",
    "plan_spatial_mask",
    "pretrain_step",
    "run_ablation_suite",
    "run_eval",
    "run_finetune",
    "run_pretrain",
    "sample_pairs",
    "save_checkpoint",
    "save_config",
    "save_dataset",
    "sinusoidal",
    "sinusoidal_table",
    "temporal_loss",
    "tokenize",
]
