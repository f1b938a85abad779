"""Few-shot extraction of black-box sequential recommenders."""

from .augment import GenerationPlan, SamplerConfig, generate_sequences, train_augmentor
from .data import load_dataset, partition_exploit_explore, sample_few_shot, split_leave_last_two
from .distill import LossWeights, distill_train
from .evaluate import EvalProtocol, MetricReport, agreement_at_k, compare_models, rank_metrics
from .models import ModelConfig, build_model, load_model, save_model, train_victim
from .oracle import BudgetExhausted, Oracle, QueryBudget
from .pipeline import RunConfig, run_pipeline, validate_config

__version__ = "0.1.0"

__all__ = [
    "BudgetExhausted",
    "EvalProtocol",
    "GenerationPlan",
    "LossWeights",
    "MetricReport",
    "ModelConfig",
    "Oracle",
    "QueryBudget",
    "RunConfig",
    "SamplerConfig",
    "agreement_at_k",
    "build_model",
    "compare_models",
    "distill_train",
    "generate_sequences",
    "load_dataset",
    "load_model",
    "partition_exploit_explore",
    "rank_metrics",
    "run_pipeline",
    "sample_few_shot",
    "save_model",
    "split_leave_last_two",
    "train_augmentor",
    "train_victim",
    "validate_config",
]
