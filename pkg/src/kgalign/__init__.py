"""Entity alignment over merged, partitioned knowledge graphs."""

from .config import PipelineConfig, load_config
from .kg import AlignmentSet, KnowledgeGraph, generate_synthetic_pair, load_dataset
from .pipeline import run_pipeline, run_stage
from .train import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "AlignmentSet",
    "KnowledgeGraph",
    "PipelineConfig",
    "TrainConfig",
    "generate_synthetic_pair",
    "load_config",
    "load_dataset",
    "run_pipeline",
    "run_stage",
    "train",
]
