"""Context-aware query embeddings for multi-hop reasoning over knowledge graphs."""

from .config import RunConfig, TrainConfig, parse_config, preset
from .errors import CaqrError, ConfigError, DataError, NumericError
from .evaluator import EvalReport, aggregate_metrics, evaluate, filtered_rank, improvement_report
from .kg import KnowledgeGraph, load_triples
from .model import QueryModel
from .queries import QueryInstance, QueryType
from .trainer import load_model, train_loop

__version__ = "0.1.0"

__all__ = [
    "CaqrError",
    "ConfigError",
    "DataError",
    "EvalReport",
    "KnowledgeGraph",
    "NumericError",
    "QueryInstance",
    "QueryModel",
    "QueryType",
    "RunConfig",
    "TrainConfig",
    "aggregate_metrics",
    "evaluate",
    "filtered_rank",
    "improvement_report",
    "load_model",
    "load_triples",
    "parse_config",
    "preset",
    "train_loop",
]
