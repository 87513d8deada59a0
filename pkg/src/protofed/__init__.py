"""Deterministic simulator of prototype-based federated learning across
heterogeneous data domains: dual-level prototype clustering, a powered-cosine
contrastive loss with an intra-class correction term, communication
accounting, and optional prototype perturbation."""

from .config import ExperimentConfig, parse_config, preset_variants, serialize_config
from .federation import run_training
from .kernels import BACKEND
from .losses import LossConfig
from .metrics import MetricsLog

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ExperimentConfig",
    "LossConfig",
    "MetricsLog",
    "parse_config",
    "preset_variants",
    "run_training",
    "serialize_config",
    "__version__",
]
