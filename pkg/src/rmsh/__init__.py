"""Robust multilevel semantic hashing for cross-modal retrieval."""

__version__ = "0.1.0"

from ._kernels import NUMBA_ENABLED
from .bounds import BoundsReport, effective_delta_range
from .data import Dataset, FeatureMatrix, LabelMatrix, SimilarityMatrix, generate_synthetic
from .errors import RMSHError
from .evaluation import EvalReport, evaluate
from .index import PackedCodes, pack, search_topk, unpack
from .model import HashModel, ModelDims, init_params
from .trainer import TrainConfig, fit

__all__ = [
    "NUMBA_ENABLED",
    "BoundsReport",
    "effective_delta_range",
    "Dataset",
    "FeatureMatrix",
    "LabelMatrix",
    "SimilarityMatrix",
    "generate_synthetic",
    "RMSHError",
    "EvalReport",
    "evaluate",
    "PackedCodes",
    "pack",
    "search_topk",
    "unpack",
    "HashModel",
    "ModelDims",
    "init_params",
    "TrainConfig",
    "fit",
]
