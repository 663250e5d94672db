"""Compressed embedding tables with random offset block allocation (ROBE-Z)."""

from .hashing import HashParams, random_oracle_hash, sample_hash_params, sign_hash, uhash3
from .robe import (
    RobeArray,
    RobePlan,
    Segment,
    TableSpec,
    accumulate_batch,
    accumulate_gradient,
    block_segments,
    index_of,
    injective_plan,
    lookup_batch,
    lookup_embedding,
    make_plan,
)
from .sketch import RobeZProjection, SketchPlan
from .trainer.model import FMClassifier

__version__ = "0.1.0"

__all__ = [
    "FMClassifier",
    "HashParams",
    "RobeArray",
    "RobePlan",
    "RobeZProjection",
    "Segment",
    "SketchPlan",
    "TableSpec",
    "accumulate_batch",
    "accumulate_gradient",
    "block_segments",
    "index_of",
    "injective_plan",
    "lookup_batch",
    "lookup_embedding",
    "make_plan",
    "random_oracle_hash",
    "sample_hash_params",
    "sign_hash",
    "uhash3",
]
