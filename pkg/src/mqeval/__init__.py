"""Matched full-reference quality evaluation for videos downsampled by rational factors."""

from mqeval.schedule import (
    ClusterSchedule,
    FrameRatePair,
    TruncationWarning,
    cluster_count,
    derive_pair,
    generate_schedule,
    parse_rate,
)

__version__ = "0.1.0"

__all__ = [
    "ClusterSchedule",
    "FrameRatePair",
    "TruncationWarning",
    "cluster_count",
    "derive_pair",
    "generate_schedule",
    "parse_rate",
    "__version__",
]
