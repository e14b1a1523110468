"""Multi-anchor CSI-fingerprint positioning with uncertainty-based fusion."""

from ._core import (
    Dataset,
    Environment,
    ModelBundle,
    ause,
    evaluate,
    fit_threshold,
    fuse_average,
    fuse_ivw,
    fuse_sp,
    gen_dataset,
    integrity_risk,
    mean_error,
    oracle_curve,
    predict,
    sp_adjust,
    sparsification_curve,
    train,
    __version__,
)

__all__ = [
    "Dataset",
    "Environment",
    "ModelBundle",
    "ause",
    "evaluate",
    "fit_threshold",
    "fuse_average",
    "fuse_ivw",
    "fuse_sp",
    "gen_dataset",
    "integrity_risk",
    "mean_error",
    "oracle_curve",
    "predict",
    "sp_adjust",
    "sparsification_curve",
    "train",
    "__version__",
]
