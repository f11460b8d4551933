"""Supervised contrastive learning with cosine or geodesic similarity and a
delayed cross-batch negative queue, in a two-stage train/freeze pipeline."""

import os as _os

# Must run before numpy spins up its BLAS pool.
_threads = _os.environ.get("SUPCON_LAB_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .geometry import SimilarityKind, l2_normalize, sim_cosine, sim_geodesic, sim_gradient  # noqa: E402
from .metrics import eer, pooled_eer  # noqa: E402
from .supcon import LossConfig, build_candidate_set, supcon_loss, supcon_loss_grad  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "LossConfig",
    "SimilarityKind",
    "build_candidate_set",
    "eer",
    "l2_normalize",
    "pooled_eer",
    "sim_cosine",
    "sim_geodesic",
    "sim_gradient",
    "supcon_loss",
    "supcon_loss_grad",
]
