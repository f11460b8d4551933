"""Hyperspherical embedding primitives.

Two similarities are supported on unit-norm embeddings:

* cosine:   ``d = a.b``
* geodesic: ``1 - 2*theta/pi`` with ``theta = arccos(clip(d, -1, 1))``

Both live in [-1, 1] and agree at the endpoints; the geodesic form is linear
in the angle, so its slope with respect to ``theta`` is the constant ``-2/pi``.
All math is float64.

arccos is ill-conditioned at d = +-1: the dot of a normalized vector with
itself lands a few ulps below 1, which arccos turns into a 2e-8 angle. The
pairwise functions therefore treat any dot within ``POLE_SNAP`` of +-1 as the
pole itself. That keeps them monotone in the float dot product (so rankings
match the cosine exactly) and makes the endpoints exact. The loss only sees
dot products and uses the plain arccos route.
"""

from __future__ import annotations

import enum

import numpy as np

from .errors import DomainError

# Clamp on the dot product used only in the geodesic derivative, bounding
# 1/sqrt(1 - d^2) near d = +-1.
GEODESIC_GRAD_EPS = 1e-7


class SimilarityKind(str, enum.Enum):
    COSINE = "cosine"
    GEODESIC = "geodesic"

    @classmethod
    def parse(cls, value: "str | SimilarityKind") -> "SimilarityKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise DomainError(f"unknown similarity kind {value!r}") from None


def l2_normalize(v) -> np.ndarray:
    """Scale ``v`` to unit Euclidean norm.

    Raises DomainError for zero or non-finite input.
    """
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise DomainError("cannot normalize a non-finite vector")
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise DomainError("cannot normalize the zero vector")
    return v / norm


def normalize_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise l2 normalization. Returns ``(unit_rows, norms)``."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DomainError("cannot normalize non-finite rows")
    norms = np.linalg.norm(x, axis=-1)
    if np.any(norms == 0.0):
        bad = np.flatnonzero(norms == 0.0)
        raise DomainError(f"cannot normalize zero rows at indices {bad.tolist()}")
    return x / norms[..., None], norms


def _clip_unit(d):
    return np.clip(d, -1.0, 1.0)


def sim_cosine(a, b) -> float:
    return float(_clip_unit(np.dot(a, b)))


# Normalization leaves |a.a| within about 3 ulps of 1; anything this close
# to +-1 is indistinguishable from the pole.
POLE_SNAP = 16 * np.finfo(np.float64).eps


def _snapped_geodesic(d):
    d = _clip_unit(d)
    d = np.where(d >= 1.0 - POLE_SNAP, 1.0, np.where(d <= -1.0 + POLE_SNAP, -1.0, d))
    return 1.0 - 2.0 * np.arccos(d) / np.pi


def sim_geodesic(a, b) -> float:
    return float(_snapped_geodesic(np.dot(a, b)))


def similarity(kind, a, b) -> float:
    kind = SimilarityKind.parse(kind)
    if kind is SimilarityKind.COSINE:
        return sim_cosine(a, b)
    return sim_geodesic(a, b)


def similarity_from_dots(kind, dots: np.ndarray) -> np.ndarray:
    """Map clipped dot products to similarities, elementwise."""
    kind = SimilarityKind.parse(kind)
    d = _clip_unit(np.asarray(dots, dtype=np.float64))
    if kind is SimilarityKind.COSINE:
        return d
    return 1.0 - 2.0 * np.arccos(d) / np.pi


def similarity_matrix(kind, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Pairwise similarities between rows of ``x`` (n, D) and ``y`` (m, D)."""
    kind = SimilarityKind.parse(kind)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    dots = x @ y.T
    if kind is SimilarityKind.COSINE:
        return _clip_unit(dots)
    return _snapped_geodesic(dots)


def dsim_ddot(kind, dots: np.ndarray) -> np.ndarray:
    """Derivative of the similarity with respect to the raw dot product.

    For the geodesic kind the dot product is clamped to
    ``[-1 + eps, 1 - eps]`` before evaluating ``(2/pi) / sqrt(1 - d^2)``.
    """
    kind = SimilarityKind.parse(kind)
    dots = np.asarray(dots, dtype=np.float64)
    if kind is SimilarityKind.COSINE:
        return np.ones_like(dots)
    d = np.clip(dots, -1.0 + GEODESIC_GRAD_EPS, 1.0 - GEODESIC_GRAD_EPS)
    return (2.0 / np.pi) / np.sqrt(1.0 - d * d)


def sim_gradient(kind, a, b) -> tuple[np.ndarray, np.ndarray]:
    """Partial derivatives of ``sim(a, b)`` with respect to ``a`` and ``b``.

    The inputs are treated as free vectors (no projection onto the sphere),
    matching what a chain rule through a normalization layer expects.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = float(dsim_ddot(kind, np.dot(a, b)))
    return scale * b, scale * a
