"""Supervised contrastive loss over batch-only or queue-augmented candidates.

For anchor ``i`` with positives ``P(i)`` (same label, current batch, not
``i``) and candidates ``A(i)`` (every other batch member plus every queued
embedding with the opposite label)::

    loss_i = logsumexp_{a in A(i)} s_ia/tau - mean_{p in P(i)} s_ip/tau

The total is the sum over anchors that have at least one positive. Anchors
without positives are skipped and do not count towards the mean.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import DomainError
from .geometry import SimilarityKind, dsim_ddot, similarity_from_dots

BONAFIDE = 1
SPOOF = 0


@dataclass(frozen=True)
class LossConfig:
    temperature: float
    similarity: SimilarityKind = SimilarityKind.COSINE

    def __post_init__(self):
        if not self.temperature > 0:
            raise DomainError(f"temperature must be > 0, got {self.temperature}")
        object.__setattr__(self, "similarity", SimilarityKind.parse(self.similarity))


class QueueView(NamedTuple):
    """Read-only snapshot of queue contents, oldest entry first."""

    embeddings: np.ndarray  # (M, D)
    labels: np.ndarray  # (M,)


class CandidateSet(NamedTuple):
    batch_indices: np.ndarray
    queue_refs: np.ndarray


@dataclass
class SupConResult:
    loss: float  # sum over anchors with positives
    per_anchor: np.ndarray  # 0 for skipped anchors
    valid: np.ndarray  # anchors with |P(i)| > 0
    no_positives: bool  # every anchor was skipped
    grad: Optional[np.ndarray] = None  # d(loss)/d(embeddings), same reduction as requested

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())

    @property
    def mean(self) -> float:
        return self.loss / self.n_valid if self.n_valid else 0.0


def _as_queue_view(queue) -> Optional[QueueView]:
    if queue is None:
        return None
    if isinstance(queue, QueueView):
        return queue
    if hasattr(queue, "view"):
        return queue.view()
    emb, lab = queue
    return QueueView(np.asarray(emb, dtype=np.float64), np.asarray(lab))


def _check_batch(embeddings, labels):
    z = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels)
    if z.ndim != 2:
        raise DomainError("embeddings must be a (B, D) array")
    if z.shape[0] != y.shape[0]:
        raise DomainError(f"{z.shape[0]} embeddings but {y.shape[0]} labels")
    if z.shape[0] < 2:
        raise DomainError("a batch needs at least two embeddings")
    return z, y


def build_candidate_set(anchor_index: int, labels, queue=None) -> CandidateSet:
    """Denominator members for one anchor: batch non-self plus opposite-label queue."""
    labels = np.asarray(labels)
    if not 0 <= anchor_index < labels.shape[0]:
        raise IndexError(anchor_index)
    batch = np.flatnonzero(np.arange(labels.shape[0]) != anchor_index)
    qv = _as_queue_view(queue)
    if qv is None or len(qv.labels) == 0:
        refs = np.empty(0, dtype=np.intp)
    else:
        refs = np.flatnonzero(np.asarray(qv.labels) != labels[anchor_index])
    return CandidateSet(batch, refs)


def _supcon(z, y, config: LossConfig, queue, want_grad: bool, reduction: str):
    if reduction not in ("sum", "mean"):
        raise ValueError(f"reduction must be 'sum' or 'mean', got {reduction!r}")
    B = z.shape[0]
    tau = config.temperature
    kind = config.similarity
    qv = _as_queue_view(queue)

    same = y[:, None] == y[None, :]
    not_self = ~np.eye(B, dtype=bool)
    pos = same & not_self
    n_pos = pos.sum(axis=1)
    valid = n_pos > 0

    dots = z @ z.T
    logits = similarity_from_dots(kind, dots) / tau

    if qv is not None and len(qv.labels):
        q = np.asarray(qv.embeddings, dtype=np.float64)
        qdots = z @ q.T
        qlogits = similarity_from_dots(kind, qdots) / tau
        qmask = y[:, None] != np.asarray(qv.labels)[None, :]
    else:
        q = qdots = qlogits = qmask = None

    # stabilized log-sum-exp over A(i)
    row_max = np.max(np.where(not_self, logits, -np.inf), axis=1)
    if qmask is not None:
        row_max = np.maximum(row_max, np.max(np.where(qmask, qlogits, -np.inf), axis=1))
    # log(denom) is taken as log1p of everything but the row maximum (which
    # is exactly 1): a lone dominant positive otherwise cancels against the
    # positive mean. Batch and queue parts are summed separately so a fully
    # masked queue adds exactly zero.
    exp_b = np.where(not_self, np.exp(logits - row_max[:, None]), 0.0)
    rows = np.arange(B)
    top_b = np.max(exp_b, axis=1) >= 1.0
    rest_b = exp_b.copy()
    rest_b[rows[top_b], np.argmax(exp_b, axis=1)[top_b]] = 0.0
    denom = exp_b.sum(axis=1)
    rest = rest_b.sum(axis=1)
    if qmask is not None:
        exp_q = np.where(qmask, np.exp(qlogits - row_max[:, None]), 0.0)
        rest_q = exp_q.copy()
        top_q = ~top_b
        rest_q[rows[top_q], np.argmax(exp_q, axis=1)[top_q]] = 0.0
        denom = denom + exp_q.sum(axis=1)
        rest = rest + rest_q.sum(axis=1)
    log_denom = np.log1p(rest)

    safe_npos = np.where(valid, n_pos, 1)
    pos_mean = np.where(pos, logits, 0.0).sum(axis=1) / safe_npos
    per_anchor = np.where(valid, (row_max - pos_mean) + log_denom, 0.0)

    # fixed-order reduction for reproducibility
    total = float(np.sum(per_anchor))
    n_valid = int(valid.sum())
    no_pos = n_valid == 0
    if no_pos:
        warnings.warn("no anchor in the batch has a positive; loss is 0", RuntimeWarning, stacklevel=3)

    grad = None
    if want_grad:
        scale = 1.0 if reduction == "sum" else (1.0 / n_valid if n_valid else 0.0)
        w = np.where(valid, scale, 0.0)[:, None]
        # d loss / d logit_ij = softmax_ij - [j in P(i)] / |P(i)|
        soft = exp_b / denom[:, None]
        g_logit = w * (soft - pos / safe_npos[:, None])
        g_dot = g_logit / tau * dsim_ddot(kind, dots)
        grad = g_dot @ z + g_dot.T @ z
        if qmask is not None:
            g_qdot = w * (exp_q / denom[:, None]) / tau * dsim_ddot(kind, qdots)
            grad = grad + g_qdot @ q
    return SupConResult(total, per_anchor, valid, no_pos, grad)


def supcon_loss(embeddings, labels, config: LossConfig, queue=None) -> SupConResult:
    """Loss value and per-anchor terms. ``queue`` may be an EmbeddingQueue,
    a QueueView or an ``(embeddings, labels)`` pair; queued entries only
    ever enter the denominator."""
    z, y = _check_batch(embeddings, labels)
    return _supcon(z, y, config, queue, want_grad=False, reduction="sum")


def supcon_loss_grad(embeddings, labels, config: LossConfig, queue=None, reduction="sum") -> np.ndarray:
    """Gradient of the loss with respect to the batch embeddings only.

    Queue entries are constants here; the result has shape (B, D).
    """
    z, y = _check_batch(embeddings, labels)
    return _supcon(z, y, config, queue, want_grad=True, reduction=reduction).grad


def supcon_loss_and_grad(embeddings, labels, config: LossConfig, queue=None, reduction="mean") -> SupConResult:
    z, y = _check_batch(embeddings, labels)
    return _supcon(z, y, config, queue, want_grad=True, reduction=reduction)
