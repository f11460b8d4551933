"""Cross-batch FIFO memory of detached embeddings with delayed activation."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .supcon import BONAFIDE, QueueView


@dataclass(frozen=True)
class QueueSchedule:
    """``capacity == 0`` disables the queue for the whole run."""

    start_epoch: int = 6
    capacity: int = 0

    def __post_init__(self):
        if self.start_epoch < 0 or self.capacity < 0:
            raise DomainError("queue start_epoch and capacity must be non-negative")


class EmbeddingQueue:
    """Ring buffer of (embedding, label) pairs.

    Entries are stored as copies; nothing handed out by :meth:`view` aliases
    the storage, so callers cannot feed gradients back into it.
    """

    def __init__(self, capacity: int, dim: int, enabled: bool = False):
        if capacity < 0:
            raise DomainError("capacity must be non-negative")
        self.capacity = int(capacity)
        self.dim = int(dim)
        self.enabled = bool(enabled) and self.capacity > 0
        self._emb = np.zeros((self.capacity, self.dim))
        self._lab = np.zeros(self.capacity, dtype=np.int64)
        self._head = 0  # index of the oldest entry
        self._size = 0
        self.rejected_enqueues = 0

    def __len__(self):
        return self._size

    def _order(self):
        return (self._head + np.arange(self._size)) % max(self.capacity, 1)

    def view(self) -> QueueView:
        idx = self._order()
        return QueueView(self._emb[idx].copy(), self._lab[idx].copy())

    @property
    def embeddings(self) -> np.ndarray:
        return self.view().embeddings

    @property
    def labels(self) -> np.ndarray:
        return self.view().labels

    def enqueue(self, embeddings, labels) -> bool:
        """Append a batch in order, evicting the oldest entries past capacity.

        Returns False (and leaves the queue untouched) while disabled.
        """
        if not self.enabled:
            self.rejected_enqueues += 1
            return False
        emb = np.array(embeddings, dtype=np.float64, copy=True)
        lab = np.asarray(labels, dtype=np.int64)
        if emb.ndim != 2 or emb.shape[1] != self.dim or emb.shape[0] != lab.shape[0]:
            raise DomainError(f"expected ({lab.shape[0]}, {self.dim}) embeddings, got {emb.shape}")
        if emb.shape[0] > self.capacity:
            emb, lab = emb[-self.capacity:], lab[-self.capacity:]
        n = emb.shape[0]
        tail = (self._head + self._size) % self.capacity
        slots = (tail + np.arange(n)) % self.capacity
        self._emb[slots] = emb
        self._lab[slots] = lab
        overflow = max(0, self._size + n - self.capacity)
        self._head = (self._head + overflow) % self.capacity
        self._size = min(self.capacity, self._size + n)
        return True

    def negatives_for(self, anchor_label) -> np.ndarray:
        """Opposite-label entries, oldest first."""
        v = self.view()
        return v.embeddings[v.labels != anchor_label]

    def maybe_enable(self, schedule: QueueSchedule, completed_epochs: int) -> bool:
        """Switch on once ``completed_epochs >= start_epoch``; never switches off."""
        if not self.enabled and self.capacity > 0 and schedule.capacity > 0:
            if completed_epochs >= schedule.start_epoch:
                self.enabled = True
        return self.enabled

    @classmethod
    def from_schedule(cls, schedule: QueueSchedule, dim: int) -> "EmbeddingQueue":
        return cls(schedule.capacity, dim, enabled=False)

    def state_dict(self) -> dict:
        v = self.view()
        return {"embeddings": v.embeddings, "labels": v.labels, "enabled": self.enabled}

    def dump_jsonl(self, path, id_prefix="queue") -> int:
        """Write the contents, oldest first, in the embedding JSONL format."""
        v = self.view()
        with open(path, "w") as fh:
            for k, (vec, lab) in enumerate(zip(v.embeddings, v.labels)):
                rec = {
                    "id": f"{id_prefix}-{k:06d}",
                    "label": "bonafide" if lab == BONAFIDE else "spoof",
                    "vector": vec.tolist(),
                }
                fh.write(json.dumps(rec) + "\n")
        return len(v.labels)
