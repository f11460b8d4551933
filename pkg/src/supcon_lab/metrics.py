"""Equal error rate, pooled EER and two-column score/label files."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, FormatError

LABEL_NAMES = {"bonafide": 1, "spoof": 0}
POOLED_ORDER = ("in_domain", "ood_wild", "ood_df", "ood_la")


@dataclass
class ScoreSet:
    ids: list
    scores: np.ndarray
    labels: np.ndarray  # 1 = bonafide, 0 = spoof

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if not (len(self.ids) == len(self.scores) == len(self.labels)):
            raise DomainError("ids, scores and labels differ in length")


def eer(scores, labels=None):
    """ASVspoof-style EER in percent and the threshold it was taken at.

    Candidate thresholds are the sorted unique scores plus -inf/+inf. With
    FAR = spoof share scoring >= t and FRR = bona fide share scoring < t, the
    threshold minimizing |FAR - FRR| is chosen (lowest on ties) and
    (FAR + FRR) / 2 is reported. The comparison is done in integer counts so
    exact ties stay ties.
    """
    if isinstance(scores, ScoreSet):
        scores, labels = scores.scores, scores.labels
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise DomainError("scores and labels differ in shape")
    if not np.all(np.isfinite(s)):
        raise DomainError("scores must be finite")
    bona = np.sort(s[y == 1])
    spoof = np.sort(s[y == 0])
    nb, ns = len(bona), len(spoof)
    if nb == 0 or ns == 0:
        raise DomainError("EER needs at least one bona fide and one spoof score")
    thr = np.concatenate([[-np.inf], np.unique(s), [np.inf]])
    fa = ns - np.searchsorted(spoof, thr, side="left")  # spoof >= t
    fr = np.searchsorted(bona, thr, side="left")  # bona < t
    gap = np.abs(fa.astype(np.int64) * nb - fr.astype(np.int64) * ns)
    k = int(np.argmin(gap))
    # (FAR + FRR) / 2 in percent, with a single rounding
    value = 100 * (int(fa[k]) * nb + int(fr[k]) * ns) / (2 * ns * nb)
    return float(value), float(thr[k])


def pooled_eer(eers) -> float:
    """Arithmetic mean of exactly four per-benchmark EERs
    (in-domain eval, wild, DF, LA)."""
    vals = [float(e) for e in eers]
    if len(vals) != 4:
        raise DomainError(f"pooled EER takes exactly 4 values, got {len(vals)}")
    return sum(vals) / 4.0


def _read_two_column(path, what):
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise FormatError(f"expected '<id> <{what}>', got {line.strip()!r}", path=path, line=lineno)
            rows.append((parts[0], parts[1], lineno))
    return rows


def read_scores(score_path, label_path) -> ScoreSet:
    """Join ``utt_id score`` lines with ``utt_id label`` lines on id."""
    labels = {}
    for uid, lab, lineno in _read_two_column(label_path, "label"):
        if lab not in LABEL_NAMES:
            raise FormatError(f"unknown label {lab!r}", path=label_path, line=lineno)
        if uid in labels:
            raise FormatError(f"duplicate id {uid!r}", path=label_path, line=lineno)
        labels[uid] = LABEL_NAMES[lab]
    ids, scores, seen = [], [], set()
    for uid, val, lineno in _read_two_column(score_path, "score"):
        if uid in seen:
            raise FormatError(f"duplicate id {uid!r}", path=score_path, line=lineno)
        try:
            score = float(val)
        except ValueError:
            raise FormatError(f"bad score {val!r}", path=score_path, line=lineno) from None
        seen.add(uid)
        ids.append(uid)
        scores.append(score)
    unmatched = [u for u in ids if u not in labels]
    if unmatched:
        raise FormatError(f"scored ids without a label: {', '.join(unmatched)}", path=score_path)
    return ScoreSet(ids, np.array(scores), np.array([labels[u] for u in ids]))


def write_scores(scoreset: ScoreSet, path, label_path=None) -> None:
    """Write ``utt_id score`` lines (repr floats, lossless) and optionally the label file."""
    with open(path, "w") as fh:
        for uid, sc in zip(scoreset.ids, scoreset.scores):
            fh.write(f"{uid} {float(sc)!r}\n")
    if label_path is not None:
        names = {v: k for k, v in LABEL_NAMES.items()}
        with open(label_path, "w") as fh:
            for uid, lab in zip(scoreset.ids, scoreset.labels):
                fh.write(f"{uid} {names[int(lab)]}\n")
