"""Synthetic bona fide / spoof frame data, dataset files and embedding JSONL.

Each utterance is a (T, F) frame matrix drawn around a cluster direction::

    frames = direction + utterance_offset + channel_shift + frame_noise

with ``frame_noise ~ N(0, sigma^2)`` per component and
``utterance_offset ~ N(0, sigma^2 / concentration)`` shared by all frames of
the utterance. Mean pooling therefore recovers the cluster signal. Spoof
audio is spread over several subclusters; the out-of-domain evaluation
splits draw some or all spoofs from subclusters never seen in training, add
more frame noise and a constant channel offset.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Optional

import numpy as np

from .archive import read_archive, write_npz
from .errors import ConfigError, DomainError, FormatError
from .geometry import l2_normalize
from .model import FrameBatch
from .supcon import BONAFIDE, SPOOF

LABEL_TO_INT = {"bonafide": BONAFIDE, "spoof": SPOOF}
INT_TO_LABEL = {v: k for k, v in LABEL_TO_INT.items()}
MANIFEST_FORMAT = "supcon-lab-dataset"


@dataclass(frozen=True)
class Subcluster:
    concentration: float = 4.0
    direction: Optional[tuple] = None  # None: derived from the seed


@dataclass(frozen=True)
class OODSplit:
    name: str
    ood_fraction: float = 1.0  # share of spoofs taken from the OOD-only subclusters
    noise_scale: float = 1.0  # multiplier on frame_noise_sigma
    channel_shift: float = 0.0  # norm of a constant per-split offset added to every frame


def _default_spoof():
    return [Subcluster(), Subcluster(), Subcluster()]


def _default_ood():
    return [Subcluster(), Subcluster()]


def _default_ood_splits():
    return [
        OODSplit("eval_ood_wild", ood_fraction=1.0, noise_scale=1.5, channel_shift=0.3),
        OODSplit("eval_ood_df", ood_fraction=0.5, noise_scale=1.25, channel_shift=0.2),
        OODSplit("eval_ood_la", ood_fraction=0.0, noise_scale=1.25, channel_shift=0.3),
    ]


@dataclass(frozen=True)
class SyntheticSpec:
    dim: int = 32
    frames: int = 20
    length_jitter: float = 0.5  # lengths uniform in [T(1 - j), T(1 + j)]
    n_train: int = 2000
    n_dev: int = 500
    n_eval: int = 500
    bona_center: Optional[tuple] = None
    bona_concentration: float = 4.0
    spoof_subclusters: list = field(default_factory=_default_spoof)
    ood_subclusters: list = field(default_factory=_default_ood)
    # angles (degrees) from the bona fide center used when a direction is None
    spoof_angle_deg: float = 80.0
    ood_angle_deg: float = 50.0
    frame_noise_sigma: float = 0.3
    bonafide_fraction: float = 0.5
    ood_splits: list = field(default_factory=_default_ood_splits)
    seed: int = 1337

    def __post_init__(self):
        def _sub(x):
            return x if isinstance(x, Subcluster) else Subcluster(**x)

        object.__setattr__(self, "spoof_subclusters", [_sub(x) for x in self.spoof_subclusters])
        object.__setattr__(self, "ood_subclusters", [_sub(x) for x in self.ood_subclusters])
        object.__setattr__(
            self, "ood_splits", [x if isinstance(x, OODSplit) else OODSplit(**x) for x in self.ood_splits]
        )
        self.validate()

    def validate(self):
        if self.dim < 2 or self.frames < 1:
            raise ConfigError("dim must be >= 2 and frames >= 1")
        if not 0 <= self.length_jitter < 1:
            raise ConfigError("length_jitter must lie in [0, 1)")
        if min(self.n_train, self.n_dev, self.n_eval) < 2:
            raise ConfigError("every split needs at least 2 utterances")
        if not self.spoof_subclusters:
            raise ConfigError("at least one spoof subcluster is required")
        if not 0 < self.bonafide_fraction < 1:
            raise ConfigError("bonafide_fraction must lie in (0, 1)")
        if self.frame_noise_sigma < 0:
            raise ConfigError("frame_noise_sigma must be >= 0")
        clusters = list(self.spoof_subclusters) + list(self.ood_subclusters)
        if self.bona_concentration <= 0 or any(c.concentration <= 0 for c in clusters):
            raise ConfigError("concentrations must be > 0")
        for d in [self.bona_center] + [c.direction for c in clusters]:
            if d is not None:
                if len(d) != self.dim:
                    raise ConfigError(f"direction of length {len(d)} in a {self.dim}-dim spec")
                if abs(np.linalg.norm(d) - 1.0) > 1e-6:
                    raise ConfigError("cluster directions must be unit-norm")
        names = [s.name for s in self.ood_splits]
        if len(set(names)) != len(names) or set(names) & {"train", "dev", "eval_id"}:
            raise ConfigError(f"OOD split names must be unique and not reuse base split names: {names}")
        for s in self.ood_splits:
            if s.ood_fraction > 0 and not self.ood_subclusters:
                raise ConfigError(f"split {s.name} wants OOD spoofs but no ood_subclusters are defined")
            if not 0 <= s.ood_fraction <= 1 or s.noise_scale < 0 or s.channel_shift < 0:
                raise ConfigError(f"invalid OOD split {s.name}")

    def split_names(self) -> list[str]:
        return ["train", "dev", "eval_id"] + [s.name for s in self.ood_splits]


class Dataset:
    """Packed variable-length utterances with labels, ids and cluster tags.

    Cluster tag 0 is bona fide, 1..k the in-domain spoof subclusters and
    k+1.. the OOD-only ones.
    """

    def __init__(self, name, frames, lengths, labels, ids, clusters=None):
        self.name = name
        self.frames = np.asarray(frames, dtype=np.float64)
        self.lengths = np.asarray(lengths, dtype=np.int64)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.ids = [str(i) for i in ids]
        self.clusters = np.zeros(len(self.ids), dtype=np.int64) if clusters is None else np.asarray(clusters, np.int64)
        if not (len(self.lengths) == len(self.labels) == len(self.ids) == len(self.clusters)):
            raise DomainError("dataset fields differ in length")
        if self.lengths.sum() != self.frames.shape[0]:
            raise DomainError("frame count does not match lengths")
        if len(self.lengths) and self.lengths.min() < 1:
            raise DomainError("utterances must have at least one frame")
        self.starts = np.concatenate([[0], np.cumsum(self.lengths)[:-1]]).astype(np.int64)

    def __len__(self):
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def utterance(self, i) -> np.ndarray:
        return self.frames[self.starts[i] : self.starts[i] + self.lengths[i]]

    def utterances(self, indices=None) -> list[np.ndarray]:
        idx = range(len(self)) if indices is None else indices
        return [self.utterance(i) for i in idx]

    def frame_batch(self, indices=None) -> FrameBatch:
        if indices is None:
            return FrameBatch(self.frames, self.lengths)
        return FrameBatch.from_list(self.utterances(indices))

    def class_counts(self) -> dict:
        return {"bonafide": int((self.labels == BONAFIDE).sum()), "spoof": int((self.labels == SPOOF).sum())}

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "frames": self.frames,
            "lengths": self.lengths,
            "labels": self.labels,
            "clusters": self.clusters,
            "ids": np.array(self.ids, dtype=np.str_),
        }

    def save(self, path) -> None:
        write_npz(path, self.arrays())

    @classmethod
    def load(cls, path, name=None) -> "Dataset":
        try:
            a, _ = read_archive(path)
            return cls(name or Path(path).stem, a["frames"], a["lengths"], a["labels"], a["ids"].tolist(), a["clusters"])
        except (OSError, KeyError, ValueError) as exc:
            raise FormatError(f"cannot read dataset: {exc}", path=path) from exc


def _direction_at_angle(center, angle_deg, rng):
    """Unit vector at ``angle_deg`` from ``center`` in a random orthogonal direction."""
    r = rng.standard_normal(center.shape[0])
    r -= (r @ center) * center
    r = l2_normalize(r)
    a = math.radians(angle_deg)
    return math.cos(a) * center + math.sin(a) * r


def cluster_directions(spec: SyntheticSpec):
    """(bona center, in-domain spoof directions, OOD spoof directions, channel directions)."""
    rng = np.random.default_rng([spec.seed, 0])
    bona = np.asarray(spec.bona_center, dtype=np.float64) if spec.bona_center else l2_normalize(rng.standard_normal(spec.dim))
    spoof = [
        np.asarray(c.direction, dtype=np.float64) if c.direction else _direction_at_angle(bona, spec.spoof_angle_deg, rng)
        for c in spec.spoof_subclusters
    ]
    ood = [
        np.asarray(c.direction, dtype=np.float64) if c.direction else _direction_at_angle(bona, spec.ood_angle_deg, rng)
        for c in spec.ood_subclusters
    ]
    channels = [l2_normalize(rng.standard_normal(spec.dim)) for _ in spec.ood_splits]
    return bona, spoof, ood, channels


def _generate_split(spec, name, n, rng, bona, clusters, ood_clusters, ood_fraction, sigma, shift):
    n_bona = int(round(n * spec.bonafide_fraction))
    labels = np.array([BONAFIDE] * n_bona + [SPOOF] * (n - n_bona))
    rng.shuffle(labels)
    lo = max(1, int(round(spec.frames * (1 - spec.length_jitter))))
    hi = max(lo, int(round(spec.frames * (1 + spec.length_jitter))))
    lengths = rng.integers(lo, hi + 1, size=n)
    k_id = len(clusters)
    tags = np.zeros(n, dtype=np.int64)
    chunks = []
    for i in range(n):
        if labels[i] == BONAFIDE:
            center, kappa, tag = bona, spec.bona_concentration, 0
        elif ood_clusters and rng.random() < ood_fraction:
            j = int(rng.integers(len(ood_clusters)))
            (center, kappa), tag = ood_clusters[j], 1 + k_id + j
        else:
            j = int(rng.integers(k_id))
            (center, kappa), tag = clusters[j], 1 + j
        tags[i] = tag
        offset = rng.standard_normal(spec.dim) * (sigma / math.sqrt(kappa))
        noise = rng.standard_normal((lengths[i], spec.dim)) * sigma
        chunks.append(center + offset + shift + noise)
    ids = [f"{name}-{i:06d}" for i in range(n)]
    return Dataset(name, np.concatenate(chunks), lengths, labels, ids, tags)


def generate(spec: SyntheticSpec) -> dict[str, Dataset]:
    """All splits: train, dev, eval_id and one per configured OOD split."""
    spec.validate()
    bona, spoof_dirs, ood_dirs, channels = cluster_directions(spec)
    clusters = [(d, c.concentration) for d, c in zip(spoof_dirs, spec.spoof_subclusters)]
    ood_clusters = [(d, c.concentration) for d, c in zip(ood_dirs, spec.ood_subclusters)]
    sigma = spec.frame_noise_sigma
    zero = np.zeros(spec.dim)
    out = {}
    base = [("train", spec.n_train), ("dev", spec.n_dev), ("eval_id", spec.n_eval)]
    for k, (name, n) in enumerate(base, start=1):
        rng = np.random.default_rng([spec.seed, k])
        out[name] = _generate_split(spec, name, n, rng, bona, clusters, [], 0.0, sigma, zero)
    for k, (split, chan) in enumerate(zip(spec.ood_splits, channels), start=len(base) + 1):
        rng = np.random.default_rng([spec.seed, k])
        out[split.name] = _generate_split(
            spec, split.name, spec.n_eval, rng, bona, clusters, ood_clusters,
            split.ood_fraction, sigma * split.noise_scale, split.channel_shift * chan,
        )
    return out


def chunk_or_pad(frames, target_T: int, mode: str, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Fixed-length chunking.

    train: random crop when longer, zero-pad at the end when shorter.
    eval: keep the first ``target_T`` frames; shorter input is returned as is.
    Eval mode never touches ``rng``.
    """
    if target_T < 1:
        raise DomainError("target_T must be >= 1")
    x = np.asarray(frames, dtype=np.float64)
    T = x.shape[0]
    if mode == "eval":
        return x[:target_T]
    if mode != "train":
        raise DomainError(f"unknown chunking mode {mode!r}")
    if T > target_T:
        if rng is None:
            raise DomainError("train-mode cropping needs an rng")
        start = int(rng.integers(0, T - target_T + 1))
        return x[start : start + target_T]
    if T < target_T:
        return np.concatenate([x, np.zeros((target_T - T, x.shape[1]))])
    return x


# -- manifests ---------------------------------------------------------------


def write_dataset(splits: dict[str, Dataset], out_dir, spec: Optional[SyntheticSpec] = None) -> Path:
    """Save every split as ``<name>.npz`` plus ``manifest.json``; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name, ds in splits.items():
        ds.save(out / f"{name}.npz")
        entries[name] = {"path": f"{name}.npz", "count": len(ds), **ds.class_counts()}
    manifest = {"format": MANIFEST_FORMAT, "version": 1, "splits": entries}
    if spec is not None:
        manifest["spec"] = asdict(spec)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1) + "\n")
    return path


def load_manifest(path) -> dict[str, Dataset]:
    """Load every split listed in a manifest. ``.jsonl`` entries are read as
    embedding files, one single-frame utterance per record."""
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read manifest: {exc}", path=path) from exc
    if manifest.get("format") != MANIFEST_FORMAT:
        raise FormatError("not a dataset manifest", path=path)
    out = {}
    for name, entry in manifest["splits"].items():
        p = path.parent / entry["path"]
        ds = embeddings_dataset(p, name) if p.suffix == ".jsonl" else Dataset.load(p, name)
        if "count" in entry and entry["count"] != len(ds):
            raise FormatError(f"split {name}: manifest says {entry['count']} utterances, file has {len(ds)}", path=path)
        out[name] = ds
    return out


# -- embedding JSONL -----------------------------------------------------------


class EmbeddingRecord(NamedTuple):
    id: str
    label: str
    vector: np.ndarray


def load_embeddings(path, dim: Optional[int] = None) -> Iterator[EmbeddingRecord]:
    """Stream records from ``{"id", "label", "vector"}`` JSON lines, l2-normalized.

    Errors name the offending line. Dimension is fixed by ``dim`` or by the
    first record.
    """
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                uid, label, vec = rec["id"], rec["label"], rec["vector"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise FormatError(f"malformed record ({exc})", path=path, line=lineno) from None
            if label not in LABEL_TO_INT:
                raise FormatError(f"unknown label {label!r}", path=path, line=lineno)
            try:
                v = np.asarray(vec, dtype=np.float64)
            except (TypeError, ValueError):
                raise FormatError("vector is not a list of numbers", path=path, line=lineno) from None
            if v.ndim != 1 or v.size == 0:
                raise FormatError("vector must be a non-empty flat list", path=path, line=lineno)
            if dim is None:
                dim = v.size
            elif v.size != dim:
                raise FormatError(f"dimension {v.size}, expected {dim}", path=path, line=lineno)
            try:
                v = l2_normalize(v)
            except DomainError as exc:
                raise FormatError(str(exc), path=path, line=lineno) from None
            yield EmbeddingRecord(str(uid), label, v)


def dump_embeddings(records, path) -> int:
    n = 0
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps({"id": rec.id, "label": rec.label, "vector": [float(x) for x in rec.vector]}) + "\n")
            n += 1
    return n


def embeddings_batch(path):
    """Whole file as ``(embeddings (N, D), labels (N,), ids)``."""
    recs = list(load_embeddings(path))
    if not recs:
        return np.zeros((0, 0)), np.zeros(0, dtype=np.int64), []
    return (
        np.stack([r.vector for r in recs]),
        np.array([LABEL_TO_INT[r.label] for r in recs]),
        [r.id for r in recs],
    )


def embeddings_dataset(path, name=None) -> Dataset:
    z, y, ids = embeddings_batch(path)
    if not ids:
        raise FormatError("embedding file is empty", path=path)
    return Dataset(name or Path(path).stem, z, np.ones(len(ids), dtype=np.int64), y, ids)
