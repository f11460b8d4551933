"""Frame encoder -> projection -> mean pool -> l2 normalize, plus a linear classifier.

The per-frame encoder is a small two-layer tanh network (or the identity,
for externally produced features). Projection and pooling are both linear,
so pooling is done on encoder features before projecting; the result is the
same as projecting every frame first.

Gradients are hand-derived and checked against central differences in the
test suite.
"""

from __future__ import annotations

import hashlib
import json
import zipfile
from dataclasses import asdict, dataclass
from typing import NamedTuple, Optional

import numpy as np

from .archive import npy_bytes, read_archive, write_archive
from .errors import DomainError, FormatError, NonFiniteError
from .geometry import normalize_rows
from .supcon import LossConfig, supcon_loss_and_grad

CHECKPOINT_FORMAT = "supcon-lab-checkpoint"
CHECKPOINT_VERSION = 1

ENCODER = "encoder"
PROJECTION = "projection"
CLASSIFIER = "classifier"

BIAS_NAMES = frozenset({"encoder.b1", "encoder.b2", "projection.b", "classifier.b"})


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 32
    hidden_dim: int = 64
    feature_dim: int = 64
    embed_dim: int = 256
    encoder: str = "mlp"  # "mlp" or "identity"

    def __post_init__(self):
        if self.encoder not in ("mlp", "identity"):
            raise DomainError(f"unknown encoder {self.encoder!r}")
        for name in ("input_dim", "hidden_dim", "feature_dim", "embed_dim"):
            if getattr(self, name) < 1:
                raise DomainError(f"{name} must be >= 1")

    @property
    def encoder_out_dim(self) -> int:
        return self.input_dim if self.encoder == "identity" else self.feature_dim

    def shapes(self) -> dict[str, tuple[int, ...]]:
        F, H, E, D = self.input_dim, self.hidden_dim, self.encoder_out_dim, self.embed_dim
        shapes = {}
        if self.encoder == "mlp":
            shapes.update({"encoder.w1": (F, H), "encoder.b1": (H,), "encoder.w2": (H, E), "encoder.b2": (E,)})
        shapes.update({"projection.w": (E, D), "projection.b": (D,), "classifier.w": (D,), "classifier.b": ()})
        return shapes


def group_of(name: str) -> str:
    return name.split(".", 1)[0]


class ModelParams:
    """Named float64 arrays, grouped by the prefix before the first dot."""

    def __init__(self, config: ModelConfig, arrays: dict[str, np.ndarray]):
        self.config = config
        shapes = config.shapes()
        if set(arrays) != set(shapes):
            raise DomainError(f"parameter names {sorted(arrays)} do not match {sorted(shapes)}")
        for k, shape in shapes.items():
            if np.shape(arrays[k]) != shape:
                raise DomainError(f"{k}: expected shape {shape}, got {np.shape(arrays[k])}")
        self.arrays = {k: np.asarray(arrays[k], dtype=np.float64) for k in shapes}

    def __getitem__(self, name):
        return self.arrays[name]

    def names(self, group: Optional[str] = None) -> list[str]:
        return [k for k in self.arrays if group is None or group_of(k) == group]

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def n_params(self) -> int:
        return int(sum(v.size for v in self.arrays.values()))

    def digest(self, groups=None) -> str:
        """SHA-256 over the raw bytes of the selected groups, in name order."""
        h = hashlib.sha256()
        for k in sorted(self.arrays):
            if groups is None or group_of(k) in groups:
                h.update(k.encode())
                h.update(np.ascontiguousarray(self.arrays[k]).tobytes())
        return h.hexdigest()


def init_params(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for encoder and projection;
    zeros for the classifier."""
    arrays = {}
    for name, shape in config.shapes().items():
        if group_of(name) == CLASSIFIER:
            arrays[name] = np.zeros(shape)
            continue
        weight = name.replace(".b", ".w") if name in BIAS_NAMES else name
        fan_in = config.shapes()[weight][0]
        bound = 1.0 / np.sqrt(fan_in)
        arrays[name] = rng.uniform(-bound, bound, size=shape)
    return ModelParams(config, arrays)


class FrameBatch(NamedTuple):
    """Variable-length utterances packed frame-wise."""

    frames: np.ndarray  # (sum T_b, F)
    lengths: np.ndarray  # (B,)

    @classmethod
    def from_list(cls, utterances) -> "FrameBatch":
        mats = [np.asarray(u, dtype=np.float64) for u in utterances]
        for m in mats:
            if m.ndim != 2 or m.shape[0] < 1:
                raise DomainError("each utterance must be a (T >= 1, F) array")
        return cls(np.concatenate(mats, axis=0), np.array([m.shape[0] for m in mats]))

    @property
    def starts(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.lengths)[:-1]]).astype(np.intp)

    def __len__(self):
        return len(self.lengths)


class EmbedCache(NamedTuple):
    x: np.ndarray
    h: Optional[np.ndarray]
    f: np.ndarray
    pooled: np.ndarray
    norms: np.ndarray
    z: np.ndarray
    lengths: np.ndarray


def _as_frame_batch(batch) -> FrameBatch:
    if isinstance(batch, FrameBatch):
        return batch
    return FrameBatch.from_list(batch)


def embed_batch(params: ModelParams, batch, return_cache: bool = False):
    """Unit embeddings (B, D) for a batch of utterances."""
    fb = _as_frame_batch(batch)
    x = fb.frames
    cfg = params.config
    if x.shape[1] != cfg.input_dim:
        raise DomainError(f"frames have {x.shape[1]} features, model expects {cfg.input_dim}")
    if cfg.encoder == "mlp":
        h = np.tanh(x @ params["encoder.w1"] + params["encoder.b1"])
        f = np.tanh(h @ params["encoder.w2"] + params["encoder.b2"])
    else:
        h, f = None, x
    pooled = np.add.reduceat(f, fb.starts, axis=0) / fb.lengths[:, None]
    v = pooled @ params["projection.w"] + params["projection.b"]
    z, norms = normalize_rows(v)
    if return_cache:
        return z, EmbedCache(x, h, f, pooled, norms, z, fb.lengths)
    return z


def embed(params: ModelParams, frames) -> np.ndarray:
    """Embedding of a single (T, F) utterance."""
    return embed_batch(params, [frames])[0]


def classify(params: ModelParams, emb) -> np.ndarray:
    """Classifier logit(s); higher means more bona-fide-like."""
    return np.asarray(emb) @ params["classifier.w"] + params["classifier.b"]


def backward_embed(params: ModelParams, cache: EmbedCache, grad_z: np.ndarray) -> dict[str, np.ndarray]:
    """Pull ``d loss / d z`` back to encoder and projection parameters."""
    z, norms = cache.z, cache.norms
    # Jacobian of v -> v/|v| is (I - z z^T)/|v|
    g_v = (grad_z - z * np.sum(z * grad_z, axis=1, keepdims=True)) / norms[:, None]
    grads = {
        "projection.w": cache.pooled.T @ g_v,
        "projection.b": g_v.sum(axis=0),
    }
    if params.config.encoder == "mlp":
        g_pooled = g_v @ params["projection.w"].T
        g_f = np.repeat(g_pooled / cache.lengths[:, None], cache.lengths, axis=0)
        g_a2 = g_f * (1.0 - cache.f**2)
        grads["encoder.w2"] = cache.h.T @ g_a2
        grads["encoder.b2"] = g_a2.sum(axis=0)
        g_a1 = (g_a2 @ params["encoder.w2"].T) * (1.0 - cache.h**2)
        grads["encoder.w1"] = cache.x.T @ g_a1
        grads["encoder.b1"] = g_a1.sum(axis=0)
    return grads


def bce_with_logits(logits, targets) -> np.ndarray:
    """Elementwise max(x, 0) - x*y + log(1 + exp(-|x|))."""
    x = np.asarray(logits, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    return np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def classifier_backward(params: ModelParams, z: np.ndarray, labels) -> tuple[float, dict, np.ndarray]:
    """Mean BCE on classifier logits. Returns (loss, classifier grads, d loss / d z)."""
    y = np.asarray(labels, dtype=np.float64)
    logits = classify(params, z)
    loss = float(np.mean(bce_with_logits(logits, y)))
    g_logit = (sigmoid(logits) - y) / len(y)
    grads = {"classifier.w": z.T @ g_logit, "classifier.b": np.asarray(g_logit.sum())}
    return loss, grads, np.outer(g_logit, params["classifier.w"])


def backward(
    params: ModelParams,
    batch,
    labels,
    loss_kind: str,
    loss_config: Optional[LossConfig] = None,
    queue=None,
    frozen: bool = True,
    ids=None,
    embeddings=None,
):
    """Loss and exact gradients for one minibatch.

    ``loss_kind="supcon"`` returns encoder and projection gradients (mean
    over anchors with positives). ``loss_kind="bce"`` returns classifier
    gradients only when ``frozen``; with ``frozen=False`` the BCE gradient is
    also pulled back through the embedding (end-to-end baseline). Frozen BCE
    may pass precomputed ``embeddings`` and ``batch=None``.

    Returns ``(loss, grads, embeddings)``.
    """
    labels = np.asarray(labels)
    if loss_kind == "supcon":
        if loss_config is None:
            raise DomainError("supcon backward needs a LossConfig")
        z, cache = embed_batch(params, batch, return_cache=True)
        res = supcon_loss_and_grad(z, labels, loss_config, queue=queue, reduction="mean")
        if not np.all(np.isfinite(res.per_anchor)):
            bad = np.flatnonzero(~np.isfinite(res.per_anchor))
            raise NonFiniteError("non-finite SupCon term", ids=[ids[i] for i in bad] if ids is not None else bad)
        grads = backward_embed(params, cache, res.grad)
        return res.mean, grads, z
    if loss_kind == "bce":
        if frozen:
            z = embeddings if embeddings is not None else embed_batch(params, batch)
            loss, grads, _ = classifier_backward(params, z, labels)
        else:
            z, cache = embed_batch(params, batch, return_cache=True)
            loss, grads, g_z = classifier_backward(params, z, labels)
            grads.update(backward_embed(params, cache, g_z))
        if not np.isfinite(loss):
            raise NonFiniteError("non-finite BCE loss", ids=ids if ids is not None else ())
        return loss, grads, z
    raise DomainError(f"unknown loss kind {loss_kind!r}")


# -- checkpoint container ---------------------------------------------------
#
# A byte-reproducible zip (see archive.py) readable with numpy.load:
#   meta.json               format, version, stage, config hash, model config, extra
#   param/<name>.npy        one array per parameter
#   optim/step.npy          optimizer step counter (optional)
#   optim/<m|v>/<name>.npy  optimizer moments (optional)


def save_checkpoint(path, params: ModelParams, stage: str, config_hash: str = "", optim_state=None, extra=None):
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "stage": stage,
        "config_hash": config_hash,
        "model": asdict(params.config),
        "shapes": {k: list(v.shape) for k, v in sorted(params.arrays.items())},
        "extra": extra or {},
    }
    members = {"meta.json": json.dumps(meta, sort_keys=True, indent=1).encode()}
    for k, v in params.arrays.items():
        members[f"param/{k}.npy"] = npy_bytes(v)
    if optim_state is not None:
        members["optim/step.npy"] = npy_bytes(np.int64(optim_state.step))
        for slot in ("m", "v"):
            for k, v in getattr(optim_state, slot).items():
                members[f"optim/{slot}/{k}.npy"] = npy_bytes(v)
    write_archive(path, members)


def load_checkpoint(path):
    """Returns ``(params, meta, optim_arrays)``; the last is a dict (possibly empty)."""
    try:
        arrays, other = read_archive(path)
    except (zipfile.BadZipFile, OSError, ValueError) as exc:
        raise FormatError(f"not a checkpoint: {exc}", path=path) from exc
    if "meta.json" not in other:
        raise FormatError("missing meta.json", path=path)
    meta = json.loads(other["meta.json"])
    if meta.get("format") != CHECKPOINT_FORMAT or meta.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint {meta.get('format')} v{meta.get('version')}", path=path)
    params = ModelParams(
        ModelConfig(**meta["model"]),
        {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")},
    )
    optim = {k[len("optim/"):]: v for k, v in arrays.items() if k.startswith("optim/")}
    return params, meta, optim
