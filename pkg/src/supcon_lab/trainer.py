"""Two-stage training: SupCon on encoder + projection, then a frozen-embedding
linear classifier. Also the single-stage end-to-end BCE baseline."""

from __future__ import annotations

import json
import logging
import time
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .config import ExperimentConfig
from .data import Dataset, chunk_or_pad
from .errors import ConfigError, NonFiniteError
from .geometry import l2_normalize, similarity_matrix
from .metrics import ScoreSet, eer
from .model import CLASSIFIER, FrameBatch, ModelParams, backward, classify, embed_batch, init_params
from .optim import AdamWState, EarlyStopState, adamw_step, early_stop_update
from .queue import EmbeddingQueue
from .supcon import BONAFIDE, SPOOF, LossConfig

log = logging.getLogger(__name__)


@dataclass
class EpochRecord:
    epoch: int
    stage: str
    mean_loss: float
    dev_eer: float
    queue_len: int
    queue_enabled: bool
    wall_time_s: float
    queue_augmented_steps: int = 0
    is_best: bool = False

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class StageResult:
    params: ModelParams  # best checkpoint
    log: list = field(default_factory=list)
    best_epoch: int = 0
    best_dev_eer: float = float("nan")
    epochs_run: int = 0
    optim_state: Optional[AdamWState] = None
    queue: Optional[EmbeddingQueue] = None


class RngStreams:
    """Independent generators per purpose, all derived from one seed."""

    NAMES = ("init", "shuffle", "augment", "crop", "stage2")

    def __init__(self, seed: int):
        children = np.random.SeedSequence(seed).spawn(len(self.NAMES))
        for name, ss in zip(self.NAMES, children):
            setattr(self, name, np.random.default_rng(ss))


def augment(frames, prob: float, rng: np.random.Generator, sigma: float = 0.05) -> np.ndarray:
    """With probability ``prob`` add N(0, sigma^2) noise to every frame.

    Stands in for waveform-level augmentation; one uniform draw is consumed
    per call regardless of the outcome.
    """
    if not 0.0 <= prob <= 1.0:
        raise ValueError("prob must lie in [0, 1]")
    x = np.asarray(frames, dtype=np.float64)
    if rng.random() < prob and sigma > 0:
        return x + rng.standard_normal(x.shape) * sigma
    return x


def minibatches(n: int, batch_size: int, rng: np.random.Generator, min_size: int = 2):
    """Shuffled index batches; a final batch smaller than ``min_size`` is dropped."""
    perm = rng.permutation(n)
    out = [perm[i : i + batch_size] for i in range(0, n, batch_size)]
    if out and len(out[-1]) < min_size:
        out.pop()
    return out


def eval_batch(ds: Dataset, target_T: int) -> FrameBatch:
    """Deterministic eval-mode chunking of a whole split."""
    return FrameBatch.from_list([chunk_or_pad(u, target_T, "eval") for u in ds.utterances()])


def _check_two_classes(ds: Dataset, what: str):
    c = ds.class_counts()
    if c["bonafide"] == 0 or c["spoof"] == 0:
        raise ConfigError(f"{what} split '{ds.name}' must contain both classes, has {c}")


def probe_scores(z_train, y_train, z_eval, kind) -> np.ndarray:
    """Closed-form stage-1 probe: sim(z, mean_bona) - sim(z, mean_spoof)."""
    mu_b = l2_normalize(z_train[y_train == BONAFIDE].mean(axis=0))
    mu_s = l2_normalize(z_train[y_train == SPOOF].mean(axis=0))
    return similarity_matrix(kind, z_eval, np.stack([mu_b, mu_s])) @ np.array([1.0, -1.0])


def _splits(cfg: ExperimentConfig, splits: dict):
    for name in (cfg.train_split, cfg.dev_split):
        if name not in splits:
            raise ConfigError(f"split {name!r} not found; have {sorted(splits)}")
    train, dev = splits[cfg.train_split], splits[cfg.dev_split]
    _check_two_classes(train, "train")
    _check_two_classes(dev, "dev")
    if train.dim != cfg.model.input_dim:
        raise ConfigError(f"data has {train.dim} features, model expects {cfg.model.input_dim}")
    return train, dev


def _write_log(records, path):
    if path is None:
        return
    with open(path, "a") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def train_stage1(
    cfg: ExperimentConfig,
    splits: dict,
    log_path=None,
    on_step: Optional[Callable] = None,
) -> StageResult:
    """SupCon fine-tuning of encoder and projection with the delayed queue.

    ``on_step(epoch, step, n_queue_negatives_used)`` is called after every
    optimizer step, for instrumentation.
    """
    if cfg.mode != "supcon":
        raise ConfigError("stage 1 needs mode 'supcon'")
    train, dev = _splits(cfg, splits)
    rngs = RngStreams(cfg.seed)
    params = init_params(cfg.model, rngs.init)
    loss_cfg = LossConfig(cfg.temperature, cfg.similarity_kind)
    opt = AdamWState()
    es = EarlyStopState()
    queue = EmbeddingQueue.from_schedule(cfg.queue, cfg.model.embed_dim)
    train_eval = eval_batch(train, cfg.target_frames)
    dev_eval = eval_batch(dev, cfg.target_frames)
    result = StageResult(params.copy())
    t0 = time.perf_counter()

    for epoch in range(1, cfg.max_epochs + 1):
        losses, augmented_steps = [], 0
        for step, idx in enumerate(minibatches(len(train), cfg.batch_size, rngs.shuffle), start=1):
            utts = [
                augment(chunk_or_pad(train.utterance(i), cfg.target_frames, "train", rngs.crop),
                        cfg.augment_prob, rngs.augment, cfg.augment_sigma)
                for i in idx
            ]
            y = train.labels[idx]
            qv = queue.view() if queue.enabled and len(queue) else None
            n_neg = 0 if qv is None else int(sum((qv.labels != lab).sum() for lab in np.unique(y)))
            with warnings.catch_warnings():
                warnings.filterwarnings("ignore", message="no anchor in the batch has a positive")
                loss, grads, z = backward(params, utts, y, "supcon", loss_cfg, queue=qv,
                                          ids=[train.ids[i] for i in idx])
            if not np.isfinite(loss):
                raise NonFiniteError("non-finite SupCon loss", ids=[train.ids[i] for i in idx])
            adamw_step(params, grads, opt, cfg.optim)
            # loss first, then enqueue: a batch never serves as its own negative
            queue.enqueue(z, y)
            losses.append(loss)
            augmented_steps += n_neg > 0
            if on_step is not None:
                on_step(epoch, step, n_neg)

        queue.maybe_enable(cfg.queue, completed_epochs=epoch)
        z_tr = embed_batch(params, train_eval)
        z_dev = embed_batch(params, dev_eval)
        dev_eer, _ = eer(probe_scores(z_tr, train.labels, z_dev, loss_cfg.similarity), dev.labels)
        _, stop, is_best = early_stop_update(es, dev_eer, cfg.optim.patience)
        if is_best:
            result.params = params.copy()
            result.best_epoch = epoch
            result.best_dev_eer = dev_eer
        rec = EpochRecord(epoch, "stage1", float(np.mean(losses)) if losses else 0.0, dev_eer,
                          len(queue), queue.enabled, round(time.perf_counter() - t0, 3),
                          int(augmented_steps), is_best)
        result.log.append(rec)
        _write_log([rec], log_path)
        log.info("stage1 epoch %d loss %.4f dev_eer %.3f queue %d", epoch, rec.mean_loss, dev_eer, len(queue))
        result.epochs_run = epoch
        if stop:
            break
    result.optim_state = opt
    result.queue = queue
    return result


def _train_classifier(cfg, params, z_train, y_train, z_dev, y_dev, rng, log_path, stage, t0):
    opt = AdamWState()
    es = EarlyStopState()
    result = StageResult(params.copy())
    for epoch in range(1, cfg.stage2_max_epochs + 1):
        losses = []
        for idx in minibatches(len(y_train), cfg.batch_size, rng, min_size=1):
            loss, grads, _ = backward(params, None, y_train[idx], "bce", embeddings=z_train[idx])
            adamw_step(params, grads, opt, cfg.optim)
            losses.append(loss)
        dev_eer, _ = eer(classify(params, z_dev), y_dev)
        _, stop, is_best = early_stop_update(es, dev_eer, cfg.optim.patience)
        if is_best:
            result.params = params.copy()
            result.best_epoch, result.best_dev_eer = epoch, dev_eer
        rec = EpochRecord(epoch, stage, float(np.mean(losses)), dev_eer, 0, False,
                          round(time.perf_counter() - t0, 3), 0, is_best)
        result.log.append(rec)
        _write_log([rec], log_path)
        result.epochs_run = epoch
        if stop:
            break
    result.optim_state = opt
    return result


def train_stage2(stage1_params: ModelParams, cfg: ExperimentConfig, splits: dict, log_path=None) -> StageResult:
    """Linear classifier on frozen embeddings, trained with BCE.

    Embeddings are computed once; only ``classifier.*`` is ever updated.
    """
    train, dev = _splits(cfg, splits)
    params = stage1_params.copy()
    for name in params.names(CLASSIFIER):
        params.arrays[name] = np.zeros_like(params.arrays[name])
    z_train = embed_batch(params, eval_batch(train, cfg.target_frames))
    z_dev = embed_batch(params, eval_batch(dev, cfg.target_frames))
    rngs = RngStreams(cfg.seed)
    return _train_classifier(cfg, params, z_train, train.labels, z_dev, dev.labels, rngs.stage2,
                             log_path, "stage2", time.perf_counter())


def train_baseline(cfg: ExperimentConfig, splits: dict, log_path=None) -> StageResult:
    """End-to-end BCE: encoder, projection and classifier trained jointly."""
    train, dev = _splits(cfg, splits)
    rngs = RngStreams(cfg.seed)
    params = init_params(cfg.model, rngs.init)
    opt = AdamWState()
    es = EarlyStopState()
    dev_eval = eval_batch(dev, cfg.target_frames)
    result = StageResult(params.copy())
    t0 = time.perf_counter()
    for epoch in range(1, cfg.max_epochs + 1):
        losses = []
        for idx in minibatches(len(train), cfg.batch_size, rngs.shuffle, min_size=1):
            utts = [
                augment(chunk_or_pad(train.utterance(i), cfg.target_frames, "train", rngs.crop),
                        cfg.augment_prob, rngs.augment, cfg.augment_sigma)
                for i in idx
            ]
            loss, grads, _ = backward(params, utts, train.labels[idx], "bce", frozen=False,
                                      ids=[train.ids[i] for i in idx])
            adamw_step(params, grads, opt, cfg.optim)
            losses.append(loss)
        dev_eer, _ = eer(classify(params, embed_batch(params, dev_eval)), dev.labels)
        _, stop, is_best = early_stop_update(es, dev_eer, cfg.optim.patience)
        if is_best:
            result.params = params.copy()
            result.best_epoch, result.best_dev_eer = epoch, dev_eer
        rec = EpochRecord(epoch, "baseline", float(np.mean(losses)), dev_eer, 0, False,
                          round(time.perf_counter() - t0, 3), 0, is_best)
        result.log.append(rec)
        _write_log([rec], log_path)
        result.epochs_run = epoch
        if stop:
            break
    result.optim_state = opt
    return result


def score_split(params: ModelParams, ds: Dataset, target_T: int) -> ScoreSet:
    """Classifier logits for every utterance of a split (eval-mode chunking)."""
    z = embed_batch(params, eval_batch(ds, target_T))
    return ScoreSet(list(ds.ids), classify(params, z), ds.labels)


def evaluate(params: ModelParams, cfg: ExperimentConfig, splits: dict) -> dict:
    """``{role: (eer_percent, ScoreSet)}`` for the four evaluation roles."""
    out = {}
    for role, name in cfg.eval_roles.items():
        if name not in splits:
            raise ConfigError(f"evaluation split {name!r} (role {role}) not found; have {sorted(splits)}")
        ss = score_split(params, splits[name], cfg.target_frames)
        out[role] = (eer(ss)[0], ss)
    return out
