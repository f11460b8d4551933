"""Experiment configuration: dataclasses with strict JSON loading.

Unknown keys anywhere in a config are rejected, so a typo in an experiment
grid fails before any compute starts.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .data import OODSplit, Subcluster, SyntheticSpec
from .errors import ConfigError, DomainError
from .geometry import SimilarityKind
from .model import ModelConfig
from .optim import OptimConfig
from .queue import QueueSchedule

MODES = ("supcon", "baseline")
STAGES = ("1", "2", "both")


def _default_roles():
    return {
        "in_domain": "eval_id",
        "ood_wild": "eval_ood_wild",
        "ood_df": "eval_ood_df",
        "ood_la": "eval_ood_la",
    }


@dataclass(frozen=True)
class DataConfig:
    synthetic: Optional[SyntheticSpec] = None
    manifest: Optional[str] = None  # resolved relative to the config file

    def __post_init__(self):
        if (self.synthetic is None) == (self.manifest is None):
            raise ConfigError("data needs exactly one of 'synthetic' or 'manifest'")


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "run"
    mode: str = "supcon"
    similarity: str = "cosine"
    temperature: float = 0.3
    queue: QueueSchedule = field(default_factory=QueueSchedule)
    batch_size: int = 32
    optim: OptimConfig = field(default_factory=OptimConfig)
    augment_prob: float = 0.7
    augment_sigma: float = 0.05
    seed: int = 1337
    max_epochs: int = 100
    stage2_max_epochs: int = 100
    target_frames: int = 20
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=lambda: DataConfig(synthetic=SyntheticSpec()))
    train_split: str = "train"
    dev_split: str = "dev"
    eval_roles: dict = field(default_factory=_default_roles)
    stage: str = "both"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "supcon":
            try:
                SimilarityKind.parse(self.similarity)
            except DomainError as exc:
                raise ConfigError(str(exc)) from None
        if not self.temperature > 0:
            raise ConfigError("temperature must be > 0")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if not 0.0 <= self.augment_prob <= 1.0 or self.augment_sigma < 0:
            raise ConfigError("augment_prob must lie in [0, 1] and augment_sigma >= 0")
        if self.max_epochs < 1 or self.stage2_max_epochs < 1 or self.target_frames < 1:
            raise ConfigError("epoch caps and target_frames must be >= 1")
        if self.stage not in STAGES:
            raise ConfigError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if set(self.eval_roles) != set(_default_roles()):
            raise ConfigError(f"eval_roles must map exactly {sorted(_default_roles())}")
        if self.data.synthetic is not None and self.data.synthetic.dim != self.model.input_dim:
            raise ConfigError(
                f"synthetic dim {self.data.synthetic.dim} != model input_dim {self.model.input_dim}"
            )

    @property
    def similarity_kind(self) -> Optional[SimilarityKind]:
        return SimilarityKind.parse(self.similarity) if self.mode == "supcon" else None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def _strict(cls, raw, where: str, nested=None):
    """Instantiate dataclass ``cls`` from ``raw`` rejecting unknown keys.

    ``nested`` maps field name -> converter for sub-objects.
    """
    if isinstance(raw, cls):
        return raw
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected an object, got {type(raw).__name__}")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}")
    kwargs = dict(raw)
    for key, conv in (nested or {}).items():
        if key in kwargs and kwargs[key] is not None:
            kwargs[key] = conv(kwargs[key], f"{where}.{key}")
    try:
        return cls(**kwargs)
    except (TypeError, DomainError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _list_of(cls):
    def conv(items, where):
        if not isinstance(items, list):
            raise ConfigError(f"{where}: expected a list")
        return [_strict(cls, x, f"{where}[{i}]") for i, x in enumerate(items)]

    return conv


def _tuple(value, where):
    return tuple(float(x) for x in value)


def synthetic_spec_from_dict(raw, where="synthetic") -> SyntheticSpec:
    sub = {"direction": _tuple}

    def subclusters(items, w):
        return [_strict(Subcluster, x, f"{w}[{i}]", sub) for i, x in enumerate(items)]

    return _strict(
        SyntheticSpec,
        raw,
        where,
        {
            "spoof_subclusters": subclusters,
            "ood_subclusters": subclusters,
            "ood_splits": _list_of(OODSplit),
            "bona_center": _tuple,
        },
    )


def config_from_dict(raw: dict, where: str = "config") -> ExperimentConfig:
    return _strict(
        ExperimentConfig,
        raw,
        where,
        {
            "queue": lambda x, w: _strict(QueueSchedule, x, w),
            "optim": lambda x, w: _strict(OptimConfig, x, w),
            "model": lambda x, w: _strict(ModelConfig, x, w),
            "data": lambda x, w: _strict(DataConfig, x, w, {"synthetic": synthetic_spec_from_dict}),
        },
    )


def load_config(path) -> ExperimentConfig:
    """Load an experiment config; a relative data manifest is resolved
    against the config file's directory."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    cfg = config_from_dict(raw, where=str(path))
    if cfg.data.manifest is not None and not Path(cfg.data.manifest).is_absolute():
        cfg = cfg.replace(data=DataConfig(manifest=str((path.parent / cfg.data.manifest).resolve())))
    return cfg


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True, default=str) + "\n")
