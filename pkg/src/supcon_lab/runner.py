"""Experiment execution: single runs, sweeps and embedding export.

Run directory layout::

    <out>/config.json            resolved config
    <out>/train_log.jsonl        one record per epoch, all stages
    <out>/stage1.ckpt.npz        best Stage-1 checkpoint (supcon mode)
    <out>/final.ckpt.npz         checkpoint with the trained classifier
    <out>/scores/<split>.txt     "utt_id score" per evaluation split
    <out>/scores/<split>.labels  "utt_id label"
    <out>/result.json            the results row
    <out>/FAILED                 traceback, only when the run failed

Results rows are appended to a CSV under an exclusive file lock.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
import os
import time
import traceback
import uuid
from dataclasses import dataclass, field
from multiprocessing import get_context
from pathlib import Path
from typing import Optional

from filelock import FileLock

from .config import ExperimentConfig, config_from_dict, load_config, save_config
from .data import INT_TO_LABEL, EmbeddingRecord, Dataset, dump_embeddings, generate, load_manifest
from .errors import ConfigError
from .metrics import POOLED_ORDER, pooled_eer, write_scores
from .model import embed_batch, load_checkpoint, save_checkpoint
from .queue import QueueSchedule
from .trainer import eval_batch, evaluate, train_baseline, train_stage1, train_stage2

RESULT_COLUMNS = [
    "run_id",
    "name",
    "mode",
    "similarity",
    "tau",
    "queue_capacity",
    "e_start",
    "seed",
    "eer_in_domain",
    "eer_ood_wild",
    "eer_ood_df",
    "eer_ood_la",
    "pooled_eer",
    "dev_eer",
    "epochs_run",
    "stage2_epochs",
    "wall_time_s",
    "status",
    "config_hash",
]
_FLOAT_COLUMNS = {"tau", "eer_in_domain", "eer_ood_wild", "eer_ood_df", "eer_ood_la", "pooled_eer", "dev_eer", "wall_time_s"}
_INT_COLUMNS = {"queue_capacity", "e_start", "seed", "epochs_run", "stage2_epochs"}
# columns that legitimately differ between identical reruns
VOLATILE_COLUMNS = ("run_id", "wall_time_s")


def load_splits(cfg: ExperimentConfig) -> dict[str, Dataset]:
    if cfg.data.synthetic is not None:
        return generate(cfg.data.synthetic)
    return load_manifest(cfg.data.manifest)


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def append_row(csv_path, row: dict) -> None:
    """Append one row, writing the header first if the file is new."""
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with FileLock(str(csv_path) + ".lock"):
        new = not csv_path.exists() or csv_path.stat().st_size == 0
        with open(csv_path, "a", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
            if new:
                w.writeheader()
            w.writerow({k: _fmt(row.get(k)) for k in RESULT_COLUMNS})


def read_results(csv_path) -> list[dict]:
    """Parse a results CSV back into typed rows (empty cells become None)."""
    rows = []
    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RESULT_COLUMNS:
            raise ConfigError(f"{csv_path}: unexpected columns {reader.fieldnames}")
        for raw in reader:
            row = {}
            for k, v in raw.items():
                if v == "":
                    row[k] = None
                elif k in _FLOAT_COLUMNS:
                    row[k] = float(v)
                elif k in _INT_COLUMNS:
                    row[k] = int(v)
                else:
                    row[k] = v
            rows.append(row)
    return rows


def _base_row(cfg: ExperimentConfig, run_id: str) -> dict:
    supcon = cfg.mode == "supcon"
    return {
        "run_id": run_id,
        "name": cfg.name,
        "mode": cfg.mode,
        "similarity": cfg.similarity if supcon else "none",
        "tau": float(cfg.temperature) if supcon else None,
        "queue_capacity": cfg.queue.capacity if supcon else 0,
        "e_start": cfg.queue.start_epoch if supcon else None,
        "seed": cfg.seed,
        "config_hash": cfg.config_hash(),
    }


def run_experiment(cfg, out_dir, results_csv=None, stage1_checkpoint=None) -> dict:
    """Train, evaluate and record one configuration. Returns the results row.

    ``cfg`` may be an ExperimentConfig or a path to a JSON config. A failure
    writes ``FAILED`` into ``out_dir``, records a ``failed`` row and re-raises.
    """
    if not isinstance(cfg, ExperimentConfig):
        cfg = load_config(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for stale in ("train_log.jsonl", "FAILED"):
        (out / stale).unlink(missing_ok=True)
    run_id = f"{cfg.name}-{uuid.uuid4().hex[:8]}"
    row = _base_row(cfg, run_id)
    t0 = time.perf_counter()
    log_path = out / "train_log.jsonl"
    try:
        save_config(cfg, out / "config.json")
        splits = load_splits(cfg)
        h = cfg.config_hash()
        final = None
        if cfg.mode == "baseline":
            res = train_baseline(cfg, splits, log_path)
            final = res.params
            row.update(epochs_run=res.epochs_run, stage2_epochs=0, dev_eer=res.best_dev_eer)
            save_checkpoint(out / "final.ckpt.npz", final, "baseline", h, res.optim_state,
                            {"best_epoch": res.best_epoch, "best_dev_eer": res.best_dev_eer})
        else:
            if cfg.stage in ("1", "both"):
                s1 = train_stage1(cfg, splits, log_path)
                stage1_params = s1.params
                row["epochs_run"] = s1.epochs_run
                save_checkpoint(out / "stage1.ckpt.npz", s1.params, "stage1", h, None,
                                {"best_epoch": s1.best_epoch, "best_dev_eer": s1.best_dev_eer})
            else:
                ckpt = stage1_checkpoint or out / "stage1.ckpt.npz"
                stage1_params, meta, _ = load_checkpoint(ckpt)
                if meta["stage"] != "stage1":
                    raise ConfigError(f"{ckpt} is a {meta['stage']} checkpoint, expected stage1")
                row["epochs_run"] = meta["extra"].get("best_epoch")
            if cfg.stage in ("2", "both"):
                s2 = train_stage2(stage1_params, cfg, splits, log_path)
                final = s2.params
                row.update(stage2_epochs=s2.epochs_run, dev_eer=s2.best_dev_eer)
                save_checkpoint(out / "final.ckpt.npz", final, "stage2", h, s2.optim_state,
                                {"best_epoch": s2.best_epoch, "best_dev_eer": s2.best_dev_eer})
        if final is not None:
            results = evaluate(final, cfg, splits)
            (out / "scores").mkdir(exist_ok=True)
            for role, (value, ss) in results.items():
                split = cfg.eval_roles[role]
                write_scores(ss, out / "scores" / f"{split}.txt", out / "scores" / f"{split}.labels")
                row[f"eer_{role}"] = value
            row["pooled_eer"] = pooled_eer([results[r][0] for r in POOLED_ORDER])
            row["status"] = "ok"
        else:
            row["status"] = "stage1-only"
    except Exception as exc:
        row["status"] = "failed"
        row["wall_time_s"] = round(time.perf_counter() - t0, 3)
        (out / "FAILED").write_text(traceback.format_exc())
        if results_csv is not None:
            append_row(results_csv, row)
        exc.result_row = row
        raise
    row["wall_time_s"] = round(time.perf_counter() - t0, 3)
    (out / "result.json").write_text(json.dumps(row, indent=1, sort_keys=True) + "\n")
    if results_csv is not None:
        append_row(results_csv, row)
    return row


# -- sweeps ----------------------------------------------------------------------


@dataclass
class SweepSpec:
    base: ExperimentConfig
    similarities: list = field(default_factory=list)
    temperatures: list = field(default_factory=list)
    queue_capacities: list = field(default_factory=list)
    # per-similarity temperature for queue-only sweeps
    best_temperature: dict = field(default_factory=dict)
    tau_from: Optional[str] = None  # results CSV of an earlier temperature sweep
    include_baseline: bool = False
    jobs: int = 1

    def __post_init__(self):
        if not self.temperatures and not self.queue_capacities:
            raise ConfigError("a sweep needs a non-empty 'temperatures' or 'queue_capacities' axis")
        if any(not t > 0 for t in self.temperatures):
            raise ConfigError("temperatures must be > 0")
        if any(q < 0 for q in self.queue_capacities):
            raise ConfigError("queue capacities must be >= 0")
        if self.jobs < 0:
            raise ConfigError("jobs must be >= 0")


_SWEEP_KEYS = {"base", "base_config", "similarities", "temperatures", "queue_capacities",
               "best_temperature", "tau_from", "include_baseline", "jobs"}


def load_sweep(path) -> SweepSpec:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    unknown = sorted(set(raw) - _SWEEP_KEYS)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {unknown}")
    if ("base" in raw) == ("base_config" in raw):
        raise ConfigError(f"{path}: give exactly one of 'base' or 'base_config'")
    if "base_config" in raw:
        base = load_config(path.parent / raw.pop("base_config"))
    else:
        base = config_from_dict(raw.pop("base"), where=f"{path}:base")
        if base.data.manifest and not Path(base.data.manifest).is_absolute():
            base = base.replace(data=type(base.data)(manifest=str((path.parent / base.data.manifest).resolve())))
    if raw.get("tau_from") and not Path(raw["tau_from"]).is_absolute():
        raw["tau_from"] = str(path.parent / raw["tau_from"])
    return SweepSpec(base=base, **raw)


def best_temperatures(csv_path) -> dict:
    """Lowest pooled EER among successful no-queue SupCon rows, per similarity."""
    best = {}
    for r in read_results(csv_path):
        if r["mode"] != "supcon" or r["status"] != "ok" or r["queue_capacity"] != 0:
            continue
        cur = best.get(r["similarity"])
        if cur is None or (r["pooled_eer"], r["tau"]) < (cur["pooled_eer"], cur["tau"]):
            best[r["similarity"]] = r
    return {k: v["tau"] for k, v in best.items()}


def _tau_label(t: float) -> str:
    return f"{t:g}"


def expand_sweep(spec: SweepSpec) -> list[ExperimentConfig]:
    """One config per grid point, in a fixed order."""
    base = spec.base.replace(mode="supcon")
    sims = spec.similarities or [base.similarity]
    taus = dict(spec.best_temperature)
    if spec.queue_capacities and not spec.temperatures and spec.tau_from:
        taus = {**best_temperatures(spec.tau_from), **taus}
    configs = []
    if spec.include_baseline:
        configs.append(spec.base.replace(mode="baseline", name="baseline"))
    for sim in sims:
        if spec.temperatures:
            tau_axis = spec.temperatures
        elif sim in taus:
            tau_axis = [taus[sim]]
        else:
            tau_axis = [base.temperature]
        q_axis = spec.queue_capacities or [base.queue.capacity]
        for tau, q in itertools.product(tau_axis, q_axis):
            name = f"{sim}-tau{_tau_label(tau)}-q{q}"
            configs.append(base.replace(
                name=name, similarity=sim, temperature=float(tau),
                queue=QueueSchedule(start_epoch=base.queue.start_epoch, capacity=int(q)),
            ))
    return configs


def _run_one(cfg, out_dir, results_csv):
    _limit_threads()
    try:
        return run_experiment(cfg, out_dir, results_csv)
    except Exception as exc:
        return getattr(exc, "result_row", {**_base_row(cfg, ""), "status": "failed"})


def run_sweep(spec, out_dir, seed: Optional[int] = None) -> list[dict]:
    """Run every grid point; failures are recorded and the sweep carries on.

    Each run gets a fresh worker process (``jobs`` of them at a time); with
    ``jobs == 0`` everything runs in-process. Returns rows in grid order.
    """
    if not isinstance(spec, SweepSpec):
        spec = load_sweep(spec)
    if seed is not None:
        spec.base = spec.base.replace(seed=seed)
    configs = expand_sweep(spec)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "results.csv"
    dirs = [out / "runs" / c.name for c in configs]
    if spec.jobs == 0:
        return [_run_one(c, d, csv_path) for c, d in zip(configs, dirs)]
    with get_context("fork").Pool(spec.jobs, maxtasksperchild=1) as pool:
        return pool.starmap(_run_one, [(c, d, csv_path) for c, d in zip(configs, dirs)], chunksize=1)


# -- export ---------------------------------------------------------------------


def export_embeddings(checkpoint, dataset: Dataset, out_path, target_frames: int = 20) -> int:
    """Write one embedding record per utterance, using eval-mode chunking."""
    params, _, _ = load_checkpoint(checkpoint)
    z = embed_batch(params, eval_batch(dataset, target_frames))
    records = (EmbeddingRecord(uid, INT_TO_LABEL[int(lab)], vec) for uid, lab, vec in zip(dataset.ids, dataset.labels, z))
    return dump_embeddings(records, out_path)


def _limit_threads():
    n = os.environ.get("SUPCON_LAB_THREADS")
    if n:
        from threadpoolctl import threadpool_limits

        threadpool_limits(int(n))


def is_finite_row(row: dict) -> bool:
    keys = [f"eer_{r}" for r in POOLED_ORDER] + ["pooled_eer"]
    return all(row.get(k) is not None and math.isfinite(row[k]) for k in keys)
