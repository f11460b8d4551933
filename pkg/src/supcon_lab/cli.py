"""Command-line entry point: ``supcon-lab <verb> ...``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import runner
from .config import DataConfig, ExperimentConfig, load_config, synthetic_spec_from_dict
from .data import SyntheticSpec, generate, load_manifest, write_dataset
from .errors import ConfigError, FormatError
from .metrics import POOLED_ORDER, eer, pooled_eer, read_scores, write_scores
from .model import load_checkpoint
from .trainer import evaluate


def _with_seed(cfg: ExperimentConfig, seed):
    return cfg if seed is None else cfg.replace(seed=seed)


def _synthetic_spec(path, seed) -> SyntheticSpec:
    """Accept either a bare synthetic spec or an experiment config using one."""
    raw = json.loads(Path(path).read_text())
    if "data" in raw or "mode" in raw:
        cfg = load_config(path)
        if cfg.data.synthetic is None:
            raise ConfigError(f"{path}: config does not use synthetic data")
        spec = cfg.data.synthetic
    else:
        spec = synthetic_spec_from_dict(raw, where=str(path))
    if seed is not None:
        spec = dataclasses.replace(spec, seed=seed)
    return spec


def cmd_generate_data(args):
    spec = _synthetic_spec(args.config, args.seed) if args.config else SyntheticSpec(
        **({} if args.seed is None else {"seed": args.seed}))
    manifest = write_dataset(generate(spec), args.out, spec)
    print(manifest)


def cmd_train(args):
    cfg = _with_seed(load_config(args.config), args.seed)
    if args.stage is not None:
        cfg = cfg.replace(stage=args.stage)
    results = args.results or Path(args.out) / "results.csv"
    row = runner.run_experiment(cfg, args.out, results, stage1_checkpoint=args.checkpoint)
    print(json.dumps(row, indent=1))


def _splits_for(args):
    if args.manifest:
        return load_manifest(args.manifest)
    cfg = _with_seed(load_config(args.config), args.seed)
    return runner.load_splits(cfg)


def cmd_evaluate(args):
    cfg = _with_seed(load_config(args.config), args.seed)
    if args.manifest:
        cfg = cfg.replace(data=DataConfig(manifest=str(Path(args.manifest).resolve())))
    params, meta, _ = load_checkpoint(args.checkpoint)
    if meta["stage"] == "stage1":
        raise ConfigError("evaluation needs a checkpoint with a trained classifier (stage2 or baseline)")
    results = evaluate(params, cfg, runner.load_splits(cfg))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = {}
    for role, (value, ss) in results.items():
        split = cfg.eval_roles[role]
        write_scores(ss, out / f"{split}.txt", out / f"{split}.labels")
        summary[role] = value
    summary["pooled_eer"] = pooled_eer([summary[r] for r in POOLED_ORDER])
    print(json.dumps(summary, indent=1))


def cmd_sweep(args):
    spec = runner.load_sweep(args.config)
    if args.jobs is not None:
        spec.jobs = args.jobs
    rows = runner.run_sweep(spec, args.out, seed=args.seed)
    for r in rows:
        print(f"{r['name']:<28} {r['status']:<8} pooled={r.get('pooled_eer')}")
    print(Path(args.out) / "results.csv")


def cmd_export_embeddings(args):
    splits = _splits_for(args)
    if args.split not in splits:
        raise ConfigError(f"split {args.split!r} not found; have {sorted(splits)}")
    n = runner.export_embeddings(args.checkpoint, splits[args.split], args.out, args.target_frames)
    print(f"{n} records -> {args.out}")


def cmd_score(args):
    value, threshold = eer(read_scores(args.scores, args.labels))
    print(json.dumps({"eer": value, "threshold": threshold}))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="supcon-lab", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    g = sub.add_parser("generate-data", help="write synthetic splits and a manifest")
    g.add_argument("--config", help="synthetic spec JSON or an experiment config")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_generate_data)

    t = sub.add_parser("train", help="run one experiment config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--stage", choices=["1", "2", "both"])
    t.add_argument("--checkpoint", help="stage-1 checkpoint for --stage 2")
    t.add_argument("--results", help="results CSV to append to (default <out>/results.csv)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score the evaluation splits with a trained checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--config", required=True)
    e.add_argument("--manifest", help="override the config's data with a dataset manifest")
    e.add_argument("--out", required=True)
    e.add_argument("--seed", type=int)
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", help="run a temperature and/or queue-size grid")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--jobs", type=int, help="parallel worker processes (0 = in-process)")
    s.set_defaults(func=cmd_sweep)

    x = sub.add_parser("export-embeddings", help="dump per-utterance embeddings as JSONL")
    x.add_argument("--checkpoint", required=True)
    src = x.add_mutually_exclusive_group(required=True)
    src.add_argument("--config")
    src.add_argument("--manifest")
    x.add_argument("--split", required=True)
    x.add_argument("--out", required=True)
    x.add_argument("--seed", type=int)
    x.add_argument("--target-frames", type=int, default=20)
    x.set_defaults(func=cmd_export_embeddings)

    c = sub.add_parser("score", help="EER of an external score file")
    c.add_argument("--scores", required=True)
    c.add_argument("--labels", required=True)
    c.set_defaults(func=cmd_score)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    runner._limit_threads()
    try:
        args.func(args)
    except (ConfigError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
