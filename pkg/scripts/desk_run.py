"""Single desk-scale run: default synthetic data, cosine similarity, tau 0.3, no queue.

    python3 scripts/desk_run.py --out runs/desk
"""

import argparse
import time
from pathlib import Path

from _table import print_rows
from supcon_lab import runner
from supcon_lab.config import load_config

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=ROOT / "configs" / "desk.json")
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--seed", type=int)
    args = ap.parse_args()

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    t0 = time.perf_counter()
    row = runner.run_experiment(cfg, args.out, Path(args.out) / "results.csv")
    print_rows([row], ["similarity", "tau", "queue_capacity"])
    print(f"best stage-1 epoch {row['epochs_run']}, dev EER {row['dev_eer']:.2f}%, "
          f"{time.perf_counter() - t0:.1f}s -> {args.out}")


if __name__ == "__main__":
    main()
