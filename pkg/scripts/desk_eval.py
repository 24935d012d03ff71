"""Evaluate random-weight predictions on a batch of desk-scale scenes.

    python3 scripts/desk_eval.py --scenes 8 --workers 4 --mode train

Random weights give near-chance scores; the point is exercising the whole
pipeline and the metric/loss reports, not accuracy.
"""

import argparse
import time

from disc.config import PipelineConfig, load_config
from disc.pipeline import run_eval


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config")
    ap.add_argument("--scenes", type=int, default=4)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--mode", choices=("inference", "train"), default="inference")
    ap.add_argument("--seed", type=int)
    args = ap.parse_args()

    cfg = load_config(args.config) if args.config else PipelineConfig()
    cfg = cfg.with_overrides(args.seed, args.mode)
    start = time.perf_counter()
    result = run_eval(cfg, args.scenes, workers=args.workers)
    print(result.to_text())
    print(f"{args.scenes} scenes in {time.perf_counter() - start:.1f} s")


if __name__ == "__main__":
    main()
