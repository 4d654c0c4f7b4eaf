"""Run the full pipeline under several seeds and tabulate clusters, filters and returns.

    python scripts/seed_sweep.py --config synthetic --seeds 0 1 2 3 4 --out runs/sweep
"""
from __future__ import annotations

import argparse
import json
import logging
import time
from pathlib import Path

from patternforge.config import from_pairs, load_config
from patternforge.errors import PipelineError
from patternforge.pipeline import Pipeline


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="synthetic")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--out", default="runs/sweep")
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)
    base = load_config(args.config)
    print(f"{'seed':>4s} {'secs':>5s} {'clusters':20s} {'ks dropped':12s} {'trades':>6s} {'TRwf':>8s} {'random':>8s}")
    for seed in args.seeds:
        out = Path(args.out) / f"seed{seed}"
        t0 = time.perf_counter()
        try:
            Pipeline(from_pairs([("run.seed", seed, None)], base=base), out).run()
        except PipelineError as exc:
            print(f"{seed:4d} failed: {exc}")
            continue
        rep = json.loads((out / "report.json").read_text())["payload"]
        top = f"T@{rep['filters']['top_x']:g}"
        print(f"{seed:4d} {time.perf_counter() - t0:5.0f} {str(rep['simpc']['cluster_sizes']):20s} "
              f"{str(rep['filters']['ks_discarded']):12s} {rep['n_trades']:6d} "
              f"{rep['metrics']['ours'][top]['trwf']:8.3f} {rep['metrics']['random']['trwf']:8.3f}")


if __name__ == "__main__":
    main()
