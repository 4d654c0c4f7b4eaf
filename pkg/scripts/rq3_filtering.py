"""Effect of the two filters on the test-period trades of one pipeline run.

Compares no filtering, the K-S label filter alone, and the K-S filter
followed by each top-x% confidence level, next to the Random baseline with
the same trade count. Runs the pipeline first unless ``--reuse`` is given.

    python scripts/rq3_filtering.py --config synthetic --out runs/rq3
"""
from __future__ import annotations

import argparse
import logging

import numpy as np

from patternforge.backtest import compute_metrics, random_baseline, run_protocol, truth_directions
from patternforge.classifier import apply_confidence_threshold
from patternforge.config import from_pairs, load_config
from patternforge.pipeline import Pipeline


def row(name, trades, close, interval):
    m = compute_metrics(trades, truth_directions(close, trades, interval))
    wlr = "inf" if m.wlr is None else f"{m.wlr:.3f}"
    return f"{name:14s} {m.n_trades:7d} {m.f1:7.3f} {wlr:>7s} {m.ar:9.5f} {m.trwf:9.4f}"


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="synthetic")
    ap.add_argument("--out", default="runs/rq3")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--reuse", action="store_true", help="use existing artifacts in --out")
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)
    cfg = from_pairs([("run.seed", args.seed, None)], base=load_config(args.config))
    pipe = Pipeline(cfg, args.out)
    pipe.run(resume=args.reuse)

    bt = pipe.load("backtest")
    bcfg = cfg.backtest
    raw = pipe._raw("test")
    close = raw[:, pipe.price_channel]
    a, _ = pipe._segment("test")
    dates = pipe._series["dates"][a : a + len(raw)]
    grid = bt["grid"]
    pm = np.asarray(bt["p_max"], dtype=float)
    directions = {int(k): (1 if v == "long" else -1) for k, v in bt["directions"].items()}

    print(f"K-S discarded labels: {bt['discarded']}")
    print(f"{'filter':14s} {'trades':>7s} {'F1':>7s} {'WLR':>7s} {'AR':>9s} {'TRwf':>9s}")
    variants = [("none", bt["predicted_unfiltered"], 100.0), ("K-S", bt["predicted"], 100.0)]
    variants += [(f"K-S + T@{x:g}", bt["predicted"], x) for x in bcfg.top_x_levels if x < 100]
    for name, labels, x in variants:
        kept = apply_confidence_threshold(labels, pm, x)
        trades = run_protocol(close, dates, grid, kept, pm, directions, bcfg)
        print(row(name, trades, close, bcfg.interval))
        if trades:
            rnd = random_baseline(close, dates, grid, len(trades), pipe.seed_for("backtest"), bcfg)
            print(row("  random", rnd, close, bcfg.interval))


if __name__ == "__main__":
    main()
