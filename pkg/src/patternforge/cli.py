"""Command-line entry point: ``patternforge <command> [--config PATH] ...``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import PipelineConfig, emit_config, from_pairs, load_config
from .errors import ConfigError, PipelineError
from .pipeline import STAGES, Pipeline

log = logging.getLogger("patternforge")

COMMAND_STAGES = {
    "ingest": ("ingest", "smooth"),
    "prototypes": ("prototypes",),
    "extract": ("simpc",),
    "train-encoder": ("train-encoder",),
    "shapelets": ("shapelets",),
    "train-classifier": ("train-classifier", "ks-filter"),
    "backtest": ("backtest",),
    "report": ("report",),
    "run": STAGES,
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="config file, or the name of a bundled preset such as 'synthetic'")
    p.add_argument("--seed", type=int, help="override run.seed")
    p.add_argument("--threads", type=int, help="override run.threads (torch intra-op threads)")
    p.add_argument("--out", help="override run.out_dir")
    p.add_argument("--top-x", type=float, dest="top_x", help="override backtest.top_x")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="patternforge", description="Pattern mining and directional backtests.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, stages in COMMAND_STAGES.items():
        p = sub.add_parser(name, help=f"stages: {', '.join(stages)}" if name != "run" else "all stages")
        _common(p)
        if name == "run":
            p.add_argument("--stage", choices=STAGES, help="execute only this stage")
            p.add_argument("--resume", action="store_true", help="skip stages whose artifacts are current")
    p = sub.add_parser("synth", help="write the synthetic dataset, seed tickers and a matching config")
    p.add_argument("--out", required=True, help="directory to write into")
    p.add_argument("--seed", type=int, default=0)
    p = sub.add_parser("config", help="print the effective configuration")
    _common(p)
    return parser


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    overrides = []
    for attr, key in (("seed", "run.seed"), ("threads", "run.threads"), ("out", "run.out_dir"), ("top_x", "backtest.top_x")):
        v = getattr(args, attr, None)
        if v is not None:
            overrides.append((key, v, None))
    return from_pairs(overrides, base=cfg) if overrides else cfg


def _synth(out: Path, seed: int) -> None:
    from .synth import write_bundle

    write_bundle(out, seed)
    preset = (Path(__file__).parent / "data" / "synthetic.cfg").read_text()
    lines = [f"data.path = {json.dumps(str(out / 'market.csv'))}", f"data.seed_dir = {json.dumps(str(out / 'seed'))}"]
    (out / "synthetic.cfg").write_text(preset + "\n".join(lines) + "\n")
    print(f"wrote {out / 'market.csv'}, {out / 'seed'} and {out / 'synthetic.cfg'}")


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("PATTERNFORGE_LOG", "INFO").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        if args.command == "synth":
            _synth(Path(args.out), args.seed)
            return 0
        cfg = resolve_config(args)
        if args.command == "config":
            sys.stdout.write(emit_config(cfg))
            return 0
        import torch

        torch.set_num_threads(cfg.run.threads)
        pipe = Pipeline(cfg)
        if args.command == "run":
            stages = (args.stage,) if args.stage else STAGES
            pipe.run(stages, resume=args.resume)
        else:
            pipe.run(COMMAND_STAGES[args.command])
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return 2
    except PipelineError as exc:
        log.error("%s", exc)
        return 1
    log.info("done; artifacts in %s", pipe.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
