"""Stage orchestration with hashed, schema-checked JSON artifacts.

Every artifact carries the hash of the configuration slice that produced it
(chained through its upstream stages) and the run seed. Loading an upstream
artifact whose hash disagrees with the current configuration is an error, so a
stage can be re-run on its own only when its inputs are still valid.
"""
from __future__ import annotations

import dataclasses
import datetime as dt
import hashlib
import json
import logging
import math
import os
import zlib
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Callable

import jsonschema
import numpy as np

from .backtest import (
    LONG,
    build_confusion,
    compute_metrics,
    grid_points,
    infer_direction,
    random_baseline,
    run_protocol,
    truth_directions,
    write_trades_csv,
)
from .chart import PATTERNS, PatternPrototype, build_prototypes_from_segments, detect_extrema, scan_windows
from .classifier import (
    PatternClassifier,
    apply_confidence_threshold,
    featurize_many,
    ks_label_filter,
    predict_proba,
    train_classifier,
)
from .config import PipelineConfig, config_hash
from .encoder import params_from_doc, params_to_doc, prefix_and_interpolate, train_encoder, write_loss_csv
from .errors import ConfigError, PipelineError
from .ingest import ingest_csv
from .series import MultivariateSeries, minmax_columns, resample_columns, smooth_array, split_by_dates
from .shapelets import ShapeletConfig, bank_from_json, bank_to_json, discover_shapelets
from .simpc import assign_label, cluster_set_from_json, cluster_set_to_json, run_simpc

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

STAGES = (
    "ingest",
    "smooth",
    "prototypes",
    "simpc",
    "train-encoder",
    "shapelets",
    "train-classifier",
    "ks-filter",
    "backtest",
    "report",
)

UPSTREAM = {
    "ingest": (),
    "smooth": ("ingest",),
    "prototypes": (),
    "simpc": ("smooth", "prototypes"),
    "train-encoder": ("simpc",),
    "shapelets": ("train-encoder",),
    "train-classifier": ("shapelets",),
    "ks-filter": ("train-classifier",),
    "backtest": ("ks-filter",),
    "report": ("backtest",),
}

# Config entries each stage depends on: whole sections or single "section.key" entries.
INPUTS = {
    "ingest": ("data",),
    "smooth": ("split", "smoothing"),
    "prototypes": ("data", "prototypes", "simpc.ref_len", "simpc.m"),
    "simpc": ("simpc",),
    "train-encoder": ("encoder", "classifier.eval_fraction"),
    "shapelets": ("shapelets",),
    "train-classifier": ("classifier",),
    "ks-filter": ("backtest.window", "backtest.interval", "backtest.inference_len"),
    "backtest": ("backtest",),
    "report": (),
}

BUNDLED_DATA = Path(__file__).parent / "data"


def artifact_name(stage: str) -> str:
    return stage.replace("-", "_") + ".json"


def _sanitize(obj):
    if isinstance(obj, dict):
        return {str(k): _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _sanitize(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def dump_json(obj) -> str:
    """Canonical text form: sorted keys, no NaN, trailing newline."""
    return json.dumps(_sanitize(obj), sort_keys=True, indent=1, allow_nan=False) + "\n"


def load_schema(stage: str) -> dict:
    text = resources.files("patternforge").joinpath("schemas", stage.replace("-", "_") + ".schema.json").read_text()
    return json.loads(text)


def validate_artifact(stage: str, doc: dict) -> None:
    try:
        jsonschema.validate(doc, load_schema(stage))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise PipelineError(f"{stage} artifact fails its schema at {where}: {exc.message}") from None


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Pipeline:
    """One configured run rooted at ``out_dir``."""

    def __init__(self, cfg: PipelineConfig, out_dir: str | Path | None = None):
        if "close" not in cfg.data.channels:
            raise ConfigError("data.channels must include close (it drives trading and chart detection)")
        self.cfg = cfg
        self.out = Path(out_dir if out_dir is not None else cfg.run.out_dir)
        self._hashes: dict[str, str] = {}
        self._cache: dict[str, dict] = {}

    # --- hashing, seeds, persistence ------------------------------------------

    def _inputs(self, stage: str) -> dict:
        out = {}
        for item in INPUTS[stage]:
            sec, _, key = item.partition(".")
            values = self.cfg.section_dict(sec)
            out[item] = values[key] if key else values
        return out

    def stage_hash(self, stage: str) -> str:
        if stage not in self._hashes:
            self._hashes[stage] = config_hash({
                "stage": stage,
                "schema_version": SCHEMA_VERSION,
                "seed": self.cfg.run.seed,
                "inputs": self._inputs(stage),
                "upstream": {u: self.stage_hash(u) for u in UPSTREAM[stage]},
            })
        return self._hashes[stage]

    def seed_for(self, stage: str) -> int:
        ss = np.random.SeedSequence([self.cfg.run.seed, zlib.crc32(stage.encode())])
        return int(ss.generate_state(1)[0])

    def rng(self, stage: str) -> np.random.Generator:
        return np.random.default_rng(self.seed_for(stage))

    def path(self, stage: str) -> Path:
        return self.out / artifact_name(stage)

    def write(self, stage: str, payload: dict) -> dict:
        doc = {
            "schema_version": SCHEMA_VERSION,
            "stage": stage,
            "config_hash": self.stage_hash(stage),
            "upstream": {u: self.stage_hash(u) for u in UPSTREAM[stage]},
            "seed": self.cfg.run.seed,
            "payload": payload,
        }
        doc = json.loads(dump_json(doc))
        validate_artifact(stage, doc)
        self.out.mkdir(parents=True, exist_ok=True)
        tmp = self.path(stage).with_suffix(".tmp")
        tmp.write_text(dump_json(doc))
        os.replace(tmp, self.path(stage))
        self._cache[stage] = doc
        return doc

    def load(self, stage: str) -> dict:
        """Payload of a stage artifact, refusing stale or foreign ones."""
        if stage in self._cache:
            return self._cache[stage]["payload"]
        p = self.path(stage)
        if not p.exists():
            raise PipelineError(f"missing artifact {p}; run stage {stage!r} first")
        doc = json.loads(p.read_text())
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise PipelineError(f"{p}: schema_version {doc.get('schema_version')} != {SCHEMA_VERSION}")
        validate_artifact(stage, doc)
        want = self.stage_hash(stage)
        if doc["config_hash"] != want:
            raise PipelineError(
                f"{p} was produced with config hash {doc['config_hash'][:12]} but the current "
                f"configuration gives {want[:12]}; re-run stage {stage!r} and everything after it"
            )
        self._cache[stage] = doc
        return doc["payload"]

    def is_current(self, stage: str) -> bool:
        try:
            self.load(stage)
            return True
        except PipelineError:
            return False

    # --- orchestration ---------------------------------------------------------

    def run_stage(self, stage: str) -> dict:
        if stage not in STAGES:
            raise PipelineError(f"unknown stage {stage!r}; choose from {', '.join(STAGES)}")
        log.info("stage %s", stage)
        fn: Callable[[], dict] = getattr(self, "_" + stage.replace("-", "_"))
        try:
            payload = fn()
        except PipelineError:
            raise
        except (ValueError, RuntimeError) as exc:
            raise PipelineError(f"stage {stage} failed: {exc}") from exc
        return self.write(stage, payload)

    def run(self, stages=STAGES, resume: bool = False) -> None:
        for stage in stages:
            if resume and self.is_current(stage):
                log.info("stage %s is current; skipped", stage)
                continue
            self.run_stage(stage)

    # --- shared data views -------------------------------------------------------

    @cached_property
    def _series(self) -> dict:
        doc = self.load("ingest")
        return {"dates": doc["dates"], "values": np.asarray(doc["values"], dtype=float), "channels": doc["channels"]}

    @cached_property
    def _split(self) -> dict:
        return self.load("smooth")

    @property
    def price_channel(self) -> int:
        return list(self.cfg.data.channels).index("close")

    def _segment(self, name: str) -> tuple[int, int]:
        r = self._split[name]
        return r["start"], r["stop"]

    def _raw(self, name: str) -> np.ndarray:
        a, b = self._segment(name)
        return self._series["values"][a:b]

    def _smoothed(self, name: str) -> np.ndarray:
        return np.asarray(self._split[name + "_smoothed"], dtype=float)

    @cached_property
    def _clusters(self):
        return cluster_set_from_json(self.load("simpc"))

    def _window_features(self, raw: np.ndarray, ends, shapelets) -> np.ndarray:
        bt = self.cfg.backtest
        mats = [minmax_columns(resample_columns(raw[t - bt.window + 1 : t + 1], bt.inference_len)) for t in ends]
        return featurize_many(mats, shapelets)

    def _truth_labels(self, smoothed: np.ndarray, ends) -> list[int]:
        bt = self.cfg.backtest
        cents = self._clusters.centroids
        return [assign_label(smoothed[t - bt.window + 1 : t + bt.interval + 1], cents, self.cfg.simpc) for t in ends]

    # --- stages ------------------------------------------------------------------

    def _data_path(self) -> Path:
        return Path(self.cfg.data.path) if self.cfg.data.path else BUNDLED_DATA / "market.csv"

    def _ingest(self) -> dict:
        path = self._data_path()
        s = ingest_csv(path, self.cfg.data.channels, self.cfg.data.rsi_period)
        return {
            "source": self.cfg.data.path or "bundled:market.csv",
            "sha256": _sha256_file(path),
            "channels": list(s.channels),
            "rsi_period": self.cfg.data.rsi_period,
            "dates": [d.isoformat() for d in s.dates],
            "values": s.values,
        }

    def _smooth(self) -> dict:
        ser = self._series
        warm = self.cfg.data.rsi_period if "rsi" in ser["channels"] else 0
        full = MultivariateSeries([dt.date.fromisoformat(d) for d in ser["dates"]], ser["values"], ser["channels"])
        sp = self.cfg.split
        ranges = [(sp.train_start, sp.train_end), (sp.validation_start, sp.validation_end), (sp.test_start, sp.test_end)]
        parts = split_by_dates(full, ranges)
        iso = ser["dates"]
        out = {"warmup_rows": warm}
        for name, part in zip(("train", "validation", "test"), parts):
            if len(part) == 0:
                start = stop = 0
            else:
                start = max(iso.index(part.dates[0].isoformat()), warm)
                stop = iso.index(part.dates[-1].isoformat()) + 1
            out[name] = {"start": start, "stop": stop, "n_rows": max(stop - start, 0)}
        for name in ("train", "test"):
            if out[name]["n_rows"] < self.cfg.backtest.window + self.cfg.backtest.interval + 1:
                raise PipelineError(f"{name} split holds only {out[name]['n_rows']} usable rows")
            a, b = out[name]["start"], out[name]["stop"]
            out[name + "_smoothed"] = smooth_array(ser["values"][a:b], self.cfg.smoothing.bandwidth)
        return out

    def _seed_dir(self) -> Path | None:
        d = self.cfg.data.seed_dir
        if d.lower() == "none" or not self.cfg.prototypes.enabled:
            return None
        return Path(d) if d else BUNDLED_DATA / "seed"

    def _prototypes(self) -> dict:
        seed_dir = self._seed_dir()
        pc, ref_len = self.cfg.prototypes, self.cfg.simpc.ref_len
        if seed_dir is None:
            return {"enabled": False, "tickers": [], "prototypes": [], "seeds": []}
        files = sorted(seed_dir.glob("*.csv"))
        if not files:
            raise PipelineError(f"no seed CSVs in {seed_dir}")
        groups: dict[str, list[np.ndarray]] = {p: [] for p in PATTERNS}
        tickers = []
        price = self.price_channel
        for f in files:
            s = ingest_csv(f, self.cfg.data.channels, self.cfg.data.rsi_period)
            warm = self.cfg.data.rsi_period if "rsi" in s.channels else 0
            vals = s.values[warm:]
            ext = detect_extrema(vals[:, price], pc.smooth_bandwidth, pc.coarse_bandwidth)
            dets = scan_windows(ext, len(vals), pc.min_window, pc.max_window, pc.tolerance)
            counts = {p: 0 for p in PATTERNS}
            for d in dets:
                groups[d.pattern].append(resample_columns(minmax_columns(vals[d.start : d.start + d.length]), ref_len))
                counts[d.pattern] += 1
            tickers.append({"name": f.stem, "sha256": _sha256_file(f), "rows": len(vals), "detections": counts})
        protos = build_prototypes_from_segments(groups, ref_len, price)
        seeds = [p.pattern_name for p in protos][: self.cfg.simpc.m]
        return {"enabled": True, "tickers": tickers, "prototypes": [p.to_json() for p in protos], "seeds": seeds}

    def _simpc(self) -> dict:
        protos = [PatternPrototype.from_json(p) for p in self.load("prototypes")["prototypes"]]
        by_name = {p.pattern_name: p.values for p in protos}
        seeds = [by_name[n] for n in self.load("prototypes")["seeds"]]
        cfg = self.cfg.simpc
        if len(seeds) < cfg.m:
            log.warning("only %d of m=%d chart prototypes available; the rest are drawn from data", len(seeds), cfg.m)
            cfg = dataclasses.replace(cfg, m=len(seeds))
        cs = run_simpc(self._smoothed("train"), seeds, cfg, self.rng("simpc"))
        if cs.P_prime < 2:
            raise PipelineError(f"SIMPC kept {cs.P_prime} pattern(s); at least 2 are needed (lower simpc.kappa?)")
        doc = cluster_set_to_json(cs)
        doc["directions"] = [infer_direction(c, self.cfg.encoder.gamma, self.price_channel) for c in cs.centroids]
        doc["seeds_used"] = len(seeds)
        return doc

    def _fit_cutoff(self) -> int:
        n = self._split["train"]["n_rows"]
        return int(math.floor((1 - self.cfg.classifier.eval_fraction) * n))

    def _fit_set(self) -> tuple[list[np.ndarray], list[int]]:
        X = self._smoothed("train")
        cut = self._fit_cutoff()
        subs, labels = [], []
        for lab, mem in enumerate(self._clusters.members):
            for s, l in mem:
                if s + l <= cut:
                    subs.append(X[s : s + l])
                    labels.append(lab)
        order = sorted(range(len(subs)), key=lambda k: (labels[k], k))
        return [subs[k] for k in order], [labels[k] for k in order]

    def _train_encoder(self) -> dict:
        import torch

        torch.set_num_threads(self.cfg.run.threads)
        subs, labels = self._fit_set()
        enc_cfg = dataclasses.replace(self.cfg.encoder, rng_seed=self.seed_for("train-encoder"))
        trained = train_encoder(subs, enc_cfg)
        self.out.mkdir(parents=True, exist_ok=True)
        write_loss_csv(self.out / "encoder_loss.csv", trained.loss_trace)
        doc = params_to_doc(trained)
        doc["fit_cutoff"] = self._fit_cutoff()
        doc["n_fit"] = len(subs)
        doc["n_units"] = trained.n_units
        return doc

    def _encoder(self):
        return params_from_doc(self.load("train-encoder"))

    def _shapelets(self) -> dict:
        subs, labels = self._fit_set()
        trained = self._encoder()
        cfg = ShapeletConfig(self.cfg.shapelets.g, self.cfg.shapelets.kmeans_max_iter, self.seed_for("shapelets"))
        bank = discover_shapelets(trained.model, subs, labels, self._clusters.P_prime, trained.config, cfg)
        return bank_to_json(bank, cfg, self._clusters.P_prime)

    def _bank(self):
        return bank_from_json(self.load("shapelets"))

    def _train_classifier(self) -> dict:
        subs, labels = self._fit_set()
        enc_cfg = self.cfg.encoder
        X = featurize_many([prefix_and_interpolate(s, enc_cfg) for s in subs], self._bank())
        clf = train_classifier(X, labels, self.cfg.classifier)
        _, _, pred = predict_proba(clf, X)
        doc = clf.to_json()
        doc["train_accuracy"] = float(np.mean(pred == np.asarray(labels)))
        doc["n_train"] = len(labels)
        return doc

    def _eval_points(self) -> list[int]:
        bt = self.cfg.backtest
        n = self._split["train"]["n_rows"]
        start = self._fit_cutoff() + bt.window - 1
        return list(range(start, n - bt.interval, bt.interval))

    def _ks_filter(self) -> dict:
        clf = PatternClassifier.from_json(self.load("train-classifier"))
        ends = self._eval_points()
        if not ends:
            raise PipelineError("the held-out part of the training split has no decision points")
        X = self._window_features(self._raw("train"), ends, self._bank())
        _, pm, pred = predict_proba(clf, X)
        truth = self._truth_labels(self._smoothed("train"), ends)
        ks_label_filter(clf, pm, pred, np.asarray(truth))
        doc = clf.to_json()
        doc["evaluation"] = {"decision_points": ends, "predicted": pred, "truth": truth, "p_max": pm}
        return doc

    def _classifier(self) -> PatternClassifier:
        return PatternClassifier.from_json(self.load("ks-filter"))

    def _backtest(self) -> dict:
        bt = self.cfg.backtest
        clf = self._classifier()
        raw = self._raw("test")
        close = raw[:, self.price_channel]
        a, _ = self._segment("test")
        dates = self._series["dates"][a : a + len(raw)]
        grid = grid_points(len(raw), bt.window, bt.interval)
        X = self._window_features(raw, grid, self._bank())
        _, pm, pred = predict_proba(clf, X)
        _, _, unfiltered = predict_proba(dataclasses.replace(clf, discarded=[]), X)
        truth = self._truth_labels(self._smoothed("test"), grid)
        directions = dict(enumerate(self.load("simpc")["directions"]))
        levels = sorted(set(bt.top_x_levels) | {bt.top_x})
        by_level = {}
        for x in levels:
            kept = apply_confidence_threshold(pred, pm, x)
            trades = run_protocol(close, dates, grid, kept, pm, directions, bt)
            metrics = compute_metrics(trades, truth_directions(close, trades, bt.interval))
            by_level[_level_key(x)] = {
                "top_x": x,
                "retained": np.flatnonzero(kept != -1),
                "labels": kept,
                "metrics": metrics.to_json(),
                "trades": [t.to_json() for t in trades],
            }
        primary = by_level[_level_key(bt.top_x)]
        k = len(primary["trades"])
        rseed = self.seed_for("backtest")
        rtrades = random_baseline(close, dates, grid, k, rseed, bt) if k else []
        rmetrics = compute_metrics(rtrades, truth_directions(close, rtrades, bt.interval))
        classes = clf.labels
        return {
            "grid": grid,
            "grid_dates": [dates[t] for t in grid],
            "predicted": pred,
            "predicted_unfiltered": unfiltered,
            "p_max": pm,
            "truth_labels": truth,
            "directions": {str(k_): ("long" if v == LONG else "short") for k_, v in directions.items()},
            "discarded": clf.discarded,
            "primary_top_x": bt.top_x,
            "levels": by_level,
            "random": {"seed": rseed, "metrics": rmetrics.to_json(), "trades": [t.to_json() for t in rtrades]},
            "confusion": {
                "post_ks": build_confusion(truth, pred, classes).to_json(),
                "post_top_x": build_confusion(truth, primary["labels"], classes).to_json(),
            },
        }

    def _report(self) -> dict:
        bt_doc = self.load("backtest")
        ks = self.load("ks-filter")
        enc = self.load("train-encoder")
        sim = self.load("simpc")
        primary = bt_doc["levels"][_level_key(bt_doc["primary_top_x"])]
        n_grid = len(bt_doc["grid"])
        n_post_ks = sum(1 for p in bt_doc["predicted"] if p != -1)
        echo = self.cfg.to_dict()
        echo["run"].pop("out_dir")
        report = {
            "config": echo,
            "artifacts": {s: self.stage_hash(s) for s in STAGES if s != "report"},
            "simpc": {
                "P_prime": sim["P_prime"],
                "cluster_sizes": [len(m) for m in sim["members"]],
                "pre_merge": {k: sim["diagnostics"]["pre_merge"][k] for k in ("avg_norm", "min_norm", "n_subsequences")},
                "directions": sim["directions"],
            },
            "encoder": {"epochs": len(enc["loss_trace"]), "final_loss": enc["loss_trace"][-1] if enc["loss_trace"] else None,
                        "n_fit": enc["n_fit"]},
            "shapelets": {"count": len(self.load("shapelets")["shapelets"])},
            "filters": {
                "ks_discarded": ks["discarded"],
                "ks_p_values": ks["ks_report"]["p_value"],
                "ks_removed_fraction_eval": ks["ks_report"]["removed_fraction"],
                "ks_removed_fraction_test": 1 - n_post_ks / n_grid if n_grid else 0.0,
                "top_x": bt_doc["primary_top_x"],
                "top_x_removed_fraction": 1 - len(primary["trades"]) / n_post_ks if n_post_ks else 0.0,
                "retained_by_level": {k: len(v["retained"]) for k, v in bt_doc["levels"].items()},
            },
            "metrics": {
                "ours": {k: v["metrics"] for k, v in bt_doc["levels"].items()},
                "random": bt_doc["random"]["metrics"],
            },
            "n_decision_points": n_grid,
            "n_trades": len(primary["trades"]),
            "trades": primary["trades"],
            "confusion": bt_doc["confusion"],
        }
        self._write_plot_data(primary["trades"], bt_doc["random"]["trades"])
        return report

    def _write_plot_data(self, ours: list[dict], rand: list[dict]) -> None:
        from .backtest import TradeRecord

        def rec(d):
            d = dict(d)
            d["direction"] = 1 if d["direction"] == "long" else -1
            d["p_max"] = float("nan") if d["p_max"] is None else d["p_max"]
            return TradeRecord(**d)

        self.out.mkdir(parents=True, exist_ok=True)
        write_trades_csv(self.out / "trades.csv", [rec(d) for d in ours])
        write_trades_csv(self.out / "random_trades.csv", [rec(d) for d in rand])
        with open(self.out / "equity.csv", "w") as fh:
            fh.write("trade,ours,random\n")
            eo = er = 0.0
            for i in range(max(len(ours), len(rand))):
                eo += ours[i]["net_return"] if i < len(ours) else 0.0
                er += rand[i]["net_return"] if i < len(rand) else 0.0
                fh.write(f"{i + 1},{eo!r},{er!r}\n")


def _level_key(x: float) -> str:
    return f"T@{x:g}"
