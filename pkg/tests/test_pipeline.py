import itertools
import json

import numpy as np
import pytest

from patternforge.config import from_pairs, load_config
from patternforge.errors import PipelineError
from patternforge.pipeline import STAGES, Pipeline, artifact_name, dump_json, validate_artifact

FAST = [("encoder.epochs", 2, None)]


def fast_config(**extra):
    pairs = FAST + [(k.replace("__", "."), v, None) for k, v in extra.items()]
    return from_pairs(pairs, base=load_config("synthetic"))


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    Pipeline(fast_config(), out).run()
    return out


def artifact(run_dir, stage):
    return json.loads((run_dir / artifact_name(stage)).read_text())


class TestArtifacts:
    def test_all_present_and_valid(self, run_dir):
        for stage in STAGES:
            doc = artifact(run_dir, stage)
            validate_artifact(stage, doc)
            assert doc["schema_version"] == 1 and doc["seed"] == 0
            assert doc["config_hash"] == Pipeline(fast_config(), run_dir).stage_hash(stage)
        for name in ("encoder_loss.csv", "trades.csv", "random_trades.csv", "equity.csv"):
            assert (run_dir / name).exists()

    def test_canonical_form(self, run_dir):
        text = (run_dir / "report.json").read_text()
        assert dump_json(json.loads(text)) == text

    def test_upstream_hashes_chain(self, run_dir):
        for stage in STAGES:
            doc = artifact(run_dir, stage)
            for up, h in doc["upstream"].items():
                assert artifact(run_dir, up)["config_hash"] == h


class TestRunContracts:
    def test_nesting_of_confidence_levels(self, run_dir):
        levels = artifact(run_dir, "backtest")["payload"]["levels"]
        kept = [set(levels[f"T@{x}"]["retained"]) for x in (20, 60, 80, 100)]
        for small, big in itertools.pairwise(kept):
            assert small <= big

    def test_no_discarded_label_predicted(self, run_dir):
        bt = artifact(run_dir, "backtest")["payload"]
        assert not set(bt["predicted"]) & set(bt["discarded"])
        for lvl in bt["levels"].values():
            assert not {t["pattern_label"] for t in lvl["trades"]} & set(bt["discarded"])

    def test_confusion_columns(self, run_dir):
        for cm in artifact(run_dir, "report")["payload"]["confusion"].values():
            norm = np.array(cm["column_normalized"])
            sums = norm.sum(axis=0)
            nz = np.array(cm["counts"]).sum(axis=0) > 0
            assert np.abs(sums[nz] - 1).max() <= 1e-12

    def test_trade_arithmetic_and_random_parity(self, run_dir):
        rep = artifact(run_dir, "report")["payload"]
        bt = artifact(run_dir, "backtest")["payload"]
        assert len(bt["random"]["trades"]) == rep["n_trades"]
        for t in rep["trades"] + bt["random"]["trades"]:
            assert abs(t["net_return"] - (t["gross_return"] - 0.002)) < 1e-15

    def test_directions_follow_centroid_tails(self, run_dir):
        sim = artifact(run_dir, "simpc")["payload"]
        for c, d in zip(sim["centroids"], sim["directions"]):
            close = np.array(c)[:, 0]
            assert d == (1 if close[-1] > close[15] else -1)


class TestStageIsolation:
    def test_single_stage_rerun(self, run_dir):
        before = {s: (run_dir / artifact_name(s)).stat().st_mtime_ns for s in STAGES}
        text = (run_dir / "simpc.json").read_text()
        Pipeline(fast_config(), run_dir).run(["simpc"])
        after = {s: (run_dir / artifact_name(s)).stat().st_mtime_ns for s in STAGES}
        assert [s for s in STAGES if before[s] != after[s]] == ["simpc"]
        assert (run_dir / "simpc.json").read_text() == text

    def test_stale_upstream_fails_loudly(self, run_dir):
        p = Pipeline(fast_config(simpc__delta=2.0), run_dir)
        with pytest.raises(PipelineError, match="simpc.json was produced with config hash"):
            p.run(["train-encoder"])

    def test_top_x_change_keeps_filter_valid(self, run_dir, tmp_path):
        import shutil

        work = tmp_path / "copy"
        shutil.copytree(run_dir, work)
        p = Pipeline(fast_config(backtest__top_x=60.0), work)
        p.run(["backtest", "report"])
        rep = json.loads((work / "report.json").read_text())["payload"]
        assert rep["n_trades"] == rep["filters"]["retained_by_level"]["T@60"]

    def test_resume_skips_current(self, run_dir):
        before = {s: (run_dir / artifact_name(s)).stat().st_mtime_ns for s in STAGES}
        Pipeline(fast_config(), run_dir).run(resume=True)
        assert before == {s: (run_dir / artifact_name(s)).stat().st_mtime_ns for s in STAGES}

    def test_missing_artifact(self, tmp_path):
        with pytest.raises(PipelineError, match="missing artifact"):
            Pipeline(fast_config(), tmp_path).run(["simpc"])

    def test_corrupt_artifact(self, run_dir, tmp_path):
        doc = artifact(run_dir, "smooth")
        del doc["payload"]["train"]
        (tmp_path / "smooth.json").write_text(json.dumps(doc))
        with pytest.raises(PipelineError, match="fails its schema"):
            Pipeline(fast_config(), tmp_path).load("smooth")

    def test_failure_keeps_partial_artifacts(self, tmp_path):
        bad = fast_config(simpc__kappa=100000)
        with pytest.raises(PipelineError, match="SIMPC kept 0"):
            Pipeline(bad, tmp_path).run()
        assert (tmp_path / "prototypes.json").exists() and not (tmp_path / "simpc.json").exists()


def test_same_seed_same_bytes(run_dir, tmp_path):
    Pipeline(fast_config(), tmp_path).run()
    for stage in STAGES:
        assert (tmp_path / artifact_name(stage)).read_bytes() == (run_dir / artifact_name(stage)).read_bytes(), stage
