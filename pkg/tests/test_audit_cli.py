import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from ragmark import audit
from ragmark.cli import main as cli_main
from ragmark.config import (
    AuditConfig,
    build_embedder,
    config_from_dict,
    load_config,
    load_reference_file,
    references_for,
)
from ragmark.demo import write_demo_workspace
from ragmark.errors import InvalidConfigError
from ragmark.verification import read_trial_log


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = write_demo_workspace(
        tmp_path_factory.mktemp("ws"), n_specs=2, n_probes=3, seed=13,
        emission_probability=1.0,
    )
    cfg = load_config(root / "config.json")
    embedder = build_embedder(cfg)
    audit.run_index(root / "assets", embedder, root / "out" / "index.jsonl")
    audit.run_inject(
        root / "out" / "index.jsonl", cfg.corpus_path, embedder,
        root / "out" / "index_watermarked.jsonl",
    )
    return root, cfg


def strip_timestamps(text: str) -> str:
    """Canonicalize a JSONL log with per-record timestamps removed."""
    lines = []
    for raw in text.splitlines():
        obj = json.loads(raw)
        obj.pop("timestamp", None)
        obj.pop("generated_at", None)
        lines.append(json.dumps(obj, sort_keys=True))
    return "\n".join(lines)


def strip_report(text: str) -> str:
    """Canonicalize a JSON report document with its timestamp removed."""
    obj = json.loads(text)
    obj.pop("generated_at", None)
    return json.dumps(obj, sort_keys=True)


class TestIndexCommand:
    def test_empty_assets_dir(self, tmp_path, workspace):
        _root, cfg = workspace
        empty = tmp_path / "none"
        empty.mkdir()
        out = tmp_path / "empty.jsonl"
        count = audit.run_index(empty, build_embedder(cfg), out)
        assert count == 0
        header = json.loads(out.read_text().splitlines()[0])
        assert header["count"] == 0

    def test_rerun_bit_identical(self, tmp_path, workspace):
        root, cfg = workspace
        embedder = build_embedder(cfg)
        out1, out2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        audit.run_index(root / "assets", embedder, out1)
        audit.run_index(root / "assets", build_embedder(cfg), out2)
        assert out1.read_bytes() == out2.read_bytes()


class TestProbe:
    def test_grid_cardinality(self, workspace, tmp_path):
        root, cfg = workspace
        trials = audit.run_probe(cfg, log_path=tmp_path / "log.jsonl")
        assert len(trials) == 2 * 3
        cells = {(t.spec_id, t.probe_index) for t in trials}
        assert len(cells) == 6

    def test_happy_path_full_success(self, workspace, tmp_path):
        root, cfg = workspace
        log = tmp_path / "log.jsonl"
        audit.run_probe(cfg, log_path=log)
        report = audit.run_verify(cfg, log, report_path=tmp_path / "report.json")
        assert report["aggregates"]["vsr"] == 1.0
        assert report["aggregates"]["cgsr"] == 1.0
        assert report["aggregates"]["mean_rank"] == 1.0
        assert report["decision"] == "uses-watermarked-data"

    def test_workers_do_not_change_the_log(self, workspace, tmp_path):
        root, cfg = workspace
        solo, pooled = tmp_path / "solo.jsonl", tmp_path / "pooled.jsonl"
        audit.run_probe(cfg, log_path=solo)
        cfg2 = load_config(root / "config.json")
        cfg2.workers = 4
        audit.run_probe(cfg2, log_path=pooled)
        assert strip_timestamps(solo.read_text()) == strip_timestamps(pooled.read_text())

    def test_backend_errors_logged_not_fatal(self, workspace, tmp_path):
        # scripted generator with no default response raises on failed draws:
        # the grid still completes, errored cells score 0 and leave CGSR
        root, _cfg = workspace
        cfg = load_config(root / "config.json")
        cfg.generation = {
            "kind": "scripted", "emission_probability": 0.0, "default_response": None,
        }
        log = tmp_path / "log.jsonl"
        trials = audit.run_probe(cfg, log_path=log)
        assert len(trials) == 6
        assert all(t.eval_bit == 0 and t.error is not None for t in trials)
        assert all(t.rank == 1 for t in trials)  # retrieval itself succeeded
        report = audit.run_verify(cfg, log, report_path=tmp_path / "r.json")
        assert report["aggregates"]["vsr"] == 0.0
        assert report["aggregates"]["cgsr"] is None

    def test_dim_mismatch_refused_at_start(self, workspace, tmp_path):
        root, _cfg = workspace
        cfg = load_config(root / "config.json")
        geometry = json.loads((root / "geometry.json").read_text())
        geometry["dim"] = geometry["dim"] * 2
        alt = tmp_path / "geometry_wide.json"
        alt.write_text(json.dumps(geometry))
        cfg.embedding = {"kind": "mock", "geometry_file": str(alt)}
        with pytest.raises(InvalidConfigError, match="dim"):
            audit.run_probe(cfg, log_path=tmp_path / "never.jsonl")


class TestVerify:
    def test_clean_behavior_log_yields_clean(self, workspace, tmp_path):
        root, _cfg = workspace
        cfg = load_config(root / "config.json")
        cfg.generation = {"kind": "scripted", "emission_probability": 0.0}
        log = tmp_path / "clean.jsonl"
        audit.run_probe(cfg, log_path=log)
        report = audit.run_verify(cfg, log, report_path=tmp_path / "r.json")
        assert report["aggregates"]["vsr"] == 0.0
        assert report["decision"] == "clean"

    def test_verify_is_pure_function_of_log(self, workspace, tmp_path):
        root, cfg = workspace
        log = tmp_path / "log.jsonl"
        audit.run_probe(cfg, log_path=log)
        p1, p2 = tmp_path / "r1.json", tmp_path / "r2.json"
        audit.run_verify(cfg, log, report_path=p1)
        audit.run_verify(cfg, log, report_path=p2)
        assert strip_report(p1.read_text()) == strip_report(p2.read_text())

    def test_equality_test_against_baseline(self, workspace, tmp_path):
        root, cfg = workspace
        wm_log = tmp_path / "wm.jsonl"
        audit.run_probe(cfg, log_path=wm_log)
        clean_cfg = load_config(root / "config.json")
        clean_cfg.generation = {"kind": "scripted", "emission_probability": 0.0}
        clean_log = tmp_path / "clean.jsonl"
        audit.run_probe(clean_cfg, log_path=clean_log)
        report = audit.run_verify(cfg, wm_log, baseline_log=clean_log,
                                  report_path=tmp_path / "r.json")
        eq = report["equality_test"]
        assert eq["reject_at_alpha"]
        assert eq["p_two_sided"] < 1e-4

    def test_nothing_to_test_against_is_config_error(self, workspace, tmp_path):
        root, cfg = workspace
        log = tmp_path / "log.jsonl"
        audit.run_probe(cfg, log_path=log)
        bare = load_config(root / "config.json")
        bare.reference_preset = None
        with pytest.raises(InvalidConfigError, match="test against"):
            audit.run_verify(bare, log, report_path=tmp_path / "r.json")

    def test_report_numbers_recomputable_from_log(self, workspace, tmp_path):
        root, cfg = workspace
        log = tmp_path / "log.jsonl"
        audit.run_probe(cfg, log_path=log)
        report = audit.run_verify(cfg, log, report_path=tmp_path / "r.json")
        trials = read_trial_log(log)
        assert report["aggregates"]["vsr"] == sum(t.eval_bit for t in trials) / 6
        assert report["suspect_stats"]["n"] == len(trials)

    def test_partial_log_from_crashed_run_reverifies(self, workspace, tmp_path):
        # the log is streamed during the run, so a crash leaves a valid prefix;
        # missing grid cells count as failures in the success rate
        root, cfg = workspace
        log = tmp_path / "log.jsonl"
        audit.run_probe(cfg, log_path=log)
        lines = log.read_text().splitlines()
        partial = tmp_path / "partial.jsonl"
        partial.write_text("\n".join(lines[:3]) + "\n")
        report = audit.run_verify(cfg, partial, report_path=tmp_path / "r.json")
        assert report["aggregates"]["n_observed"] == 3
        assert report["aggregates"]["vsr"] == 3 / 6

    def test_dangling_watermark_id_refused(self, workspace, tmp_path):
        # every watermark record must resolve in the corpus at audit start
        root, _cfg = workspace
        cfg = load_config(root / "config.json")
        from ragmark.kb import ImageRecord, as_embedding, load_index, save_index
        import numpy as np

        base = load_index(cfg.index_path)
        orphan = ImageRecord(
            "wm-orphan", "wm_assets/orphan.png",
            as_embedding(np.ones(base.dim, np.float32)), watermark_id="wm-orphan",
        )
        bad_index = tmp_path / "bad.jsonl"
        save_index(base.extended([orphan]), bad_index)
        cfg.index_path = str(bad_index)
        with pytest.raises(InvalidConfigError, match="wm-orphan"):
            audit.run_probe(cfg, log_path=tmp_path / "never.jsonl")


class TestSequentialCommand:
    def test_watermarked_service_stops_early(self, workspace, tmp_path):
        root, _cfg = workspace
        cfg = load_config(root / "config.json")
        cfg.out_dir = str(tmp_path / "seq")
        report = audit.run_sequential(cfg)
        assert report["decision"] == "uses-watermarked-data"
        assert report["queries_used"] <= 5
        assert Path(report["p_trace_file"]).exists()

    def test_clean_service_inconclusive(self, workspace, tmp_path):
        root, _cfg = workspace
        cfg = load_config(root / "config.json")
        cfg.generation = {"kind": "scripted", "emission_probability": 0.0}
        cfg.out_dir = str(tmp_path / "seq0")
        report = audit.run_sequential(cfg)
        assert report["decision"] == "inconclusive"
        assert report["queries_used"] == cfg.max_queries


class TestHarmlessnessCommand:
    def test_zero_rate_under_orthogonal_geometry(self, workspace, tmp_path):
        root, cfg = workspace
        report = audit.run_harmlessness(cfg, report_path=tmp_path / "h.json")
        assert report["watermark_retrieval_rate"] == 0.0
        assert report["n_queries"] == 40

    def test_adversarial_geometry_reports_nonzero_honestly(self, workspace, tmp_path):
        # watermark cluster placed on a normal-topic centroid: the measurement
        # must report the collision, not hide it; the index is rebuilt so the
        # stored watermark embeddings actually sit in the colliding cluster
        root, _cfg = workspace
        cfg = load_config(root / "config.json")
        geometry = json.loads((root / "geometry.json").read_text())
        for name, cluster in geometry["clusters"].items():
            if name.startswith("cluster-wm-"):
                cluster["centroid"] = geometry["clusters"]["topic-0"]["centroid"]
                cluster["dispersion"] = 0.0
        alt = tmp_path / "geometry_adversarial.json"
        alt.write_text(json.dumps(geometry))
        cfg.embedding = {"kind": "mock", "geometry_file": str(alt)}
        embedder = build_embedder(cfg)
        audit.run_index(root / "assets", embedder, tmp_path / "index.jsonl")
        audit.run_inject(tmp_path / "index.jsonl", cfg.corpus_path, embedder,
                         tmp_path / "index_adv.jsonl")
        cfg.index_path = str(tmp_path / "index_adv.jsonl")
        report = audit.run_harmlessness(cfg, report_path=tmp_path / "h.json")
        assert report["watermark_retrieval_rate"] > 0.0


class TestTransformCommand:
    def test_replace_mode_preserves_record_count(self, workspace, tmp_path):
        root, cfg = workspace
        result = audit.run_transform(cfg, root, tmp_path / "assets_t", tmp_path / "index_t.jsonl")
        assert result["n_transformed"] == 2
        from ragmark.kb import load_index

        original = load_index(cfg.index_path)
        transformed = load_index(tmp_path / "index_t.jsonl")
        assert len(transformed) == len(original)
        assert transformed.watermark_ids() == original.watermark_ids()

    def test_add_mode_appends_records(self, workspace, tmp_path):
        root, _cfg = workspace
        cfg = load_config(root / "config.json")
        cfg.transform_mode = "add"
        result = audit.run_transform(cfg, root, tmp_path / "assets_t2", tmp_path / "index_t2.jsonl")
        from ragmark.kb import load_index

        original = load_index(cfg.index_path)
        transformed = load_index(tmp_path / "index_t2.jsonl")
        assert len(transformed) == len(original) + result["n_transformed"]


class TestConfig:
    def test_fingerprint_stable_and_sensitive(self, workspace):
        root, _cfg = workspace
        c1 = load_config(root / "config.json")
        c2 = load_config(root / "config.json")
        assert c1.fingerprint() == c2.fingerprint()
        c2.alpha = 0.01
        assert c1.fingerprint() != c2.fingerprint()

    def test_unknown_keys_rejected(self):
        with pytest.raises(InvalidConfigError, match="alpah"):
            config_from_dict({"alpah": 0.05})

    def test_seed_required_for_mock_backends(self):
        with pytest.raises(InvalidConfigError, match="seed"):
            config_from_dict({"embedding": {"kind": "mock", "geometry": {}}})

    def test_env_overrides_endpoint_only(self, workspace, monkeypatch, tmp_path):
        cfg_doc = {
            "seed": 1,
            "embedding": {"kind": "remote", "endpoint": "http://configured:9"},
            "generation": {"kind": "remote", "endpoint": "http://configured:9"},
        }
        path = tmp_path / "remote.json"
        path.write_text(json.dumps(cfg_doc))
        monkeypatch.setenv("RAGMARK_EMBED_ENDPOINT", "http://override:1")
        cfg = load_config(path)
        assert cfg.embedding["endpoint"] == "http://override:1"
        assert cfg.generation["endpoint"] == "http://configured:9"
        # statistical parameters are never overridable from the environment
        assert cfg.alpha == 0.05

    def test_reference_file_loading(self, tmp_path):
        doc = {
            "method": "acronym",
            "clean": {"mean": 0.005, "variance": 0.02},
            "watermarked": {"mean": 0.6, "variance": 0.2},
            "assumed_n": 256,
        }
        path = tmp_path / "refs.json"
        path.write_text(json.dumps(doc))
        clean, wm = load_reference_file(path)
        assert clean.assumed_n == wm.assumed_n == 256
        cfg = AuditConfig(seed=1, reference_file=str(path), reference_preset=None)
        assert references_for(cfg)[0].mean == 0.005

    def test_shipped_reference_files_match_presets(self):
        from importlib import resources

        from ragmark.stats import REFERENCE_PRESETS

        for method in ("acronym", "spatial"):
            with resources.as_file(
                resources.files("ragmark.data") / f"reference_{method}.json"
            ) as path:
                clean, wm = load_reference_file(path)
            preset_clean, preset_wm = REFERENCE_PRESETS[method]
            assert (clean.mean, clean.variance) == (preset_clean.mean, preset_clean.variance)
            assert (wm.mean, wm.variance) == (preset_wm.mean, preset_wm.variance)


class TestCliSurface:
    def test_full_cli_flow(self, tmp_path):
        runner = CliRunner()
        ws = tmp_path / "cliws"
        result = runner.invoke(cli_main, ["demo", "--out", str(ws), "--specs", "2",
                                          "--probes", "2", "--seed", "3",
                                          "--emission", "1.0"])
        assert result.exit_code == 0, result.output
        config = str(ws / "config.json")
        result = runner.invoke(cli_main, ["index", "--config", config,
                                          "--assets", str(ws / "assets"),
                                          "--out-index", str(ws / "out" / "index.jsonl")])
        assert result.exit_code == 0, result.output
        result = runner.invoke(cli_main, ["inject", "--config", config,
                                          "--index", str(ws / "out" / "index.jsonl"),
                                          "--out-index", str(ws / "out" / "index_watermarked.jsonl")])
        assert result.exit_code == 0, result.output
        result = runner.invoke(cli_main, ["probe", "--config", config])
        assert result.exit_code == 0, result.output
        result = runner.invoke(cli_main, ["verify", "--config", config,
                                          "--log", str(ws / "out" / "evidence.jsonl")])
        assert result.exit_code == audit.EXIT_WATERMARKED, result.output
        result = runner.invoke(cli_main, ["report", "--report", str(ws / "out" / "report.json"),
                                          "--out", str(ws / "out" / "rendered"),
                                          "--index", str(ws / "out" / "index_watermarked.jsonl")])
        assert result.exit_code == 0, result.output
        rendered = (ws / "out" / "rendered" / "report.txt").read_text()
        assert "verification success rate" in rendered
        assert (ws / "out" / "rendered" / "pca.csv").exists()

    def test_clean_service_exits_zero(self, tmp_path):
        runner = CliRunner()
        ws = tmp_path / "cleanws"
        runner.invoke(cli_main, ["demo", "--out", str(ws), "--specs", "2", "--probes", "2"])
        config_doc = json.loads((ws / "config.json").read_text())
        config_doc["generation"] = {"kind": "scripted", "emission_probability": 0.0}
        (ws / "config.json").write_text(json.dumps(config_doc))
        config = str(ws / "config.json")
        runner.invoke(cli_main, ["index", "--config", config, "--assets", str(ws / "assets"),
                                 "--out-index", str(ws / "out" / "index.jsonl")])
        runner.invoke(cli_main, ["inject", "--config", config,
                                 "--index", str(ws / "out" / "index.jsonl"),
                                 "--out-index", str(ws / "out" / "index_watermarked.jsonl")])
        runner.invoke(cli_main, ["probe", "--config", config])
        result = runner.invoke(cli_main, ["verify", "--config", config,
                                          "--log", str(ws / "out" / "evidence.jsonl")])
        assert result.exit_code == audit.EXIT_CLEAN, result.output

    def test_operational_error_exits_one(self, tmp_path):
        runner = CliRunner()
        ws = tmp_path / "errws"
        runner.invoke(cli_main, ["demo", "--out", str(ws)])
        empty_log = ws / "empty.jsonl"
        empty_log.write_text("")
        result = runner.invoke(cli_main, ["verify", "--config", str(ws / "config.json"),
                                          "--log", str(empty_log)])
        assert result.exit_code == audit.EXIT_OPERATIONAL_ERROR
        assert "error:" in result.output

    def test_report_roc_table_from_log_pair(self, workspace, tmp_path):
        root, cfg = workspace
        wm_log = tmp_path / "wm.jsonl"
        audit.run_probe(cfg, log_path=wm_log)
        clean_cfg = load_config(root / "config.json")
        clean_cfg.generation = {"kind": "scripted", "emission_probability": 0.0}
        clean_log = tmp_path / "clean.jsonl"
        audit.run_probe(clean_cfg, log_path=clean_log)
        report = audit.run_verify(cfg, wm_log, report_path=tmp_path / "r.json")
        written = audit.run_report(
            tmp_path / "r.json", tmp_path / "rendered",
            roc_clean_log=clean_log, roc_wm_log=wm_log,
        )
        roc_csv = tmp_path / "rendered" / "roc.csv"
        assert str(roc_csv) in written
        rows = roc_csv.read_text().splitlines()
        assert rows[0] == "fpr,tpr"
        # fully separated services: some threshold yields (fpr 0, tpr 1)
        assert "0.0,1.0" in rows[1:]

    def test_alpha_flag_overrides_config(self, tmp_path):
        runner = CliRunner()
        ws = tmp_path / "alphaws"
        runner.invoke(cli_main, ["demo", "--out", str(ws), "--specs", "2", "--probes", "2"])
        config = str(ws / "config.json")
        runner.invoke(cli_main, ["index", "--config", config, "--assets", str(ws / "assets"),
                                 "--out-index", str(ws / "out" / "index.jsonl")])
        runner.invoke(cli_main, ["inject", "--config", config,
                                 "--index", str(ws / "out" / "index.jsonl"),
                                 "--out-index", str(ws / "out" / "index_watermarked.jsonl")])
        runner.invoke(cli_main, ["probe", "--config", config])
        result = runner.invoke(cli_main, ["verify", "--config", config, "--alpha", "0.01",
                                          "--log", str(ws / "out" / "evidence.jsonl")])
        report = json.loads((ws / "out" / "report.json").read_text())
        assert report["deployment"]["alpha"]["alpha"] == 0.01
