import csv
import json
import statistics
from pathlib import Path

import numpy as np
import pytest
import yaml

from topomia import mia_core
from topomia.errors import ConfigError, DegenerateClassError, DuplicateKeyError, ParseError
from topomia.harness import caption_log, cli, manifest, pipeline, plots
from topomia.harness.caption_log import CaptionLogRecord
from topomia.harness.config import ExperimentConfig, derive_seed, format_tau, load_config, regime_name
from topomia.mia_core import MembershipLabel

SMALL = {
    "dataset": {"n_members": 20, "n_nonmembers": 20},
    "taus": [0, 2],
    "granularities": [5, 10],
    "repeats": 3,
    "train": {"epochs": 15},
}


def write_yaml(path, doc):
    path.write_text(yaml.safe_dump(doc), encoding="utf-8")
    return path


def record(i, label, tau=0.0, tag="m", generated=None):
    return CaptionLogRecord(
        id=f"x{i}",
        label=MembershipLabel(label),
        generated=generated if generated is not None else f"a dark square number {i}",
        references=(f"a dark square number {i % 3}", "a gray circle"),
        tau=tau,
        model_tag=tag,
    )


class TestConfig:
    def test_defaults_validate(self):
        cfg = ExperimentConfig().validate()
        assert cfg.taus == [0.0, 2.0, 3.0]
        assert max(cfg.granularities) <= min(cfg.dataset.n_members, cfg.dataset.n_nonmembers)

    def test_hash_ignores_key_order_and_output_dir(self, tmp_path):
        doc = ExperimentConfig().to_dict()
        shuffled = {k: doc[k] for k in reversed(list(doc))}
        shuffled["dataset"] = {k: doc["dataset"][k] for k in reversed(list(doc["dataset"]))}
        shuffled["output_dir"] = "elsewhere"
        a = load_config(write_yaml(tmp_path / "a.yaml", doc))
        b = load_config(write_yaml(tmp_path / "b.yaml", shuffled))
        assert a.hash() == b.hash()
        b.repeats = 6
        assert a.hash() != b.hash()

    def test_unknown_key(self, tmp_path):
        with pytest.raises(ConfigError, match="bogus"):
            load_config(write_yaml(tmp_path / "c.yaml", {"train": {"bogus": 1}}))

    def test_granularity_larger_than_class(self):
        with pytest.raises(ConfigError):
            load_config(granularities=[10, 61])

    @pytest.mark.parametrize(
        "override",
        [{"taus": [-1.0]}, {"taus": [2.0, 2.0]}, {"repeats": 0}, {"metrics": ["bleu"]}, {"master_seed": -1}],
    )
    def test_invalid_values(self, override):
        with pytest.raises(ConfigError):
            load_config(**override)

    def test_yaml_roundtrip(self, tmp_path):
        cfg = load_config(taus=[0, 1.5])
        path = tmp_path / "cfg.yaml"
        path.write_text(cfg.to_yaml(), encoding="utf-8")
        assert load_config(path).hash() == cfg.hash()

    def test_seed_fan_out(self):
        assert derive_seed(42, "train", 2.0) == derive_seed(42, "train", 2)
        seeds = {derive_seed(42, "train", t) for t in (0.0, 2.0, 3.0)}
        assert len(seeds) == 3
        assert derive_seed(42, "attack", 0.0) not in seeds
        assert all(0 <= s < 2**64 for s in seeds)

    def test_names(self):
        assert format_tau(2.0) == "2" and format_tau(0.5) == "0.5"
        assert [regime_name(t) for t in (0, 2, 3, 7)] == ["Baseline", "Neuro", "Neuro++", "tau=7"]


class TestCaptionLog:
    def test_roundtrip(self, tmp_path):
        recs = [record(i, "member" if i % 2 else "non-member", tau=float(i % 3)) for i in range(9)]
        path = tmp_path / "log.jsonl"
        caption_log.write_caption_log(path, recs)
        assert caption_log.read_caption_log(path) == recs

    def test_parse_error_names_line(self, tmp_path):
        path = tmp_path / "log.jsonl"
        good = record(1, "member").to_json()
        bad = json.dumps({"v": 1, "id": "y", "label": "maybe", "generated": "", "references": ["r"], "tau": 0, "model_tag": "m"})
        path.write_text(f"{good}\n{good.replace('x1', 'x2')}\n{bad}\n", encoding="utf-8")
        with pytest.raises(ParseError) as err:
            caption_log.read_caption_log(path)
        assert err.value.line == 3
        assert "line 3" in str(err.value)

    def test_invalid_json_line(self, tmp_path):
        path = tmp_path / "log.jsonl"
        path.write_text(record(1, "member").to_json() + "\n{not json\n", encoding="utf-8")
        with pytest.raises(ParseError, match="line 2"):
            caption_log.read_caption_log(path)

    @pytest.mark.parametrize(
        "patch",
        [{"v": 2}, {"references": []}, {"tau": -1}, {"tau": True}, {"id": ""}, {"generated": 5}],
    )
    def test_field_validation(self, patch):
        obj = json.loads(record(1, "member").to_json())
        obj.update(patch)
        with pytest.raises(ParseError):
            caption_log.parse_record(obj, 7)

    def test_duplicate_key(self, tmp_path):
        path = tmp_path / "log.jsonl"
        line = record(1, "member").to_json()
        path.write_text(line + "\n" + line + "\n", encoding="utf-8")
        with pytest.raises(DuplicateKeyError, match="line 2"):
            caption_log.read_caption_log(path)

    def test_same_id_different_tau_allowed(self, tmp_path):
        path = tmp_path / "log.jsonl"
        caption_log.write_caption_log(path, [record(1, "member", tau=0.0), record(1, "member", tau=2.0)])
        assert len(caption_log.read_caption_log(path)) == 2

    def test_members_only_warns(self, tmp_path, caplog):
        path = tmp_path / "log.jsonl"
        caption_log.write_caption_log(path, [record(i, "member") for i in range(4)])
        records, counts = caption_log.ingest_external_log(path)
        assert counts == {"member": 4, "non-member": 0}
        assert "no non-member records" in caplog.text


class TestManifest:
    def test_detects_tampering(self, tmp_path):
        (tmp_path / "a.txt").write_text("one")
        (tmp_path / "sub").mkdir()
        (tmp_path / "sub" / "b.txt").write_text("two")
        manifest.write_manifest(tmp_path, "h", {"master_seed": 1})
        assert manifest.verify_manifest(tmp_path) == []
        (tmp_path / "sub" / "b.txt").write_text("changed")
        (tmp_path / "c.txt").write_text("new")
        assert manifest.verify_manifest(tmp_path) == ["c.txt", "sub/b.txt"]


def read_csv_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


class TestDefaultRun:
    def test_output_tree(self, default_run):
        config, _, out, _ = default_run
        for tau in ("0", "2", "3"):
            assert (out / "models" / f"tau_{tau}" / "checkpoint.json").is_file()
            assert (out / "models" / f"tau_{tau}" / "trace.csv").is_file()
            assert (out / "captions" / f"toy-vlm__tau_{tau}.jsonl").is_file()
            assert (out / "scores" / f"toy-vlm__tau_{tau}.csv").is_file()
            for metric in config.metrics:
                assert (out / "attack" / f"toy-vlm__tau_{tau}__{metric}.json").is_file()
        for name in ("table.csv", "table.txt", "summary.json", "similarity_means.svg", "auc_vs_g.svg"):
            assert (out / "report" / name).is_file()
        assert (out / "dataset" / "index.jsonl").is_file()
        assert (out / "config.yaml").is_file()

    def test_manifest_complete(self, default_run):
        config, _, out, _ = default_run
        doc = json.loads((out / "manifest.json").read_text())
        assert doc["status"] == "complete"
        assert doc["config_hash"] == config.hash()
        listed = {e["path"] for e in doc["files"]}
        on_disk = {p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file()} - {"manifest.json"}
        assert listed == on_disk
        assert manifest.verify_manifest(out) == []

    def test_table_rows_and_delta(self, default_run):
        _, _, out, _ = default_run
        rows = read_csv_rows(out / "report" / "table.csv")
        assert [float(r["tau"]) for r in rows] == [0.0, 2.0, 3.0]
        assert [r["regime"] for r in rows] == ["Baseline", "Neuro", "Neuro++"]
        for row in rows:
            for prefix in ("semantic", "rouge2"):
                delta = float(row[f"{prefix}_member"]) - float(row[f"{prefix}_nonmember"])
                assert float(row[f"{prefix}_delta"]) == pytest.approx(delta, abs=1e-12)

    def test_table_matches_score_tables(self, default_run):
        config, _, out, _ = default_run
        rows = {float(r["tau"]): r for r in read_csv_rows(out / "report" / "table.csv")}
        for tau, row in rows.items():
            scores = read_csv_rows(out / "scores" / f"toy-vlm__tau_{format_tau(tau)}.csv")
            for metric, prefix in (("embedding-cosine", "semantic"), ("rouge2", "rouge2")):
                mem = [float(s["score"]) for s in scores if s["metric"] == metric and s["label"] == "member"]
                non = [float(s["score"]) for s in scores if s["metric"] == metric and s["label"] == "non-member"]
                assert len(mem) == config.dataset.n_members and len(non) == config.dataset.n_nonmembers
                assert abs(float(row[f"{prefix}_member"]) - statistics.fmean(mem)) <= 1e-9
                assert abs(float(row[f"{prefix}_nonmember"]) - statistics.fmean(non)) <= 1e-9

    def test_attack_json_matches_scores(self, default_run):
        _, _, out, _ = default_run
        by_metric = mia_core.read_scores_csv(out / "scores" / "toy-vlm__tau_0.csv")
        res = mia_core.read_attack_json(out / "attack" / "toy-vlm__tau_0__rouge2.json")
        assert res.full_auc == mia_core.roc_auc(by_metric["rouge2"])
        assert res.meta["regime"] == "Baseline"
        assert "population" in res.meta["auc_population"]

    def test_auc_plot_lines(self, default_run):
        config, bundle, _, _ = default_run
        fig = plots.auc_vs_granularity_figure(bundle)
        try:
            for ax in fig.axes:
                lines = [ln for ln in ax.get_lines() if not ln.get_label().startswith("_")]
                assert len(lines) == len(config.taus)
                for ln in lines:
                    assert list(ln.get_xdata()) == config.granularities
        finally:
            plots.plt.close(fig)

    def test_summary_per_granularity(self, default_run):
        config, _, out, _ = default_run
        summary = json.loads((out / "report" / "summary.json").read_text())
        cells = {(c["tau"], c["metric"], c["g"]) for c in summary["per_granularity"]}
        assert len(cells) == len(config.taus) * len(config.metrics) * len(config.granularities)
        assert summary["config_hash"] == config.hash()

    def test_text_table(self, default_run):
        config, _, out, _ = default_run
        text = (out / "report" / "table.txt").read_text()
        assert config.hash() in text
        assert "±" in text and "population" in text

    def test_trace_starts_untrained(self, default_run):
        config, bundle, _, _ = default_run
        trace = bundle.traces[("toy-vlm", 0.0)]
        assert [row.epoch for row in trace] == list(range(config.train.epochs + 1))
        assert trace[-1].j_cap < trace[0].j_cap


class TestSmallRuns:
    def test_single_tau(self, tmp_path):
        cfg = load_config(**{k: v for k, v in SMALL.items() if k in ("taus", "granularities", "repeats")},
                          output_dir=str(tmp_path))
        cfg.dataset.n_members = cfg.dataset.n_nonmembers = 20
        cfg.train.epochs = 10
        cfg.taus = [0.0]
        bundle = pipeline.run_pipeline(cfg.validate())
        assert sorted(p.name for p in (tmp_path / "models").iterdir()) == ["tau_0"]
        assert sorted(bundle.results) == [("toy-vlm", 0.0, m) for m in sorted(cfg.metrics)]
        assert len(read_csv_rows(tmp_path / "report" / "table.csv")) == 1

    def test_staged_equals_full(self, tmp_path):
        cfg_path = write_yaml(tmp_path / "small.yaml", SMALL)
        full, staged = tmp_path / "full", tmp_path / "staged"
        assert cli.main(["run", "--config", str(cfg_path), "--out", str(full)]) == 0
        for stage in ("gen-data", "train", "caption", "score", "attack", "report"):
            assert cli.main([stage, "--config", str(cfg_path), "--out", str(staged)]) == 0
        for rel in ("report/table.csv", "report/summary.json", "scores/toy-vlm__tau_2.csv",
                    "models/tau_2/checkpoint.json", "attack/toy-vlm__tau_0__rouge2.json"):
            assert (full / rel).read_bytes() == (staged / rel).read_bytes(), rel

    def test_metric_subset(self, tmp_path):
        cfg = load_config(write_yaml(tmp_path / "s.yaml", SMALL), output_dir=str(tmp_path / "o"),
                          metrics=["rouge2"])
        bundle = pipeline.run_pipeline(cfg)
        assert bundle.metrics() == ["rouge2"]
        row = read_csv_rows(tmp_path / "o" / "report" / "table.csv")[0]
        assert row["semantic_member"] == "" and row["rouge2_member"] != ""


class TestExternalLog:
    def write_log(self, path, n_members, n_nonmembers, taus=(0.0,)):
        recs = []
        for tau in taus:
            recs += [record(i, "member", tau=tau, tag="ext/v1", generated=f"a dark square number {i % 3}")
                     for i in range(n_members)]
            recs += [record(n_members + i, "non-member", tau=tau, tag="ext/v1") for i in range(n_nonmembers)]
        caption_log.write_caption_log(path, recs)
        return path

    def config_for(self, tmp_path, log, granularities=(5, 10)):
        doc = {"dataset": {"kind": "external-log", "path": str(log)}, "granularities": list(granularities),
               "repeats": 2, "output_dir": str(tmp_path / "out")}
        return load_config(write_yaml(tmp_path / "ext.yaml", doc))

    def test_groups_by_tag_and_tau(self, tmp_path):
        log = self.write_log(tmp_path / "log.jsonl", 12, 12, taus=(0.0, 2.0))
        bundle = pipeline.run_pipeline(self.config_for(tmp_path, log))
        assert bundle.groups() == [("ext/v1", 0.0), ("ext/v1", 2.0)]
        assert (tmp_path / "out" / "captions" / "ext_v1__tau_2.jsonl").is_file()
        assert not (tmp_path / "out" / "models").exists()

    def test_members_only_log_fails_at_attack(self, tmp_path):
        log = tmp_path / "log.jsonl"
        caption_log.write_caption_log(log, [record(i, "member") for i in range(12)])
        cfg = self.config_for(tmp_path, log)
        with pytest.raises(pipeline.StageError) as err:
            pipeline.run_pipeline(cfg)
        assert err.value.stage == "attack"
        assert isinstance(err.value.cause, DegenerateClassError)
        doc = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert doc["status"] == "partial" and "attack" in doc["note"]
        cfg_path = write_yaml(tmp_path / "ext2.yaml", {**cfg.to_dict(), "output_dir": str(tmp_path / "o2")})
        assert cli.main(["run", "--config", str(cfg_path)]) == 3

    def test_granularity_too_large_for_log(self, tmp_path):
        log = self.write_log(tmp_path / "log.jsonl", 6, 12)
        with pytest.raises(pipeline.StageError) as err:
            pipeline.run_pipeline(self.config_for(tmp_path, log))
        assert isinstance(err.value.cause, mia_core.InsufficientSamplesError)


class TestCli:
    def test_print_config(self, capsys):
        assert cli.main(["--print-config"]) == 0
        doc = yaml.safe_load(capsys.readouterr().out)
        assert ExperimentConfig.from_dict(doc).hash() == ExperimentConfig().hash()

    def test_no_command(self, capsys):
        assert cli.main([]) == 2

    def test_config_error_exit(self, tmp_path, capsys):
        cfg = write_yaml(tmp_path / "bad.yaml", {"nope": 1})
        assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        assert "nope" in capsys.readouterr().err

    def test_granularity_flag_exit(self, tmp_path):
        assert cli.main(["run", "--granularity", "500", "--out", str(tmp_path / "o")]) == 2

    def test_missing_log_exit(self, tmp_path):
        assert cli.main(["ingest", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path / "o")]) == 3

    def test_divergence_exit(self, tmp_path):
        doc = {**SMALL, "train": {"epochs": 2, "learning_rate": float("inf")}}
        cfg = write_yaml(tmp_path / "div.yaml", doc)
        with np.errstate(all="ignore"):
            assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 4

    def test_ingest_reports_counts(self, tmp_path, capsys):
        log = TestExternalLog().write_log(tmp_path / "log.jsonl", 3, 2)
        assert cli.main(["ingest", str(log), "--out", str(tmp_path / "o")]) == 0
        assert "5 records: 3 members, 2 non-members" in capsys.readouterr().out

    def test_exit_code_unwraps_stage_error(self):
        assert cli.exit_code_for(pipeline.StageError("x", ConfigError("bad"))) == 2
        with pytest.raises(RuntimeError):
            cli.exit_code_for(RuntimeError("boom"))
