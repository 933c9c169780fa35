"""Command-line interface: subcommands, exit codes, outputs."""

import json
import subprocess
import sys

import pytest

import toytask
from mtnlu.cli import main
from mtnlu.semer import SemerCounts, SemerReport, write_semer_report


def write_report(path, errors, reference_count=10000):
    counts = SemerCounts(reference_count=reference_count, substitutions=errors)
    write_semer_report(SemerReport(counts, {"All": counts}), str(path))
    return str(path)


class TestExitCodes:
    def test_missing_required_argument(self, capsys):
        assert main(["pipeline"]) == 1
        assert "required" in capsys.readouterr().err

    def test_unknown_subcommand(self, capsys):
        assert main(["frobnicate"]) == 1

    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0
        assert "pipeline" in capsys.readouterr().out

    def test_bad_stage_name(self, tmp_path, capsys):
        config = toytask.build_workspace(tmp_path)
        assert main(["pipeline", "--config", config, "--stages", "tokenize"]) == 1
        assert "unknown stage" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path, capsys):
        assert main(["pipeline", "--config", str(tmp_path / "nope.json")]) == 1

    def test_stage_failure_exits_two(self, tmp_path, capsys):
        config = toytask.build_workspace(tmp_path, config_update={
            "stages": ["postprocess"],
        })
        assert main(["pipeline", "--config", config]) == 2
        assert "postprocess" in capsys.readouterr().err

    def test_evaluate_without_models_exits_two(self, tmp_path, capsys):
        config = toytask.build_workspace(tmp_path)
        assert main(["evaluate", "--config", config]) == 2


class TestRunCommands:
    def test_full_pipeline(self, tmp_path, capsys):
        config = toytask.build_workspace(tmp_path, n_train=80, n_test=25)
        assert main(["pipeline", "--config", config]) == 0
        out = capsys.readouterr().out
        for stage in ["translate", "project", "filter-semantic", "filter-score",
                      "postprocess", "train", "evaluate"]:
            assert stage in out
        assert "semer overall" in out
        assert (tmp_path / "out" / "semer_report.tsv").exists()

    def test_stage_selection(self, tmp_path, capsys):
        config = toytask.build_workspace(tmp_path, n_train=60, n_test=20)
        assert main(["pipeline", "--config", config,
                     "--stages", "translate,project"]) == 0
        out = capsys.readouterr().out
        assert "translate" in out and "project" in out and "train" not in out

    def test_translate_standalone(self, tmp_path):
        config = toytask.build_workspace(tmp_path)
        assert main(["translate", "--config", config]) == 0
        assert (tmp_path / "out" / "translations.tsv").exists()

    def test_filter_standalone_consumes_translation_file(self, tmp_path):
        config = toytask.build_workspace(tmp_path, n_train=60, n_test=20)
        assert main(["translate", "--config", config]) == 0
        obj = json.loads((tmp_path / "config.json").read_text())
        obj["translation"] = {
            "forward_translations": str(tmp_path / "out" / "translations.tsv"),
            "backward_phrase_table": obj["translation"]["backward_phrase_table"],
            "max_jump": 0,
        }
        p2 = tmp_path / "config2.json"
        p2.write_text(json.dumps(obj), encoding="utf-8")
        assert main(["filter", "--config", str(p2), "--kind", "semantic",
                     "--out", str(tmp_path / "fout")]) == 0
        assert (tmp_path / "fout" / "corpus_semantic.tsv").exists()

    def test_train_then_evaluate(self, tmp_path):
        root = tmp_path
        toytask.write_task_files(root)
        train = toytask.sample_target_test(80, 3)
        test = toytask.sample_target_test(25, 4)
        from mtnlu.corpus import save_corpus

        save_corpus(train, root / "t_train.tsv")
        save_corpus(test, root / "t_test.tsv")
        config = {
            "out_dir": "out",
            "source_corpus": "t_train.tsv",
            "test_corpus": "t_test.tsv",
            "training": {"l2": 0.001, "max_iterations": 60, "tolerance": 1e-6},
        }
        p = root / "c.json"
        p.write_text(json.dumps(config), encoding="utf-8")
        assert main(["train", "--config", str(p)]) == 0
        assert main(["evaluate", "--config", str(p)]) == 0
        assert (root / "out" / "semer_report.tsv").exists()

    def test_seed_override_changes_outputs(self, tmp_path):
        config = toytask.build_workspace(tmp_path, config_update={
            "stages": ["translate", "project", "postprocess"],
        })
        assert main(["pipeline", "--config", config,
                     "--out", str(tmp_path / "s1"), "--seed", "1"]) == 0
        assert main(["pipeline", "--config", config,
                     "--out", str(tmp_path / "s2"), "--seed", "2"]) == 0
        a = (tmp_path / "s1" / "corpus_postprocessed.tsv").read_bytes()
        b = (tmp_path / "s2" / "corpus_postprocessed.tsv").read_bytes()
        assert a != b  # City slots are resampled from a seed-derived stream


class TestCompare:
    def test_table_output(self, tmp_path, capsys):
        a = write_report(tmp_path / "a.tsv", 2138)
        b = write_report(tmp_path / "b.tsv", 2072)
        assert main(["compare", a, b]) == 0
        out = capsys.readouterr().out
        assert "overall\t-\t21.38\t20.72 (-3.09)" in out

    def test_optional_file_output(self, tmp_path, capsys):
        a = write_report(tmp_path / "a.tsv", 2138)
        b = write_report(tmp_path / "b.tsv", 2362)
        table = str(tmp_path / "table.tsv")
        assert main(["compare", a, b, "--out", table]) == 0
        assert "20.72" not in open(table).read()
        assert "23.62 (+10.48)" in open(table).read()

    def test_mismatched_reports_exit_one(self, tmp_path, capsys):
        a = write_report(tmp_path / "a.tsv", 10)
        b = write_report(tmp_path / "b.tsv", 10, reference_count=9999)
        assert main(["compare", a, b]) == 1
        assert "different test sets" in capsys.readouterr().err


class TestSampleGrammar:
    def test_generates_requested_size(self, tmp_path, capsys):
        paths = toytask.write_task_files(tmp_path)
        out = str(tmp_path / "sampled.tsv")
        argv = ["sample-grammar", "--grammar", paths["grammar_train"],
                "--count", "25", "--seed", "3", "--language", "en",
                "--out", out]
        for c in paths["source_catalogs"]:
            argv += ["--catalog", c]
        assert main(argv) == 0
        lines = open(out).read().splitlines()
        assert len(lines) == 25

    def test_deterministic(self, tmp_path):
        paths = toytask.write_task_files(tmp_path)
        argv_base = ["sample-grammar", "--grammar", paths["grammar_train"],
                     "--count", "30", "--seed", "11"]
        for c in paths["source_catalogs"]:
            argv_base += ["--catalog", c]
        out1, out2 = str(tmp_path / "a.tsv"), str(tmp_path / "b.tsv")
        assert main(argv_base + ["--out", out1]) == 0
        assert main(argv_base + ["--out", out2]) == 0
        assert open(out1, "rb").read() == open(out2, "rb").read()

    def test_missing_catalog_exits_one(self, tmp_path, capsys):
        paths = toytask.write_task_files(tmp_path)
        assert main(["sample-grammar", "--grammar", paths["grammar_train"],
                     "--count", "5", "--out", str(tmp_path / "x.tsv")]) == 1


class TestEntryPoint:
    def test_module_invocation(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "mtnlu.cli", "--help"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0
        assert "pipeline" in proc.stdout
