"""End-to-end tests for the command-line interface.

Commands run in-process through ``main`` so coverage and speed stay
reasonable; one subprocess test checks the installed entry point.
"""

import json
import subprocess
import sys

import pytest

from scaleforge.annot import (
    BoxAnnotation,
    DatasetBundle,
    ImageRecord,
    PredictedPoint,
    PredictionSet,
    write_dataset,
    write_predictions,
)
from scaleforge.cli import main

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def _read_report(path):
    return json.loads(path.read_text())


def _assert_png(path):
    assert path.exists(), f"missing figure {path}"
    assert path.read_bytes()[:8] == PNG_MAGIC


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    assert main(["synth", "--kind", "corpus", "--scenes", "150", "--seed", "0",
                 "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def patches_dir(tmp_path_factory, corpus_dir):
    out = tmp_path_factory.mktemp("patches")
    assert main(["regularize", str(corpus_dir / "dataset.jsonl"),
                 "--seed", "0", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def bench_dir(tmp_path_factory, patches_dir):
    out = tmp_path_factory.mktemp("bench")
    assert main(["partition", str(patches_dir / "patches.jsonl"),
                 "--M", "4", "--seed", "0", "--out", str(out)]) == 0
    return out


class TestEntryPoint:
    def test_installed_script_reports_version(self):
        proc = subprocess.run(["scaleforge", "--version"],
                              capture_output=True, text=True)
        assert proc.returncode == 0
        assert proc.stdout.startswith("scaleforge ")

    def test_module_invocation(self):
        proc = subprocess.run([sys.executable, "-m", "scaleforge.cli", "--version"],
                              capture_output=True, text=True)
        assert proc.returncode == 0

    def test_contract_error_exits_2_with_json(self, tmp_path, capsys):
        dataset = tmp_path / "d.jsonl"
        write_dataset(DatasetBundle(name="d", images=[
            ImageRecord(id="a", width=50, height=50,
                        boxes=[BoxAnnotation(5, 5, 10, 10)]),
        ]), dataset)
        preds = tmp_path / "p.jsonl"
        write_predictions(PredictionSet(name="m", points={"ghost": []}), preds)
        code = main(["eval", str(dataset), str(preds), "--out", str(tmp_path)])
        assert code == 2
        record = json.loads(capsys.readouterr().err.strip())
        assert record["error"] == "ContractError"
        assert "ghost" in record["message"]


class TestSynth:
    def test_corpus_artifacts(self, corpus_dir):
        report = _read_report(corpus_dir / "synth_report.json")
        assert report["kind"] == "synth"
        assert report["tool"] == "scaleforge"
        assert report["n_images"] == 150
        assert (corpus_dir / "dataset.jsonl").exists()
        assert (corpus_dir / "oracle.jsonl").exists()

    def test_rerun_is_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main(["synth", "--kind", "linear", "--scenes", "20",
                         "--seed", "7", "--out", str(out)]) == 0
        assert (a / "dataset.jsonl").read_bytes() == (b / "dataset.jsonl").read_bytes()
        assert (a / "oracle.jsonl").read_bytes() == (b / "oracle.jsonl").read_bytes()

    def test_seed_changes_output(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["synth", "--kind", "linear", "--scenes", "20",
                     "--seed", "1", "--out", str(a)]) == 0
        assert main(["synth", "--kind", "linear", "--scenes", "20",
                     "--seed", "2", "--out", str(b)]) == 0
        assert (a / "dataset.jsonl").read_bytes() != (b / "dataset.jsonl").read_bytes()


class TestIngest:
    def test_native_round_trip(self, tmp_path, capsys):
        src = tmp_path / "src.jsonl"
        write_dataset(DatasetBundle(name="orig", images=[
            ImageRecord(id="a", width=40, height=40,
                        boxes=[BoxAnnotation(-2, 5, 10, 10)]),
        ]), src)
        out = tmp_path / "out"
        assert main(["ingest", str(src), "--name", "renamed",
                     "--out", str(out)]) == 0
        assert "ingested 1 images" in capsys.readouterr().out
        report = _read_report(out / "ingest_report.json")
        assert report["name"] == "renamed"
        assert report["n_boxes"] == 1
        text = (out / "dataset.jsonl").read_text()
        assert '"x": 0.0' in text  # straddling box was clamped

    def test_csv_points(self, tmp_path):
        src = tmp_path / "src.csv"
        src.write_text("image_id,width,height,x,y,w,h\n"
                       "s0,100,100,50,50,,\n"
                       "s0,100,100,10,10,8,8\n")
        out = tmp_path / "out"
        assert main(["ingest", str(src), "--format", "csv-points-boxes",
                     "--point-box-side", "6", "--out", str(out)]) == 0
        report = _read_report(out / "ingest_report.json")
        assert report["n_boxes"] == 2
        assert report["n_synthetic_boxes"] == 1


class TestRegularize:
    def test_patch_artifacts(self, patches_dir):
        report = _read_report(patches_dir / "regularize_report.json")
        assert report["kind"] == "regularize"
        assert report["n_patches"] > 0
        assert report["filter_applied"] is True
        assert (patches_dir / "patches.jsonl").exists()

    def test_no_filter_keeps_at_least_as_many(self, tmp_path, corpus_dir, patches_dir):
        out = tmp_path / "nofilt"
        assert main(["regularize", str(corpus_dir / "dataset.jsonl"),
                     "--seed", "0", "--no-filter", "--out", str(out)]) == 0
        unfiltered = _read_report(out / "regularize_report.json")
        filtered = _read_report(patches_dir / "regularize_report.json")
        assert unfiltered["n_patches"] >= filtered["n_patches"]
        assert unfiltered["n_rejected"] == 0

    def test_rejection_reasons_recorded(self, patches_dir):
        report = _read_report(patches_dir / "regularize_report.json")
        assert report["n_rejected"] == sum(report["rejected_by_reason"].values())


class TestPartition:
    def test_benchmark_artifacts(self, bench_dir):
        manifest = _read_report(bench_dir / "manifest.json")
        assert manifest["M"] == 4
        assert [d["name"] for d in manifest["domains"]] == \
            ["Tiny", "Small", "Normal", "Big"]
        lines = (bench_dir / "domains.csv").read_text().splitlines()
        assert lines[0].startswith("domain,lo,hi,sigma")
        assert len(lines) == 5
        _assert_png(bench_dir / "domains_scale.png")

    def test_report_counts_match_manifest(self, bench_dir):
        manifest = _read_report(bench_dir / "manifest.json")
        report = _read_report(bench_dir / "partition_report.json")
        for spec, rep in zip(manifest["domains"], report["domains"]):
            assert len(spec["patch_ids"]) == rep["n_patches"]


class TestShift:
    def test_shift_artifacts(self, tmp_path, patches_dir, bench_dir):
        out = tmp_path / "shift"
        assert main(["shift", str(bench_dir / "manifest.json"),
                     str(patches_dir / "patches.jsonl"), "--out", str(out)]) == 0
        report = _read_report(out / "shift_report.json")
        assert report["domains"] == ["Tiny", "Small", "Normal", "Big"]
        assert len(report["pairs"]) == 6
        for pair in report["pairs"]:
            assert 0.0 <= pair["div_div"] <= 1.0
            assert 0.0 <= pair["div_cor"] <= 1.0
            assert pair["kl_objects"] is not None
        lines = (out / "shift_matrix.csv").read_text().splitlines()
        assert len(lines) == 7
        _assert_png(out / "shift_div.png")
        _assert_png(out / "shift_cor.png")


class TestStats:
    def test_stats_artifacts(self, tmp_path):
        data = tmp_path / "lin"
        assert main(["synth", "--kind", "linear", "--scenes", "40",
                     "--seed", "3", "--out", str(data)]) == 0
        out = tmp_path / "stats"
        assert main(["stats", str(data / "dataset.jsonl"), "--out", str(out)]) == 0
        report = _read_report(out / "stats_report.json")
        assert report["correlations"]["summaries"]["scale_vertical"]["mean"] > 0.8
        assert report["n_objects"] > 0
        lines = (out / "stats.csv").read_text().splitlines()
        assert lines[0] == "pair,mean_r,n_images,n_undefined"
        assert len(lines) == 4
        _assert_png(out / "correlations.png")
        _assert_png(out / "scale_hist.png")


class TestEval:
    def test_eval_artifacts(self, tmp_path, capsys):
        dataset = tmp_path / "d.jsonl"
        write_dataset(DatasetBundle(name="d", images=[
            ImageRecord(id="a", width=100, height=100, boxes=[
                BoxAnnotation(10, 10, 10, 10), BoxAnnotation(60, 60, 10, 10),
            ]),
            ImageRecord(id="b", width=100, height=100,
                        boxes=[BoxAnnotation(30, 30, 10, 10)]),
        ]), dataset)
        preds_path = tmp_path / "p.jsonl"
        write_predictions(PredictionSet(name="m", points={
            "a": [PredictedPoint(15.0, 15.0, 0.75), PredictedPoint(90.0, 10.0, 0.75)],
            "b": [PredictedPoint(35.0, 35.0, 0.75), PredictedPoint(36.0, 36.0, 0.75)],
        }), preds_path)
        out = tmp_path / "out"
        assert main(["eval", str(dataset), str(preds_path), "--out", str(out)]) == 0
        assert "f1 " in capsys.readouterr().out
        report = _read_report(out / "eval_report.json")
        assert report["metrics"]["tp"] == 2
        assert report["metrics"]["fp"] == 2
        assert report["metrics"]["fn"] == 1
        assert report["calibration"]["n"] == 4
        lines = (out / "eval.csv").read_text().splitlines()
        assert lines[0] == "image_id,n_pred,n_gt,tp,fp,fn,total_distance"
        assert len(lines) == 3
        _assert_png(out / "reliability.png")


class TestVerifyTheorem:
    def test_small_shifted_run(self, tmp_path, capsys):
        out = tmp_path / "v"
        assert main(["verify-theorem", "--objects", "600", "--boot", "25",
                     "--seed", "0", "--out", str(out)]) == 0
        stdout = capsys.readouterr().out
        assert "div_div" in stdout and "div_cor" in stdout
        rep = _read_report(out / "verify_report.json")
        assert rep["mode"] == "shifted"
        assert rep["report"]["div_div"] > 0.0
        assert rep["report"]["div_cor"] > 0.0
        assert rep["bootstrap"]["n_boot"] == 25
        assert (out / "verify.csv").exists()
        _assert_png(out / "verify_hist.png")

    def test_null_mode_recorded(self, tmp_path):
        out = tmp_path / "v"
        assert main(["verify-theorem", "--objects", "600", "--boot", "25",
                     "--null", "--seed", "0", "--out", str(out)]) == 0
        rep = _read_report(out / "verify_report.json")
        assert rep["mode"] == "null"
        assert rep["report"]["div_div"] < 0.2
