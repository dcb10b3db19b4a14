import json
import math

import numpy as np
import pytest

from mir.cli import EXIT_INPUT, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main

from run_builder import build_run


def run_cli(*argv):
    return main(list(argv))


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_run")
    code = run_cli(
        "synth", "--out", str(out), "--layers", "3", "--dim", "8",
        "--tokens", "5000", "--seed", "11",
    )
    assert code == EXIT_OK
    return out


@pytest.fixture(scope="module")
def affine_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_affine")
    code = run_cli(
        "synth", "--out", str(out), "--layers", "2", "--dim", "6",
        "--tokens", "4000", "--seed", "19", "--schedule", "diag-affine",
    )
    assert code == EXIT_OK
    return out


class TestCompute:
    def test_prints_single_four_decimal_number(self, fixture_dir, capsys):
        code = run_cli("compute", "--manifest", str(fixture_dir / "manifest.json"))
        out = capsys.readouterr().out
        assert code == EXIT_OK
        assert out == "%.4f\n" % float(out)

    def test_agrees_with_generating_distributions(self, fixture_dir, capsys):
        code = run_cli(
            "compute", "--manifest", str(fixture_dir / "manifest.json"),
            "--no-normalize", "--no-outlier-removal", "--sqrt", "exact",
        )
        assert code == EXIT_OK
        got = float(capsys.readouterr().out)
        oracle = json.loads((fixture_dir / "oracle.json").read_text())
        assert got == pytest.approx(math.log(sum(oracle["per_layer_fid"])), abs=0.05)

    def test_result_document(self, fixture_dir, tmp_path, capsys):
        doc_path = tmp_path / "result.json"
        code = run_cli(
            "compute", "--manifest", str(fixture_dir / "manifest.json"),
            "--out", str(doc_path), "--threads", "2",
        )
        assert code == EXIT_OK
        printed = float(capsys.readouterr().out)
        doc = json.loads(doc_path.read_text())
        assert set(doc) == {
            "mir", "per_layer_fid", "layer_indices", "config",
            "manifest_path", "timings",
        }
        assert doc["mir"] == pytest.approx(printed, abs=5e-5)
        assert doc["layer_indices"] == [1, 2, 3]
        assert len(doc["per_layer_fid"]) == 3
        assert doc["config"]["threads"] == 2
        assert doc["config"]["sqrt_method"] == "newton-schulz"
        for key in ("load_ms", "prepare_ms", "fid_ms", "total_ms"):
            assert doc["timings"][key] >= 0.0

    def test_csv_format(self, fixture_dir, tmp_path):
        out = tmp_path / "fids.csv"
        code = run_cli(
            "compute", "--manifest", str(fixture_dir / "manifest.json"),
            "--out", str(out), "--format", "csv",
        )
        assert code == EXIT_OK
        lines = out.read_text().splitlines()
        assert lines[0] == "layer,fid"
        assert len(lines) == 4
        assert [row.split(",")[0] for row in lines[1:]] == ["1", "2", "3"]

    def test_csv_format_requires_out(self, fixture_dir, capsys):
        code = run_cli(
            "compute", "--manifest", str(fixture_dir / "manifest.json"),
            "--format", "csv",
        )
        assert code == EXIT_USAGE
        assert "--out" in capsys.readouterr().err

    def test_layer_subset(self, fixture_dir, tmp_path):
        full = tmp_path / "full.csv"
        part = tmp_path / "part.csv"
        base = ["compute", "--manifest", str(fixture_dir / "manifest.json"),
                "--format", "csv"]
        assert run_cli(*base, "--out", str(full)) == EXIT_OK
        assert run_cli(*base, "--out", str(part), "--layers", "2..3") == EXIT_OK
        assert part.read_text().splitlines()[1:] == full.read_text().splitlines()[2:]

    def test_missing_manifest(self, tmp_path, capsys):
        missing = tmp_path / "nowhere" / "manifest.json"
        code = run_cli("compute", "--manifest", str(missing))
        assert code == EXIT_INPUT
        assert "manifest.json" in capsys.readouterr().err

    def test_degenerate_layer_is_numeric_failure(self, tmp_path, rng, capsys):
        vision = rng.standard_normal((30, 4)).astype(np.float32)
        text = np.zeros((30, 4), dtype=np.float32)
        path = build_run(tmp_path, {1: (vision, text)}, hidden_dim=4)
        code = run_cli("compute", "--manifest", str(path))
        assert code == EXIT_NUMERIC
        assert "layer 1" in capsys.readouterr().err


class TestUsage:
    def test_unknown_flag(self, fixture_dir):
        code = run_cli(
            "compute", "--manifest", str(fixture_dir / "manifest.json"), "--fast"
        )
        assert code == EXIT_USAGE

    def test_missing_subcommand(self):
        assert run_cli() == EXIT_USAGE

    def test_iteration_cap_enforced(self, fixture_dir):
        code = run_cli(
            "compute", "--manifest", str(fixture_dir / "manifest.json"),
            "--ns-iters", "5000",
        )
        assert code == EXIT_USAGE

    def test_zero_threads_rejected(self, fixture_dir):
        code = run_cli(
            "compute", "--manifest", str(fixture_dir / "manifest.json"),
            "--threads", "0",
        )
        assert code == EXIT_USAGE

    def test_bad_layer_range(self, fixture_dir):
        code = run_cli(
            "compute", "--manifest", str(fixture_dir / "manifest.json"),
            "--layers", "3..1",
        )
        assert code == EXIT_USAGE

    def test_threads_env_fallback(self, fixture_dir, monkeypatch, capsys):
        monkeypatch.setenv("MIR_THREADS", "3")
        code = run_cli("compute", "--manifest", str(fixture_dir / "manifest.json"))
        assert code == EXIT_OK
        capsys.readouterr()

    def test_threads_env_invalid(self, fixture_dir, monkeypatch, capsys):
        monkeypatch.setenv("MIR_THREADS", "many")
        code = run_cli("compute", "--manifest", str(fixture_dir / "manifest.json"))
        assert code == EXIT_USAGE
        assert "MIR_THREADS" in capsys.readouterr().err

    def test_flag_overrides_env(self, fixture_dir, monkeypatch, tmp_path):
        monkeypatch.setenv("MIR_THREADS", "many")
        doc_path = tmp_path / "r.json"
        code = run_cli(
            "compute", "--manifest", str(fixture_dir / "manifest.json"),
            "--threads", "1", "--out", str(doc_path),
        )
        assert code == EXIT_OK
        assert json.loads(doc_path.read_text())["config"]["threads"] == 1


class TestProfile:
    def test_writes_csv(self, fixture_dir, tmp_path):
        out = tmp_path / "profile.csv"
        code = run_cli(
            "profile", "--manifest", str(fixture_dir / "manifest.json"),
            "--out", str(out),
        )
        assert code == EXIT_OK
        lines = out.read_text().splitlines()
        assert lines[0] == "layer,fid"
        fids = [float(row.split(",")[1]) for row in lines[1:]]
        assert len(fids) == 3
        assert all(f >= 0 for f in fids)

    def test_out_is_required(self, fixture_dir):
        code = run_cli("profile", "--manifest", str(fixture_dir / "manifest.json"))
        assert code == EXIT_USAGE


class TestSynth:
    def test_rejects_unknown_schedule_name(self, tmp_path, capsys):
        code = run_cli(
            "synth", "--out", str(tmp_path / "x"), "--layers", "1", "--dim", "4",
            "--tokens", "30", "--seed", "0", "--schedule", "increasing",
        )
        assert code == EXIT_USAGE
        assert "schedule" in capsys.readouterr().err

    def test_schedule_from_json_file(self, tmp_path, capsys):
        schedule = tmp_path / "schedule.json"
        schedule.write_text(json.dumps([{"mean_offset": 3.0}]))
        out = tmp_path / "run"
        code = run_cli(
            "synth", "--out", str(out), "--layers", "1", "--dim", "4",
            "--tokens", "30,40", "--seed", "0", "--schedule", str(schedule),
        )
        assert code == EXIT_OK
        oracle = json.loads((out / "oracle.json").read_text())
        assert oracle["per_layer_fid"][0] == pytest.approx(9.0, abs=1e-9)

    def test_schedule_file_with_unknown_key(self, tmp_path, capsys):
        schedule = tmp_path / "schedule.json"
        schedule.write_text(json.dumps([{"mean_gap": 3.0}]))
        code = run_cli(
            "synth", "--out", str(tmp_path / "run"), "--layers", "1", "--dim", "4",
            "--tokens", "30", "--seed", "0", "--schedule", str(schedule),
        )
        assert code == EXIT_INPUT
        assert "mean_gap" in capsys.readouterr().err

    def test_repeat_runs_are_byte_identical(self, tmp_path):
        args = ["--layers", "2", "--dim", "4", "--tokens", "50", "--seed", "33"]
        assert run_cli("synth", "--out", str(tmp_path / "a"), *args) == EXIT_OK
        assert run_cli("synth", "--out", str(tmp_path / "b"), *args) == EXIT_OK
        for name in ("manifest.json", "oracle.json", "layer_01_vision.npy"):
            assert (tmp_path / "a" / name).read_bytes() == (
                tmp_path / "b" / name
            ).read_bytes()


class TestCalibrate:
    def test_moment_matching_params_and_report(self, affine_dir, tmp_path):
        params_path = tmp_path / "params.json"
        report_path = tmp_path / "report.csv"
        code = run_cli(
            "calibrate", "--manifest", str(affine_dir / "manifest.json"),
            "--out", str(params_path), "--report", str(report_path),
        )
        assert code == EXIT_OK
        params = json.loads(params_path.read_text())
        assert [p["layer"] for p in params] == [1, 2]
        for p in params:
            assert len(p["u"]) == 6 and len(p["v"]) == 6
        rows = report_path.read_text().splitlines()
        assert rows[0] == "layer,fid_before,fid_after"
        for row in rows[1:]:
            _, before, after = row.split(",")
            assert 0.0 < float(after) < float(before)

    def test_gradient_method(self, affine_dir, tmp_path):
        params_path = tmp_path / "params.json"
        code = run_cli(
            "calibrate", "--manifest", str(affine_dir / "manifest.json"),
            "--method", "grad", "--steps", "300", "--out", str(params_path),
        )
        assert code == EXIT_OK
        assert len(json.loads(params_path.read_text())) == 2

    def test_layer_filter(self, affine_dir, tmp_path):
        params_path = tmp_path / "params.json"
        code = run_cli(
            "calibrate", "--manifest", str(affine_dir / "manifest.json"),
            "--layers", "2..2", "--out", str(params_path),
        )
        assert code == EXIT_OK
        params = json.loads(params_path.read_text())
        assert [p["layer"] for p in params] == [2]

    def test_oversized_step_is_numeric_failure(self, affine_dir, tmp_path, capsys):
        code = run_cli(
            "calibrate", "--manifest", str(affine_dir / "manifest.json"),
            "--method", "grad", "--lr", "50", "--out", str(tmp_path / "p.json"),
        )
        assert code == EXIT_NUMERIC
        assert "learning rate" in capsys.readouterr().err

    def test_unknown_method(self, affine_dir, tmp_path):
        code = run_cli(
            "calibrate", "--manifest", str(affine_dir / "manifest.json"),
            "--method", "newton", "--out", str(tmp_path / "p.json"),
        )
        assert code == EXIT_USAGE
