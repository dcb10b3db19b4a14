"""End-to-end extraction runs, the command line, and scorer interop.

The scorer is exercised strictly as an external tool: its CLI runs in a
subprocess and the only shared surface is the run directory on disk.
"""

import json
import logging
import math
import re
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from mir_extract.cli import main as cli_main
from mir_extract.errors import CalibrationError, ExtractionError
from mir_extract.extract import ExtractionConfig, extract_run
from mir_extract.toy import PATCH_BYTES

MODEL = "toy:2x16"
DIM = 16


def run_scorer(*argv):
    return subprocess.run(
        [sys.executable, "-m", "mir.cli", *argv], capture_output=True, text=True
    )


@pytest.fixture(scope="module")
def run_dir(corpus, tmp_path_factory):
    pairs, _ = corpus
    out = tmp_path_factory.mktemp("run")
    extract_run(ExtractionConfig(model=MODEL, pairs_file=pairs, out_dir=out, seed=3))
    return out


def manifest_of(run_dir: Path) -> dict:
    return json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))


def test_row_counts_match_tokenization(corpus, run_dir):
    _, specs = corpus
    vision_rows = sum(math.ceil(size / PATCH_BYTES) for size, _ in specs)
    text_rows = sum(len(text.encode("utf-8")) for _, text in specs)
    doc = manifest_of(run_dir)
    for entry in doc["layers"]:
        vision = np.load(run_dir / entry["vision"])
        text = np.load(run_dir / entry["text"])
        assert vision.shape == (vision_rows, DIM)
        assert text.shape == (text_rows, DIM)


def test_manifest_describes_run(corpus, run_dir):
    doc = manifest_of(run_dir)
    assert doc["model_id"] == MODEL
    assert doc["hidden_dim"] == DIM
    assert doc["num_layers"] == 2
    assert doc["num_pairs"] == 6
    assert doc["extractor"]["skipped_pairs"] == 0
    assert doc["extractor"]["seed"] == 3
    assert [e["index"] for e in doc["layers"]] == [1, 2]
    for entry in doc["layers"]:
        assert (run_dir / entry["vision"]).is_file()
        assert (run_dir / entry["text"]).is_file()
    assert "calibrated" not in doc


def test_embedding_flag_prepends_layer(corpus, run_dir, tmp_path):
    pairs, _ = corpus
    cfg = ExtractionConfig(
        model=MODEL, pairs_file=pairs, out_dir=tmp_path, seed=3,
        include_embedding=True,
    )
    extract_run(cfg)
    doc = manifest_of(tmp_path)
    assert doc["num_layers"] == 3
    # block outputs shift up by one; the first block's records are unchanged
    assert (tmp_path / "layer_02_vision.npy").read_bytes() == (
        run_dir / "layer_01_vision.npy"
    ).read_bytes()
    assert (tmp_path / "layer_02_text.npy").read_bytes() == (
        run_dir / "layer_01_text.npy"
    ).read_bytes()
    embedding = np.load(tmp_path / "layer_01_vision.npy")
    block = np.load(tmp_path / "layer_02_vision.npy")
    assert not np.array_equal(embedding, block)


def test_same_seed_reproduces_run_bytes(corpus, run_dir, tmp_path):
    pairs, _ = corpus
    extract_run(
        ExtractionConfig(model=MODEL, pairs_file=pairs, out_dir=tmp_path, seed=3)
    )
    names = sorted(p.name for p in run_dir.iterdir())
    assert names == sorted(p.name for p in tmp_path.iterdir())
    for name in names:
        assert (tmp_path / name).read_bytes() == (run_dir / name).read_bytes()


def test_seed_changes_run(corpus, run_dir, tmp_path):
    pairs, _ = corpus
    extract_run(
        ExtractionConfig(model=MODEL, pairs_file=pairs, out_dir=tmp_path, seed=4)
    )
    assert (tmp_path / "layer_01_vision.npy").read_bytes() != (
        run_dir / "layer_01_vision.npy"
    ).read_bytes()


def test_unusable_pairs_skip_with_warning(make_pairs, tmp_path, caplog):
    pairs = make_pairs(
        tmp_path / "corpus",
        [
            (600, "a fine caption"),
            (None, "image file is missing"),
            (700, ""),
            (800, "another fine caption"),
        ],
    )
    out = tmp_path / "run"
    with caplog.at_level(logging.WARNING, logger="mir_extract.extract"):
        extract_run(ExtractionConfig(model=MODEL, pairs_file=pairs, out_dir=out))
    skip_messages = [r.message for r in caplog.records if "skipping pair" in r.message]
    assert len(skip_messages) == 2
    doc = manifest_of(out)
    assert doc["num_pairs"] == 2
    assert doc["extractor"]["skipped_pairs"] == 2
    rows = np.load(out / "layer_01_vision.npy").shape[0]
    assert rows == math.ceil(600 / PATCH_BYTES) + math.ceil(800 / PATCH_BYTES)


def test_majority_skipped_aborts(make_pairs, tmp_path):
    pairs = make_pairs(
        tmp_path / "corpus",
        [(600, "only good pair"), (None, "missing"), (None, "also missing")],
    )
    with pytest.raises(ExtractionError, match="refusing"):
        extract_run(
            ExtractionConfig(model=MODEL, pairs_file=pairs, out_dir=tmp_path / "run")
        )


def identity_params(path: Path, layers, dim=DIM) -> Path:
    doc = [{"layer": k, "u": [1.0] * dim, "v": [0.0] * dim} for k in layers]
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


def test_identity_calibration_is_noop_and_flagged(corpus, run_dir, tmp_path):
    pairs, _ = corpus
    params = identity_params(tmp_path / "params.json", [1, 2])
    out = tmp_path / "run"
    extract_run(
        ExtractionConfig(
            model=MODEL, pairs_file=pairs, out_dir=out, seed=3, calibration=params
        )
    )
    doc = manifest_of(out)
    assert doc["calibrated"] is True
    for entry in doc["layers"]:
        assert (out / entry["vision"]).read_bytes() == (
            run_dir / entry["vision"]
        ).read_bytes()
        assert (out / entry["text"]).read_bytes() == (
            run_dir / entry["text"]
        ).read_bytes()


def test_wrong_dimension_calibration_fails(corpus, tmp_path):
    pairs, _ = corpus
    params = identity_params(tmp_path / "params.json", [1, 2], dim=8)
    with pytest.raises(CalibrationError, match="8-dimensional.*16"):
        extract_run(
            ExtractionConfig(
                model=MODEL,
                pairs_file=pairs,
                out_dir=tmp_path / "run",
                calibration=params,
            )
        )


def test_missing_layer_calibration_fails(corpus, tmp_path):
    pairs, _ = corpus
    params = identity_params(tmp_path / "params.json", [1])
    with pytest.raises(CalibrationError, match="layer 2"):
        extract_run(
            ExtractionConfig(
                model=MODEL,
                pairs_file=pairs,
                out_dir=tmp_path / "run",
                calibration=params,
            )
        )


def test_unknown_template_rejected(corpus, tmp_path):
    pairs, _ = corpus
    with pytest.raises(ValueError, match="template"):
        ExtractionConfig(
            model=MODEL, pairs_file=pairs, out_dir=tmp_path, template="chatml"
        )


class TestCli:
    def test_prints_manifest_path(self, corpus, tmp_path, capsys):
        pairs, _ = corpus
        out = tmp_path / "run"
        code = cli_main(
            ["--model", MODEL, "--pairs", str(pairs), "--out", str(out)]
        )
        assert code == 0
        printed = capsys.readouterr().out.strip()
        assert Path(printed) == out / "manifest.json"
        assert Path(printed).is_file()

    def test_rejects_unknown_template(self, corpus, tmp_path):
        pairs, _ = corpus
        with pytest.raises(SystemExit) as exc:
            cli_main(
                ["--model", MODEL, "--pairs", str(pairs), "--out", str(tmp_path),
                 "--template", "chatml"]
            )
        assert exc.value.code == 2

    def test_missing_pairs_file_fails_cleanly(self, tmp_path, capsys):
        code = cli_main(
            ["--model", MODEL, "--pairs", str(tmp_path / "nope.jsonl"),
             "--out", str(tmp_path / "run")]
        )
        assert code == 1
        assert "mir-extract:" in capsys.readouterr().err

    def test_majority_skip_exits_one(self, make_pairs, tmp_path, capsys):
        pairs = make_pairs(
            tmp_path / "corpus", [(None, "missing"), (None, "also missing")]
        )
        code = cli_main(
            ["--model", MODEL, "--pairs", str(pairs), "--out", str(tmp_path / "run")]
        )
        assert code == 1
        assert "refusing" in capsys.readouterr().err


class TestScorerInterop:
    def test_dump_scores_without_warnings(self, run_dir):
        result = run_scorer(
            "compute", "--manifest", str(run_dir / "manifest.json"), "--sqrt", "exact"
        )
        assert result.returncode == 0, result.stderr
        assert re.fullmatch(r"-?\d+\.\d{4}\n", result.stdout)
        assert "WARNING" not in result.stderr

    def test_calibration_loop_lowers_score(self, corpus, run_dir, tmp_path):
        pairs, _ = corpus
        baseline = run_scorer(
            "compute", "--manifest", str(run_dir / "manifest.json"), "--sqrt", "exact"
        )
        assert baseline.returncode == 0, baseline.stderr

        params = tmp_path / "params.json"
        fit = run_scorer(
            "calibrate", "--manifest", str(run_dir / "manifest.json"),
            "--method", "moment", "--out", str(params),
        )
        assert fit.returncode == 0, fit.stderr

        out = tmp_path / "run"
        extract_run(
            ExtractionConfig(
                model=MODEL, pairs_file=pairs, out_dir=out, seed=3,
                calibration=params,
            )
        )
        assert manifest_of(out)["calibrated"] is True
        rescored = run_scorer(
            "compute", "--manifest", str(out / "manifest.json"), "--sqrt", "exact"
        )
        assert rescored.returncode == 0, rescored.stderr
        assert float(rescored.stdout) < float(baseline.stdout)
