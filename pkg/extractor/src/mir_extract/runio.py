"""On-disk formats shared with the scoring tool.

The scorer consumes NPY v1.0 tensors (little-endian float32, C-order, 2-D)
plus a manifest.json naming one vision and one text file per layer. The
writers here are implemented from the format description so this package
stays decoupled from the scorer's internals. Byte layout: 8-byte magic and
version, uint16 header length, dict header space-padded so the data starts
on a 64-byte boundary, newline terminator.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CalibrationError, PairFileError


def write_tensor(matrix: np.ndarray, path) -> None:
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    if matrix.ndim != 2 or matrix.size == 0:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {matrix.shape}")
    if not np.isfinite(matrix).all():
        raise ValueError("refusing to write non-finite activations")
    rows, cols = matrix.shape
    header = "{'descr': '<f4', 'fortran_order': False, 'shape': (%d, %d), }" % (
        rows,
        cols,
    )
    preamble = 10 + len(header) + 1  # magic + version + length field + newline
    pad = (64 - preamble % 64) % 64
    encoded = header.encode("latin-1") + b" " * pad + b"\n"
    with open(path, "wb") as fh:
        fh.write(b"\x93NUMPY\x01\x00")
        fh.write(struct.pack("<H", len(encoded)))
        fh.write(encoded)
        fh.write(matrix.tobytes(order="C"))


def write_manifest(doc: dict, path) -> None:
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def read_pairs(path) -> list[tuple[Path, str]]:
    """Parse a JSONL of {"image": path, "text": string} records.

    Relative image paths resolve against the file's own directory, so a
    fixture directory can be moved as a unit. Blank lines are ignored;
    anything else malformed fails with the offending line number.
    """
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as e:
        raise PairFileError(f"cannot read pairs file {path}: {e}") from e
    pairs = []
    for lineno, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as e:
            raise PairFileError(f"{path}:{lineno}: not valid JSON: {e}") from e
        if (
            not isinstance(doc, dict)
            or not isinstance(doc.get("image"), str)
            or not isinstance(doc.get("text"), str)
        ):
            raise PairFileError(
                f'{path}:{lineno}: each line needs string fields "image" and "text"'
            )
        image = Path(doc["image"])
        if not image.is_absolute():
            image = path.parent / image
        pairs.append((image, doc["text"]))
    if not pairs:
        raise PairFileError(f"{path}: no pairs found")
    return pairs


def read_calibration(path, hidden_dim: int) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Load per-layer scale/shift vectors keyed by layer index.

    The file is the scorer's calibrate output: a JSON list of
    {"layer": k, "u": [...], "v": [...]}. Vector lengths must match the
    model's hidden dimension.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise CalibrationError(f"cannot read calibration file {path}: {e}") from e
    if not isinstance(raw, list):
        raise CalibrationError(f"{path}: expected a JSON list of per-layer entries")
    params: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for pos, item in enumerate(raw):
        if not isinstance(item, dict) or not {"layer", "u", "v"} <= set(item):
            raise CalibrationError(f"{path}: entry {pos} needs layer, u, and v")
        u = np.asarray(item["u"], dtype=np.float64)
        v = np.asarray(item["v"], dtype=np.float64)
        if u.ndim != 1 or u.shape != v.shape:
            raise CalibrationError(
                f"{path}: entry {pos}: u and v must be 1-D of equal length"
            )
        layer = int(item["layer"])
        if u.shape[0] != hidden_dim:
            raise CalibrationError(
                f"{path}: layer {layer}: parameters are {u.shape[0]}-dimensional, "
                f"model hidden size is {hidden_dim}"
            )
        if layer in params:
            raise CalibrationError(f"{path}: duplicate entry for layer {layer}")
        params[layer] = (u, v)
    return params
