"""Reading and writing activation tensors and run manifests.

Tensor files use the NPY version 1.0 layout, restricted to what this package
actually stores: little-endian float32, C order, exactly two dimensions.
A file is laid out as

    6 bytes   magic, 0x93 followed by "NUMPY"
    2 bytes   format version, 0x01 0x00
    2 bytes   header length H, little-endian uint16
    H bytes   ASCII dict literal, space-padded and newline-terminated, e.g.
              {'descr': '<f4', 'fortran_order': False, 'shape': (30, 4096), }
    rest      rows*cols float32 values, row-major

The writer pads the header with spaces so the total preamble (10 + H bytes)
is a multiple of 64, matching what numpy itself produces. The reader accepts
any padding but rejects every dtype other than '<f4', Fortran order, and any
rank other than 2.

A run manifest is a JSON document naming the model, the dimensions, and one
vision/text tensor pair per layer:

    {
      "model_id": "...",
      "hidden_dim": 4096,
      "num_layers": 32,
      "num_pairs": 100,
      "layers": [
        {"index": 1, "vision": "layer_01_vision.npy", "text": "layer_01_text.npy"},
        ...
      ]
    }

Relative tensor paths are resolved against the directory containing the
manifest. Unknown top-level keys are preserved on the parsed object but
otherwise ignored.
"""

from __future__ import annotations

import ast
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, BinaryIO

import numpy as np

from .errors import (
    BadHeader,
    BadMagic,
    IoFailure,
    MalformedManifest,
    MissingFile,
    NonFiniteData,
    ShapeMismatch,
    UnsupportedDtype,
    UnsupportedLayout,
)

_MAGIC = b"\x93NUMPY"
_VERSION = b"\x01\x00"
_ALIGN = 64


def write_tensor(matrix, path) -> None:
    """Write a 2-D float32 matrix to ``path``.

    The input is converted to little-endian float32 in C order. Non-2-D or
    empty input raises ValueError; NaN or infinity (after the float32
    conversion) raises NonFiniteData. OS-level failures raise IoFailure.
    """
    arr = np.ascontiguousarray(matrix, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got ndim={arr.ndim}")
    rows, cols = arr.shape
    if rows < 1 or cols < 1:
        raise ValueError(f"matrix must be non-empty, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteData("refusing to write NaN or infinity entries")

    body = "{'descr': '<f4', 'fortran_order': False, 'shape': (%d, %d), }" % (
        rows,
        cols,
    )
    # pad with spaces so magic+version+length+header is a multiple of 64,
    # keeping one byte for the terminating newline
    unpadded = len(_MAGIC) + len(_VERSION) + 2 + len(body) + 1
    pad = (-unpadded) % _ALIGN
    header = body + " " * pad + "\n"
    if len(header) > 0xFFFF:
        raise ValueError("header too large for format version 1.0")

    try:
        with open(path, "wb") as f:
            f.write(_MAGIC)
            f.write(_VERSION)
            f.write(struct.pack("<H", len(header)))
            f.write(header.encode("ascii"))
            f.write(arr.tobytes("C"))
    except OSError as e:
        raise IoFailure(f"writing {path}: {e}") from e


def _read_exact(f: BinaryIO, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise BadHeader(f"truncated file while reading {what}")
    return data


def _parse_header(f: BinaryIO, path) -> tuple[int, int]:
    magic = f.read(len(_MAGIC))
    if magic != _MAGIC:
        raise BadMagic(f"{path}: not a tensor file (bad magic)")
    version = _read_exact(f, 2, "version")
    if version != _VERSION:
        raise BadHeader(
            f"{path}: unsupported format version {version[0]}.{version[1]}"
        )
    (hlen,) = struct.unpack("<H", _read_exact(f, 2, "header length"))
    raw = _read_exact(f, hlen, "header")
    try:
        text = raw.decode("latin1")
    except UnicodeDecodeError as e:  # pragma: no cover - latin1 never fails
        raise BadHeader(f"{path}: undecodable header") from e
    if not text.endswith("\n"):
        raise BadHeader(f"{path}: header is not newline-terminated")
    try:
        meta = ast.literal_eval(text.strip())
    except (ValueError, SyntaxError) as e:
        raise BadHeader(f"{path}: header is not a dict literal") from e
    if not isinstance(meta, dict):
        raise BadHeader(f"{path}: header is not a dict")
    if set(meta) != {"descr", "fortran_order", "shape"}:
        raise BadHeader(f"{path}: unexpected header keys {sorted(meta)}")

    if meta["descr"] != "<f4":
        raise UnsupportedDtype(
            f"{path}: dtype {meta['descr']!r} is not supported, only '<f4'"
        )
    if meta["fortran_order"] is not False:
        if meta["fortran_order"] is True:
            raise UnsupportedLayout(f"{path}: Fortran-order data is not supported")
        raise BadHeader(f"{path}: fortran_order must be a boolean")

    shape = meta["shape"]
    if (
        not isinstance(shape, tuple)
        or len(shape) != 2
        or not all(isinstance(s, int) and not isinstance(s, bool) for s in shape)
    ):
        raise BadHeader(f"{path}: shape {shape!r} is not a 2-D shape")
    rows, cols = shape
    if rows < 1 or cols < 1:
        raise BadHeader(f"{path}: shape {shape!r} describes an empty matrix")
    return rows, cols


def read_tensor_header(path) -> tuple[int, int]:
    """Return (rows, cols) without reading the data section."""
    try:
        with open(path, "rb") as f:
            return _parse_header(f, path)
    except FileNotFoundError as e:
        raise MissingFile(f"tensor file not found: {path}") from e
    except OSError as e:
        raise IoFailure(f"reading {path}: {e}") from e


def read_tensor(path) -> np.ndarray:
    """Read a tensor file back as a float32 array of shape (rows, cols).

    Values are returned exactly as stored; finiteness is checked at the
    point activations are loaded, not here.
    """
    try:
        with open(path, "rb") as f:
            rows, cols = _parse_header(f, path)
            data = f.read()
    except FileNotFoundError as e:
        raise MissingFile(f"tensor file not found: {path}") from e
    except OSError as e:
        raise IoFailure(f"reading {path}: {e}") from e

    expected = rows * cols * 4
    if len(data) != expected:
        raise BadHeader(
            f"{path}: data section holds {len(data)} bytes, expected {expected}"
        )
    arr = np.frombuffer(data, dtype="<f4").reshape(rows, cols)
    return arr.copy()


# ---------------------------------------------------------------------------
# manifests


@dataclass
class LayerEntry:
    index: int
    vision_path: Path
    text_path: Path


@dataclass
class RunManifest:
    model_id: str
    hidden_dim: int
    num_layers: int
    num_pairs: int
    layers: list[LayerEntry]
    extra: dict = field(default_factory=dict)
    source_dir: Path | None = None


@dataclass
class LayerActivations:
    """One layer's activation rows for both modalities, float32, same width."""

    layer_index: int
    vision: np.ndarray
    text: np.ndarray


def _require_positive_int(doc: dict, key: str) -> int:
    if key not in doc:
        raise MalformedManifest(f"manifest is missing required key {key!r}")
    value = doc[key]
    if not isinstance(value, int) or isinstance(value, bool) or value < 1:
        raise MalformedManifest(f"manifest key {key!r} must be a positive integer")
    return value


def read_manifest(path, check_tensors: bool = True) -> RunManifest:
    """Parse and validate a run manifest.

    Checks structure, layer index contiguity (1..num_layers), existence of
    every referenced tensor file, row counts of at least 2, and column counts
    equal to hidden_dim. Set ``check_tensors=False`` to validate structure
    only, without touching the tensor files.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise IoFailure(f"reading {path}: {e}") from e
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise MalformedManifest(f"{path}: not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise MalformedManifest(f"{path}: top level must be a JSON object")

    if "model_id" not in doc or not isinstance(doc["model_id"], str):
        raise MalformedManifest("manifest key 'model_id' must be a string")
    hidden_dim = _require_positive_int(doc, "hidden_dim")
    num_layers = _require_positive_int(doc, "num_layers")
    num_pairs = _require_positive_int(doc, "num_pairs")

    raw_layers = doc.get("layers")
    if not isinstance(raw_layers, list):
        raise MalformedManifest("manifest key 'layers' must be a list")
    if len(raw_layers) != num_layers:
        raise MalformedManifest(
            f"manifest lists {len(raw_layers)} layers but num_layers={num_layers}"
        )

    base = path.parent
    entries: list[LayerEntry] = []
    for pos, item in enumerate(raw_layers):
        if not isinstance(item, dict):
            raise MalformedManifest(f"layers[{pos}] must be an object")
        for key in ("index", "vision", "text"):
            if key not in item:
                raise MalformedManifest(f"layers[{pos}] is missing {key!r}")
        idx = item["index"]
        if not isinstance(idx, int) or isinstance(idx, bool):
            raise MalformedManifest(f"layers[{pos}].index must be an integer")
        if idx != pos + 1:
            raise MalformedManifest(
                f"layer indices must be contiguous starting at 1; "
                f"position {pos} has index {idx}"
            )
        if not isinstance(item["vision"], str) or not isinstance(item["text"], str):
            raise MalformedManifest(f"layers[{pos}] paths must be strings")
        entries.append(
            LayerEntry(
                index=idx,
                vision_path=_resolve(base, item["vision"]),
                text_path=_resolve(base, item["text"]),
            )
        )

    known = {"model_id", "hidden_dim", "num_layers", "num_pairs", "layers"}
    extra = {k: v for k, v in doc.items() if k not in known}

    manifest = RunManifest(
        model_id=doc["model_id"],
        hidden_dim=hidden_dim,
        num_layers=num_layers,
        num_pairs=num_pairs,
        layers=entries,
        extra=extra,
        source_dir=base,
    )

    if check_tensors:
        for entry in manifest.layers:
            for side, tensor_path in (
                ("vision", entry.vision_path),
                ("text", entry.text_path),
            ):
                rows, cols = read_tensor_header(tensor_path)
                if cols != hidden_dim:
                    raise ShapeMismatch(
                        f"layer {entry.index} {side}: {cols} columns, "
                        f"manifest says hidden_dim={hidden_dim}"
                    )
                if rows < 2:
                    raise ShapeMismatch(
                        f"layer {entry.index} {side}: {rows} row(s), need at least 2"
                    )
    return manifest


def _resolve(base: Path, p: str) -> Path:
    candidate = Path(p)
    return candidate if candidate.is_absolute() else base / candidate


def load_layer(entry: LayerEntry, hidden_dim: int | None = None) -> LayerActivations:
    """Load both tensors of one layer and validate them together.

    Rejects NaN or infinity entries, mismatched column counts, and (when
    given) disagreement with the manifest's hidden_dim.
    """
    vision = read_tensor(entry.vision_path)
    text = read_tensor(entry.text_path)
    for side, arr, p in (
        ("vision", vision, entry.vision_path),
        ("text", text, entry.text_path),
    ):
        if not np.all(np.isfinite(arr)):
            raise NonFiniteData(
                f"layer {entry.index} {side} tensor {p} contains NaN or infinity"
            )
    if vision.shape[1] != text.shape[1]:
        raise ShapeMismatch(
            f"layer {entry.index}: vision has {vision.shape[1]} columns, "
            f"text has {text.shape[1]}"
        )
    if hidden_dim is not None and vision.shape[1] != hidden_dim:
        raise ShapeMismatch(
            f"layer {entry.index}: tensors have {vision.shape[1]} columns, "
            f"manifest says hidden_dim={hidden_dim}"
        )
    return LayerActivations(layer_index=entry.index, vision=vision, text=text)


def write_manifest(manifest: RunManifest, path) -> None:
    """Serialize a manifest as deterministic, human-readable JSON.

    Tensor paths that live under the manifest's directory are written
    relative to it so the run directory stays relocatable.
    """
    path = Path(path)
    base = path.parent

    def rel(p: Path) -> str:
        try:
            return p.relative_to(base).as_posix()
        except ValueError:
            return str(p)

    doc: dict[str, Any] = {
        "model_id": manifest.model_id,
        "hidden_dim": manifest.hidden_dim,
        "num_layers": manifest.num_layers,
        "num_pairs": manifest.num_pairs,
    }
    for key in sorted(manifest.extra):
        doc[key] = manifest.extra[key]
    doc["layers"] = [
        {"index": e.index, "vision": rel(e.vision_path), "text": rel(e.text_path)}
        for e in manifest.layers
    ]
    try:
        path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    except OSError as e:
        raise IoFailure(f"writing {path}: {e}") from e
