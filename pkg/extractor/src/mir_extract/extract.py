"""Run a model over image-text pairs and dump per-layer token records.

For every recorded layer the vision-position rows of all pairs are stacked
into one matrix and the text-position rows into another, written as the
scorer's tensor format next to a manifest.json. Layer indices are contiguous
from 1; with include_embedding the embedding output becomes index 1 and the
decoder blocks shift up by one.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CalibrationError, ExtractionError, PairUnusable
from .runio import read_calibration, read_pairs, write_manifest, write_tensor

log = logging.getLogger(__name__)

TEMPLATE_NONE = "none"
TEMPLATE_DEFAULT = "default"


@dataclass
class PairLayout:
    """One encoded pair: adapter-specific payload plus position bookkeeping."""

    payload: object
    vision_indices: np.ndarray
    text_indices: np.ndarray


@dataclass
class ExtractionConfig:
    model: str
    pairs_file: str | Path
    out_dir: str | Path
    template: str = TEMPLATE_NONE
    include_embedding: bool = False
    include_system: bool = False
    calibration: str | Path | None = None
    seed: int = 0
    device: str = "auto"

    def __post_init__(self):
        if self.template not in (TEMPLATE_NONE, TEMPLATE_DEFAULT):
            raise ValueError(f"unknown template {self.template!r}")


def load_adapter(cfg: ExtractionConfig):
    from .toy import ToyAdapter, parse_toy_id

    parsed = parse_toy_id(cfg.model)
    if parsed is not None:
        blocks, dim = parsed
        return ToyAdapter(blocks, dim, cfg.seed)
    from .hf import HFAdapter

    return HFAdapter(cfg.model, device=cfg.device)


def _calibrated(vision: np.ndarray, params, index: int) -> np.ndarray:
    if index not in params:
        raise CalibrationError(f"no calibration parameters for layer {index}")
    u, v = params[index]
    return (vision.astype(np.float64) * u + v).astype(np.float32)


def extract_run(cfg: ExtractionConfig, adapter=None) -> Path:
    """Dump one run directory; returns the manifest path.

    Pairs yielding no vision or no text positions are skipped with a
    warning; more than half of the pairs skipping aborts the run.
    """
    adapter = adapter or load_adapter(cfg)
    pairs = read_pairs(cfg.pairs_file)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    calibration = None
    if cfg.calibration is not None:
        calibration = read_calibration(cfg.calibration, adapter.hidden_dim)

    num_recorded = adapter.num_blocks + (1 if cfg.include_embedding else 0)
    vision_rows: list[list[np.ndarray]] = [[] for _ in range(num_recorded)]
    text_rows: list[list[np.ndarray]] = [[] for _ in range(num_recorded)]

    dumped = 0
    skipped = 0
    for image, text in pairs:
        try:
            layout = adapter.layout(image, text, cfg.template, cfg.include_system)
        except PairUnusable as e:
            log.warning("skipping pair (%s, %.40r): %s", image.name, text, e)
            skipped += 1
            continue
        if layout.vision_indices.size < 1 or layout.text_indices.size < 1:
            log.warning(
                "skipping pair (%s, %.40r): %d vision / %d text positions",
                image.name,
                text,
                layout.vision_indices.size,
                layout.text_indices.size,
            )
            skipped += 1
            continue
        states = adapter.forward(layout)
        recorded = states if cfg.include_embedding else states[1:]
        for pos, state in enumerate(recorded):
            vision_rows[pos].append(state[layout.vision_indices])
            text_rows[pos].append(state[layout.text_indices])
        dumped += 1

    if skipped > len(pairs) / 2:
        raise ExtractionError(
            f"{skipped} of {len(pairs)} pairs skipped; refusing to dump a "
            "majority-skipped run"
        )

    entries = []
    for pos in range(num_recorded):
        index = pos + 1
        vision = np.vstack(vision_rows[pos])
        if calibration is not None:
            vision = _calibrated(vision, calibration, index)
        vision_name = f"layer_{index:02d}_vision.npy"
        text_name = f"layer_{index:02d}_text.npy"
        write_tensor(vision, out_dir / vision_name)
        write_tensor(np.vstack(text_rows[pos]), out_dir / text_name)
        entries.append({"index": index, "vision": vision_name, "text": text_name})

    doc = {
        "model_id": cfg.model,
        "hidden_dim": adapter.hidden_dim,
        "num_layers": num_recorded,
        "num_pairs": dumped,
        "extractor": {
            "seed": cfg.seed,
            "template": cfg.template,
            "include_embedding": cfg.include_embedding,
            "include_system": cfg.include_system,
            "skipped_pairs": skipped,
        },
        "layers": entries,
    }
    if calibration is not None:
        doc["calibrated"] = True
    manifest_path = out_dir / "manifest.json"
    write_manifest(doc, manifest_path)
    log.info(
        "wrote %d layer(s) from %d pair(s) (%d skipped) under %s",
        num_recorded,
        dumped,
        skipped,
        out_dir,
    )
    return manifest_path
