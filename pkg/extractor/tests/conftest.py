import json
import random
from pathlib import Path

import pytest


def _write_corpus(root: Path, specs, name="pairs.jsonl") -> Path:
    """Write image byte files plus a JSONL listing them.

    Each spec is (blob, text). An int blob writes that many seeded random
    bytes, a bytes blob is written as-is, and None writes nothing so the
    pair points at a missing file.
    """
    root.mkdir(parents=True, exist_ok=True)
    rng = random.Random(1234)
    lines = []
    for i, (blob, text) in enumerate(specs):
        rel = f"img_{i:02d}.bin"
        if isinstance(blob, int):
            (root / rel).write_bytes(rng.randbytes(blob))
        elif blob is not None:
            (root / rel).write_bytes(blob)
        lines.append(json.dumps({"image": rel, "text": text}))
    path = root / name
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture(scope="session")
def make_pairs():
    return _write_corpus


CORPUS_SPECS = [
    (2048, "A brown dog runs across a grassy field chasing a bright red ball."),
    (1500, "Two people sit at a small table sharing coffee near a rainy window."),
    (2200, "The skyline glows orange as the sun sets behind distant towers."),
    (1800, "A bowl of fresh fruit rests on a wooden counter in soft light."),
    (3000, "Children play soccer on a dusty pitch beside an old brick school."),
    (2500, "A sailboat drifts across calm water under a wide summer sky."),
]


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    """Six well-formed pairs; returns (jsonl path, specs)."""
    root = tmp_path_factory.mktemp("corpus")
    return _write_corpus(root, CORPUS_SPECS), CORPUS_SPECS
