"""Seeded toy decoder for fast end-to-end runs without real weights.

The model is tiny but structurally honest: an image front end producing one
token per 64-byte patch of the image file, a byte-level text embedding, and
a stack of causal mixing blocks recorded post-residual. All weights derive
from the seed and the forward pass draws nothing, so extraction is
deterministic down to the byte.
"""

from __future__ import annotations

import math
import re
from pathlib import Path

import numpy as np
import torch

from .errors import PairUnusable
from .extract import PairLayout

PATCH_BYTES = 64
TEMPLATE_SYSTEM = b"A chat between a curious user and an assistant.\n"
TEMPLATE_PREFIX = b"USER: "
TEMPLATE_SUFFIX = b"\nASSISTANT:"

_TOY_ID = re.compile(r"^toy(?::(\d+)x(\d+))?$")


def parse_toy_id(model_id: str) -> tuple[int, int] | None:
    """"toy" or "toy:<blocks>x<dim>"; None when the id is not a toy model."""
    m = _TOY_ID.match(model_id)
    if not m:
        return None
    if m.group(1) is None:
        return 2, 32
    return int(m.group(1)), int(m.group(2))


def _byte_ids(data: bytes) -> torch.Tensor:
    return torch.tensor(list(data), dtype=torch.long)


class ToyAdapter:
    def __init__(self, num_blocks: int, hidden_dim: int, seed: int = 0):
        if num_blocks < 1 or hidden_dim < 1:
            raise ValueError("toy model needs at least 1 block and 1 dimension")
        self.num_blocks = num_blocks
        self.hidden_dim = hidden_dim
        gen = torch.Generator().manual_seed(seed)
        d = hidden_dim

        def draw(*shape, scale=1.0):
            return torch.randn(*shape, generator=gen) * scale

        self.token_embed = draw(256, d, scale=1.0 / math.sqrt(d))
        self.patch_proj = draw(PATCH_BYTES, d, scale=1.0 / math.sqrt(PATCH_BYTES))
        # constant offset separates the vision cloud from the byte embeddings
        self.patch_bias = draw(d, scale=0.5)
        self.blocks = [
            (
                draw(d, d, scale=1.0 / math.sqrt(d)),
                draw(d, d, scale=1.0 / math.sqrt(d)),
                draw(d, d, scale=1.0 / math.sqrt(d)),
                draw(d, scale=0.1),
            )
            for _ in range(num_blocks)
        ]

    def _patch_tokens(self, image: Path) -> torch.Tensor:
        try:
            data = image.read_bytes()
        except OSError as e:
            raise PairUnusable(f"cannot read image: {e}") from e
        if not data:
            return torch.zeros((0, self.hidden_dim))
        padded = data + b"\x00" * (-len(data) % PATCH_BYTES)
        patches = torch.tensor(list(padded), dtype=torch.float32)
        patches = patches.reshape(-1, PATCH_BYTES) / 255.0 - 0.5
        return patches @ self.patch_proj + self.patch_bias

    def layout(
        self, image: Path, text: str, template: str, include_system: bool
    ) -> PairLayout:
        """Embed one pair as [system][image patches][prompt bytes]."""
        patches = self._patch_tokens(image)
        system = TEMPLATE_SYSTEM if template == "default" else b""
        prompt = text.encode("utf-8")
        if template == "default":
            prompt = TEMPLATE_PREFIX + prompt + TEMPLATE_SUFFIX

        parts = []
        if system:
            parts.append(self.token_embed[_byte_ids(system)])
        parts.append(patches)
        if prompt:
            parts.append(self.token_embed[_byte_ids(prompt)])
        embeddings = torch.cat(parts) if parts else patches

        n_sys, n_img, n_txt = len(system), patches.shape[0], len(prompt)
        vision = np.arange(n_sys, n_sys + n_img)
        text_positions = np.arange(n_sys + n_img, n_sys + n_img + n_txt)
        if include_system:
            text_positions = np.concatenate([np.arange(n_sys), text_positions])
        return PairLayout(
            payload=embeddings, vision_indices=vision, text_indices=text_positions
        )

    def forward(self, layout: PairLayout) -> list[np.ndarray]:
        """Embedding followed by each block's post-residual output."""
        h = layout.payload
        states = [h]
        n = h.shape[0]
        prefix_weight = 1.0 / torch.arange(1.0, n + 1.0).unsqueeze(1)
        with torch.no_grad():
            for w_in, w_mix, w_out, bias in self.blocks:
                mixed = torch.cumsum(h, dim=0) * prefix_weight
                h = h + 0.5 * torch.tanh(h @ w_in + mixed @ w_mix + bias) @ w_out
                states.append(h)
        return [s.numpy().astype(np.float32, copy=True) for s in states]
