"""Adapter for Hugging Face vision-language checkpoints.

Needs the optional [hf] extras plus downloaded weights, so nothing here runs
in CI; the toy adapter exercises the identical record path. Reference recipe
for llava-hf/llava-1.5-7b-hf: dump 100 TextVQA images with CNN/DailyMail
sentences as prompts, then score the run with the mir CLI.

Positions: vision rows are the expanded image-placeholder span; text rows
are the remaining non-padding prompt positions. With the chat template
enabled, positions before the image span are treated as system tokens and
excluded unless include_system is set (templates do not mark system spans
explicitly, so this is a convention, documented rather than exact).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ModelLoadError, PairUnusable
from .extract import PairLayout


class HFAdapter:
    def __init__(self, model_id: str, device: str = "auto"):
        try:
            import torch
            from transformers import AutoModelForImageTextToText, AutoProcessor
        except ImportError as e:
            raise ModelLoadError(
                'Hugging Face models need the optional extras: pip install "mir-extract[hf]"'
            ) from e
        self._torch = torch
        try:
            self.processor = AutoProcessor.from_pretrained(model_id)
            self.model = AutoModelForImageTextToText.from_pretrained(
                model_id, dtype=torch.float32
            )
        except Exception as e:
            raise ModelLoadError(f"cannot load {model_id}: {e}") from e
        if device == "auto":
            device = "cuda" if torch.cuda.is_available() else "cpu"
        self.device = device
        self.model.to(device).eval()

        config = self.model.config
        text_config = getattr(config, "text_config", config)
        self.hidden_dim = int(text_config.hidden_size)
        self.num_blocks = int(text_config.num_hidden_layers)
        self.image_token_id = getattr(
            config, "image_token_index", getattr(config, "image_token_id", None)
        )
        if self.image_token_id is None:
            raise ModelLoadError(f"{model_id} does not declare an image token id")

    def layout(
        self, image: Path, text: str, template: str, include_system: bool
    ) -> PairLayout:
        try:
            from PIL import Image
        except ImportError as e:
            raise ModelLoadError(
                'Hugging Face models need the optional extras: pip install "mir-extract[hf]"'
            ) from e
        try:
            img = Image.open(image).convert("RGB")
        except OSError as e:
            raise PairUnusable(f"cannot read image: {e}") from e

        if template == "default":
            messages = [
                {
                    "role": "user",
                    "content": [{"type": "image"}, {"type": "text", "text": text}],
                }
            ]
            prompt = self.processor.apply_chat_template(
                messages, add_generation_prompt=True
            )
        else:
            token = getattr(self.processor, "image_token", "<image>")
            prompt = f"{token}\n{text}"
        inputs = self.processor(images=img, text=prompt, return_tensors="pt")

        ids = inputs["input_ids"][0]
        positions = np.arange(ids.shape[0])
        vision_mask = (ids == self.image_token_id).numpy()
        if not vision_mask.any():
            raise PairUnusable("prompt produced no image-token span")
        vision = positions[vision_mask]
        text_positions = positions[~vision_mask]
        if template == "default" and not include_system:
            text_positions = text_positions[text_positions > vision.min()]
        return PairLayout(
            payload=inputs, vision_indices=vision, text_indices=text_positions
        )

    def forward(self, layout: PairLayout) -> list[np.ndarray]:
        torch = self._torch
        inputs = {k: v.to(self.device) for k, v in layout.payload.items()}
        with torch.no_grad():
            output = self.model(**inputs, output_hidden_states=True)
        # hidden_states[0] is the embedding output, one entry per block after
        states = output.hidden_states
        return [
            s[0].float().cpu().numpy().astype(np.float32, copy=True) for s in states
        ]
