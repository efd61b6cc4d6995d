"""Frozen CLIP vision tower: preprocessing and key-layer feature extraction.

The tower is the ViT-L/14 architecture at 336 px input, so every image maps to
one 768-dim global embedding and a 24 x 24 patch grid per key layer. Without a
weights checkpoint the tower is randomly initialized from a fixed seed; it is
always run frozen, in eval mode, under no_grad.
"""

from __future__ import annotations

import numpy as np
import torch
from PIL import Image

MODEL_ID = "clip-vit-large-14-336"
IMAGE_SIZE = 336
PATCH_SIZE = 14
EMBED_DIM = 768
KEY_LAYERS = (6, 12, 18, 24)
# standard CLIP pixel normalization
_MEAN = np.array([0.48145466, 0.4578275, 0.40821073], dtype=np.float32)
_STD = np.array([0.26862954, 0.26130258, 0.27577711], dtype=np.float32)


def build_model(weights: str | None = None, seed: int = 0):
    """Load a checkpoint directory, or seed a random tower of the same shape."""
    from transformers import CLIPVisionConfig, CLIPVisionModelWithProjection

    if weights is not None:
        model = CLIPVisionModelWithProjection.from_pretrained(weights)
    else:
        torch.manual_seed(seed)
        config = CLIPVisionConfig(
            hidden_size=1024,
            intermediate_size=4096,
            num_hidden_layers=24,
            num_attention_heads=16,
            image_size=IMAGE_SIZE,
            patch_size=PATCH_SIZE,
            projection_dim=EMBED_DIM,
        )
        model = CLIPVisionModelWithProjection(config)
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model


def preprocess(image: np.ndarray) -> torch.Tensor:
    """H x W x 3 uint8 -> 1 x 3 x 336 x 336 normalized float tensor."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise ValueError(f"expected H x W x 3 uint8 image, got {arr.shape} {arr.dtype}")
    pil = Image.fromarray(arr, mode="RGB")
    if pil.size != (IMAGE_SIZE, IMAGE_SIZE):
        pil = pil.resize((IMAGE_SIZE, IMAGE_SIZE), Image.BICUBIC)
    scaled = np.asarray(pil, dtype=np.float32) / 255.0
    normed = (scaled - _MEAN) / _STD
    return torch.from_numpy(normed.transpose(2, 0, 1)).unsqueeze(0)


def depth_to_image(depth: np.ndarray) -> np.ndarray:
    """Depth map in [0, 1] -> grayscale uint8 image replicated to 3 channels."""
    arr = np.asarray(depth, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D depth map, got shape {arr.shape}")
    gray = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    return np.repeat(gray[:, :, None], 3, axis=2)


def embed_image(model, image: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Return the projected global [768] and one [576, 768] map per key layer.

    Patch tokens (class token dropped) pass through the final layer norm and
    the visual projection, so every key layer lands in the shared 768-dim
    embedding space.
    """
    pixel = preprocess(image)
    with torch.no_grad():
        out = model(pixel_values=pixel, output_hidden_states=True)
        global_vec = out.image_embeds[0].numpy().astype(np.float32)
        locals_ = []
        vision = model.vision_model
        for layer in KEY_LAYERS:
            tokens = out.hidden_states[layer][:, 1:, :]
            proj = model.visual_projection(vision.post_layernorm(tokens))[0]
            locals_.append(proj.numpy().astype(np.float32))
    return global_vec, locals_
