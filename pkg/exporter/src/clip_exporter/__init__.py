"""Frozen CLIP embedding exporter and HTTP embedding service."""

from .export import ExportManifest, export_branch, export_sample, export_tree
from .model import EMBED_DIM, IMAGE_SIZE, KEY_LAYERS, MODEL_ID, build_model, embed_image
from .serve import bundle_body, make_server

__all__ = [
    "ExportManifest",
    "export_branch",
    "export_sample",
    "export_tree",
    "EMBED_DIM",
    "IMAGE_SIZE",
    "KEY_LAYERS",
    "MODEL_ID",
    "build_model",
    "embed_image",
    "bundle_body",
    "make_server",
]
