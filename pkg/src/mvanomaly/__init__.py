"""Zero-shot 3D anomaly detection: multi-view rendering, prompt learning, fusion."""

from .config import PipelineConfig, load_config
from .datagen import SynthSpec, generate, load_cloud, write_dataset
from .geometry import (
    OrganizedPointCloud,
    ViewRender,
    ViewTransform,
    default_view_set,
    inverse_render,
    make_view_set,
    render_view,
    rotation_matrix,
)
from .metrics import aupro, auroc, average_precision, pixel_auroc
from .pipeline import LossSettings, PipelineSample, sample_loss_var, score_sample
from .prompts import (
    PromptBank,
    PromptConfig,
    StubTextEncoder,
    build_bank,
    build_encoder,
    encode_all,
    load_bank,
    save_bank,
)
from .scoring import BranchOutput, ScoreReport, StageWeights, cmm_fuse
from .tensorio import (
    EmbeddingBundle,
    EmbeddingProvider,
    EmbeddingTensor,
    file_provider,
    read_mcle,
    service_provider,
    write_mcle,
)
from .training import NonFiniteLossError, TrainConfig, TrainResult, train_prompts

__version__ = "0.1.0"

__all__ = [
    "BranchOutput",
    "EmbeddingBundle",
    "EmbeddingProvider",
    "EmbeddingTensor",
    "LossSettings",
    "NonFiniteLossError",
    "OrganizedPointCloud",
    "PipelineConfig",
    "PipelineSample",
    "PromptBank",
    "PromptConfig",
    "ScoreReport",
    "StageWeights",
    "StubTextEncoder",
    "SynthSpec",
    "TrainConfig",
    "TrainResult",
    "ViewRender",
    "ViewTransform",
    "aupro",
    "auroc",
    "average_precision",
    "build_bank",
    "build_encoder",
    "cmm_fuse",
    "default_view_set",
    "encode_all",
    "file_provider",
    "generate",
    "inverse_render",
    "load_bank",
    "load_cloud",
    "load_config",
    "make_view_set",
    "pixel_auroc",
    "read_mcle",
    "render_view",
    "rotation_matrix",
    "sample_loss_var",
    "save_bank",
    "score_sample",
    "service_provider",
    "train_prompts",
    "write_dataset",
    "write_mcle",
]
