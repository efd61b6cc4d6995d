"""Optimizes the learnable prompt blocks against the per-sample objective."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import pipeline, prompts, scoring


class NonFiniteLossError(RuntimeError):
    """Raised when a sample's loss comes out NaN or infinite."""

    def __init__(self, sample_id: str, value: float):
        super().__init__(f"non-finite loss {value!r} on sample {sample_id!r}")
        self.sample_id = sample_id
        self.value = value


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 15
    lr: float = 0.001
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    train_stage_weights: bool = False
    settings: pipeline.LossSettings = field(default_factory=pipeline.LossSettings)

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lr <= 0.0:
            raise ValueError("lr must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ValueError("betas must lie in [0,1)")


@dataclass(frozen=True)
class TrainResult:
    bank: prompts.PromptBank
    trace: tuple  # per-epoch mean sample loss
    stage_weights: scoring.StageWeights | None = None


class _Adam:
    """Standard bias-corrected Adam over a dict of named arrays."""

    def __init__(self, shapes: dict, cfg: TrainConfig):
        self.cfg = cfg
        self.t = 0
        self.m = {k: np.zeros(s) for k, s in shapes.items()}
        self.v = {k: np.zeros(s) for k, s in shapes.items()}

    def step(self, params: dict, grads: dict) -> None:
        cfg = self.cfg
        self.t += 1
        for k, g in grads.items():
            if cfg.optimizer == "sgd":
                params[k] -= cfg.lr * g
                continue
            self.m[k] = cfg.beta1 * self.m[k] + (1.0 - cfg.beta1) * g
            self.v[k] = cfg.beta2 * self.v[k] + (1.0 - cfg.beta2) * g * g
            m_hat = self.m[k] / (1.0 - cfg.beta1**self.t)
            v_hat = self.v[k] / (1.0 - cfg.beta2**self.t)
            params[k] -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


def train_prompts(
    dataset,
    bank: prompts.PromptBank,
    encoder: prompts.StubTextEncoder,
    config: TrainConfig,
    stage_weights: scoring.StageWeights | None = None,
) -> TrainResult:
    """Runs batch-size-1 epochs over the dataset with a seeded shuffle.

    Only the bank's learnable blocks (and, when enabled, the RGB stage
    weights) move; the encoder and all embeddings stay untouched. With
    epochs=0 the returned bank is bit-identical to the input.
    """
    samples = list(dataset)
    if not samples:
        raise ValueError("dataset is empty")
    params = {k: np.array(v, dtype=np.float64) for k, v in bank.blocks().items()}
    n_stage = 0
    if config.train_stage_weights:
        if stage_weights is None:
            dim = samples[0].rgb_bundle.dim
            n_stage = len(samples[0].rgb_bundle.locals_)
            stage_weights = scoring.StageWeights.identity(dim, n_stage)
        else:
            n_stage = len(stage_weights.matrices)
        for i, m in enumerate(stage_weights.matrices):
            params[f"stage.{i}"] = np.array(m, dtype=np.float64)

    opt = _Adam({k: v.shape for k, v in params.items()}, config)
    rng = np.random.default_rng(config.seed)
    trace = []
    for _ in range(config.epochs):
        order = rng.permutation(len(samples))
        epoch_losses = []
        for idx in order:
            sample = samples[idx]
            leaf_vars = {k: ad.Var(v) for k, v in params.items()}
            stage_vars = None
            if n_stage:
                stage_vars = [leaf_vars[f"stage.{i}"] for i in range(n_stage)]
            total, _ = pipeline.sample_loss_var(
                sample, bank, encoder, leaf_vars, config.settings, stage_vars
            )
            value = float(total.value)
            if not np.isfinite(value):
                raise NonFiniteLossError(sample.sample_id, value)
            names = list(params)
            grads_list = ad.backward(total, [leaf_vars[k] for k in names])
            opt.step(params, dict(zip(names, grads_list)))
            epoch_losses.append(value)
        trace.append(float(np.mean(epoch_losses)))

    block_names = set(bank.block_names())
    trained_bank = bank.with_blocks({k: params[k] for k in block_names})
    trained_stage = None
    if config.train_stage_weights:
        trained_stage = scoring.StageWeights(
            tuple(params[f"stage.{i}"] for i in range(n_stage))
        )
    elif stage_weights is not None:
        trained_stage = stage_weights
    return TrainResult(trained_bank, tuple(trace), trained_stage)
