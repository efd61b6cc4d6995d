"""Decoupled text prompts: templates, learnable tokens, stub text encoder.

Four templates (rgb/point x normal/anomaly) share a fixed vocabulary but own
their learnable token matrices, so the two modalities can be tuned apart.
The stub encoder is a frozen seeded tanh stack standing in for a real text
encoder: deterministic, differentiable, unit-norm outputs.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .fileio import atomic_write_bytes
from .tensorio import EmbeddingTensor, read_mcle, write_mcle

POSITIONS = (
    "[P/R][N/A][object]",
    "[P/R][object][N/A]",
    "[N/A][P/R][object]",
)
FLAG_WORD = {"rgb": "rgb", "point": "point"}
VOCAB_WORDS = ("rgb", "point", "damaged", "object")
MODALITIES = ("rgb", "point")
STATES = ("normal", "anomaly")


@dataclass(frozen=True)
class PromptConfig:
    token_dim: int = 64
    embed_dim: int = 64
    length_normal: int = 14
    length_anomaly: int = 14
    position: str = "[P/R][N/A][object]"
    deep_length: int = 0  # 0 disables deep prompts
    deep_depth: int = 9
    n_layers: int = 12

    def __post_init__(self):
        if self.length_normal < 1 or self.length_anomaly < 1:
            raise ValueError("learnable block lengths must be >= 1")
        if self.token_dim < 2:
            raise ValueError("token_dim must be >= 2")
        if self.position not in POSITIONS:
            raise ValueError(f"unknown prompt position {self.position!r}")
        if self.deep_length < 0 or not 1 <= self.deep_depth:
            raise ValueError("invalid deep prompt settings")


@dataclass(frozen=True)
class PromptTemplate:
    modality: str
    state: str
    # slots: ("flag",) | ("learn",) | ("word", <vocab word>)
    slots: tuple


def _slots_for(position: str, state: str) -> tuple:
    tail = (("word", "damaged"), ("word", "object")) if state == "anomaly" else (
        ("word", "object"),
    )
    if position == "[P/R][N/A][object]":
        return (("flag",), ("learn",)) + tail
    if position == "[P/R][object][N/A]":
        return (("flag",),) + tail + (("learn",),)
    return (("learn",), ("flag",)) + tail  # [N/A][P/R][object]


@dataclass(frozen=True)
class PromptBank:
    config: PromptConfig
    seed: int
    templates: dict
    learnable: dict  # "rgb.normal" -> (L x token_dim) float64
    fixed_vocab: dict  # word -> (token_dim,) float64
    deep: dict  # layer index -> (deep_length x token_dim) float64

    def block_names(self) -> list[str]:
        return list(self.learnable) + [f"deep.{k}" for k in self.deep]

    def blocks(self) -> dict:
        out = dict(self.learnable)
        for k, v in self.deep.items():
            out[f"deep.{k}"] = v
        return out

    def with_blocks(self, blocks: dict) -> "PromptBank":
        learnable = {k: np.array(blocks[k]) for k in self.learnable}
        deep = {
            k: np.array(blocks[f"deep.{k}"]) for k in self.deep
        }
        return replace(self, learnable=learnable, deep=deep)


def _vocab_vector(word: str, seed: int, token_dim: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 0, *word.encode()])
    return rng.standard_normal(token_dim) / np.sqrt(token_dim)


def build_bank(config: PromptConfig, seed: int) -> PromptBank:
    """Instantiate the four templates with seeded learnable matrices."""
    templates = {}
    for modality in MODALITIES:
        for state in STATES:
            templates[(modality, state)] = PromptTemplate(
                modality, state, _slots_for(config.position, state)
            )
    vocab = {
        w: _vocab_vector(w, seed, config.token_dim) for w in VOCAB_WORDS
    }
    rng = np.random.default_rng([seed, 1])
    learnable = {}
    for modality in MODALITIES:
        for state in STATES:
            count = (
                config.length_normal if state == "normal" else config.length_anomaly
            )
            learnable[f"{modality}.{state}"] = (
                rng.standard_normal((count, config.token_dim)) * 0.02
            )
    deep = {}
    if config.deep_length > 0:
        drng = np.random.default_rng([seed, 2])
        for layer in range(config.deep_depth, config.n_layers + 1):
            deep[layer] = (
                drng.standard_normal((config.deep_length, config.token_dim)) * 0.02
            )
    return PromptBank(config, seed, templates, learnable, vocab, deep)


@dataclass(frozen=True)
class StubTextEncoder:
    """Frozen affine+tanh stack with an L2-normalized output projection."""

    layers: tuple  # ((W, b), ...) with W (d,d), b (d,)
    proj: np.ndarray  # (D, d)

    @property
    def token_dim(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def embed_dim(self) -> int:
        return self.proj.shape[0]

    @property
    def n_layers(self) -> int:
        return len(self.layers)


def build_encoder(
    token_dim: int = 64, embed_dim: int = 64, n_layers: int = 12, seed: int = 0
) -> StubTextEncoder:
    rng = np.random.default_rng([seed, 3])
    layers = []
    for _ in range(n_layers):
        w = rng.standard_normal((token_dim, token_dim)) / np.sqrt(token_dim)
        b = rng.standard_normal(token_dim) * 0.01
        layers.append((w, b))
    proj = rng.standard_normal((embed_dim, token_dim)) / np.sqrt(token_dim)
    return StubTextEncoder(tuple(layers), proj)


def encode_prompt_var(
    bank: PromptBank,
    modality: str,
    state: str,
    encoder: StubTextEncoder,
    params: dict | None = None,
) -> ad.Var:
    """Graph-mode encoding; params (block name -> Var) substitute learnables."""
    if bank.config.token_dim != encoder.token_dim:
        raise ValueError(
            f"token_dim mismatch: bank {bank.config.token_dim}, "
            f"encoder {encoder.token_dim}"
        )
    if bank.config.n_layers != encoder.n_layers:
        raise ValueError("layer count mismatch between bank and encoder")
    params = params or {}
    template = bank.templates[(modality, state)]
    key = f"{modality}.{state}"
    rows = []
    for slot in template.slots:
        if slot[0] == "flag":
            rows.append(ad.Var(bank.fixed_vocab[FLAG_WORD[modality]][None, :]))
        elif slot[0] == "learn":
            block = params.get(key)
            rows.append(block if block is not None else ad.Var(bank.learnable[key]))
        else:
            rows.append(ad.Var(bank.fixed_vocab[slot[1]][None, :]))
    tokens = ad.concat(rows, axis=0)
    h = ad.vmean(tokens, axis=0)
    for layer_no, (w, b) in enumerate(encoder.layers, start=1):
        if bank.deep and layer_no >= bank.config.deep_depth:
            dkey = f"deep.{layer_no}"
            block = params.get(dkey)
            dp = block if block is not None else ad.Var(bank.deep[layer_no])
            h = ad.div(ad.add(h, ad.vmean(dp, axis=0)), 2.0)
        h = ad.tanh(ad.add(ad.matmul(ad.Var(w), h), b))
    e = ad.matmul(ad.Var(encoder.proj), h)
    return ad.div(e, ad.l2norm(e))


def encode_prompt(
    bank: PromptBank, modality: str, state: str, encoder: StubTextEncoder
) -> np.ndarray:
    return encode_prompt_var(bank, modality, state, encoder).value


def encode_all_vars(
    bank: PromptBank, encoder: StubTextEncoder, params: dict | None = None
) -> tuple:
    """(e_rgb_normal, e_rgb_anomaly, e_point_normal, e_point_anomaly) Vars."""
    return tuple(
        encode_prompt_var(bank, modality, state, encoder, params)
        for modality in MODALITIES
        for state in STATES
    )


def encode_all(bank: PromptBank, encoder: StubTextEncoder) -> tuple:
    return tuple(v.value for v in encode_all_vars(bank, encoder))


def save_bank(bank: PromptBank, out_dir, extra: dict | None = None) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = bank.config
    lines = [
        f"token_dim={cfg.token_dim}",
        f"embed_dim={cfg.embed_dim}",
        f"length_normal={cfg.length_normal}",
        f"length_anomaly={cfg.length_anomaly}",
        f"position={cfg.position}",
        f"deep_length={cfg.deep_length}",
        f"deep_depth={cfg.deep_depth}",
        f"n_layers={cfg.n_layers}",
        f"seed={bank.seed}",
    ]
    for k, v in (extra or {}).items():
        lines.append(f"{k}={v}")
    atomic_write_bytes(out_dir / "manifest.txt", ("\n".join(lines) + "\n").encode())
    for name, matrix in bank.blocks().items():
        buf = io.BytesIO()
        write_mcle(EmbeddingTensor(matrix.astype(np.float64)), buf)
        atomic_write_bytes(out_dir / f"learn.{name}.mcle", buf.getvalue())


def load_bank(ckpt_dir) -> tuple:
    """Returns (bank, extra keys dict from the manifest)."""
    ckpt_dir = Path(ckpt_dir)
    fields = {}
    for line in (ckpt_dir / "manifest.txt").read_text().splitlines():
        if line.strip():
            k, _, v = line.partition("=")
            fields[k] = v
    cfg = PromptConfig(
        token_dim=int(fields["token_dim"]),
        embed_dim=int(fields["embed_dim"]),
        length_normal=int(fields["length_normal"]),
        length_anomaly=int(fields["length_anomaly"]),
        position=fields["position"],
        deep_length=int(fields["deep_length"]),
        deep_depth=int(fields["deep_depth"]),
        n_layers=int(fields["n_layers"]),
    )
    bank = build_bank(cfg, int(fields["seed"]))
    blocks = {}
    for name in bank.blocks():
        with open(ckpt_dir / f"learn.{name}.mcle", "rb") as fh:
            blocks[name] = read_mcle(fh).data.astype(np.float64)
    known = {
        "token_dim", "embed_dim", "length_normal", "length_anomaly", "position",
        "deep_length", "deep_depth", "n_layers", "seed",
    }
    extra = {k: v for k, v in fields.items() if k not in known}
    return bank.with_blocks(blocks), extra
