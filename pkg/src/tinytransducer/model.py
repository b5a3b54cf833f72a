"""Encoder-decoder transformer assembled from the tensor core."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Iterator

import numpy as np

from .attention import AttentionMask, MhaLayer, xavier_uniform
from .positional import PE_MODES, LearnedAPE, SinusoidalPE, apply_ape
from .tensor import (
    Tensor,
    add,
    dropout,
    embedding_lookup,
    layer_norm,
    matmul,
    relu,
    scale,
)
from .tokens import SOS_ID


@dataclass
class ModelConfig:
    n_enc_blocks: int = 3
    n_dec_blocks: int = 2
    h: int = 4
    d_m: int = 64
    d_ff: int = 128
    vocab_size: int = 16
    enc_pe_mode: str = "sinusoidal"
    dec_pe_mode: str = "sinusoidal"
    enc_rpe_k: int | None = None
    dec_rpe_k: int | None = None
    dropout: float = 0.1
    frontend_dims: list[int] = field(default_factory=lambda: [128, 64])
    input_feature_dim: int = 16
    max_positions: int = 64
    scale_embedding: bool = True
    seed: int = 0

    def __post_init__(self):
        self.frontend_dims = list(self.frontend_dims)
        self.validate()

    def validate(self) -> None:
        for name in ("n_enc_blocks", "n_dec_blocks", "h", "d_m", "d_ff", "vocab_size",
                     "input_feature_dim", "max_positions"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.d_m % self.h:
            raise ValueError(f"d_m={self.d_m} must be divisible by h={self.h}")
        if not self.frontend_dims or any(d < 1 for d in self.frontend_dims):
            raise ValueError("frontend_dims must be a non-empty list of positive widths")
        if self.frontend_dims[-1] != self.d_m:
            raise ValueError(f"frontend must end at d_m={self.d_m}, got {self.frontend_dims}")
        for mode in (self.enc_pe_mode, self.dec_pe_mode):
            if mode not in PE_MODES:
                raise ValueError(f"unknown positional mode {mode!r}")
        for k in (self.enc_rpe_k, self.dec_rpe_k):
            if k is not None and k < 0:
                raise ValueError("relative clipping distance must be nonnegative")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @classmethod
    def full_scale(cls, vocab_size: int, input_feature_dim: int, **overrides) -> "ModelConfig":
        base = dict(n_enc_blocks=5, n_dec_blocks=3, h=16, d_m=768, d_ff=2048,
                    frontend_dims=[2048, 768], dropout=0.1)
        base.update(overrides)
        return cls(vocab_size=vocab_size, input_feature_dim=input_feature_dim, **base)

    @classmethod
    def desk(cls, vocab_size: int, input_feature_dim: int, **overrides) -> "ModelConfig":
        return cls(vocab_size=vocab_size, input_feature_dim=input_feature_dim, **overrides)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


class Linear:
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Tensor(xavier_uniform(rng, d_in, d_out), requires_grad=True)
        self.bias = Tensor(np.zeros(d_out), requires_grad=True) if bias else None

    def named_parameters(self):
        yield "weight", self.weight
        if self.bias is not None:
            yield "bias", self.bias

    def __call__(self, x: Tensor) -> Tensor:
        y = matmul(x, self.weight)
        return add(y, self.bias) if self.bias is not None else y


class LayerNorm:
    def __init__(self, d: int, eps: float = 1e-5):
        self.gain = Tensor(np.ones(d), requires_grad=True)
        self.bias = Tensor(np.zeros(d), requires_grad=True)
        self.eps = eps

    def named_parameters(self):
        yield "gain", self.gain
        yield "bias", self.bias

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, self.eps)


class FeedForward:
    def __init__(self, d_m: int, d_ff: int, rng: np.random.Generator):
        self.inner = Linear(d_m, d_ff, rng)
        self.outer = Linear(d_ff, d_m, rng)

    def named_parameters(self):
        for n, p in self.inner.named_parameters():
            yield f"inner.{n}", p
        for n, p in self.outer.named_parameters():
            yield f"outer.{n}", p

    def __call__(self, x: Tensor) -> Tensor:
        return self.outer(relu(self.inner(x)))


def _prefixed(prefix: str, module) -> Iterator[tuple[str, Tensor]]:
    for n, p in module.named_parameters():
        yield f"{prefix}.{n}", p


class EncoderBlock:
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.self_attn = MhaLayer(cfg.d_m, cfg.h, rng, cfg.enc_rpe_k)
        self.norm1 = LayerNorm(cfg.d_m)
        self.ffn = FeedForward(cfg.d_m, cfg.d_ff, rng)
        self.norm2 = LayerNorm(cfg.d_m)

    def named_parameters(self):
        yield from _prefixed("self_attn", self.self_attn)
        yield from _prefixed("norm1", self.norm1)
        yield from _prefixed("ffn", self.ffn)
        yield from _prefixed("norm2", self.norm2)


class DecoderBlock:
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.self_attn = MhaLayer(cfg.d_m, cfg.h, rng, cfg.dec_rpe_k)
        self.norm1 = LayerNorm(cfg.d_m)
        self.src_attn = MhaLayer(cfg.d_m, cfg.h, rng, None)
        self.norm2 = LayerNorm(cfg.d_m)
        self.ffn = FeedForward(cfg.d_m, cfg.d_ff, rng)
        self.norm3 = LayerNorm(cfg.d_m)

    def named_parameters(self):
        yield from _prefixed("self_attn", self.self_attn)
        yield from _prefixed("norm1", self.norm1)
        yield from _prefixed("src_attn", self.src_attn)
        yield from _prefixed("norm2", self.norm2)
        yield from _prefixed("ffn", self.ffn)
        yield from _prefixed("norm3", self.norm3)


@dataclass
class EncoderOutput:
    states: Tensor
    lengths: np.ndarray

    def select(self, rows) -> "EncoderOutput":
        """Row subset (or repetition) of the batch, detached from the graph."""
        rows = np.asarray(rows)
        return EncoderOutput(Tensor(self.states.data[rows]), self.lengths[rows])


class TransformerModel:
    """Front-end FFN, encoder stack, decoder stack and output projection."""

    def __init__(self, cfg: ModelConfig):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        dims = [cfg.input_feature_dim] + list(cfg.frontend_dims)
        self.frontend = [Linear(dims[i], dims[i + 1], rng) for i in range(len(dims) - 1)]
        self.enc_blocks = [EncoderBlock(cfg, rng) for _ in range(cfg.n_enc_blocks)]
        self.dec_blocks = [DecoderBlock(cfg, rng) for _ in range(cfg.n_dec_blocks)]
        self.embedding = Tensor(rng.normal(0.0, 0.02, size=(cfg.vocab_size, cfg.d_m)), requires_grad=True)
        self.out_proj = Tensor(xavier_uniform(rng, cfg.d_m, cfg.vocab_size), requires_grad=True)
        self.enc_ape = LearnedAPE(cfg.max_positions, cfg.d_m, rng) if cfg.enc_pe_mode == "learned" else None
        self.dec_ape = LearnedAPE(cfg.max_positions, cfg.d_m, rng) if cfg.dec_pe_mode == "learned" else None
        self.sinusoid = SinusoidalPE(cfg.d_m)
        self.dropout_rng = np.random.default_rng([cfg.seed, 1])
        self.training = False
        self.decoder_passes = 0

    # -- bookkeeping --------------------------------------------------------

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        for i, lin in enumerate(self.frontend):
            yield from _prefixed(f"frontend.{i}", lin)
        if self.enc_ape is not None:
            yield "enc_ape", self.enc_ape.table
        for i, blk in enumerate(self.enc_blocks):
            yield from _prefixed(f"enc.{i}", blk)
        yield "embedding", self.embedding
        if self.dec_ape is not None:
            yield "dec_ape", self.dec_ape.table
        for i, blk in enumerate(self.dec_blocks):
            yield from _prefixed(f"dec.{i}", blk)
        yield "out_proj", self.out_proj

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def train(self, flag: bool = True) -> "TransformerModel":
        self.training = flag
        return self

    def eval(self) -> "TransformerModel":
        return self.train(False)

    def _drop(self, x: Tensor) -> Tensor:
        return dropout(x, self.cfg.dropout, self.training, self.dropout_rng)

    def _sublayer(self, x: Tensor, y: Tensor, norm: LayerNorm) -> Tensor:
        # post-norm: sublayer -> dropout -> residual add -> layer norm
        return norm(add(x, self._drop(y)))

    # -- forward ------------------------------------------------------------

    def encode(self, frames, frame_lengths) -> EncoderOutput:
        frames = frames if isinstance(frames, Tensor) else Tensor(frames)
        lengths = np.asarray(frame_lengths, dtype=np.int64).reshape(-1)
        b, n, f = frames.shape
        if f != self.cfg.input_feature_dim:
            raise ValueError(f"frames have {f} features, model expects {self.cfg.input_feature_dim}")
        if lengths.shape[0] != b:
            raise ValueError("one frame length per utterance required")
        if (lengths < 1).any():
            raise ValueError("zero-length utterance")
        if (lengths > n).any():
            raise ValueError("frame length exceeds padded frame count")
        x = frames
        for i, lin in enumerate(self.frontend):
            x = lin(x)
            if i < len(self.frontend) - 1:
                x = relu(x)
        x = apply_ape(x, self.cfg.enc_pe_mode, self.sinusoid, self.enc_ape)
        mask = AttentionMask("padding", lengths)
        for blk in self.enc_blocks:
            x = self._sublayer(x, blk.self_attn(x, x, mask), blk.norm1)
            x = self._sublayer(x, blk.ffn(x), blk.norm2)
        return EncoderOutput(x, lengths)

    def decode_step_parallel(self, enc: EncoderOutput, dec_input) -> Tensor:
        """Logits ``[b, u, vocab]`` for every decoder position in one pass."""
        ids = np.asarray(dec_input, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None, :]
        if ids.size and (ids.min() < 0 or ids.max() >= self.cfg.vocab_size):
            raise IndexError(f"decoder input id outside [0, {self.cfg.vocab_size})")
        if ids.shape[0] != enc.states.shape[0]:
            raise ValueError("decoder batch does not match encoder batch")
        self.decoder_passes += 1
        x = embedding_lookup(self.embedding, ids)
        if self.cfg.scale_embedding:
            x = scale(x, math.sqrt(self.cfg.d_m))
        x = apply_ape(x, self.cfg.dec_pe_mode, self.sinusoid, self.dec_ape)
        self_mask = AttentionMask("causal")
        src_mask = AttentionMask("padding", enc.lengths)
        for blk in self.dec_blocks:
            x = self._sublayer(x, blk.self_attn(x, x, self_mask), blk.norm1)
            x = self._sublayer(x, blk.src_attn(x, enc.states, src_mask), blk.norm2)
            x = self._sublayer(x, blk.ffn(x), blk.norm3)
        return matmul(x, self.out_proj)

    def __call__(self, frames, frame_lengths, dec_input) -> Tensor:
        return self.decode_step_parallel(self.encode(frames, frame_lengths), dec_input)


def encode(model: TransformerModel, frames, frame_lengths) -> EncoderOutput:
    return model.encode(frames, frame_lengths)


def decode_step_parallel(model: TransformerModel, enc: EncoderOutput, dec_input) -> Tensor:
    return model.decode_step_parallel(enc, dec_input)


def shift_right(labels: np.ndarray) -> np.ndarray:
    """Decoder input for ``labels[b, u]``: SOS followed by ``labels[:, :-1]``."""
    labels = np.asarray(labels, dtype=np.int64)
    out = np.empty_like(labels)
    out[:, 0] = SOS_ID
    out[:, 1:] = labels[:, :-1]
    return out


def count_params(cfg: ModelConfig) -> int:
    """Closed-form parameter count; matches ``TransformerModel(cfg).num_parameters()``."""
    d, f, h = cfg.d_m, cfg.d_ff, cfg.h
    dims = [cfg.input_feature_dim] + list(cfg.frontend_dims)
    total = sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(len(dims) - 1))
    mha = 4 * d * d
    ln = 2 * d
    ffn = d * f + f + f * d + d
    total += cfg.n_enc_blocks * (mha + 2 * ln + ffn)
    total += cfg.n_dec_blocks * (2 * mha + 3 * ln + ffn)
    if cfg.enc_rpe_k is not None:
        total += cfg.n_enc_blocks * (2 * cfg.enc_rpe_k + 1) * (d // h)
    if cfg.dec_rpe_k is not None:
        total += cfg.n_dec_blocks * (2 * cfg.dec_rpe_k + 1) * (d // h)
    total += 2 * cfg.vocab_size * d
    for mode in (cfg.enc_pe_mode, cfg.dec_pe_mode):
        if mode == "learned":
            total += cfg.max_positions * d
    return total
