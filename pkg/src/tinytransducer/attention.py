"""Scaled dot-product and multi-head attention with optional relative positions."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .positional import RpeTable, relative_rows
from .tensor import (
    DTYPE,
    Tensor,
    add,
    matmul,
    permute,
    reshape,
    scale,
    softmax,
    transpose_last2,
)

NEG_INF = -1e9
MASK_KINDS = ("none", "causal", "padding", "causal+padding")


class DegenerateMaskError(ValueError):
    pass


@dataclass
class AttentionMask:
    kind: str = "none"
    valid_lengths: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in MASK_KINDS:
            raise ValueError(f"unknown mask kind {self.kind!r}")
        if "padding" in self.kind and self.valid_lengths is None:
            raise ValueError("padding masks need valid_lengths")

    def allowed(self, b: int, n_q: int, n_k: int) -> np.ndarray | None:
        """Boolean ``[b, 1, n_q, n_k]`` of attendable cells, or None for no mask."""
        if self.kind == "none":
            return None
        ok = np.ones((b, 1, n_q, n_k), dtype=bool)
        if "causal" in self.kind:
            ok &= (np.arange(n_k)[None, :] <= np.arange(n_q)[:, None])[None, None]
        if "padding" in self.kind:
            lens = np.asarray(self.valid_lengths).reshape(-1)
            if lens.shape[0] != b:
                raise ValueError(f"mask has {lens.shape[0]} lengths for batch {b}")
            ok &= (np.arange(n_k)[None, :] < lens[:, None])[:, None, None, :]
        return ok

    def bias(self, b: int, n_q: int, n_k: int) -> np.ndarray | None:
        ok = self.allowed(b, n_q, n_k)
        if ok is None:
            return None
        if not ok.any(axis=-1).all():
            raise DegenerateMaskError("a query row has every key masked")
        return np.where(ok, DTYPE(0.0), DTYPE(NEG_INF)).astype(DTYPE)


def _attend(logits: Tensor, V: Tensor, mask: AttentionMask | None):
    if mask is not None:
        b, _, n_q, n_k = logits.shape
        bias = mask.bias(b, n_q, n_k)
        if bias is not None:
            logits = add(logits, Tensor(bias))
    weights = softmax(logits, axis=-1)
    return matmul(weights, V), weights


def scaled_dot_attention(Q: Tensor, K: Tensor, V: Tensor, mask: AttentionMask | None = None,
                         return_weights: bool = False):
    """softmax(Q K^T / sqrt(d_k)) V over ``[b, h, n, d]`` tensors."""
    d_k = Q.shape[-1]
    if K.shape[-1] != d_k or K.shape[-2] != V.shape[-2]:
        raise ValueError(f"inconsistent attention shapes Q{Q.shape} K{K.shape} V{V.shape}")
    logits = scale(matmul(Q, transpose_last2(K)), 1.0 / math.sqrt(d_k))
    out, weights = _attend(logits, V, mask)
    return (out, weights) if return_weights else out


def rpe_logits(z_q: Tensor, z_k: Tensor, table: RpeTable) -> Tensor:
    """Attention logits with relative key embeddings, split into two products.

    The content term is the usual ``q k^T``. The relative term regroups the
    queries as ``[n_q, b*h, d_k]`` so each query position multiplies its own
    ``[d_k, n_k]`` slice of relative rows, then reshapes back.
    """
    b, h, n_q, d_k = z_q.shape
    n_k = z_k.shape[2]
    if table.d_k != d_k:
        raise ValueError(f"relative table width {table.d_k} != head dim {d_k}")
    content = matmul(z_q, transpose_last2(z_k))
    a = relative_rows(n_q, n_k, table)                              # [n_q, n_k, d_k]
    q_by_pos = reshape(permute(z_q, (2, 0, 1, 3)), (n_q, b * h, d_k))
    rel = matmul(q_by_pos, transpose_last2(a))                      # [n_q, b*h, n_k]
    rel = permute(reshape(rel, (n_q, b, h, n_k)), (1, 2, 0, 3))
    return scale(add(content, rel), 1.0 / math.sqrt(d_k))


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class MhaLayer:
    """Multi-head attention block; heads share one optional relative table."""

    def __init__(self, d_m: int, h: int, rng: np.random.Generator, rpe_k: int | None = None):
        if d_m % h:
            raise ValueError(f"d_m={d_m} not divisible by h={h}")
        self.d_m, self.h, self.d_k = d_m, h, d_m // h
        self.W_q = Tensor(xavier_uniform(rng, d_m, d_m), requires_grad=True)
        self.W_k = Tensor(xavier_uniform(rng, d_m, d_m), requires_grad=True)
        self.W_v = Tensor(xavier_uniform(rng, d_m, d_m), requires_grad=True)
        self.W_o = Tensor(xavier_uniform(rng, d_m, d_m), requires_grad=True)
        self.rpe = RpeTable(rpe_k, self.d_k, rng) if rpe_k is not None else None
        self.last_weights: np.ndarray | None = None

    def named_parameters(self):
        yield "w_q", self.W_q
        yield "w_k", self.W_k
        yield "w_v", self.W_v
        yield "w_o", self.W_o
        if self.rpe is not None:
            yield "rpe", self.rpe.w

    def _heads(self, x: Tensor, W: Tensor) -> Tensor:
        b, n, _ = x.shape
        return permute(reshape(matmul(x, W), (b, n, self.h, self.d_k)), (0, 2, 1, 3))

    def __call__(self, q_in: Tensor, kv_in: Tensor, mask: AttentionMask | None = None) -> Tensor:
        return mha(self, q_in, kv_in, mask)


def mha(layer: MhaLayer, q_in: Tensor, kv_in: Tensor, mask: AttentionMask | None = None) -> Tensor:
    if q_in.shape[-1] != layer.d_m or kv_in.shape[-1] != layer.d_m:
        raise ValueError(f"model width mismatch: layer {layer.d_m}, inputs {q_in.shape}, {kv_in.shape}")
    b, n_q, _ = q_in.shape
    Q = layer._heads(q_in, layer.W_q)
    K = layer._heads(kv_in, layer.W_k)
    V = layer._heads(kv_in, layer.W_v)
    if layer.rpe is not None:
        logits = rpe_logits(Q, K, layer.rpe)
    else:
        logits = scale(matmul(Q, transpose_last2(K)), 1.0 / math.sqrt(layer.d_k))
    heads, weights = _attend(logits, V, mask)
    layer.last_weights = weights.data
    merged = reshape(permute(heads, (0, 2, 1, 3)), (b, n_q, layer.d_m))
    return matmul(merged, layer.W_o)
