"""Absolute (sinusoidal, learned) and clipped relative positional embeddings."""
from __future__ import annotations

import math

import numpy as np

from .tensor import DTYPE, Tensor, add, embedding_lookup

PE_MODES = ("sinusoidal", "learned", "none")


class PositionOverflowError(IndexError):
    pass


def sinusoidal_pe(pos: int, i: int, d_m: int) -> float:
    """Even dims get sin(pos / 10000^(i/d_m)); odd dims cos with exponent (i-1)/d_m."""
    if not 0 <= i < d_m:
        raise ValueError(f"dimension index {i} outside [0, {d_m})")
    if i % 2 == 0:
        return math.sin(pos / 10000 ** (i / d_m))
    return math.cos(pos / 10000 ** ((i - 1) / d_m))


class SinusoidalPE:
    """Cached sinusoidal table, grown on demand."""

    def __init__(self, d_m: int, max_precomputed: int = 256):
        self.d_m = d_m
        self._table = np.zeros((0, d_m), dtype=DTYPE)
        self._extend(max_precomputed)

    @property
    def max_precomputed(self) -> int:
        return self._table.shape[0]

    def _extend(self, n: int) -> None:
        pos = np.arange(n, dtype=np.float64)[:, None]
        i = np.arange(self.d_m)
        even_exp = (i - (i % 2)) / self.d_m
        angle = pos / np.power(10000.0, even_exp)[None, :]
        table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
        self._table = table.astype(DTYPE)

    def matrix(self, n: int) -> np.ndarray:
        if n > self._table.shape[0]:
            self._extend(max(n, 2 * self._table.shape[0]))
        return self._table[:n]


class LearnedAPE:
    """Trainable position-id table; positions past ``max_len`` are unusable."""

    def __init__(self, max_len: int, d_m: int, rng: np.random.Generator):
        self.max_len = max_len
        self.table = Tensor(rng.normal(0.0, 0.02, size=(max_len, d_m)), requires_grad=True)

    def lookup(self, n: int) -> Tensor:
        if n > self.max_len:
            raise PositionOverflowError(
                f"learned positional table holds {self.max_len} positions, sequence needs {n}"
            )
        return embedding_lookup(self.table, np.arange(n))


def apply_ape(x: Tensor, mode: str, sinusoid: SinusoidalPE | None = None,
              learned: LearnedAPE | None = None) -> Tensor:
    """Add the absolute positional matrix for positions ``0..n-1`` to ``x[b, n, d_m]``."""
    if mode == "none":
        return x
    n, d_m = x.shape[1], x.shape[2]
    if mode == "sinusoidal":
        sinusoid = sinusoid or SinusoidalPE(d_m, n)
        return add(x, Tensor(sinusoid.matrix(n)))
    if mode == "learned":
        if learned is None:
            raise ValueError("learned mode needs a LearnedAPE table")
        return add(x, learned.lookup(n))
    raise ValueError(f"unknown positional mode {mode!r}; expected one of {PE_MODES}")


class RpeTable:
    """2k+1 trainable rows indexed by clipped relative offset, one per attention layer."""

    def __init__(self, k: int, d_k: int, rng: np.random.Generator | None = None, std: float = 0.02):
        if k < 0:
            raise ValueError(f"clipping distance must be nonnegative, got {k}")
        self.k = k
        self.d_k = d_k
        init = rng.normal(0.0, std, size=(2 * k + 1, d_k)) if rng is not None else np.zeros((2 * k + 1, d_k))
        self.w = Tensor(init, requires_grad=True)

    def row_index(self, offset):
        return np.clip(offset, -self.k, self.k) + self.k


def relative_index(n_q: int, n_k: int, k: int) -> np.ndarray:
    """Row of the relative table used by cell (i, j): clip(j - i, -k, k) + k."""
    off = np.arange(n_k)[None, :] - np.arange(n_q)[:, None]
    return np.clip(off, -k, k) + k


def relative_rows(n_q: int, n_k: int, table: RpeTable) -> Tensor:
    """Gather ``a_ij`` for every query/key pair as a ``[n_q, n_k, d_k]`` tensor."""
    if n_q < 1 or n_k < 1:
        raise ValueError("relative_rows needs positive lengths")
    return embedding_lookup(table.w, relative_index(n_q, n_k, table.k))
