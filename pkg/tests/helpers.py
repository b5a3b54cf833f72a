"""Shared oracles for the test suite."""
from __future__ import annotations

import itertools
import math
from functools import lru_cache

import numpy as np

from tinytransducer.model import ModelConfig, TransformerModel
from tinytransducer.tensor import Tensor, log_softmax_np, new_graph, no_grad, precision
from tinytransducer.tokens import EOS_ID, N_SPECIAL, SOS_ID


def gradcheck(fn, tensors, step=1e-3, seed=0, max_coords=None, dtype=np.float64):
    """Norm-wise relative error between analytic and central-difference gradients.

    ``fn()`` builds the output from ``tensors``; the scalar probed is
    ``sum(fn() * R)`` for a fixed random ``R``. Returns the worst error over
    the tensors. ``max_coords`` samples that many coordinates per tensor.
    The check runs in ``dtype`` and restores the tensors' dtype afterwards.
    """
    saved = [t.data.dtype for t in tensors]
    for t in tensors:
        t.data = t.data.astype(dtype)
    try:
        with precision(dtype):
            return _gradcheck(fn, tensors, step, seed, max_coords)
    finally:
        for t, dt in zip(tensors, saved):
            t.data = t.data.astype(dt)
            t.grad = None


def _gradcheck(fn, tensors, step, seed, max_coords):
    rng = np.random.default_rng(seed)
    new_graph()
    for t in tensors:
        t.grad = None
        t.requires_grad = True
    out = fn()
    R = rng.normal(size=out.shape)
    out.backward(R)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    def probe() -> float:
        with no_grad():
            return float((fn().data.astype(np.float64) * R).sum())

    worst = 0.0
    for t, ga in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = rng.choice(flat.size, max_coords, replace=False)
        num = np.empty(len(idx))
        for n, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            up = probe()
            flat[i] = orig - step
            down = probe()
            flat[i] = orig
            num[n] = (up - down) / (2 * step)
        ana = ga.reshape(-1)[idx].astype(np.float64)
        denom = max(np.linalg.norm(num), np.linalg.norm(ana), 1e-8)
        worst = max(worst, float(np.linalg.norm(num - ana) / denom))
    return worst


def param(rng, *shape, scale=1.0):
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)


def micro_config(**kw) -> ModelConfig:
    base = dict(n_enc_blocks=2, n_dec_blocks=2, h=2, d_m=8, d_ff=16, vocab_size=7,
                frontend_dims=[12, 8], input_feature_dim=5, max_positions=32, dropout=0.0, seed=0)
    base.update(kw)
    return ModelConfig(**base)


def micro_model(**kw) -> TransformerModel:
    return TransformerModel(micro_config(**kw))


# ----------------------------------------------------------------------------
# alignment oracle


def levenshtein_oracle(ref, hyp) -> int:
    """Memoized recursive edit distance, independent of the DP kernel."""
    ref, hyp = tuple(ref), tuple(hyp)

    @lru_cache(maxsize=None)
    def d(i, j):
        if i == len(ref):
            return len(hyp) - j
        if j == len(hyp):
            return len(ref) - i
        return min(d(i + 1, j + 1) + (ref[i] != hyp[j]), d(i + 1, j) + 1, d(i, j + 1) + 1)

    return d(0, 0)


def all_strings(max_len: int, alphabet):
    for n in range(max_len + 1):
        yield from itertools.product(alphabet, repeat=n)


def edit_graph_distances(strings):
    """All-pairs edit distance as shortest paths over single-edit moves.

    An optimal script can run deletions, then substitutions, then
    insertions, so it never leaves the set of strings up to the longest
    endpoint; the graph restricted to ``strings`` is therefore exact.
    """
    index = {s: i for i, s in enumerate(strings)}
    alphabet = sorted({c for s in strings for c in s})
    n = len(strings)
    adj = np.zeros((n, n), dtype=np.float32)
    for s, i in index.items():
        for p in range(len(s)):
            adj[i, index[s[:p] + s[p + 1:]]] = 1       # delete (insert is the reverse edge)
            for c in alphabet:
                if c != s[p]:
                    adj[i, index[s[:p] + (c,) + s[p + 1:]]] = 1
    adj = np.maximum(adj, adj.T)
    dist = np.full((n, n), -1, dtype=np.int64)
    np.fill_diagonal(dist, 0)
    frontier = np.eye(n, dtype=np.float32)
    reached = frontier > 0
    d = 0
    while not reached.all():
        d += 1
        frontier = (frontier @ adj > 0).astype(np.float32)
        new = (frontier > 0) & ~reached
        dist[new] = d
        reached |= new
    return dist


# ----------------------------------------------------------------------------
# search and attention oracles


def tiny_setup(seed=0, vocab=N_SPECIAL + 3):
    model = micro_model(vocab_size=vocab, seed=seed)
    model.eval()
    frames = np.random.default_rng(seed).normal(size=(1, 4, 5)).astype(np.float32)
    with no_grad():
        enc = model.encode(frames, [4])
    return model, enc


def sequence_score(model, enc, tokens, finished):
    """Log-probability of ``tokens`` (+ EOS if finished) from one teacher-forced pass."""
    targets = list(tokens) + ([EOS_ID] if finished else [])
    dec_in = ([SOS_ID] + list(tokens))[: len(targets)]
    with no_grad():
        logits = model.decode_step_parallel(enc, np.array([dec_in])).data[0].astype(np.float64)
    lp = log_softmax_np(logits)
    return float(sum(lp[t, tok] for t, tok in enumerate(targets)))


def brute_force(model, enc, max_len, content):
    out = []
    for n in range(max_len):
        for seq in itertools.product(content, repeat=n):
            out.append((list(seq), sequence_score(model, enc, seq, True), True))
    for seq in itertools.product(content, repeat=max_len):
        out.append((list(seq), sequence_score(model, enc, seq, False), False))
    return sorted(out, key=lambda t: -t[1])


def direct_rpe_logits(q, k, table):
    """Per-pair form: e_ij = q_i (k_j + a_ij)^T / sqrt(d_k)."""
    b, h, n_q, d = q.shape
    n_k = k.shape[2]
    out = np.empty((b, h, n_q, n_k))
    for i in range(n_q):
        for j in range(n_k):
            a = table.w.data[table.row_index(j - i)].astype(np.float64)
            out[:, :, i, j] = (q[:, :, i, :] * (k[:, :, j, :] + a)).sum(-1) / math.sqrt(d)
    return out
