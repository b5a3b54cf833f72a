"""Greedy and beam decoding, Levenshtein alignment, deletion taxonomy, self-loops."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .model import EncoderOutput, TransformerModel
from .tensor import log_softmax_np, no_grad
from .tokens import EOS_ID, PAD_ID, SOS_ID


@dataclass
class BeamConfig:
    width: int = 5
    max_len: int = 64
    length_norm: bool = False

    def __post_init__(self):
        if self.width < 1:
            raise ValueError("beam width must be at least 1")
        if self.max_len < 1:
            raise ValueError("max_len must be at least 1")


@dataclass
class Hypothesis:
    tokens: list[int]
    score: float
    finished: bool = True

    @property
    def truncated(self) -> bool:
        return not self.finished


def _next_logprobs(model: TransformerModel, enc: EncoderOutput, prefixes: list[list[int]]) -> np.ndarray:
    """Log-probabilities of the next token after each prefix, PAD/SOS excluded."""
    dec_in = np.array([[SOS_ID] + p for p in prefixes], dtype=np.int64)
    rows = np.zeros(len(prefixes), dtype=np.int64)
    logits = model.decode_step_parallel(enc.select(rows), dec_in).data[:, -1, :]
    lp = log_softmax_np(logits.astype(np.float64))
    lp[:, PAD_ID] = -np.inf
    lp[:, SOS_ID] = -np.inf
    return lp


def greedy_decode(model: TransformerModel, enc: EncoderOutput, max_len: int) -> Hypothesis:
    """Arg-max decoding from SOS until EOS or ``max_len`` emitted tokens."""
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    was_training = model.training
    model.eval()
    tokens: list[int] = []
    score = 0.0
    try:
        with no_grad():
            for _ in range(max_len):
                lp = _next_logprobs(model, enc, [tokens])[0]
                tok = int(np.argmax(lp))
                score += float(lp[tok])
                if tok == EOS_ID:
                    return Hypothesis(tokens, score, True)
                tokens.append(tok)
    finally:
        model.train(was_training)
    return Hypothesis(tokens, score, False)


def beam_decode(model: TransformerModel, enc: EncoderOutput, cfg: BeamConfig) -> list[Hypothesis]:
    """Beam search over decoder log-probabilities; best first.

    The top ``width`` expansions survive each step; those ending in EOS (or
    reaching ``max_len``) retire into the completed pool. Without length
    normalization the search stops once no live beam can beat the current
    top-``width`` completed scores.
    """
    was_training = model.training
    model.eval()
    live: list[tuple[list[int], float]] = [([], 0.0)]
    done: list[Hypothesis] = []

    def rank(h: Hypothesis) -> float:
        if cfg.length_norm:
            return h.score / (len(h.tokens) + (1 if h.finished else 0) or 1)
        return h.score

    try:
        with no_grad():
            for step in range(cfg.max_len):
                lp = _next_logprobs(model, enc, [t for t, _ in live])
                cand = (np.array([s for _, s in live])[:, None] + lp).reshape(-1)
                order = np.argsort(-cand, kind="stable")[: cfg.width]
                V = lp.shape[1]
                nxt = []
                for flat in order:
                    score = float(cand[flat])
                    if not np.isfinite(score):
                        continue
                    parent, tok = divmod(int(flat), V)
                    toks = live[parent][0]
                    if tok == EOS_ID:
                        done.append(Hypothesis(list(toks), score, True))
                    elif step == cfg.max_len - 1:
                        done.append(Hypothesis(toks + [tok], score, False))
                    else:
                        nxt.append((toks + [tok], score))
                live = nxt
                if not live:
                    break
                if not cfg.length_norm and len(done) >= cfg.width:
                    kth = sorted((h.score for h in done), reverse=True)[cfg.width - 1]
                    if max(s for _, s in live) <= kth:
                        break
    finally:
        model.train(was_training)
    ranked = sorted(done, key=rank, reverse=True)
    return ranked[: cfg.width]


# ----------------------------------------------------------------------------
# alignment

OP_NAMES = {kernels.OP_HIT: "hit", kernels.OP_SUB: "sub", kernels.OP_DEL: "del", kernels.OP_INS: "ins"}


@dataclass
class AlignmentReport:
    cer: float
    n_sub: int
    n_del: int
    n_ins: int
    n_hit: int
    n_tail_del: int
    n_internal_del: int
    ref_len: int
    hyp_len: int
    alignment: list[tuple[str, int | None, int | None]] = field(default_factory=list)

    @property
    def errors(self) -> int:
        return self.n_sub + self.n_del + self.n_ins


def align(ref, hyp) -> AlignmentReport:
    """Unit-cost Levenshtein alignment with tail/internal deletion split.

    Deletions after the last hit or substitution run off the end of the
    reference and count as tail deletions; every other deletion is internal.
    """
    ref = [int(t) for t in ref]
    hyp = [int(t) for t in hyp]
    dist, ops = kernels.edit_align(ref, hyp)
    alignment = []
    i = j = 0
    counts = {name: 0 for name in OP_NAMES.values()}
    last_match = -1
    for k, op in enumerate(ops.tolist()):
        name = OP_NAMES[op]
        counts[name] += 1
        if name in ("hit", "sub"):
            alignment.append((name, i, j))
            i += 1
            j += 1
            last_match = k
        elif name == "del":
            alignment.append((name, i, None))
            i += 1
        else:
            alignment.append((name, None, j))
            j += 1
    n_tail = sum(1 for k, (name, _, _) in enumerate(alignment) if name == "del" and k > last_match)
    errors = counts["sub"] + counts["del"] + counts["ins"]
    assert errors == dist
    if ref:
        cer = errors / len(ref)
    else:
        cer = 0.0 if not hyp else float("inf")
    return AlignmentReport(
        cer=cer,
        n_sub=counts["sub"],
        n_del=counts["del"],
        n_ins=counts["ins"],
        n_hit=counts["hit"],
        n_tail_del=n_tail,
        n_internal_del=counts["del"] - n_tail,
        ref_len=len(ref),
        hyp_len=len(hyp),
        alignment=alignment,
    )


def edit_distance(ref, hyp) -> int:
    return kernels.edit_align(list(ref), list(hyp))[0]


# ----------------------------------------------------------------------------
# self-loops


@dataclass(frozen=True)
class SelfLoop:
    start: int
    ngram: tuple[int, ...]
    repeats: int

    @property
    def end(self) -> int:
        return self.start + len(self.ngram) * self.repeats


def detect_self_loop(hyp, min_repeat: int = 3) -> list[SelfLoop]:
    """Maximal runs where some n-gram repeats back to back at least ``min_repeat`` times.

    Scans left to right; at each position the shortest repeating period wins,
    and the scan resumes after the reported run.
    """
    if min_repeat < 2:
        raise ValueError("min_repeat must be at least 2")
    seq = [int(t) for t in hyp]
    L = len(seq)
    loops: list[SelfLoop] = []
    i = 0
    while i < L:
        found = None
        for n in range(1, (L - i) // min_repeat + 1):
            gram = seq[i:i + n]
            reps = 1
            while seq[i + reps * n: i + (reps + 1) * n] == gram:
                reps += 1
            if reps >= min_repeat:
                found = SelfLoop(i, tuple(gram), reps)
                break
        if found is None:
            i += 1
        else:
            loops.append(found)
            i = found.end
    return loops
