"""Parallel scheduled sampling: teacher-force schedule, token mixing, hypothesis sources.

Mixing builds the whole decoder input up front, so one training step costs
``n_passes + 1`` parallel decoder passes instead of one pass per output token.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .tensor import no_grad
from .tokens import N_SPECIAL, PAD_ID, SOS_ID

MIX_LEVELS = ("token", "sentence")
STEP_UNITS = ("epoch", "batch")
SOURCE_KINDS = ("external_file", "error_channel", "offline_self", "online_self")


@dataclass
class ScheduleConfig:
    p_min: float = 0.5
    n_st: float = 0
    n_ed: float = 1
    step_unit: str = "batch"
    mix_level: str = "token"

    def __post_init__(self):
        if not 0.0 < self.p_min <= 1.0:
            raise ValueError(f"p_min must lie in (0, 1], got {self.p_min}")
        if self.n_st < 0 or self.n_ed < 0:
            raise ValueError("schedule steps must be nonnegative")
        if self.n_ed <= self.n_st:
            raise ValueError(f"n_ed ({self.n_ed}) must exceed n_st ({self.n_st})")
        if self.step_unit not in STEP_UNITS:
            raise ValueError(f"step_unit must be one of {STEP_UNITS}")
        if self.mix_level not in MIX_LEVELS:
            raise ValueError(f"mix_level must be one of {MIX_LEVELS}")


def teacher_force_rate(i: float, cfg: ScheduleConfig) -> float:
    """max(min(1, 1 - (1 - p_min) (i - n_st) / (n_ed - n_st)), p_min)."""
    if i < 0:
        raise ValueError("schedule step must be nonnegative")
    lin = 1.0 - (1.0 - cfg.p_min) * (i - cfg.n_st) / (cfg.n_ed - cfg.n_st)
    return max(min(1.0, lin), cfg.p_min)


def schedule_step(cfg: ScheduleConfig, epoch: int, batch: int, batches_per_epoch: int,
                  global_step: int) -> float:
    """Schedule position: global batch count, or fractional epoch ``epoch + batch/batches``."""
    if cfg.step_unit == "batch":
        return float(global_step)
    return epoch + batch / batches_per_epoch


@dataclass
class MixPlan:
    mixed: np.ndarray          # [u] or [b, u] token ids
    teacher_mask: np.ndarray   # same shape, True where the ground truth was kept


def mix_tokens(y: Sequence[int], y_hat: Sequence[int], p: float, level: str,
               rng: np.random.Generator) -> MixPlan:
    """Blend ground truth ``y`` with hypothesis ``y_hat`` at teacher-force rate ``p``.

    Token level draws one Bernoulli(p) per position; a non-teacher position
    takes ``y_hat[j]`` when the hypothesis is long enough, else PAD. Sentence
    level draws once and takes ``y`` or the padded/truncated ``y_hat`` whole.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"teacher-force rate must lie in [0, 1], got {p}")
    if level not in MIX_LEVELS:
        raise ValueError(f"mix level must be one of {MIX_LEVELS}")
    y = np.asarray(y, dtype=np.int64)
    u = y.shape[0]
    hyp = np.full(u, PAD_ID, dtype=np.int64)
    q = min(len(y_hat), u)
    hyp[:q] = np.asarray(y_hat, dtype=np.int64)[:q]
    if level == "token":
        keep = rng.random(u) < p
    else:
        keep = np.full(u, rng.random() < p)
    return MixPlan(np.where(keep, y, hyp), keep)


def mix_batch(labels: np.ndarray, label_lengths: np.ndarray, hyps: Sequence[Sequence[int]],
              p: float, level: str, rng: np.random.Generator) -> MixPlan:
    """Row-wise :func:`mix_tokens` over padded ``labels[b, u]``; padding stays PAD."""
    mixed = np.full_like(labels, PAD_ID)
    mask = np.zeros(labels.shape, dtype=bool)
    for r, (n, hyp) in enumerate(zip(label_lengths, hyps)):
        plan = mix_tokens(labels[r, :n], hyp, p, level, rng)
        mixed[r, :n] = plan.mixed
        mask[r, :n] = plan.teacher_mask
    return MixPlan(mixed, mask)


def decoder_input(mixed: np.ndarray) -> np.ndarray:
    """Prepend SOS to the mixed labels, dropping the final (EOS) slot."""
    mixed = np.asarray(mixed, dtype=np.int64)
    out = np.empty_like(mixed)
    out[..., 0] = SOS_ID
    out[..., 1:] = mixed[..., :-1]
    return out


# ----------------------------------------------------------------------------
# hypothesis sources


def read_hypothesis_file(path) -> dict[str, list[int]]:
    """``<utt_id>\\t<space separated ids>`` per line, UTF-8."""
    hyps: dict[str, list[int]] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        utt, _, ids = line.partition("\t")
        if not utt:
            raise ValueError(f"{path}:{lineno}: missing utterance id")
        hyps[utt] = [int(t) for t in ids.split()]
    return hyps


def write_hypothesis_file(path, hyps: Mapping[str, Sequence[int]]) -> None:
    lines = [f"{utt}\t{' '.join(str(int(t)) for t in ids)}" for utt, ids in hyps.items()]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


@dataclass
class HypothesisSource:
    kind: str
    sub_rate: float = 0.0
    del_rate: float = 0.0
    ins_rate: float = 0.0
    n_passes: int = 1
    vocab_size: int | None = None
    table: dict[str, list[int]] | None = None
    seed: int = 0
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind not in SOURCE_KINDS:
            raise ValueError(f"unknown hypothesis source {self.kind!r}; expected one of {SOURCE_KINDS}")
        rates = (self.sub_rate, self.del_rate, self.ins_rate)
        if any(r < 0 for r in rates) or sum(rates) >= 1.0:
            raise ValueError("error-channel rates must be nonnegative and sum below 1")
        if self.n_passes < 0:
            raise ValueError("n_passes must be nonnegative")
        if self.kind == "error_channel" and self.vocab_size is None:
            raise ValueError("error_channel needs vocab_size to draw substitutions")
        if self.kind in ("external_file", "offline_self") and self.table is None:
            raise ValueError(f"{self.kind} needs a hypothesis table")
        self.rng = np.random.default_rng(self.seed)

    @classmethod
    def from_file(cls, path, kind: str = "external_file", **kw) -> "HypothesisSource":
        return cls(kind=kind, table=read_hypothesis_file(path), **kw)

    def check_coverage(self, utt_ids) -> None:
        if self.table is None:
            return
        missing = [u for u in utt_ids if u not in self.table]
        if missing:
            raise KeyError(f"hypothesis table lacks {len(missing)} utterance(s), e.g. {missing[0]!r}")


def error_channel(y: Sequence[int], sub_rate: float, del_rate: float, ins_rate: float,
                  vocab_size: int, rng: np.random.Generator) -> list[int]:
    """Corrupt ``y`` token by token: substitute, delete, or keep-and-insert."""
    out: list[int] = []
    n_content = vocab_size - N_SPECIAL
    draws = rng.random(len(y))
    for tok, r in zip(y, draws):
        tok = int(tok)
        if r < sub_rate:
            if tok >= N_SPECIAL and n_content > 1:
                alt = int(rng.integers(N_SPECIAL, vocab_size - 1))
                out.append(alt if alt < tok else alt + 1)
            else:
                out.append(int(rng.integers(N_SPECIAL, vocab_size)))
        elif r < sub_rate + del_rate:
            continue
        elif r < sub_rate + del_rate + ins_rate:
            out.append(tok)
            out.append(int(rng.integers(N_SPECIAL, vocab_size)))
        else:
            out.append(tok)
    return out


def hypothesize(source: HypothesisSource, model, batch, enc=None) -> list[list[int]]:
    """Per-utterance hypotheses for ``batch`` (a :class:`~tinytransducer.data.Batch`).

    For ``online_self`` this is the first greedy pass with the ground truth as
    decoder input; the N-pass loop lives in :func:`online_mix`.
    """
    refs = [list(batch.labels[r, :n]) for r, n in enumerate(batch.label_lengths)]
    if source.kind in ("external_file", "offline_self"):
        source.check_coverage(batch.utt_ids)
        return [list(source.table[u]) for u in batch.utt_ids]
    if source.kind == "error_channel":
        return [error_channel(y, source.sub_rate, source.del_rate, source.ins_rate,
                              source.vocab_size, source.rng) for y in refs]
    if model is None:
        raise ValueError("online self-decoding needs the model")
    if enc is None:
        with no_grad():
            enc = model.encode(batch.frames, batch.frame_lengths)
    pred = _argmax_pass(model, enc, decoder_input(batch.labels))
    return [[int(t) for t in pred[r, :n]] for r, n in enumerate(batch.label_lengths)]


def _argmax_pass(model, enc, dec_in: np.ndarray) -> np.ndarray:
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            logits = model.decode_step_parallel(enc, dec_in).data
    finally:
        model.train(was_training)
    return logits.argmax(axis=-1)


def online_mix(model, enc, labels: np.ndarray, label_lengths: np.ndarray, p: float,
               n_passes: int, level: str, rng: np.random.Generator) -> MixPlan:
    """N-pass self-decoding mix.

    Pass 1 feeds the ground truth, takes per-position argmax and mixes it with
    the labels; pass m feeds the pass m-1 mixture. ``n_passes=0`` is plain
    teacher forcing. Hypothesis passes are not differentiated.
    """
    labels = np.asarray(labels, dtype=np.int64)
    plan = MixPlan(labels.copy(), labels != PAD_ID)
    for _ in range(n_passes):
        pred = _argmax_pass(model, enc, decoder_input(plan.mixed))
        hyps = [pred[r, :n] for r, n in enumerate(label_lengths)]
        plan = mix_batch(labels, label_lengths, hyps, p, level, rng)
    return plan


def build_offline_hypotheses(decode_fn: Callable[[object], list[int]], dataset) -> dict[str, list[int]]:
    """Decode every training utterance once with a frozen model (``decode_fn(utt)``)."""
    return {utt.utt_id: list(decode_fn(utt)) for utt in dataset}


def sequential_scheduled_sampling(model, enc, labels: np.ndarray, label_lengths: np.ndarray,
                                  p: float, rng: np.random.Generator) -> MixPlan:
    """Reference (non-parallel) scheduled sampling: one decoder pass per output position.

    Position j's input token comes from the model's own prediction given the
    already-sampled prefix, chosen with probability ``1 - p``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    b, u = labels.shape
    mixed = labels.copy()
    keep = np.ones((b, u), dtype=bool)
    for j in range(u):
        pred = _argmax_pass(model, enc, decoder_input(mixed))[:, j]
        take_model = rng.random(b) >= p
        live = j < np.asarray(label_lengths)
        swap = take_model & live
        mixed[swap, j] = pred[swap]
        keep[swap, j] = False
    return MixPlan(mixed, keep & (labels != PAD_ID))

