"""Decode a test set, align against references, aggregate per length bucket."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..decoding import BeamConfig, align, beam_decode, detect_self_loop, greedy_decode
from ..model import TransformerModel
from ..tensor import no_grad
from ..tokens import SOS_ID
from .tasks import Utterance

CORPUS = "corpus"


@dataclass
class UttResult:
    utt_id: str
    bucket: str
    ref_len: int
    hyp: list[int]
    cer: float
    n_sub: int
    n_del: int
    n_ins: int
    n_tail_del: int
    n_internal_del: int
    n_self_loops: int
    truncated: bool


@dataclass
class BucketStats:
    n_utts: int = 0
    ref_tokens: int = 0
    n_sub: int = 0
    n_del: int = 0
    n_ins: int = 0
    n_tail_del: int = 0
    n_internal_del: int = 0
    n_self_loops: int = 0
    n_truncated: int = 0

    @property
    def errors(self) -> int:
        return self.n_sub + self.n_del + self.n_ins

    @property
    def cer(self) -> float:
        return self.errors / self.ref_tokens if self.ref_tokens else 0.0

    def add(self, r: UttResult) -> None:
        self.n_utts += 1
        self.ref_tokens += r.ref_len
        self.n_sub += r.n_sub
        self.n_del += r.n_del
        self.n_ins += r.n_ins
        self.n_tail_del += r.n_tail_del
        self.n_internal_del += r.n_internal_del
        self.n_self_loops += r.n_self_loops
        self.n_truncated += int(r.truncated)


@dataclass
class EvalReport:
    utterances: list[UttResult] = field(default_factory=list)
    buckets: dict[str, BucketStats] = field(default_factory=dict)
    corpus: BucketStats = field(default_factory=BucketStats)

    def cer(self, bucket: str = CORPUS) -> float:
        return self.corpus.cer if bucket == CORPUS else self.buckets[bucket].cer

    def to_dict(self) -> dict:
        def stats(s: BucketStats) -> dict:
            d = asdict(s)
            d["cer"] = s.cer
            d["errors"] = s.errors
            return d

        return {
            "corpus": stats(self.corpus),
            "buckets": {k: stats(v) for k, v in self.buckets.items()},
            "utterances": [asdict(u) for u in self.utterances],
        }

    def to_text(self) -> str:
        head = f"{'bucket':<10}{'utts':>6}{'tokens':>8}{'CER%':>8}{'sub':>6}{'del':>6}{'ins':>6}{'TD':>6}{'ID':>6}{'loops':>7}"
        rows = [head, "-" * len(head)]
        for name, s in list(self.buckets.items()) + [(CORPUS, self.corpus)]:
            rows.append(
                f"{name:<10}{s.n_utts:>6}{s.ref_tokens:>8}{100 * s.cer:>8.2f}{s.n_sub:>6}{s.n_del:>6}"
                f"{s.n_ins:>6}{s.n_tail_del:>6}{s.n_internal_del:>6}{s.n_self_loops:>7}"
            )
        return "\n".join(rows) + "\n"

    def write(self, prefix) -> tuple[Path, Path]:
        prefix = Path(prefix)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        txt = prefix.with_suffix(".txt")
        js = prefix.with_suffix(".json")
        txt.write_text(self.to_text(), encoding="utf-8")
        js.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True), encoding="utf-8")
        return txt, js


def score(utt: Utterance, hyp: Sequence[int], truncated: bool = False, min_repeat: int = 3) -> UttResult:
    rep = align(utt.tokens, hyp)
    return UttResult(
        utt_id=utt.utt_id,
        bucket=utt.bucket or "unbucketed",
        ref_len=rep.ref_len,
        hyp=[int(t) for t in hyp],
        cer=rep.cer,
        n_sub=rep.n_sub,
        n_del=rep.n_del,
        n_ins=rep.n_ins,
        n_tail_del=rep.n_tail_del,
        n_internal_del=rep.n_internal_del,
        n_self_loops=len(detect_self_loop(hyp, min_repeat)),
        truncated=truncated,
    )


def aggregate(results: Sequence[UttResult]) -> EvalReport:
    report = EvalReport(utterances=list(results))
    for r in results:
        report.buckets.setdefault(r.bucket, BucketStats()).add(r)
        report.corpus.add(r)
    return report


def evaluate(model: TransformerModel | None, utts: Sequence[Utterance], beam: BeamConfig,
             hypothesis_fn: Callable[[Utterance], Sequence[int]] | None = None,
             max_len_fn: Callable[[Utterance], int] | None = None) -> EvalReport:
    """Decode every utterance (beam, or greedy at width 1) and aggregate per bucket.

    ``hypothesis_fn`` replaces decoding entirely, for oracle checks.
    """
    results = []
    if model is not None:
        model.eval()
    for utt in utts:
        if hypothesis_fn is not None:
            results.append(score(utt, list(hypothesis_fn(utt))))
            continue
        max_len = max_len_fn(utt) if max_len_fn is not None else beam.max_len
        with no_grad():
            enc = model.encode(utt.frames[None], [utt.n_frames])
        if beam.width == 1:
            best = greedy_decode(model, enc, max_len)
        else:
            cfg = BeamConfig(beam.width, max_len, beam.length_norm)
            best = beam_decode(model, enc, cfg)[0]
        results.append(score(utt, best.tokens, best.truncated))
    return aggregate(results)


def dump_attention(model: TransformerModel, utt: Utterance, hyp: Sequence[int], path) -> Path:
    """Save every layer's attention weights for ``hyp`` as an ``.npz`` debug file.

    Keys are ``enc.<i>.self`` ``[h, n, n]``, ``dec.<i>.self`` ``[h, u, u]`` and
    ``dec.<i>.src`` ``[h, u, n]``, where row ``t`` of a decoder map is the step
    that emitted ``hyp[t]`` (the last row predicts EOS).
    """
    model.eval()
    with no_grad():
        enc = model.encode(utt.frames[None], [utt.n_frames])
        model.decode_step_parallel(enc, np.array([[SOS_ID] + [int(t) for t in hyp]]))
    maps = {}
    for i, blk in enumerate(model.enc_blocks):
        maps[f"enc.{i}.self"] = blk.self_attn.last_weights[0]
    for i, blk in enumerate(model.dec_blocks):
        maps[f"dec.{i}.self"] = blk.self_attn.last_weights[0]
        maps[f"dec.{i}.src"] = blk.src_attn.last_weights[0]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, ref=np.asarray(utt.tokens), hyp=np.asarray(hyp, dtype=np.int64), **maps)
    return path
