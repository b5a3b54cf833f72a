"""Training loop: Adam, per-epoch LR halving, label smoothing, optional PSS."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from ..model import TransformerModel
from ..sampling import (
    HypothesisSource,
    MixPlan,
    ScheduleConfig,
    decoder_input,
    hypothesize,
    mix_batch,
    online_mix,
    schedule_step,
    teacher_force_rate,
)
from ..tensor import Adam, Tensor, cross_entropy_ls, new_graph
from ..tokens import PAD_ID
from .checkpoint import save_checkpoint
from .tasks import Batch, Utterance, make_batches

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 12
    lr: float = 2e-4
    lr_halve_from_epoch: int = 7
    batch_size: int = 32
    label_smoothing: float = 0.1
    dropout: float | None = 0.1
    schedule: ScheduleConfig | None = None
    hyp_source: HypothesisSource | None = field(default=None, repr=False)
    clip_norm: float | None = None
    seed: int = 0
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if isinstance(self.schedule, dict):
            self.schedule = ScheduleConfig(**self.schedule)
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not 1 <= self.lr_halve_from_epoch <= self.epochs + 1:
            raise ValueError("lr_halve_from_epoch must lie within the run (or epochs + 1 to disable)")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 1-based ``epoch``."""
        if epoch < self.lr_halve_from_epoch:
            return self.lr
        return self.lr * 2.0 ** -(epoch - self.lr_halve_from_epoch + 1)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "hyp_source"}
        d["schedule"] = asdict(self.schedule) if self.schedule is not None else None
        return d


@dataclass
class TrainResult:
    model: TransformerModel
    log: list[dict]
    checkpoint: Path | None = None


def _clip(params: Sequence[Tensor], max_norm: float) -> float:
    total = math.sqrt(sum(float((p.grad.astype(np.float64) ** 2).sum()) for p in params if p.grad is not None))
    if total > max_norm:
        factor = np.float32(max_norm / (total + 1e-6))
        for p in params:
            if p.grad is not None:
                p.grad *= factor
    return total


def _dump_state(cfg: TrainConfig, record: dict, batch: Batch) -> None:
    if cfg.checkpoint_dir is None:
        return
    path = Path(cfg.checkpoint_dir)
    path.mkdir(parents=True, exist_ok=True)
    state = {"record": record, "utt_ids": batch.utt_ids, "config": cfg.to_dict()}
    (path / "diverged.json").write_text(json.dumps(state, indent=1, default=str), encoding="utf-8")


class Trainer:
    """Owns the optimizer and RNG streams for one deterministic run."""

    def __init__(self, model: TransformerModel, cfg: TrainConfig):
        self.model = model
        self.cfg = cfg
        if cfg.dropout is not None:
            model.cfg.dropout = cfg.dropout
        self.opt = Adam(model.parameters())
        self.batch_rng = np.random.default_rng([cfg.seed, 11])
        self.mix_rng = np.random.default_rng([cfg.seed, 12])
        self.global_step = 0

    def plan_inputs(self, batch: Batch, p: float, enc) -> MixPlan:
        """Decoder-side mixing for one batch at teacher-force rate ``p``."""
        cfg = self.cfg
        src = cfg.hyp_source
        if cfg.schedule is None or src is None:
            return MixPlan(batch.labels.copy(), batch.labels != PAD_ID)
        level = cfg.schedule.mix_level
        if src.kind == "online_self":
            return online_mix(self.model, enc, batch.labels, batch.label_lengths, p,
                              src.n_passes, level, self.mix_rng)
        hyps = hypothesize(src, self.model, batch)
        return mix_batch(batch.labels, batch.label_lengths, hyps, p, level, self.mix_rng)

    def step(self, batch: Batch, epoch: int, index: int, n_batches: int) -> dict:
        cfg, model = self.cfg, self.model
        new_graph()
        model.train()
        p = 1.0
        if cfg.schedule is not None:
            p = teacher_force_rate(schedule_step(cfg.schedule, epoch - 1, index, n_batches, self.global_step),
                                   cfg.schedule)
        passes_before = model.decoder_passes
        enc = model.encode(batch.frames, batch.frame_lengths)
        plan = self.plan_inputs(batch, p, enc)
        logits = model.decode_step_parallel(enc, decoder_input(plan.mixed))
        loss = cross_entropy_ls(logits, batch.labels, cfg.label_smoothing, PAD_ID)
        lr = cfg.lr_at(epoch)
        record = {
            "epoch": epoch,
            "step": self.global_step,
            "loss": float(loss.item()),
            "tf_rate": float(p),
            "teacher_frac": float(plan.teacher_mask[batch.labels != PAD_ID].mean()),
            "lr": lr,
            "decoder_passes": model.decoder_passes - passes_before,
        }
        if not np.isfinite(record["loss"]):
            _dump_state(cfg, record, batch)
            raise TrainingDiverged(f"non-finite loss at step {self.global_step}: {record}")
        loss.backward()
        if cfg.clip_norm is not None:
            record["grad_norm"] = _clip(self.opt.params, cfg.clip_norm)
        self.opt.step(lr)
        self.opt.zero_grad()
        self.global_step += 1
        return record

    def fit(self, utts: Sequence[Utterance]) -> list[dict]:
        cfg = self.cfg
        if not utts:
            raise ValueError("no training utterances")
        if utts[0].frames.shape[1] != self.model.cfg.input_feature_dim:
            raise ValueError("dataset frame_dim does not match model input_feature_dim")
        if cfg.hyp_source is not None and cfg.hyp_source.table is not None:
            cfg.hyp_source.check_coverage([u.utt_id for u in utts])
        records = []
        for epoch in range(1, cfg.epochs + 1):
            batches = make_batches(utts, cfg.batch_size, self.batch_rng)
            for i, batch in enumerate(batches):
                records.append(self.step(batch, epoch, i, len(batches)))
            tail = records[-len(batches):]
            log.info("epoch %d lr %.3g loss %.4f tf %.3f", epoch, cfg.lr_at(epoch),
                     float(np.mean([r["loss"] for r in tail])), tail[-1]["tf_rate"])
        return records


def write_log(records: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def train(model: TransformerModel, dataset, cfg: TrainConfig) -> TrainResult:
    """Train on ``dataset`` (a Dataset or a list of utterances) and checkpoint the result."""
    utts = dataset.train if hasattr(dataset, "train") else list(dataset)
    records = Trainer(model, cfg).fit(utts)
    ckpt = None
    if cfg.checkpoint_dir is not None:
        ckpt = save_checkpoint(model, cfg.checkpoint_dir)
        write_log(records, Path(cfg.checkpoint_dir) / "train_log.jsonl")
    model.eval()
    return TrainResult(model, records, ckpt)
