"""Experiment grid: baseline B1 and the E-series PSS / positional-embedding variants."""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

from ..decoding import BeamConfig, beam_decode, greedy_decode
from ..model import ModelConfig, TransformerModel
from ..sampling import HypothesisSource, ScheduleConfig, build_offline_hypotheses, write_hypothesis_file
from ..tensor import no_grad
from .evaluation import EvalReport, evaluate
from .tasks import Dataset, TaskConfig, generate_task
from .training import TrainConfig, TrainResult, train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExperimentPreset:
    id: str
    description: str
    enc_pe_mode: str = "sinusoidal"
    dec_pe_mode: str = "sinusoidal"
    enc_rpe: bool = False
    dec_rpe: bool = False
    hyp_kind: str | None = None
    p_min: float = 1.0
    n_passes: int = 0


PRESETS: dict[str, ExperimentPreset] = {
    p.id: p
    for p in [
        ExperimentPreset("B1", "APE encoder and decoder, teacher forcing"),
        ExperimentPreset("E1", "PSS with error-channel hypotheses", hyp_kind="error_channel", p_min=0.8),
        ExperimentPreset("E2", "PSS with offline self-decoded hypotheses", hyp_kind="offline_self", p_min=0.8),
        ExperimentPreset("E3", "PSS with online self-decoding, one pass", hyp_kind="online_self",
                         p_min=0.5, n_passes=1),
        ExperimentPreset("E5", "no encoder APE, decoder APE", enc_pe_mode="none"),
        ExperimentPreset("E6", "learned position-id APE in the encoder", enc_pe_mode="learned"),
        ExperimentPreset("E7", "encoder RPE without APE, decoder APE", enc_pe_mode="none", enc_rpe=True),
        ExperimentPreset("E8", "RPE in encoder and decoder, no APE", enc_pe_mode="none",
                         dec_pe_mode="none", enc_rpe=True, dec_rpe=True),
        ExperimentPreset("E8+E3", "E8 positions with E3 online PSS", enc_pe_mode="none",
                         dec_pe_mode="none", enc_rpe=True, dec_rpe=True, hyp_kind="online_self",
                         p_min=0.5, n_passes=1),
    ]
}


def get_preset(preset_id: str) -> ExperimentPreset:
    try:
        return PRESETS[preset_id]
    except KeyError:
        raise KeyError(f"unknown preset {preset_id!r}; valid ids: {', '.join(PRESETS)}") from None


def default_rpe_ranges(task: TaskConfig, dec_k: int = 4) -> tuple[int, int]:
    """Encoder range of two tokens' worth of frames, decoder range in tokens."""
    return 2 * task.frames_per_token, dec_k


@dataclass
class PresetSettings:
    """Knobs shared by every preset in one comparison."""

    model: ModelConfig | None = None
    dec_rpe_k: int = 4
    enc_rpe_k: int | None = None
    schedule_window: tuple[float, float] = (0.3, 0.7)
    channel_rates: tuple[float, float, float] = (0.1, 0.05, 0.05)
    offline_beam: BeamConfig = field(default_factory=lambda: BeamConfig(width=5, max_len=64))


def preset_model_config(preset: ExperimentPreset, task: TaskConfig, settings: PresetSettings) -> ModelConfig:
    base = settings.model or ModelConfig(vocab_size=task.vocab_size, input_feature_dim=task.frame_dim)
    enc_k, dec_k = default_rpe_ranges(task, settings.dec_rpe_k)
    if settings.enc_rpe_k is not None:
        enc_k = settings.enc_rpe_k
    need_len = max([task.train_len_range[1] * task.frames_per_token] +
                   [hi * task.frames_per_token for _, (_, hi) in task.test_buckets])
    return replace(
        base,
        vocab_size=task.vocab_size,
        input_feature_dim=task.frame_dim,
        enc_pe_mode=preset.enc_pe_mode,
        dec_pe_mode=preset.dec_pe_mode,
        enc_rpe_k=enc_k if preset.enc_rpe else None,
        dec_rpe_k=dec_k if preset.dec_rpe else None,
        # the learned table only covers what training shows it
        max_positions=(task.train_len_range[1] * task.frames_per_token
                       if preset.enc_pe_mode == "learned" or preset.dec_pe_mode == "learned"
                       else max(base.max_positions, need_len)),
    )


def preset_train_config(preset: ExperimentPreset, train_cfg: TrainConfig, task: TaskConfig,
                        n_train: int, settings: PresetSettings, offline_table=None) -> TrainConfig:
    cfg = copy.copy(train_cfg)
    if preset.hyp_kind is None:
        cfg.schedule, cfg.hyp_source = None, None
        return cfg
    steps = cfg.epochs * -(-n_train // cfg.batch_size)
    lo, hi = settings.schedule_window
    cfg.schedule = ScheduleConfig(p_min=preset.p_min, n_st=int(lo * steps), n_ed=max(int(hi * steps), int(lo * steps) + 1),
                                  step_unit="batch", mix_level="token")
    sub, dele, ins = settings.channel_rates
    if preset.hyp_kind == "error_channel":
        cfg.hyp_source = HypothesisSource("error_channel", sub, dele, ins, vocab_size=task.vocab_size,
                                          seed=cfg.seed)
    elif preset.hyp_kind == "offline_self":
        cfg.hyp_source = HypothesisSource("offline_self", table=offline_table, seed=cfg.seed)
    else:
        cfg.hyp_source = HypothesisSource("online_self", n_passes=preset.n_passes, seed=cfg.seed)
    return cfg


def offline_hypotheses(model: TransformerModel, utts, beam: BeamConfig) -> dict[str, list[int]]:
    def decode(utt):
        with no_grad():
            enc = model.encode(utt.frames[None], [utt.n_frames])
        if beam.width == 1:
            return greedy_decode(model, enc, beam.max_len).tokens
        return beam_decode(model, enc, beam)[0].tokens

    model.eval()
    return build_offline_hypotheses(decode, utts)


@dataclass
class PresetRun:
    preset: ExperimentPreset
    model_cfg: ModelConfig
    train: TrainResult
    report: EvalReport


def run_preset(preset_id: str, task_cfg: TaskConfig, train_cfg: TrainConfig,
               settings: PresetSettings | None = None, dataset: Dataset | None = None,
               beam: BeamConfig | None = None, out_dir=None) -> PresetRun:
    """Build, train and evaluate one preset; optionally write its report under ``out_dir``."""
    preset = get_preset(preset_id)
    settings = settings or PresetSettings()
    dataset = dataset or generate_task(task_cfg)
    beam = beam or BeamConfig()
    train_utts = dataset.train
    table = None
    if preset.hyp_kind == "offline_self":
        # hypotheses come from a teacher-forced model with this preset's positional setup
        base = replace(preset, id=preset.id + "-base", hyp_kind=None, p_min=1.0, n_passes=0)
        tf_model = TransformerModel(preset_model_config(base, task_cfg, settings))
        tf_cfg = preset_train_config(base, train_cfg, task_cfg, len(train_utts), settings)
        tf_cfg = replace(tf_cfg, checkpoint_dir=None)
        train(tf_model, train_utts, tf_cfg)
        table = offline_hypotheses(tf_model, train_utts, settings.offline_beam)
    model_cfg = preset_model_config(preset, task_cfg, settings)
    cfg = preset_train_config(preset, train_cfg, task_cfg, len(train_utts), settings, table)
    if out_dir is not None:
        cfg = replace(cfg, checkpoint_dir=str(Path(out_dir) / preset.id))
    model = TransformerModel(model_cfg)
    result = train(model, train_utts, cfg)
    report = evaluate(model, dataset.test, beam)
    if out_dir is not None:
        run_dir = Path(out_dir) / preset.id
        report.write(run_dir / "report")
        if table is not None:
            write_hypothesis_file(run_dir / "offline_hyps.tsv", table)
        append_comparison_row(Path(out_dir) / "comparison.tsv", preset, report)
    return PresetRun(preset, model_cfg, result, report)


def append_comparison_row(path: Path, preset: ExperimentPreset, report: EvalReport) -> None:
    names = list(report.buckets)
    if not path.exists():
        cols = ["preset", "enc", "dec", "p_min", "N"] + [f"{n}_cer" for n in names] + ["corpus_cer", "TD", "ID"]
        path.write_text("\t".join(cols) + "\n", encoding="utf-8")
    enc = "RPE" if preset.enc_rpe else preset.enc_pe_mode
    dec = "RPE" if preset.dec_rpe else preset.dec_pe_mode
    vals = [preset.id, enc, dec, f"{preset.p_min:g}", str(preset.n_passes)]
    vals += [f"{100 * report.buckets[n].cer:.2f}" for n in names]
    vals += [f"{100 * report.corpus.cer:.2f}", str(report.corpus.n_tail_del), str(report.corpus.n_internal_del)]
    with open(path, "a", encoding="utf-8") as fh:
        fh.write("\t".join(vals) + "\n")
