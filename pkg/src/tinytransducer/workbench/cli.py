"""Command-line entry point: ``tinytransducer {gen,train,eval,preset,mix}``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..sampling import HypothesisSource, error_channel, mix_tokens, read_hypothesis_file
from ..tokens import EOS_ID
from .checkpoint import load_checkpoint
from .config import ConfigError, load_config
from .evaluation import dump_attention, evaluate
from .presets import PRESETS, get_preset, preset_model_config, preset_train_config, run_preset
from .tasks import generate_task, load_dataset, save_dataset
from .training import TrainingDiverged, train
from ..model import TransformerModel

log = logging.getLogger("tinytransducer")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config value (repeatable); --section.key VALUE also works")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tinytransducer", description="Desk-scale transformer ASR workbench")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    _common(g)
    g.add_argument("--out", required=True, help="dataset directory")

    t = sub.add_parser("train", help="train one model")
    _common(t)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="checkpoint directory")
    t.add_argument("--preset", help=f"apply a preset ({', '.join(PRESETS)})")
    t.add_argument("--hyp", help="hypothesis file for offline PSS")

    e = sub.add_parser("eval", help="decode and score a split")
    _common(e)
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--out", required=True, help="report prefix (writes .txt and .json)")
    e.add_argument("--split", default="test")
    e.add_argument("--dump-attention", metavar="DIR", help="write attention maps for the first utterances")
    e.add_argument("--dump-limit", type=int, default=5)

    r = sub.add_parser("preset", help="run presets end to end and append comparison rows")
    _common(r)
    r.add_argument("--id", dest="ids", nargs="+", required=True)
    r.add_argument("--data", help="existing dataset (generated from the config otherwise)")
    r.add_argument("--out", required=True)

    m = sub.add_parser("mix", help="write mixed decoder targets for a training split")
    _common(m)
    m.add_argument("--data", required=True)
    src = m.add_mutually_exclusive_group(required=True)
    src.add_argument("--hyp", help="hypothesis file")
    src.add_argument("--channel", metavar="SUB,DEL,INS", help="error-channel rates")
    m.add_argument("--p", type=float, required=True, help="teacher-force rate")
    m.add_argument("--level", choices=("token", "sentence"), default="token")
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True)
    return ap


def cmd_gen(args, cfg) -> int:
    ds = generate_task(cfg.task)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds.train)} train and {len(ds.test)} test utterances to {args.out}")
    return 0


def cmd_train(args, cfg) -> int:
    ds = load_dataset(args.data)
    model_cfg = cfg.model_config()
    train_cfg = replace(cfg.train, checkpoint_dir=args.out)
    if args.preset:
        preset = get_preset(args.preset)
        settings = cfg.preset_settings()
        model_cfg = preset_model_config(preset, ds.task, settings)
        table = None
        if preset.hyp_kind == "offline_self":
            if not args.hyp:
                raise ConfigError(f"preset {preset.id} needs --hyp (or use the 'preset' command)")
            table = read_hypothesis_file(args.hyp)
        train_cfg = preset_train_config(preset, train_cfg, ds.task, len(ds.train), settings, table)
    elif args.hyp:
        raise ConfigError("--hyp only applies together with an offline PSS preset")
    result = train(TransformerModel(model_cfg), ds.train, train_cfg)
    print(f"trained {len(result.log)} steps, final loss {result.log[-1]['loss']:.4f}; checkpoint {result.checkpoint}")
    return 0


def cmd_eval(args, cfg) -> int:
    ds = load_dataset(args.data)
    utts = ds.split(args.split)
    if not utts:
        raise ConfigError(f"split {args.split!r} is empty")
    model = load_checkpoint(args.checkpoint)
    report = evaluate(model, utts, cfg.beam)
    txt, js = report.write(args.out)
    if args.dump_attention:
        for utt, res in list(zip(utts, report.utterances))[: args.dump_limit]:
            dump_attention(model, utt, res.hyp, Path(args.dump_attention) / f"{utt.utt_id}.npz")
    sys.stdout.write(report.to_text())
    print(f"wrote {txt} and {js}")
    return 0


def cmd_preset(args, cfg) -> int:
    for pid in args.ids:
        get_preset(pid)
    ds = load_dataset(args.data) if args.data else generate_task(cfg.task)
    settings = cfg.preset_settings()
    for pid in args.ids:
        run = run_preset(pid, ds.task, cfg.train, settings, ds, cfg.beam, args.out)
        cers = "  ".join(f"{b} {100 * s.cer:.2f}%" for b, s in run.report.buckets.items())
        print(f"{pid}: {cers}  TD {run.report.corpus.n_tail_del}")
    print(f"comparison rows in {Path(args.out) / 'comparison.tsv'}")
    return 0


def cmd_mix(args, cfg) -> int:
    ds = load_dataset(args.data)
    rng = np.random.default_rng(args.seed)
    if args.hyp:
        source = HypothesisSource.from_file(args.hyp)
        source.check_coverage([u.utt_id for u in ds.train])
    else:
        try:
            rates = [float(x) for x in args.channel.split(",")]
            sub, dele, ins = rates
        except ValueError:
            raise ConfigError("--channel expects three comma-separated rates") from None
        source = HypothesisSource("error_channel", sub, dele, ins, vocab_size=ds.task.vocab_size, seed=args.seed)
    lines = []
    for utt in ds.train:
        y = list(utt.tokens) + [EOS_ID]
        if source.table is not None:
            hyp = source.table[utt.utt_id]
        else:
            hyp = error_channel(y, source.sub_rate, source.del_rate, source.ins_rate,
                                source.vocab_size, source.rng)
        plan = mix_tokens(y, hyp, args.p, args.level, rng)
        lines.append(f"{utt.utt_id}\t{' '.join(str(int(t)) for t in plan.mixed)}")
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(lines)} mixed sequences to {args.out}")
    return 0


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "preset": cmd_preset, "mix": cmd_mix}


def split_overrides(extra: list[str]) -> list[str]:
    """Turn leftover ``--section.key value`` pairs into ``section.key=value`` overrides."""
    out, i = [], 0
    while i < len(extra):
        flag = extra[i]
        if not flag.startswith("--") or "." not in flag:
            raise ConfigError(f"unrecognized argument {flag!r}")
        key = flag[2:]
        if "=" in key:
            out.append(key)
            i += 1
            continue
        if i + 1 >= len(extra):
            raise ConfigError(f"{flag} needs a value")
        out.append(f"{key}={extra[i + 1]}")
        i += 2
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.overrides + split_overrides(extra))
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, KeyError, FileNotFoundError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
