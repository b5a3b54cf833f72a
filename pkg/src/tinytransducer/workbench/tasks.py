"""Synthetic pseudo-ASR tasks: token strings rendered as noisy frame sequences.

Each token owns a fixed prototype vector and emits ``frames_per_token`` noisy
copies of it. Adjacent tokens always differ, so token boundaries are visible
in the frames.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..tokens import EOS_ID, N_SPECIAL, PAD_ID

TASKS = ("copy", "repeated_segment")
MANIFEST_HEADER = "# tinytransducer-dataset v1"


@dataclass
class TaskConfig:
    task: str = "copy"
    vocab_size: int = 13
    frames_per_token: int = 2
    frame_dim: int = 16
    frame_noise_std: float = 0.3
    train_len_range: tuple[int, int] = (2, 10)
    test_buckets: list[tuple[str, tuple[int, int]]] = field(
        default_factory=lambda: [("short", (2, 10)), ("long", (30, 60))]
    )
    n_train: int = 2000
    n_test: int = 50
    segment_len: int = 3
    seed: int = 0

    def __post_init__(self):
        self.train_len_range = tuple(self.train_len_range)
        self.test_buckets = [(str(n), tuple(r)) for n, r in self.test_buckets]
        self.validate()

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.vocab_size - N_SPECIAL < 3:
            raise ValueError("need at least 3 content tokens")
        if self.frames_per_token < 1 or self.frame_dim < 1:
            raise ValueError("frames_per_token and frame_dim must be positive")
        if self.frame_noise_std < 0:
            raise ValueError("frame_noise_std must be nonnegative")
        lo_min = 3 if self.task == "repeated_segment" else 1
        ranges = [("train", self.train_len_range)] + list(self.test_buckets)
        for name, (lo, hi) in ranges:
            if lo > hi:
                raise ValueError(f"{name}: length range min {lo} > max {hi}")
            if lo < lo_min:
                raise ValueError(f"{name}: {self.task} needs lengths >= {lo_min}")
        spans = sorted(r for _, r in self.test_buckets)
        for (_, hi), (lo, _) in zip(spans, spans[1:]):
            if lo <= hi:
                raise ValueError("test buckets must not overlap")
        names = [n for n, _ in self.test_buckets]
        if len(set(names)) != len(names) or "train" in names:
            raise ValueError("bucket names must be unique and not 'train'")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train_len_range"] = list(self.train_len_range)
        d["test_buckets"] = [[n, list(r)] for n, r in self.test_buckets]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TaskConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown task config keys: {sorted(unknown)}")
        return cls(**d)

    def bucket_of(self, length: int) -> str | None:
        for name, (lo, hi) in self.test_buckets:
            if lo <= length <= hi:
                return name
        return None


@dataclass
class Utterance:
    utt_id: str
    frames: np.ndarray   # [n_frames, frame_dim] float32
    tokens: np.ndarray   # reference ids, no EOS
    split: str = "train"
    bucket: str | None = None

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class Dataset:
    task: TaskConfig
    utterances: list[Utterance]

    def split(self, name: str) -> list[Utterance]:
        return [u for u in self.utterances if u.split == name]

    @property
    def train(self) -> list[Utterance]:
        return self.split("train")

    @property
    def test(self) -> list[Utterance]:
        return self.split("test")

    def __iter__(self):
        return iter(self.utterances)

    def __len__(self) -> int:
        return len(self.utterances)


def _prototypes(cfg: TaskConfig) -> np.ndarray:
    rng = np.random.default_rng([cfg.seed, 0])
    return rng.normal(0.0, 1.0, size=(cfg.vocab_size, cfg.frame_dim))


def _fill(slots: list[int | None], rng: np.random.Generator, content: np.ndarray) -> list[int]:
    """Fill None slots left to right so no two neighbours are equal."""
    out = list(slots)
    for i, tok in enumerate(out):
        if tok is not None:
            continue
        banned = set()
        if i > 0:
            banned.add(out[i - 1])
        if i + 1 < len(out) and out[i + 1] is not None:
            banned.add(out[i + 1])
        choices = [c for c in content if c not in banned]
        out[i] = int(choices[rng.integers(len(choices))])
    return out


def sample_copy(length: int, rng: np.random.Generator, cfg: TaskConfig) -> list[int]:
    content = np.arange(N_SPECIAL, cfg.vocab_size)
    return _fill([None] * length, rng, content)


def sample_repeated_segment(length: int, rng: np.random.Generator, cfg: TaskConfig) -> tuple[list[int], tuple[int, int, int]]:
    """Token string with one segment planted at two distinct, non-touching positions."""
    content = np.arange(N_SPECIAL, cfg.vocab_size)
    m = max(1, min(cfg.segment_len, (length - 1) // 2))
    seg = _fill([None] * m, rng, content)
    # p2 >= p1 + m + 1 leaves a gap token between the copies
    p1 = int(rng.integers(0, length - 2 * m))
    p2 = int(rng.integers(p1 + m + 1, length - m + 1))
    slots: list[int | None] = [None] * length
    slots[p1:p1 + m] = seg
    slots[p2:p2 + m] = seg
    return _fill(slots, rng, content), (p1, p2, m)


def render_frames(tokens: Sequence[int], protos: np.ndarray, cfg: TaskConfig,
                  rng: np.random.Generator) -> np.ndarray:
    base = np.repeat(protos[np.asarray(tokens, dtype=np.int64)], cfg.frames_per_token, axis=0)
    if cfg.frame_noise_std > 0:
        base = base + rng.normal(0.0, cfg.frame_noise_std, size=base.shape)
    return base.astype(np.float32)


def _generate_split(cfg: TaskConfig, protos: np.ndarray, n: int, len_range, split: str,
                    bucket: str | None, stream: int, prefix: str) -> list[Utterance]:
    rng = np.random.default_rng([cfg.seed, stream])
    out = []
    for idx in range(n):
        length = int(rng.integers(len_range[0], len_range[1] + 1))
        if cfg.task == "copy":
            toks = sample_copy(length, rng, cfg)
        else:
            toks, _ = sample_repeated_segment(length, rng, cfg)
        frames = render_frames(toks, protos, cfg, rng)
        out.append(Utterance(f"{prefix}{idx:06d}", frames, np.asarray(toks, dtype=np.int64), split,
                             bucket if bucket is not None else cfg.bucket_of(length)))
    return out


def generate_task(cfg: TaskConfig) -> Dataset:
    """Deterministic dataset for ``cfg``: a train split plus one test split per bucket."""
    cfg.validate()
    protos = _prototypes(cfg)
    utts = _generate_split(cfg, protos, cfg.n_train, cfg.train_len_range, "train", None, 1,
                           f"{cfg.task}-train-")
    for b, (name, rng_range) in enumerate(cfg.test_buckets):
        utts += _generate_split(cfg, protos, cfg.n_test, rng_range, "test", name, 100 + b,
                                f"{cfg.task}-{name}-")
    return Dataset(cfg, utts)


def merge(*datasets: Dataset) -> Dataset:
    """Concatenate datasets rendered with the same prototypes (first config kept)."""
    first = datasets[0].task
    for d in datasets[1:]:
        t = d.task
        key = (t.vocab_size, t.frame_dim, t.frames_per_token, t.seed)
        if key != (first.vocab_size, first.frame_dim, first.frames_per_token, first.seed):
            raise ValueError("datasets disagree on vocabulary, frame geometry or prototype seed")
    utts = [u for d in datasets for u in d.utterances]
    if len({u.utt_id for u in utts}) != len(utts):
        raise ValueError("utterance ids collide across merged datasets")
    return Dataset(first, utts)


# ----------------------------------------------------------------------------
# disk format


def save_dataset(ds: Dataset, root) -> Path:
    root = Path(root)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    lines = [MANIFEST_HEADER, "# task " + json.dumps(ds.task.to_dict(), sort_keys=True)]
    for u in ds.utterances:
        ids = " ".join(str(int(t)) for t in u.tokens)
        lines.append(f"{u.utt_id}\t{u.split}\t{u.bucket or '-'}\t{u.n_frames}\t{ids}")
        u.frames.astype("<f4").tofile(root / "frames" / f"{u.utt_id}.f32")
    (root / "manifest.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return root


def load_dataset(root) -> Dataset:
    root = Path(root)
    lines = (root / "manifest.tsv").read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != MANIFEST_HEADER:
        raise ValueError(f"{root}: not a dataset manifest")
    if not lines[1].startswith("# task "):
        raise ValueError(f"{root}: manifest lacks task line")
    task = TaskConfig.from_dict(json.loads(lines[1][len("# task "):]))
    utts = []
    for line in lines[2:]:
        if not line:
            continue
        utt_id, split, bucket, n_frames, ids = line.split("\t")
        frames = np.fromfile(root / "frames" / f"{utt_id}.f32", dtype="<f4")
        frames = frames.reshape(int(n_frames), task.frame_dim).astype(np.float32)
        toks = np.array([int(t) for t in ids.split()], dtype=np.int64)
        utts.append(Utterance(utt_id, frames, toks, split, None if bucket == "-" else bucket))
    return Dataset(task, utts)


# ----------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    utt_ids: list[str]
    frames: np.ndarray          # [b, n, f]
    frame_lengths: np.ndarray   # [b]
    labels: np.ndarray          # [b, u] reference + EOS, PAD padded
    label_lengths: np.ndarray   # [b], EOS included


def collate(utts: Sequence[Utterance]) -> Batch:
    b = len(utts)
    n = max(u.n_frames for u in utts)
    u_max = max(len(u.tokens) for u in utts) + 1
    f = utts[0].frames.shape[1]
    frames = np.zeros((b, n, f), dtype=np.float32)
    labels = np.full((b, u_max), PAD_ID, dtype=np.int64)
    for r, utt in enumerate(utts):
        frames[r, :utt.n_frames] = utt.frames
        labels[r, :len(utt.tokens)] = utt.tokens
        labels[r, len(utt.tokens)] = EOS_ID
    return Batch(
        [u.utt_id for u in utts],
        frames,
        np.array([u.n_frames for u in utts], dtype=np.int64),
        labels,
        np.array([len(u.tokens) + 1 for u in utts], dtype=np.int64),
    )


def make_batches(utts: Sequence[Utterance], batch_size: int, rng: np.random.Generator) -> list[Batch]:
    """Length-bucketed batches in shuffled order."""
    jitter = rng.random(len(utts))
    order = sorted(range(len(utts)), key=lambda i: (utts[i].n_frames, jitter[i]))
    chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    perm = rng.permutation(len(chunks))
    return [collate([utts[i] for i in chunks[c]]) for c in perm]


def iter_buckets(utts: Iterable[Utterance]) -> dict[str, list[Utterance]]:
    groups: dict[str, list[Utterance]] = {}
    for u in utts:
        groups.setdefault(u.bucket or "unbucketed", []).append(u)
    return groups
