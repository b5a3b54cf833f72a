"""Checkpoints: a text manifest plus one little-endian float32 blob."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..model import ModelConfig, TransformerModel

HEADER = "tinytransducer-checkpoint v1"
MANIFEST = "model.manifest"
BLOB = "model.bin"


def save_checkpoint(model: TransformerModel, directory) -> Path:
    """Write ``model.manifest`` and ``model.bin`` under ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [HEADER, "config\t" + json.dumps(model.cfg.to_dict(), sort_keys=True)]
    offset = 0
    chunks = []
    for name, p in model.named_parameters():
        raw = np.ascontiguousarray(p.data, dtype="<f4").tobytes()
        shape = ",".join(str(s) for s in p.shape)
        lines.append(f"tensor\t{name}\t{shape}\tfloat32\t{offset}\t{len(raw)}")
        chunks.append(raw)
        offset += len(raw)
    (directory / BLOB).write_bytes(b"".join(chunks))
    (directory / MANIFEST).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return directory


def load_checkpoint(directory) -> TransformerModel:
    directory = Path(directory)
    lines = (directory / MANIFEST).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != HEADER:
        raise ValueError(f"{directory}: unsupported checkpoint header {lines[:1]}")
    kind, _, cfg_json = lines[1].partition("\t")
    if kind != "config":
        raise ValueError(f"{directory}: manifest lacks config line")
    model = TransformerModel(ModelConfig.from_dict(json.loads(cfg_json)))
    params = dict(model.named_parameters())
    blob = (directory / BLOB).read_bytes()
    seen = set()
    for line in lines[2:]:
        if not line:
            continue
        kind, name, shape, dtype, offset, nbytes = line.split("\t")
        if kind != "tensor" or dtype != "float32":
            raise ValueError(f"{directory}: bad manifest line {line!r}")
        if name not in params:
            raise KeyError(f"{directory}: unknown tensor {name!r}")
        shape_t = tuple(int(s) for s in shape.split(",")) if shape else ()
        p = params[name]
        if shape_t != p.shape:
            raise ValueError(f"{name}: checkpoint shape {shape_t} != model shape {p.shape}")
        start, n = int(offset), int(nbytes)
        p.data = np.frombuffer(blob[start:start + n], dtype="<f4").reshape(shape_t).astype(np.float32)
        seen.add(name)
    missing = set(params) - seen
    if missing:
        raise KeyError(f"{directory}: checkpoint lacks {sorted(missing)}")
    return model
