"""Binary checkpoint format.

Layout (little-endian):

    b"MFTT" | u32 version | u32 entry count
    per entry: u32 name length, UTF-8 name, u32 rank, u32 dims..., float32 data
    u32 config length, UTF-8 ``key = value`` lines
"""

from dataclasses import dataclass, field
from pathlib import Path
import struct

import numpy as np

from .config import ModelConfig, dump_config, from_pairs, parse_pairs
from .errors import CheckpointError

MAGIC = b"MFTT"
VERSION = 1


@dataclass
class Checkpoint:
    tensors: dict                         # name -> float32 array
    config: dict = field(default_factory=dict)  # flat key -> string
    version: int = VERSION

    def model_config(self):
        kinds = {f: type(getattr(ModelConfig(), f)) for f in ModelConfig.__dataclass_fields__}
        kw = {}
        for key, value in self.config.items():
            if key.startswith("model."):
                name = key[len("model."):]
                if name in kinds:
                    kw[name] = kinds[name](value)
        return ModelConfig(**kw)


def from_model(model, train_cfg=None):
    if train_cfg is not None:
        config = {k: v for k, v in parse_pairs(dump_config(train_cfg)).items()}
    else:
        config = {f"model.{k}": str(getattr(model.cfg, k)) for k in ModelConfig.__dataclass_fields__}
    tensors = {name: p.data.astype(np.float32) for name, p in model.named_parameters()}
    return Checkpoint(tensors, config)


def _u32(n):
    return struct.pack("<I", n)


def save(ckpt, path):
    parts = [MAGIC, _u32(ckpt.version), _u32(len(ckpt.tensors))]
    for name, arr in ckpt.tensors.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        parts += [_u32(len(raw)), raw, _u32(arr.ndim)]
        parts += [_u32(d) for d in arr.shape]
        parts.append(arr.tobytes())
    cfg = "".join(f"{k} = {v}\n" for k, v in ckpt.config.items()).encode("utf-8")
    parts += [_u32(len(cfg)), cfg]
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


def save_model(model, path, train_cfg=None):
    save(from_model(model, train_cfg), path)


class _Reader:
    def __init__(self, buf, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]


def load(path):
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    tensors = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        if name in tensors:
            raise CheckpointError(f"{path}: duplicate entry {name!r}")
        shape = tuple(r.u32() for _ in range(r.u32()))
        count = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape).copy()
    config = parse_pairs(r.take(r.u32()).decode("utf-8"))
    if r.pos != len(r.buf):
        raise CheckpointError(f"{path}: trailing bytes after config block")
    return Checkpoint(tensors, config, version)


def load_into(model, ckpt):
    """Copy checkpoint tensors into ``model``; names and shapes must match exactly."""
    from .model import check_config
    check_config(model, ckpt.config)
    params = dict(model.named_parameters())
    missing = set(params) - set(ckpt.tensors)
    extra = set(ckpt.tensors) - set(params)
    if missing or extra:
        raise CheckpointError(f"parameter mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
    for name, p in params.items():
        arr = ckpt.tensors[name]
        if arr.shape != p.data.shape:
            raise CheckpointError(f"{name}: shape {arr.shape} != model {p.data.shape}")
        p.data = arr.astype(p.data.dtype)
    return model


def load_model(path):
    from .model import FieldModel
    ckpt = load(path)
    return load_into(FieldModel(ckpt.model_config()), ckpt), ckpt


def train_config(ckpt):
    """TrainConfig recorded in a checkpoint (when one was saved with it)."""
    return from_pairs(ckpt.config)
