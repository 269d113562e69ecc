"""Binary checkpoint format.

Layout (all integers little-endian u32)::

    b"DMCK" | version | config_len | config (UTF-8 "key = value" lines)
    | n_entries | per entry: name_len | name | ndim | dims... | float32 LE payload
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from diffmatte.net.model import MattingModel, ModelConfig

MAGIC = b"DMCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


class CheckpointMagicError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointConfigError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


def format_config(items) -> str:
    return "".join(f"{k} = {v}\n" for k, v in items)


def parse_config(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointConfigError(f"malformed config line {line!r}")
        out[key.strip()] = value.strip()
    return out


def dumps(model: MattingModel) -> bytes:
    buf = io.BytesIO()
    config = format_config(model.config.to_items()).encode("utf-8")
    params = list(model.named_parameters())
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(config)))
    buf.write(config)
    buf.write(struct.pack("<I", len(params)))
    for name, value in params:
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack(f"<I{value.ndim}I", value.ndim, *value.shape))
        buf.write(np.ascontiguousarray(value, dtype="<f4").tobytes())
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointTruncatedError(f"checkpoint truncated at byte {len(self.data)} (needed {self.pos + n})")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def loads(data: bytes) -> MattingModel:
    r = _Reader(data)
    if len(data) < 4 or data[:4] != MAGIC:
        raise CheckpointMagicError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    r.take(4)
    version = r.u32()
    if version != VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version}")
    try:
        text = r.take(r.u32()).decode("utf-8")
        config = ModelConfig.from_items(parse_config(text))
    except (UnicodeDecodeError, ValueError) as exc:
        if isinstance(exc, CheckpointTruncatedError):
            raise
        raise CheckpointConfigError(f"invalid checkpoint config: {exc}") from exc
    model = MattingModel(config)
    expected = dict(model.named_parameters())
    n_entries = r.u32()
    seen = set()
    for _ in range(n_entries):
        name = r.take(r.u32()).decode("utf-8", errors="replace")
        shape = tuple(r.u32() for _ in range(r.u32()))
        count = int(np.prod(shape, dtype=np.int64))
        payload = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape)
        if name not in expected:
            raise CheckpointShapeError(f"unexpected parameter {name!r} for this config")
        if expected[name].shape != shape:
            raise CheckpointShapeError(f"parameter {name!r} has shape {shape}, config implies {expected[name].shape}")
        expected[name][...] = payload
        seen.add(name)
    missing = set(expected) - seen
    if missing:
        raise CheckpointShapeError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after last entry")
    return model


def save_checkpoint(model: MattingModel, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps(model))
    tmp.replace(path)


def load_checkpoint(path) -> MattingModel:
    return loads(Path(path).read_bytes())
