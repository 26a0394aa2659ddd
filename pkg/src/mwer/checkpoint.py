"""Versioned binary checkpoints: magic, format version, architecture block,
vocabulary listing, then one (name, shape, little-endian float64 payload)
record per parameter. Round-trips are bit-exact."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .model import ModelConfig, ModelParams, Vocabulary

MAGIC = b"MWERCKPT"
FORMAT_VERSION = 1


def _pack_bytes(payload: bytes) -> bytes:
    return struct.pack("<I", len(payload)) + payload


def _pack_str(text: str) -> bytes:
    return _pack_bytes(text.encode("utf-8"))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.blob):
            raise IOError("truncated checkpoint")
        out = self.blob[self.pos : self.pos + count]
        self.pos += count
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def chunk(self) -> bytes:
        return self.take(self.u32())

    def text(self) -> str:
        return self.chunk().decode("utf-8")


def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    config_json = json.dumps(asdict(params.config), sort_keys=True)
    parts.append(_pack_str(config_json))
    vocab = params.vocab
    parts.append(struct.pack("<I", len(vocab)))
    for label in vocab.labels:
        parts.append(_pack_str(label))
    parts.append(struct.pack("<III", vocab.sos, vocab.eos, vocab.sep))
    parts.append(struct.pack("<I", len(params.tensors)))
    for name, tensor in params.items():
        parts.append(_pack_str(name))
        parts.append(struct.pack("<I", tensor.ndim))
        parts.append(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        parts.append(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path: str | Path) -> ModelParams:
    reader = _Reader(Path(path).read_bytes())
    if reader.take(len(MAGIC)) != MAGIC:
        raise IOError(f"{path} is not a checkpoint (bad magic)")
    version = reader.u32()
    if version != FORMAT_VERSION:
        raise IOError(f"unsupported checkpoint format version {version}")
    config = ModelConfig(**json.loads(reader.text()))
    labels = tuple(reader.text() for _ in range(reader.u32()))
    reader.take(12)  # reserved-symbol indices, implied by the labels
    vocab = Vocabulary(labels=labels)
    tensors: dict[str, Tensor] = {}
    for _ in range(reader.u32()):
        name = reader.text()
        ndim = reader.u32()
        shape = struct.unpack(f"<{ndim}I", reader.take(4 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(reader.take(8 * size), dtype="<f8").reshape(shape)
        tensors[name] = Tensor(data.astype(np.float64), requires_grad=True)
    return ModelParams(config, vocab, tensors)
