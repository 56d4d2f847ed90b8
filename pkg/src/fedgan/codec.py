"""Flatten a (generator, discriminator) pair into one parameter list and back.

This flat float64 vector is the only payload that crosses the client/server
boundary. Layout: generator tensors W0, b0, W1, b1, ... followed by the
discriminator tensors in the same order. Checkpoints store the same vector.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CodecError
from .tinygan import MLPParams, ModelPair

CHECKPOINT_MAGIC = b"FGANCKPT"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<8sIqI")  # magic, version, round index, descriptor length


@dataclass(frozen=True)
class ParamsCodec:
    gen_shapes: tuple[tuple[int, ...], ...]
    disc_shapes: tuple[tuple[int, ...], ...]
    gen_slope: float = 0.2
    disc_slope: float = 0.2

    @property
    def gen_layer_count(self) -> int:
        return len(self.gen_shapes) // 2

    @property
    def disc_layer_count(self) -> int:
        return len(self.disc_shapes) // 2

    @property
    def gen_size(self) -> int:
        return sum(int(np.prod(s)) for s in self.gen_shapes)

    @property
    def size(self) -> int:
        return self.gen_size + sum(int(np.prod(s)) for s in self.disc_shapes)

    @classmethod
    def for_model(cls, model: ModelPair) -> "ParamsCodec":
        return cls(tuple(t.shape for t in model.generator.tensors()),
                   tuple(t.shape for t in model.discriminator.tensors()),
                   model.generator.slope, model.discriminator.slope)

    def describe(self) -> dict:
        return {"gen_shapes": [list(s) for s in self.gen_shapes],
                "disc_shapes": [list(s) for s in self.disc_shapes],
                "gen_slope": self.gen_slope, "disc_slope": self.disc_slope}

    @classmethod
    def from_description(cls, d: dict) -> "ParamsCodec":
        return cls(tuple(tuple(s) for s in d["gen_shapes"]), tuple(tuple(s) for s in d["disc_shapes"]),
                   float(d["gen_slope"]), float(d["disc_slope"]))


def concat_params(g: MLPParams, d: MLPParams, codec: ParamsCodec) -> np.ndarray:
    tensors = g.tensors() + d.tensors()
    shapes = codec.gen_shapes + codec.disc_shapes
    if len(tensors) != len(shapes) or any(t.shape != s for t, s in zip(tensors, shapes)):
        raise CodecError("model shapes do not match the codec")
    return np.concatenate([t.ravel() for t in tensors]).astype(np.float64, copy=False)


def split_params(flat, codec: ParamsCodec) -> tuple[MLPParams, MLPParams]:
    flat = np.asarray(flat, dtype=np.float64)
    if flat.ndim != 1 or flat.size != codec.size:
        raise CodecError(f"flat vector has {flat.size} entries, codec expects {codec.size}")
    tensors, pos = [], 0
    for shape in codec.gen_shapes + codec.disc_shapes:
        n = int(np.prod(shape))
        tensors.append(flat[pos:pos + n].reshape(shape).copy())
        pos += n
    k = len(codec.gen_shapes)
    return (MLPParams.from_tensors(tensors[:k], codec.gen_slope),
            MLPParams.from_tensors(tensors[k:], codec.disc_slope))


def model_to_flat(model: ModelPair, codec: ParamsCodec | None = None) -> np.ndarray:
    return concat_params(model.generator, model.discriminator, codec or ParamsCodec.for_model(model))


def flat_to_model(flat, codec: ParamsCodec) -> ModelPair:
    return ModelPair(*split_params(flat, codec))


def save_checkpoint(path, flat, codec: ParamsCodec, round_index: int) -> None:
    """Versioned binary checkpoint; all numbers little-endian, floats as float64."""
    flat = np.asarray(flat, dtype="<f8")
    if flat.size != codec.size:
        raise CodecError("checkpoint vector does not match codec")
    desc = json.dumps(codec.describe(), sort_keys=True).encode()
    with Path(path).open("wb") as fh:
        fh.write(_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, round_index, len(desc)))
        fh.write(desc)
        fh.write(struct.pack("<Q", flat.size))
        fh.write(flat.tobytes())


def load_checkpoint(path) -> tuple[np.ndarray, ParamsCodec, int]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise CodecError("checkpoint is truncated")
    magic, version, round_index, desc_len = _HEADER.unpack_from(raw, 0)
    if magic != CHECKPOINT_MAGIC:
        raise CodecError("not a fedgan checkpoint")
    if version != CHECKPOINT_VERSION:
        raise CodecError(f"unsupported checkpoint version {version}")
    pos = _HEADER.size
    codec = ParamsCodec.from_description(json.loads(raw[pos:pos + desc_len]))
    pos += desc_len
    (count,) = struct.unpack_from("<Q", raw, pos)
    pos += 8
    if count != codec.size or len(raw) - pos != 8 * count:
        raise CodecError("checkpoint payload length does not match its descriptor")
    flat = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).astype(np.float64)
    return flat, codec, round_index
