"""Weight stores: seeded initialization and the on-disk format.

File layout, all integers little-endian:

    magic          4 bytes  b"WMBA"
    version        u32      1
    config length  u32
    config text    canonical ModelConfig text, UTF-8
    tensor count   u32
    per tensor:
        name length    u16
        name           UTF-8
        dtype code     u8   0 = float32
        rank           u8
        dims           u64 * rank
        values         float32 * prod(dims), row-major
    crc32          u32  over every preceding byte
"""
import logging
import math
import os
import struct
import zlib
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple, Union

import numpy as np
import torch

from .config import ModelConfig
from .exceptions import (
    BadMagicException, ChecksumMismatchException, MissingTensorException,
    TensorShapeException, TruncatedFileException, UnexpectedTensorException,
    VersionMismatchException, WeightFileException
)
from .network import WaterMamba
from .rng import Rng
from .ssm import DT_MAX, DT_MIN

logger = logging.getLogger(__name__)

MAGIC = b"WMBA"
FORMAT_VERSION = 1
DTYPE_F32 = 0


@dataclass
class WeightStore:
    tensors: "OrderedDict[str, torch.Tensor]" = field(default_factory=OrderedDict)
    config: Optional[ModelConfig] = None
    version: int = FORMAT_VERSION

    def validate(self, config: ModelConfig):
        expected = expected_shapes(config)
        missing = [name for name in expected if name not in self.tensors]
        if missing:
            raise MissingTensorException(missing)
        unexpected = [name for name in self.tensors if name not in expected]
        if unexpected:
            raise UnexpectedTensorException(unexpected)
        misshaped = [
            f"{ name } { tuple(tensor.shape) } != { expected[name] }"
            for name, tensor in self.tensors.items()
            if tuple(tensor.shape) != expected[name]
        ]
        if misshaped:
            raise TensorShapeException(misshaped)

    def __eq__(self, other) -> bool:
        if not isinstance(other, WeightStore) or list(self.tensors) != list(other.tensors):
            return False
        return self.config == other.config and all(
            torch.equal(self.tensors[name], other.tensors[name]) for name in self.tensors
        )


def expected_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    return OrderedDict(
        (name, tuple(tensor.shape)) for name, tensor in WaterMamba(config).state_dict().items()
    )

def _inverse_softplus(x: np.ndarray) -> np.ndarray:
    return x + np.log(-np.expm1(-x))

def init_weights(config: ModelConfig, seed: int) -> WeightStore:
    """Seeded initialization, drawn in state-dict order from one Rng stream.

    - weights: uniform(-sqrt(6 / fan_in), +sqrt(6 / fan_in)), fan_in = numel / out
    - biases and BN running means: 0; norm scales and BN running variances: 1
    - A_log[:, n] = ln(n + 1); skip D = 1
    - dt_proj bias: softplus(bias) log-uniform in [DT_MIN, DT_MAX]
    """
    rng = Rng(seed)
    tensors = OrderedDict()
    for name, shape in expected_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        numel = math.prod(shape)
        if leaf == "A_log":
            value = np.broadcast_to(np.log(np.arange(1, shape[1] + 1, dtype=np.float64)), shape)
        elif leaf == "D" or leaf == "running_var":
            value = np.ones(shape)
        elif name.endswith("dt_proj.bias"):
            dt = np.exp(rng.uniform_range(numel, math.log(DT_MIN), math.log(DT_MAX)))
            value = _inverse_softplus(dt).reshape(shape)
        elif leaf in ("bias", "running_mean"):
            value = np.zeros(shape)
        elif len(shape) == 1:
            value = np.ones(shape)
        else:
            bound = math.sqrt(6.0 / (numel / shape[0]))
            value = rng.uniform_range(numel, -bound, bound).reshape(shape)
        tensors[name] = torch.from_numpy(np.ascontiguousarray(value, dtype=np.float32))
    return WeightStore(tensors, config)


def encode_weights(store: WeightStore) -> bytes:
    buf = bytearray(MAGIC)
    buf += struct.pack("<I", store.version)
    config_text = b"" if store.config is None else store.config.to_text().encode("utf-8")
    buf += struct.pack("<I", len(config_text)) + config_text
    buf += struct.pack("<I", len(store.tensors))
    for name, tensor in store.tensors.items():
        name_bytes = name.encode("utf-8")
        buf += struct.pack("<H", len(name_bytes)) + name_bytes
        buf += struct.pack("<BB", DTYPE_F32, tensor.dim())
        buf += struct.pack(f"<{ tensor.dim() }Q", *tensor.shape)
        buf += tensor.detach().cpu().contiguous().numpy().astype("<f4").tobytes()
    buf += struct.pack("<I", zlib.crc32(buf) & 0xFFFFFFFF)
    return bytes(buf)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise TruncatedFileException(
                f"Weight file ends at byte { len(self.data) }, needed { self.offset + n }"
            )
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    @property
    def remaining(self) -> int:
        return len(self.data) - self.offset

def _read_tensors(reader: _Reader):
    (count,) = reader.unpack("<I")
    raw = []
    for _ in range(count):
        (name_length,) = reader.unpack("<H")
        name_blob = reader.take(name_length)
        dtype, rank = reader.unpack("<BB")
        dims = reader.unpack(f"<{ rank }Q")
        values = reader.take(4 * math.prod(dims))
        raw.append((name_blob, dtype, dims, values))
    return raw

def _crc_matches(data: bytes) -> bool:
    (stored_crc,) = struct.unpack("<I", data[-4:])
    return stored_crc == zlib.crc32(data[:-4]) & 0xFFFFFFFF

def _complete_length(config_blob: bytes) -> Optional[int]:
    """ File size a whole write of the model `config_blob` describes, None if it does not parse. """
    try:
        config = ModelConfig.from_text(config_blob.decode("utf-8"))
    except (UnicodeDecodeError, ValueError):
        return None
    length = len(MAGIC) + 4 + 4 + len(config_blob) + 4
    for name, shape in expected_shapes(config).items():
        length += 2 + len(name.encode("utf-8")) + 2 + 8 * len(shape) + 4 * math.prod(shape)
    return length + 4

def decode_weights(data: bytes) -> WeightStore:
    """Parse the structure, then verify the checksum, then decode payloads.

    Names, config text and values are only interpreted after the checksum
    passes, so a flipped payload byte surfaces as a checksum error.
    """
    reader = _Reader(data)
    if reader.take(len(MAGIC)) != MAGIC:
        raise BadMagicException(f"Not a weight file: expected magic { repr(MAGIC) }, got { repr(data[:4]) }")
    (version,) = reader.unpack("<I")
    if version != FORMAT_VERSION:
        raise VersionMismatchException(f"Weight file version { version } is not supported (expected { FORMAT_VERSION })")
    config_blob = None
    try:
        (config_length,) = reader.unpack("<I")
        config_blob = reader.take(config_length)
        raw = _read_tensors(reader)
        if reader.remaining < 4:
            raise TruncatedFileException("Weight file is missing its checksum")
    except TruncatedFileException as e:
        # A corrupted count or dims field also runs off the end; a file of
        # exactly the length its config implies was written whole.
        if config_blob and _complete_length(config_blob) == len(data) and not _crc_matches(data):
            raise ChecksumMismatchException(f"Checksum mismatch in a complete { len(data) } byte file") from e
        raise

    if not _crc_matches(data):
        (stored_crc,) = struct.unpack("<I", data[-4:])
        actual_crc = zlib.crc32(data[:-4]) & 0xFFFFFFFF
        raise ChecksumMismatchException(f"Checksum mismatch: stored { stored_crc:08x}, computed { actual_crc:08x}")
    if reader.remaining > 4:
        raise WeightFileException(f"{ reader.remaining - 4 } unexpected bytes before the checksum")

    config = ModelConfig.from_text(config_blob.decode("utf-8")) if config_length > 0 else None
    tensors = OrderedDict()
    for name_blob, dtype, dims, values in raw:
        name = name_blob.decode("utf-8")
        if dtype != DTYPE_F32:
            raise WeightFileException(f"Tensor { name } has unsupported dtype code { dtype }")
        array = np.frombuffer(values, dtype="<f4").astype(np.float32).reshape(dims)
        tensors[name] = torch.from_numpy(array.copy())
    return WeightStore(tensors, config, version)


def save_weights(store: WeightStore, path: Union[str, os.PathLike]):
    with open(path, "wb") as f:
        f.write(encode_weights(store))
    logger.info(f"Wrote { len(store.tensors) } tensors to { path }")

def load_weights(path: Union[str, os.PathLike]) -> WeightStore:
    with open(path, "rb") as f:
        store = decode_weights(f.read())
    logger.info(f"Loaded { len(store.tensors) } tensors from { path }")
    return store
