"""
Binary checkpoint format.

Layout (all integers little-endian):
    magic b"A3CK" | u32 version
    u32 metadata length | metadata as UTF-8 "key=value" lines, keys sorted
    u32 tensor count
    per tensor: u16 name length | name | u8 ndim | u32 dims... | f32 data
"""
from pathlib import Path
from typing import Dict, Tuple, Union
import hashlib
import logging
import os
import struct
import tempfile

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from app.ckpt.exceptions import (
    BadMagicError,
    CheckpointError,
    ShapeMismatchError,
    TruncatedCheckpointError,
    VersionMismatchError,
)
from app.config import CheckpointConfig
from app.env.types import ObservationSpec
from app.net.architecture import ArchitectureSpec, Variant, shape_mismatches
from app.numcore.tensor import Parameter, ParameterSet, Tensor

logger = logging.getLogger(__name__)

HEADER = struct.Struct("<4sI")
U32 = struct.Struct("<I")
U16 = struct.Struct("<H")
U8 = struct.Struct("<B")


class CheckpointMetadata(BaseModel):
    """Everything besides the tensors needed to interpret and resume a checkpoint."""

    variant: Variant = Field(..., description="Architecture variant")
    screen_channels: int = Field(..., ge=1)
    minimap_channels: int = Field(..., ge=1)
    resolution: int = Field(..., ge=1)
    flat_dim: int = Field(..., ge=1)
    num_functions: int = Field(..., ge=1)
    minigame: str = Field(..., description="Minigame the parameters were trained on")
    global_step: int = Field(0, ge=0, description="Global step counter T at save time")
    episodes: int = Field(0, ge=0, description="Episodes completed at save time")
    mean_score: float = Field(0.0, description="Mean recent episode score at save time")
    rng_state: str = Field("{}", description="JSON-encoded generator state for resuming")

    @property
    def obs_spec(self) -> ObservationSpec:
        return ObservationSpec(
            screen_channels=self.screen_channels,
            minimap_channels=self.minimap_channels,
            resolution=self.resolution,
            flat_dim=self.flat_dim,
            num_functions=self.num_functions,
        )

    @property
    def arch(self) -> ArchitectureSpec:
        return ArchitectureSpec(variant=self.variant, obs_spec=self.obs_spec)

    @classmethod
    def for_run(cls, arch: ArchitectureSpec, minigame: str, **fields) -> "CheckpointMetadata":
        return cls(variant=arch.variant, minigame=minigame, **arch.obs_spec.model_dump(), **fields)

    def to_text(self) -> str:
        lines = []
        for key, value in sorted(self.model_dump().items()):
            text = repr(value) if isinstance(value, float) else str(value)
            if "\n" in text:
                raise CheckpointError(f"Metadata value for {key} spans lines")
            lines.append(f"{key}={text}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "CheckpointMetadata":
        fields: Dict[str, str] = {}
        for line in text.splitlines():
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise CheckpointError(f"Malformed metadata line: {line!r}")
            fields[key] = value
        try:
            return cls(**fields)
        except ValidationError as e:
            raise CheckpointError(f"Invalid checkpoint metadata: {e}") from e


class _Reader:
    """Sequential reader that reports running out of bytes as truncation."""

    def __init__(self, blob: bytes):
        self.blob = blob
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        end = self.offset + size
        if end > len(self.blob):
            raise TruncatedCheckpointError(
                f"Checkpoint truncated while reading {what} (need {end} bytes, have {len(self.blob)})"
            )
        chunk = self.blob[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt: struct.Struct, what: str):
        return fmt.unpack(self.take(fmt.size, what))


def encode(params: ParameterSet, metadata: CheckpointMetadata) -> bytes:
    """Serialize parameters and metadata; identical state gives identical bytes."""
    meta = metadata.to_text().encode("utf-8")
    parts = [HEADER.pack(CheckpointConfig.MAGIC, CheckpointConfig.VERSION), U32.pack(len(meta)), meta]
    parts.append(U32.pack(len(params)))
    for param in params:
        name = param.name.encode("utf-8")
        shape = param.tensor.shape
        parts.append(U16.pack(len(name)))
        parts.append(name)
        parts.append(U8.pack(len(shape)))
        parts.extend(U32.pack(dim) for dim in shape)
        parts.append(np.ascontiguousarray(param.data, dtype="<f4").tobytes())
    return b"".join(parts)


def decode(blob: bytes) -> Tuple[ParameterSet, CheckpointMetadata]:
    """
    Parse checkpoint bytes.

    Raises:
        BadMagicError, VersionMismatchError, TruncatedCheckpointError,
        ShapeMismatchError, CheckpointError
    """
    reader = _Reader(blob)
    magic, version = reader.unpack(HEADER, "header")
    if magic != CheckpointConfig.MAGIC:
        raise BadMagicError(f"Bad magic bytes {magic!r}, expected {CheckpointConfig.MAGIC!r}")
    if version != CheckpointConfig.VERSION:
        raise VersionMismatchError(f"Unsupported checkpoint version {version}, expected {CheckpointConfig.VERSION}")

    (meta_length,) = reader.unpack(U32, "metadata length")
    try:
        meta_text = reader.take(meta_length, "metadata").decode("utf-8")
    except UnicodeDecodeError as e:
        raise CheckpointError(f"Metadata is not UTF-8: {e}") from e
    metadata = CheckpointMetadata.from_text(meta_text)

    (count,) = reader.unpack(U32, "tensor count")
    params = ParameterSet()
    for index in range(count):
        (name_length,) = reader.unpack(U16, f"tensor {index} name length")
        name = reader.take(name_length, f"tensor {index} name").decode("utf-8")
        (ndim,) = reader.unpack(U8, f"{name} ndim")
        shape = tuple(reader.unpack(U32, f"{name} dims")[0] for _ in range(ndim))
        if ndim == 0 or 0 in shape:
            raise ShapeMismatchError(f"{name}: invalid shape {shape}")
        size = int(np.prod(shape))
        raw = reader.take(4 * size, f"{name} data")
        data = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
        params.add(Parameter(name, Tensor(data)))

    if reader.offset != len(blob):
        raise CheckpointError(f"{len(blob) - reader.offset} trailing bytes after the last tensor")

    problems = shape_mismatches(metadata.arch, params.shapes())
    if problems:
        raise ShapeMismatchError(f"Checkpoint tensors do not match {metadata.variant}: {problems[0]}")
    return params, metadata


def save(params: ParameterSet, metadata: CheckpointMetadata, path: Union[str, Path]) -> Path:
    """
    Write a checkpoint atomically (temporary file in the same directory, then rename).

    Raises:
        OSError: If the file cannot be written
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = encode(params, metadata)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(blob)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    logger.info(f"Checkpoint written: {path} (T={metadata.global_step}, mean score {metadata.mean_score:.3f})")
    return path


def load(path: Union[str, Path]) -> Tuple[ParameterSet, CheckpointMetadata]:
    """
    Read and validate a checkpoint.

    Raises:
        FileNotFoundError: If the file does not exist
        CheckpointError: For any malformed content (see decode)
    """
    blob = Path(path).read_bytes()
    params, metadata = decode(blob)
    logger.info(f"Checkpoint loaded: {path} ({metadata.variant}, {metadata.minigame}, T={metadata.global_step})")
    return params, metadata


def file_digest(path: Union[str, Path]) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
