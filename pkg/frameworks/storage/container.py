# frameworks/storage/container.py
"""
RDAC binary container.

Layout (all integers little-endian)::

    b"RDAC" | u32 version | u32 section_count
    section_count x ( u16 name_len | name (utf-8) | u64 offset | u64 length | sha256[32] )
    payloads...

Offsets are absolute. Numeric payloads are raw float64; the caller keeps shapes in
a JSON ``manifest`` section.
"""
from __future__ import annotations

import hashlib
import logging
import os
import struct
import tempfile
from pathlib import Path
from typing import Mapping

import numpy as np

from models.errors import CacheError

logger = logging.getLogger(__name__)

MAGIC = b"RDAC"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<4sII")
_ENTRY_FIXED = struct.Struct("<QQ32s")
_NAME_LEN = struct.Struct("<H")


def atomic_write_bytes(path: Path, data: bytes) -> None:
    """Write through a temp file in the target directory, then rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def encode_array(array: np.ndarray) -> bytes:
    return np.ascontiguousarray(array, dtype="<f8").tobytes()


def decode_array(payload: bytes, shape: tuple[int, ...]) -> np.ndarray:
    expected = int(np.prod(shape, dtype=np.int64)) * 8
    if len(payload) != expected:
        raise CacheError(f"section holds {len(payload)} bytes, shape {shape} needs {expected}")
    return np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)


def write_container(path: Path, sections: Mapping[str, bytes]) -> None:
    names = list(sections)
    encoded = [name.encode("utf-8") for name in names]
    table_size = sum(_NAME_LEN.size + len(n) + _ENTRY_FIXED.size for n in encoded)
    offset = _HEADER.size + table_size

    table = bytearray()
    for name, raw in zip(names, encoded):
        payload = sections[name]
        table += _NAME_LEN.pack(len(raw)) + raw
        table += _ENTRY_FIXED.pack(offset, len(payload), hashlib.sha256(payload).digest())
        offset += len(payload)

    blob = bytearray(_HEADER.pack(MAGIC, FORMAT_VERSION, len(names)))
    blob += table
    for name in names:
        blob += sections[name]
    atomic_write_bytes(path, bytes(blob))
    logger.info(f"Wrote container {path} ({len(names)} sections, {len(blob)} bytes)")


def read_container(path: Path) -> dict[str, bytes]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError:
        raise CacheError(f"cache file {path} does not exist")

    if len(blob) < _HEADER.size:
        raise CacheError(f"cache file {path} is truncated")
    magic, version, count = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise CacheError(f"cache file {path} has magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise CacheError(f"cache file {path} has format version {version}, expected {FORMAT_VERSION}")

    sections: dict[str, bytes] = {}
    cursor = _HEADER.size
    try:
        for _ in range(count):
            (name_len,) = _NAME_LEN.unpack_from(blob, cursor)
            cursor += _NAME_LEN.size
            name = blob[cursor:cursor + name_len].decode("utf-8")
            cursor += name_len
            offset, length, digest = _ENTRY_FIXED.unpack_from(blob, cursor)
            cursor += _ENTRY_FIXED.size
            if offset + length > len(blob):
                raise CacheError(f"section {name!r} runs past the end of {path}")
            payload = blob[offset:offset + length]
            if hashlib.sha256(payload).digest() != digest:
                raise CacheError(f"checksum mismatch in section {name!r} of {path}")
            sections[name] = payload
    except (struct.error, UnicodeDecodeError) as e:
        raise CacheError(f"section table of {path} is corrupt: {e}")
    return sections
