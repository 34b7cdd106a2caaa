"""Binary envelope shared by all summaries.

Layout::

    0   4s  magic (b"DLSK" for sketches, b"DLMD" for model artifacts)
    4   H   kind tag
    6   H   format version
    8   I   parameter block length in bytes
    12  I   CRC-32 of parameter block + payload
    16      parameter block (compact, key-sorted JSON)
    ..      payload (kind specific, little endian)
"""

from __future__ import annotations

import json
import struct
import zlib
from typing import Any

from ..errors import DomainError

HEADER = struct.Struct("<4sHHII")
SKETCH_MAGIC = b"DLSK"
FORMAT_VERSION = 1

KIND_BLOOM = 1
KIND_CMS = 2
KIND_DYADIC = 3
KIND_HLL = 4
KIND_SPACE_SAVING = 5
KIND_TDIGEST = 6
KIND_PROJECTION = 7
KIND_RESERVOIR = 8


def dump_params(params: dict[str, Any]) -> bytes:
    return json.dumps(params, sort_keys=True, separators=(",", ":")).encode("utf-8")


def pack(kind: int, params: dict[str, Any], payload: bytes, magic: bytes = SKETCH_MAGIC) -> bytes:
    block = dump_params(params)
    crc = zlib.crc32(block + payload) & 0xFFFFFFFF
    return HEADER.pack(magic, kind, FORMAT_VERSION, len(block), crc) + block + payload


def unpack(data: bytes, magic: bytes = SKETCH_MAGIC) -> tuple[int, dict[str, Any], bytes]:
    if len(data) < HEADER.size:
        raise DomainError("truncated header")
    got_magic, kind, version, plen, crc = HEADER.unpack_from(data)
    if got_magic != magic:
        raise DomainError(f"bad magic {got_magic!r}, expected {magic!r}")
    if version != FORMAT_VERSION:
        raise DomainError(f"unsupported format version {version}")
    body = data[HEADER.size:]
    if len(body) < plen:
        raise DomainError("truncated parameter block")
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise DomainError("checksum mismatch")
    params = json.loads(body[:plen].decode("utf-8"))
    return kind, params, bytes(body[plen:])


def expect_kind(kind: int, expected: int) -> None:
    if kind != expected:
        raise DomainError(f"serialized kind {kind} does not match expected kind {expected}")
