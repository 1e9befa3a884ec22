"""Binary container shared by all model checkpoints.

Layout: 8-byte magic, u32 format version, u64 JSON length, UTF-8 JSON
metadata, u32 tensor count, then parameter blobs (see ``neural.write_blobs``).
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

from .neural import read_blobs, write_blobs

FORMAT_VERSION = 1
STAN_MAGIC = b"STANCKPT"
GMM_MAGIC = b"GMMCKPT\0"
BN_MAGIC = b"BNCKPT\0\0"


class CheckpointError(ValueError):
    pass


def write_container(path, magic: bytes, metadata: dict, tensors: dict):
    if len(magic) != 8:
        raise ValueError("magic must be 8 bytes")
    meta = json.dumps(metadata, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(meta)))
        fh.write(meta)
        fh.write(struct.pack("<I", len(tensors)))
        write_blobs(fh, tensors)


def read_container(path, expect: bytes | None = None):
    """Return (magic, metadata, tensors); raises CheckpointError on any defect."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            magic = fh.read(8)
            if magic not in (STAN_MAGIC, GMM_MAGIC, BN_MAGIC):
                raise CheckpointError(f"{path}: not a checkpoint (bad magic {magic!r})")
            if expect is not None and magic != expect:
                raise CheckpointError(f"{path}: expected {expect!r} checkpoint, found {magic!r}")
            head = fh.read(12)
            if len(head) != 12:
                raise CheckpointError(f"{path}: truncated header")
            version, meta_len = struct.unpack("<IQ", head)
            if version != FORMAT_VERSION:
                raise CheckpointError(f"{path}: format version {version}, this build reads {FORMAT_VERSION}")
            raw = fh.read(meta_len)
            if len(raw) != meta_len:
                raise CheckpointError(f"{path}: truncated metadata")
            metadata = json.loads(raw)
            cnt = fh.read(4)
            if len(cnt) != 4:
                raise CheckpointError(f"{path}: truncated tensor table")
            (count,) = struct.unpack("<I", cnt)
            tensors = read_blobs(fh, count)
            if fh.read(1):
                raise CheckpointError(f"{path}: trailing bytes after tensors")
    except (EOFError, struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from None
    return magic, metadata, tensors


def peek_magic(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read(8)
