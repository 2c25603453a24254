"""Versioned binary container for named arrays.

Layout:

    8-byte magic  "FGLENS01"
    4-byte little-endian header length L
    L bytes of UTF-8 JSON (sorted keys): format_version, kind, model,
        config, tensors [{name, shape, dtype}], extra, payload_sha256
    concatenated raw array payloads in header order

Model parameters are stored as little-endian float32; buffers and
optimizer state keep their own dtypes, recorded per tensor. The header
carries a SHA-256 of the payload so truncation or bit corruption is
detected on load rather than surfacing as silently wrong weights.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .exceptions import IntegrityError

__all__ = ["save_arrays", "load_arrays", "MAGIC", "FORMAT_VERSION"]

MAGIC = b"FGLENS01"
FORMAT_VERSION = 1

_DTYPES = {
    "f4": "<f4", "f8": "<f8",
    "i4": "<i4", "i8": "<i8",
    "u1": "|u1",
}


def _dtype_code(arr: np.ndarray) -> str:
    kind_size = f"{arr.dtype.kind}{arr.dtype.itemsize}"
    if kind_size not in _DTYPES:
        raise IntegrityError(f"unsupported array dtype {arr.dtype} in checkpoint")
    return kind_size


def save_arrays(path, arrays: dict[str, np.ndarray], kind: str,
                model: str = "", config: dict | None = None,
                extra: dict | None = None) -> None:
    """Write arrays to a container file. Insertion order is preserved."""
    entries = []
    payload = bytearray()
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        code = _dtype_code(arr)
        payload.extend(arr.astype(_DTYPES[code], copy=False).tobytes())
        entries.append({"name": name, "shape": list(arr.shape), "dtype": code})
    header = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "model": model,
        "config": config or {},
        "tensors": entries,
        "extra": extra or {},
        "payload_sha256": hashlib.sha256(bytes(payload)).hexdigest(),
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(bytes(payload))


def load_arrays(path):
    """Read a container file; returns (arrays, header).

    Raises IntegrityError on a bad magic, malformed header, truncated
    payload, or checksum mismatch.
    """
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise IntegrityError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        raw_len = fh.read(4)
        if len(raw_len) != 4:
            raise IntegrityError(f"{path}: truncated header length")
        (hlen,) = struct.unpack("<I", raw_len)
        blob = fh.read(hlen)
        if len(blob) != hlen:
            raise IntegrityError(f"{path}: truncated header")
        try:
            header = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise IntegrityError(f"{path}: malformed header") from exc
        payload = fh.read()
    if header.get("format_version") != FORMAT_VERSION:
        raise IntegrityError(
            f"{path}: unsupported format version {header.get('format_version')!r}")
    digest = hashlib.sha256(payload).hexdigest()
    if digest != header.get("payload_sha256"):
        raise IntegrityError(f"{path}: payload checksum mismatch")
    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for entry in header["tensors"]:
        code = entry["dtype"]
        if code not in _DTYPES:
            raise IntegrityError(f"{path}: unknown tensor dtype {code!r}")
        dt = np.dtype(_DTYPES[code])
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        chunk = payload[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise IntegrityError(f"{path}: truncated payload at {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(chunk, dtype=dt).reshape(shape).copy()
        offset += nbytes
    if offset != len(payload):
        raise IntegrityError(f"{path}: {len(payload) - offset} trailing payload bytes")
    return arrays, header
