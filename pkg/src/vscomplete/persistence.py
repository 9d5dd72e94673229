"""Versioned binary artifacts with integrity checks.

Byte layout (all integers little-endian)::

    offset  size  field
    0       6     magic b"VSCART"
    6       2     uint16 format version
    8       4     uint32 header length H
    12      H     UTF-8 JSON header: kind, meta, arrays[], payload_sha256
    12+H    P     payload: arrays back to back, each C-ordered '<f8' or '<i8'
    12+H+P  32    SHA-256 of bytes [0, 12+H+P)

Each ``arrays`` entry records ``name``, ``dtype``, ``shape``, ``offset`` and
``nbytes`` relative to the payload start.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import DataError, IntegrityError, KindMismatch, VersionError

MAGIC = b"VSCART"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<6sHI")
_DTYPES = {"<f8": np.float64, "<i8": np.int64}
KINDS = ("features", "model", "index")


def write_artifact(path: str | Path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    if kind not in KINDS:
        raise ValueError(f"unknown artifact kind {kind!r}")
    entries = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if np.issubdtype(arr.dtype, np.floating):
            arr = np.ascontiguousarray(arr, dtype="<f8")
            if not np.all(np.isfinite(arr)):
                raise DataError(f"array {name!r} contains non-finite values")
        elif np.issubdtype(arr.dtype, np.integer) or arr.dtype == bool:
            arr = np.ascontiguousarray(arr, dtype="<i8")
        else:
            raise DataError(f"array {name!r} has unsupported dtype {arr.dtype}")
        blob = arr.tobytes()
        entries.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)

    digest = hashlib.sha256()
    for blob in blobs:
        digest.update(blob)
    header = json.dumps(
        {"kind": kind, "meta": meta, "arrays": entries, "payload_sha256": digest.hexdigest()},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")

    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            whole = hashlib.sha256()
            for chunk in (_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)), header, *blobs):
                fh.write(chunk)
                whole.update(chunk)
            fh.write(whole.digest())
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_header(path: str | Path) -> dict:
    """Read and return the JSON header without verifying the payload."""
    with open(path, "rb") as fh:
        raw = fh.read(_PREFIX.size)
        header_len = _check_prefix(raw, path)
        header = fh.read(header_len)
    if len(header) != header_len:
        raise IntegrityError(f"{path}: truncated header")
    out = json.loads(header)
    out["version"] = FORMAT_VERSION
    return out


def _check_prefix(raw: bytes, path) -> int:
    if len(raw) < _PREFIX.size:
        raise IntegrityError(f"{path}: file too short to be an artifact")
    magic, version, header_len = _PREFIX.unpack(raw)
    if magic != MAGIC:
        raise IntegrityError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionError(version, FORMAT_VERSION)
    return header_len


def read_artifact(path: str | Path, kind: str) -> tuple[dict, dict[str, np.ndarray]]:
    """Verify and load an artifact; returns ``(meta, arrays)``."""
    data = Path(path).read_bytes()
    header_len = _check_prefix(data[: _PREFIX.size], path)
    if len(data) < _PREFIX.size + header_len + 32:
        raise IntegrityError(f"{path}: truncated file")
    view = memoryview(data)
    body, trailer = view[:-32], data[-32:]
    if hashlib.sha256(body).digest() != trailer:
        raise IntegrityError(f"{path}: checksum mismatch (file corrupt or truncated)")
    try:
        header = json.loads(bytes(view[_PREFIX.size : _PREFIX.size + header_len]))
    except json.JSONDecodeError as exc:
        raise IntegrityError(f"{path}: unreadable header") from exc
    if header.get("kind") != kind:
        raise KindMismatch(f"{path}: expected a {kind!r} artifact, found {header.get('kind')!r}")

    payload = body[_PREFIX.size + header_len :]
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise IntegrityError(f"{path}: payload hash mismatch")
    arrays = {}
    for e in header["arrays"]:
        if e["dtype"] not in _DTYPES:
            raise IntegrityError(f"{path}: unsupported dtype {e['dtype']}")
        chunk = payload[e["offset"] : e["offset"] + e["nbytes"]]
        # read-only view over the file bytes; avoids copying large feature matrices
        arrays[e["name"]] = np.frombuffer(chunk, dtype=np.dtype(e["dtype"])).reshape(e["shape"])
    return header["meta"], arrays


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
