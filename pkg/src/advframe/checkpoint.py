"""Binary parameter checkpoints.

Layout (all integers little-endian)::

    b"ADVFCKPT"  uint32 version  uint64 header_len  header (UTF-8 JSON)
    per array:   uint32 name_len  name  uint64 count  count x float64

The header lists array names and shapes, the label-space hash and a free-form
``meta`` mapping.  Output bytes depend only on the inputs.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

MAGIC = b"ADVFCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps_checkpoint(params: dict[str, np.ndarray], label_hash: str, meta: dict[str, Any] | None = None) -> bytes:
    names = sorted(params)
    header = {
        "arrays": [{"name": n, "shape": list(params[n].shape)} for n in names],
        "label_space_hash": label_hash,
        "meta": meta or {},
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<IQ", VERSION, len(hbytes)), hbytes]
    for n in names:
        arr = np.ascontiguousarray(params[n], dtype="<f8")
        nb = n.encode("utf-8")
        parts += [struct.pack("<I", len(nb)), nb, struct.pack("<Q", arr.size), arr.tobytes()]
    return b"".join(parts)


def loads_checkpoint(data: bytes, expected_hash: str | None = None) -> tuple[dict[str, np.ndarray], dict]:
    try:
        return _parse(data, expected_hash)
    except CheckpointError:
        raise
    except (struct.error, UnicodeDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from exc


def _parse(data: bytes, expected_hash: str | None) -> tuple[dict[str, np.ndarray], dict]:
    if data[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file")
    version, hlen = struct.unpack_from("<IQ", data, 8)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 20
    header = json.loads(data[pos:pos + hlen].decode("utf-8"))
    pos += hlen
    if expected_hash is not None and header["label_space_hash"] != expected_hash:
        raise CheckpointError("checkpoint label space does not match the lexicon "
                              f"({header['label_space_hash'][:12]} != {expected_hash[:12]})")
    params = {}
    for entry in header["arrays"]:
        (nlen,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (count,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        if name != entry["name"] or count != int(np.prod(entry["shape"], dtype=np.int64)):
            raise CheckpointError(f"array record {name!r} disagrees with header")
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).astype(np.float64)
        pos += 8 * count
        params[name] = arr.reshape(entry["shape"])
    if pos != len(data):
        raise CheckpointError("trailing bytes after last array")
    return params, header


def save_checkpoint(path: str | Path, params, label_hash: str, meta=None) -> bytes:
    data = dumps_checkpoint(params, label_hash, meta)
    Path(path).write_bytes(data)
    return data


def load_checkpoint(path: str | Path, expected_hash: str | None = None):
    return loads_checkpoint(Path(path).read_bytes(), expected_hash)
