"""Parameter checkpoints.

Layout: 8-byte little-endian header length, UTF-8 JSON header, then every
parameter as little-endian float64 in header order.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Any, Dict, Mapping, Tuple, Union

import numpy as np

from errors import CheckpointError

FORMAT = "vsum-checkpoint/1"
_LEN = struct.Struct("<Q")
_PAYLOAD_DTYPE = np.dtype("<f8")


def save_checkpoint(path: Union[str, Path], params: Mapping[str, np.ndarray], header: Mapping[str, Any]) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    names = sorted(params)
    head = dict(header)
    head.update({
        "format": FORMAT,
        "names": names,
        "shapes": [list(params[n].shape) for n in names],
    })
    blob = json.dumps(head, sort_keys=True).encode("utf-8")
    with p.open("wb") as f:
        f.write(_LEN.pack(len(blob)))
        f.write(blob)
        for n in names:
            f.write(np.ascontiguousarray(params[n], dtype=_PAYLOAD_DTYPE).tobytes())
    return p


def load_checkpoint(path: Union[str, Path]) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    p = Path(path)
    if not p.exists():
        raise CheckpointError(f"checkpoint not found: {p}")
    raw = p.read_bytes()
    if len(raw) < _LEN.size:
        raise CheckpointError(f"{p} is too short to be a checkpoint")
    (hlen,) = _LEN.unpack_from(raw, 0)
    try:
        header = json.loads(raw[_LEN.size:_LEN.size + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{p}: unreadable header ({e})") from e
    if header.get("format") != FORMAT:
        raise CheckpointError(f"{p}: unknown checkpoint format {header.get('format')!r}")

    params: Dict[str, np.ndarray] = {}
    offset = _LEN.size + hlen
    for name, shape in zip(header["names"], header["shapes"]):
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * _PAYLOAD_DTYPE.itemsize
        if offset + nbytes > len(raw):
            raise CheckpointError(f"{p}: payload truncated at parameter {name!r}")
        params[name] = np.frombuffer(raw, dtype=_PAYLOAD_DTYPE, count=count, offset=offset).astype(np.float64).reshape(shape)
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{p}: {len(raw) - offset} trailing bytes after payload")
    return params, header


def file_sha256(path: Union[str, Path]) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
