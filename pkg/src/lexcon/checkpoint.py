"""Model checkpoint container.

Layout::

    b"LEXCKPT\\x00"            8-byte magic
    uint32 little-endian        header length in bytes
    header                      UTF-8 JSON: format version, model config,
                                tensor manifest (name, shape, dtype, offset, nbytes)
    payload                     raw little-endian float32 tensors; offsets are
                                relative to the start of the payload
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from lexcon.errors import DataError
from lexcon.model import ModelConfig, Seq2Seq

MAGIC = b"LEXCKPT\x00"
FORMAT_VERSION = 1


def save_checkpoint(path: str | Path, model: Seq2Seq, extra: dict | None = None) -> None:
    manifest = []
    blobs = []
    offset = 0
    for name, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().numpy().astype("<f4", copy=False)
        data = arr.tobytes(order="C")
        manifest.append(
            {"name": name, "shape": list(arr.shape), "dtype": "float32", "offset": offset, "nbytes": len(data)}
        )
        blobs.append(data)
        offset += len(data)
    header = json.dumps(
        {"version": FORMAT_VERSION, "config": model.cfg.to_dict(), "tensors": manifest, "extra": extra or {}},
        sort_keys=True,
    ).encode("utf-8")
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)
    tmp.replace(path)


def read_header(path: str | Path) -> tuple[dict, int]:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise DataError(f"{path}: not a checkpoint (bad magic {magic!r})")
        (n,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(n).decode("utf-8"))
    if header.get("version") != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {header.get('version')!r}")
    return header, len(MAGIC) + 4 + n


def load_checkpoint(path: str | Path) -> tuple[Seq2Seq, dict]:
    header, start = read_header(path)
    cfg = header["config"]
    model = Seq2Seq(ModelConfig(**cfg))
    raw = Path(path).read_bytes()[start:]
    state = {}
    for entry in header["tensors"]:
        if entry["dtype"] != "float32":
            raise DataError(f"{path}: unsupported dtype {entry['dtype']}")
        chunk = raw[entry["offset"] : entry["offset"] + entry["nbytes"]]
        if len(chunk) != entry["nbytes"]:
            raise DataError(f"{path}: truncated tensor {entry['name']}")
        arr = np.frombuffer(chunk, dtype="<f4").reshape(entry["shape"])
        state[entry["name"]] = torch.from_numpy(arr.copy())
    model.load_state_dict(state)
    model.eval()
    return model, header.get("extra", {})
