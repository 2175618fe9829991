"""Self-describing model checkpoints.

Layout: the 8-byte magic ``WSCKPT01``, a little-endian uint32 header length,
a UTF-8 JSON header, then the raw little-endian float32 parameter arrays in
header order. The header carries the format version, model kind and
config, training config echo, seed, class weight and, per parameter, its
name, shape, byte offset and byte count.
"""
import json
import os
import struct
from pathlib import Path

import numpy as np

from .models import DetectorModel, SegmenterModel

MAGIC = b"WSCKPT01"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model, seed=None, class_weight=None, train_config=None, extra=None):
    kind = "segmenter" if isinstance(model, SegmenterModel) else "detector"
    params, blobs, offset = [], [], 0
    for name, t in model.params.items():
        arr = np.ascontiguousarray(t.data, dtype="<f4")
        blob = arr.tobytes()
        params.append({"name": name, "shape": list(arr.shape), "dtype": "<f4",
                       "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "version": VERSION,
        "kind": kind,
        "model_config": model.config(),
        "train_config": train_config,
        "seed": seed,
        "class_weight": class_weight,
        "extra": extra or {},
        "params": params,
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        for b in blobs:
            fh.write(b)
    os.replace(tmp, path)


def read_checkpoint(path):
    """Return ``(header, {name: array})`` without building a model."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a woundseg checkpoint")
    (hlen,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12:12 + hlen])
    if "version" not in header:
        raise CheckpointError(f"{path}: header has no version field")
    if header["version"] > VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header['version']}")
    base = 12 + hlen
    arrays = {}
    for p in header["params"]:
        start = base + p["offset"]
        raw = data[start:start + p["nbytes"]]
        arrays[p["name"]] = np.frombuffer(raw, dtype=p["dtype"]).reshape(p["shape"]).astype(np.float32)
    return header, arrays


def load_checkpoint(path):
    """Rebuild the model stored at ``path``; returns ``(model, header)``."""
    header, arrays = read_checkpoint(path)
    cfg = header["model_config"]
    if header["kind"] == "segmenter":
        model = SegmenterModel(**cfg)
    elif header["kind"] == "detector":
        model = DetectorModel(**cfg)
    else:
        raise CheckpointError(f"{path}: unknown model kind {header['kind']!r}")
    model.load_state_dict(arrays)
    return model, header
