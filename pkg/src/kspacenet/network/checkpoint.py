"""Single-file checkpoint container.

Layout: 8-byte magic, little-endian uint32 version, uint64 index length, a
UTF-8 JSON index, then the tensors as little-endian float32 in index order.
The index records each tensor's layer path, kind, shape and byte offset into
the payload, plus the network spec and free-form metadata.
"""

import json
import os
import struct
from collections import OrderedDict
from dataclasses import asdict

import numpy as np

from ..errors import MissingFile, SchemaError
from ..io import atomic_write_bytes
from .model import NetworkParams
from .spec import NetworkSpec

__all__ = ["save_checkpoint", "load_checkpoint", "MAGIC", "VERSION"]

MAGIC = b"KSNETCK\x00"
VERSION = 1


def serialize(net, metadata=None):
    entries = []
    chunks = []
    offset = 0
    for kind, tensors in (("param", net.params), ("buffer", net.buffers)):
        for name, arr in tensors.items():
            raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            entries.append({"path": name, "kind": kind, "shape": list(arr.shape),
                            "offset": offset, "nbytes": len(raw)})
            chunks.append(raw)
            offset += len(raw)
    index = {"spec": asdict(net.spec), "seed": int(net.seed), "dtype": "<f4",
             "tensors": entries, "metadata": metadata or {}}
    head = json.dumps(index, sort_keys=True).encode()
    return MAGIC + struct.pack("<IQ", VERSION, len(head)) + head + b"".join(chunks)


def save_checkpoint(net, path, metadata=None):
    atomic_write_bytes(path, serialize(net, metadata))


def load_checkpoint(path, dtype=np.float32):
    """Read a checkpoint; returns ``(NetworkParams, metadata)``."""
    if not os.path.exists(path):
        raise MissingFile(f"checkpoint {path} not found")
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise SchemaError(f"{path} is not a checkpoint (bad magic)")
    version, hlen = struct.unpack("<IQ", blob[8:20])
    if version != VERSION:
        raise SchemaError(f"unsupported checkpoint version {version}")
    try:
        index = json.loads(blob[20:20 + hlen].decode())
        spec = NetworkSpec(**index["spec"])
    except (ValueError, TypeError, KeyError) as exc:
        raise SchemaError(f"corrupt checkpoint index: {exc}") from exc
    payload = memoryview(blob)[20 + hlen:]
    params, buffers = OrderedDict(), OrderedDict()
    for e in index["tensors"]:
        end = e["offset"] + e["nbytes"]
        if end > len(payload):
            raise SchemaError(f"tensor {e['path']} runs past the end of the file")
        arr = np.frombuffer(payload[e["offset"]:end], dtype="<f4").reshape(e["shape"]).astype(dtype)
        (params if e["kind"] == "param" else buffers)[e["path"]] = arr
    return NetworkParams(spec, params, buffers, index.get("seed", 0)), index.get("metadata", {})
