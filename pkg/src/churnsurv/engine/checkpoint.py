"""Parameter checkpoint files.

Layout (all integers little-endian)::

    b"CHURNSURV-CKPT\\n"          magic
    uint32 version               currently 1
    uint64 header_length
    header_length bytes          UTF-8 JSON, sorted keys:
                                   {"arrays": [{"name", "shape", "offset", "nbytes"}],
                                    "metadata": {...}}
    payload                      float64 little-endian arrays, concatenated in header order

Arrays are written in sorted name order and the JSON is canonical, so
identical content produces identical bytes.
"""
import json
import struct

import numpy as np

MAGIC = b"CHURNSURV-CKPT\n"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, arrays, metadata):
    names = sorted(arrays)
    entries, chunks, offset = [], [], 0
    for name in names:
        a = np.ascontiguousarray(arrays[name], dtype="<f8")
        raw = a.tobytes()
        entries.append({"name": name, "shape": list(a.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"arrays": entries, "metadata": metadata},
                        sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        for raw in chunks:
            fh.write(raw)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    pos = len(MAGIC)
    version, hlen = struct.unpack_from("<IQ", blob, pos)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos += struct.calcsize("<IQ")
    header = json.loads(blob[pos:pos + hlen])
    base = pos + hlen
    arrays = {}
    for e in header["arrays"]:
        start = base + e["offset"]
        a = np.frombuffer(blob, dtype="<f8", count=e["nbytes"] // 8, offset=start)
        arrays[e["name"]] = a.reshape(e["shape"]).astype(np.float64)
    return arrays, header["metadata"]
