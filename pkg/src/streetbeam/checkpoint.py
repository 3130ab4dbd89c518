"""Versioned binary parameter checkpoints.

Layout (all little-endian): magic b"ESNN", version u32, then a run of
named tensors until EOF: name length u16, name bytes (utf-8), rank u8,
dims u32 each, then 32-bit float payload row-major. Parameters and
normalization running statistics are stored in one flat namespace.
"""

import struct

import numpy as np

MAGIC = b"ESNN"
VERSION = 1


class CheckpointError(IOError):
    pass


def save_checkpoint(path, params, state=None):
    tensors = dict(params)
    if state:
        tensors.update({f"state.{k}": v for k, v in state.items()})
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype="<f4")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<I", d))
            fh.write(arr.tobytes())


def load_checkpoint(path):
    """Returns (params, state) dicts of float32 arrays."""
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise CheckpointError(f"{path}: bad magic, not a checkpoint")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        tensors = {}
        while True:
            head = fh.read(2)
            if not head:
                break
            (nlen,) = struct.unpack("<H", head)
            name = fh.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<B", fh.read(1))
            dims = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
            count = int(np.prod(dims)) if dims else 1
            data = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape(dims)
            tensors[name] = data.astype(np.float32)
    params = {k: v for k, v in tensors.items() if not k.startswith("state.")}
    state = {k[len("state."):]: v for k, v in tensors.items() if k.startswith("state.")}
    return params, state
