"""Single-file binary model format.

Layout (little-endian, offsets in bytes):

    0   magic "RGBA" (4 bytes)
    4   version u32 = 1
    8   N, K, H, hidden as u32 (16 bytes)
    24  float32 arrays, tightly packed, in this order:
          base: position (N,3), rotation (N,4), scale (N,3), opacity (N,),
                color (N,3)
          for k in 0..K-1: delta position (N,3), rotation (N,4), color (N,3)
          mlp: w1 (hidden,H), b1 (hidden,), w2 (hidden,hidden), b2 (hidden,),
               w3 (K,hidden), b3 (K,)
        then bindings: triangle u32 (N,), barycentric float32 (N,3)
        then color-init visited flags, bit-packed, ceil(N/8) bytes

Values are stored as float32; loading re-expands to float64 exactly, so a
loaded model round-trips bitwise.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .binding import GaussianBindings
from .color_init import ColorInitState
from .gaussians import DeltaSet, GaussianSet
from .model import AvatarModel, MlpWeights

MAGIC = b"RGBA"
VERSION = 1


class ModelFileError(ValueError):
    pass


def save_model(model: AvatarModel, state: ColorInitState, path):
    path = Path(path)
    n = model.count
    k = model.num_blendshapes
    h = model.mlp.input_dim
    hidden = model.mlp.hidden_dim

    chunks = [MAGIC, struct.pack("<5I", VERSION, n, k, h, hidden)]

    def put(arr, dtype="<f4"):
        chunks.append(np.ascontiguousarray(arr, dtype=dtype).tobytes())

    for name in ("position", "rotation", "scale", "opacity", "color"):
        put(getattr(model.base, name))
    for d in model.deltas:
        put(d.position)
        put(d.rotation)
        put(d.color)
    for name in ("w1", "b1", "w2", "b2", "w3", "b3"):
        put(getattr(model.mlp, name))
    put(model.bindings.triangle_index, dtype="<u4")
    put(model.bindings.barycentric)
    chunks.append(np.packbits(state.visited).tobytes())

    path.write_bytes(b"".join(chunks))


def load_model(path):
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 24:
        raise ModelFileError(f"{path}: file truncated before header")
    if data[:4] != MAGIC:
        raise ModelFileError(f"{path}: bad magic {data[:4]!r}")
    version, n, k, h, hidden = struct.unpack_from("<5I", data, 4)
    if version != VERSION:
        raise ModelFileError(f"{path}: unsupported version {version}")

    offset = 24

    def take(shape, dtype="<f4"):
        nonlocal offset
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * np.dtype(dtype).itemsize
        if offset + nbytes > len(data):
            raise ModelFileError(f"{path}: file truncated at offset {offset}")
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=offset).reshape(shape)
        offset += nbytes
        return arr.astype(np.float64) if dtype == "<f4" else arr

    base = GaussianSet(
        take((n, 3)), take((n, 4)), take((n, 3)), take((n,)), take((n, 3)),
    )
    deltas = [DeltaSet(take((n, 3)), take((n, 4)), take((n, 3))) for _ in range(k)]
    mlp = MlpWeights(
        take((hidden, h)), take((hidden,)),
        take((hidden, hidden)), take((hidden,)),
        take((k, hidden)), take((k,)),
    )
    tri = take((n,), dtype="<u4").astype(np.int64)
    bary = take((n, 3))
    bits_len = (n + 7) // 8
    if offset + bits_len != len(data):
        raise ModelFileError(
            f"{path}: trailing size mismatch (expected {offset + bits_len} bytes, "
            f"file has {len(data)})")
    visited = np.unpackbits(
        np.frombuffer(data, dtype=np.uint8, count=bits_len, offset=offset)
    )[:n].astype(bool)

    model = AvatarModel(base, deltas, mlp, GaussianBindings(tri, bary))
    return model, ColorInitState(visited)
