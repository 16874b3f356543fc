"""Binary checkpoint container.

Layout: magic "USHP", format version u32, tensor count u32, then per
tensor: name length u32 + UTF-8 name, dtype tag u8, rank u8, dims u32 each,
raw little-endian data; a CRC32 of everything preceding closes the file.
Model checkpoints embed their build description as a uint8 JSON tensor so
evaluation and pruning can reconstruct the graph without a config file.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .grid import ArchConfig
from .supervision import UNetSharp

MAGIC = b"USHP"
VERSION = 1
META_KEY = "__meta__/model"

_DTYPE_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.uint8): 2}
_TAG_DTYPES = {v: k for k, v in _DTYPE_TAGS.items()}


def save_arrays(path, arrays: dict[str, np.ndarray]) -> Path:
    """Write named arrays; round-trips bitwise."""
    path = Path(path)
    chunks = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in _DTYPE_TAGS:
            raise CheckpointError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BB", _DTYPE_TAGS[arr.dtype], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
        chunks.append(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    body = b"".join(chunks)
    with path.open("wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))
    return path


def load_arrays(path) -> dict[str, np.ndarray]:
    """Read named arrays, validating magic and trailing CRC32."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    body, crc_stored = blob[:-4], struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(body) & 0xFFFFFFFF != crc_stored:
        raise CheckpointError(f"{path} failed CRC validation; file is corrupt")
    version, count = struct.unpack_from("<II", body, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    offset = 12
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", body, offset)
        offset += 4
        name = body[offset : offset + name_len].decode("utf-8")
        offset += name_len
        tag, rank = struct.unpack_from("<BB", body, offset)
        offset += 2
        if tag not in _TAG_DTYPES:
            raise CheckpointError(f"tensor {name!r} has unknown dtype tag {tag}")
        dims = struct.unpack_from(f"<{rank}I", body, offset) if rank else ()
        offset += 4 * rank
        dtype = _TAG_DTYPES[tag].newbyteorder("<")
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize if rank else dtype.itemsize
        data = np.frombuffer(body, dtype=dtype, count=max(int(np.prod(dims)) if rank else 1, 0), offset=offset)
        offset += nbytes
        arrays[name] = data.reshape(dims).astype(_TAG_DTYPES[tag], copy=True)
    if offset != len(body):
        raise CheckpointError(f"{path} has {len(body) - offset} trailing bytes")
    return arrays


# ---------------------------------------------------------------------------
# model checkpoints
# ---------------------------------------------------------------------------

def _model_meta(model: UNetSharp, extra: dict | None) -> dict:
    cfg = model.config
    meta = {
        "arch": {
            "depth": cfg.depth,
            "channels": list(cfg.channels),
            "convs_per_node": cfg.convs_per_node,
            "upsample_mode": cfg.upsample_mode,
            "input_channels": cfg.input_channels,
            "input_size": cfg.input_size,
            "fullscale_channels": cfg.fullscale_channels,
        },
        "cgm": model.cgm,
        "families": list(model.families),
        "prune_level": _prune_level(model),
    }
    if extra:
        meta["run"] = extra
    return meta


def _prune_level(model: UNetSharp) -> int | None:
    full = model.config.depth * (model.config.depth + 1) // 2
    if len(model.graph.nodes) == full:
        return None
    return max(sum(spec.node) for spec in model.graph.nodes)


def save_model(path, model: UNetSharp, meta: dict | None = None) -> Path:
    arrays = dict(model.params.to_arrays())
    blob = json.dumps(_model_meta(model, meta)).encode("utf-8")
    arrays[META_KEY] = np.frombuffer(blob, dtype=np.uint8).copy()
    return save_arrays(path, arrays)


def load_model(path) -> tuple[UNetSharp, dict]:
    """Rebuild the model a checkpoint describes and load its weights."""
    arrays = load_arrays(path)
    if META_KEY not in arrays:
        raise CheckpointError(f"{path} has no embedded model description")
    meta = json.loads(arrays.pop(META_KEY).tobytes().decode("utf-8"))
    cfg = ArchConfig(**meta["arch"])
    model = UNetSharp(cfg, cgm=meta["cgm"], families=tuple(meta["families"]), seed=0)
    level = meta.get("prune_level")
    if level is not None:
        from .pruning import prune

        model = prune(model, level)
    model.params.load_arrays(arrays)
    extra_names = set(arrays) - set(model.params.names())
    if extra_names:
        raise CheckpointError(f"checkpoint carries unknown tensors: {sorted(extra_names)[:5]}")
    return model, meta
