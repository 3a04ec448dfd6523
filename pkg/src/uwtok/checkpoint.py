"""Checkpoint serialization: JSON manifest plus raw little-endian payloads.

Layout: 8-byte magic ``UWCKPT01``, u32 manifest length, UTF-8 JSON manifest,
then the tensors' raw bytes concatenated in manifest order. The manifest
echoes the run configuration and lists every tensor's name, shape, and dtype;
loading validates each payload against its manifest entry and, when loading
into a module, every module parameter against the stored shapes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import FormatError

MAGIC = b"UWCKPT01"

_DTYPES = {
    "float32": (np.float32, torch.float32),
    "float64": (np.float64, torch.float64),
    "int64": (np.int64, torch.int64),
    "uint8": (np.uint8, torch.uint8),
}


def _dtype_name(t: torch.Tensor) -> str:
    name = str(t.dtype).replace("torch.", "")
    if name not in _DTYPES:
        raise FormatError(f"unsupported checkpoint dtype {name}")
    return name


def save_checkpoint(path, tensors: dict, extra: dict | None = None) -> None:
    """Write named tensors plus manifest metadata to ``path``."""
    entries = []
    blobs = []
    for name, tensor in tensors.items():
        tensor = tensor.detach().cpu().contiguous()
        dtype = _dtype_name(tensor)
        entries.append({"name": name, "shape": list(tensor.shape), "dtype": dtype})
        blobs.append(tensor.numpy().astype(_DTYPES[dtype][0], copy=False).tobytes())
    manifest = {"format": "uwtok-checkpoint", "version": 1,
                "tensors": entries, "extra": extra or {}}
    payload = json.dumps(manifest, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(payload)))
        fh.write(payload)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path):
    """Read a checkpoint; returns (tensors dict, extra dict)."""
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 4 or raw[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint file (bad magic)")
    (manifest_len,) = struct.unpack_from("<I", raw, len(MAGIC))
    header_end = len(MAGIC) + 4 + manifest_len
    if len(raw) < header_end:
        raise FormatError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[len(MAGIC) + 4 : header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable manifest: {exc}") from exc
    if manifest.get("format") != "uwtok-checkpoint" or manifest.get("version") != 1:
        raise FormatError(f"{path}: unknown checkpoint format or version")
    tensors = {}
    offset = header_end
    for entry in manifest["tensors"]:
        np_dtype, torch_dtype = _DTYPES[entry["dtype"]]
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = count * np.dtype(np_dtype).itemsize
        if offset + nbytes > len(raw):
            raise FormatError(
                f"{path}: payload for {entry['name']} needs {nbytes} bytes, "
                f"only {len(raw) - offset} remain"
            )
        arr = np.frombuffer(raw, dtype=np_dtype, count=count, offset=offset)
        tensors[entry["name"]] = (
            torch.from_numpy(arr.copy()).reshape(entry["shape"]).to(torch_dtype)
        )
        offset += nbytes
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes after payloads")
    return tensors, manifest["extra"]


def module_tensors(module: torch.nn.Module, prefix: str = "") -> dict:
    return {prefix + name: tensor for name, tensor in module.state_dict().items()}


def load_into_module(module: torch.nn.Module, tensors: dict, prefix: str = "") -> None:
    """Load ``prefix``-scoped tensors into a module, validating every shape."""
    state = module.state_dict()
    selected = {}
    for name, current in state.items():
        key = prefix + name
        if key not in tensors:
            raise FormatError(f"checkpoint is missing tensor {key}")
        stored = tensors[key]
        if tuple(stored.shape) != tuple(current.shape):
            raise FormatError(
                f"checkpoint tensor {key} has shape {tuple(stored.shape)}, "
                f"module expects {tuple(current.shape)}"
            )
        selected[name] = stored.to(current.dtype)
    module.load_state_dict(selected)
