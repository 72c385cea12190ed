"""Single-file checkpoint container shared by all trainable components.

Layout: one line of UTF-8 JSON (format version, free-form config dict, and
a tensor index mapping name -> {dtype, shape, offset}), a newline, then the
raw tensor blobs. All blobs are little-endian float32; integer state
belongs in the config dict.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import numpy as np
import torch

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable or incompatible checkpoint file."""


def _to_f4(value) -> np.ndarray:
    if isinstance(value, torch.Tensor):
        value = value.detach().cpu().numpy()
    arr = np.asarray(value, dtype=np.float32)
    return np.ascontiguousarray(arr, dtype="<f4")


def save_checkpoint(path: str | Path, config: dict, tensors: Mapping[str, object]) -> None:
    blobs: list[bytes] = []
    index: dict[str, dict] = {}
    offset = 0
    for name, value in tensors.items():
        arr = _to_f4(value)
        raw = arr.tobytes()
        index[name] = {"dtype": "f4", "shape": list(arr.shape), "offset": offset}
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"format_version": FORMAT_VERSION, "config": config, "tensors": index}
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8") + b"\n")
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"missing checkpoint artifact: {path}")
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: unreadable header ({exc})") from exc
        if header.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(
                f"{path}: format_version {header.get('format_version')!r} unsupported "
                f"(expected {FORMAT_VERSION})"
            )
        blob = fh.read()
    tensors: dict[str, np.ndarray] = {}
    for name, meta in header["tensors"].items():
        if meta["dtype"] != "f4":
            raise CheckpointError(f"{path}: tensor {name!r} has unsupported dtype {meta['dtype']!r}")
        shape = tuple(meta["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = meta["offset"]
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=start).reshape(shape)
        tensors[name] = arr.copy()
    return header["config"], tensors
