"""Deterministic checkpoint IO and parameter checksums.

Checkpoints are pickled dicts of JSON-safe metadata plus numpy arrays, which
are byte-identical across runs on one machine (unlike zip-based containers
that embed timestamps). Writes are atomic: temp file then rename.
"""

from __future__ import annotations

import hashlib
import os
import pickle
import tempfile
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import torch

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable or wrong-kind checkpoint file."""


def save_payload(path: str | Path, payload: dict) -> None:
    """Atomically write a payload dict (metadata + numpy arrays)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"format_version": FORMAT_VERSION, **payload}
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            pickle.dump(payload, fh, protocol=4)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_payload(path: str | Path) -> dict:
    try:
        with open(path, "rb") as fh:
            payload = pickle.load(fh)
    except (OSError, pickle.UnpicklingError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise CheckpointError(f"{path} is not a recognized checkpoint")
    return payload


def state_dict_to_numpy(state: Mapping[str, torch.Tensor]) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy().copy() for k, v in state.items()}


def numpy_to_state_dict(arrays: Mapping[str, np.ndarray]) -> dict[str, torch.Tensor]:
    return {k: torch.from_numpy(np.asarray(v)) for k, v in arrays.items()}


def tensor_checksum(tensors: Iterable[torch.Tensor]) -> str:
    """SHA-256 over the concatenated raw bytes of the tensors, in order."""
    h = hashlib.sha256()
    for t in tensors:
        arr = t.detach().cpu().numpy()
        h.update(str(arr.dtype).encode())
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


def module_checksum(module: torch.nn.Module) -> str:
    """Checksum over a module's parameters and buffers (state_dict order)."""
    return tensor_checksum(v for _, v in sorted(module.state_dict().items()))


def file_checksum(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()
