"""Parameter checkpoints: JSON mapping names to shape + row-major values.

Written atomically (temp file then rename) so a crash never leaves a
half-written checkpoint behind.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from .autodiff import Tensor
from .errors import DataError

FORMAT_VERSION = 1


def save_params(params: dict[str, Tensor], path: str) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "params": {
            name: {"shape": list(p.shape), "values": p.values.reshape(-1).tolist()}
            for name, p in params.items()
        },
    }
    dirname = os.path.dirname(os.path.abspath(path))
    os.makedirs(dirname, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=dirname, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(doc, fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_params(path: str) -> dict[str, np.ndarray]:
    """Load a checkpoint into plain arrays keyed by parameter name."""
    if not os.path.exists(path):
        raise DataError(f"checkpoint not found: {path}")
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"checkpoint {path} is not valid JSON: {exc}") from exc
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise DataError(f"checkpoint {path}: unsupported format_version {version!r}")
    out: dict[str, np.ndarray] = {}
    for name, entry in doc["params"].items():
        shape = tuple(entry["shape"])
        values = np.asarray(entry["values"], dtype=np.float64)
        if values.size != int(np.prod(shape)):
            raise DataError(f"checkpoint {path}: {name} has {values.size} values for shape {shape}")
        out[name] = values.reshape(shape)
    return out


def restore_params(params: dict[str, Tensor], path: str) -> None:
    """Copy checkpoint values into existing parameter tensors, by name."""
    loaded = load_params(path)
    missing = set(params) - set(loaded)
    extra = set(loaded) - set(params)
    if missing or extra:
        raise DataError(
            f"checkpoint {path} does not match model: missing={sorted(missing)} extra={sorted(extra)}")
    for name, p in params.items():
        if loaded[name].shape != p.shape:
            raise DataError(
                f"checkpoint {path}: {name} shape {loaded[name].shape} != model {p.shape}")
        p.values[...] = loaded[name]
