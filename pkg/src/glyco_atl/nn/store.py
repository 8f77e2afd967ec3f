"""Versioned weight container with bit-exact round-trips.

A checkpoint is an uncompressed .npz holding the float64 parameter and
running-stat arrays under their qualified names, plus a "__meta__" JSON
string: {"format_version", "layers": [{name, shape}, ...]} merged with any
caller metadata. NPZ members are written in sorted-key order with fixed
zip timestamps, so identical state produces identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict | None = None):
    meta = dict(meta or {})
    meta["format_version"] = FORMAT_VERSION
    meta["layers"] = [{"name": name, "shape": list(arrays[name].shape)}
                      for name in sorted(arrays)]
    payload = {name: arrays[name] for name in sorted(arrays)}
    payload["__meta__"] = np.array(json.dumps(meta, sort_keys=True))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        if meta.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format: {meta.get('format_version')}")
        arrays = {name: data[name] for name in data.files if name != "__meta__"}
    return arrays, meta
