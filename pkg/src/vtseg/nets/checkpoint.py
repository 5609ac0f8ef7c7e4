"""Checkpoint container.

A checkpoint is a zip archive (stored, fixed timestamps, sorted entries)
holding:

- ``config.json``: the NetConfig, the layer table, frozen parameter
  names, Adam step count and free-form provenance (seeds, digests)
- ``params/<name>.npy``: one array per parameter
- ``adam_m/<name>.npy`` and ``adam_v/<name>.npy``: optimizer moments

Identical states produce byte-identical files.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

from .state import NetConfig, NetState

FORMAT = "vtseg-checkpoint"
VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _npy_bytes(a: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, np.ascontiguousarray(a), allow_pickle=False)
    return buf.getvalue()


def _put(zf: zipfile.ZipFile, name: str, data: bytes):
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def save_checkpoint(state: NetState, path, provenance: dict | None = None) -> Path:
    path = Path(path)
    meta = {
        "format": FORMAT,
        "version": VERSION,
        "config": state.config.to_dict(),
        "layers": [[name, list(names)] for name, names in state.layers],
        "frozen": sorted(state.frozen),
        "step": state.step,
        "provenance": provenance or {},
    }
    with zipfile.ZipFile(path, "w") as zf:
        _put(zf, "config.json", json.dumps(meta, sort_keys=True, indent=1).encode())
        for group, arrays in (("params", state.params), ("adam_m", state.adam_m),
                              ("adam_v", state.adam_v)):
            for name in sorted(arrays):
                _put(zf, f"{group}/{name}.npy", _npy_bytes(arrays[name]))
    return path


def load_checkpoint(path) -> tuple[NetState, dict]:
    """Return ``(state, provenance)``."""
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("config.json"))
        if meta.get("format") != FORMAT:
            raise ValueError(f"{path}: not a checkpoint")
        groups: dict[str, dict[str, np.ndarray]] = {"params": {}, "adam_m": {}, "adam_v": {}}
        for name in zf.namelist():
            group, _, rest = name.partition("/")
            if group in groups and rest.endswith(".npy"):
                groups[group][rest[:-4]] = np.load(io.BytesIO(zf.read(name)), allow_pickle=False)
    cfg = meta["config"]
    for key in ("input_dims", "channel_widths"):
        cfg[key] = tuple(cfg[key])
    config = NetConfig.from_dict(cfg)
    layers = [(name, tuple(names)) for name, names in meta["layers"]]
    # restore the definition order of parameters
    order = [n for _, names in layers for n in names]
    params = {n: groups["params"][n] for n in order}
    state = NetState(config, params, layers, set(meta["frozen"]), groups["adam_m"],
                     groups["adam_v"], int(meta["step"]))
    return state, meta["provenance"]
