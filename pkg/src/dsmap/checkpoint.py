"""Checkpoint archives: a zip of one ``.npy`` per named array plus a JSON manifest.

Entries are stored uncompressed with a fixed timestamp and sorted names, so
the same state always serializes to the same bytes.
"""

from __future__ import annotations

import io
import json
import os
import zipfile
from pathlib import Path

import numpy as np
import torch

FORMAT = "dsmap-checkpoint/1"
_EPOCH = (1980, 1, 1, 0, 0, 0)


class CheckpointError(RuntimeError):
    pass


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def write_archive(path, manifest: dict, arrays: dict[str, np.ndarray]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = dict(manifest, format=FORMAT, arrays=sorted(arrays))
    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
        info = zipfile.ZipInfo("manifest.json", date_time=_EPOCH)
        zf.writestr(info, json.dumps(manifest, sort_keys=True, indent=1).encode())
        for name in sorted(arrays):
            info = zipfile.ZipInfo(name + ".npy", date_time=_EPOCH)
            zf.writestr(info, _npy_bytes(arrays[name]))
    os.replace(tmp, path)


def read_archive(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        zf = zipfile.ZipFile(path)
    except zipfile.BadZipFile:
        raise CheckpointError(f"{path} is not a checkpoint archive") from None
    with zf:
        try:
            manifest = json.loads(zf.read("manifest.json"))
        except KeyError:
            raise CheckpointError(f"{path} has no manifest") from None
        if manifest.get("format") != FORMAT:
            raise CheckpointError(f"{path}: unsupported format {manifest.get('format')!r}")
        arrays = {}
        for name in manifest["arrays"]:
            with zf.open(name + ".npy") as fh:
                arrays[name] = np.lib.format.read_array(io.BytesIO(fh.read()), allow_pickle=False)
    return manifest, arrays


def model_arrays(model: torch.nn.Module) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy().copy() for k, v in model.state_dict().items()}


def optimizer_arrays(opt: torch.optim.Optimizer, names: dict, prefix: str) -> dict[str, np.ndarray]:
    out = {}
    for group in opt.param_groups:
        for p in group["params"]:
            st = opt.state.get(p)
            if not st:
                continue
            for key, val in st.items():
                out[f"{prefix}.{names[p]}.{key}"] = torch.as_tensor(val).detach().cpu().numpy().copy()
    return out


def load_optimizer_arrays(opt: torch.optim.Optimizer, names: dict, prefix: str, arrays: dict):
    for group in opt.param_groups:
        for p in group["params"]:
            head = f"{prefix}.{names[p]}."
            st = {k[len(head):]: torch.from_numpy(v.copy()) for k, v in arrays.items() if k.startswith(head)}
            if st:
                opt.state[p] = st
