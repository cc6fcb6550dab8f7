"""Checkpoints: JSON manifest, flat little-endian float32 parameter file, and a state file.

``<prefix>.json`` lists parameter names and shapes, the model config and its
hash, and the iteration. ``<prefix>.bin`` concatenates all parameters in
registration order. ``<prefix>.state.npz`` carries what an exact resume needs
beyond the weights: batch-norm running statistics, momentum buffers and the
training RNG states (inside the manifest).
"""
from __future__ import annotations

import io
import json
import os
import zipfile
from typing import Optional

import numpy as np

from lightunetr.model import LightUNETR, ModelConfig, build_model

_LE32 = np.dtype("<f4")
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _files(prefix: str):
    return prefix + ".json", prefix + ".bin", prefix + ".state.npz"


def save_checkpoint(prefix: str, model: LightUNETR, iteration: int = 0, optimizer=None,
                    rng_states: Optional[dict] = None, extra: Optional[dict] = None) -> None:
    manifest_path, bin_path, state_path = _files(prefix)
    os.makedirs(os.path.dirname(os.path.abspath(prefix)), exist_ok=True)
    named = list(model.named_parameters())
    manifest = {
        "format": FORMAT_VERSION,
        "iteration": int(iteration),
        "config": model.config.to_dict(),
        "config_hash": model.config.hash(),
        "parameters": [{"name": n, "shape": list(p.shape)} for n, p in named],
        "rng_states": rng_states or {},
        **(extra or {}),
    }
    with open(bin_path, "wb") as f:
        for _, p in named:
            f.write(np.ascontiguousarray(p.data, dtype=_LE32).tobytes())
    state = {f"buffer:{n}": b for n, b in model.named_buffers()}
    if optimizer is not None:
        for (n, _), buf in zip(named, optimizer.state_arrays()):
            state[f"momentum:{n}"] = buf
    _write_npz(state_path, state)
    with open(manifest_path, "w") as f:
        json.dump(manifest, f, indent=1)


def _write_npz(path: str, arrays: dict) -> None:
    """Like ``np.savez`` but with fixed entry timestamps, so equal states give equal bytes."""
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arr), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())


def read_manifest(prefix: str) -> dict:
    with open(_files(prefix)[0]) as f:
        return json.load(f)


def load_weights(prefix: str, model: LightUNETR, optimizer=None) -> dict:
    """Load parameters (and state, when present) into ``model``; returns the manifest."""
    manifest_path, bin_path, state_path = _files(prefix)
    manifest = read_manifest(prefix)
    if manifest["config_hash"] != model.config.hash():
        raise CheckpointError(f"{manifest_path}: config hash {manifest['config_hash']} does not match "
                              f"model {model.config.hash()}")
    named = list(model.named_parameters())
    listed = [(e["name"], tuple(e["shape"])) for e in manifest["parameters"]]
    if listed != [(n, tuple(p.shape)) for n, p in named]:
        raise CheckpointError(f"{manifest_path}: parameter list does not match the model")
    flat = np.fromfile(bin_path, dtype=_LE32)
    expected = sum(p.size for _, p in named)
    if flat.size != expected:
        raise CheckpointError(f"{bin_path}: expected {4 * expected} bytes, got {4 * flat.size}")
    offset = 0
    for _, p in named:
        p.data[...] = flat[offset:offset + p.size].reshape(p.shape)
        offset += p.size
    if os.path.exists(state_path):
        with np.load(state_path) as state:
            _load_buffers(model, state)
            if optimizer is not None:
                keys = [f"momentum:{n}" for n, _ in named]
                if all(k in state for k in keys):
                    optimizer.load_state_arrays([state[k] for k in keys])
    return manifest


def _load_buffers(model: LightUNETR, state) -> None:
    buffers = dict(model.named_buffers())
    for name, arr in buffers.items():
        key = f"buffer:{name}"
        if key not in state:
            raise CheckpointError(f"state file lacks buffer {name}")
        arr[...] = state[key]


def load_checkpoint(prefix: str) -> LightUNETR:
    """Rebuild a model from the manifest's config and load its weights."""
    manifest = read_manifest(prefix)
    model = build_model(ModelConfig.from_dict(manifest["config"]))
    load_weights(prefix, model)
    return model
