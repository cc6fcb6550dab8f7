"""Volume I/O, synthetic ellipsoid datasets and labeled/unlabeled splits.

On-disk format: ``<name>.hdr`` is a small JSON header and ``<name>.raw`` the
payload of little-endian float32 values, channel-major then z, y, x.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

DTYPE_TAG = "f32le"
_LE32 = np.dtype("<f4")


class VolumeFormatError(ValueError):
    pass


@dataclass
class Volume:
    data: np.ndarray  # (C, Z, Y, X) float32
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim == 3:
            data = data[None]
        if data.ndim != 4:
            raise ValueError(f"volume data must be (C, Z, Y, X) or (Z, Y, X), got shape {data.shape}")
        self.data = data
        self.spacing = tuple(float(s) for s in self.spacing)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def extents(self) -> Tuple[int, int, int]:
        return tuple(self.data.shape[1:])


def _paths(path: str) -> Tuple[str, str]:
    base = path[:-4] if path.endswith((".hdr", ".raw")) else path
    return base + ".hdr", base + ".raw"


def save_volume(vol: Volume, path: str) -> None:
    hdr, raw = _paths(path)
    header = {"extents": list(vol.extents), "channels": vol.channels, "dtype": DTYPE_TAG,
              "spacing": list(vol.spacing)}
    with open(hdr, "w") as f:
        json.dump(header, f)
        f.write("\n")
    with open(raw, "wb") as f:
        f.write(np.ascontiguousarray(vol.data, dtype=_LE32).tobytes())


def load_volume(path: str) -> Volume:
    hdr, raw = _paths(path)
    with open(hdr) as f:
        header = json.load(f)
    if header.get("dtype") != DTYPE_TAG:
        raise VolumeFormatError(f"{hdr}: unknown dtype tag {header.get('dtype')!r} (expected {DTYPE_TAG!r})")
    extents = tuple(int(e) for e in header["extents"])
    channels = int(header.get("channels", 1))
    if len(extents) != 3 or min(extents) < 1 or channels < 1:
        raise VolumeFormatError(f"{hdr}: bad extents {extents} or channels {channels}")
    with open(raw, "rb") as f:
        payload = f.read()
    expected = 4 * channels * int(np.prod(extents))
    if len(payload) != expected:
        raise VolumeFormatError(f"{raw}: payload length mismatch, expected {expected} bytes, got {len(payload)}")
    data = np.frombuffer(payload, dtype=_LE32).reshape((channels,) + extents).astype(np.float32)
    return Volume(data, tuple(header.get("spacing", (1.0, 1.0, 1.0))))


# -- synthetic data -----------------------------------------------------------

def _grid(extents):
    return np.meshgrid(*[np.arange(n, dtype=np.float64) for n in extents], indexing="ij")


def ellipsoid_radius(extents, center, semi_axes) -> np.ndarray:
    """Normalized radius sqrt(sum(((p - c) / a)^2)) at every voxel index p."""
    zz, yy, xx = _grid(extents)
    (cz, cy, cx), (a, b, c) = center, semi_axes
    return np.sqrt(((zz - cz) / a) ** 2 + ((yy - cy) / b) ** 2 + ((xx - cx) / c) ** 2)


def ellipsoid_mask(extents, center, semi_axes) -> np.ndarray:
    return ellipsoid_radius(extents, center, semi_axes) <= 1.0


@dataclass
class SynthParams:
    background: float = 0.3
    elevation: float = 0.4
    noise: float = 0.1
    edge_softness: float = 0.15  # width of the intensity transition, in normalized radius
    axis_range: Tuple[float, float] = (0.12, 0.28)  # semi-axes as fractions of the extent
    max_objects: int = 2


def synth_sample(extents, rng: np.random.Generator, params: Optional[SynthParams] = None):
    """One (image, label) pair: 1-2 ellipsoids, smooth elevation, Gaussian noise."""
    p = params or SynthParams()
    extents = tuple(int(e) for e in extents)
    label = np.zeros(extents, dtype=bool)
    elevation = np.zeros(extents)
    for _ in range(int(rng.integers(1, p.max_objects + 1))):
        axes = np.array([rng.uniform(*p.axis_range) * n for n in extents])
        center = np.array([rng.uniform(a, n - 1 - a) for a, n in zip(axes, extents)])
        rho = ellipsoid_radius(extents, center, axes)
        label |= rho <= 1.0
        elevation = np.maximum(elevation, expit((1.0 - rho) / (p.edge_softness / 4)))
    image = p.background + p.elevation * elevation + rng.normal(0.0, p.noise, extents)
    image = np.clip(image, 0.0, 1.0)
    lo, hi = image.min(), image.max()
    image = (image - lo) / (hi - lo) if hi > lo else np.zeros_like(image)
    return image.astype(np.float32), label.astype(np.float32)


def synth_generate(count: int, extents, seed: int, params: Optional[SynthParams] = None):
    """``count`` samples, each drawn from its own child stream of ``seed``."""
    children = np.random.SeedSequence(seed).spawn(count)
    return [synth_sample(extents, np.random.default_rng(c), params) for c in children]


# -- splits and dataset directories -------------------------------------------

@dataclass
class DatasetSplit:
    labeled: List[str]
    unlabeled: List[str]
    test: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"labeled": self.labeled, "unlabeled": self.unlabeled, "test": self.test}


def split_dataset(ids: Sequence[str], labeled_count: int, seed: int, test_count: int = 0) -> DatasetSplit:
    ids = list(ids)
    train_size = len(ids) - test_count
    if test_count < 0 or train_size < 2:
        raise ValueError(f"cannot hold out {test_count} of {len(ids)} ids and still train")
    if not 1 <= labeled_count < train_size:
        raise ValueError(f"labeled_count must be in [1, {train_size - 1}], got {labeled_count}")
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    test = sorted(shuffled[:test_count])
    train = shuffled[test_count:]
    return DatasetSplit(sorted(train[:labeled_count]), sorted(train[labeled_count:]), test)


MANIFEST = "manifest.json"


def write_dataset(root: str, samples, spacing=(1.0, 1.0, 1.0), meta: Optional[dict] = None) -> List[str]:
    os.makedirs(root, exist_ok=True)
    ids = []
    for i, (image, label) in enumerate(samples):
        sid = f"case{i:04d}"
        save_volume(Volume(image, spacing), os.path.join(root, sid + "_img"))
        save_volume(Volume(label, spacing), os.path.join(root, sid + "_lbl"))
        ids.append(sid)
    with open(os.path.join(root, MANIFEST), "w") as f:
        json.dump({"ids": ids, **(meta or {})}, f, indent=1)
    return ids


def read_manifest(root: str) -> dict:
    with open(os.path.join(root, MANIFEST)) as f:
        return json.load(f)


def load_case(root: str, sid: str) -> Tuple[Volume, Volume]:
    return load_volume(os.path.join(root, sid + "_img")), load_volume(os.path.join(root, sid + "_lbl"))
