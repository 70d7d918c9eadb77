"""Multi-contrast 3D volumes: file format and synthetic phantoms.

Volume file layout: magic "RBVL", version u32, rank u32, dims u32 each,
then float32 little-endian voxels in row-major order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import DataError

MAGIC = b"RBVL"
VERSION = 1


@dataclass
class Volume4D:
    """(X, Y, Z, C) float32 voxels normalized to [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 4:
            raise DataError(f"volume must be 4-D (X, Y, Z, C), got {self.data.shape}")
        if min(self.data.shape) < 1:
            raise DataError(f"volume dims must be positive, got {self.data.shape}")
        if self.data.size and (self.data.min() < 0.0 or self.data.max() > 1.0):
            raise DataError("voxel values must lie in [0, 1]")

    @property
    def dims(self) -> tuple:
        return self.data.shape


def save_volume(vol: Volume4D, path) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", vol.data.ndim))
        for dim in vol.data.shape:
            fh.write(struct.pack("<I", dim))
        fh.write(np.ascontiguousarray(vol.data, dtype="<f4").tobytes(order="C"))


def load_volume(path) -> Volume4D:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise DataError(f"{path}: not a volume file (bad magic {blob[:4]!r})")
    version = struct.unpack_from("<I", blob, 4)[0]
    if version != VERSION:
        raise DataError(f"{path}: unsupported volume version {version}")
    rank = struct.unpack_from("<I", blob, 8)[0]
    dims = struct.unpack_from(f"<{rank}I", blob, 12)
    count = int(np.prod(dims))
    voxels = np.frombuffer(blob, dtype="<f4", count=count, offset=12 + 4 * rank)
    return Volume4D(voxels.reshape(dims).astype(np.float32))


def make_phantoms(n: int, dims: tuple = (60, 40, 40, 2), seed: int = 0) -> list[Volume4D]:
    """Random two-contrast ellipsoid phantoms.

    A body ellipsoid with anticorrelated intensities across the two
    contrasts, an inner blob with its own contrast shift, and mild noise.
    Deterministic per seed.
    """
    if len(dims) != 4 or dims[3] < 1:
        raise DataError(f"expected (X, Y, Z, C) dims, got {dims}")
    rng = np.random.default_rng(seed)
    x, y, z, c = dims
    grid = np.stack(np.meshgrid(np.arange(x), np.arange(y), np.arange(z),
                                indexing="ij"), axis=-1).astype(np.float64)
    out = []
    for _ in range(n):
        center = np.array([x, y, z]) * rng.uniform(0.42, 0.58, size=3)
        semi = np.array([x, y, z]) * rng.uniform(0.24, 0.36, size=3)
        body = np.sum(((grid - center) / semi) ** 2, axis=-1) <= 1.0
        organ_center = center + semi * rng.uniform(-0.3, 0.3, size=3)
        organ_semi = semi * rng.uniform(0.25, 0.4, size=3)
        organ = np.sum(((grid - organ_center) / organ_semi) ** 2, axis=-1) <= 1.0
        base = rng.uniform(0.45, 0.75)
        vol = np.zeros(dims, dtype=np.float64)
        contrasts = [base, 1.1 - base]  # anticorrelated "water"/"fat"
        shift = rng.uniform(0.1, 0.2)
        for ci in range(min(c, 2)):
            vol[..., ci][body] = contrasts[ci]
            vol[..., ci][organ] = contrasts[ci] + (shift if ci == 0 else -shift)
        for ci in range(2, c):
            vol[..., ci][body] = base
        vol += rng.normal(0.0, 0.02, size=dims)
        out.append(Volume4D(np.clip(vol, 0.0, 1.0).astype(np.float32)))
    return out
