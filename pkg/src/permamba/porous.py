"""Synthetic porous media from thresholded, smoothed Gaussian noise.

A sample starts as i.i.d. standard-normal voxel noise, is smoothed by a
truncated Gaussian kernel applied separably along each axis with periodic
wrap, is rescaled to [0, 1] by its global extrema, and is labeled pore where
the rescaled value is at or below the threshold. Larger smoothing radii give
coarser pore networks; the threshold sets the porosity band.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, DegenerateFieldError, ShapeError

__all__ = [
    "PORE", "GRAIN", "SynthConfig", "VoxelGrid", "white_noise",
    "gaussian_kernel", "gaussian_smooth", "rescale_threshold", "porosity",
    "synthesize", "write_pvox", "read_pvox",
]

PORE = 0
GRAIN = 1

_MAGIC = b"PVOX1"
_HEADER = struct.Struct("<IIId")  # nx, ny, nz, dx


@dataclass(frozen=True)
class SynthConfig:
    """Generation knobs. ``sigma`` (voxels) and the truncation ``radius`` are
    independent; the defaults give pore structures near a sixth of the
    default domain edge."""
    n: int = 64
    sigma: float = 5.0
    radius: int = 17
    threshold: float = 0.45
    dx: float = 0.003

    def validate(self) -> None:
        if self.n < 2:
            raise ConfigError(f"domain edge must be at least 2 voxels, got n={self.n}")
        if self.sigma <= 0.0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")
        if not 1 <= self.radius < self.n:
            raise ConfigError(f"kernel radius must be in [1, n), got {self.radius}")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must be in (0, 1), got {self.threshold}")
        if self.dx <= 0.0:
            raise ConfigError(f"voxel size must be positive, got {self.dx}")


class VoxelGrid:
    """A cubic binary label grid plus its physical voxel size.

    ``voxels`` is uint8 with axis order (z, y, x): the x index runs fastest
    in memory, matching the on-disk layout, and x is the axis flow is driven
    along. 0 marks pore, 1 marks grain.
    """

    __slots__ = ("voxels", "dx")

    def __init__(self, voxels: np.ndarray, dx: float) -> None:
        arr = np.ascontiguousarray(voxels, dtype=np.uint8)
        if arr.ndim != 3 or len(set(arr.shape)) != 1:
            raise ShapeError(f"voxel grid must be cubic, got shape {arr.shape}")
        if not np.isin(arr, (PORE, GRAIN)).all():
            raise DataError("voxel labels must be 0 (pore) or 1 (grain)")
        if dx <= 0.0:
            raise ConfigError(f"voxel size must be positive, got {dx}")
        self.voxels = arr
        self.dx = float(dx)

    @property
    def n(self) -> int:
        return self.voxels.shape[0]

    def __eq__(self, other: object) -> bool:
        return (isinstance(other, VoxelGrid) and self.dx == other.dx
                and np.array_equal(self.voxels, other.voxels))


def white_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    """An (n, n, n) field of i.i.d. standard normal draws."""
    if n < 1:
        raise ConfigError(f"domain edge must be positive, got n={n}")
    return rng.standard_normal((n, n, n))


def gaussian_kernel(sigma: float, radius: int) -> np.ndarray:
    """Truncated normalized 1-D Gaussian, length 2*radius+1."""
    if sigma <= 0.0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    if radius < 1:
        raise ConfigError(f"radius must be at least 1, got {radius}")
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    weights = np.exp(-0.5 * (offsets / sigma) ** 2)
    return weights / weights.sum()


def gaussian_smooth(field: np.ndarray, sigma: float, radius: int) -> np.ndarray:
    """Separable truncated-Gaussian smoothing with periodic wrap on all axes."""
    field = np.asarray(field, dtype=np.float64)
    if field.ndim != 3:
        raise ShapeError(f"smoothing expects a 3-D field, got {field.shape}")
    if radius >= min(field.shape):
        raise ConfigError(
            f"radius {radius} must be smaller than the domain edge {min(field.shape)}")
    kernel = gaussian_kernel(sigma, radius)
    out = field
    for axis in range(3):
        acc = np.zeros_like(out)
        for offset, weight in zip(range(-radius, radius + 1), kernel):
            acc += weight * np.roll(out, -offset, axis=axis)
        out = acc
    return out


def rescale_threshold(field: np.ndarray, threshold: float, dx: float) -> VoxelGrid:
    """Rescale by global extrema to [0, 1]; values <= threshold become pore."""
    field = np.asarray(field, dtype=np.float64)
    lo = field.min()
    hi = field.max()
    if hi == lo:
        raise DegenerateFieldError("field is constant; nothing to threshold")
    rescaled = (field - lo) / (hi - lo)
    return VoxelGrid(np.where(rescaled <= threshold, PORE, GRAIN), dx)


def porosity(grid: VoxelGrid) -> float:
    """Pore-voxel fraction."""
    return float((grid.voxels == PORE).mean())


def synthesize(config: SynthConfig, rng: np.random.Generator) -> VoxelGrid:
    """Run the full noise -> smooth -> rescale-threshold chain."""
    config.validate()
    noise = white_noise(config.n, rng)
    smooth = gaussian_smooth(noise, config.sigma, config.radius)
    return rescale_threshold(smooth, config.threshold, config.dx)


def write_pvox(path: str | Path, grid: VoxelGrid) -> None:
    """Binary voxel file: magic 'PVOX1', three LE uint32 extents (nx, ny, nz),
    one LE float64 voxel size, then one label byte per voxel with x fastest."""
    nz, ny, nx = grid.voxels.shape
    payload = _MAGIC + _HEADER.pack(nx, ny, nz, grid.dx) + grid.voxels.tobytes()
    Path(path).write_bytes(payload)


def read_pvox(path: str | Path) -> VoxelGrid:
    raw = Path(path).read_bytes()
    head = len(_MAGIC) + _HEADER.size
    if len(raw) < head or raw[:len(_MAGIC)] != _MAGIC:
        raise DataError(f"{path} is not a PVOX1 file")
    nx, ny, nz, dx = _HEADER.unpack(raw[len(_MAGIC):head])
    expected = head + nx * ny * nz
    if len(raw) != expected:
        raise DataError(
            f"{path} holds {len(raw) - head} label bytes, expected {nx * ny * nz}")
    labels = np.frombuffer(raw[head:], dtype=np.uint8).reshape(nz, ny, nx)
    try:
        return VoxelGrid(labels, dx)
    except (DataError, ShapeError, ConfigError) as exc:
        raise DataError(f"{path}: {exc}") from exc
