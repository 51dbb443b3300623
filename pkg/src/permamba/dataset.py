"""Dataset generation: voxel sample files plus a JSON manifest.

The manifest is the unit of exchange between pipeline stages. Generation
fills porosity and leaves permeability null; the flow solver fills
permeability in place; training consumes the completed manifest. All
randomness derives from one master seed, so regeneration is byte-identical.
"""

from __future__ import annotations

import json
from collections.abc import Sequence
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .porous import SynthConfig, VoxelGrid, porosity, read_pvox, synthesize, write_pvox
from .rng import stream

__all__ = [
    "SPLITS", "SampleRecord", "DatasetManifest", "split_counts",
    "assign_splits", "generate_dataset", "load_manifest", "simulate_manifest",
    "encode_voxels",
]

SPLITS = ("train", "valid", "test")


@dataclass
class SampleRecord:
    id: str
    file: str
    seed: int
    porosity: float
    permeability_mD: float | None
    split: str


@dataclass
class DatasetManifest:
    """Sample records plus the generating configuration."""
    samples: list[SampleRecord]
    n: int
    dx: float
    master_seed: int
    synth: dict

    def save(self, path: str | Path) -> None:
        body = {
            "samples": [asdict(s) for s in self.samples],
            "n": self.n,
            "dx": self.dx,
            "master_seed": self.master_seed,
            "synth": self.synth,
        }
        Path(path).write_text(
            json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def split(self, name: str) -> list[SampleRecord]:
        if name not in SPLITS:
            raise ConfigError(f"unknown split {name!r}, expected one of {SPLITS}")
        return [s for s in self.samples if s.split == name]

    def load_grid(self, record: SampleRecord, root: str | Path) -> VoxelGrid:
        return read_pvox(Path(root) / record.file)


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    try:
        body = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    try:
        samples = [SampleRecord(**entry) for entry in body["samples"]]
        manifest = DatasetManifest(
            samples=samples, n=int(body["n"]), dx=float(body["dx"]),
            master_seed=int(body["master_seed"]), synth=dict(body["synth"]))
    except (KeyError, TypeError) as exc:
        raise DataError(f"manifest {path} is malformed: {exc}") from exc
    bad = [s.id for s in manifest.samples if s.split not in SPLITS]
    if bad:
        raise DataError(f"manifest {path} has samples with unknown splits: {bad}")
    return manifest


def split_counts(count: int, fractions: tuple[float, float, float]) -> tuple[int, int, int]:
    """Exact split sizes by largest remainder; the counts always sum to
    ``count`` and each fraction is honored to within one sample."""
    if count < len(SPLITS):
        raise ConfigError(f"need at least {len(SPLITS)} samples, got {count}")
    if any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-6:
        raise ConfigError(f"split fractions must be positive and sum to 1, got {fractions}")
    raw = [count * f for f in fractions]
    counts = [int(r) for r in raw]
    remainders = sorted(range(len(raw)), key=lambda i: raw[i] - counts[i], reverse=True)
    for i in range(count - sum(counts)):
        counts[remainders[i]] += 1
    return tuple(counts)


def assign_splits(count: int, fractions: tuple[float, float, float],
                  master_seed: int) -> list[str]:
    """Random disjoint split labels for ``count`` samples."""
    counts = split_counts(count, fractions)
    labels = []
    for name, c in zip(SPLITS, counts):
        labels.extend([name] * c)
    order = stream(master_seed, "split").permutation(count)
    return [labels[i] for i in order]


def generate_dataset(config: SynthConfig, count: int,
                     fractions: tuple[float, float, float],
                     out_dir: str | Path, master_seed: int) -> DatasetManifest:
    """Write ``count`` voxel files and the manifest into ``out_dir``.

    Sample i draws from the (master_seed, "synth", i) stream, so any sample
    can be regenerated in isolation.
    """
    config.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    splits = assign_splits(count, fractions, master_seed)
    samples = []
    for i in range(count):
        grid = synthesize(config, stream(master_seed, "synth", i))
        name = f"sample_{i:05d}.pvox"
        write_pvox(out / name, grid)
        samples.append(SampleRecord(
            id=f"s{i:05d}", file=name, seed=i, porosity=porosity(grid),
            permeability_mD=None, split=splits[i]))
    manifest = DatasetManifest(
        samples=samples, n=config.n, dx=config.dx, master_seed=master_seed,
        synth={"sigma": config.sigma, "radius": config.radius,
               "threshold": config.threshold})
    manifest.save(out / "manifest.json")
    return manifest


def simulate_manifest(manifest: DatasetManifest, root: str | Path,
                      fluid: "FluidSpec | None" = None,
                      on_sample=None) -> DatasetManifest:
    """Fill every sample's permeability by solving its flow field.

    Returns a new manifest with ``permeability_mD`` set on all records;
    ``on_sample(record)`` fires after each solve for progress reporting.
    """
    from .lbm import FluidSpec, measure_permeability

    fluid = fluid or FluidSpec()
    fluid.validate()
    filled = []
    for record in manifest.samples:
        grid = manifest.load_grid(record, root)
        k, _ = measure_permeability(grid, fluid)
        done = replace(record, permeability_mD=k)
        filled.append(done)
        if on_sample is not None:
            on_sample(done)
    return DatasetManifest(samples=filled, n=manifest.n, dx=manifest.dx,
                           master_seed=manifest.master_seed, synth=manifest.synth)


def encode_voxels(grids: Sequence[VoxelGrid]) -> np.ndarray:
    """Stack grids into a (B, 1, n, n, n) float64 model input.

    Pore voxels map to 1.0 and grain voxels to 0.0, so the signal marks the
    space flow passes through.
    """
    if not grids:
        raise DataError("cannot encode an empty batch")
    shapes = {g.voxels.shape for g in grids}
    if len(shapes) != 1:
        raise DataError(f"grids in a batch must share one shape, got {sorted(shapes)}")
    labels = np.stack([g.voxels for g in grids])[:, None, :, :, :]
    return 1.0 - labels.astype(np.float64)
