"""Synthesis chain tests: smoothing against a dense convolution oracle,
threshold semantics, file format round-trips, and split bookkeeping."""

import numpy as np
import pytest

from permamba import porous
from permamba.dataset import (assign_splits, generate_dataset, load_manifest,
                              split_counts)
from permamba.errors import (ConfigError, DataError, DegenerateFieldError)
from permamba.porous import (GRAIN, PORE, SynthConfig, VoxelGrid, gaussian_kernel,
                             gaussian_smooth, porosity, read_pvox,
                             rescale_threshold, synthesize, white_noise, write_pvox)
from permamba.rng import stream


def dense_smooth_oracle(field: np.ndarray, sigma: float, radius: int) -> np.ndarray:
    """Full 3-D periodic convolution with the separable product kernel."""
    n = field.shape[0]
    k1 = gaussian_kernel(sigma, radius)
    out = np.zeros_like(field)
    offsets = range(-radius, radius + 1)
    for z in range(n):
        for y in range(n):
            for x in range(n):
                acc = 0.0
                for a in offsets:
                    for b in offsets:
                        for c in offsets:
                            w = k1[a + radius] * k1[b + radius] * k1[c + radius]
                            acc += w * field[(z + a) % n, (y + b) % n, (x + c) % n]
                out[z, y, x] = acc
    return out


def test_white_noise_is_standard_normal_and_seeded():
    rng = stream(3, "noise")
    field = white_noise(24, rng)
    assert field.shape == (24, 24, 24)
    assert abs(field.mean()) < 0.05
    assert abs(field.std() - 1.0) < 0.05
    again = white_noise(24, stream(3, "noise"))
    np.testing.assert_array_equal(field, again)


def test_gaussian_smooth_matches_dense_oracle():
    rng = stream(4, "smooth-oracle")
    field = rng.normal(size=(12, 12, 12))
    ours = gaussian_smooth(field, sigma=1.5, radius=3)
    oracle = dense_smooth_oracle(field, sigma=1.5, radius=3)
    np.testing.assert_allclose(ours, oracle, atol=1e-12)


def test_gaussian_smooth_variance_reduction():
    # Independent noise through a normalized kernel has output variance
    # (sum of squared 1-D weights)^3; one 20^3 field gives a loose check.
    rng = stream(5, "smooth-var")
    field = rng.normal(size=(20, 20, 20))
    k = gaussian_kernel(1.0, 3)
    expect = float((k ** 2).sum() ** 3)
    got = gaussian_smooth(field, 1.0, 3).var()
    assert 0.7 * expect < got < 1.3 * expect


def test_gaussian_smooth_preserves_constants():
    field = np.full((10, 10, 10), 2.5)
    out = gaussian_smooth(field, 2.0, 5)
    np.testing.assert_allclose(out, 2.5, atol=1e-12)


def test_gaussian_smooth_wraps_periodically():
    field = np.zeros((16, 16, 16))
    field[0, 0, 0] = 1.0
    out = gaussian_smooth(field, 2.0, 4)
    # The response must be symmetric across the periodic boundary.
    assert out[1, 0, 0] == pytest.approx(out[15, 0, 0], rel=1e-12)
    assert out[0, 2, 0] == pytest.approx(out[0, 14, 0], rel=1e-12)
    np.testing.assert_allclose(out.sum(), 1.0, atol=1e-12)


def test_kernel_is_normalized_and_truncated():
    k = gaussian_kernel(5.0, 17)
    assert k.shape == (35,)
    assert k.sum() == pytest.approx(1.0, abs=1e-14)
    assert k[0] == k[-1]
    assert k.argmax() == 17


def test_rescale_threshold_boundary_is_pore():
    field = np.zeros((2, 2, 2))
    field.flat[:] = [0.0, 0.45, 0.450000001, 1.0, 0.2, 0.7, 0.44, 0.46]
    grid = rescale_threshold(field, 0.45, dx=1.0)
    labels = grid.voxels.flat
    assert labels[0] == PORE
    assert labels[1] == PORE          # exactly at threshold -> pore
    assert labels[2] == GRAIN
    assert labels[3] == GRAIN
    assert labels[6] == PORE
    assert labels[7] == GRAIN


def test_rescale_threshold_rejects_constant_field():
    with pytest.raises(DegenerateFieldError):
        rescale_threshold(np.ones((3, 3, 3)), 0.45, dx=1.0)


def test_porosity_counts_pores():
    vox = np.ones((4, 4, 4), dtype=np.uint8)
    vox[0] = PORE
    assert porosity(VoxelGrid(vox, 1.0)) == pytest.approx(0.25)


def test_synthesize_porosity_plausible():
    grid = synthesize(SynthConfig(n=32, sigma=2.5, radius=8), stream(11, "synth", 0))
    phi = porosity(grid)
    assert 0.05 < phi < 0.4


def test_synth_config_validation():
    with pytest.raises(ConfigError):
        SynthConfig(n=32, sigma=-1.0).validate()
    with pytest.raises(ConfigError):
        SynthConfig(n=32, radius=40).validate()
    with pytest.raises(ConfigError):
        SynthConfig(threshold=1.5).validate()


def test_pvox_round_trip_and_layout(tmp_path):
    rng = stream(6, "pvox")
    vox = (rng.random((5, 5, 5)) < 0.5).astype(np.uint8)
    grid = VoxelGrid(vox, 0.003)
    path = tmp_path / "a.pvox"
    write_pvox(path, grid)
    raw = path.read_bytes()
    assert raw[:5] == b"PVOX1"
    nx = int.from_bytes(raw[5:9], "little")
    assert nx == 5
    # First row of payload bytes is the x-fastest run at z=y=0.
    payload = np.frombuffer(raw[25:], dtype=np.uint8)
    np.testing.assert_array_equal(payload[:5], vox[0, 0, :])
    back = read_pvox(path)
    assert back == grid


def test_pvox_rejects_bad_magic_and_truncation(tmp_path):
    path = tmp_path / "bad.pvox"
    path.write_bytes(b"NOPE!" + bytes(20))
    with pytest.raises(DataError):
        read_pvox(path)
    grid = VoxelGrid(np.zeros((3, 3, 3), dtype=np.uint8), 1.0)
    good = tmp_path / "good.pvox"
    write_pvox(good, grid)
    (tmp_path / "short.pvox").write_bytes(good.read_bytes()[:-4])
    with pytest.raises(DataError):
        read_pvox(tmp_path / "short.pvox")


def test_split_counts_largest_remainder():
    assert split_counts(1692, (0.7997, 0.0999, 0.1004)) == (1353, 169, 170)
    assert split_counts(10, (0.8, 0.1, 0.1)) == (8, 1, 1)
    assert split_counts(260, (200 / 260, 30 / 260, 30 / 260)) == (200, 30, 30)


def test_split_counts_validation():
    with pytest.raises(ConfigError):
        split_counts(2, (0.8, 0.1, 0.1))
    with pytest.raises(ConfigError):
        split_counts(10, (0.5, 0.2, 0.2))


def test_assign_splits_is_disjoint_and_deterministic():
    labels = assign_splits(20, (0.8, 0.1, 0.1), master_seed=9)
    assert labels.count("train") == 16
    assert labels.count("valid") == 2
    assert labels.count("test") == 2
    assert labels == assign_splits(20, (0.8, 0.1, 0.1), master_seed=9)
    assert labels != assign_splits(20, (0.8, 0.1, 0.1), master_seed=10)


def test_generate_dataset_round_trip(tmp_path):
    config = SynthConfig(n=12, sigma=1.5, radius=4)
    manifest = generate_dataset(config, 6, (0.5, 0.25, 0.25), tmp_path, master_seed=21)
    assert len(manifest.samples) == 6
    for record in manifest.samples:
        assert record.permeability_mD is None
        assert (tmp_path / record.file).exists()
        grid = manifest.load_grid(record, tmp_path)
        assert porosity(grid) == pytest.approx(record.porosity)
    loaded = load_manifest(tmp_path / "manifest.json")
    assert [s.id for s in loaded.samples] == [s.id for s in manifest.samples]
    assert loaded.synth["sigma"] == 1.5


def test_generate_dataset_deterministic(tmp_path):
    config = SynthConfig(n=10, sigma=1.2, radius=3)
    a_dir, b_dir = tmp_path / "a", tmp_path / "b"
    generate_dataset(config, 4, (0.5, 0.25, 0.25), a_dir, master_seed=33)
    generate_dataset(config, 4, (0.5, 0.25, 0.25), b_dir, master_seed=33)
    for name in sorted(p.name for p in a_dir.iterdir()):
        assert (a_dir / name).read_bytes() == (b_dir / name).read_bytes()


def test_load_manifest_rejects_malformed(tmp_path):
    path = tmp_path / "manifest.json"
    path.write_text('{"samples": [{"id": "x"}], "n": 4, "dx": 1.0, '
                    '"master_seed": 0, "synth": {}}')
    with pytest.raises(DataError):
        load_manifest(path)
    path.write_text("not json")
    with pytest.raises(DataError):
        load_manifest(path)
