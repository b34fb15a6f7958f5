import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collapse_scope.data import (
    BlockGrid,
    Dataset,
    generate_gaussian,
    load_csv,
    load_csv_with_report,
    random_rotation,
    random_split,
    spatial_block_split,
    standardize,
    synthetic_splits,
    write_csv,
    write_split_csv,
)
from collapse_scope.errors import (
    DegenerateFeature,
    EmptyDataset,
    InvalidBlockSize,
    InvalidSpectrum,
    NoCoordinates,
    ParseError,
    TooFewSamples,
    ValidationError,
)
from collapse_scope.tables import read_records

from oracles import EIGHT_MODE


def _geo(n, seed, lon=(-180, 180), lat=(-90, 90)):
    rng = np.random.default_rng(seed)
    coords = np.column_stack([rng.uniform(*lon, n), rng.uniform(*lat, n)])
    coords[:, 0] = np.clip(coords[:, 0], -180, np.nextafter(180, 0))
    return Dataset(rng.normal(size=(n, 2)), coords=coords)


# --- Dataset ---


def test_dataset_validation():
    with pytest.raises(TooFewSamples):
        Dataset(np.zeros((1, 3)))
    with pytest.raises(ValidationError):
        Dataset(np.array([[0.0, np.nan], [1.0, 2.0]]))
    with pytest.raises(ValidationError):
        Dataset(np.zeros((2, 1)), coords=[[0, 95], [0, 0]])
    with pytest.raises(ValidationError):
        Dataset(np.zeros((2, 1)), coords=[[180, 0], [0, 0]])
    ds = Dataset(np.arange(6.0).reshape(3, 2))
    assert ds.feature_names == ("f1", "f2")
    with pytest.raises(ValueError):
        ds.samples[0, 0] = 1.0


def test_total_variance_is_mean_squared_deviation():
    x = np.array([[-1.0, 0.0], [1.0, 0.0]])
    assert Dataset(x).total_variance == pytest.approx(1.0)


# --- generation ---


def test_generate_unit_variance():
    ds = generate_gaussian([1.0], 100_000, seed=7)
    assert ds.samples.var() == pytest.approx(1.0, rel=0.02)


def test_generate_mean_shrinks():
    lam = np.array([4.0, 2.0, 1.0, 1.0])
    n = 20_000
    ds = generate_gaussian(lam, n, seed=3)
    sigma = np.sqrt(np.diag(np.cov(ds.samples.T)))
    assert np.all(np.abs(ds.mean) < 4 * sigma / np.sqrt(n))


def test_generate_eight_mode_spectrum():
    ds = generate_gaussian(EIGHT_MODE, 4096, seed=0)
    # oracle: numpy's LAPACK eigensolver on the sample covariance
    xc = ds.samples - ds.mean
    w = np.sort(np.linalg.eigvalsh(xc.T @ xc / len(xc)))[::-1]
    np.testing.assert_allclose(w, EIGHT_MODE, rtol=0.10)


def test_generate_errors():
    with pytest.raises(InvalidSpectrum):
        generate_gaussian([1.0, 0.0], 10, seed=0)
    with pytest.raises(InvalidSpectrum):
        generate_gaussian([1.0, -2.0], 10, seed=0)
    with pytest.raises(TooFewSamples):
        generate_gaussian([1.0], 1, seed=0)


def test_generate_deterministic():
    a = generate_gaussian([3.0, 1.0], 50, seed=11)
    b = generate_gaussian([3.0, 1.0], 50, seed=11)
    assert np.array_equal(a.samples, b.samples)
    c = generate_gaussian([3.0, 1.0], 50, seed=12)
    assert not np.array_equal(a.samples, c.samples)


def test_rotation_is_orthogonal():
    q = random_rotation(6, seed=2)
    np.testing.assert_allclose(q.T @ q, np.eye(6), atol=1e-12)


def test_synthetic_splits_share_basis():
    tr, va, te = synthetic_splits([5.0, 1.0], 20_000, seed=4)
    assert not np.array_equal(tr.samples, te.samples)
    # same rotated eigenbasis: leading directions agree up to sign
    lead = [np.linalg.eigh(np.cov(d.samples.T))[1][:, -1] for d in (tr, va, te)]
    for v in lead[1:]:
        assert abs(v @ lead[0]) > 0.999


# --- standardization ---


def test_standardize_source_rows():
    rng = np.random.default_rng(0)
    x = np.column_stack([5.0 + rng.normal(size=200), rng.normal(size=200) * 3])
    ds = Dataset(x)
    idx = np.arange(120)
    out, stats = standardize(ds, idx)
    np.testing.assert_allclose(out.samples[idx].mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(out.samples[idx].std(axis=0), 1, atol=1e-12)
    # rows outside the source set use the train statistics
    assert np.all(np.abs(out.samples[120:].mean(axis=0)) > 0)


def test_standardize_degenerate():
    x = np.column_stack([np.full(10, 5.0), np.arange(10.0)])
    with pytest.raises(DegenerateFeature) as exc:
        standardize(Dataset(x), np.arange(10))
    assert exc.value.feature_index == 0


@given(st.integers(0, 10_000), st.integers(2, 5), st.integers(3, 40))
@settings(max_examples=50)
def test_standardize_roundtrip(seed, d, n):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d)) * rng.uniform(0.1, 10, d) + rng.uniform(-50, 50, d)
    ds = Dataset(x)
    out, stats = standardize(ds, np.arange(n))
    back = stats.invert(out)
    np.testing.assert_allclose(back.samples, x, rtol=1e-12, atol=1e-12 * np.abs(x).max())


# --- spatial blocks ---


def test_block_grid_geometry():
    g = BlockGrid(500.0)
    cells = g.cells_per_band()
    assert cells.min() >= 1
    # band cells at the equator are about circumference / side
    assert cells.max() == pytest.approx(2 * np.pi * 6371 / 500, abs=1)
    ids = np.arange(cells.sum())
    area = g.block_area(ids)
    assert area.sum() == pytest.approx(4 * np.pi * 6371**2, rel=1e-12)


def test_split_errors():
    with pytest.raises(NoCoordinates):
        spatial_block_split(Dataset(np.zeros((3, 1))))
    ds = _geo(10, 0)
    with pytest.raises(InvalidBlockSize):
        spatial_block_split(ds, block_side_km=0)
    with pytest.raises(ValidationError):
        spatial_block_split(ds, train_fraction=0.9, val_fraction=0.2)


def test_single_block_goes_to_one_split():
    ds = _geo(50, 1, lon=(10.0, 10.01), lat=(0.0, 0.01))
    s = spatial_block_split(ds, 500, seed=3)
    sizes = sorted(len(i) for i in (s.train_idx, s.val_idx, s.test_idx))
    assert sizes == [0, 0, 50]


def test_uniform_sphere_fractions():
    # uniform on the sphere: lat = asin(u)
    realized = []
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        n = 20_000
        lon = rng.uniform(-180, 180, n)
        lat = np.degrees(np.arcsin(rng.uniform(-1, 1, n)))
        ds = Dataset(np.zeros((n, 1)) + rng.normal(size=(n, 1)), coords=np.column_stack([lon, lat]))
        s = spatial_block_split(ds, 500, seed=seed)
        realized.append([len(s.train_idx) / n, len(s.val_idx) / n, len(s.test_idx) / n])
    np.testing.assert_allclose(np.mean(realized, axis=0), [0.62, 0.19, 0.19], atol=0.05)
    for frac in realized:
        np.testing.assert_allclose(frac, [0.62, 0.19, 0.19], atol=0.05)


def test_split_permutation_invariant():
    ds = _geo(400, 5)
    s = spatial_block_split(ds, 800, seed=2)
    perm = np.random.default_rng(0).permutation(400)
    s2 = spatial_block_split(ds.subset(perm), 800, seed=2)
    labels = np.array(s.labels(400))
    labels2 = np.array(s2.labels(400))
    assert np.array_equal(labels[perm], labels2)


def test_split_deterministic():
    ds = _geo(300, 6)
    a, b = spatial_block_split(ds, 700, seed=9), spatial_block_split(ds, 700, seed=9)
    for x, y in zip((a.train_idx, a.val_idx, a.test_idx), (b.train_idx, b.val_idx, b.test_idx)):
        assert np.array_equal(x, y)


def test_random_split_partition():
    s = random_split(101, seed=0)
    allidx = np.concatenate([s.train_idx, s.val_idx, s.test_idx])
    assert sorted(allidx.tolist()) == list(range(101))
    assert len(s.train_idx) == 63


def test_split_csv(tmp_path):
    ds = _geo(30, 7)
    s = spatial_block_split(ds, 2000, seed=0)
    write_split_csv(s, 30, tmp_path / "split.csv")
    recs = read_records(tmp_path / "split.csv")
    assert [r["row_index"] for r in recs] == list(range(30))
    assert {r["split"] for r in recs} <= {"train", "val", "test"}
    assert [r["block_id"] for r in recs] == s.block_ids.tolist()


# --- CSV ---


def test_load_csv_with_coords(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("lon,lat,f1,f2\n1,2,3,4\n5,6,7,8\n-9,10,11,12\n")
    ds = load_csv(p)
    assert ds.n_samples == 3 and ds.n_features == 2
    assert ds.coords is not None and ds.feature_names == ("f1", "f2")
    np.testing.assert_array_equal(ds.coords[2], [-9, 10])


def test_load_csv_drops_nan(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("f1,f2\n1,2\nnan,3\n4,5\n6,\n7,8\n")
    ds, dropped = load_csv_with_report(p)
    assert dropped == 2 and ds.n_samples == 3


def test_load_csv_wraps_lon_180(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("lon,lat,f\n180,0,1\n0,0,2\n")
    assert load_csv(p).coords[0, 0] == -180


def test_load_csv_errors(tmp_path):
    p = tmp_path / "h.csv"
    p.write_text("f1,f2\n")
    with pytest.raises(EmptyDataset):
        load_csv(p)
    p.write_text("f1,f2\n1,2\n3,abc\n")
    with pytest.raises(ParseError) as exc:
        load_csv(p)
    assert exc.value.line == 3
    p.write_text("f1,f2\n1,2,3\n")
    with pytest.raises(ParseError):
        load_csv(p)


def test_csv_roundtrip_bytes(tmp_path):
    ds = _geo(25, 8)
    write_csv(ds, tmp_path / "a.csv")
    back = load_csv(tmp_path / "a.csv")
    np.testing.assert_array_equal(back.samples, ds.samples)
    np.testing.assert_array_equal(back.coords, ds.coords)
    write_csv(back, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
