import numpy as np
import pytest
from scipy import stats

from app.dataset import ReplayDataset
from app.errors import DimensionError, NonFiniteValueError


def test_append_and_length():
    """Test each append adds one pair"""
    ds = ReplayDataset()
    ds.append([0.1, 0.2], 1.5, -0.3)
    ds.append([0.2, 0.3], 1.0, -0.1)
    assert len(ds) == 2
    xs, ys = ds.as_arrays()
    np.testing.assert_array_equal(xs[0], [0.1, 0.2, 1.5])
    np.testing.assert_array_equal(ys[:, 0], [-0.3, -0.1])


def test_append_rejects_non_finite():
    """Test NaN and infinite values are refused"""
    ds = ReplayDataset()
    with pytest.raises(NonFiniteValueError):
        ds.append([np.nan, 0.0], 0.0, 0.0)
    with pytest.raises(NonFiniteValueError):
        ds.append([0.0, 0.0], 0.0, np.inf)
    assert len(ds) == 0


def test_append_rejects_shape_change():
    """Test a sample of a different width is refused"""
    ds = ReplayDataset()
    ds.append([0.0, 0.0], 0.0, 0.0)
    with pytest.raises(DimensionError):
        ds.append([0.0, 0.0, 0.0], 0.0, 0.0)


def test_capacity_evicts_oldest():
    """Test a bounded dataset behaves as a ring"""
    ds = ReplayDataset(capacity=2)
    for i in range(3):
        ds.append([float(i), 0.0], 0.0, float(i))
    xs, ys = ds.as_arrays()
    assert len(ds) == 2
    np.testing.assert_array_equal(ys[:, 0], [1.0, 2.0])


def test_sample_without_replacement(rng):
    """Test n <= len draws distinct rows"""
    ds = ReplayDataset()
    for i in range(10):
        ds.append([float(i), 0.0], 0.0, float(i))
    xs, ys = ds.sample_minibatch(10, rng)
    assert xs.shape == (10, 3)
    assert ys.shape == (10, 1)
    assert sorted(ys[:, 0]) == list(range(10))


def test_sample_with_replacement_when_small(rng):
    """Test n > len still returns n rows"""
    ds = ReplayDataset()
    ds.append([1.0, 2.0], 3.0, 4.0)
    xs, ys = ds.sample_minibatch(5, rng)
    assert xs.shape == (5, 3)
    assert np.all(ys == 4.0)


@pytest.mark.parametrize("batch_size", [5, 20])
def test_sample_frequencies_are_uniform(batch_size):
    """Test 10^5 draws from 10 rows hit every row equally often (chi-square p > 0.01)"""
    ds = ReplayDataset()
    for i in range(10):
        ds.append([float(i), 0.0], 0.0, float(i))
    rng = np.random.default_rng(2024)
    counts = np.zeros(10, dtype=np.int64)
    for _ in range(100_000 // batch_size):
        _, ys = ds.sample_minibatch(batch_size, rng)
        drawn = ys[:, 0].astype(int)
        if batch_size <= len(ds):
            assert len(set(drawn)) == batch_size
        counts += np.bincount(drawn, minlength=10)
    assert counts.sum() == 100_000
    assert stats.chisquare(counts).pvalue > 0.01


def test_sample_empty(rng):
    """Test sampling an empty dataset fails"""
    with pytest.raises(ValueError):
        ReplayDataset().sample_minibatch(1, rng)


def test_sample_is_deterministic():
    """Test equal generator seeds give equal batches"""
    ds = ReplayDataset()
    for i in range(50):
        ds.append([float(i), 0.0], 0.0, float(i))
    a = ds.sample_minibatch(8, np.random.default_rng(3))
    b = ds.sample_minibatch(8, np.random.default_rng(3))
    np.testing.assert_array_equal(a[0], b[0])


def test_csv_dump_and_load(tmp_path):
    """Test the CSV form restores every pair exactly"""
    ds = ReplayDataset()
    ds.append([0.1, -0.2], 1.0 / 3.0, 2.0 / 7.0)
    ds.append([1e-9, 5.0], -4.0, 0.0)
    path = tmp_path / "data.csv"
    ds.dump_csv(str(path))

    header = path.read_text().splitlines()[0]
    assert header == "p,pdot,u,r_obs"
    loaded = ReplayDataset.load_csv(str(path))
    np.testing.assert_array_equal(loaded.as_arrays()[0], ds.as_arrays()[0])
    np.testing.assert_array_equal(loaded.as_arrays()[1], ds.as_arrays()[1])


def test_csv_missing_columns(tmp_path):
    """Test a CSV without the expected columns is rejected"""
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        ReplayDataset.load_csv(str(path))
