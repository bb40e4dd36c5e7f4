import numpy as np
import pytest

from pmiprint.dataset import (MEMBER, NON_MEMBER, Dataset, SplitPools, generate_synthetic,
                              load_csv, load_idx, member_index, sample_trial, save_csv,
                              split_pools, write_idx)
from pmiprint.errors import CapacityError, ConfigError, FormatError


def test_synthetic_is_deterministic():
    a = generate_synthetic(seed=7, c=2, d=2, per_class=3, spread=0.1)
    b = generate_synthetic(seed=7, c=2, d=2, per_class=3, spread=0.1)
    assert len(a) == 6
    assert list(a.class_counts()) == [3, 3]
    assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)


def test_synthetic_covers_all_classes():
    data = generate_synthetic(seed=7, c=10, d=16, per_class=500, spread=1.0)
    assert len(data) == 5000
    assert set(data.y.tolist()) == set(range(10))
    assert data.d == 16 and data.c == 10


@pytest.mark.parametrize("kwargs", [
    dict(c=1, d=2, per_class=3, spread=1.0),
    dict(c=2, d=1, per_class=3, spread=1.0),
    dict(c=2, d=2, per_class=0, spread=1.0),
    dict(c=2, d=2, per_class=3, spread=0.0),
])
def test_synthetic_rejects_bad_parameters(kwargs):
    with pytest.raises(ValueError):
        generate_synthetic(seed=0, **kwargs)


def test_synthetic_means_distinct_when_more_classes_than_dims():
    data = generate_synthetic(seed=0, c=5, d=2, per_class=50, spread=0.01)
    means = np.array([data.X[data.y == r].mean(axis=0) for r in range(5)])
    dists = np.linalg.norm(means[:, None] - means[None], axis=-1)
    assert np.all(dists[~np.eye(5, dtype=bool)] > 1.0)


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 2)), [0, 1, 2], c=2)
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 2)), [0, 1], c=2)
    data = Dataset(np.zeros((2, 2)), [0, 1], c=2)
    with pytest.raises(ValueError):
        data.X[0, 0] = 1.0
    assert data[1].label == 1


def test_idx_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, (6, 28, 28), dtype=np.uint8)
    labels = np.array([0, 1, 2, 3, 4, 9], dtype=np.uint8)
    write_idx(images, labels, tmp_path / "img", tmp_path / "lbl")
    data = load_idx(tmp_path / "img", tmp_path / "lbl")
    assert data.d == 784 and data.c == 10
    assert data.X.min() >= 0.0 and data.X.max() <= 1.0
    assert np.allclose(data.X[2], images[2].ravel() / 255.0)


def test_idx_count_mismatch(tmp_path):
    images = np.zeros((6, 2, 2), dtype=np.uint8)
    write_idx(images, np.zeros(5, dtype=np.uint8), tmp_path / "img", tmp_path / "lbl")
    with pytest.raises(FormatError, match="mismatch"):
        load_idx(tmp_path / "img", tmp_path / "lbl")


def test_idx_bad_magic_and_truncation(tmp_path):
    write_idx(np.zeros((2, 2, 2), dtype=np.uint8), np.zeros(2, dtype=np.uint8),
              tmp_path / "img", tmp_path / "lbl")
    # label file where an image file is expected
    with pytest.raises(FormatError, match="magic"):
        load_idx(tmp_path / "lbl", tmp_path / "lbl")
    raw = (tmp_path / "img").read_bytes()
    (tmp_path / "short").write_bytes(raw[:-1])
    with pytest.raises(FormatError, match="truncated"):
        load_idx(tmp_path / "short", tmp_path / "lbl")


def test_csv_roundtrip(tmp_path):
    data = generate_synthetic(seed=1, c=3, d=2, per_class=4, spread=0.5)
    save_csv(data, tmp_path / "d.csv")
    assert (tmp_path / "d.csv").read_text().splitlines()[0] == "2,3"
    back = load_csv(tmp_path / "d.csv")
    assert np.array_equal(back.X, data.X) and np.array_equal(back.y, data.y)


@pytest.mark.parametrize("total,fraction,expected", [
    (70_000, 5 / 7, (50_000, 20_000)),
    (60_000, 0.75, (45_000, 15_000)),
])
def test_split_sizes_match_fraction(total, fraction, expected):
    data = Dataset(np.zeros((total, 2)), np.arange(total) % 10, c=10)
    pools = split_pools(data, fraction, seed=0)
    assert (len(pools.train), len(pools.holdout)) == expected
    assert np.intersect1d(pools.train.ids, pools.holdout.ids).size == 0


@pytest.mark.parametrize("fraction", [0.0, 1.0, -0.1, 1.5])
def test_split_rejects_fraction_outside_open_interval(fraction):
    data = generate_synthetic(seed=0, c=2, d=2, per_class=5, spread=1.0)
    with pytest.raises(ConfigError):
        split_pools(data, fraction, seed=0)


def test_split_flags_empty_class():
    data = Dataset(np.zeros((4, 2)), [0, 0, 0, 1], c=2)
    with pytest.warns(UserWarning, match="no samples"):
        pools = split_pools(data, 0.5, seed=0)
    assert 1 in pools.empty_classes()


def test_stratified_split_is_exact_per_class():
    data = generate_synthetic(seed=0, c=4, d=3, per_class=700, spread=1.0)
    pools = split_pools(data, 5 / 7, seed=1, stratify=True)
    assert list(pools.train.class_counts()) == [500] * 4
    assert list(pools.holdout.class_counts()) == [200] * 4


def test_pools_contain_only_their_class(small_pools):
    for r in range(small_pools.c):
        assert np.all(small_pools.train.y[small_pools.member_pool(r)] == r)
        assert np.all(small_pools.holdout.y[small_pools.nonmember_pool(r)] == r)


def _big_pools():
    data = Dataset(np.random.default_rng(0).standard_normal((7000, 3)), np.zeros(7000, int), c=2)
    train = data.subset(np.arange(5000))
    hold = data.subset(np.arange(5000, 7000))
    return SplitPools(train, hold)


def test_sample_trial_structure():
    pools = _big_pools()
    minis = sample_trial(pools, r=0, m=3, n=100, seed=4)
    assert [mini.index for mini in minis] == [0, 1, 2]
    assert sum(mini.origin == MEMBER for mini in minis) == 1
    all_ids = np.concatenate([mini.ids for mini in minis])
    assert len(np.unique(all_ids)) == 300
    for mini in minis:
        assert mini.n == 100 and mini.label == 0
        source = pools.train if mini.origin == MEMBER else pools.holdout
        assert np.isin(mini.ids, source.ids).all()
        assert mini.origin in (MEMBER, NON_MEMBER)


def test_sample_trial_capacity_error_names_bound():
    pools = _big_pools()
    small = SplitPools(pools.train, pools.holdout.subset(np.arange(1000)))
    with pytest.raises(CapacityError, match=r"\|Q\| = 1000 < n\(m-1\) = 1200"):
        sample_trial(small, r=0, m=5, n=300, seed=0)
    with pytest.raises(CapacityError, match=r"\|P\|"):
        sample_trial(SplitPools(pools.train.subset([0, 1]), pools.holdout), 0, 3, 5, 0)


def test_sample_trial_deterministic():
    pools = _big_pools()
    a = sample_trial(pools, 0, 4, 50, seed=9)
    b = sample_trial(pools, 0, 4, 50, seed=9)
    assert member_index(a) == member_index(b)
    assert all(np.array_equal(x.ids, y.ids) for x, y in zip(a, b))
    c = sample_trial(pools, 0, 4, 50, seed=10)
    assert not all(np.array_equal(x.ids, y.ids) for x, y in zip(a, c))


def test_member_position_is_uniform():
    pools = _big_pools()
    counts = np.bincount([member_index(sample_trial(pools, 0, 3, 10, s)) for s in range(600)],
                         minlength=3)
    # 600 draws, expected 200 each; 5 standard deviations is ~58
    assert np.all(np.abs(counts - 200) < 58)


def test_consumed_samples_leave_nonmember_pool(small_pools):
    r = 1
    q = small_pools.nonmember_pool(r)
    gone = small_pools.holdout.ids[q[:3]]
    pools = small_pools.with_consumed(gone)
    assert len(pools.nonmember_pool(r)) == len(q) - 3
    assert np.array_equal(pools.member_pool(r), small_pools.member_pool(r))
