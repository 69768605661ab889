import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eglab import data


def make_rng(seed):
    return np.random.default_rng(seed)


def write_idx_pair_by_hand(tmp_path, images, labels):
    # independent writer: big-endian headers assembled with struct
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    ipath = tmp_path / "images.idx"
    lpath = tmp_path / "labels.idx"
    with open(ipath, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, rows, cols))
        f.write(images.tobytes())
    with open(lpath, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.tobytes())
    return ipath, lpath


# --- IDX loading -----------------------------------------------------------


def test_load_idx_scaling_and_shapes(tmp_path):
    images = np.array(
        [[[0, 128, 255], [1, 2, 3]], [[10, 20, 30], [40, 50, 60]]], dtype=np.uint8
    )
    labels = np.array([1, 0], dtype=np.uint8)
    ipath, lpath = write_idx_pair_by_hand(tmp_path, images, labels)
    ds = data.load_idx(ipath, lpath)
    assert ds.features.shape == (2, 6)
    assert ds.features.dtype == np.float64
    # pixels scale by exactly 1/255
    assert ds.features[0, 0] == 0.0
    assert ds.features[0, 1] == 128.0 / 255.0
    assert ds.features[0, 2] == 1.0
    np.testing.assert_array_equal(ds.labels, [1, 0])
    assert ds.class_count == 2


def test_idx_roundtrip_bit_exact(tmp_path):
    rng = make_rng(0)
    images = rng.integers(0, 256, size=(5, 4, 3), dtype=np.uint8)
    labels = rng.integers(0, 4, size=5, dtype=np.uint8)
    ipath, lpath = tmp_path / "i.idx", tmp_path / "l.idx"
    data.write_idx(ipath, lpath, images, labels)
    ds = data.load_idx(ipath, lpath)
    np.testing.assert_array_equal(ds.features, images.reshape(5, -1) / 255.0)
    np.testing.assert_array_equal(ds.labels, labels)
    # and the written files parse identically to hand-assembled ones
    ipath2, lpath2 = write_idx_pair_by_hand(tmp_path, images, labels)
    assert ipath.read_bytes() == ipath2.read_bytes()
    assert lpath.read_bytes() == lpath2.read_bytes()


def test_load_idx_bad_magic_names_offset(tmp_path):
    ipath, lpath = write_idx_pair_by_hand(
        tmp_path, np.zeros((1, 2, 2), dtype=np.uint8), np.zeros(1, dtype=np.uint8)
    )
    raw = bytearray(ipath.read_bytes())
    raw[3] = 0x99
    ipath.write_bytes(bytes(raw))
    with pytest.raises(data.IdxFormatError, match="offset 0"):
        data.load_idx(ipath, lpath)


def test_load_idx_truncated_names_offset(tmp_path):
    ipath, lpath = write_idx_pair_by_hand(
        tmp_path, np.zeros((2, 2, 2), dtype=np.uint8), np.zeros(2, dtype=np.uint8)
    )
    raw = ipath.read_bytes()
    ipath.write_bytes(raw[:-3])  # drop 3 pixels
    with pytest.raises(data.IdxFormatError, match=str(len(raw) - 3)):
        data.load_idx(ipath, lpath)


def test_load_idx_count_mismatch_names_both_counts(tmp_path):
    ipath, _ = write_idx_pair_by_hand(
        tmp_path, np.zeros((2, 2, 2), dtype=np.uint8), np.zeros(2, dtype=np.uint8)
    )
    lpath = tmp_path / "labels3.idx"
    with open(lpath, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, 3))
        f.write(bytes(3))
    with pytest.raises(data.IdxFormatError) as exc:
        data.load_idx(ipath, lpath)
    assert "2" in str(exc.value) and "3" in str(exc.value)


# --- synthetic blobs -------------------------------------------------------


def test_make_synthetic_deterministic_and_balanced():
    a = data.make_synthetic(seed=5, n=31, dims=4, classes=3, spread=0.2)
    b = data.make_synthetic(seed=5, n=31, dims=4, classes=3, spread=0.2)
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert a.features.shape == (31, 4)
    assert a.class_count == 3
    counts = np.bincount(a.labels, minlength=3)
    assert counts.max() - counts.min() <= 1


def test_make_synthetic_zero_spread_separable():
    ds = data.make_synthetic(seed=1, n=60, dims=5, classes=4, spread=0.0)
    centers = np.stack([ds.features[ds.labels == c][0] for c in range(4)])
    # all samples of a class collapse onto its center, centers distinct
    for c in range(4):
        rows = ds.features[ds.labels == c]
        np.testing.assert_array_equal(rows, np.broadcast_to(centers[c], rows.shape))
    d2 = ((centers[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
    assert (d2 + np.eye(4) > 0).all()
    # nearest-centroid gets every point right
    pred = ((ds.features[:, None, :] - centers[None, :, :]) ** 2).sum(-1).argmin(1)
    assert (pred == ds.labels).all()


def test_make_synthetic_more_classes_than_dims():
    ds = data.make_synthetic(seed=2, n=40, dims=2, classes=5, spread=0.0)
    centers = {tuple(ds.features[ds.labels == c][0]) for c in range(5)}
    assert len(centers) == 5  # wrapped axes get sign-flipped, staying distinct


# --- normalization ---------------------------------------------------------


def test_fit_apply_normalizer_frozen_case():
    train = data.Dataset(np.array([[0.0], [2.0]]), np.array([0, 1]), 2)
    val = data.Dataset(np.array([[1.0], [3.0]]), np.array([0, 1]), 2)
    train2, (val2,), norm = data.fit_apply_normalizer(train, (val,))
    np.testing.assert_array_equal(norm.mean, [1.0])
    np.testing.assert_array_equal(norm.std, [1.0])  # population std of {0,2}
    np.testing.assert_array_equal(train2.features, [[-1.0], [1.0]])
    np.testing.assert_array_equal(val2.features, [[0.0], [2.0]])  # train stats reused
    np.testing.assert_array_equal(val2.labels, val.labels)


def test_fit_apply_normalizer_train_becomes_standard():
    rng = make_rng(3)
    train = data.Dataset(rng.normal(2.0, 3.0, size=(40, 5)), rng.integers(0, 2, 40), 2)
    train2, _, _ = data.fit_apply_normalizer(train)
    np.testing.assert_allclose(train2.features.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(train2.features.std(axis=0), 1.0, atol=1e-12)


def test_fit_apply_normalizer_constant_column():
    train = data.Dataset(np.array([[7.0, 1.0], [7.0, 3.0]]), np.array([0, 1]), 2)
    train2, _, norm = data.fit_apply_normalizer(train)
    assert norm.std[0] == 1.0
    np.testing.assert_array_equal(train2.features[:, 0], 0.0)


# --- validation split ------------------------------------------------------


def test_split_validation_sizes_and_partition():
    ds = data.make_synthetic(seed=4, n=20, dims=3, classes=2, spread=0.5)
    train, val = data.split_validation(ds, holdout=6, rng=make_rng(0))
    assert len(val.labels) == 6 and len(train.labels) == 14
    joined = np.vstack([train.features, val.features])
    assert {tuple(r) for r in joined} == {tuple(r) for r in ds.features}


def test_split_validation_deterministic():
    ds = data.make_synthetic(seed=4, n=20, dims=3, classes=2, spread=0.5)
    t1, v1 = data.split_validation(ds, 6, make_rng(9))
    t2, v2 = data.split_validation(ds, 6, make_rng(9))
    np.testing.assert_array_equal(v1.features, v2.features)
    np.testing.assert_array_equal(t1.features, t2.features)


def test_split_validation_bad_holdout():
    ds = data.make_synthetic(seed=4, n=10, dims=2, classes=2, spread=0.5)
    with pytest.raises(ValueError):
        data.split_validation(ds, 10, make_rng(0))
    with pytest.raises(ValueError):
        data.split_validation(ds, -1, make_rng(0))


# --- partitioning ----------------------------------------------------------


def partition_cover(parts, n):
    all_idx = np.concatenate([p.indices for p in parts])
    return len(all_idx) == n and len(np.unique(all_idx)) == n


def test_partition_uniform_sizes():
    ds = data.make_synthetic(seed=6, n=10, dims=2, classes=2, spread=0.5)
    parts = data.partition_dataset(ds, workers=4, mode="uniform", rng=make_rng(0))
    sizes = sorted(len(p.indices) for p in parts)
    assert sizes == [2, 2, 3, 3]
    assert partition_cover(parts, 10)
    assert [p.rank for p in parts] == [0, 1, 2, 3]


def test_partition_uniform_deterministic():
    ds = data.make_synthetic(seed=6, n=17, dims=2, classes=2, spread=0.5)
    p1 = data.partition_dataset(ds, 3, "uniform", make_rng(5))
    p2 = data.partition_dataset(ds, 3, "uniform", make_rng(5))
    for a, b in zip(p1, p2):
        np.testing.assert_array_equal(a.indices, b.indices)


def test_partition_class_biased_pure_when_full_share():
    # q=1.0 with as many workers as classes isolates one class per worker
    ds = data.make_synthetic(seed=7, n=30, dims=4, classes=3, spread=0.1)
    parts = data.partition_dataset(
        ds, 3, "class_biased", make_rng(1), majority_share=1.0
    )
    assert partition_cover(parts, 30)
    for p in parts:
        classes = set(ds.labels[p.indices])
        assert classes == {p.rank % 3}


def test_partition_class_biased_majority_fraction():
    ds = data.make_synthetic(seed=8, n=300, dims=4, classes=3, spread=0.1)
    parts = data.partition_dataset(
        ds, 3, "class_biased", make_rng(2), majority_share=0.8
    )
    assert partition_cover(parts, 300)
    for p in parts:
        majority = (ds.labels[p.indices] == p.rank % 3).mean()
        # 0.8 from the quota plus this worker's share of the uniform remainder
        assert 0.7 <= majority <= 0.95


@settings(max_examples=40, deadline=None)
@given(
    n=st.integers(10, 60),
    workers=st.integers(2, 5),
    classes=st.integers(2, 4),
    q=st.floats(0.0, 1.0),
    seed=st.integers(0, 2**31),
)
def test_partition_class_biased_always_covers(n, workers, classes, q, seed):
    ds = data.make_synthetic(seed=9, n=n, dims=3, classes=classes, spread=0.5)
    parts = data.partition_dataset(
        ds, workers, "class_biased", make_rng(seed), majority_share=q
    )
    assert partition_cover(parts, n)
    sizes = [len(p.indices) for p in parts]
    assert max(sizes) - min(sizes) <= 1


def test_partition_strided_layout():
    ds = data.make_synthetic(seed=10, n=10, dims=2, classes=2, spread=0.5)
    parts = data.partition_dataset(ds, 4, "strided", rng=None)
    np.testing.assert_array_equal(parts[0].indices, [0, 4, 8])
    np.testing.assert_array_equal(parts[1].indices, [1, 5, 9])
    np.testing.assert_array_equal(parts[2].indices, [2, 6])
    np.testing.assert_array_equal(parts[3].indices, [3, 7])


def test_partition_bad_mode_and_counts():
    ds = data.make_synthetic(seed=10, n=10, dims=2, classes=2, spread=0.5)
    with pytest.raises(ValueError):
        data.partition_dataset(ds, 4, "zigzag", make_rng(0))
    with pytest.raises(ValueError):
        data.partition_dataset(ds, 0, "uniform", make_rng(0))
    with pytest.raises(ValueError):
        data.partition_dataset(ds, 11, "uniform", make_rng(0))  # worker without data


# --- minibatch sampling ----------------------------------------------------


def test_sampler_epoch_covers_every_index_once():
    idx = np.arange(12) * 10
    s = data.MinibatchSampler(idx, make_rng(0), batch=4)
    seen = np.concatenate([s.next_indices() for _ in range(3)])
    assert sorted(seen) == sorted(idx)


def test_sampler_full_batch_is_whole_partition():
    idx = np.arange(7)
    s = data.MinibatchSampler(idx, make_rng(1), batch=7)
    np.testing.assert_array_equal(np.sort(s.next_indices()), idx)


def test_sampler_reshuffles_between_epochs():
    idx = np.arange(32)
    s = data.MinibatchSampler(idx, make_rng(2), batch=32)
    first = s.next_indices()
    second = s.next_indices()
    assert sorted(first) == sorted(second)
    assert not np.array_equal(first, second)  # astronomically unlikely to collide


def test_sampler_wraps_across_epoch_keeping_full_batches():
    idx = np.arange(10)
    s = data.MinibatchSampler(idx, make_rng(3), batch=4)
    draws = np.concatenate([s.next_indices() for _ in range(5)])  # 20 draws
    assert all(len(b) == 4 for b in draws.reshape(5, 4))
    assert sorted(draws[:10]) == sorted(idx)  # first pass is a permutation
    assert sorted(draws[10:]) == sorted(idx)  # and so is the second


def test_sampler_sequential_order_no_rng():
    idx = np.array([3, 1, 4, 1, 5])[:4]  # arbitrary order preserved
    s = data.MinibatchSampler(idx, rng=None, batch=2, order="sequential")
    np.testing.assert_array_equal(s.next_indices(), [3, 1])
    np.testing.assert_array_equal(s.next_indices(), [4, 1])
    np.testing.assert_array_equal(s.next_indices(), [3, 1])  # wrapped


def test_sampler_batch_too_large():
    with pytest.raises(ValueError):
        data.MinibatchSampler(np.arange(3), make_rng(0), batch=4)


def test_sampler_sample_returns_matching_rows():
    ds = data.make_synthetic(seed=11, n=20, dims=3, classes=2, spread=0.5)
    part = data.partition_dataset(ds, 2, "uniform", make_rng(4))[0]
    s = data.MinibatchSampler(part.indices, make_rng(5), batch=3)
    x, y = s.sample(ds)
    assert x.shape == (3, 3) and y.shape == (3,)
    for row, label in zip(x, y):
        pos = np.flatnonzero((ds.features == row).all(axis=1))
        assert any(ds.labels[p] == label for p in pos)
