"""Datasets and how workers see them.

Sources: IDX image/label file pairs (the classic big-endian format) and
synthetic Gaussian blobs. Downstream: train-only standardization, a
validation split, per-worker partitions (uniform, class-biased, or strided),
and epoch-shuffled minibatch sampling.
"""

import struct
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import numeric

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    pass


@dataclass
class Dataset:
    features: np.ndarray  # (n, d) float64
    labels: np.ndarray  # (n,) int64
    class_count: int

    def __len__(self):
        return self.features.shape[0]

    def take(self, idx):
        return Dataset(self.features[idx], self.labels[idx], self.class_count)


def _read_header(buf, path, magic, fields):
    size = 4 * (1 + fields)
    if len(buf) < size:
        raise IdxFormatError(
            f"{path}: header truncated, file ends at offset {len(buf)}"
        )
    got = struct.unpack_from(">I", buf, 0)[0]
    if got != magic:
        raise IdxFormatError(
            f"{path}: bad magic 0x{got:08x} at offset 0, expected 0x{magic:08x}"
        )
    return struct.unpack_from(f">{fields}I", buf, 4), size


def load_idx(images_path, labels_path):
    """Load an IDX image/label pair into a Dataset.

    Pixels are scaled from [0, 255] bytes to [0, 1] floats; images are
    flattened row-major to one feature row per item.
    """
    ibuf = open(images_path, "rb").read()
    (n, rows, cols), off = _read_header(ibuf, images_path, IDX_IMAGE_MAGIC, 3)
    want = off + n * rows * cols
    if len(ibuf) != want:
        raise IdxFormatError(
            f"{images_path}: expected {want} bytes for {n} items of "
            f"{rows}x{cols}, file ends at offset {len(ibuf)}"
        )
    lbuf = open(labels_path, "rb").read()
    (nl,), loff = _read_header(lbuf, labels_path, IDX_LABEL_MAGIC, 1)
    if len(lbuf) != loff + nl:
        raise IdxFormatError(
            f"{labels_path}: expected {loff + nl} bytes for {nl} labels, "
            f"file ends at offset {len(lbuf)}"
        )
    if n != nl:
        raise IdxFormatError(
            f"image file declares {n} items but label file declares {nl}"
        )
    if n == 0:
        raise IdxFormatError(f"{images_path}: zero items")
    pixels = np.frombuffer(ibuf, dtype=np.uint8, offset=off).reshape(n, rows * cols)
    features = pixels.astype(np.float64) / 255.0
    labels = np.frombuffer(lbuf, dtype=np.uint8, offset=loff).astype(np.int64)
    return Dataset(features, labels, int(labels.max()) + 1)


def write_idx(images_path, labels_path, images, labels):
    """Write an IDX pair (uint8 images of shape (n, rows, cols), uint8 labels)."""
    images = np.ascontiguousarray(images, dtype=np.uint8)
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    if images.ndim != 3 or labels.shape != (images.shape[0],):
        raise ValueError(
            f"need (n, rows, cols) images and (n,) labels, got "
            f"{images.shape} and {labels.shape}"
        )
    n, rows, cols = images.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, n, rows, cols))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABEL_MAGIC, n))
        f.write(labels.tobytes())


def make_synthetic(seed, n, dims, classes, spread):
    """Gaussian blobs with one fixed center per class.

    Class c sits on axis c mod dims; each wrap around the axes flips the
    sign and then grows the radius, so centers never collide even with more
    classes than dimensions. Labels are assigned round-robin.
    """
    if n < 1 or dims < 1 or classes < 2 or spread < 0:
        raise ValueError(
            f"bad blob shape: n={n} dims={dims} classes={classes} spread={spread}"
        )
    centers = np.zeros((classes, dims))
    for c in range(classes):
        wrap = c // dims
        sign = -1.0 if wrap % 2 else 1.0
        centers[c, c % dims] = sign * 2.0 * (1 + wrap // 2)
    rng = np.random.default_rng(seed)
    labels = np.arange(n, dtype=np.int64) % classes
    features = centers[labels] + spread * rng.standard_normal((n, dims))
    return Dataset(features, labels, classes)


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, ds):
        return Dataset((ds.features - self.mean) / self.std, ds.labels, ds.class_count)


def fit_apply_normalizer(train, others=()):
    """Standardize using train-set statistics only.

    Returns (train', tuple of others', Normalizer). Constant columns keep
    std 1 from column_stats, so they just shift to zero.
    """
    mean, std = numeric.column_stats(train.features)
    norm = Normalizer(mean, std)
    return norm.apply(train), tuple(norm.apply(d) for d in others), norm


def split_validation(ds, holdout, rng):
    """Hold out `holdout` rows chosen by one permutation draw from rng."""
    n = len(ds)
    if not 0 <= holdout < n:
        raise ValueError(f"holdout must be in [0, {n}), got {holdout}")
    perm = rng.permutation(n)
    val_idx = np.sort(perm[:holdout])
    train_idx = np.sort(perm[holdout:])
    return ds.take(train_idx), ds.take(val_idx)


@dataclass
class Partition:
    rank: int
    indices: np.ndarray  # rows of the parent dataset owned by this worker


def _near_equal_quotas(n, workers):
    base, extra = divmod(n, workers)
    return [base + (1 if i < extra else 0) for i in range(workers)]


def partition_dataset(ds, workers, mode, rng, majority_share=0.8):
    """Split a dataset's rows across workers.

    uniform: one shuffle, near-equal contiguous chunks.
    class_biased: each worker fills `majority_share` of its quota from the
        classes assigned to it round-robin, the rest from a shuffled pool of
        whatever remains. Always exhaustive and disjoint.
    strided: row i goes to worker i mod workers, in order, no rng.
    """
    n = len(ds)
    if workers < 1:
        raise ValueError(f"workers must be positive, got {workers}")
    if workers > n:
        raise ValueError(f"cannot split {n} rows across {workers} workers")
    if mode == "uniform":
        perm = rng.permutation(n)
        out, off = [], 0
        for i, q in enumerate(_near_equal_quotas(n, workers)):
            out.append(Partition(i, perm[off : off + q]))
            off += q
        return out
    if mode == "strided":
        return [Partition(i, np.arange(n)[i::workers]) for i in range(workers)]
    if mode == "class_biased":
        return _partition_class_biased(ds, workers, rng, majority_share)
    raise ValueError(f"unknown partition mode {mode!r}")


def _partition_class_biased(ds, workers, rng, q):
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"majority_share must be in [0, 1], got {q}")
    n = len(ds)
    classes = ds.class_count
    perm = rng.permutation(n)
    pools = {c: deque() for c in range(classes)}
    for i in perm:
        pools[int(ds.labels[i])].append(i)
    quotas = _near_equal_quotas(n, workers)
    taken = [[] for _ in range(workers)]
    for w in range(workers):
        majors = [c for c in range(classes) if c % workers == w]
        remaining = int(round(q * quotas[w]))
        while remaining > 0:
            nonempty = [c for c in majors if pools[c]]
            if not nonempty:
                break
            for c in nonempty:  # round-robin across this worker's classes
                if remaining == 0:
                    break
                taken[w].append(pools[c].popleft())
                remaining -= 1
    leftover = [i for c in range(classes) for i in pools[c]]
    rng.shuffle(leftover)
    pos = 0
    out = []
    for w in range(workers):
        need = quotas[w] - len(taken[w])
        taken[w].extend(leftover[pos : pos + need])
        pos += need
        out.append(Partition(w, np.asarray(taken[w], dtype=np.int64)))
    return out


class MinibatchSampler:
    """Without-replacement batches over one partition.

    shuffled: each pass is a fresh permutation from the sampler's rng; a
    batch that hits the end of a pass is completed from the next one, so
    batches always come back full and every index appears exactly once per
    pass.
    sequential: the given order, wrapped, no rng touched.
    """

    def __init__(self, indices, rng, batch, order="shuffled"):
        self.indices = np.asarray(indices, dtype=np.int64).copy()
        if not 1 <= batch <= self.indices.size:
            raise ValueError(
                f"batch {batch} not in [1, {self.indices.size}] for this partition"
            )
        if order not in ("shuffled", "sequential"):
            raise ValueError(f"unknown sample order {order!r}")
        self.rng = rng
        self.batch = batch
        self.order = order
        self._pass = None
        self._cursor = 0

    def _new_pass(self):
        if self.order == "shuffled":
            self._pass = self.rng.permutation(self.indices)
        else:
            self._pass = self.indices
        self._cursor = 0

    def next_indices(self):
        out = np.empty(self.batch, dtype=np.int64)
        filled = 0
        while filled < self.batch:
            if self._pass is None or self._cursor >= self._pass.size:
                self._new_pass()
            take = min(self.batch - filled, self._pass.size - self._cursor)
            out[filled : filled + take] = self._pass[
                self._cursor : self._cursor + take
            ]
            self._cursor += take
            filled += take
        return out

    def sample(self, ds):
        idx = self.next_indices()
        return ds.features[idx], ds.labels[idx]
