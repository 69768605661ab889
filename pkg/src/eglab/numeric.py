"""Dense float64 linear algebra helpers.

Matrices are plain 2-D numpy arrays of float64 in row-major (C) order.
Everything downstream (the MLP engine, the protocols) assumes that layout.
"""

import numpy as np


def as_matrix(a):
    """Coerce to a 2-D float64 array, rejecting anything else."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got ndim={a.ndim}")
    return a


def matmul(a, b):
    """Matrix product a @ b with an explicit inner-dimension check."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} by {b.shape}")
    return a @ b


def column_stats(a):
    """Per-column mean and population standard deviation.

    Columns with zero spread get std 1.0 so that standardizing with the
    returned stats never divides by zero.
    """
    a = as_matrix(a)
    if a.shape[0] == 0:
        raise ValueError("column_stats of an empty matrix")
    mean = a.mean(axis=0)
    std = a.std(axis=0)  # population convention, ddof=0
    std = np.where(std == 0.0, 1.0, std)
    return mean, std
