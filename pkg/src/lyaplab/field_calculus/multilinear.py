"""Sorted-tuple index bookkeeping and batched minor matrices for wedge powers."""

from functools import lru_cache
from itertools import combinations

import numpy as np


@lru_cache(maxsize=None)
def index_sets(dim, k):
    """All strictly increasing k-tuples over range(dim), lexicographic."""
    return tuple(combinations(range(dim), k))


@lru_cache(maxsize=None)
def index_position(dim, k):
    """Lookup table: sorted k-tuple -> position in index_sets(dim, k)."""
    return {key: i for i, key in enumerate(index_sets(dim, k))}


def insert_index(key, j):
    """Wedge e_j into the sorted tuple `key`.

    Returns (sign, new_key) with e_j ^ e_key = sign * e_new_key, or None
    when j already occurs (the wedge vanishes).
    """
    if j in key:
        return None
    pos = sum(1 for i in key if i < j)
    return (-1) ** pos, key[:pos] + (j,) + key[pos:]


def replace_index(key, m, j):
    """Replace key[m] by j and resort.

    Returns (sign, new_key) where the substituted tuple equals
    sign * e_new_key, or None when the substitution creates a repeated
    index.
    """
    if j == key[m]:
        return 1, key
    if j in key:
        return None
    rest = key[:m] + key[m + 1:]
    pos = sum(1 for i in rest if i < j)
    return (-1) ** (m + pos), rest[:pos] + (j,) + rest[pos:]


def wedge_matrix(mat, k):
    """Action of the k-th wedge power of mat on wedge components.

    mat has shape (..., d, d); the result W has shape (..., C, C) with
    C = binom(d, k) and W[..., A, B] = det(mat[rows A, cols B]), rows and
    columns ordered like index_sets(d, k).  Pushing a multivector forward
    is then einsum('...ab,...b->...a', W, V); pulling a form back is
    einsum('...ab,...a->...b', W, omega).
    """
    mat = np.asarray(mat, dtype=float)
    if k == 1:
        return mat.copy()
    if k == 0:
        return np.ones(mat.shape[:-2] + (1, 1))
    keys = index_sets(mat.shape[-1], k)
    out = np.empty(mat.shape[:-2] + (len(keys), len(keys)))
    for a, rows in enumerate(keys):
        sub = mat[..., list(rows), :]
        for b, cols in enumerate(keys):
            out[..., a, b] = np.linalg.det(sub[..., :, list(cols)])
    return out


def tree_sum(values):
    """Deterministic reduction of a float array.

    numpy's sum over a fixed memory layout uses pairwise (tree)
    summation and never depends on thread count, which is exactly the
    determinism contract the lattice integrals need.
    """
    return float(np.sum(np.asarray(values, dtype=float).ravel()))
