"""Shared helpers for the test suite: seeded random instance generators."""

import numpy as np
import pytest

from lyaplab.field_calculus import TrigField, index_sets

# the seeded matrix-instance generators live in the package proper (the CLI
# experiment suites draw from the same pool); re-exported here for tests
from lyaplab.matrix_lab import (random_matrix_family,          # noqa: F401
                                random_real_spectrum_matrix)   # noqa: F401


def random_term_table(rng, dim, n_terms=4, max_freq=2, amp=1.0):
    """A random trig-polynomial term table with bounded frequencies."""
    table = {}
    for _ in range(n_terms):
        freq = tuple(int(f) for f in rng.integers(-max_freq, max_freq + 1, dim))
        if not any(freq):
            freq = (1,) + (0,) * (dim - 1)
        c, s = rng.normal(scale=amp, size=2)
        table[freq] = (float(c), float(s))
    return table


def random_trig_scalar(rng, dim, n_terms=4, max_freq=2, amp=1.0):
    return TrigField.scalar(dim, random_term_table(rng, dim, n_terms, max_freq, amp))


def random_trig_vector(rng, dim, n_terms=3, max_freq=2, amp=1.0):
    return TrigField.vector(
        dim, [random_term_table(rng, dim, n_terms, max_freq, amp) for _ in range(dim)])


def random_trig_field(rng, dim, kind, degree, n_terms=3, max_freq=2, amp=1.0):
    comps = {key: random_term_table(rng, dim, n_terms, max_freq, amp)
             for key in index_sets(dim, degree)}
    return TrigField(dim, kind, degree, comps)


@pytest.fixture
def rng():
    return np.random.default_rng(20260814)
