"""Lattice-sampled fields on the d-torus with wrapped spline interpolation."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from lyaplab.errors import RankMismatch
from lyaplab.field_calculus.multilinear import index_sets, tree_sum

TWO_PI = 2.0 * np.pi

_KIND_CODES = {"form": 0, "multivector": 1}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


def lattice(dim, resolution):
    """The uniform lattice on [0, 2*pi)^d as a (resolution**dim, dim) array."""
    axis = np.arange(resolution) * (TWO_PI / resolution)
    grids = np.meshgrid(*([axis] * dim), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


class GridField:
    """A k-form / k-multivector sampled on the uniform n^d lattice.

    `values` has shape (n,)*d + (ncomp,), components ordered like
    multilinear.index_sets(d, k).  interp_order 1 gives multilinear
    interpolation (continuous but not differentiable); 3 gives a
    periodic cubic spline (C^2).  The distinction is load-bearing: the
    derivative formulas refuse order-1 data as non-smooth.
    """

    MIN_RESOLUTION = 16

    def __init__(self, dim, resolution, kind, degree, values, interp_order=3):
        if kind not in _KIND_CODES:
            raise ValueError(f"unknown field kind {kind!r}")
        if not 0 <= degree <= dim:
            raise ValueError("degree must lie in [0, dim]")
        if resolution < self.MIN_RESOLUTION:
            raise ValueError(f"resolution {resolution} below minimum {self.MIN_RESOLUTION}")
        if interp_order not in (1, 3):
            raise ValueError("interp_order must be 1 (multilinear) or 3 (cubic)")
        self.dim = int(dim)
        self.resolution = int(resolution)
        self.kind = "form" if degree == 0 else kind
        self.degree = int(degree)
        self.interp_order = int(interp_order)
        vals = np.ascontiguousarray(values, dtype=float)
        expected = (self.resolution,) * self.dim + (len(index_sets(self.dim, self.degree)),)
        if vals.shape != expected:
            raise ValueError(f"values shape {vals.shape} does not match {expected}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("grid field contains non-finite samples")
        self.values = vals
        self._spline = None

    # -- constructors ------------------------------------------------------

    @classmethod
    def scalar(cls, dim, resolution, samples, interp_order=3):
        samples = np.asarray(samples, dtype=float)
        return cls(dim, resolution, "form", 0,
                   samples.reshape((resolution,) * dim + (1,)), interp_order)

    @classmethod
    def constant(cls, dim, resolution, kind, degree, component_values, interp_order=3):
        comp = np.asarray(component_values, dtype=float).ravel()
        shape = (resolution,) * dim + (comp.size,)
        return cls(dim, resolution, kind, degree,
                   np.broadcast_to(comp, shape).copy(), interp_order)

    @classmethod
    def from_function(cls, dim, resolution, kind, degree, fn, interp_order=3):
        vals = np.asarray(fn(lattice(dim, resolution)), dtype=float)
        ncomp = len(index_sets(dim, degree))
        return cls(dim, resolution, kind, degree,
                   vals.reshape((resolution,) * dim + (ncomp,)), interp_order)

    # -- structure -----------------------------------------------------------

    @property
    def ncomp(self):
        return self.values.shape[-1]

    def component(self, key):
        from lyaplab.field_calculus.multilinear import index_position

        return self.values[..., index_position(self.dim, self.degree)[tuple(key)]]

    def as_scalar(self):
        if self.degree != 0:
            raise RankMismatch("not a scalar field")
        return self.values[..., 0]

    def __repr__(self):
        return (f"GridField(dim={self.dim}, n={self.resolution}, {self.kind} "
                f"of degree {self.degree}, order {self.interp_order})")

    def _like(self, values, interp_order=None):
        return GridField(self.dim, self.resolution, self.kind, self.degree,
                         values, interp_order or self.interp_order)

    # -- arithmetic ----------------------------------------------------------

    def _check_match(self, other):
        if (self.dim, self.resolution, self.kind, self.degree) != \
                (other.dim, other.resolution, other.kind, other.degree):
            raise RankMismatch("grid field mismatch in dim/resolution/kind/degree")

    def __add__(self, other):
        self._check_match(other)
        return self._like(self.values + other.values,
                          min(self.interp_order, other.interp_order))

    def __sub__(self, other):
        self._check_match(other)
        return self._like(self.values - other.values,
                          min(self.interp_order, other.interp_order))

    def __mul__(self, other):
        return self._like(self.values * float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return self._like(-self.values)

    # -- evaluation ---------------------------------------------------------

    def evaluate(self, points):
        """Interpolated component values at points (..., d) -> (..., ncomp)."""
        pts = np.asarray(points, dtype=float)
        lead = pts.shape[:-1]
        coords = (pts.reshape(-1, self.dim) * (self.resolution / TWO_PI)).T
        if self.interp_order == 3 and self._spline is None:
            self._spline = [
                ndimage.spline_filter(self.values[..., c], order=3,
                                      mode="grid-wrap")
                for c in range(self.ncomp)
            ]
        out = np.empty((coords.shape[1], self.ncomp))
        for c in range(self.ncomp):
            source = self._spline[c] if self.interp_order == 3 else self.values[..., c]
            out[:, c] = ndimage.map_coordinates(
                source, coords, order=self.interp_order, mode="grid-wrap",
                prefilter=False)
        return out.reshape(lead + (self.ncomp,))

    def mean(self):
        """Lattice average of a scalar field (tree-summed, deterministic)."""
        return tree_sum(self.as_scalar()) / float(self.as_scalar().size)

    def max_abs(self):
        return float(np.max(np.abs(self.values)))

    # -- serialization --------------------------------------------------------
    #
    # Binary layout, little-endian throughout:
    #   6 x int64 header: dim, resolution, kind code (0 form / 1 multivector),
    #                     degree, ncomp, interp_order
    #   then resolution**dim * ncomp float64 samples, row-major (C order).

    def save(self, path):
        header = np.array(
            [self.dim, self.resolution, _KIND_CODES[self.kind], self.degree,
             self.ncomp, self.interp_order], dtype="<i8")
        with open(path, "wb") as fh:
            fh.write(header.tobytes())
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            head = np.frombuffer(fh.read(6 * 8), dtype="<i8")
            if head.size != 6:
                raise ValueError("truncated grid field header")
            dim, res, kind_code, degree, ncomp, order = (int(v) for v in head)
            if kind_code not in _KIND_NAMES:
                raise ValueError(f"unknown kind code {kind_code}")
            data = np.frombuffer(fh.read(), dtype="<f8")
        shape = (res,) * dim + (ncomp,)
        if data.size != np.prod(shape):
            raise ValueError("grid field payload has wrong length")
        return cls(dim, res, _KIND_NAMES[kind_code], degree,
                   data.reshape(shape).copy(), order)
