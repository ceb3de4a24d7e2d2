"""Torus diffeomorphisms and exact flows.

A TorusMap is  f = phi_m o ... o phi_1 o g  where g(p) = L p + u(p) with
L an integer matrix of determinant +-1, u an optional trig displacement,
and each phi_i the time-s_i flow of a trig vector field.  Forward maps,
Jacobians and inverses are all evaluated in batch; inverses use exact
flow reversal and (for the displacement part) Newton iteration seeded
with the exact integer inverse of L.
"""

from __future__ import annotations

import numpy as np

from lyaplab.errors import InverseIterationDiverged
from lyaplab.field_calculus.gridfield import lattice
from lyaplab.field_calculus.trigfield import TWO_PI, TrigField


# ---------------------------------------------------------------------------
# classical 4th-order one-step integration, with an optional variational pass


def _rk4_walk(field, t, points, substeps, jac=None):
    """Integrate dy/dt = X(y) (and dJ/dt = DX(y) J when jac is given)."""
    h = t / substeps
    y = np.asarray(points, dtype=float).copy()
    if jac is None:
        for _ in range(substeps):
            k1 = field.values(y)
            k2 = field.values(y + (0.5 * h) * k1)
            k3 = field.values(y + (0.5 * h) * k2)
            k4 = field.values(y + h * k3)
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        return y
    j = np.asarray(jac, dtype=float).copy()
    for _ in range(substeps):
        k1, m1 = field.vector_with_jacobian(y)
        l1 = m1 @ j
        k2, m2 = field.vector_with_jacobian(y + (0.5 * h) * k1)
        l2 = m2 @ (j + (0.5 * h) * l1)
        k3, m3 = field.vector_with_jacobian(y + (0.5 * h) * k2)
        l3 = m3 @ (j + (0.5 * h) * l2)
        k4, m4 = field.vector_with_jacobian(y + h * k3)
        l4 = m4 @ (j + h * l3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        j = j + (h / 6.0) * (l1 + 2.0 * l2 + 2.0 * l3 + l4)
    return y, j


def calibrate_substeps(field, t, tol=1e-12):
    """Fixed substep count with Richardson-estimated error <= tol per unit time.

    Compares the endpoint at S and 2S substeps on a small probe lattice;
    for a 4th-order step the finer error is about diff/15, and we accept
    once that bound (plus one halving of safety) meets the target.
    """
    if t == 0.0 or field.n_terms() == 0:
        return 1
    speed = max(field.sup_bound(), 1e-12)
    s = max(1, int(np.ceil(2.0 * abs(t) * speed)))
    if hasattr(field, "probe_points"):
        # locally supported fields are invisible to a coarse global
        # lattice; let them nominate points that actually see the field
        probes = field.probe_points()
    else:
        probes = lattice(field.dim, 5 if field.dim <= 3 else 3)
    budget = tol * max(abs(t), 1e-3)
    while s < 4096:
        coarse = _rk4_walk(field, t, probes, s)
        fine = _rk4_walk(field, t, probes, 2 * s)
        if np.max(np.abs(coarse - fine)) / 15.0 <= budget:
            return 2 * s
        s *= 2
    return s


def flow_integrate(field, t, points, substeps=None):
    """The time-t flow of a trig vector field, reduced mod 2*pi."""
    field._require_vector()
    if substeps is None:
        substeps = calibrate_substeps(field, t)
    pts = np.asarray(points, dtype=float)
    if t == 0.0:
        return np.mod(pts, TWO_PI)
    return np.mod(_rk4_walk(field, t, pts, substeps), TWO_PI)


def flow_with_jacobian(field, t, points, substeps=None):
    """Flow endpoint and its derivative D(phi_t) in one variational pass."""
    field._require_vector()
    if substeps is None:
        substeps = calibrate_substeps(field, t)
    pts = np.asarray(points, dtype=float)
    eye = np.broadcast_to(np.eye(field.dim), pts.shape + (field.dim,)).copy()
    if t == 0.0:
        return np.mod(pts, TWO_PI), eye
    y, j = _rk4_walk(field, t, pts, substeps, jac=eye)
    return np.mod(y, TWO_PI), j


class TorusMap:
    """Composition of flows with a (possibly displaced) linear automorphism."""

    def __init__(self, linear, displacement=None, flows=(), check=True,
                 flow_tolerance=1e-12):
        lin = np.asarray(linear, dtype=float)
        if lin.ndim != 2 or lin.shape[0] != lin.shape[1]:
            raise ValueError("linear part must be a square matrix")
        rounded = np.rint(lin)
        if np.max(np.abs(lin - rounded)) > 1e-12:
            raise ValueError("linear part must have integer entries")
        det = round(float(np.linalg.det(rounded)))
        if abs(det) != 1:
            raise ValueError(f"linear part must be unimodular, det={det}")
        self.dim = lin.shape[0]
        self.linear = rounded
        # |det| = 1 with integer entries makes the inverse integer and exact
        self.linear_inverse = np.rint(np.linalg.inv(rounded))

        if displacement is not None:
            displacement._require_vector()
            if displacement.dim != self.dim:
                raise ValueError("displacement dimension mismatch")
        self.displacement = displacement
        self.flows = tuple((f, float(dt)) for f, dt in flows)
        for f, _ in self.flows:
            f._require_vector()
            if f.dim != self.dim:
                raise ValueError("flow field dimension mismatch")
        self.flow_tolerance = float(flow_tolerance)
        self._substeps = tuple(calibrate_substeps(f, dt, tol=self.flow_tolerance)
                               for f, dt in self.flows)
        self._tables = {}

        if check and displacement is not None:
            # sufficient diffeomorphism condition: sup |Du| below the
            # co-norm of L, so Df = L + Du can never drop rank
            du_bound = np.linalg.norm(displacement.derivative_bound(), 2)
            conorm = np.linalg.svd(self.linear, compute_uv=False)[-1]
            if du_bound >= conorm:
                raise ValueError(
                    f"displacement too large for a guaranteed diffeomorphism: "
                    f"sup|Du| <= {du_bound:.3g} vs co-norm {conorm:.3g}")

    @classmethod
    def identity(cls, dim):
        return cls(np.eye(dim, dtype=int))

    def __repr__(self):
        tags = []
        if self.displacement is not None:
            tags.append("displacement")
        if self.flows:
            tags.append(f"{len(self.flows)} flow stage(s)")
        extra = " + " + ", ".join(tags) if tags else ""
        return f"TorusMap(d={self.dim}, linear{extra})"

    # -- forward evaluation ---------------------------------------------------

    def _base(self, pts):
        y = pts @ self.linear.T
        if self.displacement is not None:
            y = y + self.displacement.values(pts)
        return y

    def __call__(self, points):
        pts = np.asarray(points, dtype=float)
        y = self._base(pts)
        for (field, dt), s in zip(self.flows, self._substeps):
            y = _rk4_walk(field, dt, y, s)
        return np.mod(y, TWO_PI)

    def map_with_jacobian(self, points):
        """f(p) and Df(p), batched over points (..., d)."""
        pts = np.asarray(points, dtype=float)
        if self.displacement is not None:
            _, du = self.displacement.vector_with_jacobian(pts)
            jac = self.linear + du
        else:
            jac = np.broadcast_to(self.linear, pts.shape + (self.dim,)).copy()
        y = self._base(pts)
        for (field, dt), s in zip(self.flows, self._substeps):
            y, jac = _rk4_walk(field, dt, y, s, jac=jac)
        return np.mod(y, TWO_PI), jac

    def jacobian(self, points):
        return self.map_with_jacobian(points)[1]

    # -- inverse evaluation -----------------------------------------------------

    def _base_inverse(self, targets):
        q = targets @ self.linear_inverse.T
        if self.displacement is None:
            return q
        # Newton on  L q + u(q) = target, seeded with the exact linear inverse
        for _ in range(100):
            val, du = self.displacement.vector_with_jacobian(q)
            res = q @ self.linear.T + val - targets
            if np.max(np.abs(res)) < 1e-12:
                return q
            q = q - np.linalg.solve(self.linear + du, res[..., None])[..., 0]
        raise InverseIterationDiverged(
            "preimage Newton iteration did not reach 1e-12 in 100 steps")

    def inverse(self, points):
        pts = np.asarray(points, dtype=float)
        y = pts.copy()
        for (field, dt), s in zip(reversed(self.flows), reversed(self._substeps)):
            y = _rk4_walk(field, -dt, y, s)
        return np.mod(self._base_inverse(y), TWO_PI)

    def inverse_with_jacobian(self, points):
        """f^{-1}(p) together with D(f^{-1})(p), via reversed variational flows."""
        pts = np.asarray(points, dtype=float)
        y = pts.copy()
        jac = np.broadcast_to(np.eye(self.dim), pts.shape + (self.dim,)).copy()
        for (field, dt), s in zip(reversed(self.flows), reversed(self._substeps)):
            y, jac = _rk4_walk(field, -dt, y, s, jac=jac)
        q = self._base_inverse(y)
        if self.displacement is not None:
            _, du = self.displacement.vector_with_jacobian(q)
            base_jac = self.linear + du
        else:
            base_jac = np.broadcast_to(self.linear, pts.shape + (self.dim,))
        jac = np.linalg.solve(base_jac, jac)
        return np.mod(q, TWO_PI), jac

    # -- lattice tabulation --------------------------------------------------

    def tabulate(self, resolution):
        """Image of the uniform lattice under the map (cached per resolution)."""
        if resolution not in self._tables:
            self._tables[resolution] = self(lattice(self.dim, resolution))
        return self._tables[resolution]


def flow_map(field, t, resolution):
    """The time-t flow of X as a TorusMap, tabulated on the given lattice."""
    fmap = TorusMap(np.eye(field.dim, dtype=int), flows=((field, t),))
    fmap.tabulate(resolution)
    return fmap
