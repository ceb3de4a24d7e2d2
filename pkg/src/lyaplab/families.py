"""One-parameter families of volume-preserving torus maps.

A family is specified by its generators: divergence-free vector fields
X and Y composed as

    h_t = phi_t^X o phi_{t^2/2}^Y,        f_t = h_t o f.

This normal form pins the first two t-derivatives of the family (X and
the second-order correction Z = Y + DX.X) while keeping every member
exactly volume-preserving.  The module also builds two special
perturbations used by the second-derivative experiments:

  * a Hamiltonian bump supported in a small ball, rotating the
    (x_i, x_j) plane, with the r^2 H(p/r) scaling that makes its
    first derivative r-independent;
  * the averaged pushforward  integral_0^1 (phi_s)_* X' ds  that turns a
    perturbation of a flow generator into a perturbation of its time-one
    map.
"""

from __future__ import annotations

import math

import numpy as np

from lyaplab.errors import TangentMismatch
from lyaplab.field_calculus import (GridField, TorusMap, TrigField, TWO_PI,
                                    calibrate_substeps, lattice)
from lyaplab.field_calculus.torusmap import _rk4_walk


def _wrap(delta):
    """Reduce displacement vectors to the nearest image."""
    return (delta + np.pi) % TWO_PI - np.pi


# ---------------------------------------------------------------------------
# divergence-free construction


def make_divfree(stream_components, dim=None):
    """Assemble a divergence-free field from antisymmetric stream functions.

    `stream_components` maps axis pairs (i, j) with i < j to scalar trig
    fields H_ij; the result is

        X = sum_{i<j}  (-dH_ij/dx_j) e_i  +  (dH_ij/dx_i) e_j ,

    whose divergence cancels pairwise by equality of mixed partials — an
    exact coefficient-level identity, not a numerical one.  Every
    divergence-free trig field arises this way (up to a constant drift),
    so this is the generic source of admissible perturbations.
    """
    items = sorted(stream_components.items())
    if not items and dim is None:
        raise ValueError("empty stream table needs an explicit dim")
    if dim is None:
        dim = items[0][1].dim
    field = TrigField.zero(dim, "multivector", 1)
    for (i, j), h in items:
        if not 0 <= i < j < dim:
            raise ValueError(f"stream key must have 0 <= i < j < dim, got {(i, j)}")
        if h.kind != "form" or h.degree != 0 or h.dim != dim:
            raise ValueError(f"stream function for {(i, j)} must be a scalar "
                             f"trig field of dimension {dim}")
        tables = [{} for _ in range(dim)]
        tables[i] = (-1.0 * h.partial(j)).component(())
        tables[j] = h.partial(i).component(())
        field = field + TrigField.vector(dim, tables)
    return field


def random_divfree(rng, dim=2, n_terms=3, max_freq=2, amp=0.05):
    """A seeded random divergence-free trig field (stream functions on
    every axis pair).  Deterministic given the rng state; shared by the
    test suite and the CLI experiment runner."""
    streams = {}
    for i in range(dim):
        for j in range(i + 1, dim):
            table = {}
            for _ in range(n_terms):
                freq = tuple(int(f) for f in
                             rng.integers(-max_freq, max_freq + 1, dim))
                if not any(freq):
                    freq = (1,) + (0,) * (dim - 1)
                c, s = rng.normal(scale=amp, size=2)
                table[freq] = (float(c), float(s))
            streams[(i, j)] = TrigField.scalar(dim, table)
    return make_divfree(streams, dim=dim)


# ---------------------------------------------------------------------------
# the composed family


class FamilySpec:
    """A family f_t = phi_t^X o phi_{t^2/2}^Y o f of volume-preserving maps.

    Both generators must be divergence-free at the coefficient level;
    this is what keeps every f_t in the measure-preserving class rather
    than merely close to it.
    """

    def __init__(self, base_map, generator_x, generator_y=None):
        dim = base_map.dim
        if generator_y is None:
            generator_y = TrigField.zero(dim, "multivector", 1)
        for name, g in (("generator_x", generator_x), ("generator_y", generator_y)):
            g._require_vector()
            if g.dim != dim:
                raise ValueError(f"{name} dimension {g.dim} != map dimension {dim}")
            if g.divergence().components:
                raise ValueError(f"{name} is not divergence-free at the "
                                 "coefficient level")
        self.base_map = base_map
        self.generator_x = generator_x
        self.generator_y = generator_y
        self.dim = dim

    def _stages(self, t):
        stages = []
        if t != 0.0:
            if self.generator_y.n_terms():
                stages.append((self.generator_y, 0.5 * t * t))
            if self.generator_x.n_terms():
                stages.append((self.generator_x, t))
        return tuple(stages)

    def deformation(self, t, flow_tolerance=1e-12):
        """The deformation h_t alone, as a map of the torus."""
        return TorusMap(np.eye(self.dim, dtype=int), flows=self._stages(t),
                        flow_tolerance=flow_tolerance)

    def map_at(self, t, flow_tolerance=1e-12):
        """The family member f_t = h_t o f.

        `flow_tolerance` tunes the stage integrator accuracy; loosening
        it (e.g. to 1e-9 for finite-difference sweeps whose own noise
        floor is far larger) buys a substantial speedup.
        """
        f = self.base_map
        return TorusMap(f.linear, displacement=f.displacement,
                        flows=f.flows + self._stages(t), check=False,
                        flow_tolerance=flow_tolerance)


def tangent_fields(fam, step=1e-3, probe_resolution=6):
    """Return (X, Y) after checking them against the family itself.

    The declared generators are compared with a finite-difference
    extraction from h_t at the given base step:

        X = lim (h_t(p) - h_{-t}(p)) / 2t,
        Z = lim (h_t(p) + h_{-t}(p) - 2p) / t^2,     Y = Z - DX.X.

    Raw one-sided quotients carry O(t) error — about 1e-3 here, far too
    coarse to certify anything — so both extractions are Richardson-
    extrapolated (steps t, t/2, t/4) down to O(t^3) before comparing.
    A disagreement beyond 1e-6 means the composition rule and the
    declared generators do not describe the same family.
    """
    probes = lattice(fam.dim, probe_resolution)

    def quotients(t):
        u_fwd = _wrap(fam.deformation(t)(probes) - probes)
        u_bwd = _wrap(fam.deformation(-t)(probes) - probes)
        return (u_fwd - u_bwd) / (2.0 * t), (u_fwd + u_bwd) / (t * t)

    x_1, z_1 = quotients(step)
    x_2, z_2 = quotients(step / 2.0)
    x_4, z_4 = quotients(step / 4.0)
    # central X quotient has even error: one t^2 elimination suffices
    x_fd = (4.0 * x_2 - x_1) / 3.0
    # symmetric Z quotient still has an O(t) term: eliminate t then t^2
    z_a = 2.0 * z_2 - z_1
    z_b = 2.0 * z_4 - z_2
    z_fd = (4.0 * z_b - z_a) / 3.0

    x_val, x_jac = fam.generator_x.vector_with_jacobian(probes)
    z_val = np.einsum("pab,pb->pa", x_jac, x_val) + fam.generator_y.values(probes)
    worst = max(float(np.max(np.abs(x_fd - x_val))),
                float(np.max(np.abs(z_fd - z_val))))
    if worst > 1e-6:
        raise TangentMismatch(
            f"finite-difference tangents disagree with declared generators: "
            f"max residual {worst:.3e} > 1e-06 at step {step:g}")
    return fam.generator_x, fam.generator_y


# ---------------------------------------------------------------------------
# the Hamiltonian bump


class PolynomialBump:
    """H(q) = (1 - |q|^2)^4 inside the unit ball, 0 outside (C^3 overall)."""

    def _w(self, q):
        return np.maximum(0.0, 1.0 - np.sum(q * q, axis=-1))

    def value(self, q):
        return self._w(q) ** 4

    def gradient(self, q):
        w3 = self._w(q) ** 3
        return -8.0 * q * w3[..., None]

    def hessian(self, q):
        w = self._w(q)
        dim = q.shape[-1]
        out = 48.0 * (w * w)[..., None, None] * (q[..., :, None] * q[..., None, :])
        out -= (8.0 * w ** 3)[..., None, None] * np.eye(dim)
        return out


class BumpSpec:
    """A radius-r Hamiltonian bump rotating the (axis_i, axis_j) plane."""

    def __init__(self, dim, radius, center=None, axes=(0, 1), profile=None):
        if not 0.0 < radius < 0.25 * TWO_PI:
            raise ValueError("radius must lie in (0, pi/2) so the support "
                             "ball sits inside one chart")
        i, j = axes
        if not 0 <= i < j < dim:
            raise ValueError(f"mixing axes must satisfy 0 <= i < j < dim, got {axes}")
        self.dim = dim
        self.radius = float(radius)
        self.center = np.full(dim, np.pi) if center is None else \
            np.mod(np.asarray(center, dtype=float), TWO_PI)
        self.axes = (i, j)
        self.profile = PolynomialBump() if profile is None else profile


class BumpField:
    """Exact evaluator for X_r = -dH_r/dx_j e_i + dH_r/dx_i e_j.

    H_r(p) = r^2 H((p - center)/r), so the field is O(r) while its
    derivative stays O(1).  Implements the same informal vector-field
    protocol as a trig field (values / vector_with_jacobian / sup_bound /
    n_terms) so flows and Lie derivatives accept it unchanged.
    """

    def __init__(self, spec):
        self.spec = spec
        self.dim = spec.dim

    def _local(self, points):
        return _wrap(np.asarray(points, dtype=float) - self.spec.center) / self.spec.radius

    def values(self, points):
        q = self._local(points)
        grad = self.spec.profile.gradient(q)
        i, j = self.spec.axes
        out = np.zeros(q.shape)
        out[..., i] = -self.spec.radius * grad[..., j]
        out[..., j] = self.spec.radius * grad[..., i]
        return out

    def jacobian(self, points):
        q = self._local(points)
        hess = self.spec.profile.hessian(q)
        i, j = self.spec.axes
        out = np.zeros(q.shape + (self.dim,))
        out[..., i, :] = -hess[..., j, :]
        out[..., j, :] = hess[..., i, :]
        return out

    def vector_with_jacobian(self, points):
        return self.values(points), self.jacobian(points)

    def sup_bound(self):
        # radial probe of the profile gradient; exact enough for step control
        q = np.linspace(0.0, 1.0, 513)[:, None] * np.ones(self.dim) / math.sqrt(self.dim)
        peak = float(np.max(np.linalg.norm(self.spec.profile.gradient(q), axis=-1)))
        return self.spec.radius * peak

    def n_terms(self):
        return 1

    def divergence(self):
        # rotated gradient of a stream function: divergence-free exactly
        return TrigField.zero(self.dim, "multivector", 0)

    def probe_points(self):
        # step-size calibration must sample inside the support ball
        return self.spec.center + self.spec.radius * _probe_directions(
            self.dim, n_radial=9, n_sphere=16)

    def _require_vector(self):
        return None

    def to_grid(self, resolution, interp_order=3):
        vals = self.values(lattice(self.dim, resolution))
        shape = (resolution,) * self.dim + (self.dim,)
        return GridField(self.dim, resolution, "multivector", 1,
                         vals.reshape(shape), interp_order)


def bump_field(spec, resolution=256):
    """Sampled bump field plus its exact evaluator.

    Before returning, the advertised scaling laws are spot-checked by
    rebuilding the bump at radius r/2 on the same relative probe set:
    sup|X_r| must halve (ratio in [0.4, 0.6]) while sup|DX_r| must stay
    put (ratio in [0.8, 1.2]).  This guards plug-in profiles whose
    gradient/hessian units are wrong.
    """
    field = BumpField(spec)
    half = BumpField(BumpSpec(spec.dim, spec.radius / 2.0, spec.center,
                              spec.axes, spec.profile))
    rng_pts = spec.center + spec.radius * _probe_directions(spec.dim)
    half_pts = spec.center + (spec.radius / 2.0) * _probe_directions(spec.dim)
    ratio_val = np.max(np.abs(half.values(half_pts))) / \
        max(np.max(np.abs(field.values(rng_pts))), 1e-300)
    ratio_jac = np.max(np.abs(half.jacobian(half_pts))) / \
        max(np.max(np.abs(field.jacobian(rng_pts))), 1e-300)
    if not 0.4 <= ratio_val <= 0.6:
        raise AssertionError(f"bump field does not scale like O(r): "
                             f"halving ratio {ratio_val:.3f}")
    if not 0.8 <= ratio_jac <= 1.2:
        raise AssertionError(f"bump derivative does not scale like O(1): "
                             f"halving ratio {ratio_jac:.3f}")
    return field.to_grid(resolution), field


def _probe_directions(dim, n_radial=33, n_sphere=64):
    """Points q with |q| <= 1 used for scaling spot-checks."""
    rng = np.random.default_rng(7)
    dirs = rng.standard_normal((n_sphere, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = np.linspace(0.0, 1.0, n_radial)
    return (radii[:, None, None] * dirs).reshape(-1, dim)


def bump_K(spec, resolution=256):
    """The profile constant  K = (2 pi)^{-d} int_{|q|<1} [d^2 H / dq_i dq_j]^2 dq.

    Midpoint rule on the cube [-1,1]^d; the integrand vanishes to high
    order at the ball boundary, so refinement converges at second order
    and 256 cells per axis gives far more than the four significant
    digits the experiments need.
    """
    d = spec.dim
    centers = (np.arange(resolution) + 0.5) / resolution * 2.0 - 1.0
    q = np.stack(np.meshgrid(*([centers] * d), indexing="ij"),
                 axis=-1).reshape(-1, d)
    q = q[np.sum(q * q, axis=1) < 1.0]
    i, j = spec.axes
    mixed = spec.profile.hessian(q)[..., i, j]
    cell = (2.0 / resolution) ** d
    return float(np.sum(mixed * mixed) * cell / TWO_PI ** d)


def first_return_time(spec, torus_map, max_iter=20):
    """First k <= max_iter with f^k(center) back inside the doubled ball.

    Returns None when the orbit stays away for the whole horizon.  A
    center that is outright periodic within the horizon is rejected: the
    bump argument needs the support to wander before it can return.
    """
    p = spec.center[None, :].copy()
    t_r = None
    for k in range(1, max_iter + 1):
        p = torus_map(p)
        gap = float(np.max(np.abs(_wrap(p - spec.center))))
        if gap < 1e-9:
            raise ValueError(f"bump center is periodic (period {k}) under "
                             "the base map; pick a generic center")
        if t_r is None and gap <= 2.0 * spec.radius:
            t_r = k
    return t_r


# ---------------------------------------------------------------------------
# averaged pushforward for flow families


class FlowFamilyTangent:
    """Evaluator for  Xbar(p) = integral_0^1 (phi_s)_* X' (p) ds.

    Marches q(s) = phi_{-s}(p) and A(s) = D phi_{-s}(p) backwards through
    the Gauss-Legendre nodes (the variational pass reuses the flow
    integrator), accumulating  w_s A(s)^{-1} X'(q(s)); A^{-1} is exactly
    D phi_s at the pulled-back point, so no second flow is needed.
    """

    def __init__(self, generator, tangent, nodes=64):
        generator._require_vector()
        tangent._require_vector()
        if generator.dim != tangent.dim:
            raise ValueError("generator and tangent dimensions differ")
        self.dim = generator.dim
        self.generator = generator
        self.tangent = tangent
        x, w = np.polynomial.legendre.leggauss(nodes)
        self._nodes = 0.5 * (x + 1.0)
        self._weights = 0.5 * w
        self._per_unit = calibrate_substeps(generator, 1.0)

    def values(self, points):
        pts = np.asarray(points, dtype=float)
        q = pts.copy()
        a = np.broadcast_to(np.eye(self.dim), pts.shape + (self.dim,)).copy()
        acc = np.zeros(pts.shape)
        s_prev = 0.0
        for s, w in zip(self._nodes, self._weights):
            ds = s - s_prev
            if self.generator.n_terms():
                hops = max(1, int(np.ceil(ds * self._per_unit)))
                q, a = _rk4_walk(self.generator, -ds, q, hops, jac=a)
            acc += w * np.linalg.solve(a, self.tangent.values(q)[..., None])[..., 0]
            s_prev = s
        return acc

    def to_grid(self, resolution, interp_order=3):
        vals = self.values(lattice(self.dim, resolution))
        shape = (resolution,) * self.dim + (self.dim,)
        return GridField(self.dim, resolution, "multivector", 1,
                         vals.reshape(shape), interp_order)


def flow_family_tangent(generator, tangent, nodes=64):
    """Perturbation of the time-one map induced by perturbing the generator.

    Perturbing a flow generator X to X + t X' perturbs the time-one map
    phi_1^{X+tX'} along the averaged pushforward of X' — this evaluator.
    """
    return FlowFamilyTangent(generator, tangent, nodes=nodes)
