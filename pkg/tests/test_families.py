"""Tests for perturbation families.

Frozen oracle: for the default bump profile H = (1-|q|^2)^4 on the unit
ball in d = 2, the mixed second derivative is 48 q1 q2 (1-|q|^2)^2, so

    K = (2 pi)^{-2} * 2304 * int ball q1^2 q2^2 (1-|q|^2)^4
      = (2 pi)^{-2} * 2304 * (pi/4) * (1/2) B(3,5)   [polar coordinates]
      = 24 / (35 pi)  ~  0.21825353626292277.
"""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import random_trig_scalar, random_trig_vector
from lyaplab.errors import TangentMismatch
from lyaplab.families import (BumpField, BumpSpec, FamilySpec, PolynomialBump,
                              bump_K, bump_field, first_return_time,
                              flow_family_tangent, make_divfree,
                              tangent_fields)
from lyaplab.field_calculus import (TorusMap, TrigField, flow_integrate,
                                    lattice, torus_integrate)

BUMP_K_EXACT = 24.0 / (35.0 * math.pi)

CAT = np.array([[2, 1], [1, 1]])


def divfree_pair(rng, dim=2, amp=0.3):
    x = make_divfree({(0, 1): random_trig_scalar(rng, dim, n_terms=3, amp=amp)},
                     dim=dim)
    y = make_divfree({(0, 1): random_trig_scalar(rng, dim, n_terms=3, amp=amp)},
                     dim=dim)
    return x, y


class TestMakeDivfree:
    def test_hand_example(self):
        h = TrigField.scalar_harmonic(2, (1, 0), sin_amp=1.0) * \
            TrigField.scalar_harmonic(2, (0, 1), sin_amp=1.0)
        x = make_divfree({(0, 1): h})
        # X = (-sin x1 cos x2, cos x1 sin x2)
        sincos = TrigField.scalar_harmonic(2, (1, 0), sin_amp=1.0) * \
            TrigField.scalar_harmonic(2, (0, 1), cos_amp=1.0)
        cossin = TrigField.scalar_harmonic(2, (1, 0), cos_amp=1.0) * \
            TrigField.scalar_harmonic(2, (0, 1), sin_amp=1.0)
        assert x.component((0,)) == (-1.0 * sincos).component(())
        assert x.component((1,)) == cossin.component(())
        assert x.divergence().components == {}

    def test_zero_stream(self):
        assert make_divfree({}, dim=3).n_terms() == 0

    def test_random_streams_d3_exactly_divfree(self, rng):
        table = {(i, j): random_trig_scalar(rng, 3, n_terms=4)
                 for (i, j) in [(0, 1), (0, 2), (1, 2)]}
        x = make_divfree(table)
        assert x.divergence().components == {}

    def test_rejects_bad_keys(self, rng):
        h = random_trig_scalar(rng, 2)
        with pytest.raises(ValueError, match="0 <= i < j"):
            make_divfree({(1, 0): h})
        with pytest.raises(ValueError, match="scalar"):
            make_divfree({(0, 1): random_trig_vector(rng, 2)})


class TestFamilySpec:
    def test_rejects_compressible_generator(self, rng):
        bad = TrigField.vector(2, [{(1, 0): (0.0, 1.0)}, {}])
        with pytest.raises(ValueError, match="divergence-free"):
            FamilySpec(TorusMap(CAT), bad)

    def test_deformation_at_zero_is_identity(self, rng):
        x, y = divfree_pair(rng)
        fam = FamilySpec(TorusMap(CAT), x, y)
        pts = rng.uniform(0.0, 2 * np.pi, (20, 2))
        assert_allclose(fam.deformation(0.0)(pts), pts, atol=1e-14)

    def test_map_at_zero_is_base(self, rng):
        x, y = divfree_pair(rng)
        f = TorusMap(CAT)
        fam = FamilySpec(f, x, y)
        pts = rng.uniform(0.0, 2 * np.pi, (20, 2))
        assert_allclose(fam.map_at(0.0)(pts), f(pts), atol=1e-14)

    def test_members_preserve_measure(self, rng):
        x, y = divfree_pair(rng)
        fam = FamilySpec(TorusMap.identity(2), x, y)
        g = random_trig_scalar(rng, 2, n_terms=4, max_freq=2)
        for t in (0.1, -0.07):
            h_t = fam.deformation(t)
            composed = g.to_grid(64).__class__.scalar(
                2, 64, g.evaluate_scalar(h_t.tabulate(64)))
            assert abs(torus_integrate(composed) - g.integral()) < 1e-9


class TestTangentFields:
    def test_pure_flow_family(self, rng):
        x, _ = divfree_pair(rng)
        fam = FamilySpec(TorusMap(CAT), x)
        gx, gy = tangent_fields(fam)
        assert gx is x and gy.n_terms() == 0

    def test_composed_family(self, rng):
        x, y = divfree_pair(rng)
        fam = FamilySpec(TorusMap(CAT), x, y)
        gx, gy = tangent_fields(fam)
        assert gx is x and gy is y

    def test_mismatch_detected(self, rng):
        # a family whose clock runs at t + 3t^2: first order agrees with
        # the declared X but the second-order correction gains 6X
        class Reclocked(FamilySpec):
            def deformation(self, t):
                return super().deformation(t + 3.0 * t * t)

        x, y = divfree_pair(rng)
        fam = Reclocked(TorusMap(CAT), x, y)
        with pytest.raises(TangentMismatch):
            tangent_fields(fam)


class TestBump:
    def test_support_and_divergence(self, rng):
        spec = BumpSpec(2, 0.2)
        grid, field = bump_field(spec, resolution=64)
        pts = rng.uniform(0.0, 2 * np.pi, (300, 2))
        dist = np.linalg.norm(
            (pts - spec.center + np.pi) % (2 * np.pi) - np.pi, axis=1)
        outside = field.values(pts[dist >= spec.radius])
        assert np.max(np.abs(outside)) == 0.0
        # Hamiltonian form: trace of the jacobian vanishes identically
        jac = field.jacobian(pts)
        assert np.max(np.abs(np.trace(jac, axis1=-2, axis2=-1))) < 1e-12

    def test_scaling_laws(self):
        sup = {}
        dsup = {}
        for r in (0.2, 0.1):
            field = BumpField(BumpSpec(2, r))
            q = lattice(2, 128)
            sup[r] = np.max(np.abs(field.values(q)))
            dsup[r] = np.max(np.abs(field.jacobian(q)))
        assert 0.4 < sup[0.1] / sup[0.2] < 0.6
        assert 0.8 < dsup[0.1] / dsup[0.2] < 1.2

    def test_grid_matches_evaluator(self):
        spec = BumpSpec(2, 0.3)
        grid, field = bump_field(spec, resolution=64)
        pts = lattice(2, 64)
        assert_allclose(grid.values.reshape(-1, 2), field.values(pts), atol=0.0)

    def test_k_constant_matches_closed_form(self):
        spec = BumpSpec(2, 0.1)
        k_128 = bump_K(spec, resolution=128)
        k_256 = bump_K(spec, resolution=256)
        assert abs(k_128 - k_256) < 1e-4 * abs(k_256)
        assert abs(k_256 - BUMP_K_EXACT) < 1e-4 * BUMP_K_EXACT

    def test_k_zero_profile(self):
        class Flat(PolynomialBump):
            def hessian(self, q):
                return np.zeros(q.shape + (q.shape[-1],))

        assert bump_K(BumpSpec(2, 0.1, profile=Flat()), resolution=64) == 0.0

    def test_k_quadratic_in_profile(self):
        class Scaled(PolynomialBump):
            def hessian(self, q):
                return 3.0 * super().hessian(q)

        base = bump_K(BumpSpec(2, 0.1), resolution=128)
        scaled = bump_K(BumpSpec(2, 0.1, profile=Scaled()), resolution=128)
        assert_allclose(scaled, 9.0 * base, rtol=1e-12)

    def test_radius_bounds(self):
        with pytest.raises(ValueError, match="radius"):
            BumpSpec(2, 2.0)
        with pytest.raises(ValueError, match="radius"):
            BumpSpec(2, 0.0)

    def test_periodic_center_rejected(self):
        # (pi, pi) -> (pi, 0) -> (0, pi) -> (pi, pi) under the cat map
        spec = BumpSpec(2, 0.1)
        with pytest.raises(ValueError, match="periodic"):
            first_return_time(spec, TorusMap(CAT))

    def test_generic_center_return_time(self):
        spec = BumpSpec(2, 0.1, center=(1.0, 2.1))
        t_r = first_return_time(spec, TorusMap(CAT))
        assert t_r is None or t_r >= 2

    def test_flow_of_bump_preserves_volume(self):
        # the bump satisfies the vector-field protocol, so the flow
        # machinery accepts it; volume preservation shows up pointwise
        # as det D(phi_t) = 1
        from lyaplab.field_calculus import flow_with_jacobian

        field = BumpField(BumpSpec(2, 0.4, center=(3.0, 3.0)))
        pts = lattice(2, 32)
        _, jac = flow_with_jacobian(field, 0.5, pts)
        assert np.max(np.abs(np.linalg.det(jac) - 1.0)) < 1e-10


class TestFlowFamilyTangent:
    def test_zero_tangent(self, rng):
        x, xp = divfree_pair(rng)
        bar = flow_family_tangent(x, TrigField.zero(2, "multivector", 1))
        pts = rng.uniform(0.0, 2 * np.pi, (15, 2))
        assert np.max(np.abs(bar.values(pts))) == 0.0

    def test_identity_flow(self, rng):
        _, xp = divfree_pair(rng)
        bar = flow_family_tangent(TrigField.zero(2, "multivector", 1), xp)
        pts = rng.uniform(0.0, 2 * np.pi, (15, 2))
        assert_allclose(bar.values(pts), xp.values(pts), atol=1e-12)

    def test_matches_finite_difference(self, rng):
        x, xp = divfree_pair(rng, amp=0.2)
        bar = flow_family_tangent(x, xp)
        pts = rng.uniform(0.0, 2 * np.pi, (40, 2))
        back = flow_integrate(x, -1.0, pts)
        h = 1e-4
        fwd = flow_integrate(x + h * xp, 1.0, back)
        bwd = flow_integrate(x + (-h) * xp, 1.0, back)
        fd = ((fwd - bwd + np.pi) % (2 * np.pi) - np.pi) / (2 * h)
        assert np.max(np.abs(bar.values(pts) - fd)) < 1e-6

    def test_result_is_divergence_free(self, rng):
        # Xbar averages pushforwards of a div-free field by
        # measure-preserving flows, so it stays div-free; since flowed
        # trig fields are analytic, spectral differentiation of the
        # samples resolves the divergence to near machine precision
        x, xp = divfree_pair(rng, amp=0.25)
        n = 128
        vals = flow_family_tangent(x, xp).to_grid(n).values
        div = np.zeros((n, n), dtype=complex)
        freqs = np.fft.fftfreq(n, d=1.0 / n)
        for axis in range(2):
            shape = [1, 1]
            shape[axis] = n
            k = freqs.reshape(shape)
            div += np.fft.ifftn(1j * k * np.fft.fftn(vals[..., axis]))
        assert np.max(np.abs(div)) < 1e-8
