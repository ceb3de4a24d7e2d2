"""Tests for the torus calculus layer.

Independent oracles used here:
  * direct numpy evaluation of trig sums at random points (against the
    coefficient-level arithmetic),
  * central finite differences of flow pullbacks/pushforwards (against
    the exact Lie derivatives),
  * Cauchy-Binet and hand-computed determinant identities (against the
    wedge machinery),
  * lattice sampling (against exact Fourier zero modes).
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import (random_term_table, random_trig_field,
                      random_trig_scalar, random_trig_vector)
from lyaplab.errors import InverseIterationDiverged, RankMismatch
from lyaplab.field_calculus import (GridField, TorusMap, TrigField,
                                    flow_integrate, flow_map,
                                    flow_with_jacobian, interior_product,
                                    lattice, lie_derivative, pair,
                                    pullback_form, pushforward_multivector,
                                    torus_integrate, wedge_matrix)

TWO_PI = 2.0 * np.pi

CAT = np.array([[2, 1], [1, 1]])


def wrap_diff(a, b):
    """Nearest-image difference of torus points."""
    return (a - b + np.pi) % TWO_PI - np.pi


# ---------------------------------------------------------------------------
# trig polynomials


class TestTrigField:
    def test_evaluation_matches_direct_sum(self, rng):
        f = random_trig_scalar(rng, 3, n_terms=6)
        pts = rng.uniform(0.0, TWO_PI, (50, 3))
        direct = np.zeros(50)
        for n, (c, s) in f.component(()).items():
            phase = pts @ np.array(n, dtype=float)
            direct += c * np.cos(phase) + s * np.sin(phase)
        assert_allclose(f.evaluate_scalar(pts), direct, atol=1e-13)

    def test_product_of_sines(self):
        # sin(x1)^2 = 1/2 - cos(2 x1)/2
        f = TrigField.scalar_harmonic(2, (1, 0), sin_amp=1.0)
        sq = f * f
        assert sq.component(()) == {(0, 0): (0.5, 0.0), (2, 0): (-0.5, 0.0)}

    def test_product_matches_pointwise(self, rng):
        f = random_trig_scalar(rng, 2, n_terms=5)
        g = random_trig_scalar(rng, 2, n_terms=5)
        pts = rng.uniform(0.0, TWO_PI, (40, 2))
        assert_allclose((f * g).evaluate_scalar(pts),
                        f.evaluate_scalar(pts) * g.evaluate_scalar(pts),
                        atol=1e-12)

    def test_partial_derivative_matches_fd(self, rng):
        f = random_trig_scalar(rng, 2, n_terms=5)
        pts = rng.uniform(0.0, TWO_PI, (30, 2))
        h = 1e-6
        for axis in range(2):
            shift = np.zeros(2)
            shift[axis] = h
            fd = (f.evaluate_scalar(pts + shift) - f.evaluate_scalar(pts - shift)) / (2 * h)
            assert np.max(np.abs(f.partial(axis).evaluate_scalar(pts) - fd)) < 1e-7

    def test_negative_frequency_canonicalization(self):
        # cos(-n.x) = cos(n.x), sin(-n.x) = -sin(n.x)
        f = TrigField.scalar(2, {(-1, 2): (1.0, 3.0)})
        assert f.component(()) == {(1, -2): (1.0, -3.0)}

    def test_d_of_d_is_zero(self, rng):
        for dim, k in [(2, 0), (3, 0), (3, 1), (4, 1)]:
            omega = random_trig_field(rng, dim, "form", k)
            dd = omega.exterior_derivative().exterior_derivative()
            worst = max((abs(c) + abs(s) for t in dd.components.values()
                         for c, s in t.values()), default=0.0)
            assert worst <= 1e-13

    def test_lie_commutes_with_d_on_scalars(self, rng):
        x = random_trig_vector(rng, 2)
        g = random_trig_scalar(rng, 2)
        left = lie_derivative(x, g.exterior_derivative())
        right = lie_derivative(x, g).exterior_derivative()
        diff = left - right
        worst = max((abs(c) + abs(s) for t in diff.components.values()
                     for c, s in t.values()), default=0.0)
        assert worst <= 1e-13

    def test_text_round_trip(self, rng, tmp_path):
        f = random_trig_field(rng, 3, "multivector", 2, n_terms=4)
        path = tmp_path / "field.txt"
        f.save_text(path)
        g = TrigField.load_text(path)
        assert g.dim == f.dim and g.kind == f.kind and g.degree == f.degree
        assert g.components == f.components

    def test_divergence_of_stream_function_field(self):
        # X = (-dH/dx2, dH/dx1) has exactly zero divergence
        h = TrigField.scalar_harmonic(2, (1, 0), sin_amp=1.0) * \
            TrigField.scalar_harmonic(2, (0, 1), sin_amp=1.0)
        x = TrigField.vector(2, [(-1.0 * h.partial(1)).component(()),
                                 h.partial(0).component(())])
        assert x.divergence().components == {}


# ---------------------------------------------------------------------------
# Lie derivatives


class TestLieDerivative:
    def test_translation_invariance(self):
        x = TrigField.constant(2, "multivector", 1, [0.7, -0.3])
        omega = TrigField.constant(2, "form", 1, [1.0, 2.0])
        assert lie_derivative(x, omega).components == {}

    def test_hand_computed_hamiltonian_example(self):
        # X = (-sin x1 cos x2, cos x1 sin x2), omega = dx1:
        # L_X omega = d(omega(X)) = -cos x1 cos x2 dx1 + sin x1 sin x2 dx2
        sin1 = TrigField.scalar_harmonic(2, (1, 0), sin_amp=1.0)
        sin2 = TrigField.scalar_harmonic(2, (0, 1), sin_amp=1.0)
        stream = sin1 * sin2
        x = TrigField.vector(2, [(-1.0 * stream.partial(1)).component(()),
                                 stream.partial(0).component(())])
        omega = TrigField.constant(2, "form", 1, [1.0, 0.0])
        lie = lie_derivative(x, omega)
        cos1cos2 = TrigField.scalar_harmonic(2, (1, 0), cos_amp=1.0) * \
            TrigField.scalar_harmonic(2, (0, 1), cos_amp=1.0)
        assert lie.component((0,)) == (-1.0 * cos1cos2).component(())
        assert lie.component((1,)) == (sin1 * sin2).component(())

    def test_leibniz_rule_scalar_times_form(self, rng):
        x = random_trig_vector(rng, 2)
        f = random_trig_scalar(rng, 2)
        omega = random_trig_field(rng, 2, "form", 1)
        left = lie_derivative(x, f * omega)
        right = lie_derivative(x, f) * omega + f * lie_derivative(x, omega)
        diff = left - right
        worst = max((abs(c) + abs(s) for t in diff.components.values()
                     for c, s in t.values()), default=0.0)
        assert worst < 1e-12

    def test_pairing_leibniz(self, rng):
        # X . grad(omega(V)) = (L_X omega)(V) + omega(L_X V)
        for dim, k in [(2, 1), (3, 1), (3, 2)]:
            x = random_trig_vector(rng, dim, n_terms=2)
            omega = random_trig_field(rng, dim, "form", k, n_terms=2)
            v = random_trig_field(rng, dim, "multivector", k, n_terms=2)
            left = lie_derivative(x, pair(omega, v))
            right = pair(lie_derivative(x, omega), v) + pair(omega, lie_derivative(x, v))
            pts = lattice(dim, 8)
            assert np.max(np.abs(left.evaluate(pts) - right.evaluate(pts))) < 1e-10

    def _flow_pullback(self, x, t, omega, probes):
        y, jac = flow_with_jacobian(x, t, probes)
        w = wedge_matrix(jac, omega.degree)
        return np.einsum("xab,xa->xb", w, omega.evaluate(y))

    def test_form_lie_matches_flow_derivative(self, rng):
        # L_X omega = d/dt phi_t^* omega at t = 0
        for dim, k in [(2, 1), (3, 2)]:
            x = random_trig_vector(rng, dim, n_terms=2)
            omega = random_trig_field(rng, dim, "form", k, n_terms=2)
            probes = rng.uniform(0.0, TWO_PI, (25, dim))
            lie = lie_derivative(x, omega).evaluate(probes)
            h = 1e-4
            fd = (self._flow_pullback(x, h, omega, probes)
                  - self._flow_pullback(x, -h, omega, probes)) / (2 * h)
            assert np.max(np.abs(lie - fd)) < 1e-6 * (1.0 + np.max(np.abs(lie)))

    def _flow_pushback(self, x, t, v, probes):
        y = flow_integrate(x, t, probes)
        _, jac = flow_with_jacobian(x, -t, y)
        w = wedge_matrix(jac, v.degree)
        return np.einsum("xab,xb->xa", w, v.evaluate(y))

    def test_multivector_lie_matches_flow_derivative(self, rng):
        # L_X V = d/dt (phi_{-t})_* V at t = 0
        for dim, k in [(2, 1), (3, 2)]:
            x = random_trig_vector(rng, dim, n_terms=2)
            v = random_trig_field(rng, dim, "multivector", k, n_terms=2)
            probes = rng.uniform(0.0, TWO_PI, (25, dim))
            lie = lie_derivative(x, v).evaluate(probes)
            h = 1e-4
            fd = (self._flow_pushback(x, h, v, probes)
                  - self._flow_pushback(x, -h, v, probes)) / (2 * h)
            assert np.max(np.abs(lie - fd)) < 1e-6 * (1.0 + np.max(np.abs(lie)))

    def test_grid_path_agrees_with_exact_path(self, rng):
        for kind, k in [("form", 1), ("multivector", 1), ("form", 0)]:
            x = random_trig_vector(rng, 2, n_terms=2)
            field = random_trig_field(rng, 2, kind, k, n_terms=3)
            exact = lie_derivative(x, field).to_grid(64)
            sampled = lie_derivative(x, field.to_grid(64))
            scale = 1.0 + np.max(np.abs(exact.values))
            assert np.max(np.abs(exact.values - sampled.values)) < 1e-3 * scale

    def test_rank_mismatch_rejected(self, rng):
        x = random_trig_vector(rng, 2)
        with pytest.raises(RankMismatch):
            lie_derivative(x, random_trig_scalar(rng, 3))
        with pytest.raises(RankMismatch):
            lie_derivative(random_trig_scalar(rng, 2), random_trig_scalar(rng, 2))


# ---------------------------------------------------------------------------
# pairing and integration


class TestPairAndIntegrate:
    def test_dual_bases(self):
        omega = TrigField.constant(2, "form", 2, [1.0])
        v = TrigField.constant(2, "multivector", 2, [1.0])
        assert pair(omega, v).integral() == 1.0

    def test_antisymmetry(self):
        omega = TrigField.constant(2, "form", 2, [1.0])
        # e2 ^ e1 = -(e1 ^ e2)
        v = TrigField.constant(2, "multivector", 2, [-1.0])
        assert pair(omega, v).integral() == -1.0

    def test_simple_pair_is_determinant(self, rng):
        a, b = rng.standard_normal(2), rng.standard_normal(2)
        u, w = rng.standard_normal(2), rng.standard_normal(2)
        omega = TrigField.constant(2, "form", 2, [a[0] * b[1] - a[1] * b[0]])
        v = TrigField.constant(2, "multivector", 2, [u[0] * w[1] - u[1] * w[0]])
        expected = np.linalg.det(np.array([[a @ u, a @ w], [b @ u, b @ w]]))
        grid = pair(omega.to_grid(32), v.to_grid(32))
        assert_allclose(torus_integrate(grid), expected, rtol=1e-12)

    def test_constant_mean(self):
        assert torus_integrate(TrigField.scalar(2, {(0, 0): (2.5, 0.0)})) == 2.5

    def test_harmonic_mean_is_zero(self):
        g = TrigField.scalar_harmonic(2, (3, 0), sin_amp=1.0) * \
            TrigField.scalar_harmonic(2, (0, 1), cos_amp=1.0)
        assert torus_integrate(g) == 0.0
        assert abs(torus_integrate(g.to_grid(64))) < 1e-15

    def test_lattice_mean_matches_exact_zero_mode(self, rng):
        # sample the pointwise product on the lattice (no coefficient
        # arithmetic involved) and compare with the exact product mean
        f = random_trig_scalar(rng, 2, n_terms=6, max_freq=3)
        g = random_trig_scalar(rng, 2, n_terms=6, max_freq=3)
        pts = lattice(2, 64)
        sampled = GridField.scalar(
            2, 64, f.evaluate_scalar(pts) * g.evaluate_scalar(pts))
        assert abs(torus_integrate(sampled) - (f * g).integral()) < 1e-13

    def test_mixed_trig_grid_pair(self, rng):
        omega = random_trig_field(rng, 2, "form", 1)
        v = random_trig_field(rng, 2, "multivector", 1)
        exact = pair(omega, v).integral()
        mixed = torus_integrate(pair(omega, v.to_grid(64)))
        assert abs(mixed - exact) < 1e-12

    def test_rank_mismatch(self, rng):
        with pytest.raises(RankMismatch):
            pair(random_trig_field(rng, 2, "form", 1),
                 random_trig_field(rng, 2, "multivector", 2))
        with pytest.raises(RankMismatch):
            torus_integrate(random_trig_field(rng, 2, "form", 1))


# ---------------------------------------------------------------------------
# flows


class TestFlows:
    def test_constant_field_translates(self):
        x = TrigField.constant(2, "multivector", 1, [0.3, -0.1])
        p = np.array([1.0, 2.0])
        assert_allclose(flow_integrate(x, 2.0, p),
                        np.mod(p + 2.0 * np.array([0.3, -0.1]), TWO_PI),
                        atol=1e-14)

    def test_group_property(self, rng):
        x = random_trig_vector(rng, 2, n_terms=3, amp=0.5)
        pts = rng.uniform(0.0, TWO_PI, (20, 2))
        one_shot = flow_integrate(x, 0.7, pts)
        two_step = flow_integrate(x, 0.3, flow_integrate(x, 0.4, pts))
        assert np.max(np.abs(wrap_diff(one_shot, two_step))) < 1e-10

    def test_flow_jacobian_matches_fd(self, rng):
        x = random_trig_vector(rng, 2, n_terms=3, amp=0.5)
        pts = rng.uniform(0.0, TWO_PI, (10, 2))
        _, jac = flow_with_jacobian(x, 0.5, pts)
        h = 1e-6
        for j in range(2):
            shift = np.zeros(2)
            shift[j] = h
            fd = wrap_diff(flow_integrate(x, 0.5, pts + shift),
                           flow_integrate(x, 0.5, pts - shift)) / (2 * h)
            assert np.max(np.abs(jac[:, :, j] - fd)) < 1e-7

    def test_divergence_free_flow_preserves_measure(self, rng):
        stream = random_trig_scalar(rng, 2, n_terms=4, amp=0.5)
        x = TrigField.vector(2, [(-1.0 * stream.partial(1)).component(()),
                                 stream.partial(0).component(())])
        g = random_trig_scalar(rng, 2, n_terms=4, max_freq=2)
        phi = flow_map(x, 0.35, 64)
        composed = GridField.scalar(2, 64, g.evaluate_scalar(phi.tabulate(64)))
        assert abs(torus_integrate(composed) - g.integral()) < 1e-9

    def test_compressible_flow_does_not(self, rng):
        # control for the test above: a generic field shifts the mean
        x = TrigField.vector(2, [{(1, 0): (0.0, 0.4)}, {}])  # div != 0
        g = TrigField.scalar_harmonic(2, (1, 0), cos_amp=1.0)
        phi = flow_map(x, 0.5, 64)
        composed = GridField.scalar(2, 64, g.evaluate_scalar(phi.tabulate(64)))
        assert abs(torus_integrate(composed) - g.integral()) > 1e-3


# ---------------------------------------------------------------------------
# torus maps


class TestTorusMap:
    def _random_displacement_map(self, rng, scale=0.05):
        u = random_trig_vector(rng, 2, n_terms=2, max_freq=1, amp=scale)
        return TorusMap(CAT, displacement=u)

    def test_linear_inverse_is_exact(self):
        f = TorusMap(CAT)
        pts = lattice(2, 16)
        assert np.max(np.abs(wrap_diff(f.inverse(f(pts)), pts))) < 1e-12

    def test_displacement_round_trip(self, rng):
        f = self._random_displacement_map(rng)
        pts = rng.uniform(0.0, TWO_PI, (50, 2))
        assert np.max(np.abs(wrap_diff(f(f.inverse(pts)), pts))) < 1e-10
        assert np.max(np.abs(wrap_diff(f.inverse(f(pts)), pts))) < 1e-10

    def test_flow_composed_round_trip(self, rng):
        x = random_trig_vector(rng, 2, n_terms=2, amp=0.4)
        y = random_trig_vector(rng, 2, n_terms=2, amp=0.4)
        f = TorusMap(CAT, flows=((y, 0.02), (x, 0.2)))
        pts = rng.uniform(0.0, TWO_PI, (30, 2))
        assert np.max(np.abs(wrap_diff(f(f.inverse(pts)), pts))) < 1e-10

    def test_jacobian_matches_fd(self, rng):
        x = random_trig_vector(rng, 2, n_terms=2, amp=0.3)
        f = TorusMap(CAT, flows=((x, 0.15),))
        pts = rng.uniform(0.0, TWO_PI, (10, 2))
        _, jac = f.map_with_jacobian(pts)
        h = 1e-6
        for j in range(2):
            shift = np.zeros(2)
            shift[j] = h
            fd = wrap_diff(f(pts + shift), f(pts - shift)) / (2 * h)
            assert np.max(np.abs(jac[:, :, j] - fd)) < 1e-6

    def test_inverse_jacobian_is_jacobian_inverse(self, rng):
        f = self._random_displacement_map(rng)
        pts = rng.uniform(0.0, TWO_PI, (20, 2))
        pre, inv_jac = f.inverse_with_jacobian(pts)
        direct = np.linalg.inv(f.jacobian(pre))
        assert np.max(np.abs(inv_jac - direct)) < 1e-9

    def test_oversized_displacement_rejected(self):
        huge = TrigField.vector(2, [{(1, 0): (0.0, 5.0)}, {(0, 1): (0.0, 5.0)}])
        with pytest.raises(ValueError, match="diffeomorphism"):
            TorusMap(CAT, displacement=huge)

    def test_diverging_newton_raises(self):
        huge = TrigField.vector(2, [{(1, 0): (0.0, 5.0)}, {(0, 1): (0.0, 5.0)}])
        f = TorusMap(CAT, displacement=huge, check=False)
        with pytest.raises(InverseIterationDiverged):
            # a target where the iteration bounces between basins
            f.inverse(np.array([[0.1, 0.8625]]))

    def test_non_unimodular_rejected(self):
        with pytest.raises(ValueError, match="unimodular"):
            TorusMap(np.array([[2, 0], [0, 1]]))


# ---------------------------------------------------------------------------
# pullback / pushforward


class TestTransport:
    def test_pullback_pushforward_duality(self, rng):
        # pair(phi^* w, V)(p) = pair(w, phi_* V)(phi p); the residual is
        # pure interpolation error, so doubling the resolution must shrink
        # it by about 2^order
        u = random_trig_vector(rng, 2, n_terms=2, max_freq=1, amp=0.04)
        phi = TorusMap(CAT, displacement=u)
        omega = random_trig_field(rng, 2, "form", 1, n_terms=2)
        v = random_trig_field(rng, 2, "multivector", 1, n_terms=2)
        for order, floor in [(1, 1.5), (3, 7.5)]:
            errs = []
            for res in (32, 64):
                og = omega.to_grid(res, order)
                vg = v.to_grid(res, order)
                left = pair(pullback_form(phi, og), vg).as_scalar()
                right_field = pair(og, pushforward_multivector(phi, vg))
                right = right_field.evaluate(phi(lattice(2, res)))[..., 0]
                errs.append(np.max(np.abs(left.ravel() - right.ravel())))
            assert errs[0] / errs[1] >= floor

    def test_pullback_by_identity(self, rng):
        omega = random_trig_field(rng, 2, "form", 1).to_grid(32)
        back = pullback_form(TorusMap.identity(2), omega)
        assert_allclose(back.values, omega.values, atol=1e-12)

    def test_linear_pullback_is_matrix_action(self, rng):
        omega_const = TrigField.constant(2, "form", 1, [0.7, -0.2]).to_grid(32)
        f = TorusMap(CAT)
        pulled = pullback_form(f, omega_const)
        expected = CAT.T @ np.array([0.7, -0.2])
        assert_allclose(pulled.values[0, 0], expected, atol=1e-12)

    def test_first_order_pullback_expansion(self, rng):
        # (phi_t^* w - w)/t -> L_X w with O(t) residual: halving t halves it
        x = random_trig_vector(rng, 2, n_terms=2, amp=0.5)
        omega = random_trig_field(rng, 2, "form", 1, n_terms=2)
        og = omega.to_grid(64)
        lie = lie_derivative(x, omega).to_grid(64)
        res = {}
        for t in (0.02, 0.01):
            phi = flow_map(x, t, 64)
            diff = (pullback_form(phi, og).values - og.values) / t
            res[t] = np.max(np.abs(diff - lie.values))
        assert res[0.02] / res[0.01] >= 1.9

    def test_composed_family_close_to_pure_flow(self, rng):
        # phi_t^X o phi_{t^2/2}^Y deviates from phi_t^X at order t^2
        x = random_trig_vector(rng, 2, n_terms=2, amp=0.5)
        y = random_trig_vector(rng, 2, n_terms=2, amp=0.5)
        pts = lattice(2, 16)
        errs = []
        for t in (0.2, 0.1):
            composed = TorusMap(np.eye(2, dtype=int), flows=((y, 0.5 * t * t), (x, t)))
            errs.append(np.max(np.abs(wrap_diff(composed(pts),
                                                flow_integrate(x, t, pts)))))
        assert errs[0] / errs[1] >= 3.5


# ---------------------------------------------------------------------------
# grid fields


class TestGridField:
    def test_binary_round_trip(self, rng, tmp_path):
        f = random_trig_field(rng, 2, "multivector", 1).to_grid(32)
        path = tmp_path / "field.bin"
        f.save(path)
        g = GridField.load(path)
        assert (g.dim, g.resolution, g.kind, g.degree, g.interp_order) == \
            (f.dim, f.resolution, f.kind, f.degree, f.interp_order)
        assert np.array_equal(g.values, f.values)

    def test_round_trip_is_byte_stable(self, rng, tmp_path):
        f = random_trig_scalar(rng, 2).to_grid(16)
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        f.save(p1)
        GridField.load(p1).save(p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_cubic_interpolation_converges(self, rng):
        f = random_trig_scalar(rng, 2, n_terms=3, max_freq=2)
        probes = rng.uniform(0.0, TWO_PI, (200, 2))
        exact = f.evaluate_scalar(probes)
        errs = []
        for res in (32, 64):
            grid = f.to_grid(res, interp_order=3)
            errs.append(np.max(np.abs(grid.evaluate(probes)[:, 0] - exact)))
        assert errs[0] / errs[1] > 8.0  # 4th-order convergence

    def test_validation(self, rng):
        with pytest.raises(ValueError, match="resolution"):
            GridField.scalar(2, 8, np.zeros((8, 8)))
        bad = np.zeros((16, 16, 1))
        bad[0, 0, 0] = np.nan
        with pytest.raises(ValueError, match="finite"):
            GridField(2, 16, "form", 0, bad)
        with pytest.raises(ValueError, match="interp_order"):
            GridField(2, 16, "form", 0, np.zeros((16, 16, 1)), interp_order=2)


class TestWedge:
    def test_cauchy_binet(self, rng):
        a = rng.standard_normal((4, 4))
        b = rng.standard_normal((4, 4))
        for k in (1, 2, 3):
            left = wedge_matrix(a @ b, k)
            right = wedge_matrix(a, k) @ wedge_matrix(b, k)
            assert_allclose(left, right, atol=1e-12)

    def test_top_degree_is_determinant(self, rng):
        m = rng.standard_normal((3, 3))
        assert_allclose(wedge_matrix(m, 3)[0, 0], np.linalg.det(m), rtol=1e-12)

    def test_interior_product_antisymmetry(self, rng):
        # i_X i_X omega = 0
        x = random_trig_vector(rng, 3, n_terms=2)
        omega = random_trig_field(rng, 3, "form", 2, n_terms=2)
        twice = interior_product(x, interior_product(x, omega))
        worst = max((abs(c) + abs(s) for t in twice.components.values()
                     for c, s in t.values()), default=0.0)
        assert worst < 1e-12
