"""Derivatives of the integrated expansion exponent at t = 0.

A volume-preserving family h_t = phi_t^X o phi_{t^2/2}^Y deforms the base
map, its invariant splitting, and the exponent lambda(t) of the selected
bundle.  With the dual pair (omega, V) of the unperturbed splitting the
first derivative has two equivalent closed forms (differentiating the
form side or the multivector side), and the second derivative needs V',
the t-derivative of the normalized bundle multivector.  V' solves

    (Id - f_*/eta) V' = -P L_X V

whose inverse splits into a two-sided geometric series along the
complement bundles: the part of P L_X V leaning into the more contracted
complement is summed forward under T = f_*/eta, the part leaning into
the more expanded complement backward under T^{-1}; both sides contract
at the domination ratio.

Everything is cross-checked against finite-difference oracles that
recompute the splitting from scratch at every sample of lambda(t) — the
oracles never reuse formula-path intermediates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from lyaplab.errors import (InvarianceResidualHigh, NeedsSmoothOmega,
                            NeedsSmoothV, SeriesTooLong)
from lyaplab.families import FamilySpec
from lyaplab.field_calculus import (GridField, TrigField, flow_with_jacobian,
                                    index_sets, lie_derivative, pair,
                                    torus_integrate, tree_sum, wedge_matrix)
from lyaplab.field_calculus.multilinear import index_position, replace_index
from lyaplab.splitting import (ExponentCurve, _pushforward_data,
                               lyapunov_exponent, power_splitting)

TAIL_TOLERANCE = 1e-10
MAX_SERIES_TERMS = 10_000


# ---------------------------------------------------------------------------
# multilinear helpers


def dwedge(mat, k):
    """Derivative of the wedge power at the identity, in direction mat.

    Returns D with D[..., S, T] such that d/ds wedge(I + s*mat, k)|_0
    acts on multivector components as einsum('...ab,...b->...a', D, v).
    On forms the action is the transpose.  For k = 1 this is mat itself.
    """
    mat = np.asarray(mat, dtype=float)
    d = mat.shape[-1]
    if k == 1:
        return mat.copy()
    keys = index_sets(d, k)
    pos = index_position(d, k)
    out = np.zeros(mat.shape[:-2] + (len(keys), len(keys)))
    for ci, key in enumerate(keys):
        for m, i_m in enumerate(key):
            for j in range(d):
                rep = replace_index(key, m, j)
                if rep is None:
                    continue
                sign, source = rep
                out[..., pos[source], ci] += sign * mat[..., j, i_m]
    return out


def _block_masks(dims, k):
    """Frame-coordinate masks for the two complement-leaning slots.

    In the wedge basis built from the frame columns (ordered E1 | E2 | E3)
    the admissible derivative directions of a decomposable E2-multivector
    have exactly one factor in a complement bundle and k-1 factors in E2.
    """
    d1, d2, _ = dims
    d = sum(dims)
    keys = index_sets(d, k)
    block2 = set(range(d1, d1 + d2))
    mask1 = np.zeros(len(keys))
    mask3 = np.zeros(len(keys))
    for i, key in enumerate(keys):
        in1 = sum(1 for j in key if j < d1)
        in2 = sum(1 for j in key if j in block2)
        if in2 == k - 1:
            if in1 == 1:
                mask1[i] = 1.0
            elif in1 == 0:
                mask3[i] = 1.0
    return mask1, mask3


def _is_linear(torus_map):
    return torus_map.displacement is None and not torus_map.flows


def _integer_inverse(linear):
    inv = np.rint(np.linalg.inv(linear)).astype(float)
    if not np.allclose(linear @ inv, np.eye(linear.shape[0]), atol=1e-9):
        raise ValueError("linear part is not an integer-invertible matrix")
    return inv


def _sup_rows(values):
    return float(np.max(np.linalg.norm(values, axis=-1))) if values.size else 0.0


def _eta_data(f, split, residual_tol):
    _, eta_vals, resid = _pushforward_data(f, split)
    if resid > residual_tol:
        raise InvarianceResidualHigh(
            f"splitting is not invariant under this map to {residual_tol:.1e} "
            f"(residual {resid:.3e}); was it computed for a different map?")
    return eta_vals


def _apply_matrix_trig(matrix, trig):
    """Constant component mixing out_S = sum_T M[S, T] comp_T, exactly."""
    from lyaplab.field_calculus.trigfield import poly_add, poly_scale

    keys = index_sets(trig.dim, trig.degree)
    out = {}
    for a, key_a in enumerate(keys):
        acc = {}
        for b, key_b in enumerate(keys):
            scale = float(matrix[a, b])
            if scale == 0.0:
                continue
            table = trig.component(key_b)
            if table:
                acc = poly_add(acc, table, scale=scale)
        acc = {n: cs for n, cs in acc.items() if cs != (0.0, 0.0)}
        if acc:
            out[key_a] = acc
    return TrigField(trig.dim, trig.kind, trig.degree, out)


# ---------------------------------------------------------------------------
# the bundle-derivative series


@dataclass
class VPrimeSeries:
    """Truncated series solution for the bundle-multivector derivative.

    lattice/preimage values carry the standard-basis components on the
    splitting's two point layers; `exact` holds the trig-polynomial form
    when the all-exact route was available.  The defining residual is an
    independent re-evaluation of (Id - f_*/eta)V' + P L_X V using the
    preimage layer (no interpolation), so it genuinely measures the
    truncation rather than echoing the construction.
    """

    field: GridField
    lattice_values: np.ndarray
    preimage_values: np.ndarray
    series_terms: int
    tail_bound: float
    prefactor_norm: float
    kernel_residual: float
    defining_residual: float
    route: str
    exact: TrigField | None = None


def _series_length(nu, prefactor, tail_tol, max_terms):
    if prefactor <= tail_tol:
        return 0
    n = int(np.ceil(np.log(tail_tol / prefactor) / np.log(nu)))
    n = max(n, 1)
    if n > max_terms:
        raise SeriesTooLong(
            f"domination ratio {nu:.6f} needs {n} series terms to reach "
            f"tail {tail_tol:.1e} (cap {max_terms})")
    return n


def v_prime_series(f, split, x_field, *, tail_tol=TAIL_TOLERANCE,
                   max_terms=MAX_SERIES_TERMS, route="auto",
                   residual_tol=1e-8):
    """Solve (Id - f_*/eta)V' = -P L_X V by the two-sided power series.

    The complement-leaning parts of P L_X V are transported along exact
    orbits of the splitting's two point layers (one term needs one map or
    inverse evaluation, one wedge product and one source evaluation), so
    no intermediate result is ever interpolated on constant splittings;
    grid splittings interpolate only the fixed source fields.  When the
    base is a pure integer automorphism with constant bundles and X is a
    trig field, the same series is also accumulated exactly in
    coefficient space (route "exact") for exact downstream integrals.
    """
    if not hasattr(x_field, "jacobian"):
        raise NeedsSmoothV(
            "v_prime_series needs a differentiable vector field "
            "(values/jacobian protocol)")
    d, k, res = split.dim, split.k, split.resolution
    d1, _, d3 = split.dims
    keys = index_sets(d, k)
    n_comp = len(keys)
    n_lat = split.points.shape[0]
    pts0 = np.concatenate([split.points, split.preimage_points], axis=0)

    eta_lattice = _eta_data(f, split, residual_tol)
    mask1, mask3 = _block_masks(split.dims, k)

    exact = None
    if split.constant:
        # constant frames: the masks, transforms and eta are single objects
        frame = np.concatenate([u[0] for u in split.frames], axis=-1)
        to_frame = wedge_matrix(np.linalg.inv(frame), k)
        from_frame = wedge_matrix(frame, k)
        v_const = split.v_lattice[0]
        omega_const = split.omega_lattice[0]
        proj1 = from_frame @ (mask1[:, None] * to_frame)
        proj3 = from_frame @ (mask3[:, None] * to_frame)
        eta_const = float(eta_lattice[0])

        def source(points, proj):
            # L_X V for constant V is -dwedge(DX) V
            jac = x_field.jacobian(points)
            lxv = -np.einsum("...ab,b->...a", dwedge(jac, k), v_const)
            return np.einsum("ab,...b->...a", proj, lxv)

        def w1_at(points):
            return source(points, proj1)

        def w3_at(points):
            return source(points, proj3)

        def eta_at(points):
            return np.full(points.shape[:-1], eta_const)

        def proj1_at(points):
            return np.broadcast_to(proj1, points.shape[:-1] + proj1.shape)

        def proj3_at(points):
            return np.broadcast_to(proj3, points.shape[:-1] + proj3.shape)
    else:
        if split.v_field.interp_order < 3:
            raise NeedsSmoothV(
                "series transport needs a differentiable multivector "
                "representation (cubic grid or trig); got linear-order grid "
                "data")
        frames_b = np.concatenate(split.frames, axis=-1)
        to_frame = wedge_matrix(np.linalg.inv(frames_b), k)
        from_frame = wedge_matrix(frames_b, k)
        lxv = lie_derivative(x_field, split.v_field)
        lxv_flat = lxv.values.reshape(n_lat, n_comp)
        coords = np.einsum("xab,xb->xa", to_frame, lxv_flat)
        grid_shape = (res,) * d + (n_comp,)

        def masked_field(mask):
            vals = np.einsum("xab,xb->xa", from_frame, coords * mask)
            return GridField(d, res, "multivector", k,
                             vals.reshape(grid_shape), 3)

        w1_field, w3_field = masked_field(mask1), masked_field(mask3)
        eta_grid = GridField.scalar(d, res, eta_lattice.reshape((res,) * d), 3)

        def projector_columns(mask):
            vals = np.einsum("xab,b,xbc->xac", from_frame, mask, to_frame)
            return [GridField(d, res, "multivector", k,
                              vals[:, :, c].reshape(grid_shape), 3)
                    for c in range(n_comp)]

        cols1, cols3 = projector_columns(mask1), projector_columns(mask3)

        def w1_at(points):
            return w1_field.evaluate(points)

        def w3_at(points):
            return w3_field.evaluate(points)

        def eta_at(points):
            return eta_grid.evaluate(points)[..., 0]

        def proj1_at(points):
            return np.stack([c.evaluate(points) for c in cols1], axis=-1)

        def proj3_at(points):
            return np.stack([c.evaluate(points) for c in cols3], axis=-1)

    w1_0 = w1_at(pts0)
    w3_0 = w3_at(pts0)
    prefactor = max(_sup_rows(w1_0 + w3_0), _sup_rows(w1_0), _sup_rows(w3_0))
    nu = split.domination_ratio
    n_series = _series_length(nu, prefactor, tail_tol, max_terms)

    # The transported chains are re-projected onto their leaning block at
    # every step.  Mathematically a no-op (the blocks are transport
    # invariant); numerically it stops roundoff leaking into the
    # complementary block, where one-step growth can exceed 1 and would
    # otherwise amplify by (1/nu)^N over the whole chain.
    acc = np.zeros((pts0.shape[0], n_comp))
    if n_series and d1 > 0:
        # backward side: - sum_{n=0}^{N-1} T^n (P1 L_X V)
        acc -= w1_0
        q = pts0
        chain = np.broadcast_to(np.eye(n_comp), acc.shape + (n_comp,)).copy()
        eta_prev = eta_at(pts0)
        for _ in range(1, n_series):
            q, ginv = f.inverse_with_jacobian(q)
            step = wedge_matrix(np.linalg.inv(ginv), k)
            chain = chain @ step / eta_prev[:, None, None]
            chain = chain @ proj1_at(q)
            eta_prev = eta_at(q)
            acc -= np.einsum("xab,xb->xa", chain, w1_at(q))
    if n_series and d3 > 0:
        # forward side: + sum_{n=1}^{N} T^{-n} (P3 L_X V)
        r = pts0
        chain = np.broadcast_to(np.eye(n_comp), acc.shape + (n_comp,)).copy()
        for _ in range(n_series):
            r_next, jac = f.map_with_jacobian(r)
            chain = chain @ np.linalg.inv(wedge_matrix(jac, k))
            chain = chain * eta_at(r_next)[:, None, None]
            chain = chain @ proj3_at(r_next)
            acc += np.einsum("xab,xb->xa", chain, w3_at(r_next))
            r = r_next

    lattice_vals = acc[:n_lat]
    pre_vals = acc[n_lat:]
    kernel = float(np.max(np.abs(
        np.einsum("xc,xc->x", split.omega_lattice, lattice_vals))))

    # independent residual of the defining equation on the lattice layer
    jac_pre = f.jacobian(split.preimage_points)
    push = np.einsum("xab,xb->xa", wedge_matrix(jac_pre, k), pre_vals)
    resid_vec = (lattice_vals - push / eta_lattice[:, None]
                 + (w1_0 + w3_0)[:n_lat])
    defining = _sup_rows(resid_vec)

    if route == "auto":
        want_exact = (split.constant and _is_linear(f)
                      and isinstance(x_field, TrigField))
    else:
        want_exact = route == "exact"
    if want_exact and n_series:
        exact = _v_prime_exact_trig(f, split, x_field, n_series,
                                    proj1, proj3, eta_const)
    elif want_exact:
        exact = TrigField.zero(d, "multivector", k)

    vfield = GridField(d, res, "multivector", k,
                       lattice_vals.reshape((res,) * d + (n_comp,)), 3)
    return VPrimeSeries(
        field=vfield, lattice_values=lattice_vals, preimage_values=pre_vals,
        series_terms=n_series, tail_bound=float(nu ** n_series * prefactor),
        prefactor_norm=prefactor, kernel_residual=kernel,
        defining_residual=defining,
        route="exact" if exact is not None else
        ("orbit-constant" if split.constant else "orbit-grid"),
        exact=exact)


def _v_prime_exact_trig(f, split, x_field, n_series, proj1, proj3, eta_const):
    """Coefficient-space accumulation of the same truncated series.

    On an integer automorphism L the transfer operator has the exact form
    (T W)(p) = wedge(L) W(L^{-1} p)/eta with constant eta, and composition
    with a linear map is a frequency remap — so every series term is an
    exact trig polynomial.
    """
    lin = np.asarray(f.linear, dtype=float)
    lin_inv = _integer_inverse(lin)
    k = split.k
    wl = wedge_matrix(lin, k)
    wl_inv = wedge_matrix(lin_inv, k)

    lxv = lie_derivative(x_field, split.v_exact)
    w1 = _apply_matrix_trig(proj1, lxv)
    w3 = _apply_matrix_trig(proj3, lxv)

    # after each transport step the term is re-projected onto its leaning
    # block (an exact-arithmetic no-op that keeps roundoff out of the
    # complementary block, whose one-step growth can exceed 1)
    total = TrigField.zero(split.dim, "multivector", k)
    if split.dims[0] > 0 and w1.components:
        cur = w1
        for n in range(n_series):
            total = total - cur
            if n + 1 < n_series:
                cur = _apply_matrix_trig(
                    proj1 @ (wl / eta_const),
                    cur.compose_linear(lin_inv))
    if split.dims[2] > 0 and w3.components:
        cur = w3
        for _ in range(n_series):
            cur = _apply_matrix_trig(proj3 @ (wl_inv * eta_const),
                                     cur.compose_linear(lin))
            total = total + cur
    return total


# ---------------------------------------------------------------------------
# first derivative, two dual routes


def _omega_representation(split):
    if split.constant:
        return split.omega_exact
    if split.omega_field.interp_order < 3:
        raise NeedsSmoothOmega(
            "the form-side derivative differentiates omega; it needs a trig "
            "or cubic-interpolated representation, not linear-order grid "
            "data")
    return split.omega_field


def _v_representation(split):
    if split.constant:
        return split.v_exact
    if split.v_field.interp_order < 3:
        raise NeedsSmoothV(
            "the multivector-side derivative differentiates V; it needs a "
            "trig or cubic-interpolated representation, not linear-order "
            "grid data")
    return split.v_field


def lambda_prime_via_F(split, x_field):
    """lambda'(0) = integral of (L_X omega)(V), differentiating the form."""
    omega = _omega_representation(split)
    if isinstance(omega, TrigField) and not isinstance(x_field, TrigField):
        omega = split.omega_field
    v_repr = split.v_exact if isinstance(omega, TrigField) else split.v_field
    return float(torus_integrate(pair(lie_derivative(x_field, omega),
                                      v_repr)))


def lambda_prime_via_E(split, x_field):
    """lambda'(0) = -integral of omega(L_X V), differentiating the bundle."""
    v_repr = _v_representation(split)
    if isinstance(v_repr, TrigField) and not isinstance(x_field, TrigField):
        v_repr = split.v_field
    omega = (split.omega_exact if isinstance(v_repr, TrigField)
             else split.omega_field)
    return -float(torus_integrate(pair(omega,
                                       lie_derivative(x_field, v_repr))))


# ---------------------------------------------------------------------------
# second derivative


@dataclass
class SecondDerivative:
    """lambda''(0) with its four integrand terms kept separate.

    terms = (mixed form/bundle variation, Y response, squared first-order
    response, series transport term); value is their sum.
    """

    value: float
    terms: tuple
    series: VPrimeSeries | None = None
    diagnostics: dict = field(default_factory=dict)

    def __float__(self):
        return self.value


def lambda_second(f, split, x_field, y_field=None, *, series=None,
                  tail_tol=TAIL_TOLERANCE, max_terms=MAX_SERIES_TERMS,
                  residual_tol=1e-8):
    """lambda''(0) = int -L_Xw(L_XV) + L_Yw(V) - (L_Xw(V))^2 + (2/eta)L_Xw(f_*V').

    The four integrands are integrated separately and reported in
    `terms`.  On an integer automorphism with constant bundles and trig
    generators every term is an exact coefficient-space integral; in all
    other cases the terms are lattice averages with the series transported
    along exact orbits.
    """
    if series is None:
        series = v_prime_series(f, split, x_field, tail_tol=tail_tol,
                                max_terms=max_terms,
                                residual_tol=residual_tol)
    y_active = y_field is not None and (
        not isinstance(y_field, TrigField) or y_field.n_terms() > 0)

    exact_ok = (series.exact is not None and isinstance(x_field, TrigField)
                and (not y_active or isinstance(y_field, TrigField)))
    if exact_ok:
        omega, v = split.omega_exact, split.v_exact
        lin = np.asarray(f.linear, dtype=float)
        eta_const = float(_eta_data(f, split, residual_tol)[0])
        lxo = lie_derivative(x_field, omega)
        t1 = -float(torus_integrate(pair(lxo, lie_derivative(x_field, v))))
        t2 = (float(torus_integrate(pair(lie_derivative(y_field, omega), v)))
              if y_active else 0.0)
        response = pair(lxo, v)
        t3 = -float(torus_integrate(response * response))
        push = _apply_matrix_trig(wedge_matrix(lin, split.k),
                                  series.exact.compose_linear(
                                      _integer_inverse(lin)))
        t4 = (2.0 / eta_const) * float(torus_integrate(pair(lxo, push)))
    else:
        omega_grid, v_grid = split.omega_field, split.v_field
        eta_vals = _eta_data(f, split, residual_tol)
        n_lat = split.points.shape[0]
        lxo_vals = lie_derivative(x_field, omega_grid).values.reshape(
            n_lat, -1)
        lxv_vals = lie_derivative(x_field, v_grid).values.reshape(n_lat, -1)

        def average(samples):
            return float(tree_sum(samples) / n_lat)

        t1 = -average(np.einsum("xc,xc->x", lxo_vals, lxv_vals))
        if y_active:
            lyo_vals = lie_derivative(y_field, omega_grid).values.reshape(
                n_lat, -1)
            t2 = average(np.einsum("xc,xc->x", lyo_vals, split.v_lattice))
        else:
            t2 = 0.0
        response = np.einsum("xc,xc->x", lxo_vals, split.v_lattice)
        t3 = -average(response * response)
        jac_pre = f.jacobian(split.preimage_points)
        push = np.einsum("xab,xb->xa", wedge_matrix(jac_pre, split.k),
                         series.preimage_values)
        t4 = average(2.0 * np.einsum("xc,xc->x", lxo_vals, push) / eta_vals)
    terms = (t1, t2, t3, t4)
    return SecondDerivative(value=float(sum(terms)), terms=terms,
                            series=series,
                            diagnostics={"route": "exact" if exact_ok
                                         else "lattice"})


# ---------------------------------------------------------------------------
# the no-smoothness sweep route


@dataclass
class HolderSlope:
    """First derivative from the flow-averaged pairing sweep.

    g(t) = int (phi_t^X)^* omega (V) dmu is differentiable in t even when
    the bundles are merely Holder, because the t-dependence sits entirely
    in the flow; the value is the Richardson limit of central slopes of
    the sampled curve.  The norm-product bound is reported with unit
    calibration constants, never asserted.
    """

    value: float
    samples: dict
    table: list
    bound_report: dict


def _richardson(steps, diffs):
    """Neville elimination of even-order error terms; returns table rows."""
    table = [[diffs[0]]]
    for i in range(1, len(diffs)):
        row = [diffs[i]]
        for j in range(1, i + 1):
            ratio = (steps[i - j] / steps[i]) ** 2
            row.append(row[j - 1] + (row[j - 1] - table[i - 1][j - 1])
                       / (ratio - 1.0))
        table.append(row)
    return table


def lambda_prime_holder(split, x_field, steps=(0.04, 0.02, 0.01)):
    """lambda'(0) as the t-slope of the pulled-back pairing average.

    Needs no derivative of omega or V: omega is evaluated (not
    differentiated) at flowed points, so plain grid data suffices.
    """
    pts = split.points
    k = split.k
    n = pts.shape[0]

    def omega_at(points):
        if split.constant:
            return np.broadcast_to(split.omega_lattice[0],
                                   points.shape[:-1] + (split.omega_lattice
                                                        .shape[-1],))
        return split.omega_field.evaluate(points)

    def g(t):
        if t == 0.0:
            vals = np.einsum("xc,xc->x", split.omega_lattice, split.v_lattice)
        else:
            image, jac = flow_with_jacobian(x_field, t, pts)
            pulled = np.einsum("xab,xa->xb", wedge_matrix(jac, k),
                               omega_at(image))
            vals = np.einsum("xc,xc->x", pulled, split.v_lattice)
        return float(tree_sum(vals) / n)

    hs = sorted((float(h) for h in steps), reverse=True)
    samples = {0.0: g(0.0)}
    diffs = []
    for h in hs:
        samples[h] = g(h)
        samples[-h] = g(-h)
        diffs.append((samples[h] - samples[-h]) / (2.0 * h))
    table = _richardson(hs, diffs)
    value = float(table[-1][-1])

    h_lat = 2.0 * np.pi / split.resolution
    omega_grid = split.omega_field.values.reshape(n, -1)
    v_grid = split.v_field.values.reshape(n, -1)

    def lipschitz(values):
        worst = 0.0
        grid = values.reshape((split.resolution,) * split.dim + (-1,))
        for axis in range(split.dim):
            delta = np.roll(grid, -1, axis) - grid
            worst = max(worst, float(np.max(np.abs(delta))) / h_lat)
        return worst

    x_sup = float(x_field.sup_bound())
    x_c1 = x_sup + float(np.max(np.abs(x_field.jacobian(pts))))
    bound = (x_sup * lipschitz(omega_grid) * float(np.max(np.abs(v_grid)))
             + x_c1 * float(np.max(np.abs(omega_grid)))
             * float(np.max(np.abs(v_grid))))
    report = {
        "x_sup": x_sup, "x_c1": x_c1,
        "omega_sup": float(np.max(np.abs(omega_grid))),
        "v_sup": float(np.max(np.abs(v_grid))),
        "omega_lipschitz": lipschitz(omega_grid),
        "v_lipschitz": lipschitz(v_grid),
        "bound_unit_constants": float(bound),
        "value_over_bound": float(value / bound) if bound > 0.0 else 0.0,
    }
    return HolderSlope(value=value, samples=samples, table=table,
                       bound_report=report)


# ---------------------------------------------------------------------------
# finite-difference oracles (always recompute the splitting from scratch)


def exponent_curve(family, seed, ts, *, middle=None, tol=1e-8,
                   flow_tolerance=1e-9, n_iter=200):
    """Sample lambda(t) over ts with a fresh power iteration at every t.

    No warm starts: each sample seeds from the same unperturbed splitting,
    so the oracle shares nothing with the formula path beyond the seed
    frames.  ts must contain 0.
    """
    ts = sorted(float(t) for t in ts)
    lams = []
    iteration_log = {}
    for t in ts:
        f_t = family.map_at(t, flow_tolerance=flow_tolerance)
        split_t = power_splitting(f_t, seed, n_iter=n_iter, tol=tol)
        if middle is not None:
            split_t = split_t.select(middle)
        lams.append(lyapunov_exponent(f_t, split_t))
        iteration_log[t] = split_t.diagnostics.get("iterations")
    return ExponentCurve(ts=np.array(ts), lambdas=np.array(lams),
                         diagnostics={"tol": tol,
                                      "flow_tolerance": flow_tolerance,
                                      "iterations": iteration_log})


def richardson_slope(curve):
    """First derivative at 0 from the curve's symmetric steps."""
    hs = sorted(curve.symmetric_steps(), reverse=True)
    if not hs:
        raise ValueError("curve has no symmetric step pairs around 0")
    diffs = [(curve.value_at(h) - curve.value_at(-h)) / (2.0 * h) for h in hs]
    table = _richardson(hs, diffs)
    return float(table[-1][-1]), table


def parabola_fit(curve):
    """Least-squares a + b t + c t^2 over all samples of the curve.

    The linear coefficient is returned so callers can verify it against
    the closed-form lambda'(0) before trusting 2c as lambda''(0) — a
    corner in lambda(t) shows up as a linear term the formulas disown.
    """
    ts = curve.ts
    design = np.stack([np.ones_like(ts), ts, ts * ts], axis=-1)
    coef, *_ = np.linalg.lstsq(design, curve.lambdas, rcond=None)
    fitted = design @ coef
    rms = float(np.sqrt(np.mean((fitted - curve.lambdas) ** 2)))
    return {"constant": float(coef[0]), "linear": float(coef[1]),
            "quadratic": float(coef[2]), "second": 2.0 * float(coef[2]),
            "rms_residual": rms}


def stencil_second(curve, h):
    """Five-point second derivative at 0 using +-h and +-2h samples."""
    h = float(h)
    num = (-curve.value_at(-2 * h) + 16.0 * curve.value_at(-h)
           - 30.0 * curve.value_at(0.0) + 16.0 * curve.value_at(h)
           - curve.value_at(2 * h))
    return num / (12.0 * h * h)


# ---------------------------------------------------------------------------
# chart-local second derivative for compactly supported generators


def bump_second_derivative(f, split, bump, *, nodes=96,
                           tail_tol=TAIL_TOLERANCE,
                           max_terms=MAX_SERIES_TERMS):
    """lambda''(0) for a bump generator by quadrature over its support.

    Every integrand is supported in the bump ball (the series terms reach
    outside it only through orbit returns, which the pointwise source
    evaluation handles for free), so a Gauss-Legendre grid over the
    support square replaces the global lattice — the global lattice
    cannot resolve a radius-0.07 bump at any affordable resolution.
    Needs constant bundles and a pure integer automorphism.
    """
    if not split.constant or not _is_linear(f):
        raise ValueError("the chart-local path needs a pure linear base "
                         "with constant bundles")
    d, k = split.dim, split.k
    if nodes ** d > 10 ** 7:
        raise ValueError("node grid too large for this dimension")
    d1, _, d3 = split.dims
    lin = np.asarray(f.linear, dtype=float)
    lin_inv = _integer_inverse(lin)
    wl = wedge_matrix(lin, k)
    wl_inv = wedge_matrix(lin_inv, k)

    frame = np.concatenate([u[0] for u in split.frames], axis=-1)
    to_frame = wedge_matrix(np.linalg.inv(frame), k)
    from_frame = wedge_matrix(frame, k)
    mask1, mask3 = _block_masks(split.dims, k)
    proj1 = from_frame @ (mask1[:, None] * to_frame)
    proj3 = from_frame @ (mask3[:, None] * to_frame)
    v_const = split.v_lattice[0]
    omega_const = split.omega_lattice[0]
    eta_const = float(_pushforward_data(f, split)[1][0])

    spec = bump.spec
    xg, wg = np.polynomial.legendre.leggauss(nodes)
    axes = [spec.center[i] + spec.radius * xg for i in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    weights = np.ones(pts.shape[0])
    for wmesh in np.meshgrid(*[wg] * d, indexing="ij"):
        weights *= wmesh.ravel()
    measure = (spec.radius ** d) / (2.0 * np.pi) ** d

    def w_masked(points, proj):
        jac = bump.jacobian(points)
        lxv = -np.einsum("xab,b->xa", dwedge(jac, k), v_const)
        return np.einsum("ab,xb->xa", proj, lxv)

    pnorm = max(_sup_rows(w_masked(pts, proj1) + w_masked(pts, proj3)),
                _sup_rows(w_masked(pts, proj1)),
                _sup_rows(w_masked(pts, proj3)))
    n_series = _series_length(split.domination_ratio, pnorm, tail_tol,
                              max_terms)

    def v_prime_at(points):
        # per-step reprojection keeps roundoff out of the complementary
        # block of the constant transport matrix (same trick as the
        # orbit-route series)
        out = np.zeros(points.shape[:-1] + (wl.shape[0],))
        if d1 > 0:
            q = points
            step = (wl / eta_const) @ proj1
            chain = np.eye(wl.shape[0])
            for n in range(n_series):
                if n > 0:
                    q = np.einsum("ab,xb->xa", lin_inv, q)
                    chain = chain @ step
                out -= np.einsum("ab,xb->xa", chain, w_masked(q, proj1))
        if d3 > 0:
            r = points
            step = (wl_inv * eta_const) @ proj3
            chain = np.eye(wl.shape[0])
            for _ in range(n_series):
                r = np.einsum("ab,xb->xa", lin, r)
                chain = chain @ step
                out += np.einsum("ab,xb->xa", chain, w_masked(r, proj3))
        return out

    dx = bump.jacobian(pts)
    dw = dwedge(dx, k)
    lxo = np.einsum("xba,b->xa", dw, omega_const)
    lxv = -np.einsum("xab,b->xa", dw, v_const)

    def chart_integral(values):
        return float(tree_sum(values * weights)) * measure

    t1 = -chart_integral(np.einsum("xa,xa->x", lxo, lxv))
    t2 = 0.0
    t3 = -chart_integral(np.einsum("xa,a->x", lxo, v_const) ** 2)
    shifted = np.einsum("ab,xb->xa", lin_inv, pts)
    push = np.einsum("ab,xb->xa", wl, v_prime_at(shifted))
    t4 = chart_integral(2.0 / eta_const * np.einsum("xa,xa->x", lxo, push))
    terms = (t1, t2, t3, t4)
    return SecondDerivative(
        value=float(sum(terms)), terms=terms, series=None,
        diagnostics={"route": "chart", "nodes": nodes,
                     "series_terms": n_series,
                     "tail_bound": float(split.domination_ratio ** n_series
                                         * pnorm)})


# ---------------------------------------------------------------------------
# assembled report


@dataclass
class DerivativeReport:
    """Every derivative route for one family/bundle, side by side.

    The three first-derivative routes have different smoothness
    hypotheses, so the report keeps them distinct instead of averaging;
    `agreement` records the pairwise differences and, when an oracle
    curve was supplied, the distances to the finite-difference values.
    """

    lambda0: float
    prime_form_side: float
    prime_bundle_side: float
    prime_sweep: float | None
    second: SecondDerivative
    fd: dict | None
    agreement: dict


def derivative_report(family, split, *, include_sweep=True,
                      sweep_steps=(0.04, 0.02, 0.01), fd_curve=None,
                      tail_tol=TAIL_TOLERANCE, max_terms=MAX_SERIES_TERMS):
    """Evaluate all derivative formulas for a family at its base map."""
    if not isinstance(family, FamilySpec):
        raise TypeError("derivative_report expects a FamilySpec")
    f0 = family.base_map
    x = family.generator_x
    lambda0 = lyapunov_exponent(f0, split)
    prime_f = lambda_prime_via_F(split, x)
    prime_e = lambda_prime_via_E(split, x)
    sweep = (lambda_prime_holder(split, x, steps=sweep_steps)
             if include_sweep else None)
    second = lambda_second(f0, split, x, family.generator_y,
                           tail_tol=tail_tol, max_terms=max_terms)

    agreement = {"prime_form_vs_bundle": abs(prime_f - prime_e)}
    if sweep is not None:
        agreement["prime_form_vs_sweep"] = abs(prime_f - sweep.value)
    fd = None
    if fd_curve is not None:
        slope, table = richardson_slope(fd_curve)
        fit = parabola_fit(fd_curve)
        fd = {"slope": slope, "richardson_table": table, "fit": fit}
        agreement["prime_vs_fd"] = abs(prime_f - slope)
        agreement["fit_linear_vs_prime"] = abs(fit["linear"] - prime_f)
        agreement["second_vs_fd"] = abs(second.value - fit["second"])
    return DerivativeReport(
        lambda0=lambda0, prime_form_side=prime_f, prime_bundle_side=prime_e,
        prime_sweep=None if sweep is None else sweep.value,
        second=second, fd=fd, agreement=agreement)
