"""Pairings, Lie derivatives, pullback/pushforward and torus integration.

Exact trig inputs stay exact (coefficient arithmetic); grid inputs go
through 4th-order periodic difference stencils and spline interpolation.
The exact and sampled routes are kept strictly separate — a TrigField is
only ever demoted to a GridField, never fitted back.
"""

from __future__ import annotations

import numpy as np

from lyaplab.errors import RankMismatch
from lyaplab.field_calculus.gridfield import TWO_PI, GridField, lattice
from lyaplab.field_calculus.multilinear import (index_sets, replace_index,
                                                tree_sum, wedge_matrix)
from lyaplab.field_calculus.trigfield import (TrigField, poly_add, poly_diff,
                                              poly_mul)
from lyaplab.field_calculus.torusmap import TorusMap


# ---------------------------------------------------------------------------
# pairing and integration


def pair(omega, v):
    """Full contraction omega(V) of a k-form with a k-multivector.

    Trig x trig stays exact; anything involving a GridField is evaluated
    on that field's lattice.  Components share the sorted-tuple basis,
    so the contraction is a plain sum of componentwise products.
    """
    if omega.dim != v.dim or omega.degree != v.degree:
        raise RankMismatch(
            f"cannot pair degree {omega.degree} (d={omega.dim}) with "
            f"degree {v.degree} (d={v.dim})")
    if omega.degree > 0 and (omega.kind != "form" or v.kind != "multivector"):
        raise RankMismatch("pair expects (form, multivector)")

    if isinstance(omega, TrigField) and isinstance(v, TrigField):
        acc = {}
        for key, table in omega.components.items():
            other = v.component(key)
            if other:
                acc = poly_add(acc, poly_mul(table, other))
        return TrigField.scalar(omega.dim, acc)

    omega, v = _common_grid(omega, v)
    vals = np.einsum("...c,...c->...", omega.values, v.values)
    return GridField.scalar(omega.dim, omega.resolution, vals,
                            min(omega.interp_order, v.interp_order))


def _common_grid(a, b):
    if isinstance(a, TrigField):
        a = a.to_grid(b.resolution, b.interp_order)
    if isinstance(b, TrigField):
        b = b.to_grid(a.resolution, a.interp_order)
    if a.resolution != b.resolution:
        raise RankMismatch("grid fields have different resolutions")
    return a, b


def torus_integrate(field):
    """Mean against normalized Lebesgue measure on [0, 2*pi)^d.

    Exact for TrigFields (the zero-frequency coefficient); the lattice
    average for GridFields, which is likewise exact for band-limited
    data and spectrally accurate for smooth data.
    """
    if field.degree != 0:
        raise RankMismatch("torus_integrate needs a scalar field")
    if isinstance(field, TrigField):
        return field.integral()
    return field.mean()


# ---------------------------------------------------------------------------
# Lie derivatives


def lie_derivative(x_field, target):
    """L_X of a k-form (Cartan formula) or k-multivector (bracket extension).

    Trig targets require a trig X and come back exact.  Grid targets
    accept any vector-field evaluator with values()/jacobian() and use
    4th-order periodic stencils for the component gradients.
    """
    if isinstance(target, TrigField):
        if not isinstance(x_field, TrigField):
            raise RankMismatch(
                "exact Lie derivative needs a trig vector field; promote the "
                "target to a GridField to use a sampled X")
        x_field._require_vector()
        if x_field.dim != target.dim:
            raise RankMismatch("dimension mismatch in lie_derivative")
        if target.kind == "form":
            return _lie_form_trig(x_field, target)
        return _lie_multivector_trig(x_field, target)
    if isinstance(target, GridField):
        return _lie_grid(x_field, target)
    raise TypeError(f"unsupported field type {type(target).__name__}")


def interior_product(x_field, omega):
    """Contraction i_X omega (exact, trig inputs)."""
    x_field._require_vector()
    if omega.kind != "form" or omega.degree == 0:
        raise RankMismatch("interior product needs a form of degree >= 1")
    out = {}
    for key, table in omega.components.items():
        for m, j in enumerate(key):
            sub = key[:m] + key[m + 1:]
            contrib = poly_mul(x_field.component((j,)), table)
            if contrib:
                out[sub] = poly_add(out.get(sub, {}), contrib,
                                    scale=float((-1) ** m))
    return TrigField(omega.dim, "form", omega.degree - 1, out)


def _lie_form_trig(x, omega):
    parts = []
    if omega.degree < omega.dim:
        parts.append(interior_product(x, omega.exterior_derivative()))
    if omega.degree > 0:
        parts.append(interior_product(x, omega).exterior_derivative())
    if not parts:  # degree 0 on a 0-dimensional torus cannot happen (dim >= 1)
        return TrigField.zero(omega.dim, "form", omega.degree)
    total = parts[0]
    for extra in parts[1:]:
        total = total + extra
    return total


def _lie_multivector_trig(x, v):
    dim, k = v.dim, v.degree
    out = {}
    for key in index_sets(dim, k):
        acc = {}
        table = v.component(key)
        if table:
            for j in range(dim):
                dj = poly_diff(table, j)
                if dj:
                    acc = poly_add(acc, poly_mul(x.component((j,)), dj))
        for m, i_m in enumerate(key):
            x_comp = x.component((i_m,))
            if not x_comp:
                continue
            for j in range(dim):
                rep = replace_index(key, m, j)
                if rep is None:
                    continue
                sign, source = rep
                src_table = v.component(source)
                if not src_table:
                    continue
                acc = poly_add(acc, poly_mul(poly_diff(x_comp, j), src_table),
                               scale=-float(sign))
        if acc:
            out[key] = acc
    return TrigField(dim, "multivector", k, out)


def _axis_derivative(samples, axis, resolution):
    """4th-order central difference along a periodic lattice axis."""
    h = TWO_PI / resolution
    fwd1, bck1 = np.roll(samples, -1, axis), np.roll(samples, 1, axis)
    fwd2, bck2 = np.roll(samples, -2, axis), np.roll(samples, 2, axis)
    return (8.0 * (fwd1 - bck1) - (fwd2 - bck2)) / (12.0 * h)


def _lie_grid(x_field, target):
    dim, k, res = target.dim, target.degree, target.resolution
    pts = lattice(dim, res)
    if hasattr(x_field, "vector_with_jacobian"):
        x_vals, x_jac = x_field.vector_with_jacobian(pts)
    else:
        x_vals, x_jac = x_field.values(pts), x_field.jacobian(pts)
    grid_shape = (res,) * dim
    x_vals = np.asarray(x_vals).reshape(grid_shape + (dim,))
    x_jac = np.asarray(x_jac).reshape(grid_shape + (dim, dim))

    keys = index_sets(dim, k)
    pos = {key: i for i, key in enumerate(keys)}
    out = np.zeros_like(target.values)
    is_form = target.kind == "form" or k == 0
    for ci, key in enumerate(keys):
        comp = target.values[..., ci]
        # transport term X . grad(component)
        for j in range(dim):
            out[..., ci] += x_vals[..., j] * _axis_derivative(comp, j, res)
        # frame-variation term from DX
        for m, i_m in enumerate(key):
            for j in range(dim):
                rep = replace_index(key, m, j)
                if rep is None:
                    continue
                sign, source = rep
                src = target.values[..., pos[source]]
                if is_form:
                    out[..., ci] += float(sign) * x_jac[..., j, i_m] * src
                else:
                    out[..., ci] -= float(sign) * x_jac[..., i_m, j] * src
    return GridField(dim, res, target.kind, k, out, target.interp_order)


# ---------------------------------------------------------------------------
# transport under a torus map


def pullback_form(phi, omega):
    """(phi^* omega)(p) = omega(phi(p)) composed with wedge(D phi(p))."""
    if not isinstance(phi, TorusMap):
        raise TypeError("pullback_form expects a TorusMap")
    if omega.kind != "form" and omega.degree > 0:
        raise RankMismatch("pullback_form expects a form")
    if phi.dim != omega.dim:
        raise RankMismatch("dimension mismatch in pullback")
    res, k = omega.resolution, omega.degree
    pts = lattice(omega.dim, res)
    image, jac = phi.map_with_jacobian(pts)
    w = wedge_matrix(jac, k)
    vals = np.einsum("xab,xa->xb", w, omega.evaluate(image))
    return GridField(omega.dim, res, "form", k,
                     vals.reshape((res,) * omega.dim + (vals.shape[-1],)),
                     omega.interp_order)


def pushforward_multivector(phi, v):
    """(phi_* V)(p) = wedge(D phi) V, both evaluated at phi^{-1}(p)."""
    if not isinstance(phi, TorusMap):
        raise TypeError("pushforward_multivector expects a TorusMap")
    if v.kind != "multivector" and v.degree > 0:
        raise RankMismatch("pushforward_multivector expects a multivector")
    if phi.dim != v.dim:
        raise RankMismatch("dimension mismatch in pushforward")
    res, k = v.resolution, v.degree
    pts = lattice(v.dim, res)
    pre = phi.inverse(pts)
    jac = phi.jacobian(pre)
    w = wedge_matrix(jac, k)
    vals = np.einsum("xab,xb->xa", w, v.evaluate(pre))
    return GridField(v.dim, res, "multivector", k,
                     vals.reshape((res,) * v.dim + (vals.shape[-1],)),
                     v.interp_order)
