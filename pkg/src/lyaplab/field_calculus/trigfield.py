"""Exact trigonometric-polynomial fields on the d-torus [0, 2*pi)^d.

A field component is a finite sum

    sum_n  c_n cos(n.x) + s_n sin(n.x)

over integer frequency vectors n, stored sparsely with a canonical sign
convention (first nonzero entry of n positive).  Sums, products,
derivatives and torus means are all closed-form, so downstream code can
rely on coefficient-level identities (vanishing divergences, exact zero
means of derivatives, d of d = 0) instead of discretization error.
"""

from __future__ import annotations

import numpy as np

from lyaplab.errors import RankMismatch
from lyaplab.field_calculus.multilinear import index_sets, insert_index

TWO_PI = 2.0 * np.pi


# ---------------------------------------------------------------------------
# term-table helpers: a "poly" is {frequency tuple: (cos_amp, sin_amp)}


def _canonical(freq, c, s):
    for entry in freq:
        if entry > 0:
            return freq, c, s
        if entry < 0:
            return tuple(-m for m in freq), c, -s
    # the zero frequency: sin(0 . x) contributes nothing
    return freq, c, 0.0


def _accumulate(table, freq, c, s):
    freq, c, s = _canonical(freq, c, s)
    old_c, old_s = table.get(freq, (0.0, 0.0))
    table[freq] = (old_c + c, old_s + s)


def _cleaned(table):
    return {n: cs for n, cs in table.items() if cs[0] != 0.0 or cs[1] != 0.0}


def poly_add(p, q, scale=1.0):
    out = dict(p)
    for n, (c, s) in q.items():
        _accumulate(out, n, scale * c, scale * s)
    return _cleaned(out)


def poly_scale(p, a):
    a = float(a)
    return _cleaned({n: (a * c, a * s) for n, (c, s) in p.items()})


def poly_diff(p, axis):
    out = {}
    for n, (c, s) in p.items():
        if n[axis] != 0:
            out[n] = (s * n[axis], -c * n[axis])
    return out


def poly_mul(p, q):
    """Product of two term tables via the product-to-sum identities."""
    out = {}
    for n, (c1, s1) in p.items():
        for m, (c2, s2) in q.items():
            diff = tuple(a - b for a, b in zip(n, m))
            tot = tuple(a + b for a, b in zip(n, m))
            _accumulate(out, diff, 0.5 * (c1 * c2 + s1 * s2), 0.5 * (s1 * c2 - c1 * s2))
            _accumulate(out, tot, 0.5 * (c1 * c2 - s1 * s2), 0.5 * (s1 * c2 + c1 * s2))
    return _cleaned(out)


def _compile(polys, dim):
    """Shared frequency table + coefficient matrices for batch evaluation."""
    freq_list = sorted({n for p in polys for n in p})
    cos_t = np.zeros((len(freq_list), len(polys)))
    sin_t = np.zeros_like(cos_t)
    row = {n: r for r, n in enumerate(freq_list)}
    for col, p in enumerate(polys):
        for n, (c, s) in p.items():
            cos_t[row[n], col] = c
            sin_t[row[n], col] = s
    freqs = np.array(freq_list, dtype=float).reshape(len(freq_list), dim)
    return freqs, cos_t, sin_t


def _eval_compiled(compiled, points):
    freqs, cos_t, sin_t = compiled
    pts = np.asarray(points, dtype=float)
    phases = pts @ freqs.T
    return np.cos(phases) @ cos_t + np.sin(phases) @ sin_t


class TrigField:
    """A k-form or k-multivector field with trig-polynomial components.

    `components` maps a sorted index tuple (length = degree) to a term
    table; degree-0 fields are scalars keyed by ().  Instances are
    treated as immutable — every operation returns a new field.
    """

    __slots__ = ("dim", "kind", "degree", "components", "_table", "_vj_table")

    def __init__(self, dim, kind, degree, components):
        if kind not in ("form", "multivector"):
            raise ValueError(f"unknown field kind {kind!r}")
        if not 0 <= degree <= dim:
            raise ValueError("degree must lie in [0, dim]")
        self.dim = int(dim)
        self.kind = "form" if degree == 0 else kind
        self.degree = int(degree)
        valid = set(index_sets(self.dim, self.degree))
        comps = {}
        for key, table in components.items():
            key = tuple(int(i) for i in key)
            if key not in valid:
                raise ValueError(f"invalid component index {key} for degree {degree}")
            acc = {}
            for freq, (c, s) in table.items():
                if len(freq) != self.dim:
                    raise ValueError("frequency vector has wrong dimension")
                _accumulate(acc, tuple(int(f) for f in freq), float(c), float(s))
            acc = _cleaned(acc)
            if acc:
                comps[key] = acc
        self.components = comps
        self._table = None
        self._vj_table = None

    # -- constructors -------------------------------------------------

    @classmethod
    def zero(cls, dim, kind="form", degree=0):
        return cls(dim, kind, degree, {})

    @classmethod
    def scalar(cls, dim, table):
        return cls(dim, "form", 0, {(): table})

    @classmethod
    def scalar_harmonic(cls, dim, freq, cos_amp=0.0, sin_amp=0.0):
        return cls.scalar(dim, {tuple(freq): (cos_amp, sin_amp)})

    @classmethod
    def constant(cls, dim, kind, degree, values):
        keys = index_sets(dim, degree)
        vals = np.asarray(values, dtype=float).reshape(len(keys))
        zero = (0,) * dim
        comps = {k: {zero: (v, 0.0)} for k, v in zip(keys, vals) if v != 0.0}
        return cls(dim, kind, degree, comps)

    @classmethod
    def vector(cls, dim, component_tables):
        """Vector field from d scalar term tables."""
        comps = {(i,): t for i, t in enumerate(component_tables) if t}
        return cls(dim, "multivector", 1, comps)

    # -- structure ------------------------------------------------------

    @property
    def ncomp(self):
        return len(index_sets(self.dim, self.degree))

    def component(self, key):
        """Term table of one component (empty dict when absent)."""
        return self.components.get(tuple(key), {})

    def n_terms(self):
        return sum(len(t) for t in self.components.values())

    def __repr__(self):
        return (f"TrigField(dim={self.dim}, {self.kind} of degree "
                f"{self.degree}, {self.n_terms()} terms)")

    def _like(self, components):
        return TrigField(self.dim, self.kind, self.degree, components)

    def _check_match(self, other):
        if (self.dim, self.degree) != (other.dim, other.degree) or self.kind != other.kind:
            raise RankMismatch(
                f"field mismatch: {self.kind}/{self.degree}/d{self.dim} vs "
                f"{other.kind}/{other.degree}/d{other.dim}")

    # -- arithmetic -----------------------------------------------------

    def __add__(self, other):
        self._check_match(other)
        out = dict(self.components)
        for key, table in other.components.items():
            out[key] = poly_add(out.get(key, {}), table)
        return self._like(out)

    def __sub__(self, other):
        return self + (-1.0) * other

    def __neg__(self):
        return (-1.0) * self

    def __mul__(self, other):
        if isinstance(other, TrigField):
            return _field_product(self, other)
        a = float(other)
        return self._like({k: poly_scale(t, a) for k, t in self.components.items()})

    __rmul__ = __mul__

    # -- calculus -------------------------------------------------------

    def partial(self, axis):
        """Exact partial derivative along one coordinate."""
        return self._like({k: poly_diff(t, axis) for k, t in self.components.items()})

    def exterior_derivative(self):
        if self.kind != "form":
            raise RankMismatch("exterior derivative acts on forms")
        out = {}
        for key, table in self.components.items():
            for j in range(self.dim):
                ins = insert_index(key, j)
                if ins is None:
                    continue
                sign, new_key = ins
                dt = poly_diff(table, j)
                if dt:
                    out[new_key] = poly_add(out.get(new_key, {}), dt, scale=float(sign))
        return TrigField(self.dim, "form", self.degree + 1, out)

    def divergence(self):
        """Exact divergence of a vector field, as a scalar TrigField."""
        self._require_vector()
        acc = {}
        for i in range(self.dim):
            acc = poly_add(acc, poly_diff(self.component((i,)), i))
        return TrigField.scalar(self.dim, acc)

    def integral(self):
        """Mean over the torus with normalized Lebesgue measure (exact)."""
        if self.degree != 0:
            raise RankMismatch("torus mean is defined for scalar fields")
        return self.component(()).get((0,) * self.dim, (0.0, 0.0))[0]

    # -- evaluation -----------------------------------------------------

    def evaluate(self, points):
        """Component values at points of shape (..., d) -> (..., ncomp)."""
        if self._table is None:
            keys = index_sets(self.dim, self.degree)
            self._table = _compile([self.component(k) for k in keys], self.dim)
        return _eval_compiled(self._table, points)

    def evaluate_scalar(self, points):
        if self.degree != 0:
            raise RankMismatch("scalar evaluation needs a degree-0 field")
        return self.evaluate(points)[..., 0]

    def _require_vector(self):
        if self.kind != "multivector" or self.degree != 1:
            raise RankMismatch("expected a vector field (degree-1 multivector)")

    def values(self, points):
        """Vector-field values, shape (..., d)."""
        self._require_vector()
        return self.evaluate(points)

    def vector_with_jacobian(self, points):
        """Values and Jacobian of a vector field in one fused evaluation.

        Returns (X, J) with X of shape (..., d) and J[..., i, j] equal to
        the derivative of component i along axis j.  The two share one
        phase/sincos pass, which matters inside flow integrators.
        """
        self._require_vector()
        if self._vj_table is None:
            polys = [self.component((i,)) for i in range(self.dim)]
            for i in range(self.dim):
                base = self.component((i,))
                polys.extend(poly_diff(base, j) for j in range(self.dim))
            self._vj_table = _compile(polys, self.dim)
        flat = _eval_compiled(self._vj_table, points)
        d = self.dim
        lead = flat.shape[:-1]
        return flat[..., :d], flat[..., d:].reshape(lead + (d, d))

    def jacobian(self, points):
        return self.vector_with_jacobian(points)[1]

    # -- bounds -----------------------------------------------------------

    def sup_bound(self):
        """Coefficient-l1 bound on max_I sup |component_I|."""
        if not self.components:
            return 0.0
        return max(sum(abs(c) + abs(s) for c, s in t.values())
                   for t in self.components.values())

    def derivative_bound(self):
        """Entrywise sup bounds B[i, j] >= sup |d X_i / d x_j| (vector fields)."""
        self._require_vector()
        bound = np.zeros((self.dim, self.dim))
        for i in range(self.dim):
            for n, (c, s) in self.component((i,)).items():
                bound[i] += np.abs(n) * (abs(c) + abs(s))
        return bound

    def compose_linear(self, matrix):
        """Componentwise composition with an integer linear torus map.

        (W o A)(p) = W(A p): each term's frequency n is remapped to A^T n,
        exactly.  Only the scalar component functions are composed; any
        variance factor (wedge of the Jacobian) is the caller's business.
        """
        a = np.asarray(matrix)
        mat = np.rint(a).astype(int)
        if not np.array_equal(a, mat):
            raise ValueError("compose_linear needs an integer matrix")
        out = {}
        for key, table in self.components.items():
            new = {}
            for n, (c, s) in table.items():
                _accumulate(new, tuple(int(v) for v in mat.T @ np.array(n)),
                            c, s)
            cleaned = _cleaned(new)
            if cleaned:
                out[key] = cleaned
        return self._like(out)

    # -- conversion / io ---------------------------------------------------

    def to_grid(self, resolution, interp_order=3):
        """Sample onto the uniform lattice as a GridField (never the reverse)."""
        from lyaplab.field_calculus.gridfield import GridField, lattice

        vals = self.evaluate(lattice(self.dim, resolution))
        shape = (resolution,) * self.dim + (self.ncomp,)
        return GridField(self.dim, resolution, self.kind, self.degree,
                         vals.reshape(shape), interp_order)

    def save_text(self, path):
        """Text dump, one term per line: component  n_1 ... n_d  cos  sin.

        Component indices are 0-based and comma-joined ('-' for scalars);
        amplitudes use repr() so the round-trip is exact.
        """
        lines = [
            "# lyaplab trig field",
            f"# dim {self.dim}",
            f"# kind {self.kind}",
            f"# degree {self.degree}",
        ]
        for key in sorted(self.components):
            label = ",".join(map(str, key)) if key else "-"
            table = self.components[key]
            for n in sorted(table):
                c, s = table[n]
                lines.append(" ".join([label, *map(str, n), repr(c), repr(s)]))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def load_text(cls, path):
        meta = {}
        comps = {}
        with open(path) as fh:
            for raw in fh:
                line = raw.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    parts = line[1:].split()
                    if len(parts) == 2 and parts[0] in ("dim", "kind", "degree"):
                        meta[parts[0]] = parts[1]
                    continue
                fields = line.split()
                dim = int(meta["dim"])
                if len(fields) != dim + 3:
                    raise ValueError(f"malformed term line: {line!r}")
                key = () if fields[0] == "-" else tuple(int(i) for i in fields[0].split(","))
                freq = tuple(int(v) for v in fields[1:1 + dim])
                c, s = float(fields[-2]), float(fields[-1])
                table = comps.setdefault(key, {})
                _accumulate(table, freq, c, s)
        for need in ("dim", "kind", "degree"):
            if need not in meta:
                raise ValueError(f"missing '# {need}' header")
        return cls(int(meta["dim"]), meta["kind"], int(meta["degree"]), comps)


def _field_product(a, b):
    """Product where at least one factor is a scalar field."""
    if a.degree != 0 and b.degree != 0:
        raise RankMismatch("can only multiply by a scalar (degree-0) field")
    if a.degree != 0:
        a, b = b, a
    if a.dim != b.dim:
        raise RankMismatch("dimension mismatch in product")
    scalar = a.component(())
    out = {k: poly_mul(scalar, t) for k, t in b.components.items()}
    return TrigField(b.dim, b.kind, b.degree, out)
