"""Finite-dimensional model: derivatives of a simple eigenvalue's logarithm.

For an invertible matrix ``A`` with a simple real eigenvalue ``eta`` and the
multiplicative family

    A(t) = B(t) A,      B(t) ~ exp(t*X) * exp(t^2/2 * Y),

so that ``X = B'(0)`` and ``Y = B''(0) - B'(0)^2``, the log-eigenvalue
``t -> log eta(t)`` has closed-form derivatives at ``t = 0``:

    (log eta)'(0)  = v* X v
    v'(0)          = [(Id - A/eta)|_{ker v*}]^{-1} P X v,   P u = u - (v* u) v
    (log eta)''(0) = v* Y v + v* X X v - (v* X v)^2 + (2/eta) v* X A v'(0)

with ``v`` the right eigenvector and ``v*`` the left functional normalized so
``v* v = 1``.  This is the scalar model of the bundle formulas implemented in
``derivatives``; everything here is dense linear algebra.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import EigenComplex, EigenNotSimple, SingularRestriction

__all__ = [
    "SimpleEigenData",
    "MatrixFamilyTangent",
    "continue_simple_eigen",
    "dlog_eta",
    "v_prime",
    "d2log_eta",
    "family_at",
    "fd_dlog_eta",
    "fd_d2log_eta",
    "random_real_spectrum_matrix",
    "random_matrix_family",
]


@dataclass(frozen=True)
class SimpleEigenData:
    """A simple real eigenvalue with its right/left eigendata.

    ``v_star`` is stored as a row (1-d array) with the normalization
    ``v_star @ v == 1``.  ``complement_basis`` has orthonormal columns
    spanning ker v*, which is the A-invariant complement of span(v).
    """

    eta: float
    v: np.ndarray
    v_star: np.ndarray
    complement_basis: np.ndarray

    def __post_init__(self):
        pairing = float(self.v_star @ self.v)
        if abs(pairing - 1.0) > 1e-14:
            raise ValueError(f"v* v = {pairing!r}, expected 1 to 1e-14")
        if self.complement_basis.shape != (self.v.size, self.v.size - 1):
            raise ValueError("complement_basis must be d x (d-1)")
        worst = float(np.max(np.abs(self.v_star @ self.complement_basis), initial=0.0))
        if worst > 1e-12:
            raise ValueError(f"complement basis leaks out of ker v*: {worst:.3e}")

    def residual(self, a: np.ndarray) -> float:
        """Max of the right and left eigen-residuals relative to |A| |v|."""
        scale = np.linalg.norm(a) * np.linalg.norm(self.v)
        right = np.linalg.norm(a @ self.v - self.eta * self.v)
        left = np.linalg.norm(self.v_star @ a - self.eta * self.v_star)
        return float(max(right, left) / scale)


@dataclass(frozen=True)
class MatrixFamilyTangent:
    """Base matrix plus first/second multiplicative tangents (A, X, Y)."""

    base: np.ndarray
    first_tangent: np.ndarray
    second_tangent: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        a = np.asarray(self.base, dtype=float)
        object.__setattr__(self, "base", a)
        d = a.shape[0]
        if a.shape != (d, d):
            raise ValueError("base must be square")
        x = np.asarray(self.first_tangent, dtype=float)
        if x.shape != a.shape:
            raise ValueError("first_tangent shape mismatch")
        object.__setattr__(self, "first_tangent", x)
        y = self.second_tangent
        y = np.zeros_like(a) if y is None else np.asarray(y, dtype=float)
        if y.shape != a.shape:
            raise ValueError("second_tangent shape mismatch")
        object.__setattr__(self, "second_tangent", y)
        norm = np.linalg.norm(a, 2)
        if abs(np.linalg.det(a)) <= 1e-12 * norm**d:
            raise ValueError("base matrix is (numerically) singular")


def continue_simple_eigen(
    a: np.ndarray,
    seed_eigenvalue: float,
    gap_rtol: float = 1e-8,
    imag_tol: float = 1e-10,
    maxiter: int = 200,
) -> SimpleEigenData:
    """Locate the simple real eigenvalue of ``a`` nearest ``seed_eigenvalue``.

    Validation uses the full spectrum; the eigenvector itself is then
    refined by shifted inverse iteration from the deterministic all-ones
    start vector, so repeat runs are bit-identical.

    Raises EigenComplex if the nearest eigenvalue is not real,
    EigenNotSimple if a second eigenvalue sits within the isolation gap.
    """
    a = np.asarray(a, dtype=float)
    d = a.shape[0]
    scale = max(1.0, float(np.linalg.norm(a, 2)))
    eigs = np.linalg.eigvals(a)
    dist = np.abs(eigs - seed_eigenvalue)
    order = np.argsort(dist)
    nearest = eigs[order[0]]
    if abs(nearest.imag) > imag_tol * max(1.0, abs(nearest)):
        raise EigenComplex(
            f"eigenvalue nearest seed {seed_eigenvalue} is {nearest}, not real"
        )
    if d > 1 and dist[order[1]] - dist[order[0]] <= gap_rtol * scale:
        raise EigenNotSimple(
            f"eigenvalues {nearest} and {eigs[order[1]]} both lie within the "
            f"isolation gap of seed {seed_eigenvalue}"
        )

    shift = float(nearest.real)
    ident = np.eye(d)

    def _inverse_iterate(mat: np.ndarray) -> np.ndarray:
        vec = np.ones(d) / np.sqrt(d)
        shifted = mat - shift * ident
        for _ in range(maxiter):
            try:
                new = np.linalg.solve(shifted, vec)
            except np.linalg.LinAlgError:
                # exactly singular shift: nudge by one ulp-scale step
                shifted = mat - (shift + 1e-12 * scale) * ident
                new = np.linalg.solve(shifted, vec)
            new = new / np.linalg.norm(new)
            if np.linalg.norm(new - vec) < 1e-15 or np.linalg.norm(new + vec) < 1e-15:
                vec = new
                break
            vec = new
        return vec

    v = _inverse_iterate(a)
    # deterministic sign: largest-magnitude component positive
    k = int(np.argmax(np.abs(v)))
    if v[k] < 0:
        v = -v
    eta = float(v @ a @ v)  # Rayleigh quotient; v has unit norm

    u = _inverse_iterate(a.T)
    pairing = float(u @ v)
    if abs(pairing) < 1e-12:
        raise EigenNotSimple("left/right eigenvectors nearly orthogonal")
    v_star = u / pairing

    right = np.linalg.norm(a @ v - eta * v)
    left = np.linalg.norm(v_star @ a - eta * v_star)
    tol = 1e-10 * np.linalg.norm(a) * max(np.linalg.norm(v), np.linalg.norm(v_star))
    if max(right, left) > tol:
        raise ValueError(
            f"eigen residual {max(right, left):.3e} exceeds {tol:.3e}; "
            "spectrum too ill-conditioned for the requested eigenvalue"
        )

    comp = scipy.linalg.null_space(v_star[None, :])
    return SimpleEigenData(eta=eta, v=v, v_star=v_star, complement_basis=comp)


def dlog_eta(fam: MatrixFamilyTangent, eig: SimpleEigenData) -> float:
    """First derivative of log eta along the family: v* X v."""
    return float(eig.v_star @ fam.first_tangent @ eig.v)


def v_prime(fam: MatrixFamilyTangent, eig: SimpleEigenData) -> np.ndarray:
    """Derivative of the eigenvector curve t -> v(t) (normalized v* v(t) = 1).

    Solves the bordered system

        [eta*Id - A,  v] [x ]   [eta * P X v]
        [v*,          0] [mu] = [0          ]

    whose unique solution has mu = 0 and x = v'(0).  The border enforces
    v* x = 0 without ever choosing a basis for the complement.
    """
    a, x_t = fam.base, fam.first_tangent
    eta, v, v_star = eig.eta, eig.v, eig.v_star
    d = v.size
    xv = x_t @ v
    pxv = xv - (v_star @ xv) * v
    bordered = np.zeros((d + 1, d + 1))
    bordered[:d, :d] = eta * np.eye(d) - a
    bordered[:d, d] = v
    bordered[d, :d] = v_star
    cond = np.linalg.cond(bordered)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularRestriction(
            f"restricted resolvent condition ~{cond:.3e} exceeds 1e12"
        )
    rhs = np.concatenate([eta * pxv, [0.0]])
    sol = np.linalg.solve(bordered, rhs)
    return sol[:d]


def d2log_eta(fam: MatrixFamilyTangent, eig: SimpleEigenData) -> float:
    """Second derivative of log eta at t = 0 (closed form, see module docs)."""
    a, x_t, y_t = fam.base, fam.first_tangent, fam.second_tangent
    eta, v, v_star = eig.eta, eig.v, eig.v_star
    vp = v_prime(fam, eig)
    first = float(v_star @ x_t @ v)
    return float(
        v_star @ y_t @ v
        + v_star @ x_t @ (x_t @ v)
        - first**2
        + (2.0 / eta) * (v_star @ x_t @ (a @ vp))
    )


# --- finite-difference oracles -------------------------------------------
#
# These recompute the full eigensolve at B(t) A and difference the results;
# they share no code path with the closed forms above, which is the point.


def family_at(fam: MatrixFamilyTangent, t: float) -> np.ndarray:
    """The family member A(t) = exp(t X) exp(t^2/2 Y) A."""
    b = scipy.linalg.expm(t * fam.first_tangent) @ scipy.linalg.expm(
        0.5 * t * t * fam.second_tangent
    )
    return b @ fam.base


def _log_eta_at(fam: MatrixFamilyTangent, eig: SimpleEigenData, t: float) -> float:
    cont = continue_simple_eigen(family_at(fam, t), eig.eta)
    return float(np.log(abs(cont.eta)))


def fd_dlog_eta(
    fam: MatrixFamilyTangent, eig: SimpleEigenData, h: float = 1e-5
) -> float:
    """Richardson-extrapolated central difference of t -> log eta(t)."""

    def central(step: float) -> float:
        return (_log_eta_at(fam, eig, step) - _log_eta_at(fam, eig, -step)) / (
            2.0 * step
        )

    return (4.0 * central(h / 2) - central(h)) / 3.0


def fd_d2log_eta(
    fam: MatrixFamilyTangent, eig: SimpleEigenData, h: float = 1e-3
) -> float:
    """Richardson-extrapolated second central difference of log eta."""
    log0 = float(np.log(abs(eig.eta)))

    def second(step: float) -> float:
        plus = _log_eta_at(fam, eig, step)
        minus = _log_eta_at(fam, eig, -step)
        return (plus - 2.0 * log0 + minus) / step**2

    return (4.0 * second(h / 2) - second(h)) / 3.0


# ---------------------------------------------------------------------------
# seeded random instances, shared by the test suite and the CLI experiments


def random_real_spectrum_matrix(rng, d, min_sep=0.15, max_cond=40.0):
    """A d x d matrix with distinct, well-separated real eigenvalues.

    Built as S diag(lams) S^-1 with a conditioning cap on S so the
    eigenproblem stays benign.  Deterministic given the rng state.
    """
    while True:
        lams = rng.uniform(0.3, 3.0, size=d) * rng.choice([-1.0, 1.0], size=d)
        gaps = np.abs(lams[:, None] - lams[None, :])
        np.fill_diagonal(gaps, np.inf)
        if gaps.min() >= min_sep:
            break
    while True:
        s = rng.standard_normal((d, d))
        if np.linalg.cond(s) <= max_cond:
            break
    a = s @ np.diag(lams) @ np.linalg.inv(s)
    return a, np.sort(lams)


def random_matrix_family(rng, d, with_second=True, tangent_scale=1.0):
    """A random (A, X, Y) family instance plus the seed eigenvalue to track."""
    a, lams = random_real_spectrum_matrix(rng, d)
    x = tangent_scale * rng.standard_normal((d, d))
    y = tangent_scale * rng.standard_normal((d, d)) if with_second else None
    # track the eigenvalue of largest modulus: max isolation from the rest
    seed = lams[np.argmax(np.abs(lams))]
    return MatrixFamilyTangent(a, x, y), float(seed)
