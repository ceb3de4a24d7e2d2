"""Dominated splittings of torus maps and their integrated exponents.

Bundle data is computed from exact orbit segments.  At each point p the
most expanded bundle is the limit of (Df^m at f^{-m}(p)) applied to a
seed frame, the most contracted one is the limit of (Df^{-m} at f^m(p)),
and a middle bundle is the principal-angle intersection of the two
enclosing limits.  Orbits use exact map inverses (reversed flows plus
Newton on the base part), so no field interpolation enters the
iteration: accuracy is limited only by the domination ratio raised to
the orbit depth.

Frames are computed on the lattice and on its preimage layer in one
batch, which makes the expansion factor -- the pairing of omega_F with
the pushforward of V_E -- an interpolation-free quantity as well.

The dual pair is built from the frame matrix B = [E1 | E2 | E3]: V_E is
the unit wedge of the E2 frame and omega_F collects the k x k minors of
the E2 rows of B^{-1}.  Cauchy-Binet then gives omega_F(V_E) = 1
identically, and omega_F kills any wedge with a factor in E1 or E3.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from lyaplab.errors import (InvarianceResidualHigh, NoDomination,
                            NormalizationSingular, PowerIterationStalled)
from lyaplab.field_calculus import (GridField, TrigField, index_sets, lattice,
                                    tree_sum, wedge_matrix)

#: minimal modulus ratio between consecutive eigenvalue groups
GAP_THRESHOLD = 1.01
#: loss-of-transversality guard: |omega_F| may not exceed 1/this
TRANSVERSALITY_TOL = 1e-8


# ---------------------------------------------------------------------------
# frame utilities


def plucker(frames, k):
    """Wedge coordinates of the column span: all k x k row minors.

    frames has shape (..., d, k); the result (..., C(d,k)) lists minors
    in the lexicographic row-set order shared with wedge_matrix.  For an
    orthonormal frame the result is a unit vector.
    """
    d = frames.shape[-2]
    cols = [np.linalg.det(frames[..., rows, :]) for rows in index_sets(d, k)]
    return np.stack(cols, axis=-1)


def _orthonormalize(frames):
    if frames.shape[-1] == 0:
        return frames
    q, _ = np.linalg.qr(frames)
    return q


def _sign_canonical(frames):
    """Flip each column so its largest-magnitude entry is positive."""
    if frames.shape[-1] == 0:
        return frames
    idx = np.argmax(np.abs(frames), axis=-2, keepdims=True)
    lead = np.take_along_axis(frames, idx, axis=-2)
    return frames * np.where(lead >= 0.0, 1.0, -1.0)


def principal_intersection(expanded, contracted, k):
    """Orthonormal basis of the k-dim intersection of two spans.

    The spans (shapes (..., d, a) and (..., d, b) with a + b - d = k)
    intersect along the principal directions with cosine nearest 1 --
    the top-k left singular directions of expanded^T contracted mapped
    back through the expanded frame.
    """
    m = np.swapaxes(expanded, -1, -2) @ contracted
    p, _, _ = np.linalg.svd(m)
    return expanded @ p[..., :k]


def max_frame_angle(split_a, split_b, bundle=2):
    """Largest principal angle (radians) between matching bundles."""
    ua = split_a.frames[bundle - 1]
    ub = split_b.frames[bundle - 1]
    s = np.linalg.svd(np.swapaxes(ua, -1, -2) @ ub, compute_uv=False)
    return float(np.max(np.arccos(np.clip(np.min(s, axis=-1), -1.0, 1.0))))


def _measured_rates(torus_map, points, frames):
    """Per-bundle expansion ranges and the pointwise domination ratio.

    Returns ([(log sigma_min, log sigma_max) or None per bundle], nu)
    where nu = max over points and consecutive nonempty bundle pairs of
    ||Df|_{E_i}|| / conorm(Df|_{E_{i+1}}) -- the quantity that must stay
    below 1 for a dominated splitting.
    """
    jac = torus_map.jacobian(points)
    tops, bots, bounds = [], [], []
    for u in frames:
        if u.shape[-1] == 0:
            tops.append(None)
            bots.append(None)
            bounds.append(None)
            continue
        s = np.linalg.svd(jac @ u, compute_uv=False)
        tops.append(s[..., 0])
        bots.append(s[..., -1])
        bounds.append((float(np.log(np.min(s[..., -1]))),
                       float(np.log(np.max(s[..., 0])))))
    nu = 0.0
    live = [i for i in range(3) if tops[i] is not None]
    for lo, hi in zip(live[:-1], live[1:]):
        nu = max(nu, float(np.max(tops[lo] / bots[hi])))
    return bounds, nu


# ---------------------------------------------------------------------------
# the splitting record


class FramedSplitting:
    """Frames, dual pair and expansion data of a dominated splitting.

    Immutable once constructed (array buffers are write-protected).  The
    three bundles are ordered by increasing expansion; the middle one is
    the distinguished bundle E whose exponent the formulas differentiate,
    and F is the direct sum of the outer two.
    """

    def __init__(self, torus_map, resolution, frames, preimage_points,
                 preimage_frames, *, constant=False, diagnostics=None):
        d = torus_map.dim
        self.dim = d
        self.resolution = int(resolution)
        self.dims = tuple(u.shape[-1] for u in frames)
        if sum(self.dims) != d:
            raise ValueError(f"bundle dimensions {self.dims} do not sum to {d}")
        self.k = self.dims[1]
        if self.k == 0:
            raise ValueError("the distinguished middle bundle must be nonempty")
        self._map = torus_map
        self.points = lattice(d, self.resolution)
        n = self.points.shape[0]

        for u in list(frames) + list(preimage_frames):
            r = u.shape[-1]
            if r == 0:
                continue
            gram = np.swapaxes(u, -1, -2) @ u
            if np.max(np.abs(gram - np.eye(r))) > 1e-12:
                raise ValueError("bundle frames are not orthonormal to 1e-12")

        # dual pair on both layers in one batch
        cat = [np.concatenate([a, b], axis=0)
               for a, b in zip(frames, preimage_frames)]
        basis = np.concatenate(cat, axis=-1)
        v_unit = plucker(cat[1], self.k)
        basis_inv = np.linalg.inv(basis)
        rows = basis_inv[..., self.dims[0]:self.dims[0] + self.k, :]
        omega = plucker(np.swapaxes(rows, -1, -2), self.k)
        peak = np.max(np.abs(omega))
        if peak > 1.0 / TRANSVERSALITY_TOL:
            raise NormalizationSingular(
                f"transversality of E with ker omega_F lost: "
                f"|omega_F| reaches {peak:.3e}")

        bounds, nu = _measured_rates(torus_map, self.points, frames)
        if nu >= 1.0:
            raise NoDomination(
                f"measured domination ratio {nu:.6f} is not below 1")
        self.expansion_bounds = tuple(bounds)
        self.domination_ratio = nu

        # orient the pair coherently: align every V with the mean direction,
        # itself signed so that its leading coordinate is positive
        ref = v_unit[:n].mean(axis=0)
        if np.linalg.norm(ref) < 1e-8:
            ref = v_unit[0]
        if ref[np.argmax(np.abs(ref))] < 0.0:
            ref = -ref
        flip = np.where(v_unit @ ref >= 0.0, 1.0, -1.0)[:, None]
        v_unit = v_unit * flip
        omega = omega * flip
        check = np.einsum("xc,xc->x", omega, v_unit)
        assert np.max(np.abs(check - 1.0)) < 1e-10

        self.frames = tuple(self._freeze(u[:n]) for u in cat)
        self.preimage_frames = tuple(self._freeze(u[n:]) for u in cat)
        self.preimage_points = self._freeze(np.asarray(preimage_points, float))
        self.omega_lattice = self._freeze(omega[:n])
        self.v_lattice = self._freeze(v_unit[:n])
        self.preimage_v = self._freeze(v_unit[n:])

        shape = (self.resolution,) * d
        ncomp = self.omega_lattice.shape[-1]
        self.omega_field = GridField(d, self.resolution, "form", self.k,
                                     omega[:n].reshape(shape + (ncomp,)))
        self.v_field = GridField(d, self.resolution, "multivector", self.k,
                                 v_unit[:n].reshape(shape + (ncomp,)))
        self.constant = bool(constant)
        if self.constant:
            self.omega_exact = TrigField.constant(d, "form", self.k,
                                                  omega[0].tolist())
            self.v_exact = TrigField.constant(d, "multivector", self.k,
                                              v_unit[0].tolist())
        else:
            self.omega_exact = None
            self.v_exact = None
        self.diagnostics = dict(diagnostics or {})

    @staticmethod
    def _freeze(arr):
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        return arr

    def __repr__(self):
        return (f"FramedSplitting(dims={self.dims}, res={self.resolution}, "
                f"nu={self.domination_ratio:.4f})")

    def frame_matrix(self):
        """The full frame B = [E1 | E2 | E3] per lattice point."""
        return np.concatenate(self.frames, axis=-1)

    def select(self, middle):
        """Re-slot the splitting so the chosen bundles form the middle.

        `middle` lists original bundle slots (1-based, consecutive), e.g.
        (1,) to study the most contracted bundle or (2, 3) to merge the
        upper two.  Frames are reused; only the dual pair and the
        measured rates are rebuilt, so no new power iteration runs.
        """
        middle = tuple(sorted(middle))
        if middle not in {(1,), (2,), (3,), (1, 2), (2, 3)}:
            raise ValueError(f"cannot re-slot around middle bundles {middle}")
        groups = ([i for i in (1, 2, 3) if i < middle[0]],
                  list(middle),
                  [i for i in (1, 2, 3) if i > middle[-1]])

        def gather(frames, slots):
            if not slots:
                return frames[0][..., :0]
            return _orthonormalize(
                np.concatenate([frames[s - 1] for s in slots], axis=-1))

        new_frames = tuple(gather(self.frames, g) for g in groups)
        new_pre = tuple(gather(self.preimage_frames, g) for g in groups)
        diag = dict(self.diagnostics)
        diag["selected_middle"] = middle
        return FramedSplitting(self._map, self.resolution, new_frames,
                               self.preimage_points, new_pre,
                               constant=self.constant, diagnostics=diag)


# ---------------------------------------------------------------------------
# constructors


def exact_splitting(torus_map, grouping, resolution=128):
    """Eigenspace splitting of a purely linear torus automorphism.

    `grouping` gives the bundle dimensions (d1, d2, d3) in order of
    increasing eigenvalue modulus.  Consecutive groups must be separated
    by a modulus ratio of at least GAP_THRESHOLD; a boundary through a
    complex-conjugate pair has ratio 1 and is rejected by the same test.
    """
    if torus_map.displacement is not None or torus_map.flows:
        raise ValueError("exact splitting requires a purely linear map")
    d = torus_map.dim
    d1, d2, d3 = (int(x) for x in grouping)
    if min(d1, d2, d3) < 0 or d1 + d2 + d3 != d or d2 == 0:
        raise ValueError(f"grouping {grouping} invalid for dimension {d}")

    evals, evecs = np.linalg.eig(torus_map.linear)
    order = np.argsort(np.abs(evals), kind="stable")
    evals, evecs = evals[order], evecs[:, order]
    moduli = np.abs(evals)
    for cut in (d1, d1 + d2):
        if 0 < cut < d and moduli[cut] / moduli[cut - 1] < GAP_THRESHOLD:
            raise NoDomination(
                f"modulus ratio {moduli[cut] / moduli[cut - 1]:.6f} at the "
                f"group boundary is below {GAP_THRESHOLD}")

    frames = []
    for start, size in ((0, d1), (d1, d2), (d1 + d2, d3)):
        cols = []
        i = start
        while i < start + size:
            lam, vec = evals[i], evecs[:, i]
            if abs(lam.imag) <= 1e-9 * (1.0 + abs(lam)):
                # rotate the phase away, then drop the imaginary dust
                lead = vec[np.argmax(np.abs(vec))]
                cols.append((vec * np.conj(lead)).real)
                i += 1
            else:
                cols.append(vec.real)
                cols.append(vec.imag)
                i += 2
        if cols:
            u = _orthonormalize(np.stack(cols, axis=1))
            # invariance of the span is the real correctness condition
            rep = u.T @ torus_map.linear @ u
            if np.max(np.abs(torus_map.linear @ u - u @ rep)) > 1e-9:
                raise NoDomination(
                    "group does not span an invariant subspace (a complex "
                    "pair was split across groups)")
            frames.append(u)
        else:
            frames.append(np.zeros((d, 0)))

    n = resolution ** d
    const = tuple(np.broadcast_to(u, (n, d, u.shape[-1])).copy()
                  for u in frames)
    pre = torus_map.inverse(lattice(d, resolution))
    diag = {"eigen_moduli": moduli.tolist(), "iterations": 0}
    return FramedSplitting(torus_map, resolution, const, pre, const,
                           constant=True, diagnostics=diag)


def power_splitting(f, seed, n_iter=200, tol=1e-10):
    """Invariant splitting of f by pushforward power iteration.

    The seed contributes the bundle dimensions and (mean) start frames;
    convergence is driven by the domination of f itself, at the measured
    contraction ratio per step.  Iteration stops when successive bundle
    projectors move less than `tol` in max norm, and fails with
    PowerIterationStalled after n_iter steps.
    """
    d = f.dim
    d1, d2, d3 = seed.dims
    if d1 + d3 == 0:
        raise ValueError("power iteration needs a nontrivial complement F")
    res = seed.resolution
    pts = lattice(d, res)
    n = pts.shape[0]
    empty = np.zeros((2 * n, d, 0))

    def seed_frame(slots):
        stack = np.concatenate(
            [_sign_canonical(seed.frames[s - 1]) for s in slots], axis=-1)
        q, _ = np.linalg.qr(stack.mean(axis=0))
        return q

    # the top block is always a forward limit, the bottom a backward one
    w_top = seed_frame((2, 3))
    w_bot = seed_frame((1, 2))
    w_one = seed_frame((1,)) if d1 > 0 else None
    w_three = seed_frame((3,)) if d3 > 0 else None

    def stable_limit(factors, w):
        """QR-stabilized direction of factors[0] @ ... @ factors[-1] @ w.

        Applying the innermost factor first and re-orthonormalizing after
        every step keeps the dynamic range bounded, so the weaker
        directions inside a block survive arbitrarily deep products
        (a raw matrix product loses them once the internal singular value
        spread passes 1/eps).
        """
        v = np.broadcast_to(w, (n,) + w.shape).copy()
        for fac in reversed(factors):
            v = fac @ v
            if v.shape[-1] == 1:
                v = v / np.linalg.norm(v, axis=-2, keepdims=True)
            else:
                v = np.linalg.qr(v)[0]
        return v

    # Jacobian sequences along exact orbits.  The preimage layer reuses
    # the lattice sequences shifted by one step:
    #   A_m(q1) = J_2 ... J_{m+1},   M_m(q1) = Df^{-1}(q1) M_{m-1}(p).
    pre_pts, g1 = f.inverse_with_jacobian(pts)
    jac_back = [np.linalg.inv(g1)]           # J_1, J_2, ... = Df at f^{-i}(p)
    kinv_fwd = []                            # Df^{-1} along the forward orbit
    back_pt = pre_pts
    fwd_pt = pts

    prev = None
    diffs = []
    converged = False
    iterations = 0
    for m in range(1, n_iter + 1):
        iterations = m
        back_pt, g = f.inverse_with_jacobian(back_pt)
        jac_back.append(np.linalg.inv(g))    # J_{m+1}
        fwd_nxt, j = f.map_with_jacobian(fwd_pt)
        kinv_fwd.append(np.linalg.inv(j))
        fwd_pt = fwd_nxt

        def forward_limit(w):
            return np.concatenate([stable_limit(jac_back[:m], w),
                                   stable_limit(jac_back[1:m + 1], w)], axis=0)

        def backward_limit(w):
            return np.concatenate(
                [stable_limit(kinv_fwd[:m], w),
                 stable_limit([g1] + kinv_fwd[:m - 1], w)], axis=0)

        u1 = backward_limit(w_one) if d1 > 0 else empty
        u3 = forward_limit(w_three) if d3 > 0 else empty
        if d1 > 0 and d3 > 0:
            u2 = principal_intersection(forward_limit(w_top),
                                        backward_limit(w_bot), d2)
        elif d1 == 0:
            u2 = backward_limit(w_bot)
        else:
            u2 = forward_limit(w_top)

        projs = [u @ np.swapaxes(u, -1, -2) for u in (u1, u2, u3)
                 if u.shape[-1] > 0]
        if prev is not None:
            diff = max(float(np.max(np.abs(a - b)))
                       for a, b in zip(projs, prev))
            diffs.append(diff)
            if diff < tol:
                converged = True
                break
        prev = projs

    if not converged:
        ratios = [b / a for a, b in zip(diffs, diffs[1:]) if a > 0.0]
        rate = float(np.median(ratios)) if ratios else float("nan")
        raise PowerIterationStalled(
            f"direction residual {diffs[-1] if diffs else float('nan'):.3e} "
            f"after {n_iter} iterations (contraction ratio ~ {rate:.4f})")

    ratios = [b / a for a, b in zip(diffs, diffs[1:]) if a > 0.0]
    diag = {
        "iterations": iterations,
        "direction_residual": diffs[-1],
        "contraction_ratio": float(np.median(ratios)) if ratios else 0.0,
        "tolerance": tol,
    }
    frames = tuple(u[:n] for u in (u1, u2, u3))
    pre_frames = tuple(u[n:] for u in (u1, u2, u3))
    return FramedSplitting(f, res, frames, pre_pts, pre_frames,
                           constant=False, diagnostics=diag)


# ---------------------------------------------------------------------------
# expansion data


def _pushforward_data(f, split):
    """(f_* V at the lattice, its omega-pairing, invariance residual)."""
    jac = f.jacobian(split.preimage_points)
    w = wedge_matrix(jac, split.k)
    push = np.einsum("xab,xb->xa", w, split.preimage_v)
    eta_vals = np.einsum("xc,xc->x", split.omega_lattice, push)
    defect = push - eta_vals[:, None] * split.v_lattice
    resid = np.linalg.norm(defect, axis=-1) / np.linalg.norm(
        split.v_lattice, axis=-1)
    return push, eta_vals, float(np.max(resid))


def invariance_residual(f, split):
    """max_p ||f_* V - eta V|| / ||V|| -- how invariant the data really is."""
    return _pushforward_data(f, split)[2]


def eta_field(f, split, residual_tol=1e-8):
    """The expansion factors of f on the distinguished bundle.

    Returns (eta, eta_tilde) as scalar grid fields, where eta_tilde(p)
    is the pairing of omega_F with the pushforward of V_E -- evaluated
    from the stored preimage layer, hence interpolation-free -- and
    eta = eta_tilde o f is tabulated by cubic interpolation of eta_tilde
    at the image points (exact when the splitting is constant).

    The factor may be negative when f reverses the bundle orientation;
    exponent integrals use log |eta_tilde|.
    """
    if split.dims[0] + split.dims[2] == 0:
        raise ValueError("F must be nontrivial: the middle bundle cannot "
                         "be the whole tangent space")
    _, eta_vals, resid = _pushforward_data(f, split)
    if resid > residual_tol:
        raise InvarianceResidualHigh(
            f"splitting is invariant for this map only to {resid:.3e} "
            f"(needed {residual_tol:g}); was it computed for a different map?")
    eta_tilde = GridField.scalar(split.dim, split.resolution, eta_vals)
    composed = eta_tilde.evaluate(f(split.points))[..., 0]
    eta = GridField.scalar(split.dim, split.resolution, composed)
    return eta, eta_tilde


def lyapunov_exponent(f, split):
    """Integrated exponent of the distinguished bundle: mean log |eta|."""
    _, eta_tilde = eta_field(f, split)
    logs = np.log(np.abs(eta_tilde.values.reshape(-1)))
    return tree_sum(logs) / logs.size


def birkhoff_oracle(f, seed_plane, n_orbit=10000, n_points=256, n_burn=0):
    """Independent exponent estimate from renormalized orbit products.

    Pushes an orthonormal seed k-frame along n_orbit steps of the orbits
    of about n_points lattice start points, re-orthonormalizing each
    step and averaging the accumulated log volume growth.  Converges (in
    n_orbit) to the sum of the top k exponents; middle-bundle exponents
    are differences of two oracle calls.

    The seed plane's rotation onto the dominant plane decays
    exponentially but still leaves an O(1/n_orbit) bias in the time
    average; n_burn discards that transient by iterating the frame
    (without accumulating) before measurement starts.
    """
    d = f.dim
    res = max(1, int(round(n_points ** (1.0 / d))))
    pts = lattice(d, res)
    w0, _ = np.linalg.qr(np.asarray(seed_plane, dtype=float))
    w = np.broadcast_to(w0, (pts.shape[0],) + w0.shape).copy()
    acc = np.zeros(pts.shape[0])
    p = pts
    for step in range(-n_burn, n_orbit):
        p, jac = f.map_with_jacobian(p)
        w, r = np.linalg.qr(jac @ w)
        if step < 0:
            continue
        diag = np.diagonal(r, axis1=-2, axis2=-1)
        acc += np.sum(np.log(np.abs(diag)), axis=-1)
    return tree_sum(acc) / (acc.size * n_orbit)


# ---------------------------------------------------------------------------
# exponent curves


@dataclass
class ExponentCurve:
    """Samples of t -> lambda(t) with formula and finite-difference data."""

    ts: np.ndarray
    lambdas: np.ndarray
    lambda_prime: float | None = None
    lambda_second: float | None = None
    fd_first: dict = dataclass_field(default_factory=dict)
    fd_second: dict = dataclass_field(default_factory=dict)
    diagnostics: dict = dataclass_field(default_factory=dict)

    def __post_init__(self):
        self.ts = np.asarray(self.ts, dtype=float)
        self.lambdas = np.asarray(self.lambdas, dtype=float)
        if self.ts.shape != self.lambdas.shape:
            raise ValueError("ts and lambdas must have matching shapes")
        if not np.any(self.ts == 0.0):
            raise ValueError("an exponent curve must include t = 0")

    @property
    def lambda0(self):
        return float(self.lambdas[self.ts == 0.0][0])

    def value_at(self, t):
        hit = np.flatnonzero(self.ts == t)
        if hit.size == 0:
            raise KeyError(f"no sample at t={t}")
        return float(self.lambdas[hit[0]])

    def symmetric_steps(self):
        """Positive steps h with both lambda(h) and lambda(-h) sampled."""
        pos = sorted(t for t in self.ts if t > 0.0)
        return [h for h in pos if np.any(self.ts == -h)]
