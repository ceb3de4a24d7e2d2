"""Spectral regularity laboratory for circle functions and torus averages.

Everything here works on exact Fourier data: functions enter as sparse
coefficient tables, circle convolution is a pointwise coefficient product,
and Holder regularity is read off the decay of dyadic-block energies

    S_k = sqrt( sum_{2^k <= |n| < 2^{k+1}} |a(n)|^2 )  ~  2^{-k alpha}.

The block route turns the qualitative statement "convolution adds the
Holder exponents" into a measurable slope, including the boundary case
alpha + beta = 1 where the convolution lands in the Zygmund class without
being Lipschitz: its weighted block sums sum_{block} |n a(n)| stay
constant instead of decaying, and the estimator flags exactly that
signature.

Pointwise samples are never transformed back into coefficients; the only
quadrature in the module is a debug-mode cross-check of the convolution
identity, exact for band-limited integrands.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from lyaplab.errors import BudgetExceeded, SpecInvalid, TooFewBlocks
from lyaplab.field_calculus import TWO_PI, lattice, flow_integrate

DEFAULT_N_MAX = 2 ** 20
ESTIMATOR_MIN_N_MAX = 2 ** 10
NOISE_FLOOR = 1e-13
SYMMETRY_TOL = 1e-12


class SpectralSeries:
    """A real-valued circle function as a sparse table n -> a(n).

    Conjugate symmetry a(-n) = conj(a(n)) is enforced on construction, so
    every series evaluates to a real function.  `declared_regularity`
    carries the alpha label of generated test functions through pipelines
    (purely informational; the estimator never reads it).
    """

    def __init__(self, coefficients, n_max, declared_regularity=None):
        n_max = int(n_max)
        if n_max < 1:
            raise ValueError("n_max must be a positive integer")
        table = {}
        for n, c in coefficients.items():
            n = int(n)
            c = complex(c)
            if abs(n) > n_max:
                raise ValueError(f"frequency {n} exceeds n_max {n_max}")
            if c != 0.0:
                table[n] = c
        scale = max((abs(c) for c in table.values()), default=1.0)
        for n, c in table.items():
            if abs(c - np.conj(table.get(-n, 0.0))) > SYMMETRY_TOL * scale:
                raise ValueError(
                    f"coefficients are not conjugate-symmetric at n={n}; "
                    "the series would not be real-valued")
        self.coefficients = table
        self.n_max = n_max
        self.declared_regularity = declared_regularity

    # -- constructors -----------------------------------------------------

    @classmethod
    def from_sines(cls, amplitudes, n_max=DEFAULT_N_MAX,
                   declared_regularity=None):
        """Series sum_m amp_m sin(m x) from a {m: amp} table, m > 0."""
        table = {}
        for m, amp in amplitudes.items():
            if m <= 0:
                raise ValueError("sine frequencies must be positive")
            table[m] = table.get(m, 0.0) - 0.5j * amp
            table[-m] = table.get(-m, 0.0) + 0.5j * amp
        return cls(table, n_max, declared_regularity)

    @classmethod
    def from_cosines(cls, amplitudes, n_max=DEFAULT_N_MAX,
                     declared_regularity=None):
        """Series amp_0 + sum_m amp_m cos(m x) from a {m: amp} table."""
        table = {}
        for m, amp in amplitudes.items():
            if m < 0:
                raise ValueError("cosine frequencies must be >= 0")
            if m == 0:
                table[0] = table.get(0, 0.0) + amp
            else:
                table[m] = table.get(m, 0.0) + 0.5 * amp
                table[-m] = table.get(-m, 0.0) + 0.5 * amp
        return cls(table, n_max, declared_regularity)

    # -- structure --------------------------------------------------------

    def support(self):
        """Sorted positive frequencies carrying a nonzero coefficient."""
        return sorted(n for n in self.coefficients if n > 0)

    def max_frequency(self):
        return max((abs(n) for n in self.coefficients), default=0)

    def harmonic_amplitude(self, n):
        """Amplitude of the real harmonic at |n|: |a(n)| + |a(-n)|."""
        n = abs(int(n))
        if n == 0:
            return abs(self.coefficients.get(0, 0.0))
        return (abs(self.coefficients.get(n, 0.0))
                + abs(self.coefficients.get(-n, 0.0)))

    def __repr__(self):
        return (f"SpectralSeries({len(self.coefficients)} coefficients, "
                f"n_max={self.n_max})")

    # -- evaluation and calculus ------------------------------------------

    def evaluate(self, points):
        pts = np.asarray(points, dtype=float)
        out = np.zeros(pts.shape, dtype=complex)
        for n, c in self.coefficients.items():
            out += c * np.exp(1j * n * pts)
        return out.real

    def derivative(self):
        """Exact term-by-term derivative: a'(n) = i n a(n)."""
        table = {n: 1j * n * c for n, c in self.coefficients.items()
                 if n != 0}
        declared = (None if self.declared_regularity is None
                    else self.declared_regularity - 1.0)
        return SpectralSeries(table, self.n_max, declared)

    # -- persistence --------------------------------------------------------

    def save_coefficients(self, path):
        """Text table, one `n re im` line per stored frequency."""
        with open(path, "w") as fh:
            for n in sorted(self.coefficients):
                c = self.coefficients[n]
                fh.write(f"{n} {c.real:.17g} {c.imag:.17g}\n")

    @classmethod
    def load_coefficients(cls, path, n_max=None, declared_regularity=None):
        table = {}
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                n_str, re_str, im_str = line.split()
                table[int(n_str)] = float(re_str) + 1j * float(im_str)
        if n_max is None:
            top = max((abs(n) for n in table), default=1)
            n_max = max(ESTIMATOR_MIN_N_MAX, top)
        return cls(table, n_max, declared_regularity)


# ---------------------------------------------------------------------------
# convolution and generators


def convolve(f, g, debug=False):
    """Circle convolution h(t) = int f(x) g(t - x) dx via h(n) = 2 pi f(n) g(n).

    With `debug` on, the result is cross-checked against direct quadrature
    of the defining integral at 32 probe points (trapezoid on a grid fine
    enough to be exact for the band-limited integrand).
    """
    if f.n_max != g.n_max:
        raise ValueError(
            f"convolve needs a shared frequency budget, got n_max "
            f"{f.n_max} and {g.n_max}")
    table = {}
    for n, c in f.coefficients.items():
        other = g.coefficients.get(n)
        if other is not None:
            table[n] = TWO_PI * c * other
    declared = None
    if (f.declared_regularity is not None
            and g.declared_regularity is not None):
        declared = f.declared_regularity + g.declared_regularity
    out = SpectralSeries(table, f.n_max, declared)
    if debug:
        _check_against_quadrature(f, g, out)
    return out


def _check_against_quadrature(f, g, h):
    top = f.max_frequency() + g.max_frequency()
    n_grid = 2 * top + 4
    if n_grid > 2 ** 18:
        raise ValueError("debug quadrature cross-check is limited to "
                         "combined frequencies below 2^17")
    xs = np.arange(n_grid) * (TWO_PI / n_grid)
    f_vals = f.evaluate(xs)
    probes = np.arange(32) * (TWO_PI / 32.0)
    direct = np.array([
        np.sum(f_vals * g.evaluate(t - xs)) * (TWO_PI / n_grid)
        for t in probes])
    err = float(np.max(np.abs(direct - h.evaluate(probes))))
    if err > 1e-8:
        raise AssertionError(
            f"coefficient convolution disagrees with direct quadrature "
            f"by {err:.3e}")


def weierstrass(alpha, lacunarity=4, terms=7, n_max=DEFAULT_N_MAX):
    """Lacunary series sum_j lac^(-alpha j) sin(lac^j x), of class C^alpha.

    The default lacunarity 4 places terms on every other dyadic block
    (frequencies 2^(2j)); with alpha = 1/2 the amplitudes become 2^(-j),
    the classical square-root-modulus example.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    lacunarity = int(lacunarity)
    if lacunarity < 2:
        raise ValueError("lacunarity must be an integer >= 2")
    if terms < 1:
        raise ValueError("need at least one term")
    top = lacunarity ** (terms - 1)
    if top > n_max:
        raise BudgetExceeded(
            f"term {terms - 1} sits at frequency {top} > n_max {n_max}")
    amps = {lacunarity ** j: float(lacunarity) ** (-alpha * j)
            for j in range(terms)}
    return SpectralSeries.from_sines(amps, n_max, declared_regularity=alpha)


# ---------------------------------------------------------------------------
# the block estimator


@dataclass
class RegularityEstimate:
    """Dyadic-block energies and the regularity read off their decay.

    `holder_exponent` is minus the least-squares slope of log2 S_k over
    the occupied blocks, `confidence` its one-sigma standard error.  The
    Zygmund flag fires only in the unit-exponent band: it requires the
    weighted sums W_k = sum_block |n a(n)| to stay level (each block
    contributing a constant to the modulus of continuity), which is
    precisely how the exponent-sum-one convolutions fail to be Lipschitz
    while keeping |f(x+2t) - 2f(x+t) + f(x)| = O(t).
    """

    holder_exponent: float
    confidence: float
    blocks: tuple
    weighted_blocks: tuple
    zygmund: bool
    lipschitz: bool
    noise_floor: float

    def block_table(self):
        return list(self.blocks)


def _fit_line(ks, logs):
    ks = np.asarray(ks, dtype=float)
    logs = np.asarray(logs, dtype=float)
    design = np.stack([np.ones_like(ks), ks], axis=-1)
    coef, *_ = np.linalg.lstsq(design, logs, rcond=None)
    resid = logs - design @ coef
    dof = max(len(ks) - 2, 1)
    denom = float(np.sum((ks - ks.mean()) ** 2))
    se = math.sqrt(float(np.sum(resid ** 2)) / dof / denom) if denom else 0.0
    return float(coef[1]), se


def estimate_holder(series, noise_floor=NOISE_FLOOR):
    """Holder exponent of a series from its dyadic-block energy decay."""
    if series.n_max < ESTIMATOR_MIN_N_MAX:
        raise SpecInvalid(
            f"estimator inputs need n_max >= {ESTIMATOR_MIN_N_MAX}, "
            f"got {series.n_max}")
    energy = {}
    weighted = {}
    for n, c in series.coefficients.items():
        if n <= 0:
            continue  # each dyadic block collects the +-n pair at once
        k = n.bit_length() - 1
        mag = abs(c)
        pair = abs(series.coefficients.get(-n, 0.0))
        energy[k] = energy.get(k, 0.0) + mag * mag + pair * pair
        weighted[k] = weighted.get(k, 0.0) + n * (mag + pair)
    blocks = [(k, math.sqrt(e)) for k, e in sorted(energy.items())
              if math.sqrt(e) > noise_floor]
    if len(blocks) < 5:
        raise TooFewBlocks(
            f"{len(blocks)} occupied dyadic blocks above the noise floor; "
            "the slope fit needs at least 5")
    ks = [k for k, _ in blocks]
    slope, se = _fit_line(ks, [math.log2(s) for _, s in blocks])
    alpha_hat = -slope

    wblocks = tuple((k, weighted[k]) for k, _ in blocks)
    w_slope, _ = _fit_line(ks, [math.log2(w) for _, w in wblocks])
    zygmund = bool(0.95 <= alpha_hat <= 1.05 and abs(w_slope) <= 0.2)
    lipschitz = bool(w_slope <= -0.1)   # block weights summable
    return RegularityEstimate(
        holder_exponent=alpha_hat, confidence=se, blocks=tuple(blocks),
        weighted_blocks=wblocks, zygmund=zygmund, lipschitz=lipschitz,
        noise_floor=noise_floor)


# ---------------------------------------------------------------------------
# difference-quotient checks on sampled curves


@dataclass
class QuotientTest:
    """sup_t |f(t + d) - f(t)| / d^exponent over a dyadic sweep of d.

    `passed` means the quotients stay level as d -> 0 (fitted log-log
    slope not significantly negative), i.e. the function does exhibit the
    tested modulus of continuity on the probe set.
    """

    exponent: float
    deltas: tuple
    quotients: tuple
    slope: float
    passed: bool


def difference_quotient_test(series, exponent, deltas=None, n_probe=64):
    if deltas is None:
        deltas = 2.0 ** -np.arange(4, 17)
    ts = np.arange(n_probe) * (TWO_PI / n_probe)
    base = series.evaluate(ts)
    quotients = []
    for d in deltas:
        gap = float(np.max(np.abs(series.evaluate(ts + d) - base)))
        quotients.append(gap / d ** exponent)
    slope, _ = _fit_line(np.log2(np.asarray(deltas)),
                         np.log2(np.asarray(quotients)))
    return QuotientTest(exponent=float(exponent),
                        deltas=tuple(float(d) for d in deltas),
                        quotients=tuple(quotients), slope=slope,
                        passed=bool(slope > -0.1))


# ---------------------------------------------------------------------------
# flow-averaged observables on the torus


@dataclass
class SampledCurve:
    """Samples of t -> integral f * (g o flow_t) dmu."""

    ts: np.ndarray
    values: np.ndarray

    def quotient_test(self, exponent, max_lag=None):
        """Difference-quotient check on the uniformly sampled curve.

        Only the finest eighth of the window is swept by default: large
        lags see the global shape of the curve, not the small-scale
        modulus the test is after.
        """
        ts, vals = self.ts, self.values
        if len(ts) < 33:
            raise ValueError("quotient test needs at least 33 samples")
        steps = np.diff(ts)
        if np.max(np.abs(steps - steps[0])) > 1e-12 * abs(steps[0]):
            raise ValueError("quotient test needs uniform sample spacing")
        h = float(steps[0])
        lags, quots = [], []
        lag = 1
        top = max_lag or (len(ts) - 1) // 8
        while lag <= top:
            gap = float(np.max(np.abs(vals[lag:] - vals[:-lag])))
            lags.append(lag * h)
            quots.append(gap / (lag * h) ** exponent)
            lag *= 2
        slope, _ = _fit_line(np.log2(np.asarray(lags)),
                             np.log2(np.maximum(quots, 1e-300)))
        return QuotientTest(exponent=float(exponent), deltas=tuple(lags),
                            quotients=tuple(quots), slope=slope,
                            passed=bool(slope > -0.1))


def flow_average(f, g, x_field, t_samples):
    """h(t) = mean of f * (g o flow_t^X) against the invariant volume.

    X must be divergence-free (that is what makes the volume invariant
    and h a genuine correlation curve); f and g are scalar grid fields
    sharing a lattice, g is interpolated at the flowed points.
    """
    if f.degree != 0 or g.degree != 0:
        raise ValueError("flow_average takes scalar fields")
    if f.dim != g.dim or f.resolution != g.resolution:
        raise ValueError("f and g must share dimension and resolution")
    if x_field.divergence().components:
        raise ValueError("the flow generator must be divergence-free")
    pts = lattice(f.dim, f.resolution)
    f_vals = f.values.reshape(-1)
    ts = np.asarray(sorted(float(t) for t in t_samples))
    values = []
    for t in ts:
        image = pts if t == 0.0 else flow_integrate(x_field, t, pts)
        g_vals = g.evaluate(image)[..., 0]
        values.append(float(np.mean(f_vals * g_vals)))
    return SampledCurve(ts=ts, values=np.asarray(values))
