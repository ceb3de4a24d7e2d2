"""Experiment runner: validated JSON specs in, deterministic artifacts out.

A spec is a JSON object with fields

    schema      optional, must be "lyaplab-spec/1" when present
    name        identifier used for artifact filenames
    kind        matrix-deriv | conv-regularity | lyap | lyap-deriv |
                bump-sweep | family-check
    seed        integer; every random draw in the experiment flows from it
    params      kind-specific block (the named specs shipped under
                lyaplab/specs/ are worked examples of every kind)
    output_dir  optional; overrides the LYAPLAB_OUTPUT_DIR environment
                variable and the built-in default ./lyaplab_runs

Every run writes <name>.json (schema-versioned report, seed echoed, one
entry per numeric check) plus CSV tables next to it.  All floats are
printed with 17 significant digits and reports carry no timestamps, so
repeat runs of the same spec are byte-identical.

Exit status: 0 every check passed, 1 a numeric check failed or a
numerical routine raised, 2 the spec did not validate.

`reproduce-all` runs the shipped spec for each acceptance criterion in
name order.  `--profile quick` shrinks instance counts and resolutions
(deterministically) for a fast end-to-end pass; `--profile full` runs
the criteria at their contractual sizes.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from importlib import resources

import numpy as np

from lyaplab import regularity
from lyaplab.derivatives import (bump_second_derivative, exponent_curve,
                                 lambda_prime_via_E, lambda_prime_via_F,
                                 lambda_second, parabola_fit,
                                 richardson_slope, v_prime_series)
from lyaplab.errors import LyaplabError, SpecInvalid
from lyaplab.families import (BumpField, BumpSpec, FamilySpec, bump_K,
                              flow_family_tangent, random_divfree,
                              tangent_fields)
from lyaplab.field_calculus import TorusMap, flow_integrate, lattice
from lyaplab.matrix_lab import (MatrixFamilyTangent, continue_simple_eigen,
                                d2log_eta, dlog_eta, fd_d2log_eta,
                                fd_dlog_eta, random_matrix_family)
from lyaplab.splitting import (exact_splitting, invariance_residual,
                               lyapunov_exponent, power_splitting)

REPORT_SCHEMA = "lyaplab-report/1"
SPEC_SCHEMA = "lyaplab-spec/1"
OUTPUT_ENV = "LYAPLAB_OUTPUT_DIR"
DEFAULT_OUTPUT = "lyaplab_runs"

KINDS = ("matrix-deriv", "conv-regularity", "lyap", "lyap-deriv",
         "bump-sweep", "family-check")

NAMED_MAPS = {
    "cat": [[2, 1], [1, 1]],
    "ph3": [[2, 1, 0], [1, 1, 0], [0, 0, 1]],
}


# ---------------------------------------------------------------------------
# deterministic serialization


def fmt(x):
    """A float at 17 significant digits (exact round trip, byte-stable)."""
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"non-finite value {x!r} in report")
    return format(x, ".17g")


def label(x):
    """Shortest round-trip form, for check names and case labels."""
    return repr(float(x))


def _json_encode(obj, indent):
    pad = " " * indent
    inner = " " * (indent + 2)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = ",\n".join(
            f"{inner}{json.dumps(str(k))}: {_json_encode(v, indent + 2)}"
            for k, v in obj.items())
        return "{\n" + items + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        seq = list(obj)
        if not seq:
            return "[]"
        items = ",\n".join(f"{inner}{_json_encode(v, indent + 2)}"
                           for v in seq)
        return "[\n" + items + "\n" + pad + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__} in a report")


def write_report(report, path):
    with open(path, "w") as fh:
        fh.write(_json_encode(report, 0) + "\n")


def write_table(header, rows, path):
    def cell(x):
        if isinstance(x, bool):
            return "true" if x else "false"
        if isinstance(x, (int, np.integer)):
            return str(int(x))
        if isinstance(x, (float, np.floating)):
            return fmt(x)
        return str(x)

    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(cell(x) for x in row) + "\n")


# ---------------------------------------------------------------------------
# spec loading and validation


@dataclass
class ExperimentSpec:
    name: str
    kind: str
    seed: int
    params: dict
    output_dir: str | None = None


def validate_spec(data, source="<spec>"):
    """Validate raw spec data; raises SpecInvalid listing every problem."""
    problems = []
    if not isinstance(data, dict):
        raise SpecInvalid(f"{source}: spec must be a JSON object, "
                          f"got {type(data).__name__}")
    allowed = {"schema", "name", "kind", "seed", "params", "output_dir"}
    for key in sorted(set(data) - allowed):
        problems.append(f"unknown field {key!r}")
    schema = data.get("schema", SPEC_SCHEMA)
    if schema != SPEC_SCHEMA:
        problems.append(f"schema: expected {SPEC_SCHEMA!r}, got {schema!r}")
    name = data.get("name")
    if not isinstance(name, str) or not name:
        problems.append("name: required, a non-empty string")
    elif not all(c.isalnum() or c in "-_" for c in name):
        problems.append("name: may contain only letters, digits, '-', '_'")
    kind = data.get("kind")
    if kind not in KINDS:
        problems.append(f"kind: required, one of {', '.join(KINDS)}")
    seed = data.get("seed")
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        problems.append("seed: required, a non-negative integer")
    params = data.get("params", {})
    if not isinstance(params, dict):
        problems.append("params: must be an object")
    out = data.get("output_dir")
    if out is not None and not isinstance(out, str):
        problems.append("output_dir: must be a string path")
    if problems:
        raise SpecInvalid(f"{source}: " + "; ".join(problems))
    return ExperimentSpec(name=name, kind=kind, seed=seed,
                          params=params, output_dir=out)


def load_spec(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise SpecInvalid(f"cannot read spec {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SpecInvalid(f"{path}: not valid JSON ({exc})") from exc
    return validate_spec(data, source=str(path))


_REQUIRED = object()


def _param(params, key, default=_REQUIRED):
    if key in params:
        return params[key]
    if default is _REQUIRED:
        raise SpecInvalid(f"params.{key}: required for this experiment")
    return default


def _resolve_map(entry):
    if isinstance(entry, str):
        if entry not in NAMED_MAPS:
            raise SpecInvalid(f"params.map: unknown map name {entry!r} "
                              f"(known: {', '.join(sorted(NAMED_MAPS))})")
        entry = NAMED_MAPS[entry]
    if not isinstance(entry, list):
        raise SpecInvalid("params.map: expected a name or an integer matrix")
    return TorusMap(np.array(entry, dtype=int))


def _check(checks, name, value, bound, passed=None):
    """Record one numeric check (value against an upper bound)."""
    ok = bool(value <= bound) if passed is None else bool(passed)
    checks.append({"check": name, "value": float(value),
                   "bound": float(bound), "passed": ok})
    return ok


# ---------------------------------------------------------------------------
# matrix-deriv


def _run_matrix_deriv(spec, jobs=1):
    suite = _param(spec.params, "suite", "random")
    if suite == "random":
        return _matrix_random_suite(spec)
    if suite == "rotation":
        return _matrix_rotation_suite(spec)
    raise SpecInvalid(f"params.suite: unknown suite {suite!r} "
                      "(known: random, rotation)")


def _matrix_random_suite(spec):
    p = spec.params
    dims = [int(d) for d in _param(p, "dimensions", [2, 3, 4, 6])]
    count = int(_param(p, "instances", 200))
    first_tol = float(_param(p, "first_rel_tol", 1e-6))
    second_tol = float(_param(p, "second_rel_tol", 1e-4))
    # near-degenerate draws reach |d2log_eta| ~ 1e3, where the default FD
    # step is truncation-limited; a finer step keeps the oracle honest
    h2 = float(_param(p, "fd_second_step", 2.5e-4))
    rng = np.random.default_rng(spec.seed)
    rows = []
    worst_first = worst_second = 0.0
    for i in range(count):
        d = dims[i % len(dims)]
        fam, lam_seed = random_matrix_family(rng, d)
        eig = continue_simple_eigen(fam.base, lam_seed)
        a1, f1 = dlog_eta(fam, eig), fd_dlog_eta(fam, eig)
        a2, f2 = d2log_eta(fam, eig), fd_d2log_eta(fam, eig, h=h2)
        # floored-relative: near an FD zero the comparison is absolute
        # against the floor, which sits far above the FD noise there
        r1 = abs(a1 - f1) / max(abs(f1), 1e-3)
        r2 = abs(a2 - f2) / max(abs(f2), 1e-2)
        worst_first = max(worst_first, r1)
        worst_second = max(worst_second, r2)
        rows.append((i, d, a1, f1, r1, a2, f2, r2))
    checks = []
    _check(checks, "first_derivative_max_rel_error", worst_first, first_tol)
    _check(checks, "second_derivative_max_rel_error", worst_second,
           second_tol)
    return {
        "results": {"instances": count, "dimensions": dims,
                    "max_rel_error_first": worst_first,
                    "max_rel_error_second": worst_second},
        "checks": checks,
        "tables": {"instances": (
            ("instance", "d", "dlog_eta", "fd_dlog_eta", "rel_error_first",
             "d2log_eta", "fd_d2log_eta", "rel_error_second"), rows)},
    }


def _matrix_rotation_suite(spec):
    p = spec.params
    pairs = _param(p, "pairs", [[2.0, 0.5], [3.0, -1.0], [1.5, 0.2]])
    tol = float(_param(p, "abs_tol", 1e-10))
    rot = np.array([[0.0, -1.0], [1.0, 0.0]])
    rows, checks = [], []
    for eta, nu in pairs:
        fam = MatrixFamilyTangent(np.diag([float(eta), float(nu)]), rot)
        eig = continue_simple_eigen(fam.base, float(eta))
        d1 = dlog_eta(fam, eig)
        d2 = d2log_eta(fam, eig)
        target = (eta + nu) / (nu - eta)
        rows.append((eta, nu, d1, d2, target, abs(d2 - target)))
        _check(checks, f"rotation_closed_form_eta_{label(eta)}_nu_{label(nu)}",
               abs(d2 - target), tol)
    return {
        "results": {"pairs": [[float(a), float(b)] for a, b in pairs]},
        "checks": checks,
        "tables": {"rotation": (
            ("eta", "nu", "dlog_eta", "d2log_eta", "closed_form",
             "abs_error"), rows)},
    }


# ---------------------------------------------------------------------------
# conv-regularity


def _run_conv_regularity(spec, jobs=1):
    p = spec.params
    lac = int(_param(p, "lacunarity", 4))
    terms = int(_param(p, "terms", 7))
    n_max = int(_param(p, "n_max", 2 ** 20))
    band = float(_param(p, "estimate_band", 0.07))
    checks, results, block_rows = [], {}, []

    def record_blocks(case, est):
        for k, s in est.blocks:
            block_rows.append((case, k, s))

    if "coefficients_file" in p:
        series = regularity.SpectralSeries.load_coefficients(
            p["coefficients_file"], n_max=n_max)
        est = regularity.estimate_holder(series)
        record_blocks("file", est)
        results["file"] = {
            "holder_exponent": est.holder_exponent,
            "confidence": est.confidence,
            "zygmund": est.zygmund,
            "lipschitz": est.lipschitz,
        }

    for a, b in _param(p, "sum_pairs", []):
        h = regularity.convolve(regularity.weierstrass(a, lac, terms, n_max),
                                regularity.weierstrass(b, lac, terms, n_max))
        est = regularity.estimate_holder(h)
        case = f"sum_{label(a)}_{label(b)}"
        record_blocks(case, est)
        results[case] = {"holder_exponent": est.holder_exponent,
                         "target": float(a + b),
                         "zygmund": est.zygmund, "lipschitz": est.lipschitz}
        _check(checks, f"{case}_estimate", abs(est.holder_exponent - (a + b)),
               band)

    zy = _param(p, "zygmund_pair", None)
    if zy is not None:
        a, b = zy
        h = regularity.convolve(regularity.weierstrass(a, lac, terms, n_max),
                                regularity.weierstrass(b, lac, terms, n_max))
        est = regularity.estimate_holder(h)
        record_blocks("zygmund_pair", est)
        results["zygmund_pair"] = {
            "holder_exponent": est.holder_exponent,
            "zygmund": est.zygmund, "lipschitz": est.lipschitz,
            "weighted_blocks": [[k, w] for k, w in est.weighted_blocks]}
        _check(checks, "zygmund_flag_set", 0.0, 1.0, passed=est.zygmund)
        _check(checks, "lipschitz_check_fails", 0.0, 1.0,
               passed=not est.lipschitz)

    dq = _param(p, "derivative_quotient", None)
    if dq is not None:
        a, b = dq["pair"]
        exponent = float(dq.get("exponent", 0.2))
        h = regularity.convolve(regularity.weierstrass(a, lac, terms, n_max),
                                regularity.weierstrass(b, lac, terms, n_max))
        deriv = h.derivative()
        est = regularity.estimate_holder(deriv)
        record_blocks("derivative", est)
        quot = regularity.difference_quotient_test(deriv, exponent)
        results["derivative_quotient"] = {
            "holder_exponent": est.holder_exponent,
            "tested_exponent": exponent,
            "slope": quot.slope, "passed": quot.passed}
        _check(checks, f"derivative_quotient_C{label(exponent)}", 0.0, 1.0,
               passed=quot.passed)

    amp = _param(p, "amplitude_check", None)
    amp_rows = []
    if amp is not None:
        alpha = float(amp.get("alpha", 0.5))
        n_range = int(amp.get("n_range", 7))
        tol = float(amp.get("abs_tol", 1e-12))
        w = regularity.weierstrass(alpha, lac, terms, n_max)
        h = regularity.convolve(w, w)
        worst = 0.0
        for n in range(n_range):
            freq = lac ** n
            measured = h.harmonic_amplitude(freq)
            target = math.pi * 2.0 ** (-2 * n)
            worst = max(worst, abs(measured - target))
            amp_rows.append((n, freq, measured, target,
                             abs(measured - target)))
        results["amplitude_check"] = {"max_abs_error": worst}
        _check(checks, "counterexample_amplitudes", worst, tol)

    if not checks and "coefficients_file" not in p:
        raise SpecInvalid("params: no regularity cases requested (expected "
                          "coefficients_file, sum_pairs, zygmund_pair, "
                          "derivative_quotient or amplitude_check)")

    tables = {"blocks": (("case", "k", "block_energy"), block_rows)}
    if amp_rows:
        tables["amplitudes"] = (
            ("n", "frequency", "amplitude", "target", "abs_error"), amp_rows)
    return {"results": results, "checks": checks, "tables": tables}


# ---------------------------------------------------------------------------
# lyap (conservation checks over a set of splittings)


def _splitting_for_case(case, rng):
    f0 = _resolve_map(_param(case, "map"))
    grouping = tuple(int(g) for g in _param(case, "grouping"))
    resolution = int(_param(case, "resolution", 64))
    seed_split = exact_splitting(f0, grouping, resolution=resolution)
    perturb = case.get("perturb")
    if not perturb:
        return f0, seed_split
    x = random_divfree(rng, dim=f0.dim,
                       n_terms=int(perturb.get("terms", 3)),
                       amp=float(perturb.get("amp", 0.05)))
    f = FamilySpec(f0, x).map_at(float(perturb.get("t", 0.1)),
                                 flow_tolerance=1e-12)
    split = power_splitting(f, seed_split,
                            tol=float(perturb.get("tol", 1e-10)))
    return f, split


def _run_lyap(spec, jobs=1):
    p = spec.params
    cases = _param(p, "cases")
    sum_tol = float(_param(p, "sum_rule_tol", 1e-8))
    pairing_tol = float(_param(p, "pairing_tol", 1e-10))
    residual_tol = float(_param(p, "residual_tol", 1e-8))
    rng = np.random.default_rng(spec.seed)
    checks, case_entries, exp_rows, cons_rows = [], [], [], []
    for idx, case in enumerate(cases):
        label = case.get("label", f"case_{idx}")
        f, split = _splitting_for_case(case, rng)
        lambdas = {}
        for slot in (1, 2, 3):
            if split.dims[slot - 1] == 0:
                continue
            lam = lyapunov_exponent(f, split.select((slot,)))
            lambdas[slot] = lam
            exp_rows.append((label, slot, split.dims[slot - 1], lam))
        total = sum(lambdas.values())
        pairing = float(np.max(np.abs(
            np.einsum("xc,xc->x", split.omega_lattice, split.v_lattice)
            - 1.0)))
        residual = float(invariance_residual(f, split))
        cons_rows.append((label, total, residual, pairing,
                          split.domination_ratio))
        case_entries.append({
            "label": label,
            "bundle_dims": list(split.dims),
            "lambdas": {str(s): v for s, v in lambdas.items()},
            "lambda_sum": total,
            "invariance_residual": residual,
            "pairing_residual": pairing,
            "domination_ratio": float(split.domination_ratio)})
        _check(checks, f"{label}_lambda_sum_rule", abs(total), sum_tol)
        _check(checks, f"{label}_dual_pairing", pairing, pairing_tol)
        _check(checks, f"{label}_invariance_residual", residual,
               residual_tol)
    return {
        "results": {"cases": case_entries},
        "checks": checks,
        "tables": {
            "exponents": (("case", "slot", "dim", "lambda"), exp_rows),
            "conservation": (("case", "lambda_sum", "invariance_residual",
                              "pairing_residual", "domination_ratio"),
                             cons_rows)},
    }


# ---------------------------------------------------------------------------
# lyap-deriv


def _run_lyap_deriv(spec, jobs=1):
    mode = _param(spec.params, "mode")
    if mode == "criticality":
        return _lyap_deriv_criticality(spec)
    if mode == "second-fd":
        return _lyap_deriv_second_fd(spec)
    if mode == "bundle-derivative":
        return _lyap_deriv_bundle(spec)
    raise SpecInvalid(f"params.mode: unknown mode {mode!r} (known: "
                      "criticality, second-fd, bundle-derivative)")


def _symmetric_ts(steps):
    steps = sorted(float(s) for s in steps)
    if any(s <= 0 for s in steps):
        raise SpecInvalid("params.fd_steps: steps must be positive")
    return [-s for s in reversed(steps)] + [0.0] + steps


def _lyap_deriv_criticality(spec):
    p = spec.params
    f0 = _resolve_map(_param(p, "map", "cat"))
    grouping = tuple(int(g) for g in _param(p, "grouping", [1, 1, 0]))
    resolution = int(_param(p, "resolution", 128))
    count = int(_param(p, "field_count", 20))
    amp = float(_param(p, "field_amp", 0.05))
    n_terms = int(_param(p, "field_terms", 3))
    first_tol = float(_param(p, "first_abs_tol", 1e-8))
    slope_tol = float(_param(p, "fd_slope_tol", 1e-3))
    ts = _symmetric_ts(_param(p, "fd_steps", [0.01, 0.02, 0.04]))
    split_tol = float(_param(p, "splitting_tol", 1e-10))
    split = exact_splitting(f0, grouping, resolution=resolution)
    rng = np.random.default_rng(spec.seed)
    rows, checks = [], []
    worst_form = worst_bundle = worst_slope = 0.0
    for i in range(count):
        x = random_divfree(rng, dim=f0.dim, n_terms=n_terms, amp=amp)
        pf = lambda_prime_via_F(split, x)
        pe = lambda_prime_via_E(split, x)
        curve = exponent_curve(FamilySpec(f0, x), split, ts, tol=split_tol)
        slope, _ = richardson_slope(curve)
        worst_form = max(worst_form, abs(pf))
        worst_bundle = max(worst_bundle, abs(pe))
        worst_slope = max(worst_slope, abs(slope))
        rows.append((i, pf, pe, slope))
    _check(checks, "lambda_prime_form_route_max", worst_form, first_tol)
    _check(checks, "lambda_prime_bundle_route_max", worst_bundle, first_tol)
    _check(checks, "fd_slope_max", worst_slope, slope_tol)
    return {
        "results": {"fields": count, "resolution": resolution,
                    "max_abs_form_route": worst_form,
                    "max_abs_bundle_route": worst_bundle,
                    "max_abs_fd_slope": worst_slope},
        "checks": checks,
        "tables": {"fields": (
            ("field", "lambda_prime_form", "lambda_prime_bundle",
             "fd_slope"), rows)},
    }


def _lyap_deriv_second_fd(spec):
    p = spec.params
    f0 = _resolve_map(_param(p, "map", "cat"))
    grouping = tuple(int(g) for g in _param(p, "grouping", [1, 1, 0]))
    resolution = int(_param(p, "resolution", 64))
    count = int(_param(p, "family_count", 5))
    amp = float(_param(p, "field_amp", 0.05))
    n_terms = int(_param(p, "field_terms", 3))
    rel_tol = float(_param(p, "rel_tol", 0.05))
    ts = _symmetric_ts(_param(p, "fd_steps", [0.01, 0.02, 0.04]))
    split_tol = float(_param(p, "splitting_tol", 1e-10))
    split = exact_splitting(f0, grouping, resolution=resolution)
    rng = np.random.default_rng(spec.seed)
    rows, checks = [], []
    worst = 0.0
    for i in range(count):
        x = random_divfree(rng, dim=f0.dim, n_terms=n_terms, amp=amp)
        sec = lambda_second(f0, split, x)
        curve = exponent_curve(FamilySpec(f0, x), split, ts, tol=split_tol)
        fit = parabola_fit(curve)
        rel = abs(sec.value - fit["second"]) / abs(fit["second"])
        worst = max(worst, rel)
        rows.append((i, sec.value, fit["second"], rel, fit["rms_residual"]))
        _check(checks, f"family_{i}_second_vs_fd_rel", rel, rel_tol)
    return {
        "results": {"families": count, "max_rel_error": worst},
        "checks": checks,
        "tables": {"families": (
            ("family", "lambda_second", "fd_fit_second", "rel_error",
             "fit_rms_residual"), rows)},
    }


def _lyap_deriv_bundle(spec):
    p = spec.params
    f0 = _resolve_map(_param(p, "map", "cat"))
    grouping = tuple(int(g) for g in _param(p, "grouping", [1, 1, 0]))
    resolution = int(_param(p, "resolution", 32))
    count = int(_param(p, "field_count", 5))
    amp = float(_param(p, "field_amp", 0.05))
    n_terms = int(_param(p, "field_terms", 3))
    tail_tol = float(_param(p, "tail_tol", 1e-10))
    fd_t = float(_param(p, "fd_step", 1e-3))
    fd_tol = float(_param(p, "fd_sup_tol", 1e-4))
    split = exact_splitting(f0, grouping, resolution=resolution)
    rng = np.random.default_rng(spec.seed)
    rows, checks = [], []
    for i in range(count):
        x = random_divfree(rng, dim=f0.dim, n_terms=n_terms, amp=amp)
        ser = v_prime_series(f0, split, x, tail_tol=tail_tol)
        bound = 2.0 * ser.tail_bound
        # finite-difference bundle motion: normalize V_t against omega
        f_t = FamilySpec(f0, x).map_at(fd_t, flow_tolerance=1e-12)
        split_t = power_splitting(f_t, split, tol=1e-12)
        scale = np.einsum("xc,xc->x", split.omega_lattice, split_t.v_lattice)
        delta = (split_t.v_lattice / scale[:, None] - split.v_lattice) / fd_t
        fd_err = float(np.max(np.linalg.norm(delta - ser.lattice_values,
                                             axis=-1)))
        rows.append((i, ser.route, ser.series_terms, ser.tail_bound,
                     ser.defining_residual, ser.kernel_residual, fd_err))
        _check(checks, f"field_{i}_defining_residual",
               ser.defining_residual, bound)
        _check(checks, f"field_{i}_fd_sup_error", fd_err, fd_tol)
    return {
        "results": {"fields": count},
        "checks": checks,
        "tables": {"series": (
            ("field", "route", "terms", "tail_bound", "defining_residual",
             "kernel_residual", "fd_sup_error"), rows)},
    }


# ---------------------------------------------------------------------------
# bump-sweep


def _bump_point(args):
    (linear, group_up, group_down, resolution, r, center, nodes,
     tail_tol) = args
    f0 = TorusMap(np.array(linear, dtype=int))
    bump = BumpField(BumpSpec(f0.dim, r, center=tuple(center)))
    up = bump_second_derivative(
        f0, exact_splitting(f0, group_up, resolution=resolution), bump,
        nodes=nodes, tail_tol=tail_tol)
    down = bump_second_derivative(
        f0, exact_splitting(f0, group_down, resolution=resolution), bump,
        nodes=nodes, tail_tol=tail_tol)
    return float(up.value), float(down.value)


def _run_bump_sweep(spec, jobs=1):
    p = spec.params
    map_entry = _param(p, "map", "cat")
    f0 = _resolve_map(map_entry)
    linear = [[int(v) for v in row] for row in f0.linear]
    radii = [float(r) for r in _param(p, "radii", [0.20, 0.14, 0.10, 0.07])]
    center = [float(c) for c in _param(p, "center", [1.0, 2.1])]
    nodes = int(_param(p, "quad_nodes", 96))
    resolution = int(_param(p, "resolution", 32))
    tail_tol = float(_param(p, "tail_tol", 1e-10))
    limit_tol = float(_param(p, "limit_rel_tol", 0.15))
    groupings = _param(p, "groupings",
                       {"expanding": [1, 1, 0], "contracting": [0, 1, 1]})
    group_up = tuple(int(g) for g in groupings["expanding"])
    group_down = tuple(int(g) for g in groupings["contracting"])
    k_ref = float(bump_K(BumpSpec(f0.dim, min(radii), center=tuple(center))))

    tasks = [(linear, group_up, group_down, resolution, r, center, nodes,
              tail_tol) for r in radii]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            values = list(pool.map(_bump_point, tasks))
    else:
        values = [_bump_point(t) for t in tasks]

    ratios_up = [u / r ** 2 for (u, _), r in zip(values, radii)]
    ratios_down = [d / r ** 2 for (_, d), r in zip(values, radii)]

    def fitted_limit(ratios):
        design = np.stack([np.ones(len(radii)), np.array(radii)], axis=-1)
        coef, *_ = np.linalg.lstsq(design, np.array(ratios), rcond=None)
        return float(coef[0])

    limit_up, limit_down = fitted_limit(ratios_up), fitted_limit(ratios_down)
    checks = []
    for r, (u, d) in zip(radii, values):
        _check(checks, f"expanding_sign_r_{label(r)}", 0.0, 1.0, passed=u < 0.0)
        _check(checks, f"contracting_sign_r_{label(r)}", 0.0, 1.0,
               passed=d > 0.0)
    r_min = min(radii)
    i_min = radii.index(r_min)
    _check(checks, "expanding_limit_rel_error",
           abs(ratios_up[i_min] + k_ref) / k_ref, limit_tol)
    _check(checks, "contracting_limit_rel_error",
           abs(ratios_down[i_min] - k_ref) / k_ref, limit_tol)

    rows = [(r, u, d, ru, rd, k_ref, limit_up, limit_down)
            for r, (u, d), ru, rd in
            zip(radii, values, ratios_up, ratios_down)]
    return {
        "results": {"profile_K": k_ref,
                    "fitted_limit_expanding": limit_up,
                    "fitted_limit_contracting": limit_down,
                    "radii": radii},
        "checks": checks,
        "tables": {"sweep": (
            ("r", "second_expanding", "second_contracting",
             "expanding_over_r2", "contracting_over_r2", "profile_K",
             "fitted_limit_expanding", "fitted_limit_contracting"), rows)},
    }


# ---------------------------------------------------------------------------
# family-check


def _run_family_check(spec, jobs=1):
    p = spec.params
    dim = int(_param(p, "dim", 2))
    count = int(_param(p, "pair_count", 5))
    amp = float(_param(p, "field_amp", 0.2))
    n_terms = int(_param(p, "field_terms", 3))
    probe_res = int(_param(p, "probe_resolution", 32))
    h = float(_param(p, "fd_step", 1e-4))
    sup_tol = float(_param(p, "sup_tol", 1e-6))
    nodes = int(_param(p, "quad_nodes", 64))
    rng = np.random.default_rng(spec.seed)
    pts = lattice(dim, probe_res)
    rows, checks = [], []
    worst = 0.0
    tangent_ok = None
    for i in range(count):
        x = random_divfree(rng, dim=dim, n_terms=n_terms, amp=amp)
        xp = random_divfree(rng, dim=dim, n_terms=n_terms, amp=amp)
        bar = flow_family_tangent(x, xp, nodes=nodes)
        back = flow_integrate(x, -1.0, pts)
        fwd = flow_integrate(x + h * xp, 1.0, back)
        bwd = flow_integrate(x + (-h) * xp, 1.0, back)
        fd = ((fwd - bwd + np.pi) % (2.0 * np.pi) - np.pi) / (2.0 * h)
        sup = float(np.max(np.abs(bar.values(pts) - fd)))
        worst = max(worst, sup)
        rows.append((i, sup))
        _check(checks, f"pair_{i}_sup_error", sup, sup_tol)
        if tangent_ok is None:
            # declared generators vs the family's own finite differences
            fam = FamilySpec(TorusMap(np.eye(dim, dtype=int)), x, xp)
            tangent_fields(fam)
            tangent_ok = True
    _check(checks, "declared_tangents_consistent", 0.0, 1.0,
           passed=bool(tangent_ok))
    return {
        "results": {"pairs": count, "probe_resolution": probe_res,
                    "max_sup_error": worst},
        "checks": checks,
        "tables": {"pairs": (("pair", "sup_error"), rows)},
    }


# ---------------------------------------------------------------------------
# orchestration


RUNNERS = {
    "matrix-deriv": _run_matrix_deriv,
    "conv-regularity": _run_conv_regularity,
    "lyap": _run_lyap,
    "lyap-deriv": _run_lyap_deriv,
    "bump-sweep": _run_bump_sweep,
    "family-check": _run_family_check,
}

# deterministic size reductions for `reproduce-all --profile quick`
QUICK_OVERRIDES = {
    "matrix_derivative_suite": {"instances": 40},
    "cat_criticality": {"field_count": 4, "resolution": 64},
    "second_derivative_fd": {"family_count": 2, "resolution": 32},
    "bundle_derivative_residuals": {"field_count": 2},
    "bump_sweep": {"radii": [0.20, 0.10], "quad_nodes": 64},
    "flow_tangent_check": {"pair_count": 2, "probe_resolution": 16},
    "conservation": {"cases_limit": 3},
}


def _output_dir(spec, override=None):
    path = (override or spec.output_dir or os.environ.get(OUTPUT_ENV)
            or DEFAULT_OUTPUT)
    os.makedirs(path, exist_ok=True)
    return path


def run_spec(spec, jobs=1, out_dir=None):
    """Run one experiment; write report + tables; return (report, passed)."""
    runner = RUNNERS[spec.kind]
    outcome = runner(spec, jobs=jobs)
    checks = outcome.get("checks", [])
    passed = all(c["passed"] for c in checks)
    report = {
        "schema": REPORT_SCHEMA,
        "name": spec.name,
        "kind": spec.kind,
        "seed": spec.seed,
        "params": spec.params,
        "results": outcome.get("results", {}),
        "checks": checks,
        "passed": passed,
    }
    directory = _output_dir(spec, out_dir)
    report_path = os.path.join(directory, f"{spec.name}.json")
    write_report(report, report_path)
    artifacts = [report_path]
    for table_name, (header, rows) in outcome.get("tables", {}).items():
        path = os.path.join(directory, f"{spec.name}.{table_name}.csv")
        write_table(header, rows, path)
        artifacts.append(path)
    return report, passed, artifacts


def _apply_profile(data, profile):
    if profile != "quick":
        return data
    overrides = dict(QUICK_OVERRIDES.get(data.get("name", ""), {}))
    params = dict(data.get("params", {}))
    limit = overrides.pop("cases_limit", None)
    if limit is not None and "cases" in params:
        params["cases"] = params["cases"][:limit]
    params.update(overrides)
    out = dict(data)
    out["params"] = params
    return out


def shipped_spec_names():
    root = resources.files("lyaplab").joinpath("specs")
    return sorted(p.name for p in root.iterdir() if p.name.endswith(".json"))


def _run_reproduce_all(args):
    out_dir = args.out or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT
    os.makedirs(out_dir, exist_ok=True)
    root = resources.files("lyaplab").joinpath("specs")
    summary, all_passed = [], True
    for fname in shipped_spec_names():
        data = json.loads(root.joinpath(fname).read_text())
        data = _apply_profile(data, args.profile)
        spec = validate_spec(data, source=fname)
        spec.output_dir = None
        report, passed, _ = run_spec(spec, jobs=args.jobs, out_dir=out_dir)
        for c in report["checks"]:
            _print_check(c)
        summary.append({"spec": fname, "name": spec.name,
                        "kind": spec.kind, "passed": passed})
        all_passed = all_passed and passed
        print(f"{'PASS' if passed else 'FAIL'} {spec.name}")
    write_report({"schema": REPORT_SCHEMA, "profile": args.profile,
                  "experiments": summary, "passed": all_passed},
                 os.path.join(out_dir, "summary.json"))
    return 0 if all_passed else 1


def _print_check(c):
    mark = "PASS" if c["passed"] else "FAIL"
    print(f"[{mark}] {c['check']}: {fmt(c['value'])} "
          f"(bound {fmt(c['bound'])})")


def _run_single(args):
    spec = load_spec(args.spec)
    if spec.kind != args.kind:
        raise SpecInvalid(f"{args.spec}: spec kind {spec.kind!r} does not "
                          f"match subcommand {args.kind!r}")
    report, passed, artifacts = run_spec(spec, jobs=args.jobs, out_dir=args.out)
    for c in report["checks"]:
        _print_check(c)
    print(f"{'PASS' if passed else 'FAIL'} {spec.name} "
          f"({len(artifacts)} artifacts in {os.path.dirname(artifacts[0])})")
    return 0 if passed else 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lyaplab",
        description="Deterministic experiment runner for the lyaplab "
                    "numerical laboratory.")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        sp = sub.add_parser(kind, help=f"run a {kind} experiment spec")
        sp.add_argument("spec", help="path to a JSON experiment spec")
        sp.add_argument("--out", default=None,
                        help=f"output directory (default: spec output_dir, "
                             f"then ${OUTPUT_ENV}, then ./{DEFAULT_OUTPUT})")
        sp.add_argument("--jobs", type=int, default=1,
                        help="parallel workers for independent sweep points")
        sp.set_defaults(kind=kind, func=_run_single)
    rep = sub.add_parser("reproduce-all",
                         help="run every shipped acceptance experiment")
    rep.add_argument("--profile", choices=("full", "quick"), default="full")
    rep.add_argument("--out", default=None)
    rep.add_argument("--jobs", type=int, default=1)
    rep.set_defaults(func=_run_reproduce_all)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SpecInvalid as exc:
        print(f"spec error: {exc}", file=sys.stderr)
        return 2
    except LyaplabError as exc:
        print(f"numeric failure in {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
