"""Batch front end: ``ssf-lab <command> --config run.json``.

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure.
Curves are written as CSV, reports as JSON with sorted keys; both are
written to a temporary file and renamed into place.
"""

from __future__ import annotations

import argparse
import cmath
import csv
import io
import json
import logging
import math
import os
import re
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor

import jsonschema
import numpy as np
import scipy

from . import __version__
from .birman_schwinger import (
    ConvergenceFailure,
    PotentialSpec,
    assemble,
    build_grid,
    det2,
    factorize,
    fredholm_det,
    hs_norm,
    sign_split,
)
from .kernels import (
    Energy,
    KernelError,
    KernelId,
    free_green,
    interval_dirichlet_green,
)
from .spectra import DomainSpec, count_interval_many
from .ssf import AnchorError, UnwrapError, chain_rule_check, ssf_counting, ssf_det, ssf_det2

log = logging.getLogger("ssf_lab")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
COMMANDS = ("compute", "counting", "converge", "cesaro", "kernel-check", "selfcheck")
CSV_HEADER = ("lambda", "xi", "method", "epsilon", "reliable")

# equation tags carried by the reports
EQ_TAGS = {
    "det": "2.12",
    "det2": "2.21",
    "counting": "1.2",
    "weak": "3.84",
    "vague": "3.82",
    "indicator": "3.85",
    "masses": "3.86a",
    "determinant": "3.27",
    "determinant_det2": "3.98",
    "resolvent": "3.15",
    "moments": "3.25",
    "cesaro": "1.4",
    "kernel-check": "4.5",
    "selfcheck": "2.11",
}

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_PAIR = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}

_DOMAIN = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["interval", "ball"]},
        "a": _NUM,
        "b": _NUM,
        "R": _POS,
    },
    "allOf": [
        {"if": {"properties": {"kind": {"const": "interval"}}},
         "then": {"required": ["a", "b"], "not": {"required": ["R"]}}},
        {"if": {"properties": {"kind": {"const": "ball"}}},
         "then": {"required": ["R"], "not": {"anyOf": [{"required": ["a"]}, {"required": ["b"]}]}}},
    ],
}

_POTENTIAL = {
    "type": "object",
    "additionalProperties": False,
    "required": ["profile"],
    "properties": {
        "profile": {"enum": ["square_well", "gaussian", "sampled", "zero"]},
        "dimension": {"enum": [1, 3]},
        "depth": _NUM,
        "half_width": _POS,
        "amplitude": _NUM,
        "width": _POS,
        "support_radius": _POS,
        "abscissae": {"type": "array", "items": _NUM, "minItems": 2},
        "values": {"type": "array", "items": _NUM, "minItems": 2},
    },
    "allOf": [
        {"if": {"properties": {"profile": {"const": "square_well"}}},
         "then": {"required": ["depth", "half_width"]}},
        {"if": {"properties": {"profile": {"const": "gaussian"}}},
         "then": {"required": ["amplitude", "width"]}},
        {"if": {"properties": {"profile": {"const": "sampled"}}},
         "then": {"required": ["abscissae", "values"]}},
    ],
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "experiment": {"enum": list(COMMANDS)},
        "potential": _POTENTIAL,
        "pipeline": {"enum": ["det", "det2", "counting"]},
        "domain": _DOMAIN,
        "domain_sequence": {"type": "array", "items": _DOMAIN, "minItems": 1},
        "lambda_grid": {
            "oneOf": [
                {"type": "object", "additionalProperties": False,
                 "required": ["min", "max", "points"],
                 "properties": {"min": _NUM, "max": _NUM,
                                "points": {"type": "integer", "minimum": 1, "maximum": 100000}}},
                {"type": "array", "items": _NUM, "minItems": 1},
            ]
        },
        "eps_schedule": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        "study": {"enum": ["weak", "determinant", "resolvent", "moments"]},
        "z": _PAIR,
        "moment": {
            "type": "object", "additionalProperties": False,
            "required": ["a", "z", "n_max"],
            "properties": {"a": _PAIR, "z": _PAIR, "n_max": {"type": "integer", "minimum": 1, "maximum": 6}},
        },
        "tests": {"type": "array", "minItems": 1,
                  "items": {"enum": ["gaussian", "arctan", "constant", "indicator", "resolvent", "bump"]}},
        "lam_max": _POS,
        "lambda": {"oneOf": [_NUM, {"type": "array", "items": _NUM, "minItems": 1}]},
        "R_grid": {"type": "array", "items": _POS, "minItems": 1},
        "geometry": {"enum": ["symmetric", "half_line"]},
        "outputs": {
            "type": "object", "additionalProperties": False,
            "properties": {"csv": {"type": "string", "minLength": 1},
                           "report": {"type": "string", "minLength": 1}},
        },
        "seed": {"type": "integer"},
        "cases": {"type": "integer", "minimum": 1, "maximum": 100000},
    },
}


class ConfigError(ValueError):
    pass


class NumericalFailure(RuntimeError):
    def __init__(self, operation, exc):
        super().__init__(f"{operation}: {type(exc).__name__}: {exc}")
        self.operation = operation


_NUMERIC_ERRORS = (ConvergenceFailure, UnwrapError, AnchorError, KernelError, FloatingPointError,
                   ArithmeticError, np.linalg.LinAlgError, RuntimeError)


def _numeric(operation, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except ConfigError:
        raise
    except _NUMERIC_ERRORS as exc:
        raise NumericalFailure(operation, exc) from exc


# ---------------------------------------------------------------------------
# configuration


def _reject_constant(name):
    raise ConfigError(f"non-finite number {name} is not allowed")


_CONSTANT = re.compile(r'"(?:[^"\\]|\\.)*"|(-?Infinity|NaN)')


def _locate_constant(text):
    for m in _CONSTANT.finditer(text):
        if m.group(1):
            line = text.count("\n", 0, m.start()) + 1
            col = m.start() - (text.rfind("\n", 0, m.start()) + 1) + 1
            return f"line {line} column {col}: "
    return ""


def load_config(path):
    """Parse and schema-check a JSON run configuration."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from exc
    try:
        cfg = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    except ConfigError as exc:
        raise ConfigError(f"{path}: {_locate_constant(text)}{exc}") from exc
    validate_config(cfg, str(path))
    return cfg


def validate_config(cfg, where="config"):
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        field = "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in e.absolute_path)
        raise ConfigError(f"{where}: field {field}: {e.message}")


def _require(cfg, key, command):
    if key not in cfg:
        raise ConfigError(f"field $.{key}: required for {command}")
    return cfg[key]


def build_potential(p):
    dim = p.get("dimension", 1)
    prof = p["profile"]
    try:
        if prof == "zero":
            return PotentialSpec.zero(dim)
        if prof == "square_well":
            return PotentialSpec.square_well(p["depth"], p["half_width"], dim)
        if prof == "gaussian":
            return PotentialSpec.gaussian(p["amplitude"], p["width"], dim, p.get("support_radius"))
        return PotentialSpec.sampled(p["abscissae"], p["values"], dim)
    except ValueError as exc:
        raise ConfigError(f"field $.potential: {exc}") from exc


def build_domain(d, field="$.domain"):
    try:
        if d["kind"] == "interval":
            return DomainSpec.interval(d["a"], d["b"])
        return DomainSpec.ball(d["R"])
    except ValueError as exc:
        raise ConfigError(f"field {field}: {exc}") from exc


def build_lambdas(g):
    if isinstance(g, dict):
        if g["points"] == 1:
            if g["min"] != g["max"]:
                raise ConfigError("field $.lambda_grid: a single point needs min == max")
            return np.array([float(g["min"])])
        if not g["min"] < g["max"]:
            raise ConfigError("field $.lambda_grid: min must be below max")
        return np.linspace(g["min"], g["max"], g["points"])
    lam = np.asarray(g, dtype=float)
    if np.any(np.diff(lam) <= 0):
        raise ConfigError("field $.lambda_grid: values must be strictly increasing")
    return lam


def _eps(cfg):
    eps = cfg.get("eps_schedule")
    if eps is None:
        return None
    if tuple(eps) != (0.0,) and (any(e <= 0 for e in eps) or len(set(eps)) != len(eps)):
        raise ConfigError("field $.eps_schedule: use [0.0] or distinct positive values")
    return tuple(float(e) for e in eps)


def _check_dimensions(V, domain, field):
    if domain is not None and domain.dimension != V.dimension:
        raise ConfigError(f"field {field}: domain dimension {domain.dimension} does not match "
                          f"potential dimension {V.dimension}")


# ---------------------------------------------------------------------------
# serialisation


def _fmt(x):
    return format(float(x), ".17g")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (complex, np.complexfloating)):
        return {"im": _jsonable(float(x.imag)), "re": _jsonable(float(x.real))}
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return x


def _atomic_write(path, text):
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".ssf-lab-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _versions():
    return {"numpy": np.__version__, "scipy": scipy.__version__, "ssf_lab": __version__}


def emit_report(report, path=None):
    """Serialise a report mapping as JSON with sorted keys; returns the text."""
    doc = {"rows": [], "verdicts": {}, "versions": _versions()}
    doc.update(report)
    text = json.dumps(_jsonable(doc), sort_keys=True, indent=2, allow_nan=False) + "\n"
    if path is not None:
        _atomic_write(path, text)
    return text


def curve_csv(curve, include_anchor=True):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    if curve.epsilon_schedule is None or tuple(curve.epsilon_schedule) == (0.0,):
        eps = 0.0
    else:
        eps = min(curve.epsilon_schedule)
    if include_anchor and curve.anchor < curve.lambdas[0]:
        w.writerow([_fmt(curve.anchor), _fmt(0.0), curve.method, _fmt(eps), "true"])
    for lam, xi, ok in zip(curve.lambdas, curve.values, curve.reliable):
        w.writerow([_fmt(lam), _fmt(xi), curve.method, _fmt(eps), "true" if ok else "false"])
    return buf.getvalue()


def _write_or_print(text, path):
    if path:
        _atomic_write(path, text)
    else:
        sys.stdout.write(text)


def _report_rows(rep):
    out = []
    for r in sorted(rep.rows, key=lambda r: (rep.labels.index(r.label), r.size)):
        out.append({"domain": r.domain, "eq": rep.eq, "error": r.error, "label": r.label,
                     "size": r.size, "value": r.value})
    return out


def report_document(rep, extra=None):
    doc = {
        "eq": rep.eq,
        "experiment": rep.experiment,
        "limits": {k: {"pipeline": rep.pipeline, "value": v} for k, v in rep.limits.items()},
        "notes": list(rep.notes),
        "rows": _report_rows(rep),
        "tolerances": {"resolution": rep.resolution},
        "verdicts": {
            "final_error": rep.final_error,
            "monotone": rep.monotone,
            "per_label": {lab: {"final_error": float(rep.errors(lab)[-1]),
                                "monotone": rep.monotone_for(lab)} for lab in rep.labels},
        },
    }
    if extra:
        doc.update(extra)
    return doc


# ---------------------------------------------------------------------------
# commands


def _threads(args):
    if args.threads is not None:
        n = args.threads
    else:
        env = os.environ.get("SSF_LAB_THREADS")
        if env is None:
            return 1
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"SSF_LAB_THREADS must be a positive integer, got {env!r}") from None
    if n < 1:
        raise ConfigError("thread count must be a positive integer")
    return n


def _map(fn, items, threads):
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _curve(cfg, pipeline, command):
    V = build_potential(_require(cfg, "potential", command))
    lam = build_lambdas(_require(cfg, "lambda_grid", command))
    eps = _eps(cfg)
    if pipeline == "counting":
        domain = build_domain(_require(cfg, "domain", command))
        _check_dimensions(V, domain, "$.domain")
        return _numeric("ssf_counting", ssf_counting, V, domain, lam)
    kid = None
    if "domain" in cfg:
        d = build_domain(cfg["domain"])
        _check_dimensions(V, d, "$.domain")
        kid = KernelId.interval(d.a, d.b) if d.kind == "interval" else KernelId.ball(d.R)
    if pipeline == "det":
        if V.dimension != 1:
            raise ConfigError("field $.pipeline: det needs a dimension-1 potential")
        return _numeric("ssf_det", ssf_det, V, lam, eps, kid)
    return _numeric("ssf_det2", ssf_det2, V, lam, eps, kid)


def cmd_compute(cfg, args, threads, pipeline=None):
    command = "counting" if pipeline == "counting" else "compute"
    pipeline = pipeline or cfg.get("pipeline", "det")
    curve = _curve(cfg, pipeline, command)
    out = args.out or cfg.get("outputs", {}).get("csv")
    _write_or_print(curve_csv(curve), out)
    rpath = cfg.get("outputs", {}).get("report")
    if rpath:
        diag = {k: v for k, v in curve.diagnostics.items() if isinstance(v, (int, float, complex))}
        emit_report({
            "anchor": curve.anchor,
            "diagnostics": diag,
            "eq": EQ_TAGS[pipeline],
            "experiment": command,
            "pair": curve.pair_id,
            "pipeline": pipeline,
            "rows": [{"eq": EQ_TAGS[pipeline], "lambda": l, "reliable": bool(r), "xi": x}
                     for l, x, r in zip(curve.lambdas, curve.values, curve.reliable)],
        }, rpath)
    return EXIT_OK


def _tests_from(cfg):
    from .convergence import TestFunction, default_tests

    names = cfg.get("tests")
    if names is None:
        return default_tests()
    out = []
    for n in names:
        if n == "gaussian":
            out.append(TestFunction.gaussian())
        elif n == "arctan":
            out.append(TestFunction.arctan())
        elif n == "constant":
            out.append(TestFunction.constant(1.0))
        elif n == "indicator":
            out.append(TestFunction.indicator(-1.0, 4.0))
        elif n == "bump":
            out.append(TestFunction.bump())
        else:
            out += [TestFunction.resolvent_monomial(m, k) for m in range(3) for k in range(3) if m + k]
    return out


def cmd_converge(cfg, args, threads):
    from . import convergence as cv

    V = build_potential(_require(cfg, "potential", "converge"))
    doms = _require(cfg, "domain_sequence", "converge")
    domains = [build_domain(d, f"$.domain_sequence[{i}]") for i, d in enumerate(doms)]
    for i, d in enumerate(domains):
        _check_dimensions(V, d, f"$.domain_sequence[{i}]")
    try:
        seq = cv.DomainSequence(tuple(domains), "full line" if V.dimension == 1 else "full space")
    except ValueError as exc:
        raise ConfigError(f"field $.domain_sequence: {exc}") from exc
    study = cfg.get("study", "weak" if V.dimension == 1 else "determinant")
    lam_max = float(cfg.get("lam_max", cv.LAM_MAX))
    if study in ("weak", "resolvent", "moments") and V.dimension != 1:
        raise ConfigError(f"field $.study: {study} is implemented in dimension 1")
    if study == "weak":
        rep = _numeric("weak_convergence_report", cv.weak_convergence_report, seq, V, None,
                       _tests_from(cfg), lam_max=lam_max)
        rep.eq = EQ_TAGS["weak"]
    elif study == "determinant":
        z = complex(*cfg.get("z", [0.0, 1.0]))
        if z.imag == 0 and z.real >= 0:
            raise ConfigError("field $.z: needs Im z != 0 or Re z < 0")
        rep = _numeric("determinant_convergence", cv.determinant_convergence, seq, V, z)
    elif study == "resolvent":
        z = complex(*cfg.get("z", [0.0, 1.0]))
        if z.imag == 0:
            raise ConfigError("field $.z: must be off the real axis")
        try:
            rep = cv.resolvent_strong_convergence_spotcheck(seq, V, z)
        except ValueError as exc:
            raise ConfigError(f"field $.domain_sequence: {exc}") from exc
    else:
        m = _require(cfg, "moment", "converge")
        a, z = complex(*m["a"]), complex(*m["z"])
        if a.imag == 0 or z.imag == 0:
            raise ConfigError("field $.moment: a and z must be off the real axis")
        rep = _numeric("moment_convergence", cv.moment_convergence, seq, V, a, z, m["n_max"],
                       lam_max=lam_max)
    doc = report_document(rep, {"study": study, "potential": V.describe()})
    if study == "weak":
        for row in doc["rows"]:
            if row["label"].startswith("mass"):
                row["eq"] = EQ_TAGS["masses"]
            elif row["label"].startswith("indicator"):
                row["eq"] = EQ_TAGS["indicator"]
    out = args.out or cfg.get("outputs", {}).get("report")
    _write_or_print(emit_report(doc), out)
    return EXIT_OK


def cmd_cesaro(cfg, args, threads):
    from . import convergence as cv

    V = build_potential(_require(cfg, "potential", "cesaro"))
    if V.dimension != 1:
        raise ConfigError("field $.potential.dimension: Cesaro averages need dimension 1")
    lams = _require(cfg, "lambda", "cesaro")
    lams = [lams] if isinstance(lams, (int, float)) else list(lams)
    R = np.asarray(_require(cfg, "R_grid", "cesaro"), dtype=float)
    if np.any(np.diff(R) <= 0):
        raise ConfigError("field $.R_grid: values must be strictly increasing")
    geometry = cfg.get("geometry", "symmetric")
    rows, warnings = [], []

    def one(lam):
        try:
            return lam, cv.cesaro_limit(V, lam, R, geometry=geometry)
        except cv.ExcludedEnergyError as exc:
            return lam, str(exc)

    results = _numeric("cesaro_limit", _map, one, lams, threads)
    verdicts = {}
    for lam, res in results:
        if isinstance(res, str):
            warnings.append({"lambda": lam, "warning": f"excluded: {res}"})
            continue
        for Rv, avg, err in zip(res.R_grid, res.averages, res.errors):
            rows.append({"R": Rv, "average": avg, "eq": EQ_TAGS["cesaro"], "error": err,
                         "lambda": lam, "reference": res.reference})
        verdicts[_fmt(lam)] = {"final_error": float(res.errors[-1]),
                               "limit_estimate": res.limit_estimate,
                               "decreasing": bool(np.all(np.diff(res.errors) < 0))}
    doc = {"eq": EQ_TAGS["cesaro"], "experiment": "cesaro", "geometry": geometry,
           "limits": {"pipeline": "det"}, "potential": V.describe(), "rows": rows,
           "verdicts": verdicts, "warnings": warnings}
    out = args.out or cfg.get("outputs", {}).get("report")
    _write_or_print(emit_report(doc), out)
    return EXIT_OK


def _interval_oracle(z, a, b, x, xp, terms=20000):
    """Eigenfunction expansion with the first two terms of its Taylor series in ``z``
    summed in closed form, so the remaining terms decay like ``n^-6``.

    Returns the value and a condition estimate (sum of magnitudes over the result).
    """
    L = b - a
    s, t = min(x, xp) - a, max(x, xp) - a
    g0 = s * (L - t) / L
    g1 = s * (L - t) * (L * L - s * s - (L - t) ** 2) / (6 * L)
    n = np.arange(1, terms + 1)
    lam = (n * math.pi / L) ** 2
    modes = (2.0 / L) * np.sin(n * math.pi * (x - a) / L) * np.sin(n * math.pi * (xp - a) / L)
    terms_ = z * z * modes / (lam * lam * (lam - z))
    val = g0 + z * g1 + np.sum(terms_)
    cond = (abs(g0) + abs(z * g1) + np.sum(np.abs(terms_))) / abs(val)
    return val, cond


def _free_oracle(n, z, r):
    k = cmath.sqrt(z)
    if k.imag < 0:
        k = -k
    if n == 1:
        return 1j / (2 * k) * cmath.exp(1j * k * r)
    if n == 3:
        return cmath.exp(1j * k * r) / (4 * math.pi * r)
    from scipy.special import hankel1

    return 0.25j * complex(hankel1(0, k * r))


def kernel_check(seed=0, cases=100, max_condition=1e4):
    """Relative errors of the kernels against independent formulas on random cases.

    Interval cases whose expansion is ill conditioned (exponentially small
    kernels) are redrawn; the number redrawn is reported.
    """
    rng = np.random.default_rng(seed)
    worst = {"free1": 0.0, "free2": 0.0, "free3": 0.0, "interval": 0.0}
    redrawn = 0
    t0 = time.perf_counter()
    a, b = -3.5, 3.5
    done = 0
    while done < cases:
        z = complex(rng.uniform(-20, 20), rng.uniform(0.1, 10) * rng.choice([-1, 1]))
        x, xp = rng.uniform(-3, 3, 2)
        ref, cond = _interval_oracle(z, a, b, x, xp)
        if cond > max_condition:
            redrawn += 1
            continue
        done += 1
        got = complex(interval_dirichlet_green(z, a, b, x, xp))
        worst["interval"] = max(worst["interval"], abs(got - ref) / abs(ref))
        for n in (1, 2, 3):
            r = abs(x - xp) if n == 1 else abs(x - xp) + 0.05
            if n == 1:
                got = complex(free_green(1, z, x, xp))
            else:
                got = complex(free_green(n, z, np.array([r, 0, 0][:n]), np.zeros(n)))
            ref = _free_oracle(n, z, r)
            worst[f"free{n}"] = max(worst[f"free{n}"], abs(got - ref) / abs(ref))
    return worst, redrawn, time.perf_counter() - t0


def cmd_kernel_check(cfg, args, threads):
    worst, redrawn, elapsed = kernel_check(cfg.get("seed", 0), cfg.get("cases", 100))
    ok = all(v <= 1e-10 for v in worst.values())
    for k, v in worst.items():
        print(f"{'PASS' if v <= 1e-10 else 'FAIL'} {k} max relative error {v:.3e}")
    doc = {"eq": EQ_TAGS["kernel-check"], "experiment": "kernel-check", "elapsed_seconds": round(elapsed, 3),
           "rows": [{"eq": EQ_TAGS["kernel-check"], "kernel": k, "max_relative_error": v}
                    for k, v in sorted(worst.items())],
           "redrawn_ill_conditioned": redrawn,
           "verdicts": {"all_within_1e-10": ok}}
    out = args.out or cfg.get("outputs", {}).get("report")
    if out:
        doc.pop("elapsed_seconds")
        emit_report(doc, out)
    return EXIT_OK if ok else EXIT_NUMERIC


def _fd_counts(V, a, b, lams, n=2000):
    from scipy.linalg import eigh_tridiagonal

    x = np.linspace(a, b, n + 2)[1:-1]
    h = x[1] - x[0]
    ev = eigh_tridiagonal(2.0 / h**2 + V(x), np.full(n - 1, -1.0 / h**2), eigvals_only=True)
    return ev, np.array([int(np.sum(ev < l)) for l in lams])


def selfcheck(seed=0):
    """Quick invariant suite; returns ``[(name, passed, detail)]``."""
    rng = np.random.default_rng(seed)
    out = []
    V = PotentialSpec.square_well(2.0, 1.0)
    grid = build_grid(V, 40)
    pair = factorize(V)
    worst = 0.0
    for z in (1j, -1.0 + 0.5j, Energy.boundary(-0.5), 3.0 + 2j):
        op = assemble(KernelId.full(1), pair, grid, z)
        d, d2 = fredholm_det(op), det2(op)
        worst = max(worst, abs(d2 * np.exp(op.trace) - d) / abs(d))
    out.append(("det2 * exp(tr K) == det", worst < 1e-12, f"{worst:.2e}"))

    mism = 0
    for _ in range(20):
        depth, hw = rng.uniform(0.5, 8.0), rng.uniform(0.2, 2.0)
        W = PotentialSpec.square_well(depth, hw)
        a, b = -hw - rng.uniform(0.5, 4.0), hw + rng.uniform(0.5, 4.0)
        ev, _ = _fd_counts(W, a, b, [])
        lam = rng.uniform(-depth, 30.0)
        while np.min(np.abs(ev - lam)) < 1e-2:
            lam = rng.uniform(-depth, 30.0)
        _, fd = _fd_counts(W, a, b, [lam])
        mism += int(count_interval_many(W, a, b, [lam])[0] != fd[0])
    out.append(("Prufer counts == finite-difference counts", mism == 0, f"{mism} mismatches"))

    lam = np.linspace(-3, 6, 37)
    mixed = PotentialSpec.sampled([-2, -1, -1, 1, 1, 2], [0, 0, -2, -2, 1.5, 1.5])
    rep = chain_rule_check(mixed, lam, DomainSpec.interval(-6, 6))
    out.append(("counting chain rule exact", rep.residual == 0.0, f"residual {rep.residual:g}"))
    vp, vm = sign_split(mixed)
    c = ssf_counting(vp, DomainSpec.interval(-6, 6), lam)
    out.append(("V >= 0 gives xi >= 0", bool(np.all(c.values >= 0)), ""))

    # a narrow well keeps sqrt(E) * width small, where ||K||_HS ~ ||V||_1 / (2 sqrt(E)) is sharp
    narrow = PotentialSpec.square_well(1000.0, 1e-3)
    npair, ngrid = factorize(narrow), build_grid(narrow, 40)
    Es = [10.0, 100.0, 1000.0, 10000.0]
    norms = [hs_norm(assemble(KernelId.full(1), npair, ngrid, -E)) for E in Es]
    slope = -np.polyfit(np.log(Es), np.log(norms), 1)[0]
    out.append(("HS norm decays like E^-1/2", 0.45 <= slope <= 0.55, f"exponent {slope:.4f}"))

    curve = ssf_det(V, [-0.5, 1.0], (0.0,))
    out.append(("curve vanishes at the anchor", curve.anchor < -0.5 and abs(curve.values[0] + 1) < 1e-8,
                f"anchor {curve.anchor:g}"))
    return out


def cmd_selfcheck(cfg, args, threads):
    results = selfcheck(cfg.get("seed", 0))
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}" + (f" ({detail})" if detail else ""))
    out = args.out or cfg.get("outputs", {}).get("report")
    if out:
        emit_report({"eq": EQ_TAGS["selfcheck"], "experiment": "selfcheck",
                     "rows": [{"detail": d, "invariant": n, "passed": ok} for n, ok, d in results],
                     "verdicts": {"all_passed": all(ok for _, ok, _ in results)}}, out)
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_NUMERIC


_HANDLERS = {
    "compute": cmd_compute,
    "counting": lambda cfg, args, threads: cmd_compute(cfg, args, threads, "counting"),
    "converge": cmd_converge,
    "cesaro": cmd_cesaro,
    "kernel-check": cmd_kernel_check,
    "selfcheck": cmd_selfcheck,
}


def build_parser():
    p = argparse.ArgumentParser(prog="ssf-lab", description="Spectral shift function experiments.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--out", help="output path (CSV for compute/counting, JSON otherwise)")
    p.add_argument("--threads", type=int, help="worker threads (overrides SSF_LAB_THREADS)")
    p.add_argument("--verbose", action="store_true")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="ssf-lab: %(message)s")
    try:
        threads = _threads(args)
        if args.config:
            cfg = load_config(args.config)
        elif args.command in ("kernel-check", "selfcheck"):
            cfg = {}
        else:
            raise ConfigError(f"--config is required for {args.command}")
        exp = cfg.get("experiment")
        if exp is not None and exp != args.command:
            raise ConfigError(f"field $.experiment: {exp!r} does not match command {args.command!r}")
        log.info("running %s with %d thread(s)", args.command, threads)
        with np.errstate(all="ignore"):
            return _HANDLERS[args.command](cfg, args, threads)
    except ConfigError as exc:
        print(f"ssf-lab: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"ssf-lab: numerical failure in {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"ssf-lab: I/O error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
