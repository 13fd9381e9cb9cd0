"""Command-line front end: symbol files, built-ins, reports and CSV output.

Usage::

    hypclass <command> (<builtin> ... | --file PATH) [--k K] [--seed S] [--tol T]
             [--out DIR] [--csv] [--json]

A symbol file is plain text split into ``[section]`` blocks::

    [header]
    n = 3
    r = 2
    base = 0 0 0 0 | 0 0 0 1      # x | xi, optional
    [params]
    k = 3
    [phi]
    xi1
    (x0 + x1 - x0*x2^k/k)*xin
    [theta]
    x2^2
    [region]
    box = 0.2
    samples = 50
    shells = 1e-1 1e-2 1e-3 1e-4
    seed = 7

``[nu]`` and ``[R]`` take one expression each.  ``#`` starts a comment.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys as _sys
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import __version__, factor, flow, normform, selftest, spectral
from .builtins import BUILTIN_NAMES, from_spec
from .expr import ExprSyntaxError, PhasePoint, parse
from .linalg import RankAmbiguityWarning

COMMANDS = ("classify", "normal-form", "transition", "flow", "factorize", "sweep", "selftest")

_SECTIONS = ("header", "params", "phi", "theta", "nu", "R", "region")


class SymbolFileError(ValueError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "") + ": "
        super().__init__(where + message)
        self.line = line
        self.column = column


@dataclass
class Region:
    box: float = 0.2
    samples: int = 50
    shells: tuple = factor.SHELL_DISTANCES
    seed: int | None = None
    axis: int = 2
    lo: float = -0.2
    hi: float = 0.2
    points: int = 41


@dataclass
class Loaded:
    system: spectral.SymbolSystem
    region: Region
    source: str                      # text that is hashed into the digest
    label: str
    extras: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# symbol files

def _strip(line: str) -> str:
    return line.split("#", 1)[0].strip()


def _parse_expr(text: str, params: dict, n: int, lineno: int, offset: int):
    try:
        return parse(text, params, n)
    except ExprSyntaxError as exc:
        raise SymbolFileError(str(exc), lineno, offset + exc.position + 1) from None
    except ValueError as exc:
        raise SymbolFileError(str(exc), lineno) from None


def _key_value(line: str, lineno: int) -> tuple[str, str]:
    if "=" not in line:
        raise SymbolFileError(f"expected 'key = value', got {line!r}", lineno)
    k, v = line.split("=", 1)
    return k.strip(), v.strip()


def _number(text: str, lineno: int, kind=float):
    try:
        return kind(text)
    except ValueError:
        raise SymbolFileError(f"not a number: {text!r}", lineno) from None


def parse_symbol_file(text: str, name: str = "<file>") -> Loaded:
    sections: dict[str, list[tuple[int, str, int]]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip(raw)
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise SymbolFileError("unterminated section header", lineno)
            current = line[1:-1].strip()
            if current not in _SECTIONS:
                raise SymbolFileError(f"unknown section [{current}]", lineno)
            if current in sections:
                raise SymbolFileError(f"duplicate section [{current}]", lineno)
            sections[current] = []
            continue
        if current is None:
            raise SymbolFileError("content before the first section", lineno)
        sections[current].append((lineno, line, raw.index(line[0])))
    if "header" not in sections:
        raise SymbolFileError("missing [header] section")
    if not sections.get("phi"):
        raise SymbolFileError("missing or empty [phi] section")

    n = r = None
    base = None
    for lineno, line, _ in sections["header"]:
        k, v = _key_value(line, lineno)
        if k == "n":
            n = _number(v, lineno, int)
        elif k == "r":
            r = _number(v, lineno, int)
        elif k == "d":
            pass  # checked against the phi count below
        elif k == "base":
            base = (lineno, v)
        else:
            raise SymbolFileError(f"unknown header key {k!r}", lineno)
    if n is None or n < 1:
        raise SymbolFileError("header must declare n >= 1")
    for lineno, line, _ in sections["header"]:
        k, v = _key_value(line, lineno)
        if k == "d" and _number(v, lineno, int) != len(sections["phi"]):
            raise SymbolFileError(f"d = {v} but {len(sections['phi'])} phi lines given", lineno)

    params: dict[str, float] = {}
    for lineno, line, _ in sections.get("params", []):
        k, v = _key_value(line, lineno)
        if not k.isidentifier():
            raise SymbolFileError(f"bad parameter name {k!r}", lineno)
        params[k] = _number(v, lineno)

    phis = [_parse_expr(line, params, n, lineno, off) for lineno, line, off in sections["phi"]]
    single = {}
    for sec in ("theta", "nu", "R"):
        rows = sections.get(sec, [])
        if len(rows) > 1:
            raise SymbolFileError(f"[{sec}] takes one expression", rows[1][0])
        if rows:
            lineno, line, off = rows[0]
            single[sec] = _parse_expr(line, params, n, lineno, off)

    region = Region()
    for lineno, line, _ in sections.get("region", []):
        k, v = _key_value(line, lineno)
        if k == "box":
            region.box = _number(v, lineno)
        elif k == "samples":
            region.samples = _number(v, lineno, int)
        elif k == "shells":
            region.shells = tuple(_number(t, lineno) for t in v.split())
        elif k == "seed":
            region.seed = _number(v, lineno, int)
        elif k == "axis":
            if not (v.startswith("x") and v[1:].isdigit()):
                raise SymbolFileError(f"axis must be x<i>, got {v!r}", lineno)
            region.axis = int(v[1:])
        elif k == "range":
            parts = v.split()
            if len(parts) != 2:
                raise SymbolFileError("range takes two numbers", lineno)
            region.lo, region.hi = (_number(t, lineno) for t in parts)
        elif k == "points":
            region.points = _number(v, lineno, int)
        else:
            raise SymbolFileError(f"unknown region key {k!r}", lineno)

    base_pt = None
    if base is not None:
        lineno, v = base
        halves = v.split("|")
        if len(halves) != 2:
            raise SymbolFileError("base must be 'x0 .. xn | xi0 .. xin'", lineno)
        xs = [_number(t, lineno) for t in halves[0].split()]
        xis = [_number(t, lineno) for t in halves[1].split()]
        if len(xs) != n + 1 or len(xis) != n + 1:
            raise SymbolFileError(f"base needs {n + 1} x and {n + 1} xi values", lineno)
        try:
            base_pt = PhasePoint(xs, xis)
        except ValueError as exc:
            raise SymbolFileError(str(exc), lineno) from None

    extras = {"nu": single["nu"]} if "nu" in single else None
    try:
        system = spectral.SymbolSystem(n, phis, theta=single.get("theta"),
                                       remainder=single.get("R"), base_point=base_pt, r=r,
                                       name=name, extras=extras, params=params)
    except ValueError as exc:
        raise SymbolFileError(str(exc)) from None
    # the base point must lie on Sigma after projection
    try:
        pt = spectral.project(system, system.base_point)
    except (spectral.SigmaError, ArithmeticError) as exc:
        raise SymbolFileError(f"base point cannot be projected onto Sigma: {exc}") from None
    if float(np.max(np.abs(pt.x - system.base_point.x))) > 1e-6:
        raise SymbolFileError("base point is not on Sigma")
    return Loaded(system, region, text, name)


def load(path: str) -> Loaded:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise SymbolFileError(f"cannot read {path}: {exc.strerror}") from None
    return parse_symbol_file(text, os.path.basename(path))


def load_builtin(spec: str, k: int | None = None) -> Loaded:
    system = from_spec(spec, k)
    return Loaded(system, Region(), f"builtin:{system.name}", system.name)


# ---------------------------------------------------------------------------
# report helpers

def _clean(obj):
    """JSON-safe copy: arrays to lists, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, complex):
        return [_clean(obj.real), _clean(obj.imag)]
    return obj


def _num(value, tol) -> dict:
    return {"value": value, "tol": tol}


def _check(name: str, value, tol, ok: bool) -> dict:
    return {"name": name, "value": value, "tol": tol, "pass": bool(ok)}


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def render_text(report: dict) -> str:
    lines = []

    def emit(obj, indent):
        pad = "  " * indent
        if isinstance(obj, dict):
            if set(obj) == {"value", "tol"}:
                lines[-1] += f" {_fmt(obj['value'])} (tol {_fmt(obj['tol'])})"
                return
            for k, v in obj.items():
                if isinstance(v, dict) and set(v) == {"value", "tol"}:
                    lines.append(f"{pad}{k}: {_fmt(v['value'])} (tol {_fmt(v['tol'])})")
                elif isinstance(v, (dict, list)) and v and not _flat(v):
                    lines.append(f"{pad}{k}:")
                    emit(v, indent + 1)
                else:
                    lines.append(f"{pad}{k}: {_fmt(v)}")
        elif isinstance(obj, list):
            for item in obj:
                if isinstance(item, dict) and "name" in item and "pass" in item:
                    mark = "PASS" if item["pass"] else "FAIL"
                    extra = "".join(f" {k}={_fmt(v)}" for k, v in item.items()
                                    if k not in ("name", "value", "tol", "pass"))
                    lines.append(f"{pad}[{mark}] {item['name']}: {_fmt(item.get('value'))}"
                                 f" (tol {_fmt(item.get('tol'))}){extra}")
                elif isinstance(item, dict):
                    lines.append(f"{pad}-")
                    emit(item, indent + 1)
                else:
                    lines.append(f"{pad}- {_fmt(item)}")

    emit(report, 0)
    return "\n".join(lines) + "\n"


def _flat(v) -> bool:
    return isinstance(v, list) and all(not isinstance(x, (dict, list)) for x in v)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


# ---------------------------------------------------------------------------
# commands

def _points_row(pt: PhasePoint) -> dict:
    return {"x": pt.x.tolist(), "xi": pt.xi.tolist()}


def cmd_classify(ld: Loaded, opts) -> tuple[dict, list, str | None]:
    sys = ld.system
    tol = opts.tol if opts.tol is not None else spectral.THETA_TOL
    rng = _rng(opts.seed)
    rows, checks = [], []
    inconsistent = 0
    for pt in spectral.sample_sigma(sys, rng, ld.region.samples, box=ld.region.box):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", RankAmbiguityWarning)
            try:
                rep = spectral.classify(sys, pt, tol=tol)
            except spectral.InconsistencyError as exc:
                inconsistent += 1
                rows.append({**_points_row(pt), "error": str(exc)})
                continue
        rows.append({**_points_row(pt), "label": rep.label, "spectral_label": rep.spectral_label,
                     "theta": rep.theta, "alpha_norm": rep.alpha_norm, "dim_w": rep.dim_w,
                     "trace_plus": rep.trace_plus, "consistent": rep.consistent,
                     "rank_ambiguous": bool(caught)})
    counts = {}
    for r in rows:
        if "label" in r:
            counts[r["label"]] = counts.get(r["label"], 0) + 1
    checks.append(_check("label / spectrum agreement outside the transition band", inconsistent,
                         0, inconsistent == 0))
    section = {"tolerances": {"theta": tol, "transition_band": spectral.CHECK_BAND,
                              "rank_rtol": 1e-9, "sigma": spectral.SIGMA_TOL},
               "counts": dict(sorted(counts.items())), "samples": rows}
    return {"classification": section}, checks, None


def cmd_sweep(ld: Loaded, opts) -> tuple[dict, list, str | None]:
    sys = ld.system
    tol = opts.tol if opts.tol is not None else spectral.THETA_TOL
    reg = ld.region
    vals = selftest.sweep_values(reg.lo, reg.hi, reg.points)
    rows = []
    for v in vals:
        z = sys.base_point.vector().copy()
        z[reg.axis] = v
        pt = spectral.project(sys, PhasePoint.from_vector(z), frozen=(reg.axis,))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RankAmbiguityWarning)
            rep = spectral.classify(sys, pt, tol=tol)
        rows.append({f"x{reg.axis}": float(v), "label": rep.label, "theta": rep.theta,
                     "spectral_label": rep.spectral_label})
    bands = []
    for row in rows:
        v = row[f"x{reg.axis}"]
        if bands and bands[-1]["label"] == row["label"]:
            bands[-1]["to"] = v
            bands[-1]["points"] += 1
        else:
            bands.append({"label": row["label"], "from": v, "to": v, "points": 1})
    section = {"tolerances": {"theta": tol}, "axis": f"x{reg.axis}", "range": [reg.lo, reg.hi],
               "bands": bands, "table": rows}
    return {"sweep": section}, [], None


def cmd_normal_form(ld: Loaded, opts) -> tuple[dict, list, str | None]:
    sys = ld.system
    tol = opts.tol if opts.tol is not None else normform.NF_TOL
    rng = _rng(opts.seed)
    pts = spectral.sample_sigma(sys, rng, ld.region.samples, box=ld.region.box, include_xi0=False)
    cert = normform.verify_normal_form(sys, pts, tol=tol)
    out = {"certificate": cert.as_dict()}
    try:
        frame = normform.pointwise_normal_form(sys)
    except (normform.NotTransitionPoint, spectral.DegenerateConfiguration,
            spectral.SigmaError) as exc:
        out["frame"] = {"error": str(exc)}
    else:
        out["frame"] = {"theta": _num(frame.theta, spectral.THETA_TOL),
                        "alpha_norm": frame.alpha_norm, "delta": frame.delta, "r": frame.r,
                        "coefficients": frame.coefficients.tolist(),
                        "checks": {k: _num(v, normform.NF_TOL) for k, v in frame.checks.items()}}
    checks = [_check("normal-form certificate", max(cert.c1, cert.c2, cert.c4), tol, cert.verdict)]
    return {"normal_form": out}, checks, None


def cmd_transition(ld: Loaded, opts) -> tuple[dict, list, str | None]:
    tol = opts.tol if opts.tol is not None else 1e-8
    an = flow.transition_invariants(ld.system, tol=tol)
    d = an.as_dict()
    d["tolerances"] = {"preconditions": tol, "dependence_cutoff": 1e-7, "charpoly": 1e-10}
    checks = []
    if an.a_I is not None:
        checks.append(_check("A_I characteristic polynomial", an.a_I.charpoly_residual, 1e-10,
                             an.a_I.charpoly_residual <= 1e-10))
        checks.append(_check("A_I eigenvalue 1, other real eigenvalues negative",
                             float(an.a_I.has_unit_eigenvalue and an.a_I.other_real_negative),
                             1.0, an.a_I.has_unit_eigenvalue and an.a_I.other_real_negative))
    return {"transition": d}, checks, None


def cmd_flow(ld: Loaded, opts) -> tuple[dict, list, str | None]:
    tol = opts.tol if opts.tol is not None else 1e-9
    an = flow.transition_invariants(ld.system)
    res = flow.tangent_search(ld.system, an)
    d = res.as_dict()
    d["tolerances"] = {"order_slack": flow.ORDER_SLACK, "p_drift": tol,
                       "rtol": flow.RTOL, "atol": 1e-14}
    checks = [_check("p drift along trajectory", res.p_drift, tol, res.p_drift <= tol),
              _check("tangent bicharacteristic confirmed", float(res.tangent), 1.0, res.tangent)]
    csv_text = res.trajectory.to_csv(ld.system) if (opts.csv or opts.out) else None
    return {"transition": an.as_dict(), "flow": d}, checks, csv_text


def cmd_factorize(ld: Loaded, opts) -> tuple[dict, list, str | None]:
    sys = ld.system
    tol = opts.tol if opts.tol is not None else 1e-9
    rng = _rng(opts.seed)
    shells = factor.shell_samples(sys, rng, distances=ld.region.shells)
    suff = factor.sufficient_conditions(sys, shells, rng)
    pts = [p for _, ps in factor._shells(shells) for p in ps]
    checks = []
    out = {"tolerances": {"growth_limit": factor.GROWTH_LIMIT, "ratio_floor": factor.RATIO_FLOOR,
                          "identity": tol, "beta_orthogonality": factor.BETA_TOL,
                          "alpha_fit": factor.FIT_RESIDUAL},
           "shells": list(ld.region.shells), "dropped_theta_negative": shells["dropped"],
           "sufficient_conditions": suff.as_dict()}
    try:
        beta = factor.beta_solve(sys, rng=rng)
        fact = factor.build_factorization(sys, samples=shells, rng=rng)
    except factor.FactorizationError as exc:
        out["factorization"] = {"error": str(exc)}
        checks.append(_check("factorization built", 0.0, 1.0, False))
    else:
        rep = factor.check_defn_one(fact, shells)
        ident = factor.identity_residual(fact, pts)
        c = factor.q_lower_bound(fact, sys, pts)
        out["factorization"] = {"lam": fact.lam, "gamma": fact.gamma, "beta": list(fact.beta),
                                "beta_orthogonality": _num(beta.orthogonality, factor.BETA_TOL),
                                "alpha_fit_residual": _num(beta.fit_residual, factor.FIT_RESIDUAL),
                                "identity_residual": _num(ident, tol),
                                "q_lower_bound": c, "definition": rep.as_dict(),
                                "two_decade_growth": rep.growth_over(2),
                                "verdict": "factorizes" if rep.passed else "no factorization"}
        checks.append(_check("factorization identity", ident, tol, ident <= tol))
        checks.append(_check("Q lower bound constant positive", c, 0.0, c > 0))
        if beta.r >= 4:
            checks.append(_check("beta orthogonality", abs(beta.orthogonality), factor.BETA_TOL,
                                 abs(beta.orthogonality) <= factor.BETA_TOL))
    checks.append(_check("sufficient conditions imply the factorization",
                         float(suff.implication_holds), 1.0, suff.implication_holds))
    return {"factorize": out}, checks, None


def cmd_selftest(ld: Loaded | None, opts) -> tuple[dict, list, str | None]:
    res = selftest.run_selftest(opts.seed)
    checks = [c for group in res["groups"].values() for c in group]
    return {"selftest": {"groups": res["groups"]}}, checks, None


_DISPATCH = {"classify": cmd_classify, "sweep": cmd_sweep, "normal-form": cmd_normal_form,
             "transition": cmd_transition, "flow": cmd_flow, "factorize": cmd_factorize,
             "selftest": cmd_selftest}


def run(command: str, ld: Loaded | None, opts) -> tuple[dict, str | None]:
    """Execute ``command``; returns (report, csv text or None)."""
    if command not in _DISPATCH:
        raise ValueError(f"unknown command {command!r}")
    body, checks, csv_text = _DISPATCH[command](ld, opts)
    source = ld.source if ld is not None else "selftest"
    digest = hashlib.sha256(
        f"{command}\n{source}\nk={opts.k}\nseed={opts.seed}\ntol={opts.tol}".encode()).hexdigest()
    report = {"tool": "hypclass", "version": __version__, "command": command,
              "input": ld.label if ld is not None else None, "input_digest": digest,
              "seed": opts.seed, "generator": "numpy Philox",
              **body, "checks": checks, "pass": all(c["pass"] for c in checks)}
    return _clean(report), csv_text


# ---------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hypclass",
                                 description="Classify doubly characteristic hyperbolic symbols.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("builtin", nargs="*",
                    help=f"built-in example, e.g. 'rei2 k=3' ({', '.join(BUILTIN_NAMES)})")
    ap.add_argument("--file", help="symbol file")
    ap.add_argument("--k", type=int, help="exponent k for the built-ins")
    ap.add_argument("--seed", type=int, default=None, help="generator seed (default 0)")
    ap.add_argument("--tol", type=float, help="main tolerance of the command")
    ap.add_argument("--out", help="directory for report.json, report.txt and trajectory.csv")
    ap.add_argument("--csv", action="store_true", help="emit the trajectory CSV (flow)")
    ap.add_argument("--json", action="store_true", help="print the JSON report to stdout")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    opts = ap.parse_args(argv)
    if opts.seed is not None and opts.seed < 0:
        ap.error("--seed must be non-negative")
    ld = None
    try:
        if opts.command != "selftest":
            if opts.file and opts.builtin:
                ap.error("give either a built-in name or --file, not both")
            if opts.file:
                ld = load(opts.file)
            elif opts.builtin:
                ld = load_builtin(" ".join(opts.builtin), opts.k)
            else:
                ap.error("a built-in name or --file is required")
        if opts.seed is None:
            opts.seed = ld.region.seed if ld is not None and ld.region.seed is not None else 0
        report, csv_text = run(opts.command, ld, opts)
    except SymbolFileError as exc:
        print(f"hypclass: {exc}", file=_sys.stderr)
        return 2
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        print(f"hypclass: {type(exc).__name__}: {exc}", file=_sys.stderr)
        return 1
    text_out = render_text(report)
    json_out = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if opts.out:
        os.makedirs(opts.out, exist_ok=True)
        with open(os.path.join(opts.out, "report.json"), "w", encoding="utf-8") as fh:
            fh.write(json_out)
        with open(os.path.join(opts.out, "report.txt"), "w", encoding="utf-8") as fh:
            fh.write(text_out)
        if csv_text is not None:
            with open(os.path.join(opts.out, "trajectory.csv"), "w", encoding="utf-8") as fh:
                fh.write(csv_text)
    if opts.json:
        _sys.stdout.write(json_out)
    elif csv_text is not None and not opts.out:
        _sys.stdout.write(csv_text)
    else:
        _sys.stdout.write(text_out)
    return 0 if report["pass"] else 1


def entry() -> int:
    try:
        return main()
    except BrokenPipeError:
        # output piped into e.g. head; silence the flush at interpreter exit
        devnull = os.open(os.devnull, os.O_WRONLY)
        os.dup2(devnull, _sys.stdout.fileno())
        return 0


if __name__ == "__main__":
    raise SystemExit(entry())
