"""Command-line interface: ``quadsolv <verb> system.json [flags]``."""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .exponents import NotFuchsianError
from .formal import (
    ResonantPointError,
    UnsupportedConfiguration,
    formal_data,
    formal_residual,
)
from .monodromy import IntegrationError, check_exponent_consistency, monodromy
from .quadrature import (
    NotTriangularError,
    QuadratureError,
    check_liouville,
    default_base,
    solve_triangular,
    to_json,
    verify_solution,
)
from .report import (
    EXIT_DECIDED,
    EXIT_NUMERICAL,
    EXIT_PARSE,
    EXIT_UNSUPPORTED,
    SCHEMA_VERSION,
    NumericalFailure,
    Tolerances,
    analyze,
    dumps,
    flag_dict,
    matrix,
    point_label,
    render_text,
    scalar,
    verdict_dict,
)
from .system import (
    IrregularAtInfinity,
    PoleProximityError,
    SingularPoint,
    SpecError,
    SystemSpec,
    UnknownPointError,
    classify,
    parse_system,
    resolve_point,
    singular_points,
)
from .triangularize import block_form, simultaneous_triangularize
from . import __version__

VERBS = ("analyze", "decide", "triangularize", "monodromy", "formal", "solve")


class _Unsupported(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="quadsolv", description=__doc__)
    ap.add_argument("--version", action="version", version=f"quadsolv {__version__}")
    ap.add_argument("verb", choices=VERBS)
    ap.add_argument("system", help="system document (JSON), '-' for stdin")
    ap.add_argument("--tol-eig", type=float, default=1e-9)
    ap.add_argument("--tol-rank", type=float, default=1e-10)
    ap.add_argument("--rtol-ode", type=float, default=1e-11)
    ap.add_argument("--rat-denominator-bound", type=float, default=1e6)
    ap.add_argument("--truncation-order", "-K", type=int, default=8)
    ap.add_argument("--k", type=int, default=None, help="block size for triangularize")
    ap.add_argument("--point", default=None, help="singular point for formal (location or 'infinity')")
    ap.add_argument("--format", choices=("json", "text"), default="json")
    ap.add_argument("-o", "--output", default=None, help="write the report here instead of stdout")
    return ap


def _tolerances(args) -> Tolerances:
    return Tolerances(args.tol_eig, args.tol_rank, args.rtol_ode,
                      int(args.rat_denominator_bound), args.truncation_order)


def _header(verb, tols):
    return {"schema_version": SCHEMA_VERSION, "tool": "quadsolv", "tool_version": __version__,
            "verb": verb, "tolerances": tols.as_dict()}


def _load(path):
    if path == "-":
        return parse_system(sys.stdin.read())
    with open(path, encoding="utf-8") as fh:
        return parse_system(fh.read())


# ------------------------------------------------------------ verbs

def cmd_analyze(spec, args):
    rep = analyze(spec, _tolerances(args))
    return rep.to_dict(), rep.exit_code()


def cmd_decide(spec, args):
    rep = analyze(spec, _tolerances(args))
    full = rep.to_dict()
    doc = _header("decide", rep.tolerances)
    for key in ("setting", "verdicts", "decision", "triangularization", "notes"):
        doc[key] = full[key]
    return doc, rep.exit_code()


def cmd_triangularize(spec, args):
    tols = _tolerances(args)
    mats = spec.coefficient_matrices()
    if not mats:
        raise _Unsupported("system has no coefficient matrices")
    if args.k is None:
        flag = simultaneous_triangularize(mats, tols.tol_eig, tols.tol_rank)
        depth = None
    else:
        flag = block_form(mats, args.k, tols.tol_eig, tols.tol_rank)
        depth = args.k
    doc = _header("triangularize", tols)
    doc["k"] = args.k
    doc["matrices"] = len(mats)
    doc["result"] = flag_dict(flag, mats, depth)
    return doc, EXIT_DECIDED


def cmd_monodromy(spec, args):
    tols = _tolerances(args)
    if not spec.finite_points:
        raise _Unsupported("no finite singular point to encircle")
    res = monodromy(spec, rtol=tols.rtol_ode)
    plan = res.plan
    doc = _header("monodromy", tols)
    doc["base_point"] = scalar(plan.base)
    doc["delta_min"] = scalar(plan.delta_min)
    doc["loops"] = [
        {"point": point_label(spec, i), "radius": scalar(plan.radii[i]), "M": matrix(res.matrices[i]),
         "liouville_error": scalar(res.loop_errors[i])}
        for i in res.order
    ]
    doc["product_order"] = "M_last ... M_first"
    doc["product_residual"] = scalar(res.product_residual)
    try:
        doc["exponent_consistency"] = verdict_dict(check_exponent_consistency(spec, res))
    except NotFuchsianError:
        doc["exponent_consistency"] = None
    return doc, EXIT_DECIDED


def cmd_formal(spec, args):
    tols = _tolerances(args)
    if args.point is not None:
        refs = [resolve_point(spec, args.point)]
    else:
        refs = [r for r in singular_points(spec) if classify(spec, r, tols.tol_eig).rank > 0]
    if not refs:
        raise _Unsupported("no irregular singular point")
    doc = _header("formal", tols)
    out = []
    for ref in refs:
        K = max(tols.truncation_order, classify(spec, ref, tols.tol_eig).rank)
        fd = formal_data(spec, ref, K, tols.tol_eig)
        out.append({
            "point": point_label(spec, ref),
            "rank": fd.rank,
            "leading_eigenvalues": [scalar(v) for v in fd.b],
            "T": matrix(fd.T),
            "Lambda": [scalar(v) for v in fd.Lambda],
            "Q": [{str(-(m + 1)): scalar(fd.Q[j, m]) for m in range(fd.rank)} for j in range(len(fd.b))],
            "Fhat": [matrix(F) for F in fd.Fhat],
            "residual": scalar(formal_residual(spec, ref, fd)),
        })
    doc["points"] = out
    return doc, EXIT_DECIDED


def cmd_solve(spec, args):
    tols = _tolerances(args)
    doc = _header("solve", tols)
    target, C = spec, None
    try:
        Y = solve_triangular(spec)
    except NotTriangularError:
        mats = spec.coefficient_matrices()
        flag = simultaneous_triangularize(mats, tols.tol_eig, tols.tol_rank) if mats else None
        if flag is None or not flag.success:
            raise _Unsupported("coefficient matrices admit no common flag; nothing to solve")
        C = flag.C
        target = spec.conjugate(C, flag.C_inv)
        target = _clean_lower(target)
        Y = solve_triangular(target)
    z0 = default_base(target)
    doc["base_point"] = scalar(z0)
    doc["conjugation"] = None if C is None else matrix(C)
    doc["note"] = ("Y solves the original system" if C is None
                   else "Y solves C B C^-1; the original system is solved by C^-1 Y")
    doc["solution"] = to_json(Y)
    sol = verify_solution(target, Y, rtol=1e-8, z0=z0, ode_rtol=tols.rtol_ode)
    liou = check_liouville(target, Y, z0=z0)
    doc["verification"] = [verdict_dict(sol), verdict_dict(liou)]
    if not (sol.holds and liou.holds):
        raise NumericalFailure("constructed solution failed verification")
    return doc, EXIT_DECIDED


def _clean_lower(spec):
    """Zero the rounding noise below the diagonal after a float conjugation."""
    def tri(m):
        return np.triu(np.asarray(m, dtype=complex))

    pts = tuple(SingularPoint(pt.location, {k: tri(m) for k, m in pt.tail.items()}, pt.asserted_exponents)
                for pt in spec.points if not pt.at_infinity)
    return SystemSpec(spec.dimension, pts, {k: tri(m) for k, m in spec.polynomial.items()})


COMMANDS = {
    "analyze": cmd_analyze,
    "decide": cmd_decide,
    "triangularize": cmd_triangularize,
    "monodromy": cmd_monodromy,
    "formal": cmd_formal,
    "solve": cmd_solve,
}


def run(argv=None):
    """Run a verb; returns ``(report dict or None, exit code, error message)``."""
    args = build_parser().parse_args(argv)
    try:
        spec = _load(args.system)
    except (OSError, json.JSONDecodeError, SpecError, ValueError, TypeError, KeyError) as exc:
        return None, EXIT_PARSE, f"parse error: {exc}", args
    try:
        doc, code = COMMANDS[args.verb](spec, args)
    except (_Unsupported, UnsupportedConfiguration, ResonantPointError, NotFuchsianError,
            IrregularAtInfinity, UnknownPointError, NotTriangularError) as exc:
        return None, EXIT_UNSUPPORTED, f"unsupported configuration: {exc}", args
    except (NumericalFailure, IntegrationError, QuadratureError, PoleProximityError,
            np.linalg.LinAlgError) as exc:
        return None, EXIT_NUMERICAL, f"numerical failure: {exc}", args
    return doc, code, None, args


def main(argv=None) -> int:
    doc, code, err, args = run(argv)
    if err is not None:
        print(err, file=sys.stderr)
        return code
    text = dumps(doc) if args.format == "json" else render_text(doc) + "\n"
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
