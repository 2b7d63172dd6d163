"""Analysis pipeline and machine-readable reports.

Decision rules
--------------
A triangular system is always solvable by quadratures, so a successful joint
triangularization of the coefficient matrices yields SOLVABLE.  A failed one
yields NOT_SOLVABLE only when a necessity result applies:

* all points Fuchsian: the small-exponent and pair conditions with
  ``k = p - 1``, or a single residue eigenvalue at every point;
* regular points with asserted exponents: the conditions for the largest
  admissible ``k``, together with a failed k-block form;
* all points irregular non-resonant: the formal-exponent conditions.

Anything else is INCONCLUSIVE; mixtures outside these settings get no
decision at all.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import __version__
from .exponents import (
    ConditionVerdict,
    Exponent,
    check_ineq_small,
    check_pair_conditions,
    corollary1_from_exponents,
    fuchs_relation_from_exponents,
    fuchsian_exponents,
    point_exponents,
    remark2_bound,
    single_eigenvalue,
)
from .formal import ResonantPointError, UnsupportedConfiguration, check_theorem2
from .numkernel import QQi, format_scalar
from .system import INFINITY, SystemSpec, classify, singular_points
from .triangularize import (
    FlagResult,
    below_diagonal_residual,
    block_form,
    simultaneous_triangularize,
)

SCHEMA_VERSION = "1"
VERIFY_TOL = 1e-9

EXIT_DECIDED = 0
EXIT_INCONCLUSIVE = 1
EXIT_PARSE = 2
EXIT_UNSUPPORTED = 3
EXIT_NUMERICAL = 4


class NumericalFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class Tolerances:
    tol_eig: float = 1e-9
    tol_rank: float = 1e-10
    rtol_ode: float = 1e-11
    rat_denominator_bound: int = 10**6
    truncation_order: int = 8

    def as_dict(self) -> dict:
        return {
            "tol_eig": scalar(self.tol_eig),
            "tol_rank": scalar(self.tol_rank),
            "rtol_ode": scalar(self.rtol_ode),
            "rat_denominator_bound": self.rat_denominator_bound,
            "truncation_order": self.truncation_order,
        }


# ------------------------------------------------------------ formatting

def scalar(v) -> str:
    if isinstance(v, Fraction):
        return str(v)
    if isinstance(v, QQi):
        return format_scalar(v)
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return format_scalar(complex(v))


def matrix(M) -> list:
    M = np.asarray(M)
    return [[scalar(M[i, j]) for j in range(M.shape[1])] for i in range(M.shape[0])]


def point_label(spec: SystemSpec, ref) -> str:
    if ref == INFINITY:
        return INFINITY
    return scalar(spec.points[ref].location)


def _plain(x):
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, (str, bool)) or x is None:
        return x
    if isinstance(x, (int, np.integer)):
        return int(x)
    return scalar(x)


def verdict_dict(v: ConditionVerdict) -> dict:
    thr = v.threshold
    if isinstance(thr, tuple):
        thr = [scalar(t) for t in thr]
    elif thr is not None:
        thr = scalar(thr)
    holds = {True: "holds", False: "fails", None: "ambiguous"}[v.holds]
    return {
        "condition": v.condition,
        "holds": holds,
        "threshold": thr,
        "witnesses": [_plain(w) for w in v.witnesses],
        "detail": v.detail,
    }


def flag_dict(flag: FlagResult | None, mats=None, depth=None) -> dict | None:
    if flag is None:
        return None
    out = {"success": flag.success, "flag_dims": list(flag.flag_dims)}
    if flag.success:
        out["C"] = matrix(flag.C)
        if mats is not None:
            out["below_diagonal_residual"] = scalar(below_diagonal_residual(mats, flag.C, depth))
    else:
        out["failure_stage"] = flag.failure_stage
        out["certificate"] = [matrix(b) for b in flag.certificate]
    return out


# ------------------------------------------------------------ report

@dataclass
class Report:
    dimension: int
    exact: bool
    tolerances: Tolerances
    points: list = field(default_factory=list)
    verdicts: list = field(default_factory=list)
    setting: str | None = None
    decision: str | None = None
    flag: dict | None = None
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "tool": "quadsolv",
            "tool_version": __version__,
            "tolerances": self.tolerances.as_dict(),
            "dimension": self.dimension,
            "exact": self.exact,
            "points": self.points,
            "setting": self.setting,
            "verdicts": [verdict_dict(v) for v in self.verdicts],
            "decision": self.decision,
            "triangularization": self.flag,
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return dumps(self.to_dict())

    def exit_code(self) -> int:
        if self.decision is None:
            return EXIT_UNSUPPORTED
        return EXIT_INCONCLUSIVE if self.decision == "INCONCLUSIVE" else EXIT_DECIDED


def dumps(doc) -> str:
    return json.dumps(doc, indent=2, ensure_ascii=True) + "\n"


def render_text(doc, indent: int = 0) -> str:
    """Plain-text rendering of a report object."""
    pad = "  " * indent
    lines = []
    if isinstance(doc, dict):
        for k, v in doc.items():
            if isinstance(v, (dict, list)) and v:
                lines.append(f"{pad}{k}:")
                lines.append(render_text(v, indent + 1))
            else:
                lines.append(f"{pad}{k}: {v}")
    elif isinstance(doc, list):
        for v in doc:
            if isinstance(v, (dict, list)):
                lines.append(f"{pad}-")
                lines.append(render_text(v, indent + 1))
            else:
                lines.append(f"{pad}- {v}")
    else:
        lines.append(f"{pad}{doc}")
    return "\n".join(lines)


def _exponent_doc(e: Exponent) -> dict:
    return {"beta": scalar(e.beta), "phi": e.phi, "rho": scalar(e.rho)}


def _verified(flag: FlagResult, mats, depth=None) -> FlagResult:
    if flag.success and below_diagonal_residual(mats, flag.C, depth) > VERIFY_TOL:
        raise NumericalFailure("triangularizing matrix failed verification")
    return flag


def analyze(spec: SystemSpec, tols: Tolerances = Tolerances()) -> Report:
    rep = Report(spec.dimension, spec.exact, tols)
    refs = singular_points(spec)
    p = spec.dimension
    kinds = {}
    for ref in refs:
        c = classify(spec, ref, tols.tol_eig)
        kinds[ref] = c
        rep.points.append({"point": point_label(spec, ref), "rank": c.rank, "kind": c.kind})
    if not refs:
        rep.setting = "no_singular_points"
        rep.decision = "SOLVABLE"
        rep.notes.append("B has no poles on the sphere; it is identically zero")
        return rep
    mats = spec.coefficient_matrices()
    asserted = {ref: _has_asserted(spec, ref) for ref in refs}
    if all(c.kind == "fuchsian" for c in kinds.values()):
        return _fuchsian(spec, rep, refs, mats, tols)
    if all(c.rank > 0 and c.kind == "irregular_nonresonant" and not asserted[r]
           for r, c in kinds.items()):
        return _irregular(spec, rep, refs, mats, tols)
    if all(c.kind == "fuchsian" or asserted[r] for r, c in kinds.items()):
        return _regular(spec, rep, refs, mats, tols)
    rep.setting = "unsupported"
    rep.notes.append("point kinds mix outside the supported settings; no decision attempted")
    return rep


def _has_asserted(spec, ref) -> bool:
    if ref == INFINITY:
        return any(pt.at_infinity and pt.asserted_exponents is not None for pt in spec.points)
    return spec.points[ref].asserted_exponents is not None


def _fuchsian(spec, rep, refs, mats, tols):
    rep.setting = "fuchsian"
    p = spec.dimension
    exps = [fuchsian_exponents(spec, r, tols.tol_eig) for r in refs]
    for doc, e in zip(rep.points, exps):
        doc["exponents"] = [_exponent_doc(x) for x in e]
    rep.verdicts.append(fuchs_relation_from_exponents(exps))
    flag = _verified(simultaneous_triangularize(mats, tols.tol_eig, tols.tol_rank), mats)
    rep.flag = flag_dict(flag, mats)
    if p == 1:
        rep.decision = "SOLVABLE"
        return rep
    cor = corollary1_from_exponents(exps, p, tols.tol_eig, tols.rat_denominator_bound)
    rep.verdicts.append(cor)
    single = all(single_eigenvalue(e) for e in exps)
    rep.verdicts.append(ConditionVerdict(
        "single_eigenvalue", single, None,
        [] if single else [i for i, e in enumerate(exps) if not single_eigenvalue(e)],
        "one residue eigenvalue per point"))
    if flag.success:
        rep.decision = "SOLVABLE"
    elif cor.holds is True or single:
        rep.decision = "NOT_SOLVABLE"
    else:
        rep.decision = "INCONCLUSIVE"
    return rep


def _irregular(spec, rep, refs, mats, tols):
    rep.setting = "irregular_nonresonant"
    try:
        decision, verdicts, flag, formal = check_theorem2(
            spec, tols.tol_eig, tols.truncation_order, tols.rat_denominator_bound, tols.tol_rank)
    except (ResonantPointError, UnsupportedConfiguration) as exc:
        rep.setting = "unsupported"
        rep.notes.append(str(exc))
        return rep
    for doc, ref in zip(rep.points, refs):
        fd = formal[ref]
        doc["formal_exponents"] = [scalar(v) for v in fd.Lambda]
        doc["leading_eigenvalues"] = [scalar(v) for v in fd.b]
    rep.verdicts.extend(verdicts)
    if flag is None:
        # hypotheses failed; triangularity still proves solvability
        flag = simultaneous_triangularize(mats, tols.tol_eig, tols.tol_rank)
        if flag.success:
            decision = "SOLVABLE"
    _verified(flag, mats)
    rep.flag = flag_dict(flag, mats)
    rep.decision = decision
    return rep


def _regular(spec, rep, refs, mats, tols):
    rep.setting = "regular_asserted"
    p = spec.dimension
    n = len(refs)
    exps = [point_exponents(spec, r, tols.tol_eig) for r in refs]
    for doc, e in zip(rep.points, exps):
        doc["exponents"] = [_exponent_doc(x) for x in e]
    ranks = [max(0, c["rank"]) for c in rep.points]
    flag = _verified(simultaneous_triangularize(mats, tols.tol_eig, tols.tol_rank), mats)
    rep.flag = flag_dict(flag, mats)
    if flag.success:
        rep.decision = "SOLVABLE"
        return rep
    pair_fail = []
    for i, e in enumerate(exps):
        pair_fail += check_pair_conditions(e, tols.tol_eig, tols.rat_denominator_bound,
                                           point_index=i).witnesses
    pair = ConditionVerdict("ineq2", not pair_fail, None, pair_fail,
                            "pair rule at every point")
    rep.verdicts.append(pair)
    best = None
    for k in range(p - 1, 0, -1):
        v = check_ineq_small(exps, n, k, tols.tol_eig, condition="ineq1")
        if v.holds is True:
            best = (k, v)
            break
    if best is None:
        rep.verdicts.append(check_ineq_small(exps, n, 1, tols.tol_eig, condition="ineq1"))
        rep.decision = "INCONCLUSIVE"
        return rep
    k, v = best
    rep.verdicts.append(v)
    rep.verdicts.append(remark2_bound(ranks, p, k))
    if pair.holds is not True:
        rep.decision = "INCONCLUSIVE"
        return rep
    bf = block_form(mats, k, tols.tol_eig, tols.tol_rank)
    rep.notes.append(f"largest admissible k = {k}")
    if bf.success:
        rep.verdicts.append(ConditionVerdict(
            "triangularity", False, None, [("stage", flag.failure_stage)],
            f"{k}-block form exists but no full flag; necessity gives no contradiction"))
        rep.decision = "INCONCLUSIVE"
    else:
        rep.flag = flag_dict(bf)
        rep.decision = "NOT_SOLVABLE"
    return rep
