"""Exponents at Fuchsian points and the smallness / non-resonance conditions."""

from __future__ import annotations

import cmath
import itertools
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

from .numkernel import QQi, exact_spectrum, exact_trace, eigenvalue_clusters, is_exact, to_float
from .system import (
    INFINITY,
    SystemSpec,
    classify,
    poincare_rank,
    residue,
    resolve_point,
    singular_points,
)

CONGRUENCE_TOL = 1e-9
RATIONAL_TOL = 1e-9
DENOMINATOR_BOUND = 10**6


class NotFuchsianError(ValueError):
    pass


@dataclass(frozen=True)
class Exponent:
    beta: object  # QQi (exact) or complex
    phi: int
    rho: object

    @classmethod
    def split(cls, beta) -> "Exponent":
        """Split ``beta = phi + rho`` with integer ``phi`` and ``0 <= Re rho < 1``."""
        if isinstance(beta, QQi):
            phi = math.floor(beta.re)
            return cls(beta, phi, beta - phi)
        beta = complex(beta)
        phi = math.floor(beta.real)
        rho = beta - phi
        # a real part within rounding of an integer from below counts as that integer
        if abs(rho.real - 1) <= 1e-12:
            phi, rho = phi + 1, rho - 1
        return cls(beta, phi, rho)


@dataclass
class ConditionVerdict:
    """Outcome of one condition check.

    ``holds`` is True/False, or None when a float-mode comparison falls within
    tolerance of its threshold.
    """

    condition: str
    holds: bool | None
    threshold: object = None
    witnesses: list = field(default_factory=list)
    detail: str = ""

    def __post_init__(self):
        if self.holds is False and not self.witnesses:
            raise ValueError(f"failing verdict {self.condition!r} needs a witness")

    def __bool__(self):
        return self.holds is True


def _re(x):
    return x.re if isinstance(x, QQi) else complex(x).real


def _im(x):
    return x.im if isinstance(x, QQi) else complex(x).imag


# ----------------------------------------------------------------- exponents

def fuchsian_exponents(spec: SystemSpec, point, tol: float = 1e-9) -> list[Exponent]:
    """Residue eigenvalues at a Fuchsian point, each split per Levelt."""
    ref = resolve_point(spec, point)
    if classify(spec, ref, tol).kind != "fuchsian":
        raise NotFuchsianError(f"point {point!r} is not Fuchsian")
    R = residue(spec, ref)
    if is_exact(R):
        pairs = exact_spectrum(R)
    else:
        pairs = eigenvalue_clusters(R, tol)
    out = []
    for value, mult in pairs:
        out.extend([Exponent.split(value)] * mult)
    return out


def point_exponents(spec: SystemSpec, point, tol: float = 1e-9) -> list[Exponent]:
    """Computed exponents at Fuchsian points, asserted exponents elsewhere."""
    ref = resolve_point(spec, point)
    asserted = _asserted(spec, ref)
    if asserted is not None:
        return [Exponent.split(b) for b in asserted]
    return fuchsian_exponents(spec, ref, tol)


def _asserted(spec, ref):
    if ref == INFINITY:
        return next((pt.asserted_exponents for pt in spec.points if pt.at_infinity), None)
    return spec.points[ref].asserted_exponents


def monodromy_eigenvalue(e) -> complex:
    beta = e.beta if isinstance(e, Exponent) else e
    return cmath.exp(2j * math.pi * complex(beta))


# ---------------------------------------------------------------- helpers

def _is_integer(x, tol=CONGRUENCE_TOL) -> bool:
    if isinstance(x, Fraction):
        return x.denominator == 1
    return abs(x - round(x)) <= tol


def is_rational(x, tol=RATIONAL_TOL, max_den=DENOMINATOR_BOUND) -> bool:
    """Exact for Fractions; for floats, a convergent with bounded denominator within ``tol``."""
    if isinstance(x, Fraction):
        return True
    return abs(float(Fraction(x).limit_denominator(max_den)) - x) <= tol


def congruent_mod_Z(b1, b2, tol=CONGRUENCE_TOL) -> bool:
    if isinstance(b1, QQi) and isinstance(b2, QQi):
        d = b1 - b2
        return d.im == 0 and d.re.denominator == 1
    d = complex(b1) - complex(b2)
    return abs(d.imag) <= tol and _is_integer(d.real, tol)


def _pair_ok(b1, b2, tol, max_den) -> bool:
    re_diff = _re(b1) - _re(b2)
    if isinstance(b1, QQi) and isinstance(b2, QQi):
        return b1.im != b2.im  # real difference is rational in exact mode
    re_irrational = not is_rational(float(re_diff), RATIONAL_TOL, max_den)
    im_differ = abs(float(_im(b1)) - float(_im(b2))) > tol
    return re_irrational or im_differ


def _betas(exps):
    return [e.beta if isinstance(e, Exponent) else e for e in exps]


# ----------------------------------------------------------------- checks

def check_ineq_small(exponents_per_point: Sequence, n: int, k: int, tol: float = 1e-9,
                     condition: str = "ineq1") -> ConditionVerdict:
    """``Re beta > -1/(n k)`` at every point (strict)."""
    if n < 1 or k < 1:
        raise ValueError("n and k must be positive")
    if any(exps is None for exps in exponents_per_point):
        raise ValueError("missing exponents for a singular point")
    threshold = Fraction(-1, n * k)
    fails, ambiguous = [], []
    for i, exps in enumerate(exponents_per_point):
        for j, b in enumerate(_betas(exps)):
            if isinstance(b, QQi):
                if not b.re > threshold:
                    fails.append((i, j))
            else:
                margin = complex(b).real - float(threshold)
                if margin < -tol:
                    fails.append((i, j))
                elif margin <= tol:
                    ambiguous.append((i, j))
    holds = False if fails else (None if ambiguous else True)
    return ConditionVerdict(condition, holds, threshold, fails or ambiguous,
                            f"Re(beta) > {threshold}")


def check_pair_conditions(exponents, tol: float = 1e-9, max_den: int = DENOMINATOR_BOUND,
                          exempt_congruent: bool = True, point_index: int = 0) -> ConditionVerdict:
    """Each non-congruent pair needs an irrational real difference or distinct imaginary parts.

    With ``exempt_congruent=False`` every pair is tested (the irregular criterion).
    """
    betas = _betas(exponents)
    fails = []
    for j, l in itertools.combinations(range(len(betas)), 2):
        b1, b2 = betas[j], betas[l]
        if exempt_congruent and congruent_mod_Z(b1, b2):
            continue
        if not _pair_ok(b1, b2, tol, max_den):
            fails.append((point_index, (j, l)))
    return ConditionVerdict("ineq2", not fails, None, fails,
                            "Re difference irrational or Im parts differ")


def check_corollary1(spec: SystemSpec, tol: float = 1e-9,
                     max_den: int = DENOMINATOR_BOUND) -> ConditionVerdict:
    refs = singular_points(spec)
    kinds = [classify(spec, r, tol).kind for r in refs]
    if any(kd != "fuchsian" for kd in kinds):
        raise NotFuchsianError("exponent-based check needs a Fuchsian system")
    p = spec.dimension
    if p < 2:
        raise ValueError("dimension must be at least 2")
    exps = [fuchsian_exponents(spec, r, tol) for r in refs]
    return corollary1_from_exponents(exps, p, tol, max_den)


def corollary1_from_exponents(exps, p: int, tol: float = 1e-9,
                              max_den: int = DENOMINATOR_BOUND) -> ConditionVerdict:
    n = len(exps)
    small = check_ineq_small(exps, n, p - 1, tol, condition="ineq3")
    pair_fail = []
    for i, e in enumerate(exps):
        pair_fail.extend(check_pair_conditions(e, tol, max_den, point_index=i).witnesses)
    if small.holds is False or pair_fail:
        holds = False
    else:
        holds = small.holds
    witnesses = list(small.witnesses) + [("pair",) + w for w in pair_fail]
    return ConditionVerdict("ineq3", holds, small.threshold, witnesses,
                            f"n={n}, p={p}: Re(beta) > {small.threshold} and pair rule")


def is_n_resonant(eigs, N: int, tol: float = 1e-9):
    """Whether two distinct values have equal N-th powers; returns (flag, witness pair)."""
    if N < 2:
        raise ValueError("N must be at least 2")
    vals = [complex(v) for v in eigs]
    for a, b in itertools.combinations(vals, 2):
        scale = max(abs(a), abs(b), 1e-300)
        if abs(a - b) <= tol * scale:
            continue
        if abs(abs(a) - abs(b)) > tol * scale or abs(a) == 0:
            continue
        d = (cmath.phase(a) - cmath.phase(b)) % (2 * math.pi)
        j = round(d * N / (2 * math.pi))
        if j % N and abs(d - 2 * math.pi * j / N) <= tol:
            return True, (a, b)
    return False, None


def nonresonant_all_N(exponents, tol: float = 1e-9, max_den: int = DENOMINATOR_BOUND) -> bool:
    ok = check_pair_conditions(exponents, tol, max_den).holds
    if ok:
        mus = sorted({_round_key(monodromy_eigenvalue(b)) for b in _betas(exponents)},
                     key=lambda z: (z.real, z.imag))
        for N in range(2, 25):
            if is_n_resonant(mus, N, tol)[0]:
                warnings.warn(f"pair rule holds but monodromy eigenvalues look {N}-resonant")
                break
    return bool(ok)


def _round_key(z, digits=12):
    return complex(round(z.real, digits), round(z.imag, digits))


def fuchs_relation(spec: SystemSpec, include_infinity: bool = True,
                   tol: float = 1e-10) -> ConditionVerdict:
    """Sum of all exponents (residue traces, infinity included) vanishes."""
    refs = [r for r in singular_points(spec) if include_infinity or r != INFINITY]
    for r in refs:
        if poincare_rank(spec, r) != 0:
            raise NotFuchsianError("Fuchs relation check needs Fuchsian points")
    total = QQi(0) if spec.exact else 0j
    witnesses = []
    for r in refs:
        R = residue(spec, r)
        tr = exact_trace(R) if is_exact(R) else complex(to_float(R).trace())
        total = total + tr
        witnesses.append((r, tr))
    if isinstance(total, QQi):
        holds = not total
    else:
        holds = abs(total) <= tol
    return ConditionVerdict("fuchs_relation", holds, total, [] if holds else witnesses,
                            f"sum of exponents = {total}")


def fuchs_relation_from_exponents(exps_per_point, tol: float = 1e-10) -> ConditionVerdict:
    betas = [b for exps in exps_per_point for b in _betas(exps)]
    if all(isinstance(b, QQi) for b in betas):
        total = sum(betas, QQi(0))
        holds = not total
    else:
        total = sum(complex(b) for b in betas)
        holds = abs(total) <= tol
    return ConditionVerdict("fuchs_relation", holds, total, [] if holds else [("sum", total)])


def fuchs_inequalities(exponent_sum, ranks: Sequence[int], p: int) -> ConditionVerdict:
    """``-p(p-1)/2 * sum r <= sum beta <= -sum r``; the sum must be an integer."""
    s = exponent_sum
    if isinstance(s, QQi):
        if s.im != 0 or s.re.denominator != 1:
            raise ValueError(f"sum of exponents {s} is not an integer")
        s = int(s.re)
    elif isinstance(s, (int, Fraction)):
        if Fraction(s).denominator != 1:
            raise ValueError(f"sum of exponents {s} is not an integer")
        s = int(s)
    else:
        z = complex(s)
        if abs(z.imag) > 1e-10 or not _is_integer(z.real, 1e-10):
            raise ValueError(f"sum of exponents {z} is not an integer")
        s = round(z.real)
    R = sum(ranks)
    lower = Fraction(-p * (p - 1), 2) * R
    upper = -R
    holds = lower <= s <= upper
    return ConditionVerdict("fuchs_ineq", holds, (lower, upper),
                            [] if holds else [("sum", s)], f"{lower} <= {s} <= {upper}")


def remark2_bound(ranks: Sequence[int], p: int, k: int) -> ConditionVerdict:
    """Sum of Poincare ranks below ``p/k``."""
    total = sum(ranks)
    bound = Fraction(p, k)
    holds = total < bound
    return ConditionVerdict("remark2", holds, bound, [] if holds else [("sum_ranks", total)],
                            f"{total} < {bound}")


def single_eigenvalue(exponents) -> bool:
    betas = _betas(exponents)
    return all(_same(b, betas[0]) for b in betas)


def _same(a, b):
    if isinstance(a, QQi) and isinstance(b, QQi):
        return a == b
    return abs(complex(a) - complex(b)) <= 1e-9 * max(1.0, abs(complex(a)))


# --------------------------------------------------- exponent-sum obstruction

def normalized_rho(mu, tol: float = 1e-12):
    """``rho`` with ``0 <= Re rho < 1`` and ``exp(2 pi i rho) = mu``; exact for mu = +-1."""
    if isinstance(mu, QQi) and mu.im == 0 and mu.re in (1, -1):
        return QQi(0) if mu.re == 1 else QQi(Fraction(1, 2))
    rho = cmath.log(complex(mu)) / (2j * math.pi)
    rho = complex(rho.real % 1.0, rho.imag)
    if abs(rho.real - 1) <= tol:
        rho -= 1
    return rho


def phi_range(rho, n: int, p: int) -> range:
    """Integers phi allowed by ``-1/(n(p-1)) < Re(phi+rho) < (np-1)/(n(p-1))``."""
    lo = Fraction(-1, n * (p - 1))
    hi = Fraction(n * p - 1, n * (p - 1))
    r = rho.re if isinstance(rho, QQi) else Fraction(complex(rho).real)
    first = math.floor(lo - r) + 1
    last = math.ceil(hi - r) - 1
    return range(first, last + 1)


def exponent_sum_obstruction(rhos_per_point: Sequence[Sequence], n: int | None = None,
                             p: int | None = None) -> ConditionVerdict:
    """Can exponents with these monodromy parts satisfy the small-exponent bound and sum to 0?

    Every exponent is ``phi + rho`` with ``phi`` ranging over the integers allowed
    by the lower bound and the induced upper bound.  All combinations are
    enumerated through the set of reachable partial sums (exhaustive, since
    the verdict depends on the total only).  ``holds`` is False when no
    combination reaches a total of zero.
    """
    n = n if n is not None else len(rhos_per_point)
    p = p if p is not None else len(rhos_per_point[0])
    rho_all = [r for rhos in rhos_per_point for r in rhos]
    if not all(isinstance(r, QQi) for r in rho_all):
        raise ValueError("exact rho values are required for the enumeration")
    reachable = {QQi(0): 1}
    for r in rho_all:
        nxt: dict = {}
        for s, cnt in reachable.items():
            for phi in phi_range(r, n, p):
                key = s + r + phi
                nxt[key] = nxt.get(key, 0) + cnt
        reachable = nxt
    combos = sum(reachable.values())
    zero = reachable.get(QQi(0), 0)
    holds = zero > 0
    smallest = min(reachable, key=lambda q: (q.re, q.im)) if reachable else None
    witnesses = [] if holds else [("min_total", smallest), ("combinations", combos)]
    return ConditionVerdict(
        "fuchs_relation", holds, Fraction(-1, n * (p - 1)), witnesses,
        f"{combos} phi assignments, {zero} with total 0; smallest total {smallest}")
