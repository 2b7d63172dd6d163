"""Rational coefficient matrices ``B(z)`` stored as partial fractions.

``B(z) = sum_i sum_m T_{i,m} / (z - a_i)**m + sum_k P_k z**k``.  The point at
infinity is handled through the chart ``w = 1/z`` in which the system reads
``dy/dw = -B(1/w) / w**2 y``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from math import comb
from typing import Iterable, Sequence, Union

import numpy as np

from .numkernel import (
    QQi,
    check_square,
    eigenvalue_clusters,
    exact_matrix,
    exact_zeros,
    format_scalar,
    is_exact,
    is_zero,
    norm2,
    parse_scalar,
    to_float,
)

INFINITY = "infinity"
INFINITY_TAG = "infinity-check-only"

PointRef = Union[int, str]


class SpecError(ValueError):
    """Base class for malformed system documents."""


class SchemaError(SpecError):
    pass


class DuplicatePointError(SpecError):
    pass


class ZeroLeadingError(SpecError):
    pass


class DimensionError(SpecError):
    pass


class UnknownPointError(KeyError):
    pass


class IrregularAtInfinity(ValueError):
    """Raised when a residue at infinity is requested but infinity is irregular."""

    def __init__(self, rank: int):
        super().__init__(f"infinity has Poincare rank {rank} >= 1; no residue")
        self.rank = rank


class PoleProximityError(ValueError):
    pass


@dataclass(frozen=True)
class SingularPoint:
    location: object  # QQi, complex, or INFINITY
    tail: dict  # order (negative int) -> matrix
    asserted_exponents: tuple | None = None

    @property
    def rank(self) -> int:
        return -min(self.tail) - 1

    @property
    def leading(self) -> np.ndarray:
        return self.tail[min(self.tail)]

    @property
    def at_infinity(self) -> bool:
        return self.location == INFINITY


@dataclass(frozen=True)
class Classification:
    rank: int
    kind: str  # "fuchsian" | "irregular_nonresonant" | "irregular_resonant"


@dataclass(frozen=True)
class SystemSpec:
    """Partial-fraction data of ``B(z)``.

    ``points`` holds the finite poles; an optional entry located at infinity
    only carries a declared chart tail for consistency checking and/or
    asserted exponents.
    """

    dimension: int
    points: tuple
    polynomial: dict = field(default_factory=dict)

    def __post_init__(self):
        p = self.dimension
        if not isinstance(p, int) or p < 1:
            raise DimensionError(f"dimension must be a positive integer, got {p!r}")
        seen = []
        for pt in self.points:
            if not pt.tail:
                raise SchemaError("every singular point needs a nonempty tail")
            orders = sorted(pt.tail)
            if orders[-1] >= 0:
                raise SchemaError(f"tail orders must be negative, got {orders}")
            if orders != list(range(orders[0], orders[0] + len(orders))):
                raise SchemaError(f"tail orders must be contiguous, got {orders}")
            for m in pt.tail.values():
                _check_dim(m, p)
            if is_zero(pt.leading):
                raise ZeroLeadingError(f"leading tail coefficient at {pt.location} is zero")
            key = pt.location if pt.at_infinity else complex(pt.location)
            if key in seen:
                raise DuplicatePointError(f"duplicate singular point {pt.location}")
            seen.append(key)
        for k, m in self.polynomial.items():
            if not isinstance(k, int) or k < 0:
                raise SchemaError(f"polynomial orders must be nonnegative integers, got {k!r}")
            _check_dim(m, p)

    @property
    def finite_points(self) -> list:
        return [pt for pt in self.points if not pt.at_infinity]

    @property
    def exact(self) -> bool:
        mats = [m for pt in self.points for m in pt.tail.values()] + list(self.polynomial.values())
        return all(is_exact(m) for m in mats) and all(
            isinstance(pt.location, QQi) for pt in self.finite_points
        )

    def coefficient_matrices(self) -> list:
        """Every Laurent-tail and polynomial coefficient of the finite part, in a fixed order."""
        out = []
        for pt in self.finite_points:
            out.extend(pt.tail[k] for k in sorted(pt.tail))
        out.extend(self.polynomial[k] for k in sorted(self.polynomial))
        return out

    def conjugate(self, C: np.ndarray, C_inv: np.ndarray | None = None) -> "SystemSpec":
        """The system with coefficients ``C B(z) C^{-1}``."""
        if C_inv is None:
            C_inv = np.linalg.inv(to_float(C)) if not is_exact(C) else None
            if C_inv is None:
                raise ValueError("exact conjugation needs an explicit inverse")
        exact = is_exact(C) and is_exact(C_inv) and self.exact
        if not exact:
            C, C_inv = to_float(C), to_float(C_inv)

        def conj(m):
            return C.dot(m if exact else to_float(m)).dot(C_inv)

        pts = tuple(
            SingularPoint(pt.location, {k: conj(m) for k, m in pt.tail.items()}, pt.asserted_exponents)
            for pt in self.points
        )
        poly = {k: conj(m) for k, m in self.polynomial.items()}
        return SystemSpec(self.dimension, pts, poly)


def _check_dim(m, p):
    if not isinstance(m, np.ndarray) or m.shape != (p, p):
        raise DimensionError(f"expected a {p}x{p} matrix, got shape {getattr(m, 'shape', None)}")


# ------------------------------------------------------------ point access

def resolve_point(spec: SystemSpec, point: PointRef) -> PointRef:
    """Normalise a point reference to an index into ``spec.points`` or INFINITY."""
    if isinstance(point, str):
        if point in (INFINITY, INFINITY_TAG, "inf", "oo"):
            return INFINITY
        raise UnknownPointError(point)
    if isinstance(point, int) and 0 <= point < len(spec.points):
        if spec.points[point].at_infinity:
            return INFINITY
        return point
    for i, pt in enumerate(spec.points):
        if not pt.at_infinity and complex(pt.location) == complex(point):
            return i
    raise UnknownPointError(point)


def _zero(spec):
    return exact_zeros((spec.dimension, spec.dimension)) if spec.exact else np.zeros(
        (spec.dimension, spec.dimension), complex)


def _cast(spec, m):
    return m if spec.exact else to_float(m)


def _loc(spec, pt):
    return pt.location if spec.exact else complex(pt.location)


def laurent_coefficients(spec: SystemSpec, point: PointRef, count: int) -> tuple[int, list]:
    """Leading pole order and the first ``count`` Laurent coefficients at a point.

    Returns ``(order, [A_0, A_1, ...])`` with ``B = x**order * sum_k A_k x**k``
    where ``x = z - a`` (or ``x = w = 1/z`` with the chart system at infinity).
    ``order`` is ``-(r+1)`` at a singular point; at infinity it may be
    nonnegative when infinity is not singular.
    """
    ref = resolve_point(spec, point)
    if ref == INFINITY:
        return _laurent_at_infinity(spec, count)
    pt = spec.points[ref]
    a = _loc(spec, pt)
    lead = min(pt.tail)
    coeffs = [_zero(spec) for _ in range(count)]
    for m_ord, mat in pt.tail.items():
        k = m_ord - lead
        if k < count:
            coeffs[k] = coeffs[k] + _cast(spec, mat)
    # holomorphic part at a, shifted by the pole order
    shift = -lead
    for other in spec.finite_points:
        if other is pt:
            continue
        c = _loc(spec, other)
        d = a - c
        for m_ord, mat in other.tail.items():
            m = -m_ord
            for n in range(count - shift):
                # (x + d)^(-m) = sum_n (-1)^n C(m+n-1, n) d^(-m-n) x^n
                coef = (-1) ** n * comb(m + n - 1, n) * d ** (-m - n)
                coeffs[n + shift] = coeffs[n + shift] + _cast(spec, mat) * coef
    for k, mat in spec.polynomial.items():
        for n in range(min(k, count - shift - 1) + 1):
            coef = comb(k, n) * (a ** (k - n) if k - n else 1)
            coeffs[n + shift] = coeffs[n + shift] + _cast(spec, mat) * coef
    return lead, coeffs


def _laurent_at_infinity(spec, count):
    # chart: Bt(w) = -B(1/w)/w^2.  (z-c)^(-m) -> w^m (1 - c w)^(-m); z^k -> w^(-k)
    deg = max(spec.polynomial) if spec.polynomial else None
    lead = -deg - 2 if deg is not None else -1
    coeffs = [_zero(spec) for _ in range(count)]
    for k, mat in spec.polynomial.items():
        idx = -k - 2 - lead
        if 0 <= idx < count:
            coeffs[idx] = coeffs[idx] - _cast(spec, mat)
    for pt in spec.finite_points:
        c = _loc(spec, pt)
        for m_ord, mat in pt.tail.items():
            m = -m_ord
            for n in range(count):
                idx = m - 2 + n - lead
                if idx >= count:
                    break
                if idx < 0:
                    continue
                coef = comb(m + n - 1, n) * (c ** n if n else 1)
                coeffs[idx] = coeffs[idx] - _cast(spec, mat) * coef
    # strip exactly vanishing leading coefficients (lead was an upper bound on the pole)
    while coeffs and is_zero(coeffs[0]) and lead < 0:
        coeffs = coeffs[1:] + [_laurent_tail_extra(spec, lead + count)]
        lead += 1
    return lead, coeffs


def _laurent_tail_extra(spec, power):
    # coefficient of w**power in the chart expansion (power >= -1 here)
    out = _zero(spec)
    for k, mat in spec.polynomial.items():
        if -k - 2 == power:
            out = out - _cast(spec, mat)
    for pt in spec.finite_points:
        c = _loc(spec, pt)
        for m_ord, mat in pt.tail.items():
            m = -m_ord
            n = power - m + 2
            if n >= 0:
                out = out - _cast(spec, mat) * (comb(m + n - 1, n) * (c ** n if n else 1))
    return out


def infinity_is_singular(spec: SystemSpec) -> bool:
    lead, _ = _laurent_at_infinity(spec, 1)
    return lead < 0


def singular_points(spec: SystemSpec) -> list:
    """References of all singular points: finite indices, then INFINITY if singular."""
    refs = [i for i, pt in enumerate(spec.points) if not pt.at_infinity]
    if infinity_is_singular(spec):
        refs.append(INFINITY)
    return refs


def poincare_rank(spec: SystemSpec, point: PointRef) -> int:
    ref = resolve_point(spec, point)
    if ref == INFINITY:
        lead, _ = _laurent_at_infinity(spec, 1)
        if lead >= 0:
            raise UnknownPointError("infinity is not a singular point of this system")
        return -lead - 1
    return spec.points[ref].rank


def leading_matrix(spec: SystemSpec, point: PointRef):
    _, coeffs = laurent_coefficients(spec, point, 1)
    return coeffs[0]


def classify(spec: SystemSpec, point: PointRef, tol: float = 1e-9) -> Classification:
    r = poincare_rank(spec, point)
    if r == 0:
        return Classification(0, "fuchsian")
    clusters = eigenvalue_clusters(leading_matrix(spec, point), tol)
    distinct = all(m == 1 for _, m in clusters)
    return Classification(r, "irregular_nonresonant" if distinct else "irregular_resonant")


def residue_at_infinity(spec: SystemSpec):
    """``-sum`` of the finite residues; raises IrregularAtInfinity with a polynomial part."""
    if spec.polynomial and not all(is_zero(m) for m in spec.polynomial.values()):
        raise IrregularAtInfinity(max(spec.polynomial) + 1)
    out = _zero(spec)
    for pt in spec.finite_points:
        if -1 in pt.tail:
            out = out - _cast(spec, pt.tail[-1])
    return out


def residue(spec: SystemSpec, point: PointRef):
    ref = resolve_point(spec, point)
    if ref == INFINITY:
        return residue_at_infinity(spec)
    pt = spec.points[ref]
    return _cast(spec, pt.tail[-1]) if -1 in pt.tail else _zero(spec)


def evaluate(spec: SystemSpec, z) -> np.ndarray:
    """Float evaluation of ``B(z)``."""
    z = complex(z)
    p = spec.dimension
    out = np.zeros((p, p), complex)
    for pt in spec.finite_points:
        d = z - complex(pt.location)
        if abs(d) <= 1e-12:
            raise PoleProximityError(f"z={z} is within 1e-12 of the pole {complex(pt.location)}")
        for m_ord, mat in pt.tail.items():
            out += to_float(mat) * d ** m_ord
    for k, mat in spec.polynomial.items():
        out += to_float(mat) * z ** k
    return out


class CompiledSystem:
    """Fast float evaluator of ``B(z)`` used on integration hot paths."""

    def __init__(self, spec: SystemSpec):
        self.dimension = spec.dimension
        self.poles = np.array([complex(pt.location) for pt in spec.finite_points], complex)
        self.terms = [
            [(m_ord, to_float(mat)) for m_ord, mat in sorted(pt.tail.items())]
            for pt in spec.finite_points
        ]
        self.poly = [(k, to_float(m)) for k, m in sorted(spec.polynomial.items())]

    def __call__(self, z: complex) -> np.ndarray:
        out = np.zeros((self.dimension, self.dimension), complex)
        for a, terms in zip(self.poles, self.terms):
            d = z - a
            for m_ord, mat in terms:
                out += mat * d ** m_ord
        for k, mat in self.poly:
            out += mat * z ** k
        return out


# --------------------------------------------------------------- documents

def _parse_entry(v):
    if isinstance(v, dict):
        # float complex entry {"re": x, "im": y}; exact entries use strings like "1/2-3i"
        if set(v) != {"re", "im"} or not all(
                isinstance(v[k], (int, float)) and not isinstance(v[k], bool) for k in v):
            raise SchemaError(f"complex entries must be {{'re': number, 'im': number}}, got {v!r}")
        return complex(v["re"], v["im"])
    if isinstance(v, str):
        try:
            return parse_scalar(v)
        except ValueError as exc:
            raise SchemaError(str(exc)) from None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError(f"matrix entries must be strings or numbers, got {v!r}")
    if isinstance(v, int):
        return QQi(v)
    return complex(v)


def _parse_matrix(rows, p):
    if not isinstance(rows, list) or not all(isinstance(r, list) for r in rows):
        raise SchemaError("matrix must be an array of rows")
    if len(rows) != p or any(len(r) != p for r in rows):
        raise DimensionError(f"expected a {p}x{p} matrix")
    vals = [[_parse_entry(v) for v in r] for r in rows]
    if all(isinstance(v, QQi) for r in vals for v in r):
        return exact_matrix(vals)
    return np.array([[complex(v) for v in r] for r in vals], complex)


def _parse_location(loc):
    if loc == INFINITY_TAG:
        return INFINITY
    if not isinstance(loc, dict) or set(loc) - {"re", "im"} or "re" not in loc:
        raise SchemaError(f"location must be {{'re','im'}} or {INFINITY_TAG!r}, got {loc!r}")
    re_ = _parse_entry(loc["re"])
    im_ = _parse_entry(loc.get("im", "0"))
    if isinstance(re_, QQi) and isinstance(im_, QQi):
        if re_.im or im_.im:
            raise SchemaError("location parts must be real")
        return QQi(re_.re, im_.re)
    return complex(re_) + 1j * complex(im_)


def spec_from_dict(doc: dict) -> SystemSpec:
    if not isinstance(doc, dict):
        raise SchemaError("top level must be an object")
    unknown = set(doc) - {"dimension", "points", "polynomial"}
    if unknown:
        raise SchemaError(f"unknown top-level fields {sorted(unknown)}")
    p = doc.get("dimension")
    if not isinstance(p, int) or isinstance(p, bool) or p < 1:
        raise SchemaError("'dimension' must be a positive integer")
    points_doc = doc.get("points", [])
    if not isinstance(points_doc, list):
        raise SchemaError("'points' must be an array")
    points = []
    for entry in points_doc:
        if not isinstance(entry, dict) or "location" not in entry or "tail" not in entry:
            raise SchemaError("each point needs 'location' and 'tail'")
        extra = set(entry) - {"location", "tail", "asserted_exponents"}
        if extra:
            raise SchemaError(f"unknown point fields {sorted(extra)}")
        tail = {}
        if not isinstance(entry["tail"], list):
            raise SchemaError("'tail' must be an array")
        for term in entry["tail"]:
            order = term.get("order") if isinstance(term, dict) else None
            if not isinstance(order, int) or isinstance(order, bool) or order >= 0:
                raise SchemaError("tail orders must be negative integers")
            if order in tail:
                raise SchemaError(f"repeated tail order {order}")
            tail[order] = _parse_matrix(term.get("matrix"), p)
        asserted = entry.get("asserted_exponents")
        if asserted is not None:
            if not isinstance(asserted, list) or len(asserted) != p:
                raise SchemaError(f"'asserted_exponents' must list {p} scalars")
            asserted = tuple(_parse_entry(v) for v in asserted)
        points.append(SingularPoint(_parse_location(entry["location"]), tail, asserted))
    poly = {}
    for term in doc.get("polynomial", []):
        order = term.get("order") if isinstance(term, dict) else None
        if not isinstance(order, int) or isinstance(order, bool) or order < 0:
            raise SchemaError("polynomial orders must be nonnegative integers")
        if order in poly:
            raise SchemaError(f"repeated polynomial order {order}")
        poly[order] = _parse_matrix(term.get("matrix"), p)
    spec = SystemSpec(p, tuple(points), poly)
    _check_declared_infinity(spec)
    return spec


def _check_declared_infinity(spec):
    for pt in spec.points:
        if not pt.at_infinity:
            continue
        orders = sorted(pt.tail)
        lead, coeffs = _laurent_at_infinity(spec, orders[-1] - orders[0] + 1)
        if lead != orders[0]:
            raise SchemaError(
                f"declared tail at infinity starts at order {orders[0]}, computed {lead}")
        for k, o in enumerate(orders):
            diff = to_float(coeffs[k]) - to_float(pt.tail[o])
            if np.max(np.abs(diff), initial=0.0) > 1e-12 * max(1.0, norm2(pt.tail[o])):
                raise SchemaError(f"declared tail at infinity disagrees at order {o}")


def parse_system(text: str) -> SystemSpec:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}") from None
    return spec_from_dict(doc)


def _matrix_doc(m):
    return [[format_scalar(v) if isinstance(v, QQi) else _float_entry(v) for v in row]
            for row in (m if is_exact(m) else to_float(m))]


def _float_entry(v):
    v = complex(v)
    return v.real if v.imag == 0 else {"re": v.real, "im": v.imag}


def _location_doc(loc):
    if loc == INFINITY:
        return INFINITY_TAG
    if isinstance(loc, QQi):
        return {"re": str(loc.re), "im": str(loc.im)}
    loc = complex(loc)
    return {"re": loc.real, "im": loc.imag}


def spec_to_dict(spec: SystemSpec) -> dict:
    pts = []
    for pt in spec.points:
        d = {
            "location": _location_doc(pt.location),
            "tail": [{"order": k, "matrix": _matrix_doc(pt.tail[k])} for k in sorted(pt.tail)],
        }
        if pt.asserted_exponents is not None:
            d["asserted_exponents"] = [format_scalar(v) if isinstance(v, QQi) else complex(v).real
                                       if complex(v).imag == 0 else format_scalar(v)
                                       for v in pt.asserted_exponents]
        pts.append(d)
    return {
        "dimension": spec.dimension,
        "points": pts,
        "polynomial": [{"order": k, "matrix": _matrix_doc(spec.polynomial[k])}
                       for k in sorted(spec.polynomial)],
    }


def print_system(spec: SystemSpec) -> str:
    return json.dumps(spec_to_dict(spec), indent=2)


def specs_equal(a: SystemSpec, b: SystemSpec) -> bool:
    if a.dimension != b.dimension or len(a.points) != len(b.points):
        return False
    for pa, pb in zip(a.points, b.points):
        if pa.location != pb.location and complex(pa.location) != complex(pb.location):
            return False
        if sorted(pa.tail) != sorted(pb.tail):
            return False
        if any(not _mat_eq(pa.tail[k], pb.tail[k]) for k in pa.tail):
            return False
        if (pa.asserted_exponents is None) != (pb.asserted_exponents is None):
            return False
    if sorted(a.polynomial) != sorted(b.polynomial):
        return False
    return all(_mat_eq(a.polynomial[k], b.polynomial[k]) for k in a.polynomial)


def _mat_eq(x, y):
    if is_exact(x) and is_exact(y):
        return all(u == v for u, v in zip(x.flat, y.flat))
    return np.array_equal(to_float(x), to_float(y))


def make_spec(dimension: int, points: Iterable, polynomial: dict | None = None) -> SystemSpec:
    """Convenience constructor: ``points`` is an iterable of ``(location, {order: matrix})``.

    Locations and matrix entries may be strings, ints, Fractions or QQi (exact)
    or Python/numpy complex values (float mode).
    """
    pts = []
    for item in points:
        loc, tail = item[0], item[1]
        asserted = tuple(item[2]) if len(item) > 2 and item[2] is not None else None
        pts.append(SingularPoint(_coerce_location(loc), {k: _coerce_matrix(m) for k, m in tail.items()},
                                 asserted))
    poly = {k: _coerce_matrix(m) for k, m in (polynomial or {}).items()}
    return SystemSpec(dimension, tuple(pts), poly)


def _coerce_location(loc):
    if loc in (INFINITY, INFINITY_TAG):
        return INFINITY
    if isinstance(loc, str):
        return parse_scalar(loc)
    if isinstance(loc, (complex, float, np.complexfloating, np.floating)):
        return complex(loc)
    return QQi.coerce(loc)


def _coerce_matrix(m):
    if isinstance(m, np.ndarray) and m.dtype != object:
        return m.astype(complex)
    rows = m.tolist() if isinstance(m, np.ndarray) else m
    flat = [v for r in rows for v in r]
    if all(isinstance(v, (str, int, QQi)) or _is_fraction(v) for v in flat):
        return exact_matrix(rows)
    return np.array(rows, dtype=complex)


def _is_fraction(v):
    from fractions import Fraction
    return isinstance(v, Fraction)
