"""Explicit solutions of triangular systems by quadratures.

The fundamental matrix is built from the last equation upwards.  Diagonal
entries are closed-form exponentials of antiderivatives of ``b_jj``:

    y_jj = prod_i (z - a_i)**res_i * exp(E_j(z) - E_j(z0)),

where ``E_j`` collects the higher principal parts and the polynomial part.
Off-diagonal entries are ``y_jk = y_jj * Integral(sum_l b_jl y_lk / y_jj)``
from the base point ``z0``, so ``Y(z0)`` is diagonal.

Evaluation runs along the straight segment ``z0 -> z``; powers use the
principal branch at ``z0`` continued along the segment.  Integrals are
computed on Chebyshev-Lobatto panels (cumulative spectral integration, so
nested integrals share one grid) and the panel count is doubled until the
values settle.
"""

from __future__ import annotations

import cmath
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import chebyshev as cheb

from .exponents import ConditionVerdict
from .monodromy import Line, continue_along, plan_loops, trace_integral
from .numkernel import QQi, format_scalar, is_exact, norm2, parse_scalar, to_float
from .system import PoleProximityError, SystemSpec, evaluate

PANEL_DEGREE = 16
MAX_PANELS = 4096


class NotTriangularError(ValueError):
    pass


class QuadratureError(RuntimeError):
    pass


# ------------------------------------------------------------ nodes

class QuadExpr:
    kind = "expr"


@dataclass(frozen=True, eq=False)
class Const(QuadExpr):
    value: object
    kind = "const"


@dataclass(frozen=True, eq=False)
class PowerProduct(QuadExpr):
    """``prod (z - a)**c * exp(E(z) - E(base))``.

    ``exp_poly`` maps k to the coefficient of ``z**k`` in E, ``exp_principal``
    holds ``(a, {m: coeff of (z - a)**(-m)})``.
    """

    powers: tuple
    exp_poly: dict
    exp_principal: tuple
    base: complex
    kind = "power_product"

    def inverse(self) -> "PowerProduct":
        return PowerProduct(
            tuple((a, -c) for a, c in self.powers),
            {k: -v for k, v in self.exp_poly.items()},
            tuple((a, {m: -v for m, v in d.items()}) for a, d in self.exp_principal),
            self.base,
        )


@dataclass(frozen=True, eq=False)
class Rational(QuadExpr):
    """A rational entry of B: ``sum coeff (z - a)**(-m) + sum coeff z**k``."""

    poles: tuple
    poly: dict
    kind = "rational"


@dataclass(frozen=True, eq=False)
class Integral(QuadExpr):
    integrand: QuadExpr
    base: complex
    kind = "integral"


@dataclass(frozen=True, eq=False)
class Sum(QuadExpr):
    terms: tuple
    kind = "sum"


@dataclass(frozen=True, eq=False)
class Product(QuadExpr):
    factors: tuple
    kind = "product"


ZERO = Const(QQi(0))


# ------------------------------------------------------------ construction

def _is_triangular(spec: SystemSpec, tol: float = 1e-12) -> bool:
    for m in spec.coefficient_matrices():
        if is_exact(m):
            if any(m[i, j] for i in range(m.shape[0]) for j in range(i)):
                return False
        else:
            M = to_float(m)
            low = np.tril(M, -1)
            if np.max(np.abs(low), initial=0.0) > tol * max(norm2(M), 1e-300):
                return False
    return True


def default_base(spec: SystemSpec) -> complex:
    if spec.finite_points:
        return plan_loops(spec).base
    return 0j


def _entry(spec, j, l):
    poles = []
    for pt in spec.finite_points:
        d = {-o: m[j, l] for o, m in pt.tail.items() if m[j, l]}
        if d:
            poles.append((pt.location, d))
    poly = {k: m[j, l] for k, m in spec.polynomial.items() if m[j, l]}
    if not poles and not poly:
        return None
    return Rational(tuple(poles), poly)


def _diagonal(spec, j, z0):
    powers, principal, poly = [], [], {}
    for pt in spec.finite_points:
        d = {}
        for o, m in pt.tail.items():
            c = m[j, j]
            if not c:
                continue
            if o == -1:
                powers.append((pt.location, c))
            else:
                d[-o - 1] = c / (o + 1)
        if d:
            principal.append((pt.location, d))
    for k, m in spec.polynomial.items():
        if m[j, j]:
            poly[k + 1] = m[j, j] / (k + 1)
    return PowerProduct(tuple(powers), poly, tuple(principal), complex(z0))


def solve_triangular(spec: SystemSpec, z0=None):
    """Upper-triangular fundamental matrix of QuadExpr nodes, with ``Y(z0)`` diagonal."""
    if not _is_triangular(spec):
        raise NotTriangularError("coefficient matrices are not upper triangular")
    z0 = default_base(spec) if z0 is None else complex(z0)
    p = spec.dimension
    Y = [[ZERO] * p for _ in range(p)]
    diag = [_diagonal(spec, j, z0) for j in range(p)]
    for j in range(p):
        Y[j][j] = diag[j]
    for k in range(p):
        for j in range(k - 1, -1, -1):
            terms = []
            for l in range(j + 1, k + 1):
                b = _entry(spec, j, l)
                if b is None or Y[l][k] is ZERO:
                    continue
                terms.append(Product((b, Y[l][k], diag[j].inverse())))
            if terms:
                inner = terms[0] if len(terms) == 1 else Sum(tuple(terms))
                Y[j][k] = Product((diag[j], Integral(inner, z0)))
    return Y


# ------------------------------------------------------------ evaluation

@lru_cache(maxsize=None)
def _panel_rule(m: int):
    """Lobatto nodes on [-1, 1] and the cumulative integration matrix from -1."""
    x = np.cos(np.pi * np.arange(m, -1, -1) / m)
    V = cheb.chebvander(x, m)
    Vinv = np.linalg.inv(V)
    W = np.empty((m + 1, m + 1))
    for i in range(m + 1):
        c = cheb.chebint(Vinv[:, i], lbnd=-1)
        W[:, i] = cheb.chebval(x, c)
    return x, W


class _Grid:
    def __init__(self, z0: complex, z: complex, panels: int, m: int = PANEL_DEGREE):
        x, W = _panel_rule(m)
        edges = np.linspace(0.0, 1.0, panels + 1)
        h = edges[1] - edges[0]
        t = edges[:-1, None] + (x[None, :] + 1) * h / 2
        self.z0, self.z = z0, z
        self.dz = z - z0
        self.w = z0 + t * self.dz  # shape (panels, m + 1)
        self.W = W
        self.scale = h / 2 * self.dz
        self.cache = {}

    def cumulative(self, f):
        local = (f @ self.W.T) * self.scale
        offsets = np.concatenate([[0.0], np.cumsum(local[:-1, -1])])
        return local + offsets[:, None]


def _log_along(w, a, z0):
    """Branch of log(w - a) that is principal at z0 and continuous along the segment."""
    return cmath.log(z0 - a) + np.log((w - a) / (z0 - a))


def _exp_fn(node: PowerProduct, w):
    out = np.zeros_like(w)
    for k, c in node.exp_poly.items():
        out = out + complex(c) * w**k
    for a, d in node.exp_principal:
        a = complex(a)
        for m, c in d.items():
            out = out + complex(c) * (w - a) ** (-m)
    return out


def _exp_fn_deriv(node: PowerProduct, w):
    out = np.zeros_like(w)
    for k, c in node.exp_poly.items():
        out = out + complex(c) * k * w ** (k - 1)
    for a, d in node.exp_principal:
        a = complex(a)
        for m, c in d.items():
            out = out - complex(c) * m * (w - a) ** (-m - 1)
    return out


def _rational(node: Rational, w, deriv=False):
    out = np.zeros_like(w)
    for a, d in node.poles:
        a = complex(a)
        for m, c in d.items():
            out = out + (complex(c) * (-m) * (w - a) ** (-m - 1) if deriv else complex(c) * (w - a) ** (-m))
    for k, c in node.poly.items():
        if deriv:
            if k:
                out = out + complex(c) * k * w ** (k - 1)
        else:
            out = out + complex(c) * w**k
    return out


def _values(node: QuadExpr, g: _Grid):
    key = id(node)
    if key in g.cache:
        return g.cache[key]
    w = g.w
    if isinstance(node, Const):
        val = np.full(w.shape, complex(node.value))
    elif isinstance(node, PowerProduct):
        logs = np.zeros_like(w)
        for a, c in node.powers:
            logs = logs + complex(c) * _log_along(w, complex(a), g.z0)
        base = np.array([[complex(node.base)]])
        e0 = _exp_fn(node, base)[0, 0]
        val = np.exp(logs + _exp_fn(node, w) - e0)
    elif isinstance(node, Rational):
        val = _rational(node, w)
    elif isinstance(node, Integral):
        if abs(complex(node.base) - g.z0) > 0:
            raise QuadratureError("integral base differs from the evaluation base point")
        val = g.cumulative(_values(node.integrand, g))
    elif isinstance(node, Sum):
        val = sum((_values(t, g) for t in node.terms), np.zeros_like(w))
    elif isinstance(node, Product):
        val = np.ones_like(w)
        for f in node.factors:
            val = val * _values(f, g)
    else:
        raise TypeError(f"unknown node {node!r}")
    g.cache[key] = val
    return val


def _end_derivative(node: QuadExpr, g: _Grid) -> complex:
    end = g.w[-1:, -1:]
    if isinstance(node, Const):
        return 0j
    if isinstance(node, PowerProduct):
        v = _values(node, g)[-1, -1]
        z = end[0, 0]
        s = sum(complex(c) / (z - complex(a)) for a, c in node.powers)
        return v * (s + _exp_fn_deriv(node, end)[0, 0])
    if isinstance(node, Rational):
        return _rational(node, end, deriv=True)[0, 0]
    if isinstance(node, Integral):
        return _values(node.integrand, g)[-1, -1]
    if isinstance(node, Sum):
        return sum(_end_derivative(t, g) for t in node.terms)
    if isinstance(node, Product):
        vals = [_values(f, g)[-1, -1] for f in node.factors]
        total = 0j
        for i, f in enumerate(node.factors):
            d = _end_derivative(f, g)
            if d:
                rest = 1 + 0j
                for j, v in enumerate(vals):
                    if j != i:
                        rest *= v
                total += d * rest
        return total
    raise TypeError(f"unknown node {node!r}")


def _poles(nodes):
    seen, out, stack = set(), set(), list(nodes)
    while stack:
        n = stack.pop()
        if id(n) in seen:
            continue
        seen.add(id(n))
        if isinstance(n, PowerProduct):
            out.update(complex(a) for a, _ in n.powers)
            out.update(complex(a) for a, _ in n.exp_principal)
        elif isinstance(n, Rational):
            out.update(complex(a) for a, _ in n.poles)
        elif isinstance(n, Integral):
            stack.append(n.integrand)
        elif isinstance(n, Sum):
            stack.extend(n.terms)
        elif isinstance(n, Product):
            stack.extend(n.factors)
    return out


def _seg_dist(p, a, b):
    d = b - a
    if d == 0:
        return abs(p - a)
    t = max(0.0, min(1.0, ((p - a) * d.conjugate()).real / abs(d) ** 2))
    return abs(p - (a + t * d))


def evaluate_many(nodes, z, z0, rtol: float = 1e-10):
    """Values and z-derivatives of several expressions at ``z``, sharing one grid."""
    z, z0 = complex(z), complex(z0)
    for a in _poles(nodes):
        if _seg_dist(a, z0, z) <= 1e-12 * (1 + abs(a)):
            raise PoleProximityError(f"segment {z0} -> {z} passes through the pole {a}")
    panels, prev = 2, None
    while panels <= MAX_PANELS:
        g = _Grid(z0, z, panels)
        vals = np.array([_values(n, g)[-1, -1] for n in nodes])
        if not np.all(np.isfinite(vals)):
            raise QuadratureError("non-finite value along the segment")
        if prev is not None:
            err = np.max(np.abs(vals - prev)) / max(np.max(np.abs(vals)), 1e-300)
            if err <= rtol:
                ders = np.array([_end_derivative(n, g) for n in nodes])
                return vals, ders, err
        prev = vals
        panels *= 2
    raise QuadratureError(f"quadrature did not reach rtol={rtol:g} with {MAX_PANELS} panels")


def eval_quad(expr: QuadExpr, z, z0, rtol: float = 1e-10) -> complex:
    vals, _, _ = evaluate_many([expr], z, z0, rtol)
    return complex(vals[0])


def eval_matrix(Y, z, z0, rtol: float = 1e-10, with_derivative: bool = False):
    p = len(Y)
    flat = [Y[i][j] for i in range(p) for j in range(p)]
    vals, ders, _ = evaluate_many(flat, z, z0, rtol)
    V = vals.reshape(p, p)
    return (V, ders.reshape(p, p)) if with_derivative else V


# ------------------------------------------------------------ verification

def default_samples(spec: SystemSpec, z0, count: int = 5) -> list:
    """Points around z0 whose segments from z0 stay clear of every pole."""
    z0 = complex(z0)
    locs = [complex(pt.location) for pt in spec.finite_points]
    d = min((abs(z0 - a) for a in locs), default=2.0)
    out = []
    for k in range(count):
        rho = d * (0.3 + 0.4 * k / max(count - 1, 1))
        out.append(z0 + rho * cmath.exp(1j * (0.4 + 2 * cmath.pi * k / count)))
    return out


def verify_solution(spec: SystemSpec, Y, samples=None, rtol: float = 1e-8, z0=None,
                    agree_tol: float = 1e-7, ode_rtol: float = 1e-11) -> ConditionVerdict:
    """Check ``Y' = B Y`` at the samples and agreement with direct path integration."""
    z0 = default_base(spec) if z0 is None else complex(z0)
    samples = default_samples(spec, z0) if samples is None else [complex(s) for s in samples]
    Y0 = eval_matrix(Y, z0, z0, rtol * 1e-2)
    fails, worst_eq, worst_path = [], 0.0, 0.0
    for z in samples:
        V, D = eval_matrix(Y, z, z0, rtol * 1e-2, with_derivative=True)
        BY = to_float(evaluate(spec, z)) @ V
        eq = float(np.linalg.norm(D - BY, 2))
        ref, _ = continue_along(spec, [Line(z0, z)], rtol=ode_rtol, Y0=Y0)
        path = float(np.linalg.norm(ref - V, 2)) / max(float(np.linalg.norm(V, 2)), 1e-300)
        worst_eq = max(worst_eq, eq / max(float(np.linalg.norm(BY, 2)), 1e-300))
        worst_path = max(worst_path, path)
        if eq > rtol * float(np.linalg.norm(BY, 2)) or path > agree_tol:
            fails.append(str(z))
    return ConditionVerdict("solution", not fails, None, fails,
                            f"equation residual {worst_eq:.3g}, path disagreement {worst_path:.3g}")


def check_liouville(spec: SystemSpec, Y, samples=None, z0=None, tol: float = 1e-8) -> ConditionVerdict:
    """``det Y(z) = det Y(z0) exp(int_{z0}^{z} trace B)`` at each sample."""
    z0 = default_base(spec) if z0 is None else complex(z0)
    samples = default_samples(spec, z0) if samples is None else [complex(s) for s in samples]
    d0 = np.linalg.det(eval_matrix(Y, z0, z0, 1e-12))
    fails, worst = [], 0.0
    for z in samples:
        d = np.linalg.det(eval_matrix(Y, z, z0, 1e-12))
        expected = d0 * cmath.exp(trace_integral(spec, [Line(z0, z)]))
        err = abs(d - expected) / max(abs(expected), 1e-300)
        worst = max(worst, err)
        if err > tol:
            fails.append(str(z))
    return ConditionVerdict("liouville", not fails, None, fails, f"worst relative defect {worst:.3g}")


# ------------------------------------------------------------ serialization

def _scalar_doc(v):
    if isinstance(v, QQi):
        return format_scalar(v)
    return format_scalar(complex(v))


def _scalar_load(s):
    v = parse_scalar(s)
    return v


def to_json(Y) -> dict:
    """DAG form: a node table in creation order and a matrix of node ids.

    Node kinds: const {value}, power_product {powers, exp_poly, exp_principal,
    base}, rational {poles, poly}, integral {integrand, base}, sum {terms},
    product {factors}.  Children are ids into the node table.
    """
    table, ids = [], {}

    def visit(n):
        if id(n) in ids:
            return ids[id(n)]
        if isinstance(n, Const):
            doc = {"kind": "const", "value": _scalar_doc(n.value)}
        elif isinstance(n, PowerProduct):
            doc = {
                "kind": "power_product",
                "powers": [{"pole": _scalar_doc(a), "exponent": _scalar_doc(c)} for a, c in n.powers],
                "exp_poly": {str(k): _scalar_doc(c) for k, c in sorted(n.exp_poly.items())},
                "exp_principal": [{"pole": _scalar_doc(a),
                                   "coefficients": {str(m): _scalar_doc(c) for m, c in sorted(d.items())}}
                                  for a, d in n.exp_principal],
                "base": _scalar_doc(n.base),
            }
        elif isinstance(n, Rational):
            doc = {
                "kind": "rational",
                "poles": [{"pole": _scalar_doc(a),
                           "coefficients": {str(m): _scalar_doc(c) for m, c in sorted(d.items())}}
                          for a, d in n.poles],
                "poly": {str(k): _scalar_doc(c) for k, c in sorted(n.poly.items())},
            }
        elif isinstance(n, Integral):
            doc = {"kind": "integral", "integrand": visit(n.integrand), "base": _scalar_doc(n.base)}
        elif isinstance(n, Sum):
            doc = {"kind": "sum", "terms": [visit(t) for t in n.terms]}
        elif isinstance(n, Product):
            doc = {"kind": "product", "factors": [visit(f) for f in n.factors]}
        else:
            raise TypeError(f"unknown node {n!r}")
        ids[id(n)] = len(table)
        table.append(doc)
        return ids[id(n)]

    matrix = [[visit(e) for e in row] for row in Y]
    return {"nodes": table, "matrix": matrix}


def from_json(doc: dict):
    built = []
    for d in doc["nodes"]:
        k = d["kind"]
        if k == "const":
            n = Const(_scalar_load(d["value"]))
        elif k == "power_product":
            n = PowerProduct(
                tuple((_scalar_load(e["pole"]), _scalar_load(e["exponent"])) for e in d["powers"]),
                {int(k2): _scalar_load(c) for k2, c in d["exp_poly"].items()},
                tuple((_scalar_load(e["pole"]), {int(m): _scalar_load(c) for m, c in e["coefficients"].items()})
                      for e in d["exp_principal"]),
                complex(_scalar_load(d["base"])),
            )
        elif k == "rational":
            n = Rational(
                tuple((_scalar_load(e["pole"]), {int(m): _scalar_load(c) for m, c in e["coefficients"].items()})
                      for e in d["poles"]),
                {int(k2): _scalar_load(c) for k2, c in d["poly"].items()},
            )
        elif k == "integral":
            n = Integral(built[d["integrand"]], complex(_scalar_load(d["base"])))
        elif k == "sum":
            n = Sum(tuple(built[i] for i in d["terms"]))
        elif k == "product":
            n = Product(tuple(built[i] for i in d["factors"]))
        else:
            raise ValueError(f"unknown node kind {k!r}")
        built.append(n)
    return [[built[i] for i in row] for row in doc["matrix"]]
