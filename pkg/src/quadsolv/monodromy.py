"""Monodromy matrices by numerical analytic continuation along planned loops."""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import linear_sum_assignment

from .exponents import ConditionVerdict, monodromy_eigenvalue, point_exponents
from .numkernel import matrix_exp, to_float
from .system import (
    CompiledSystem,
    SystemSpec,
    infinity_is_singular,
    poincare_rank,
)

DEFAULT_RTOL = 1e-11
_N_ANGLES = 720


class IntegrationError(RuntimeError):
    pass


# ------------------------------------------------------------------ paths

@dataclass(frozen=True)
class Line:
    start: complex
    end: complex

    @property
    def length(self) -> float:
        return abs(self.end - self.start)

    def at(self, s: float):
        u = (self.end - self.start) / self.length
        return self.start + s * u, u


@dataclass(frozen=True)
class Arc:
    center: complex
    radius: float
    theta0: float
    sweep: float  # signed; positive is counterclockwise

    @property
    def length(self) -> float:
        return abs(self.sweep) * self.radius

    @property
    def start(self) -> complex:
        return self.center + self.radius * cmath.exp(1j * self.theta0)

    @property
    def end(self) -> complex:
        return self.center + self.radius * cmath.exp(1j * (self.theta0 + self.sweep))

    def at(self, s: float):
        sign = 1.0 if self.sweep >= 0 else -1.0
        th = self.theta0 + sign * s / self.radius
        e = cmath.exp(1j * th)
        return self.center + self.radius * e, 1j * sign * e


def polyline(points) -> list:
    pts = [complex(z) for z in points]
    return [Line(a, b) for a, b in zip(pts, pts[1:]) if abs(b - a) > 0]


@dataclass
class Loop:
    point: int  # index into spec.points
    center: complex
    radius: float
    pieces: list


@dataclass
class LoopPlan:
    base: complex
    angle: float  # base = R * exp(i * angle)
    big_radius: float
    delta_min: float
    radii: dict
    loops: list  # in composition order (ascending argument of a_i - base)
    clearance: float = field(default=math.inf)


def _seg_dist(p, a, b):
    d = b - a
    L2 = abs(d) ** 2
    if L2 == 0:
        return abs(p - a)
    t = max(0.0, min(1.0, ((p - a) * d.conjugate()).real / L2))
    return abs(p - (a + t * d))


def plan_loops(spec: SystemSpec, radius_factor: float = 1.0) -> LoopPlan:
    """Deterministic base point and counterclockwise loops around every finite pole.

    The base point sits on the circle ``|z| = 1 + 2 max|a_i|``, at angle 0 when
    straight spokes from there clear every other pole's disk, otherwise at the
    first of 720 equally spaced angles that does (or the best one found).
    """
    idx = [i for i, pt in enumerate(spec.points) if not pt.at_infinity]
    if not idx:
        raise ValueError("no finite singular point to encircle")
    locs = {i: complex(spec.points[i].location) for i in idx}
    dmin = min((abs(locs[i] - locs[j]) for i in idx for j in idx if i < j), default=None)
    # the base point is chosen with the unscaled radii so that it does not move with radius_factor
    base_radii = {}
    for i in idx:
        near = min((abs(locs[i] - locs[j]) for j in idx if j != i), default=math.inf)
        base_radii[i] = min(1.0, near / 2)
    radii = {i: r * radius_factor for i, r in base_radii.items()}
    delta_min = min(0.5, dmin / 4) if dmin is not None else 0.5
    R = 1 + 2 * max(abs(z) for z in locs.values())

    def spokes(z0, rad):
        out = {}
        for i in idx:
            d = locs[i] - z0
            out[i] = locs[i] - rad[i] * d / abs(d) if abs(d) > rad[i] else z0
        return out

    def clearance(z0):
        ends = spokes(z0, base_radii)
        worst = math.inf
        for i in idx:
            for j in idx:
                if j != i:
                    worst = min(worst, _seg_dist(locs[j], z0, ends[i]) / base_radii[j])
        return worst

    best = None
    for k in range(_N_ANGLES):
        theta = 2 * math.pi * k / _N_ANGLES
        z0 = R * cmath.exp(1j * theta)
        c = clearance(z0)
        if best is None or c > best[0] + 1e-12:
            best = (c, theta, z0)
        if c >= 1.0:
            break
    c, theta, z0 = best
    if min(abs(z0 - z) for z in locs.values()) < delta_min:
        z0 += 1j * delta_min
    ends = spokes(z0, radii)
    inward = -cmath.exp(1j * theta)

    def arg_key(i):
        return cmath.phase((locs[i] - z0) / inward)

    loops = []
    for i in sorted(idx, key=lambda i: (arg_key(i), abs(locs[i] - z0))):
        E = ends[i]
        th0 = cmath.phase(E - locs[i])
        pieces = polyline([z0, E]) + [Arc(locs[i], radii[i], th0, 2 * math.pi)] + polyline([E, z0])
        loops.append(Loop(i, locs[i], radii[i], pieces))
    return LoopPlan(z0, theta, R, delta_min, radii, loops, c)


# ------------------------------------------------------------ integration

def _integrate_piece(Bz, piece, Y0, rtol, max_step):
    p = Y0.shape[0]

    def rhs(s, y):
        z, dz = piece.at(s)
        return ((Bz(z) @ y.reshape(p, p)) * dz).ravel()

    sol = solve_ivp(rhs, (0.0, piece.length), Y0.ravel(), method="DOP853", rtol=rtol,
                    atol=rtol * 1e-3, max_step=max_step)
    if sol.status != 0:
        raise IntegrationError(f"integration failed: {sol.message}")
    Y = sol.y[:, -1].reshape(p, p)
    if not np.all(np.isfinite(Y)):
        raise IntegrationError("non-finite values during continuation")
    return Y


def _log_increment(piece, a):
    """Continuous change of log(z - a) along a piece that avoids ``a``."""
    if isinstance(piece, Line):
        return cmath.log((piece.end - a) / (piece.start - a))
    if abs(piece.center - a) < 1e-14:
        return 1j * piece.sweep
    n = max(4, int(math.ceil(abs(piece.sweep) / (math.pi / 8))))
    total = 0j
    prev = piece.start
    for k in range(1, n + 1):
        z = piece.center + piece.radius * cmath.exp(1j * (piece.theta0 + piece.sweep * k / n))
        total += cmath.log((z - a) / (prev - a))
        prev = z
    return total


def trace_integral(spec: SystemSpec, pieces) -> complex:
    """Closed-form integral of ``trace B(z) dz`` along the path."""
    total = 0j
    for piece in pieces:
        z0, z1 = piece.start, piece.end
        for pt in spec.finite_points:
            a = complex(pt.location)
            for m_ord, mat in pt.tail.items():
                c = complex(to_float(mat).trace())
                if c == 0:
                    continue
                m = -m_ord
                if m == 1:
                    total += c * _log_increment(piece, a)
                else:
                    total += c * ((z1 - a) ** (1 - m) - (z0 - a) ** (1 - m)) / (1 - m)
        for k, mat in spec.polynomial.items():
            c = complex(to_float(mat).trace())
            total += c * (z1 ** (k + 1) - z0 ** (k + 1)) / (k + 1)
    return total


def continue_along(spec: SystemSpec, path, rtol: float = DEFAULT_RTOL, max_step: float | None = None,
                   Y0: np.ndarray | None = None):
    """Propagate ``Y' = B(z) Y`` from ``Y0`` (identity by default) along the path.

    ``path`` is a list of :class:`Line`/:class:`Arc` pieces or a sequence of
    vertices of a polyline.  Returns ``(Y_end, error_estimate)``, the estimate
    being the relative Liouville defect ``|det Y - det Y0 exp(int tr B)|``.
    """
    pieces = list(path)
    if pieces and not isinstance(pieces[0], (Line, Arc)):
        pieces = polyline(pieces)
    p = spec.dimension
    Y = np.eye(p, dtype=complex) if Y0 is None else np.array(Y0, dtype=complex)
    det0 = np.linalg.det(Y)
    if max_step is None:
        max_step = _default_max_step(spec)
    Bz = CompiledSystem(spec)
    for piece in pieces:
        Y = _integrate_piece(Bz, piece, Y, rtol, max_step)
    expected = det0 * cmath.exp(trace_integral(spec, pieces))
    err = abs(np.linalg.det(Y) - expected) / max(abs(expected), 1e-300)
    return Y, err


def _default_max_step(spec):
    locs = [complex(pt.location) for pt in spec.finite_points]
    if len(locs) < 2:
        return 0.5 / 8
    dmin = min(abs(a - b) for i, a in enumerate(locs) for b in locs[i + 1:])
    return min(0.5, dmin / 4) / 8


@dataclass
class MonodromyResult:
    matrices: dict  # point index -> M_i
    order: list
    product_residual: float
    loop_errors: dict
    plan: LoopPlan

    def product(self) -> np.ndarray:
        """Composite of the loops in plan order: the last loop's matrix is the leftmost factor."""
        P = np.eye(next(iter(self.matrices.values())).shape[0], dtype=complex)
        for i in self.order:
            P = self.matrices[i] @ P
        return P


def big_circle(plan: LoopPlan) -> list:
    return [Arc(0j, plan.big_radius, plan.angle, 2 * math.pi)] if abs(
        abs(plan.base) - plan.big_radius) < 1e-12 else (
        polyline([plan.base, plan.big_radius * cmath.exp(1j * plan.angle)])
        + [Arc(0j, plan.big_radius, plan.angle, 2 * math.pi)]
        + polyline([plan.big_radius * cmath.exp(1j * plan.angle), plan.base]))


def monodromy(spec: SystemSpec, rtol: float = DEFAULT_RTOL, radius_factor: float = 1.0) -> MonodromyResult:
    """Monodromy matrix of every finite pole plus the product-relation residual.

    ``M_i`` is the value at the base point of the solution continued around
    loop i starting from the identity, so that ``Y -> Y M_i``.  The composite
    of all loops in plan order equals the identity when infinity is not
    singular and the big-circle continuation otherwise.
    """
    plan = plan_loops(spec, radius_factor)
    max_step = plan.delta_min / 8
    mats, errs = {}, {}
    for loop in plan.loops:
        M, err = continue_along(spec, loop.pieces, rtol, max_step)
        mats[loop.point] = M
        errs[loop.point] = err
    order = [loop.point for loop in plan.loops]
    result = MonodromyResult(mats, order, 0.0, errs, plan)
    if infinity_is_singular(spec):
        expected, _ = continue_along(spec, big_circle(plan), rtol, max_step)
    else:
        expected = np.eye(spec.dimension, dtype=complex)
    result.product_residual = float(np.linalg.norm(result.product() - expected, 2))
    return result


def match_spectra(a, b) -> float:
    """Largest distance under the optimal one-to-one matching of two multisets."""
    a = np.asarray(a, complex)
    b = np.asarray(b, complex)
    if a.size != b.size:
        raise ValueError("multisets differ in size")
    cost = np.abs(a[:, None] - b[None, :])
    r, c = linear_sum_assignment(cost)
    return float(cost[r, c].max()) if a.size else 0.0


def match_spectra_grouped(computed, expected, group_tol: float = 1e-9) -> float:
    """Like :func:`match_spectra`, but repeated expected values are compared through group means.

    A multiple eigenvalue of a defective matrix splits by roughly eps**(1/m)
    in floating point while the mean of the split group stays accurate to eps.
    """
    a = np.asarray(computed, complex)
    b = np.asarray(expected, complex)
    if a.size != b.size:
        raise ValueError("multisets differ in size")
    if not a.size:
        return 0.0
    cost = np.abs(a[:, None] - b[None, :])
    r, c = linear_sum_assignment(cost)
    got = np.empty_like(b)
    got[c] = a[r]
    radius = group_tol * max(1.0, float(np.max(np.abs(b))))
    worst = 0.0
    for j in range(b.size):
        members = np.abs(b - b[j]) <= radius
        worst = max(worst, abs(got[members].mean() - b[members].mean()))
    return float(worst)


def check_exponent_consistency(spec: SystemSpec, result: MonodromyResult, tol: float = 1e-6,
                               eig_tol: float = 1e-9) -> ConditionVerdict:
    """Monodromy spectra against ``exp(2 pi i beta)``, repeated values compared by group means."""
    worst, fails = 0.0, []
    for i, M in result.matrices.items():
        if poincare_rank(spec, i) != 0:
            continue
        mus = [monodromy_eigenvalue(e) for e in point_exponents(spec, i, eig_tol)]
        # float exponents of a defective residue split too, so group at sqrt(eig_tol)
        dist = match_spectra_grouped(np.linalg.eigvals(M), mus, math.sqrt(eig_tol))
        worst = max(worst, dist)
        if dist > tol:
            fails.append((i, dist))
    return ConditionVerdict("exponent_consistency", not fails, tol, fails,
                            f"largest spectral mismatch {worst:.3e}")


def verify_formal_monodromy(Lam, M, stokes, tol: float = 1e-9) -> ConditionVerdict:
    """``exp(2 pi i Lambda) = M C^1 ... C^N`` with every Stokes factor unipotent."""
    L = to_float(np.asarray(Lam))
    if L.ndim == 1:
        L = np.diag(L)
    M = to_float(np.asarray(M))
    p = L.shape[0]
    mats = [to_float(np.asarray(C)) for C in stokes]
    for A in [M] + mats:
        if A.shape != (p, p):
            raise ValueError("dimension mismatch among formal monodromy data")
    if np.max(np.abs(L - np.diag(np.diag(L)))) > 0:
        raise ValueError("Lambda must be diagonal")
    prod = M.copy()
    for C in mats:
        prod = prod @ C
    gap = float(np.linalg.norm(matrix_exp(2j * math.pi * L) - prod, 2))
    witnesses = []
    if gap > tol:
        witnesses.append(("relation", gap))
    for j, C in enumerate(mats):
        off = max(abs(l - 1) for l in np.linalg.eigvals(C))
        if off > tol:
            witnesses.append(("unipotent", j, off))
    return ConditionVerdict("formal_monodromy", not witnesses, tol, witnesses,
                            f"relation defect {gap:.3e}")
