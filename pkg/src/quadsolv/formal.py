"""Formal fundamental matrices at non-resonant irregular points.

With ``x = z - a`` (or ``x = 1/z`` at infinity) and ``B = x**(-r-1) sum A_k x**k``
the formal solution is ``F(x) x**Lambda exp(Q(x))``.  It is built in two
steps.  A formal gauge ``P = I + P_1 x + ...`` with zero diagonal in every
``P_k`` (k >= 1) splits the system into the diagonal system
``x**(r+1) v' = Delta(x) v``:

    (k - r) P_{k-r} = sum_{j=0..k} (At_{k-j} P_j - P_j Delta_{k-j}),

solved order by order: the diagonal gives ``Delta_k``, the off-diagonal part
is divided by ``b_l - b_m``.  The diagonal system integrates in closed form;
its terms of order < r give ``Q``, order r gives ``Lambda`` and the higher
orders give a diagonal power series ``G`` with ``G(0) = I``.  Then
``F = T P G`` and ``F(0) = T``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exponents import ConditionVerdict, check_ineq_small, check_pair_conditions
from .numkernel import QQi, is_exact, norm2, to_float
from .system import (
    SystemSpec,
    classify,
    laurent_coefficients,
    poincare_rank,
    resolve_point,
    singular_points,
)
from .triangularize import FlagResult, below_diagonal_residual, simultaneous_triangularize

DEFAULT_ORDER = 8


class ResonantPointError(ValueError):
    pass


class UnsupportedConfiguration(ValueError):
    pass


@dataclass
class FormalData:
    point: object
    rank: int
    b: list  # leading eigenvalues, in T's column order
    T: np.ndarray
    Lambda: list
    Q: np.ndarray  # Q[j, m-1] = coefficient of x**(-m) in q^j, m = 1..r
    Fhat: list  # F_0 = T, F_1, ..., F_K

    @property
    def exact(self) -> bool:
        return is_exact(self.T)

    def q_leading(self) -> list:
        return [self.Q[j, self.rank - 1] for j in range(len(self.b))]


def _sort_key(v, scale):
    z = complex(v)
    q = 1e-9 * max(scale, 1.0)
    return (round(z.real / q), round(z.imag / q))


def _is_diagonal(M) -> bool:
    p = M.shape[0]
    return all(not M[i, j] for i in range(p) for j in range(p) if i != j)


def _diagonalizer(A0, tol):
    p = A0.shape[0]
    if _is_diagonal(A0):
        b = [A0[i, i] for i in range(p)]
        scale = max(abs(complex(v)) for v in b)
        order = sorted(range(p), key=lambda i: _sort_key(b[i], scale))
        if is_exact(A0):
            T = np.empty((p, p), dtype=object)
            for i in range(p):
                for j in range(p):
                    T[i, j] = QQi(1 if i == order[j] else 0)
            return T, T.T.copy(), [b[i] for i in order]
        T = np.eye(p, dtype=complex)[:, order]
        return T, T.T.copy(), [complex(b[i]) for i in order]
    A = to_float(A0)
    w, V = np.linalg.eig(A)
    scale = float(np.max(np.abs(w)))
    order = sorted(range(p), key=lambda i: _sort_key(w[i], scale))
    w, V = w[order], V[:, order]
    V = V / np.linalg.norm(V, axis=0)
    return V, np.linalg.inv(V), list(w)


def _zeros_like(M):
    if is_exact(M):
        out = np.empty(M.shape, dtype=object)
        for idx in np.ndindex(*M.shape):
            out[idx] = QQi(0)
        return out
    return np.zeros(M.shape, complex)


def _exp_series(h, order, one):
    """Coefficients g_0..g_order of exp(h) for a series with h_0 = 0."""
    g = [one]
    for n in range(1, order + 1):
        acc = one * 0
        for k in range(1, n + 1):
            if k < len(h):
                acc = acc + h[k] * g[n - k] * k
        g.append(acc / n)
    return g


def formal_data(spec: SystemSpec, point, K: int = DEFAULT_ORDER, tol: float = 1e-9) -> FormalData:
    """Formal fundamental matrix data at a non-resonant irregular point, truncated at order K."""
    ref = resolve_point(spec, point)
    cls = classify(spec, ref, tol)
    if cls.kind == "fuchsian":
        raise UnsupportedConfiguration(f"point {point!r} is Fuchsian")
    if cls.kind == "irregular_resonant":
        raise ResonantPointError(f"leading term at {point!r} has repeated eigenvalues")
    r = cls.rank
    if K < r:
        raise ValueError(f"truncation order K={K} is below the Poincare rank {r}")
    _, A = laurent_coefficients(spec, ref, K + r + 1)
    T, Tinv, b = _diagonalizer(A[0], tol)
    exact = is_exact(T) and all(is_exact(a) for a in A)
    if not exact:
        T, Tinv = to_float(T), to_float(Tinv)
        A = [to_float(a) for a in A]
        b = [complex(v) for v in b]
    At = [Tinv.dot(a).dot(T) for a in A]
    p = spec.dimension
    zero = _zeros_like(At[0])
    one = QQi(1) if exact else 1.0 + 0j
    At[0] = zero.copy()
    for i in range(p):
        At[0][i, i] = b[i]
    P = [zero.copy() for _ in range(K + r + 1)]
    for i in range(p):
        P[0][i, i] = one
    Delta = [[one * 0] * p for _ in range(K + r + 1)]
    Delta[0] = list(b)
    for k in range(1, K + r + 1):
        S = -At[k]
        if k - r >= 1:
            S = S + P[k - r] * (k - r)
        for j in range(1, k):
            D = np.diag(Delta[k - j]) if not exact else _obj_diag(Delta[k - j])
            S = S - (At[k - j].dot(P[j]) - P[j].dot(D))
        for i in range(p):
            Delta[k][i] = -S[i, i]
        for i in range(p):
            for m in range(p):
                if i != m:
                    P[k][i, m] = S[i, m] / (b[i] - b[m])
    Lam = [Delta[r][i] for i in range(p)]
    Q = np.empty((p, r), dtype=object if exact else complex)
    for i in range(p):
        for m in range(1, r + 1):
            Q[i, m - 1] = Delta[r - m][i] / (-m)
    Gs = []
    for i in range(p):
        h = [one * 0] + [Delta[r + n][i] / n for n in range(1, K + 1)]
        Gs.append(_exp_series(h, K, one))
    Fhat = []
    for k in range(K + 1):
        acc = zero.copy()
        for j in range(k + 1):
            scale = np.array([Gs[i][k - j] for i in range(p)], dtype=object if exact else complex)
            acc = acc + P[j] * scale[None, :]
        Fhat.append(T.dot(acc))
    return FormalData(ref, r, b, T, Lam, Q, Fhat)


def _obj_diag(vals):
    p = len(vals)
    out = np.empty((p, p), dtype=object)
    for i in range(p):
        for j in range(p):
            out[i, j] = vals[i] if i == j else QQi(0)
    return out


def formal_residual(spec: SystemSpec, point, data: FormalData, K: int | None = None) -> float:
    """Largest coefficient norm of ``x**(r+1) F' + F D - A F`` for orders 0..K.

    ``D = x**(r+1) (Q' + Lambda/x)``; these are exactly the coefficients fixed by
    ``F_0 .. F_K``.
    """
    K = len(data.Fhat) - 1 if K is None else K
    r = data.rank
    _, A = laurent_coefficients(spec, data.point, K + 1)
    F = list(data.Fhat[: K + 1])
    p = spec.dimension
    exact = all(is_exact(m) for m in F + A) and is_exact(np.asarray(data.Q)) and all(
        isinstance(v, QQi) for v in data.Lambda)
    if not exact:
        F = [to_float(f) for f in F]
        A = [to_float(a) for a in A]
    zero = QQi(0) if exact else 0j

    def row(vals):
        return np.array(vals, dtype=object if exact else complex)

    # D_k for k = 0..r: D_{r-m} = -m q_m, D_r = Lambda
    D = [row([zero] * p) for _ in range(r + 1)]
    for m in range(1, r + 1):
        D[r - m] = row([data.Q[j, m - 1] * (-m) if exact else -m * complex(data.Q[j, m - 1]) for j in range(p)])
    D[r] = row([v if exact else complex(v) for v in data.Lambda])
    worst = 0.0
    for k in range(K + 1):
        acc = _zeros_like(F[0])
        if k - r >= 1:
            acc = acc + F[k - r] * (k - r)
        for j in range(max(0, k - r), k + 1):
            acc = acc + F[j] * D[k - j][None, :]
        for j in range(k + 1):
            acc = acc - A[k - j].dot(F[j])
        worst = max(worst, norm2(acc))
    return worst


# ------------------------------------------------------------ decision

def check_theorem2(spec: SystemSpec, tol: float = 1e-9, K: int = DEFAULT_ORDER,
                   max_den: int = 10**6, rank_tol: float = 1e-10):
    """Decide solvability for a system whose singular points are all non-resonant irregular.

    Returns ``(decision, verdicts, flag, formal)`` where decision is one of
    SOLVABLE / NOT_SOLVABLE / INCONCLUSIVE.
    """
    refs = singular_points(spec)
    if not refs:
        raise UnsupportedConfiguration("system has no singular points")
    for ref in refs:
        kind = classify(spec, ref, tol).kind
        if kind == "fuchsian":
            raise UnsupportedConfiguration(f"point {ref!r} is Fuchsian")
        if kind == "irregular_resonant":
            raise ResonantPointError(f"point {ref!r} is resonant")
    p = spec.dimension
    n = len(refs)
    formal = {ref: formal_data(spec, ref, max(K, poincare_rank(spec, ref)), tol) for ref in refs}
    lams = [formal[ref].Lambda for ref in refs]
    verdicts = [distinct_verdict(lams, tol)]
    if p >= 2:
        verdicts.append(check_ineq_small(lams, n, p - 1, tol, condition="ineq3"))
        pair_fail = []
        for i, lam in enumerate(lams):
            pair_fail += check_pair_conditions(lam, tol, max_den, exempt_congruent=False,
                                               point_index=i).witnesses
        verdicts.append(ConditionVerdict("ineq2", not pair_fail, None, pair_fail,
                                         "every pair of formal exponents"))
    if any(v.holds is not True for v in verdicts):
        return "INCONCLUSIVE", verdicts, None, formal
    flag = simultaneous_triangularize(spec.coefficient_matrices(), tol, rank_tol)
    if flag.success:
        return "SOLVABLE", verdicts, flag, formal
    return "NOT_SOLVABLE", verdicts, flag, formal


def distinct_verdict(lams_per_point, tol: float = 1e-9) -> ConditionVerdict:
    fails = []
    for i, lam in enumerate(lams_per_point):
        for j in range(len(lam)):
            for l in range(j + 1, len(lam)):
                a, c = lam[j], lam[l]
                same = a == c if isinstance(a, QQi) and isinstance(c, QQi) else abs(
                    complex(a) - complex(c)) <= tol * max(1.0, abs(complex(a)))
                if same:
                    fails.append((i, (j, l)))
    return ConditionVerdict("distinct", not fails, None, fails, "formal exponents pairwise distinct")
