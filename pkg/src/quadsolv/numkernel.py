"""Scalar and small dense matrix kernel.

Two arithmetic modes are supported.  Exact matrices are numpy arrays of
``dtype=object`` holding :class:`QQi` (Gaussian rationals); float matrices
are ``complex128`` arrays.  Conversion exact -> float is always allowed, the
reverse is not.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational

import numpy as np
import scipy.linalg

MAX_DIM = 16
DEFAULT_TOL = 1e-9


class QQi:
    """Exact complex number ``re + im*i`` with rational parts."""

    __slots__ = ("re", "im")

    def __init__(self, re=0, im=0):
        self.re = Fraction(re)
        self.im = Fraction(im)

    @classmethod
    def coerce(cls, value) -> "QQi":
        if isinstance(value, QQi):
            return value
        if isinstance(value, (int, Rational)):
            return cls(value)
        raise TypeError(f"cannot convert {type(value).__name__} to an exact scalar")

    def __add__(self, other):
        try:
            o = QQi.coerce(other)
        except TypeError:
            return NotImplemented
        return QQi(self.re + o.re, self.im + o.im)

    __radd__ = __add__

    def __neg__(self):
        return QQi(-self.re, -self.im)

    def __sub__(self, other):
        try:
            o = QQi.coerce(other)
        except TypeError:
            return NotImplemented
        return QQi(self.re - o.re, self.im - o.im)

    def __rsub__(self, other):
        try:
            o = QQi.coerce(other)
        except TypeError:
            return NotImplemented
        return o - self

    def __mul__(self, other):
        try:
            o = QQi.coerce(other)
        except TypeError:
            return NotImplemented
        return QQi(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)

    __rmul__ = __mul__

    def __truediv__(self, other):
        try:
            o = QQi.coerce(other)
        except TypeError:
            return NotImplemented
        d = o.re * o.re + o.im * o.im
        if d == 0:
            raise ZeroDivisionError("division by exact zero")
        return QQi((self.re * o.re + self.im * o.im) / d, (self.im * o.re - self.re * o.im) / d)

    def __rtruediv__(self, other):
        try:
            o = QQi.coerce(other)
        except TypeError:
            return NotImplemented
        return o / self

    def __pow__(self, n: int):
        if not isinstance(n, int):
            return NotImplemented
        if n < 0:
            return QQi(1) / (self ** (-n))
        out, base = QQi(1), self
        while n:
            if n & 1:
                out = out * base
            base = base * base
            n >>= 1
        return out

    def __eq__(self, other):
        if isinstance(other, QQi):
            return self.re == other.re and self.im == other.im
        if isinstance(other, (int, Rational)):
            return self.im == 0 and self.re == other
        return NotImplemented

    def __hash__(self):
        return hash((self.re, self.im))

    def __bool__(self):
        return bool(self.re) or bool(self.im)

    def __complex__(self):
        return complex(float(self.re), float(self.im))

    def conjugate(self):
        return QQi(self.re, -self.im)

    @property
    def real(self):
        return self.re

    @property
    def imag(self):
        return self.im

    def __abs__(self):
        return abs(complex(self))

    def __repr__(self):
        return f"QQi({self.re}, {self.im})"

    def __str__(self):
        return format_exact(self)


_NUM = r"[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?(?:/\d+)?"
_FULL_RE = re.compile(rf"^(?P<re>{_NUM})(?:(?P<im>[+-](?:{_NUM})?)\*?i)?$")
_IMAG_RE = re.compile(rf"^(?P<im>[+-]?(?:{_NUM})?)\*?i$")


def _imag_value(txt: str) -> Fraction:
    if txt in ("", "+"):
        return Fraction(1)
    if txt == "-":
        return Fraction(-1)
    return Fraction(txt)


def parse_scalar(text: str) -> QQi:
    """Parse ``"p/q"``, ``"0.125"``, ``"a/b+c/d i"``, ``"-i"`` ... into a :class:`QQi`."""
    s = str(text).replace(" ", "").replace("j", "i")
    m = _FULL_RE.match(s)
    if m is not None:
        im = m.group("im")
        return QQi(Fraction(m.group("re")), _imag_value(im) if im is not None else 0)
    m = _IMAG_RE.match(s)
    if m is not None:
        return QQi(0, _imag_value(m.group("im")))
    raise ValueError(f"malformed scalar {text!r}")


def format_exact(x: QQi) -> str:
    if x.im == 0:
        return str(x.re)
    im = "" if abs(x.im) == 1 else str(abs(x.im))
    if x.re == 0:
        return f"{'-' if x.im < 0 else ''}{im}i"
    return f"{x.re}{'-' if x.im < 0 else '+'}{im}i"


def format_float(z: complex) -> str:
    z = complex(z)
    return f"{z.real:.17g}{'-' if z.imag < 0 or str(z.imag).startswith('-') else '+'}{abs(z.imag):.17g}i"


def format_scalar(x) -> str:
    return format_exact(x) if isinstance(x, QQi) else format_float(x)


# ---------------------------------------------------------------- matrices

def is_exact(M) -> bool:
    return isinstance(M, np.ndarray) and M.dtype == object


def exact_matrix(rows) -> np.ndarray:
    """Build an exact matrix from nested sequences of ints/Fractions/QQi/strings."""
    arr = np.array(rows, dtype=object)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    out = np.empty(arr.shape, dtype=object)
    for idx, v in np.ndenumerate(arr):
        out[idx] = parse_scalar(v) if isinstance(v, str) else QQi.coerce(v)
    return out


def to_float(M) -> np.ndarray:
    if is_exact(M):
        return np.vectorize(complex, otypes=[complex])(M) if M.size else np.zeros(M.shape, complex)
    return np.asarray(M, dtype=complex)


def to_exact(M) -> np.ndarray:
    if is_exact(M):
        return M
    raise TypeError("float matrices cannot be converted to exact mode")


def exact_identity(p: int) -> np.ndarray:
    out = np.empty((p, p), dtype=object)
    for i in range(p):
        for j in range(p):
            out[i, j] = QQi(1 if i == j else 0)
    return out


def exact_zeros(shape) -> np.ndarray:
    out = np.empty(shape, dtype=object)
    for idx in np.ndindex(*shape):
        out[idx] = QQi(0)
    return out


def check_square(M, name: str = "matrix") -> int:
    if not isinstance(M, np.ndarray) or M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be a square 2-d array, got shape {getattr(M, 'shape', None)}")
    p = M.shape[0]
    if p > MAX_DIM:
        raise ValueError(f"{name} dimension {p} exceeds the limit {MAX_DIM}")
    if p == 0:
        raise ValueError(f"{name} is empty")
    return p


def exact_trace(M):
    check_square(M)
    tr = QQi(0)
    for i in range(M.shape[0]):
        tr = tr + M[i, i]
    return tr


def is_zero(M) -> bool:
    if is_exact(M):
        return not any(bool(x) for x in M.flat)
    return not np.any(np.asarray(M) != 0)


def norm2(M) -> float:
    A = to_float(M)
    if A.size == 0:
        return 0.0
    return float(np.linalg.norm(A, 2))


# ------------------------------------------------------- exact polynomials
# Polynomials are lists of QQi coefficients, lowest degree first.

def _poly_trim(a):
    a = list(a)
    while len(a) > 1 and not a[-1]:
        a.pop()
    return a


def _poly_divmod(a, b):
    a, b = _poly_trim(a), _poly_trim(b)
    if len(b) == 1 and not b[0]:
        raise ZeroDivisionError("polynomial division by zero")
    if len(a) < len(b):
        return [QQi(0)], a
    q = [QQi(0)] * (len(a) - len(b) + 1)
    r = list(a)
    lead = b[-1]
    for k in range(len(a) - len(b), -1, -1):
        c = r[k + len(b) - 1] / lead
        q[k] = c
        if c:
            for j, bj in enumerate(b):
                r[k + j] = r[k + j] - c * bj
    return _poly_trim(q), _poly_trim(r[: len(b) - 1] or [QQi(0)])


def _poly_gcd(a, b):
    a, b = _poly_trim(a), _poly_trim(b)
    while not (len(b) == 1 and not b[0]):
        a, b = b, _poly_divmod(a, b)[1]
    lead = a[-1]
    return [c / lead for c in a]


def _poly_deriv(a):
    return _poly_trim([a[k] * k for k in range(1, len(a))] or [QQi(0)])


def charpoly(M) -> list:
    """Monic characteristic polynomial det(xI - M) of an exact matrix (Faddeev-LeVerrier)."""
    p = check_square(M)
    M = to_exact(M)
    coeffs = [QQi(0)] * (p + 1)
    coeffs[p] = QQi(1)
    Mk = exact_zeros((p, p))
    ident = exact_identity(p)
    c = QQi(1)
    for k in range(1, p + 1):
        Mk = M.dot(Mk + ident * c) if k > 1 else M.copy()
        c = -exact_trace(Mk) / k
        coeffs[p - k] = c
    return coeffs


def _poly_sub(a, b):
    n = max(len(a), len(b))
    a = list(a) + [QQi(0)] * (n - len(a))
    b = list(b) + [QQi(0)] * (n - len(b))
    return _poly_trim([x - y for x, y in zip(a, b)])


def _squarefree_factors(f):
    """Yun's algorithm: returns [(a_i, i)] with f = prod a_i**i for monic f."""
    f = _poly_trim(f)
    fp = _poly_deriv(f)
    a0 = _poly_gcd(f, fp)
    b = _poly_divmod(f, a0)[0]
    c = _poly_divmod(fp, a0)[0]
    d = _poly_sub(c, _poly_deriv(b))
    out = []
    i = 1
    while len(b) > 1:
        a = _poly_gcd(b, d)
        b = _poly_divmod(b, a)[0]
        c = _poly_divmod(d, a)[0]
        d = _poly_sub(c, _poly_deriv(b))
        if len(a) > 1:
            out.append((a, i))
        i += 1
    return out


def _poly_eval(a, x):
    out = QQi(0) if isinstance(x, QQi) else 0j
    for c in reversed(a):
        out = out * x + (c if isinstance(x, QQi) else complex(c))
    return out


def _numeric_roots(a) -> list[complex]:
    coeffs = [complex(c) for c in reversed(_poly_trim(a))]
    roots = np.roots(coeffs) if len(coeffs) > 1 else np.array([], complex)
    dcoeffs = np.polyder(np.array(coeffs))
    polished = []
    for r in roots:
        for _ in range(3):
            d = np.polyval(dcoeffs, r)
            if d == 0:
                break
            r = r - np.polyval(coeffs, r) / d
        polished.append(complex(r))
    return polished


def exact_spectrum(M, max_den: int = 10**6) -> list[tuple[object, int]]:
    """Eigenvalues of an exact matrix with exact multiplicities.

    Roots recognised as Gaussian rationals (verified by exact evaluation of the
    characteristic polynomial) are returned as :class:`QQi`, the rest as
    ``complex``.  The list is sorted by (real, imag).
    """
    out = []
    for factor, mult in _squarefree_factors(charpoly(M)):
        remaining = factor
        for r in _numeric_roots(factor):
            cand = QQi(Fraction(r.real).limit_denominator(max_den),
                       Fraction(r.imag).limit_denominator(max_den))
            if len(remaining) > 1 and not _poly_eval(remaining, cand):
                out.append((cand, mult))
                remaining = _poly_divmod(remaining, [-cand, QQi(1)])[0]
            else:
                out.append((r, mult))
    out.sort(key=lambda t: (float(complex(t[0]).real), float(complex(t[0]).imag)))
    return out


# ------------------------------------------------------------- eigenvalues

def cluster_values(values, radius: float) -> list[tuple[complex, int]]:
    """Single-linkage clusters of complex values; returns (mean, size) sorted by (re, im)."""
    vals = [complex(v) for v in values]
    n = len(vals)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if abs(vals[i] - vals[j]) <= radius:
                parent[find(i)] = find(j)
    groups: dict[int, list[complex]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(vals[i])
    out = [(complex(np.mean(g)), len(g)) for g in groups.values()]
    out.sort(key=lambda t: (t[0].real, t[0].imag))
    return out


def eigenvalue_clusters(M, tol: float = DEFAULT_TOL) -> list[tuple[complex, int]]:
    """Eigenvalues as (value, multiplicity) pairs.

    Exact input gets exact multiplicities from a square-free factorisation of
    the characteristic polynomial; float input is clustered at ``tol * ||M||``.
    """
    check_square(M)
    if is_exact(M):
        return [(complex(v), m) for v, m in exact_spectrum(M)]
    A = to_float(M)
    scale = norm2(A)
    if scale == 0.0:
        return [(0j, A.shape[0])]
    return cluster_values(np.linalg.eigvals(A), tol * scale)


def eigenvalues(M, tol: float = DEFAULT_TOL) -> np.ndarray:
    """The p eigenvalues of ``M`` with multiplicity, clustered values merged."""
    out = []
    for v, m in eigenvalue_clusters(M, tol):
        out.extend([v] * m)
    return np.array(out, dtype=complex)


# ----------------------------------------------------------------- subspaces

@dataclass(frozen=True)
class Subspace:
    ambient_dim: int
    basis: np.ndarray  # ambient_dim x dim; orthonormal columns (float) or reduced (exact)
    exact: bool = False

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    def projector(self) -> np.ndarray:
        B = to_float(self.basis)
        if self.exact and self.dim:
            B, _ = np.linalg.qr(B)
        return B @ B.conj().T


def _exact_rref(M):
    A = M.copy()
    rows, cols = A.shape
    pivots = []
    r = 0
    for c in range(cols):
        piv = next((i for i in range(r, rows) if A[i, c]), None)
        if piv is None:
            continue
        A[[r, piv]] = A[[piv, r]]
        lead = A[r, c]
        A[r] = np.array([x / lead for x in A[r]], dtype=object)
        for i in range(rows):
            if i != r and A[i, c]:
                f = A[i, c]
                A[i] = np.array([a - f * b for a, b in zip(A[i], A[r])], dtype=object)
        pivots.append(c)
        r += 1
        if r == rows:
            break
    return A, pivots


def _exact_nullspace(M) -> np.ndarray:
    rows, cols = M.shape
    R, pivots = _exact_rref(M)
    free = [c for c in range(cols) if c not in pivots]
    basis = exact_zeros((cols, len(free)))
    for k, f in enumerate(free):
        basis[f, k] = QQi(1)
        for i, pc in enumerate(pivots):
            basis[pc, k] = -R[i, f]
    return basis


def kernel_basis(M, tol: float = 1e-10) -> Subspace:
    """Kernel of ``M``: exact nullspace or singular directions below ``tol * sigma_max``."""
    if not isinstance(M, np.ndarray) or M.ndim != 2:
        raise ValueError("kernel_basis expects a 2-d array")
    n = M.shape[1]
    if is_exact(M):
        return Subspace(n, _exact_nullspace(M), exact=True)
    A = to_float(M)
    if A.shape[0] == 0:
        return Subspace(n, np.eye(n, dtype=complex))
    _, s, vh = np.linalg.svd(A)
    smax = s[0] if s.size else 0.0
    if smax == 0.0:
        return Subspace(n, np.eye(n, dtype=complex))
    rank = int(np.sum(s > tol * smax))
    return Subspace(n, vh[rank:].conj().T.copy())


def intersect(U: Subspace, V: Subspace, tol: float = 1e-10) -> Subspace:
    if U.ambient_dim != V.ambient_dim:
        raise ValueError(f"ambient dimension mismatch: {U.ambient_dim} vs {V.ambient_dim}")
    n = U.ambient_dim
    if U.exact and V.exact:
        if U.dim == 0 or V.dim == 0:
            return Subspace(n, exact_zeros((n, 0)), exact=True)
        stacked = np.hstack([U.basis, -V.basis])
        K = _exact_nullspace(stacked)
        W = U.basis.dot(K[: U.dim]) if K.shape[1] else exact_zeros((n, 0))
        # basis of the column space of W
        if W.shape[1] == 0:
            return Subspace(n, W, exact=True)
        R, piv = _exact_rref(W.T.copy())
        return Subspace(n, R[: len(piv)].T.copy(), exact=True)
    eye = np.eye(n)
    stacked = np.vstack([eye - U.projector(), eye - V.projector()])
    _, s, vh = np.linalg.svd(stacked)
    # singular values of the stacked complements are 0 on U cap V, O(1) elsewhere
    keep = s <= max(tol, 1e-12) * 10 * max(1.0, s[0] if s.size else 1.0)
    return Subspace(n, vh[keep].conj().T.copy())


# ------------------------------------------------------------ exponential

def matrix_exp(M) -> np.ndarray:
    check_square(M)
    return scipy.linalg.expm(to_float(M))
