import numpy as np
import pytest
import sympy as sp
from scipy.linalg import solve_sylvester

from quadsolv.fixtures import load_system
from quadsolv.formal import (
    FormalData,
    ResonantPointError,
    UnsupportedConfiguration,
    check_theorem2,
    formal_data,
    formal_residual,
)
from quadsolv.numkernel import QQi, is_exact, to_float
from quadsolv.system import INFINITY, laurent_coefficients, make_spec

from _oracles import sym

x = sp.Symbol("x")


def diag_spec(b, lam, a="0"):
    p = len(b)
    lead = [[b[i] if i == j else 0 for j in range(p)] for i in range(p)]
    res = [[lam[i] if i == j else 0 for j in range(p)] for i in range(p)]
    return make_spec(p, [(a, {-2: lead, -1: res})])


def sympy_residual(spec, point_index, data, K):
    """Coefficients 0..K of x^(r+1) F' + F x^(r+1)(Q' + Lambda/x) - x^(r+1) B(a+x) F, by sympy series."""
    r = data.rank
    p = spec.dimension
    pt = spec.points[point_index]
    a = sym(pt.location)
    B = sp.zeros(p, p)
    for other in spec.finite_points:
        c = sym(other.location)
        for o, m in other.tail.items():
            B += sp.Matrix(p, p, lambda i, j: sym(m[i, j])) * (a + x - c) ** o
    for k, m in spec.polynomial.items():
        B += sp.Matrix(p, p, lambda i, j: sym(m[i, j])) * (a + x) ** k
    F = sp.zeros(p, p)
    for k, Fk in enumerate(data.Fhat[: K + 1]):
        F += sp.Matrix(p, p, lambda i, j: sym(Fk[i, j])) * x**k
    q = [sum(sym(data.Q[j, m - 1]) * x ** (-m) for m in range(1, r + 1)) for j in range(p)]
    D = sp.diag(*[sp.expand(x ** (r + 1) * (sp.diff(q[j], x) + sym(data.Lambda[j]) / x)) for j in range(p)])
    E = x ** (r + 1) * F.diff(x) + F * D - sp.expand(x ** (r + 1)) * B * F
    worst = 0.0
    for i in range(p):
        for j in range(p):
            ser = sp.series(sp.together(E[i, j]), x, 0, K + 1).removeO()
            for k in range(K + 1):
                worst = max(worst, abs(complex(sp.N(ser.coeff(x, k)))))
    return worst


# ------------------------------------------------------------ examples

def test_diagonal_example():
    s = diag_spec(["1/3i", "2"], ["1/10i", "-1/10i"])
    fd = formal_data(s, 0, K=6)
    assert fd.exact and fd.rank == 1
    assert (fd.T == np.eye(2, dtype=int)).all()
    assert [complex(v) for v in fd.b] == [1 / 3 * 1j, 2] or [complex(v) for v in fd.b] == [2, 1j / 3]
    # q^j = -b_j / x, Lambda = diagonal residue, F = I
    for j in range(2):
        assert fd.Q[j, 0] == -fd.b[j]
    assert sorted(map(complex, fd.Lambda), key=lambda z: z.imag) == [-0.1j, 0.1j]
    for F in fd.Fhat[1:]:
        assert all(v == 0 for v in F.flat)
    assert formal_residual(s, 0, fd) == 0


def test_leading_coefficient_law_reference_case():
    s = diag_spec(["1", "2"], ["0", "0"])
    fd = formal_data(s, 0)
    assert [fd.Q[j, 0] for j in range(2)] == [QQi(-1), QQi(-2)]
    assert fd.Lambda == [QQi(0), QQi(0)]


def test_epsilon_example_against_sylvester_oracle():
    s = load_system("formal_epsilon")
    fd = formal_data(s, 0, K=8)
    lead, A = laurent_coefficients(s, 0, 3)
    A0, A1 = to_float(A[0]), to_float(A[1])
    # order 1: F1 D0 - A0 F1 = A1 - Lambda with D0 = diag(b); off-diagonal part is a Sylvester equation
    b = np.diag(A0)
    rhs = A1 - np.diag(np.diag(A1))
    F1 = solve_sylvester(-A0, np.diag(b), rhs)
    assert F1[0, 1] == pytest.approx(0.1)
    assert np.allclose(to_float(fd.Fhat[1]) - np.diag(np.diag(to_float(fd.Fhat[1]))), F1, atol=1e-14)
    assert fd.Lambda == [QQi(0), QQi(0)]
    assert formal_residual(s, 0, fd) <= 1e-12


def test_formal_diagonal_fixture_residual_zero():
    s = load_system("formal_diagonal")
    fd = formal_data(s, 0)
    assert formal_residual(s, 0, fd) == 0
    assert sympy_residual(s, 0, fd, 8) == 0


# ------------------------------------------------------------ independent residual oracle

def test_residual_matches_sympy_exact():
    s = make_spec(2, [("0", {-3: [[1, 0], [0, -1]], -2: [["1/2", 1], [2, 0]], -1: [[0, "1/3"], [1, "1/5"]]}),
                      ("1", {-1: [[1, 1], [0, 1]]})])
    fd = formal_data(s, 0, K=5)
    assert fd.exact and fd.rank == 2
    assert sympy_residual(s, 0, fd, 5) == 0
    assert formal_residual(s, 0, fd) == 0


def test_residual_matches_sympy_float_diagonalizer():
    s = make_spec(2, [("0", {-2: [[1, 1], [0, 3]], -1: [["1/2", 0], [1, "1/3"]]}),
                      ("2", {-1: [[0, 1], [1, 0]]})])
    fd = formal_data(s, 0, K=4)
    assert not fd.exact
    ours = formal_residual(s, 0, fd)
    ref = sympy_residual(s, 0, fd, 4)
    assert ours <= 1e-12 and ref <= 1e-10


def test_random_float_residuals(rng):
    for _ in range(10):
        p = int(rng.integers(2, 5))
        r = int(rng.integers(1, 3))
        tail = {-o: rng.normal(size=(p, p)) + 1j * rng.normal(size=(p, p)) for o in range(1, r + 2)}
        s = make_spec(p, [(0j, tail), (2 + 1j, {-1: rng.normal(size=(p, p))})])
        fd = formal_data(s, 0, K=8)
        assert formal_residual(s, 0, fd) <= 1e-10 * (1 + max(np.linalg.norm(m) for m in tail.values())) ** 3


def test_infinity_chart():
    s = make_spec(2, [("0", {-1: [[1, 0], [0, 2]]})], {0: [[1, 0], [1, 3]]})
    fd = formal_data(s, INFINITY, K=6)
    assert fd.rank == 1
    assert formal_residual(s, INFINITY, fd) <= 1e-12


# ------------------------------------------------------------ structural laws

def test_lambda_is_diagonal_of_conjugated_A1(rng):
    for _ in range(10):
        A0 = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        A1 = rng.normal(size=(3, 3))
        s = make_spec(3, [(0j, {-2: A0, -1: A1})])
        fd = formal_data(s, 0)
        T = to_float(fd.T)
        assert np.allclose(np.diag(np.linalg.solve(T, A1 @ T)), np.array(fd.Lambda, complex), atol=1e-10)
        # leading coefficient law: q^j has -b^j / r at x^-r
        assert np.allclose(fd.q_leading(), -np.array(fd.b, complex) / fd.rank)
        assert np.max(np.abs(np.linalg.solve(T, A0 @ T) - np.diag(fd.b))) <= 1e-10


def test_q_constant_term_absent_and_rank2_law():
    s = make_spec(2, [("0", {-3: [[2, 0], [0, 4]], -2: [[1, 0], [0, 1]], -1: [[0, 1], [1, 0]]})])
    fd = formal_data(s, 0)
    assert fd.Q.shape == (2, 2)  # coefficients of x^-1 and x^-2 only
    assert [fd.Q[j, 1] for j in range(2)] == [QQi(-1), QQi(-2)]


def test_uniqueness_and_permutation(rng):
    A0 = np.diag([1.0, 2 + 1j, -1.5])
    A1 = rng.normal(size=(3, 3))
    s = make_spec(3, [(0j, {-2: A0, -1: A1})])
    a, b = formal_data(s, 0), formal_data(s, 0)
    assert np.array_equal(to_float(a.T), to_float(b.T)) and a.Lambda == b.Lambda
    P = np.eye(3)[[2, 0, 1]]
    t = s.conjugate(P, P.T)
    c = formal_data(t, 0)
    assert np.allclose(np.array(a.Lambda, complex), np.array(c.Lambda, complex), atol=1e-12)
    assert np.allclose(to_float(a.Q), to_float(c.Q), atol=1e-12)


def test_gauge_consistency(rng):
    for _ in range(5):
        A0 = np.diag([1.0, 2.0, 3.5]) + np.triu(rng.normal(size=(3, 3)), 1)
        A1 = rng.normal(size=(3, 3))
        s = make_spec(3, [(0j, {-2: A0, -1: A1})])
        C = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        a, c = formal_data(s, 0), formal_data(s.conjugate(C), 0)
        assert np.allclose(np.array(a.Lambda), np.array(c.Lambda), atol=1e-9)
        assert np.allclose(to_float(a.Q), to_float(c.Q), atol=1e-9)
        CT, T2 = C @ to_float(a.T), to_float(c.T)
        for j in range(3):
            u, v = CT[:, j], T2[:, j]
            # columns agree up to a scalar
            assert abs(abs(np.vdot(u, v)) - np.linalg.norm(u) * np.linalg.norm(v)) <= 1e-9 * np.linalg.norm(u)


def test_q_perturbation_raises_residual():
    s = load_system("formal_epsilon")
    fd = formal_data(s, 0)
    base = formal_residual(s, 0, fd)
    Q = to_float(fd.Q).copy()
    Q[0, 0] += 1e-3
    bumped = FormalData(fd.point, fd.rank, fd.b, fd.T, fd.Lambda, Q, fd.Fhat)
    assert formal_residual(s, 0, bumped) >= 1e-4 > base


# ------------------------------------------------------------ errors

def test_errors():
    with pytest.raises(ResonantPointError):
        formal_data(make_spec(2, [("0", {-2: [[0, 1], [0, 0]]})]), 0)
    with pytest.raises(UnsupportedConfiguration):
        formal_data(make_spec(2, [("0", {-1: [[0, 1], [0, 0]]})]), 0)
    with pytest.raises(ValueError):
        formal_data(make_spec(2, [("0", {-3: [[1, 0], [0, 2]]})]), 0, K=1)


@pytest.mark.parametrize("name", ["formal_diagonal", "formal_epsilon", "irregular_diagonal",
                                  "irregular_not_solvable", "irregular_equal_exponents", "scalar_irregular",
                                  "triangular_mixed"])
def test_fixture_residuals(name):
    s = load_system(name)
    from quadsolv.system import classify, singular_points

    for ref in singular_points(s):
        c = classify(s, ref)
        if c.kind != "irregular_nonresonant":
            continue
        for K in range(c.rank, 9):
            fd = formal_data(s, ref, K)
            assert formal_residual(s, ref, fd) <= 1e-12 * (1 + max(np.linalg.norm(to_float(m))
                                                                   for m in s.coefficient_matrices()))


# ------------------------------------------------------------ pairwise leading-term decision

def test_theorem2_diagonal_solvable():
    dec, verdicts, flag, formal = check_theorem2(load_system("irregular_diagonal"))
    assert dec == "SOLVABLE"
    assert np.allclose(flag.C, np.eye(2))
    assert all(v.holds for v in verdicts)
    assert {v.condition for v in verdicts} == {"distinct", "ineq3", "ineq2"}


def test_theorem2_sl2_certificate():
    dec, verdicts, flag, _ = check_theorem2(load_system("irregular_not_solvable"))
    assert dec == "NOT_SOLVABLE"
    assert flag.failure_stage == 0 and flag.certificate


def test_theorem2_equal_exponents_inconclusive():
    dec, verdicts, flag, _ = check_theorem2(load_system("irregular_equal_exponents"))
    assert dec == "INCONCLUSIVE" and flag is None
    bad = [v for v in verdicts if v.holds is not True]
    assert any(v.condition == "distinct" for v in bad)


def test_theorem2_rejects_mixed_settings():
    with pytest.raises(UnsupportedConfiguration):
        check_theorem2(load_system("corollary1_positive"))
    with pytest.raises(ResonantPointError):
        check_theorem2(make_spec(2, [("0", {-2: [[0, 1], [0, 0]]}), ("1", {-2: [[0, -1], [0, 0]]})]))
