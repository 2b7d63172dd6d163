import cmath
import json
import math

import numpy as np
import pytest

from quadsolv.fixtures import load_system
from quadsolv.monodromy import continue_along, plan_loops
from quadsolv.numkernel import QQi, to_float
from quadsolv.quadrature import (
    ZERO,
    Const,
    Integral,
    NotTriangularError,
    PowerProduct,
    check_liouville,
    default_base,
    default_samples,
    eval_matrix,
    eval_quad,
    from_json,
    solve_triangular,
    to_json,
    verify_solution,
)
from quadsolv.system import PoleProximityError, make_spec

DIAG_SPEC = make_spec(2, [("0", {-1: [["1/3", 0], [0, "-1/5i"]]})])
TRI_SPEC = make_spec(2, [("0", {-1: [[0, 1], [0, 1]]})])
SCALAR_IRR = make_spec(1, [("0", {-2: [["3/2"]]})])


def test_diagonal_powers():
    Y = solve_triangular(DIAG_SPEC, z0=1)
    assert Y[1][0] is ZERO and Y[0][1] is ZERO
    assert Y[0][0].powers[0][1] == QQi(1, 0) / 3
    z = 2.5 + 0.5j
    V = eval_matrix(Y, z, 1)
    assert np.allclose(np.diag(V), [z ** (1 / 3), z ** (-0.2j)], rtol=1e-12)


def test_hand_integrated_triangular_example():
    Y = solve_triangular(TRI_SPEC, z0=1)
    V = eval_matrix(Y, 2, 1)
    assert np.allclose(V, [[1, 1], [0, 2]], atol=1e-12)
    z = 3 - 1j
    assert np.allclose(eval_matrix(Y, z, 1), [[1, z - 1], [0, z]], atol=1e-12)


def test_scalar_irregular():
    z0 = 1.0
    Y = solve_triangular(SCALAR_IRR, z0=z0)
    for z in (2.0, 0.5 + 0.5j, 3j):
        assert eval_quad(Y[0][0], z, z0) == pytest.approx(cmath.exp(-1.5 / z + 1.5 / z0), rel=1e-12)


def test_eval_examples():
    assert eval_quad(Const(QQi(3, 1)), 2, 1) == 3 + 1j
    root = PowerProduct(((QQi(0), QQi(1) / 2),), {}, (), 1.0)
    assert eval_quad(root, 4, 1) == pytest.approx(2)
    # principal branch at the base point, continuous along the segment
    assert eval_quad(root, -1 + 1e-9j, -1 + 1e-9j) == pytest.approx(1j, rel=1e-6)


def test_integral_node_against_closed_form():
    # int_1^z w^(1/2) dw = (2/3)(z^(3/2) - 1)
    root = PowerProduct(((QQi(0), QQi(1) / 2),), {}, (), 1.0)
    for z in (4, 2 + 2j, 0.3 - 1j):
        got = eval_quad(Integral(root, 1.0), z, 1.0, rtol=1e-12)
        assert got == pytest.approx(2 / 3 * (z ** 1.5 - 1), rel=1e-10)


def test_path_through_pole():
    Y = solve_triangular(TRI_SPEC, z0=1)
    with pytest.raises(PoleProximityError):
        eval_matrix(Y, -1, 1)


def test_not_triangular():
    with pytest.raises(NotTriangularError):
        solve_triangular(load_system("sl2_residues"))


def test_structural_upper_triangularity():
    s = load_system("triangular_mixed")
    Y = solve_triangular(s)
    for i in range(3):
        for j in range(i):
            assert Y[i][j] is ZERO
        assert isinstance(Y[i][i], PowerProduct)


@pytest.mark.parametrize("spec", [DIAG_SPEC, TRI_SPEC, SCALAR_IRR], ids=["diag", "tri", "scalar"])
def test_examples_reverified(spec):
    z0 = default_base(spec)
    Y = solve_triangular(spec, z0)
    v = verify_solution(spec, Y, z0=z0)
    assert v.holds, v.detail
    assert check_liouville(spec, Y, z0=z0).holds


@pytest.mark.parametrize("name", ["triangular_mixed", "triangular_unipotent", "scalar_irregular",
                                  "irregular_diagonal", "formal_epsilon", "formal_diagonal"])
def test_fixtures_verify(name):
    s = load_system(name)
    Y = solve_triangular(s)
    z0 = default_base(s)
    v = verify_solution(s, Y, z0=z0)
    assert v.holds, v.detail
    lv = check_liouville(s, Y, z0=z0)
    assert lv.holds, lv.detail


def test_verify_detects_wrong_solution():
    Y = solve_triangular(TRI_SPEC, z0=default_base(TRI_SPEC))
    Y[0][1] = Const(QQi(5))
    assert verify_solution(TRI_SPEC, Y).holds is False


def test_liouville_five_samples():
    s = load_system("triangular_mixed")
    z0 = default_base(s)
    samples = default_samples(s, z0, 5)
    assert len(samples) == 5
    assert check_liouville(s, solve_triangular(s), samples, z0).holds


def test_monodromy_of_constructed_solution():
    s = load_system("triangular_unipotent")
    Y = solve_triangular(s)
    plan = plan_loops(s)
    z0 = plan.base
    Y0 = eval_matrix(Y, z0, z0)
    for loop in plan.loops:
        Yend, _ = continue_along(s, loop.pieces, Y0=Y0)
        M = np.linalg.solve(Y0, Yend)
        res = np.diag(to_float(s.points[loop.point].tail[-1]))
        got = sorted(np.linalg.eigvals(M), key=lambda w: (round(w.real, 6), round(w.imag, 6)))
        want = sorted(np.exp(2j * np.pi * res), key=lambda w: (round(w.real, 6), round(w.imag, 6)))
        assert np.allclose(got, want, atol=1e-6)


def test_json_roundtrip():
    s = load_system("triangular_mixed")
    Y = solve_triangular(s)
    doc = to_json(Y)
    text = json.dumps(doc)
    Y2 = from_json(json.loads(text))
    assert to_json(Y2) == doc
    z0 = default_base(s)
    z = z0 + 0.3 + 0.2j
    assert np.array_equal(eval_matrix(Y, z, z0), eval_matrix(Y2, z, z0))


def test_json_shares_nodes():
    Y = solve_triangular(load_system("triangular_mixed"))
    doc = to_json(Y)
    kinds = [n["kind"] for n in doc["nodes"]]
    assert kinds.count("power_product") >= 3
    # the diagonal factors are referenced, not copied, by the integrals above them
    pp = [i for i, n in enumerate(doc["nodes"]) if n["kind"] == "power_product"]
    assert all(doc["matrix"][j][j] in pp for j in range(3))
    assert len({doc["matrix"][j][j] for j in range(3)}) == 3


def test_solution_satisfies_ode_at_random_points(rng):
    for _ in range(5):
        p = 3
        tails = {-1: np.triu(rng.normal(size=(p, p))), -2: np.triu(rng.normal(size=(p, p))) * 0.3}
        s = make_spec(p, [(0j, tails), (2 + 0j, {-1: np.triu(rng.normal(size=(p, p)))})],
                      {0: np.triu(rng.normal(size=(p, p))) * 0.2})
        z0 = default_base(s)
        Y = solve_triangular(s, z0)
        v = verify_solution(s, Y, z0=z0)
        assert v.holds, v.detail
