import json
from fractions import Fraction

import numpy as np
import pytest

from quadsolv.numkernel import QQi, exact_matrix, is_exact, is_zero, to_float
from quadsolv.system import (
    INFINITY,
    DimensionError,
    DuplicatePointError,
    IrregularAtInfinity,
    PoleProximityError,
    SchemaError,
    UnknownPointError,
    ZeroLeadingError,
    classify,
    evaluate,
    infinity_is_singular,
    laurent_coefficients,
    make_spec,
    parse_system,
    poincare_rank,
    print_system,
    residue_at_infinity,
    singular_points,
    specs_equal,
)

from _oracles import partial_fraction_eval

E12 = [[0, 1], [0, 0]]


def doc(points, p=2, poly=None):
    out = {"dimension": p, "points": points}
    if poly is not None:
        out["polynomial"] = poly
    return json.dumps(out)


def pt(re, tail, im="0"):
    return {"location": {"re": re, "im": im}, "tail": [{"order": o, "matrix": m} for o, m in tail]}


# ------------------------------------------------------------ rank and kind

def test_poincare_rank_examples():
    s = make_spec(2, [("0", {-1: E12})])
    assert poincare_rank(s, 0) == 0
    s = make_spec(2, [("0", {-2: [[1, 0], [0, 2]], -1: [["1/3", 0], [0, "1/5"]]})])
    assert poincare_rank(s, 0) == 1
    s = make_spec(2, [("0", {-3: E12, -2: [[0, 0], [0, 0]], -1: [[1, 0], [0, 1]]})])
    assert poincare_rank(s, 0) == 2


def test_classify_examples():
    assert classify(make_spec(2, [("0", {-1: E12})]), 0).kind == "fuchsian"
    c = classify(make_spec(2, [("0", {-2: [[1, 0], [0, 2]], -1: [[0, 0], [0, 0]]})]), 0)
    assert (c.rank, c.kind) == (1, "irregular_nonresonant")
    c = classify(make_spec(2, [("0", {-2: E12, -1: [[0, 0], [0, 0]]})]), 0)
    assert (c.rank, c.kind) == (1, "irregular_resonant")


def test_unknown_point():
    s = make_spec(2, [("0", {-1: E12})])
    with pytest.raises(UnknownPointError):
        poincare_rank(s, 5)
    with pytest.raises(UnknownPointError):
        classify(s, "2")


def test_classification_conjugation_invariant(rng):
    for _ in range(10):
        L = np.diag(rng.normal(size=3)) + np.triu(rng.normal(size=(3, 3)), 1)
        C = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        s = make_spec(3, [(0j, {-2: L, -1: rng.normal(size=(3, 3))})])
        assert classify(s, 0) == classify(s.conjugate(C), 0)
    # defective leading terms keep their kind under exact gauge changes
    N = [[0, 1, 2], [0, 0, 3], [0, 0, 0]]
    C = exact_matrix([[1, 2, 0], [0, 1, "1/3"], [0, 0, 1]])
    C_inv = exact_matrix([[1, -2, "2/3"], [0, 1, "-1/3"], [0, 0, 1]])
    assert (C.dot(C_inv) == exact_matrix(np.eye(3, dtype=int).tolist())).all()
    s = make_spec(3, [("0", {-2: N, -1: [[1, 0, 0], [0, 0, 0], [0, 0, 0]]})])
    t = s.conjugate(C, C_inv)
    assert t.exact
    assert classify(s, 0) == classify(t, 0) == classify(s, 0).__class__(1, "irregular_resonant")


# ------------------------------------------------------------ infinity

def test_residue_at_infinity_examples():
    B = [[1, 2], [3, 4]]
    mB = [[-1, -2], [-3, -4]]
    s = make_spec(2, [("0", {-1: B}), ("1", {-1: mB})])
    R = residue_at_infinity(s)
    assert is_exact(R) and is_zero(R)
    assert not infinity_is_singular(s)
    s = make_spec(2, [("0", {-1: [["1/2", 1], [0, 0]]}), ("1", {-1: [["1/2", -1], [0, 0]]})])
    R = residue_at_infinity(s)
    assert (R == exact_matrix([[-1, 0], [0, 0]])).all()
    assert singular_points(s) == [0, 1, INFINITY]


def test_irregular_at_infinity():
    s = make_spec(2, [("0", {-1: E12})], {0: [[1, 0], [0, 2]]})
    with pytest.raises(IrregularAtInfinity) as exc:
        residue_at_infinity(s)
    assert exc.value.rank == 1
    assert poincare_rank(s, INFINITY) == 1


def test_infinity_chart_matches_direct_formula(rng):
    # Bt(w) = -B(1/w)/w^2, compared against the Laurent data at w = 0
    pts = [(0.3 + 0.1j, {-2: rng.normal(size=(2, 2)), -1: rng.normal(size=(2, 2))}),
           (-0.5j, {-1: rng.normal(size=(2, 2))})]
    poly = {0: rng.normal(size=(2, 2)), 1: rng.normal(size=(2, 2))}
    s = make_spec(2, pts, poly)
    lead, A = laurent_coefficients(s, INFINITY, 12)
    assert lead == -3
    w = 0.05 + 0.02j
    series = sum(A[k] * w ** (k + lead) for k in range(12))
    direct = -evaluate(s, 1 / w) / w**2
    assert np.allclose(series, direct, rtol=1e-10)


# ------------------------------------------------------------ evaluation

def test_evaluate_examples():
    s = make_spec(2, [("0", {-1: [[1, 0], [0, 1]]})])
    assert np.allclose(evaluate(s, 2), np.eye(2) / 2)
    A = [[1, 2], [3, 4]]
    s = make_spec(2, [], {0: A})
    assert np.allclose(evaluate(s, 3 + 1j), A)
    B1, B2 = np.array([[1, 2], [0, 1]]), np.array([[0, 1], [5, 1]])
    s = make_spec(2, [("0", {-1: B1}), ("1", {-1: B2})])
    assert np.allclose(evaluate(s, 0.5), 2 * B1 - 2 * B2)


def test_pole_proximity():
    s = make_spec(2, [("0", {-1: E12})])
    with pytest.raises(PoleProximityError):
        evaluate(s, 1e-13)


def _rand_frac_matrix(rng, p):
    return [[Fraction(int(rng.integers(-9, 10)), int(rng.integers(1, 8))) for _ in range(p)] for _ in range(p)]


def test_evaluate_against_partial_fraction_oracle(rng):
    for _ in range(100):
        p = int(rng.integers(1, 4))
        locs = rng.choice(np.arange(-6, 7), size=int(rng.integers(1, 4)), replace=False)
        raw = []
        for a in locs:
            r = int(rng.integers(0, 3))
            tail = {-o: _rand_frac_matrix(rng, p) for o in range(1, r + 2)}
            tail[-(r + 1)][0][0] += 11  # keeps the leading coefficient nonzero
            raw.append((Fraction(int(a), 2), tail))
        poly = {k: _rand_frac_matrix(rng, p) for k in range(int(rng.integers(0, 3)))}
        s = make_spec(p, [(str(a), {o: [[str(x) for x in row] for row in m] for o, m in t.items()})
                          for a, t in raw],
                      {k: [[str(x) for x in row] for row in m] for k, m in poly.items()})
        fl = lambda m: np.array(m, dtype=float)
        z = complex(rng.normal(), rng.normal()) * 3
        ref = partial_fraction_eval([(float(a), {o: fl(m) for o, m in t.items()}) for a, t in raw],
                                    {k: fl(m) for k, m in poly.items()}, z)
        ours = evaluate(s, z)
        assert np.linalg.norm(ours - ref) <= 1e-13 * max(1.0, np.linalg.norm(ref))


def test_laurent_series_reproduces_B(rng):
    s = make_spec(2, [(0j, {-2: rng.normal(size=(2, 2)), -1: rng.normal(size=(2, 2))}),
                      (1 + 1j, {-1: rng.normal(size=(2, 2))})], {2: rng.normal(size=(2, 2))})
    lead, A = laurent_coefficients(s, 0, 25)
    x = 0.1 - 0.05j
    series = sum(A[k] * x ** (k + lead) for k in range(25))
    assert np.allclose(series, evaluate(s, x), rtol=1e-12)


# ------------------------------------------------------------ documents

@pytest.mark.parametrize("text", [
    doc([pt("0", [(-1, [["0", "1"], ["0", "0"]])])]),
    doc([pt("0", [(-2, [["1", "0"], ["0", "2"]]), (-1, [["1/3", "0"], ["0", "-1/4i"]])]),
         pt("1/2", [(-1, [["1", "1"], ["0", "1"]])], im="-1")]),
    doc([pt("0", [(-3, [["0", "1"], ["0", "0"]]), (-2, [["0", "0"], ["0", "0"]]), (-1, [["1", "0"], ["0", "1"]])])],
        poly=[{"order": 0, "matrix": [["1", "0"], ["0", "0"]]}]),
])
def test_roundtrip(text):
    s = parse_system(text)
    assert s.exact
    t = parse_system(print_system(s))
    assert specs_equal(s, t)


def test_float_mode_from_json_numbers():
    s = parse_system(doc([pt("0", [(-1, [[0.5, 1], [0, 0]])])]))
    assert not s.exact
    t = parse_system(print_system(s))
    assert specs_equal(s, t)


@pytest.mark.parametrize("text,err", [
    ("[1, 2]", SchemaError),
    ("{not json", SchemaError),
    (doc([pt("0", [(-1, [["1", "0"], ["0", "1"]])]), pt("0", [(-1, [["1", "0"], ["0", "1"]])])]),
     DuplicatePointError),
    (doc([pt("0", [(-2, [["0", "0"], ["0", "0"]]), (-1, [["1", "0"], ["0", "1"]])])]), ZeroLeadingError),
    (doc([pt("0", [(-1, [["1", "0", "0"], ["0", "1", "0"], ["0", "0", "1"]])])]), DimensionError),
    (doc([pt("0", [(1, [["1", "0"], ["0", "1"]])])]), SchemaError),
    (doc([pt("0", [(-3, [["1", "0"], ["0", "1"]]), (-1, [["1", "0"], ["0", "1"]])])]), SchemaError),
    (doc([pt("0", [(-1, [["x", "0"], ["0", "1"]])])]), SchemaError),
])
def test_schema_errors_are_distinct(text, err):
    with pytest.raises(err):
        parse_system(text)


def test_error_classes_are_distinct():
    classes = {SchemaError, DuplicatePointError, ZeroLeadingError, DimensionError}
    assert len(classes) == 4


def test_declared_infinity_tail_checked():
    base = [pt("0", [(-1, [["1", "0"], ["0", "0"]])])]
    good = base + [{"location": "infinity-check-only", "tail": [{"order": -1, "matrix": [["-1", "0"], ["0", "0"]]}]}]
    s = parse_system(doc(good))
    assert singular_points(s) == [0, INFINITY]
    bad = base + [{"location": "infinity-check-only", "tail": [{"order": -1, "matrix": [["1", "0"], ["0", "0"]]}]}]
    with pytest.raises(SchemaError):
        parse_system(doc(bad))


def test_asserted_exponents_parsed():
    d = json.loads(doc([pt("0", [(-2, [["0", "1"], ["0", "0"]])])]))
    d["points"][0]["asserted_exponents"] = ["1/2", "-1/2"]
    s = parse_system(json.dumps(d))
    assert s.points[0].asserted_exponents == (QQi(Fraction(1, 2)), QQi(Fraction(-1, 2)))
    d["points"][0]["asserted_exponents"] = ["1/2"]
    with pytest.raises(SchemaError):
        parse_system(json.dumps(d))


def test_float_complex_entries_roundtrip():
    s = make_spec(2, [(0.5 + 0j, {-1: np.array([[0.25j, 1], [0, -0.1 + 0.3j]])})])
    text = print_system(s)
    t = parse_system(text)
    assert not t.exact and specs_equal(s, t)
    with pytest.raises(SchemaError):
        parse_system(doc([pt("0", [(-1, [[{"re": "1", "im": 0}, 0], [0, 1]])])]))
