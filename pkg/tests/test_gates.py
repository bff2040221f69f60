import numpy as np
import pytest
from hypothesis import given, strategies as st

from logicseq.gates import (
    Gate,
    N_GATES,
    TRUTH_TABLES,
    discrete_eval,
    relaxed_eval,
    relaxed_partials,
    truth_table,
)

CORNERS = [(0, 0), (0, 1), (1, 0), (1, 1)]


def bernoulli_expectation(kind, a, b):
    """Independent oracle: E[g(A,B)] with A~Bern(a), B~Bern(b), enumerated."""
    total = 0.0
    for aa, bb in CORNERS:
        pa = a if aa else 1.0 - a
        pb = b if bb else 1.0 - b
        total += pa * pb * discrete_eval(kind, aa, bb)
    return total


def central_diff(kind, a, b, h=1e-6):
    da = (relaxed_eval(kind, a + h, b) - relaxed_eval(kind, a - h, b)) / (2 * h)
    db = (relaxed_eval(kind, a, b + h) - relaxed_eval(kind, a, b - h)) / (2 * h)
    return da, db


def test_index_truth_table_bijection():
    tables = {truth_table(i) for i in range(N_GATES)}
    assert len(tables) == 16
    for i in range(N_GATES):
        t00, t01, t10, t11 = truth_table(i)
        assert i == t00 + 2 * t01 + 4 * t10 + 8 * t11


def test_canonical_indices():
    assert truth_table(Gate.FALSE) == (0, 0, 0, 0)
    assert truth_table(Gate.AND) == (0, 0, 0, 1)
    assert truth_table(Gate.OR) == (0, 1, 1, 1)
    assert truth_table(Gate.TRUE) == (1, 1, 1, 1)
    assert Gate.FALSE == 0 and Gate.TRUE == 15
    # pass-through gates used by residual init and identity tests
    assert truth_table(Gate.PASS_A) == (0, 0, 1, 1)
    assert truth_table(Gate.PASS_B) == (0, 1, 0, 1)


def test_discrete_eval_examples():
    assert discrete_eval(Gate.AND, 1, 1) == 1
    assert discrete_eval(Gate.FALSE, 1, 0) == 0
    assert discrete_eval(Gate.XOR, 1, 1) == 0


def test_discrete_eval_matches_tables():
    for kind in Gate:
        for p, (a, b) in enumerate(CORNERS):
            assert discrete_eval(kind, a, b) == TRUTH_TABLES[kind, p]


def test_relaxed_examples():
    assert relaxed_eval(Gate.AND, 0.5, 0.5) == 0.25
    assert relaxed_eval(Gate.OR, 0.3, 0.5) == pytest.approx(0.65, abs=1e-12)
    # expectation-oracle value, exact here
    assert relaxed_eval(Gate.XOR, 1.0, 1.0) == bernoulli_expectation(Gate.XOR, 1.0, 1.0) == 0.0
    assert relaxed_eval(Gate.TRUE, 0.2, 0.9) == 1.0


def test_corner_agreement_exact():
    for kind in Gate:
        for a, b in CORNERS:
            assert relaxed_eval(kind, float(a), float(b)) == discrete_eval(kind, a, b)


def test_and_or_reduce_to_stated_formulas_exactly():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        a, b = rng.random(2)
        assert relaxed_eval(Gate.AND, a, b) == a * b
        assert relaxed_eval(Gate.OR, a, b) == a + b - a * b


def test_relaxed_matches_expectation_oracle():
    rng = np.random.default_rng(11)
    for kind in Gate:
        for _ in range(50):
            a, b = rng.random(2)
            assert relaxed_eval(kind, a, b) == pytest.approx(
                bernoulli_expectation(kind, a, b), abs=1e-12
            )


def test_symmetry_count_eight_ones_per_corner():
    for p in range(4):
        assert int(TRUTH_TABLES[:, p].sum()) == 8


@given(
    st.floats(min_value=0.0, max_value=1.0),
    st.floats(min_value=0.0, max_value=1.0),
    st.integers(min_value=0, max_value=15),
)
def test_range_property(a, b, kind):
    v = relaxed_eval(kind, a, b)
    assert 0.0 <= v <= 1.0


def test_partials_examples():
    assert relaxed_partials(Gate.AND, 0.3, 0.7) == (0.7, 0.3)
    assert relaxed_partials(Gate.FALSE, 0.4, 0.9) == (0.0, 0.0)
    da, db = relaxed_partials(Gate.XOR, 0.5, 0.5)
    fa, fb = central_diff(Gate.XOR, 0.5, 0.5)
    assert da == pytest.approx(fa, abs=1e-9) and da == 0.0
    assert db == pytest.approx(fb, abs=1e-9) and db == 0.0


def test_partials_match_central_differences():
    h = 1e-6
    rng = np.random.default_rng(3)
    for kind in Gate:
        pts = rng.uniform(h, 1 - h, size=(100, 2))
        for a, b in pts:
            da, db = relaxed_partials(kind, a, b)
            fa, fb = central_diff(kind, a, b, h)
            for analytic, numeric in ((da, fa), (db, fb)):
                denom = max(1.0, abs(analytic), abs(numeric))
                assert abs(analytic - numeric) / denom < 1e-6


def test_relaxed_eval_rejects_out_of_range_in_debug():
    with pytest.raises(AssertionError):
        relaxed_eval(Gate.AND, 1.5, 0.5)


def test_vectorised_forms_agree_with_scalar():
    rng = np.random.default_rng(5)
    a = rng.random(64)
    b = rng.random(64)
    for kind in Gate:
        v = np.asarray(relaxed_eval(kind, a, b))
        da, db = (np.asarray(p) for p in relaxed_partials(kind, a, b))
        assert v.shape == (64,)
        assert da.shape == (64,) and db.shape == (64,)
        for i in (0, 17, 63):
            assert v[i] == relaxed_eval(kind, a[i], b[i])
            sa, sb = relaxed_partials(kind, a[i], b[i])
            assert da[i] == sa and db[i] == sb
