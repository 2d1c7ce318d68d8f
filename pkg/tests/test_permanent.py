import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from permpml.permanent import (
    is_doubly_stochastic,
    log_permanent,
    matrix_from_json,
    matrix_to_json,
    permanent_naive,
    permanent_ryser,
)


def test_naive_identity_and_ones():
    assert permanent_naive(np.eye(3)) == 1.0
    assert permanent_naive(np.ones((3, 3))) == 6.0


def test_naive_2x2_formula():
    assert permanent_naive([[1, 2], [3, 4]]) == pytest.approx(1 * 4 + 2 * 3)


def test_naive_guards():
    with pytest.raises(ValueError):
        permanent_naive(np.ones((2, 3)))
    with pytest.raises(ValueError):
        permanent_naive(np.ones((11, 11)))
    with pytest.raises(ValueError):
        permanent_naive([[1.0, -0.5], [0.0, 1.0]])
    with pytest.raises(ValueError):
        permanent_naive([[np.inf, 1.0], [0.0, 1.0]])


def test_ryser_identity_and_ones():
    assert permanent_ryser(np.eye(4)) == pytest.approx(1.0)
    assert permanent_ryser(np.ones((2, 2))) == pytest.approx(2.0)


def test_ryser_guard():
    with pytest.raises(ValueError):
        permanent_ryser(np.ones((25, 25)))


def test_ryser_matches_naive_random_6x6():
    rng = np.random.default_rng(11)
    for _ in range(100):
        m = rng.random((6, 6))
        exact = permanent_naive(m)
        assert permanent_ryser(m) == pytest.approx(exact, rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 6), st.integers(0, 10_000))
def test_ryser_matches_naive_property(n, seed):
    m = np.random.default_rng(seed).random((n, n))
    assert permanent_ryser(m) == pytest.approx(permanent_naive(m), rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(0, 10_000))
def test_permutation_invariance(n, seed):
    rng = np.random.default_rng(seed)
    m = rng.random((n, n))
    p = rng.permutation(n)
    base = permanent_ryser(m)
    assert permanent_ryser(m[p, :]) == pytest.approx(base, rel=1e-12)
    assert permanent_ryser(m[:, p]) == pytest.approx(base, rel=1e-12)


def test_row_scaling_multiplies():
    rng = np.random.default_rng(3)
    m = rng.random((5, 5))
    scaled = m.copy()
    scaled[2] *= 7.5
    assert permanent_ryser(scaled) == pytest.approx(7.5 * permanent_ryser(m), rel=1e-12)


def test_block_diagonal_product():
    rng = np.random.default_rng(4)
    a = rng.random((3, 3))
    b = rng.random((4, 4))
    m = np.zeros((7, 7))
    m[:3, :3] = a
    m[3:, 3:] = b
    assert permanent_ryser(m) == pytest.approx(
        permanent_ryser(a) * permanent_ryser(b), rel=1e-10
    )


def test_log_permanent_values():
    assert log_permanent(np.ones((3, 3))) == pytest.approx(math.log(6))
    assert log_permanent(np.zeros((2, 2))) == -math.inf
    assert log_permanent(np.full((5, 5), 0.5)) == pytest.approx(
        5 * math.log(0.5) + math.log(120)
    )


def test_log_permanent_guard():
    with pytest.raises(ValueError):
        log_permanent(np.ones((25, 25)))


def test_is_doubly_stochastic():
    assert is_doubly_stochastic(np.eye(3), 1e-12)
    assert is_doubly_stochastic(np.full((2, 2), 0.5), 1e-12)
    assert not is_doubly_stochastic([[0.9, 0.1], [0.2, 0.8]], 1e-12)
    assert not is_doubly_stochastic(np.ones((2, 3)), 1e-12)
    with pytest.raises(ValueError):
        is_doubly_stochastic(np.eye(2), 0.0)


def test_matrix_json_round_trip():
    m = np.array([[0.25, 1.5], [3.0, 0.0]])
    text = matrix_to_json(m)
    obj = json.loads(text)
    assert obj["rows"] == 2 and obj["cols"] == 2
    np.testing.assert_array_equal(matrix_from_json(text), m)
    with pytest.raises(ValueError):
        matrix_from_json(json.dumps({"rows": 2, "cols": 2, "data": [1, 2, 3]}))
