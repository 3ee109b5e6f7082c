import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from adk.core import cosine_matrix, cosine_similarity, normalize, softmax
from adk.errors import DegenerateVectorError, DimensionError, DomainError, EmptyInputError

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_cosine_identity_and_orthogonality():
    e = np.eye(5)
    assert cosine_similarity(e[0], e[0]) == 1.0
    assert cosine_similarity(e[0], e[1]) == 0.0


def test_cosine_diagonal():
    a = np.array([1.0, 1.0, 0.0, 0.0]) / math.sqrt(2)
    assert cosine_similarity(a, np.eye(4)[0]) == pytest.approx(1 / math.sqrt(2), abs=1e-8)


def test_cosine_errors():
    with pytest.raises(DimensionError):
        cosine_similarity(np.ones(3), np.ones(4))
    with pytest.raises(DegenerateVectorError):
        cosine_similarity(np.zeros(3), np.ones(3))
    with pytest.raises(DomainError):
        cosine_similarity([np.nan, 1.0], [1.0, 1.0])


@settings(max_examples=200)
@given(
    arrays(np.float64, 6, elements=finite),
    arrays(np.float64, 6, elements=finite),
    st.floats(1e-3, 1e3),
    st.floats(1e-3, 1e3),
)
def test_cosine_scale_invariant_and_bounded(a, b, alpha, beta):
    if np.linalg.norm(a) < 1e-6 or np.linalg.norm(b) < 1e-6:
        return
    c = cosine_similarity(a, b)
    assert -1.0 <= c <= 1.0
    assert cosine_similarity(alpha * a, beta * b) == pytest.approx(c, abs=1e-12)
    assert cosine_similarity(b, a) == pytest.approx(c, abs=1e-15)


def test_cosine_matrix_matches_scalar(rng):
    a, b = rng.normal(size=(3, 7)), rng.normal(size=(4, 7))
    m = cosine_matrix(a, b)
    for i in range(3):
        for j in range(4):
            assert m[i, j] == pytest.approx(cosine_similarity(a[i], b[j]), abs=1e-14)


def test_softmax_uniform():
    for tau in (0.01, 1.0, 50.0):
        np.testing.assert_allclose(softmax([0.3] * 7, tau), np.full(7, 1 / 7), atol=1e-15)


def test_softmax_two_point():
    # frozen from mpmath: e/(e+1), 1/(e+1)
    np.testing.assert_allclose(softmax([1.0, 0.0], 1.0), [0.7310585786300049, 0.2689414213699951], atol=1e-15)


def test_softmax_no_overflow():
    p = softmax([1000.0, 0.0], 1.0)
    assert np.all(np.isfinite(p))
    assert p[0] == pytest.approx(1.0) and p[1] < 1e-300


def test_softmax_errors():
    with pytest.raises(EmptyInputError):
        softmax([], 1.0)
    with pytest.raises(DomainError):
        softmax([1.0], 0.0)
    with pytest.raises(DomainError):
        softmax([np.inf, 1.0], 1.0)


@settings(max_examples=200)
@given(arrays(np.float64, st.integers(1, 50), elements=finite), st.floats(-100, 100), st.floats(0.01, 10))
def test_softmax_shift_invariance(scores, c, tau):
    p = softmax(scores, tau)
    assert p.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.all((p >= 0) & (p <= 1))
    np.testing.assert_allclose(softmax(scores + c, tau), p, atol=1e-12)


def test_softmax_sums_to_one_long_vector(rng):
    assert softmax(rng.normal(scale=30, size=100_000), 0.5).sum() == pytest.approx(1.0, abs=1e-9)


def test_normalize():
    np.testing.assert_allclose(normalize([3.0, 4.0]), [0.6, 0.8], atol=1e-15)
    u = np.array([0.0, 1.0, 0.0])
    np.testing.assert_allclose(normalize(u), u, atol=1e-9)
    with pytest.raises(DegenerateVectorError):
        normalize([1e-13, 0.0])


def test_normalize_idempotent(rng):
    for _ in range(100):
        x = rng.normal(size=rng.integers(1, 40)) * rng.uniform(1e-3, 1e3)
        once = normalize(x)
        assert np.linalg.norm(once) == pytest.approx(1.0, abs=1e-9)
        np.testing.assert_allclose(normalize(once), once, atol=1e-9)
