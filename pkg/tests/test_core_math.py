import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from maxmatch import core_math as cm

finite = st.floats(min_value=-50, max_value=50, allow_nan=False)
vectors = arrays(np.float64, st.integers(1, 12), elements=finite)


def test_dot_examples(rng):
    assert cm.dot([1, 0], [0, 1]) == 0.0
    assert cm.dot([1, 2], [3, 4]) == 11.0
    a = rng.normal(size=7)
    assert cm.dot(a, a) >= 0.0


def test_dot_length_mismatch():
    with pytest.raises(cm.DimensionError):
        cm.dot([1, 2], [1, 2, 3])


def test_softmax_examples():
    np.testing.assert_array_equal(cm.softmax([0.0, 0.0]), [0.5, 0.5])
    big = cm.softmax([1000.0, 0.0])
    assert np.all(np.isfinite(big))
    assert big[0] == pytest.approx(1.0) and big[1] < 1e-300
    z = [1.0, 2.0, 3.0]
    naive = np.exp(z) / np.exp(z).sum()
    np.testing.assert_allclose(cm.softmax(z), naive, rtol=0, atol=1e-12)


@given(vectors)
def test_softmax_normalized(z):
    assert cm.softmax(z).sum() == pytest.approx(1.0, abs=1e-9)


def test_softmax_large_magnitude(rng):
    z = rng.uniform(-1e3, 1e3, size=20)
    assert cm.softmax(z).sum() == pytest.approx(1.0, abs=1e-9)


def test_log_softmax_examples(rng):
    np.testing.assert_allclose(cm.log_softmax([0.0, 0.0]), [-math.log(2)] * 2)
    z = rng.uniform(-20, 20, size=9)
    assert np.exp(cm.log_softmax(z)).sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(cm.log_softmax(z), np.log(cm.softmax(z)), rtol=0, atol=1e-10)
    np.testing.assert_allclose(np.exp(cm.log_softmax(z)), cm.softmax(z), rtol=0, atol=1e-12)


def test_sigmoid_examples(rng):
    assert cm.sigmoid(0.0) == 0.5
    v = cm.log_sigmoid(-745.0)
    assert math.isfinite(v) and v == pytest.approx(-745.0)
    for t in rng.normal(scale=10, size=50):
        assert cm.sigmoid(t) + cm.sigmoid(-t) == pytest.approx(1.0, abs=1e-15)
        assert 0.0 <= cm.sigmoid(t) <= 1.0


@given(finite)
def test_log_sigmoid_identity(t):
    lhs = cm.log_sigmoid(t) + cm.log_sigmoid(-t)
    rhs = -t - 2.0 * cm.softplus(-t)
    assert lhs == pytest.approx(rhs, abs=1e-10)


def test_neg_kl_examples(rng):
    p = cm.softmax(rng.normal(size=5))
    assert cm.neg_kl(p, p) == pytest.approx(0.0, abs=1e-15)
    # frozen from the direct-summation oracle: -ln(5/3)
    assert cm.neg_kl([0.5, 0.5], [0.9, 0.1]) == pytest.approx(-0.5108256237659907, abs=1e-12)
    assert cm.neg_kl([0.5, 0.5], [0.9, 0.1]) == pytest.approx(oracles.neg_kl([0.5, 0.5], [0.9, 0.1]))


def test_neg_kl_gibbs(rng):
    for _ in range(1000):
        n = int(rng.integers(2, 8))
        p, q = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
        assert cm.neg_kl(p, q) <= 1e-15


def test_neg_kl_zero_only_on_equal(rng):
    p = np.array([0.2, 0.3, 0.5])
    assert cm.neg_kl(p, p) == pytest.approx(0.0, abs=1e-15)
    assert cm.neg_kl(p, [0.3, 0.2, 0.5]) < 0.0


def test_neg_kl_handles_zeros():
    v = cm.neg_kl([1.0, 0.0], [0.0, 1.0])
    assert math.isfinite(v) and v < 0.0


def test_neg_kl_length_mismatch():
    with pytest.raises(cm.DimensionError):
        cm.neg_kl([0.5, 0.5], [1.0])


def test_clamp_prob_on_simplex():
    p = cm.clamp_prob([1.0, 0.0, 0.0])
    assert p.min() >= 1e-12 * 0.999
    assert p.sum() == pytest.approx(1.0, abs=1e-9)


def test_logsumexp_examples(rng):
    assert cm.logsumexp([0.0, 0.0]) == pytest.approx(math.log(2))
    assert cm.logsumexp([5.0]) == 5.0
    for _ in range(100):
        z = rng.normal(scale=5, size=int(rng.integers(1, 10)))
        out = cm.logsumexp(z)
        assert z.max() <= out <= z.max() + math.log(z.size) + 1e-12


@given(vectors)
@settings(max_examples=200)
def test_logsumexp_at_least_max(z):
    assert cm.logsumexp(z) >= z.max()


def test_rejects_non_finite():
    with pytest.raises(ValueError):
        cm.softmax([0.0, float("nan")])
