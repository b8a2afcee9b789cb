import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedquant.distlaw import w1_quantile
from fedquant.harness import metrics as mt


def sorted_rows(rng, P, K):
    return np.sort(rng.normal(size=(P, K)) * 2, axis=1)


def test_probe_metric_examples():
    rng = np.random.default_rng(0)
    q = sorted_rows(rng, 5, 6)
    assert mt.probe_metric_d(q, q) == 0.0
    shifted = q.copy()
    shifted[3] += 0.75
    assert mt.probe_metric_d(q, shifted) == pytest.approx(0.75, abs=1e-12)
    for _ in range(50):
        a, b = sorted_rows(rng, 5, 6), sorted_rows(rng, 5, 6)
        assert mt.probe_metric_d(a, b) == max(w1_quantile(a[i], b[i]) for i in range(5))
    with pytest.raises(ValueError):
        mt.probe_metric_d(q, q[:4])


@given(st.integers(0, 10_000))
@settings(max_examples=60, deadline=None)
def test_probe_metric_axioms(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (sorted_rows(rng, 4, 5) for _ in range(3))
    d = mt.probe_metric_d
    assert d(a, b) == d(b, a) >= 0
    assert d(a, c) <= d(a, b) + d(b, c) + 1e-12


def test_output_drift_examples():
    rng = np.random.default_rng(1)
    q = sorted_rows(rng, 6, 21)
    assert mt.output_drift(q, q) == 0.0
    assert mt.output_drift(q + 1.0, q) == pytest.approx(21.0)
    r = sorted_rows(rng, 6, 21)
    assert mt.output_drift(q, r) == mt.output_drift(r, q)


def test_count_modes():
    assert mt.count_modes(np.linspace(0, 1, 21)) == 1
    two = np.r_[np.linspace(-1, -0.5, 10), 1.7, np.linspace(4, 4.6, 10)]
    assert mt.count_modes(two) == 2
    three = np.r_[np.linspace(0, 0.2, 7), np.linspace(3, 3.2, 7), np.linspace(6, 6.2, 7)]
    assert mt.count_modes(three) == 3
    assert mt.count_modes([2.0]) == 1


def test_sign_test_binomial_tail():
    better = np.zeros(10)
    worse = np.r_[np.ones(8), -np.ones(2)]
    t = mt.sign_test(better, worse)
    assert (t.wins, t.n) == (8, 10)
    assert t.p_value == pytest.approx(56 / 1024)
    assert mt.sign_test(np.zeros(3), np.zeros(3)).p_value == 1.0


def test_sample_probe_deterministic():
    visited = np.array([5, 3, 3, 9, 1, 7, 5, 2])
    a = mt.sample_probe(visited, 4, seed=3)
    b = mt.sample_probe(visited, 4, seed=3)
    np.testing.assert_array_equal(a.points, b.points)
    assert len(set(a.points.tolist())) == 4 and set(a.points.tolist()) <= set(visited.tolist())
    assert len(mt.sample_probe(visited, 20, seed=0)) == 20
    with pytest.raises(ValueError):
        mt.ProbeSet(np.array([]), 0)
