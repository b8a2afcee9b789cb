import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedquant import distlaw as dl


def monotone(rng, K, scale=3.0):
    return np.sort(rng.normal(size=K) * scale)


def matching_w1(a, b):
    """Min-cost perfect matching between two equal-size uniform supports."""
    return min(np.mean(np.abs(a - b[list(p)])) for p in itertools.permutations(range(len(b))))


def grid_objective_min(points, beta, step=1e-3):
    grid = np.arange(points.min(), points.max() + step, step)
    return float(np.min(np.abs(grid[:, None] - points[None, :]) @ beta))


finite = st.floats(min_value=-50, max_value=50, allow_nan=False, allow_infinity=False)
sorted_vec = st.lists(finite, min_size=1, max_size=8).map(lambda v: np.sort(np.array(v)))


# -- levels / lift -------------------------------------------------------------

def test_levels_midpoints():
    tau = dl.QuantileLevels(4).tau
    np.testing.assert_allclose(tau, [0.125, 0.375, 0.625, 0.875])
    assert np.all(np.diff(tau) > 0) and tau[0] > 0 and tau[-1] < 1


@pytest.mark.parametrize("bad", [0, -3, 2.5])
def test_levels_reject_bad_k(bad):
    with pytest.raises(ValueError):
        dl.QuantileLevels(bad)


def test_lift_examples():
    law = dl.lift([1.0])
    assert law.atoms.tolist() == [1.0] and law.weights.tolist() == [1.0]
    law = dl.lift([0.0, 0.0])
    assert law.cdf(-1e-12) == 0.0 and law.cdf(0.0) == 1.0
    law = dl.lift([-1, 0, 2])
    np.testing.assert_allclose(law.weights, [1 / 3] * 3)
    assert sorted(law.atoms.tolist()) == [-1.0, 0.0, 2.0]


def test_lift_empty_raises():
    with pytest.raises(ValueError):
        dl.lift([])


# -- W1 -----------------------------------------------------------------------

def test_w1_examples():
    a = np.array([-1.0, 0.5, 3.0])
    assert dl.w1_quantile(a, a) == 0.0
    assert dl.w1_quantile([0, 0], [1, 1]) == 1.0
    with pytest.raises(ValueError):
        dl.w1_quantile([0, 1], [0, 1, 2])


def test_w1_matches_exhaustive_matching():
    rng = np.random.default_rng(11)
    for _ in range(300):
        K = int(rng.integers(1, 7))
        a, b = monotone(rng, K), monotone(rng, K)
        assert abs(dl.w1_quantile(a, b) - matching_w1(a, b)) <= 1e-12


def test_w1_matches_cdf_oracle():
    rng = np.random.default_rng(12)
    for _ in range(1000):
        K = int(rng.integers(1, 7))
        a, b = monotone(rng, K), monotone(rng, K)
        oracle = dl.wp_bruteforce(dl.lift(a), dl.lift(b), 1)
        assert abs(dl.w1_quantile(a, b) - oracle) <= 1e-9


@given(sorted_vec, st.data())
@settings(max_examples=200, deadline=None)
def test_w1_metric_axioms(a, data):
    K = a.size
    b = np.sort(np.array(data.draw(st.lists(finite, min_size=K, max_size=K))))
    c = np.sort(np.array(data.draw(st.lists(finite, min_size=K, max_size=K))))
    ab, ba = dl.w1_quantile(a, b), dl.w1_quantile(b, a)
    assert ab >= 0 and ab == ba
    assert dl.w1_quantile(a, c) <= ab + dl.w1_quantile(b, c) + 1e-12
    assert dl.w1_quantile(a, a) == 0


# -- brute-force oracle ---------------------------------------------------------

def test_oracle_examples():
    d0, d1 = dl.lift([0.0]), dl.lift([1.0])
    assert dl.wp_bruteforce(d0, d0, 1) == 0
    assert dl.wp_bruteforce(d0, d1, 1) == pytest.approx(1.0)
    assert dl.wp_bruteforce(d0, d1, 2) == pytest.approx(1.0)


def test_oracle_lp_and_cdf_agree_at_p1():
    rng = np.random.default_rng(3)
    for _ in range(30):
        a = dl.EmpiricalLaw(rng.normal(size=4), rng.dirichlet(np.ones(4)))
        b = dl.EmpiricalLaw(rng.normal(size=5), rng.dirichlet(np.ones(5)))
        assert dl.wp_bruteforce(a, b, 1) == pytest.approx(dl._wp_linprog(a, b, 1.0), abs=1e-8)


def test_oracle_w2_quantile_pairing():
    # equal-size uniform supports: W2 is the RMS of index-paired differences
    rng = np.random.default_rng(4)
    for _ in range(20):
        a, b = monotone(rng, 5), monotone(rng, 5)
        expected = math.sqrt(np.mean((a - b) ** 2))
        assert dl.wp_bruteforce(dl.lift(a), dl.lift(b), 2) == pytest.approx(expected, abs=1e-7)


def test_oracle_rejects_large_support():
    with pytest.raises(ValueError):
        dl.wp_bruteforce(dl.lift(np.arange(7.0)), dl.lift(np.arange(6.0)), 2)


# -- CVaR -----------------------------------------------------------------------

def test_cvar_examples():
    vals = np.arange(1.0, 11.0)
    assert dl.cvar_lower(np.full(5, 2.5), 0.3) == 2.5
    assert dl.cvar_lower(vals, 0.1) == 1.0
    assert dl.cvar_lower(vals, 0.25) == 1.5
    assert dl.cvar_lower(vals, 0.01) == 1.0  # no level qualifies: lowest quantile


@pytest.mark.parametrize("alpha", [0.0, -0.1, 1.5])
def test_cvar_rejects_alpha(alpha):
    with pytest.raises(ValueError):
        dl.cvar_lower([0.0, 1.0], alpha)


def test_tail_count_guards_float_products():
    assert dl.tail_count(100, 0.29) == 29
    assert dl.tail_count(10, 0.3) == 3
    assert dl.tail_count(21, 0.1) == 2


@given(sorted_vec, st.floats(min_value=1e-3, max_value=1.0))
@settings(max_examples=300, deadline=None)
def test_cvar_below_mean(q, alpha):
    assert dl.cvar_lower(q, alpha) <= q.mean() + 1e-9
    assert dl.cvar_lower(q, 1.0) == pytest.approx(q.mean(), abs=1e-12)


def test_cvar_custom_tail_weights():
    vals = np.arange(1.0, 11.0)
    assert dl.cvar_lower(vals, 0.3, tail_weights=[0.5, 0.5, 0.0]) == 1.5
    with pytest.raises(ValueError):
        dl.cvar_lower(vals, 0.3, tail_weights=[0.5, 0.5])


def test_cvar_batched_rows():
    q = np.array([[0.0, 1.0, 2.0, 3.0], [5.0, 5.0, 6.0, 9.0]])
    np.testing.assert_allclose(dl.cvar_lower(q, 0.5), [0.5, 5.0])


# -- risk weights -----------------------------------------------------------------

def test_risk_weights_examples():
    np.testing.assert_allclose(dl.risk_weights([3.0, -1.0, 7.0], 0.0).beta, [1 / 3] * 3)
    np.testing.assert_allclose(dl.risk_weights([0, 0, 0], 5.0).beta, [1 / 3] * 3)
    np.testing.assert_allclose(dl.risk_weights([1, 0], math.log(2)).beta, [2 / 3, 1 / 3], atol=1e-15)


def test_risk_weights_overflow_safe():
    beta = dl.risk_weights([1e6, 0.0], 10.0).beta
    np.testing.assert_allclose(beta, [1.0, 0.0])


@given(st.lists(finite, min_size=1, max_size=10), st.floats(min_value=0, max_value=20))
@settings(max_examples=300, deadline=None)
def test_risk_weights_monotone(scores, lam):
    beta = dl.risk_weights(scores, lam).beta
    assert abs(beta.sum() - 1) <= 1e-12 and np.all(beta >= 0)
    s = np.asarray(scores)
    for i, j in itertools.product(range(s.size), repeat=2):
        if s[i] > s[j]:
            assert beta[i] >= beta[j]


# -- weighted median / barycenter ------------------------------------------------------

def test_weighted_median_examples():
    assert dl.weighted_median([5.0], [1.0]) == 5.0
    assert dl.weighted_median([0.0, 10.0], [0.5, 0.5]) == 0.0
    assert dl.weighted_median([0.0, 1.0, 10.0], [0.2, 0.5, 0.3]) == 1.0
    assert dl.weighted_median([10.0, 0.0], dl.RiskWeights([0.5, 0.5])) == 0.0


def test_weighted_median_beats_grid_search():
    rng = np.random.default_rng(5)
    for _ in range(200):
        n = int(rng.integers(1, 6))
        pts = rng.normal(size=n) * 2
        beta = rng.dirichlet(np.ones(n))
        med = dl.weighted_median(pts, beta)
        obj = float(np.abs(med - pts) @ beta)
        assert obj <= grid_objective_min(pts, beta) + 1e-3


def test_barycenter_examples():
    law = np.array([0.0, 1.0, 4.0])
    np.testing.assert_array_equal(dl.w1_barycenter([law], [1.0]), law)
    np.testing.assert_array_equal(dl.w1_barycenter([law, law, law], [0.2, 0.3, 0.5]), law)
    with pytest.raises(ValueError):
        dl.w1_barycenter([[0.0, 1.0], [0.0, 1.0, 2.0]], [0.5, 0.5])


def test_barycenter_bimodal_beats_quantile_average():
    a = np.array([0.0, 0.0, 1.0, 1.0])
    b = np.array([0.0, 0.0, 3.0, 3.0])
    c = np.array([0.0, 3.0, 3.0, 3.0])
    laws = np.stack([a, b, c])
    beta = np.full(3, 1 / 3)
    bary = dl.w1_barycenter(laws, beta)
    np.testing.assert_array_equal(bary, [0.0, 0.0, 3.0, 3.0])
    assert dl.objective_w1(bary, laws, beta) <= dl.objective_w1(laws.mean(0), laws, beta)


def test_barycenter_defensive_sort_is_noop():
    rng = np.random.default_rng(6)
    for _ in range(1000):
        n, K = int(rng.integers(1, 6)), int(rng.integers(1, 9))
        laws = np.sort(rng.normal(size=(n, K)), axis=1)
        beta = rng.dirichlet(np.ones(n))
        raw = dl.weighted_median_along(laws, beta, axis=0)
        assert np.all(np.diff(raw) >= 0)
        np.testing.assert_array_equal(raw, dl.w1_barycenter(laws, beta))


def test_barycenter_translation_equivariant():
    rng = np.random.default_rng(7)
    for _ in range(200):
        laws = np.sort(rng.normal(size=(4, 6)), axis=1)
        beta = rng.dirichlet(np.ones(4))
        c = rng.normal() * 5
        np.testing.assert_allclose(dl.w1_barycenter(laws + c, beta),
                                   dl.w1_barycenter(laws, beta) + c, atol=1e-12)


def test_barycenter_per_point_weights():
    laws = np.array([[[0.0, 1.0], [5.0, 6.0]], [[2.0, 3.0], [1.0, 2.0]]])  # (n=2, P=2, K=2)
    beta = np.array([[0.9, 0.1], [0.1, 0.9]])
    out = dl.w1_barycenter(laws, beta)
    np.testing.assert_array_equal(out, [[0.0, 1.0], [1.0, 2.0]])


def test_cvar_barycenter_reductions():
    rng = np.random.default_rng(8)
    laws = np.sort(rng.normal(size=(3, 5)), axis=1)
    np.testing.assert_array_equal(dl.cvar_weighted_barycenter(laws, 0.2, 0.0),
                                  dl.w1_barycenter(laws, np.full(3, 1 / 3)))
    np.testing.assert_array_equal(dl.cvar_weighted_barycenter(laws[:1], 0.2, 3.0), laws[0])


def test_cvar_barycenter_large_lambda_picks_dominated_law():
    low = np.array([-3.0, -1.0, 0.0, 2.0])
    laws = np.stack([low + 2.0, low, low + 1.0])
    dists = [dl.w1_quantile(dl.cvar_weighted_barycenter(laws, 0.25, lam), low) for lam in (10.0, 100.0)]
    assert dists[1] <= dists[0]
    assert dists[1] < 1e-12


def test_quantile_csv_round_trip(tmp_path):
    rows = {"a": np.array([0.1, 0.2, 1 / 3]), "b": np.array([-1.0, 0.0, 2.5])}
    dl.write_quantile_csv(tmp_path / "q.csv", rows)
    levels, back = dl.read_quantile_csv(tmp_path / "q.csv")
    np.testing.assert_array_equal(levels, dl.midpoint_levels(3))
    for k in rows:
        np.testing.assert_array_equal(back[k], rows[k])
