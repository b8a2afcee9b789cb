import numpy as np
import pytest

from fedquant.distlaw import EmpiricalLaw, midpoint_levels
from fedquant.harness import theory as th


def mixture_law(q, mdp, s):
    K = q.shape[1]
    atoms = (mdp.R[s][:, None] + mdp.gamma * q).ravel()
    weights = np.repeat(mdp.P[s] / K, K)
    keep = weights > 0
    return atoms[keep], weights[keep]


def generalized_inverse(atoms, weights, u):
    law = EmpiricalLaw(atoms, weights)
    return min(x for x in atoms if law.cdf(x) >= u - 1e-12)


def test_midpoint_projection_matches_cdf_inverse():
    rng = np.random.default_rng(0)
    for _ in range(30):
        S, K = int(rng.integers(2, 5)), int(rng.integers(1, 6))
        mdp = th.random_mdp(rng, S, 0.9, sparsity=0.3)
        q = np.sort(rng.normal(size=(S, K)), axis=1)
        out = th.projected_backup(q, mdp, "midpoint")
        for s in range(S):
            atoms, w = mixture_law(q, mdp, s)
            expect = [generalized_inverse(atoms, w, u) for u in midpoint_levels(K)]
            np.testing.assert_array_equal(out[s], expect)


def test_bin_mean_projection_matches_integral():
    rng = np.random.default_rng(1)
    grid = (np.arange(720_720) + 0.5) / 720_720  # divisible by every K used
    for _ in range(5):
        S, K = 3, int(rng.integers(1, 6))
        mdp = th.random_mdp(rng, S, 0.5)
        q = np.sort(rng.normal(size=(S, K)), axis=1)
        out = th.projected_backup(q, mdp, "bin_mean")
        for s in range(S):
            atoms, w = mixture_law(q, mdp, s)
            o = np.argsort(atoms)
            qf = atoms[o][np.minimum(np.searchsorted(np.cumsum(w[o]), grid), len(atoms) - 1)]
            expect = qf.reshape(K, -1).mean(axis=1)
            np.testing.assert_allclose(out[s], expect, atol=1e-4)


def test_deterministic_transitions_shift_exactly():
    rng = np.random.default_rng(2)
    S, K = 4, 5
    P = np.eye(S)[rng.permutation(S)]
    mdp = th.TabularMDP(P, rng.normal(size=(S, S)), 0.7)
    q = np.sort(rng.normal(size=(S, K)), axis=1)
    nxt = P.argmax(axis=1)
    for proj in th.PROJECTIONS:
        out = th.projected_backup(q, mdp, proj)
        np.testing.assert_allclose(out, mdp.R[np.arange(S), nxt][:, None] + 0.7 * q[nxt], atol=1e-12)


def test_projection_outputs_sorted():
    rng = np.random.default_rng(3)
    mdp = th.random_mdp(rng, 6, 0.9)
    q = np.sort(rng.normal(size=(6, 7)), axis=1)
    for proj in th.PROJECTIONS:
        assert np.all(np.diff(th.projected_backup(q, mdp, proj), axis=1) >= 0)


def test_bin_mean_backup_contracts_in_max_w1():
    rng = np.random.default_rng(4)
    for m in range(20):
        gamma = (0.5, 0.9)[m % 2]
        mdp = th.random_mdp(rng, int(rng.integers(2, 9)), gamma)
        ratios = th.contraction_ratios(mdp, int(rng.integers(1, 9)), 100, rng, "bin_mean")
        assert np.all(ratios <= gamma + 1e-9)


def test_midpoint_backup_contracts_in_sup_distance():
    rng = np.random.default_rng(5)
    for m in range(10):
        gamma = (0.5, 0.9)[m % 2]
        S, K = int(rng.integers(2, 9)), int(rng.integers(1, 9))
        mdp = th.random_mdp(rng, S, gamma)
        for _ in range(50):
            q, q2 = (np.sort(rng.normal(size=(S, K)) * 3, axis=1) for _ in range(2))
            a, b = th.projected_backup(q, mdp), th.projected_backup(q2, mdp)
            assert np.abs(a - b).max() <= gamma * np.abs(q - q2).max() + 1e-9


def test_midpoint_backup_can_expand_max_w1():
    # reading midpoint levels of a mixture is not W1-nonexpansive, so some pairs expand past gamma
    rng = np.random.default_rng(0)
    worst = 0.0
    for m in range(20):
        mdp = th.random_mdp(rng, int(rng.integers(2, 9)), 0.9)
        worst = max(worst, th.contraction_ratios(mdp, int(rng.integers(2, 9)), 100, rng).max())
    assert worst > 0.9


def tube_cfg(S, K, alpha, radius, beta, **kw):
    return th.TrackingConfig(shrink_alpha=alpha, delta_minus=np.full((S, K), radius),
                             delta_plus=np.full((S, K), radius), beta_slope=np.full(K, beta), K=K, **kw)


def test_frozen_reference_zero_defects():
    rng = np.random.default_rng(6)
    for _ in range(10):
        S, K = 5, 4
        mdp = th.random_mdp(rng, S, 0.9)
        cfg = tube_cfg(S, K, float(rng.uniform(0.2, 1.0)), 2.0, 1.0, reference="frozen")
        q0, ref = (np.sort(rng.normal(size=(S, K)) * 3, axis=1) for _ in range(2))
        res = th.verify_tracking(mdp, cfg, q0, ref)
        for g in res.diagnostics:
            assert g.r == 0.0
            assert g.e_next <= cfg.shrink_alpha * (mdp.gamma * g.e + g.epsilon) + 1e-9


def test_fixed_point_reference_keeps_zero_error():
    rng = np.random.default_rng(7)
    mdp = th.random_mdp(rng, 4, 0.5)
    q_star = th.fixed_point(mdp, 5)
    np.testing.assert_allclose(th.projected_backup(q_star, mdp), q_star, atol=1e-12)
    cfg = tube_cfg(4, 5, 1.0, np.inf, 1.0, reference="frozen")
    res = th.verify_tracking(mdp, cfg, q_star, q_star)
    assert res.passed
    assert max(g.e_next for g in res.diagnostics) <= 1e-9


def test_chain_mdp_recursion_holds():
    rng = np.random.default_rng(8)
    mdp = th.chain_mdp(rng, 5, 0.9)
    cfg = tube_cfg(5, 6, 0.7, 1.5, 1.2, rounds=50)
    q0, ref0 = (np.sort(rng.normal(size=(5, 6)) * 3, axis=1) for _ in range(2))
    res = th.verify_tracking(mdp, cfg, q0, ref0)
    assert res.passed, res.summary()
    assert len(res.diagnostics) == 50
    g = res.diagnostics[0]
    assert g.rho == pytest.approx(0.7 * 1.2 * 0.9)
    assert all(d.d_bar >= 0 and d.e >= 0 and d.epsilon >= 0 for d in res.diagnostics)


def test_random_cases_pass_with_either_projection():
    for proj in th.PROJECTIONS:
        rng = np.random.default_rng(9)
        for _ in range(10):
            mdp, cfg, q0, ref0 = th.random_tracking_case(rng, rounds=30, projection=proj)
            assert cfg.shrink_alpha * cfg.beta_bar * mdp.gamma < 1
            res = th.verify_tracking(mdp, cfg, q0, ref0)
            assert res.passed, res.summary()


def test_violation_reported_with_round():
    rng = np.random.default_rng(10)
    mdp, cfg, q0, ref0 = th.random_tracking_case(rng, rounds=5)
    cfg.tol = -1e6  # impossible margin forces every check to fail
    res = th.verify_tracking(mdp, cfg, q0, ref0)
    assert not res.passed
    assert res.recursion_violations == list(range(5))
    assert "round" in res.summary()


def test_mdp_validation():
    with pytest.raises(ValueError):
        th.TabularMDP(np.array([[0.5, 0.6], [1.0, 0.0]]), np.zeros((2, 2)), 0.9)
    with pytest.raises(ValueError):
        th.TabularMDP(np.eye(2), np.zeros((2, 2)), 1.0)
    with pytest.raises(ValueError):
        th.projected_backup(np.zeros((2, 3)), th.TabularMDP(np.eye(2), np.zeros((2, 2)), 0.5), "nearest")
