import numpy as np
import pytest

from fedquant import federation as fd
from fedquant import learner as ln
from fedquant import trust_region as tr
from fedquant.envs import GridConfig, make_heterogeneous_family

SMALL_PPO = ln.PPOConfig(episodes_per_update=3, minibatch_size=64, epochs=2)


def make(mode_cfgs=None, n=3, seed=0, identical=False, snapshot="pre_broadcast"):
    base = GridConfig()
    family = [base] * n if identical else make_heterogeneous_family(base, n, seed=4)
    clients = fd.make_clients(family, seed, K=7)
    cfg = fd.FedConfig(n, rounds=3, local_steps_per_round=1, eval_episodes=2)
    ctx = fd.RoundContext(SMALL_PPO, ln.RiskConfig(), tr.TrustRegionConfig(snapshot=snapshot), probe_size=8)
    return clients, cfg, ctx


# -- aggregate ----------------------------------------------------------------------

def test_aggregate_examples():
    v = np.array([0.3, -1.2, 5.0])
    np.testing.assert_array_equal(fd.aggregate([v], [1.0]), v)
    np.testing.assert_array_equal(fd.aggregate([v, v], [0.3, 0.7]), v)
    np.testing.assert_array_equal(fd.aggregate([np.zeros(2), np.array([2.0, 4.0])], [0.5, 0.5]), [1.0, 2.0])


def test_aggregate_errors():
    with pytest.raises(ValueError):
        fd.aggregate([np.zeros(2), np.zeros(3)], [0.5, 0.5])
    with pytest.raises(ValueError):
        fd.aggregate([np.zeros(2), np.zeros(2)], [0.5, 0.6])
    with pytest.raises(ValueError):
        fd.aggregate([np.zeros(2)], [0.5, 0.5])


def test_aggregate_idempotent_and_order_free():
    rng = np.random.default_rng(0)
    params = [rng.normal(size=50) for _ in range(4)]
    w = [0.1, 0.2, 0.3, 0.4]
    avg = fd.aggregate(params, w, ids=[0, 1, 2, 3])
    np.testing.assert_array_equal(fd.aggregate([avg] * 4, w), avg)
    perm = [2, 0, 3, 1]
    shuffled = fd.aggregate([params[i] for i in perm], [w[i] for i in perm], ids=perm)
    np.testing.assert_array_equal(shuffled, avg)


def test_fed_config_validation():
    assert fd.FedConfig(4, 2).client_weights == [0.25] * 4
    with pytest.raises(ValueError):
        fd.FedConfig(2, 2, client_weights=[0.2, 0.2])
    with pytest.raises(ValueError):
        fd.FedConfig(0, 2)


def test_mode_names():
    assert fd.canonical_mode("FedAvg (CVaR + TR)") == "cvar_tr"
    assert fd.canonical_mode("FedAvgCVaR") == "cvar"
    assert fd.canonical_mode("Local") == "local"
    with pytest.raises(ValueError):
        fd.canonical_mode("fedprox")


# -- rounds -------------------------------------------------------------------------

def test_local_mode_critics_diverge():
    clients, cfg, ctx = make()
    fd.run_round(clients, cfg, "local", ctx)
    fd.run_round(clients, cfg, "local", ctx)
    p = [c.critic.get_params() for c in clients]
    assert all(np.linalg.norm(p[i] - p[j]) > 0 for i in range(3) for j in range(i + 1, 3))


def test_fedavg_broadcast_identical():
    clients, cfg, ctx = make(identical=True)
    fd.run_round(clients, cfg, "fedavg", ctx)
    p0 = clients[0].critic.get_params()
    for c in clients[1:]:
        np.testing.assert_array_equal(c.critic.get_params(), p0)


def test_broadcast_is_average_of_uploads(monkeypatch):
    clients, cfg, ctx = make(n=2)
    uploads = []
    real = fd.aggregate

    def spy(params, weights, ids=None):
        uploads.append([p.copy() for p in params])
        return real(params, weights, ids)

    monkeypatch.setattr(fd, "aggregate", spy)
    fd.run_round(clients, cfg, "fedavg", ctx)
    a, b = uploads[0]
    expect = np.zeros_like(a)
    expect += 0.5 * a
    expect += 0.5 * b
    for c in clients:
        np.testing.assert_array_equal(c.critic.get_params(), expect)


def test_policies_never_transmitted():
    local, cfg, ctx = make()
    fed, cfg2, ctx2 = make()
    fd.run_round(local, cfg, "local", ctx)
    fd.run_round(fed, cfg2, "fedavg", ctx2)
    # round-0 local training is identical, so only a leak through the broadcast could differ
    for a, b in zip(local, fed):
        assert a.policy_hash() == b.policy_hash()


def test_snapshot_timing():
    clients, cfg, ctx = make()
    fd.run_round(clients, cfg, "fedavg", ctx)
    assert any(not np.array_equal(c.buffer.models[-1].params, c.critic.params) for c in clients)
    clients, cfg, ctx = make(snapshot="post_broadcast")
    fd.run_round(clients, cfg, "fedavg", ctx)
    for c in clients:
        np.testing.assert_array_equal(c.buffer.models[-1].params, c.critic.params)


def test_drift_absent_at_round_zero_and_logged_after():
    clients, cfg, ctx = make()
    log0 = fd.run_round(clients, cfg, "cvar_tr", ctx)
    assert all(c.drift is None for c in log0.clients)
    assert ctx.probe is not None and len(ctx.probe) == 8
    log1 = fd.run_round(clients, cfg, "cvar_tr", ctx)
    assert all(c.drift is not None and c.drift >= 0 for c in log1.clients)
    log2 = fd.run_round(clients, cfg, "cvar_tr", ctx)
    assert all(c.tr_applied for c in log2.clients)
    assert log2.round == 2


def test_round_logs_deterministic():
    def run():
        clients, cfg, ctx = make()
        return [fd.run_round(clients, cfg, m, ctx) for m in ("cvar_tr", "cvar_tr", "cvar_tr")]

    assert run() == run()


def test_client_count_mismatch():
    clients, cfg, ctx = make()
    with pytest.raises(ValueError):
        fd.run_round(clients[:2], cfg, "fedavg", ctx)
