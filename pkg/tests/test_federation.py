import copy
import json

import numpy as np
import pytest

from conftest import toy_fleet
from fedjoint import cox, federation as fed, mgp
from fedjoint.cox import FunctionTrajectory
from fedjoint.data import FleetDataset
from fedjoint.federation import FedConfig, FederationError, ParameterMessage


def msg(site, values, stage="cox", rnd=0, layout=None):
    values = np.atleast_1d(np.asarray(values, dtype=float))
    layout = layout or [("beta", values.shape)]
    return ParameterMessage(rnd, site, stage, layout, values, 0, 1)


def test_local_update_examples():
    assert fed.local_update([1.0], lambda x: np.array([2.0]), 0.1, 1)[0] == pytest.approx(0.8)
    g = lambda x: 2 * x - 1
    three = fed.local_update([3.0], g, 0.1, 3)
    seq = [3.0]
    for _ in range(3):
        seq = fed.local_update(seq, g, 0.1, 1)
    assert np.array_equal(three, seq)
    assert fed.local_update([0.5], g, 0.1, 5)[0] == 0.5
    with pytest.raises(FederationError):
        fed.local_update([0.0], lambda x: np.array([np.nan]), 0.1, 1)
    with pytest.raises(ValueError):
        fed.local_update([0.0], g, 0.0, 1)


def test_central_update_examples():
    assert fed.central_update([msg(0, 1.0), msg(1, 3.0)], [0.5, 0.5])[0] == 2.0
    assert fed.central_update([msg(0, 1.0), msg(1, 3.0)], [0.25, 0.75])[0] == 2.5
    same = np.array([0.1, 0.2, 1 / 3])
    out = fed.central_update([msg(k, same, layout=[("gamma", (3,))]) for k in range(3)],
                             [0.2, 0.3, 0.5])
    assert np.array_equal(out, same)


def test_central_update_keeps_psd():
    rng = np.random.default_rng(0)
    for _ in range(50):
        mats = []
        for _ in range(2):
            A = rng.normal(size=(4, 4))
            mats.append(A @ A.T + 1e-6 * np.eye(4))
        w = rng.dirichlet([1, 1])
        out = fed.central_update([msg(k, m.ravel(), "mgp", layout=[("psi", (4, 4))])
                                  for k, m in enumerate(mats)], w)
        assert np.linalg.eigvalsh(out.reshape(4, 4)).min() > 0


def test_central_update_errors():
    with pytest.raises(FederationError):
        fed.central_update([], [])
    with pytest.raises(FederationError):
        fed.central_update([msg(0, 1.0), msg(0, 2.0)], [0.5, 0.5])
    with pytest.raises(FederationError):
        fed.central_update([msg(0, 1.0), msg(1, 2.0, rnd=1)], [0.5, 0.5])
    with pytest.raises(ValueError):
        fed.central_update([msg(0, 1.0), msg(1, 2.0)], [0.5, 0.6])


def test_message_roundtrip_is_bit_exact():
    rng = np.random.default_rng(2)
    m = msg(3, rng.normal(size=7) * 10.0 ** rng.integers(-300, 300, 7),
            layout=[("gamma", (7,))])
    back = ParameterMessage.from_json(m.to_json())
    assert np.array_equal(back.values, m.values) and back.layout == m.layout
    assert fed.audit_message(m) == []


def test_audit_flags_private_content():
    m = json.loads(msg(0, [1.0, 2.0], layout=[("gamma", (2,))]).to_json())
    m["event_times"] = [1.0]
    assert any("unexpected fields" in v for v in fed.audit_message(json.dumps(m)))
    leak = msg(0, [1.0, 2.0], layout=[("signal", (2,))])
    assert any("not a shared parameter" in v for v in fed.audit_message(leak))
    short = msg(0, [1.0], layout=[("gamma", (2,))])
    assert any("payload length" in v for v in fed.audit_message(short))
    assert fed.audit_message(msg(0, [1.0]), expected_size=3)


@pytest.mark.parametrize("kind", ["loopback", "stream"])
def test_transport_barrier(kind):
    tr = fed.make_transport(kind)
    try:
        for k in (1, 0):
            tr.send(msg(k, float(k)))
        got = tr.receive_round(0, "cox", [0, 1], timeout=5)
        assert [m.site for m in got] == [0, 1]
        tr.send(msg(0, 1.0, rnd=1))
        tr.send(msg(0, 1.0, rnd=1))
        with pytest.raises(FederationError, match="duplicate"):
            tr.receive_round(1, "cox", [0, 1], timeout=5)
        tr.send(msg(5, 1.0, rnd=2))
        with pytest.raises(FederationError, match="unknown site"):
            tr.receive_round(2, "cox", [0, 1], timeout=5)
        with pytest.raises(FederationError, match="no message"):
            tr.receive_round(3, "cox", [0], timeout=0.05)
    finally:
        tr.close()
    with pytest.raises(ValueError):
        fed.make_transport("carrier-pigeon")


def test_fed_config_validation():
    with pytest.raises(ValueError):
        FedConfig(eta1=0.0)
    with pytest.raises(ValueError):
        FedConfig(R1=0)
    with pytest.raises(ValueError):
        FedConfig(optimizer="sgd")
    assert FedConfig.from_dict({"eta1": 0.5, "unused": 1}).eta1 == 0.5
    with pytest.raises(ValueError):
        fed.check_weights([0.5, 0.6])


def _params_vec(state):
    parts = [np.ravel(v) for v in state.global_tree().values()]
    for sid in sorted(state.sites):
        parts += [np.ravel(v) for v in state.sites[sid].as_tree().values()]
    return np.concatenate(parts)


def test_single_site_mgp_equals_centralized():
    f = toy_fleet(1, 3, 8, seed=2)
    st = mgp.init_state(f, n_latent=2, n_inducing=4)
    cfg = FedConfig(eta1=0.05, R1=6)
    a = fed.run_fed_mgp(f, cfg, state=copy.deepcopy(st))
    b = fed.centralized_gd_mgp(f, copy.deepcopy(st), 0.05, 6)
    assert np.allclose(_params_vec(a), _params_vec(b), rtol=1e-10, atol=1e-14)


def test_mgp_frozen_gradient_linearity():
    # with a negligible step, two rounds at eta equal one round at 2 eta to first order
    f = toy_fleet(2, 2, 6, seed=3)
    st = mgp.init_state(f, n_latent=1, n_inducing=4)
    eta = 1e-7
    x0 = _params_vec(st)
    two = _params_vec(fed.run_fed_mgp(f, FedConfig(eta1=eta, R1=2), state=copy.deepcopy(st)))
    one = _params_vec(fed.run_fed_mgp(f, FedConfig(eta1=2 * eta, R1=1), state=copy.deepcopy(st)))
    assert np.linalg.norm(two - one) < 1e-4 * np.linalg.norm(two - x0)


def _cox_setup(n_sites=2, n_units=10, seed=0):
    rng = np.random.default_rng(seed)
    f = toy_fleet(n_sites, n_units, 5, seed=seed)
    trajs = {(s.site_id, u.unit_id): FunctionTrajectory(lambda t, a=rng.normal(): a + 0.05 * t)
             for s in f.sites for u in s.units}
    return f, trajs


def test_fed_cox_equals_centralized_and_ignores_site_order():
    f, trajs = _cox_setup()
    init = cox.initial_params([u for s in f.sites for u in s.units], "weibull", 1)
    cfg = FedConfig(eta2=0.05, R2=15)
    a = fed.run_fed_cox(f, trajs, cfg, init=init)
    b = fed.centralized_gd_cox(f, trajs, init, 0.05, 15)
    assert np.allclose(a.to_vector(), b.to_vector(), rtol=1e-10, atol=1e-14)
    rev = FleetDataset(list(reversed(f.sites)))
    c = fed.run_fed_cox(rev, trajs, cfg, init=init)
    assert np.allclose(a.to_vector(), c.to_vector(), rtol=1e-12, atol=1e-15)


def test_round_history_and_message_count(tmp_path):
    f, trajs = _cox_setup()
    hist = fed.RoundHistory(tmp_path / "h.jsonl")
    tr = fed.LoopbackTransport()
    p = fed.run_fed_cox(f, trajs, FedConfig(eta2=0.05, R2=4), transport=tr, history=hist)
    assert len(tr.log) == 2 * 4
    assert all(fed.audit_message(m) == [] for m in tr.log)
    lines = (tmp_path / "h.jsonl").read_text().splitlines()
    assert len(lines) == 4 and json.loads(lines[-1])["round"] == 3
    assert np.array_equal(hist.values("cox")[-1], p.to_vector())


def test_transport_failure_keeps_last_good_state():
    f, trajs = _cox_setup()

    class Flaky(fed.LoopbackTransport):
        def receive_round(self, round_idx, stage, sites, timeout=60.0):
            if round_idx == 2:
                raise FederationError("link down")
            return super().receive_round(round_idx, stage, sites, timeout)

    init = cox.initial_params([u for s in f.sites for u in s.units], "weibull", 1)
    with pytest.raises(FederationError) as exc:
        fed.run_fed_cox(f, trajs, FedConfig(eta2=0.05, R2=5), transport=Flaky(), init=init)
    ref = fed.centralized_gd_cox(f, trajs, init, 0.05, 2)
    assert np.allclose(exc.value.last_good.to_vector(), ref.to_vector(), rtol=1e-10)


def test_fed_joint_without_test_site():
    f = toy_fleet(2, 3, 8)
    res = fed.run_fed_joint(f, FedConfig(eta1=0.01, eta2=0.01, R1=2, R2=2),
                            mgp_kw={"n_latent": 1, "n_inducing": 4})
    assert res.predictions == [] and len(res.messages) == 2 * (2 + 2)
    stages = [m.stage for m in res.messages]
    assert stages == ["mgp"] * 4 + ["cox"] * 4
