import csv

import numpy as np
import pytest

from fedjoint import cox
from fedjoint.cox import ConstantTrajectory, CoxParams, FunctionTrajectory, TabulatedTrajectory
from fedjoint.data import SiteDataset, UnitRecord

ZERO = ConstantTrajectory(0.0)


def unit(V, d, w=(), uid=0):
    return UnitRecord(0, uid, V, d, [], [], list(w))


def test_hazard_examples():
    p = CoxParams.weibull(0.001, 1.05)
    # 0.001 * 1.05 * 100**0.05 evaluated at 30 digits: 1.3218716823838756e-3
    assert cox.hazard(100.0, [], ZERO, p) == pytest.approx(1.3218716823838756e-3, rel=1e-13)
    e = CoxParams.exponential(0.02)
    assert np.allclose(cox.hazard(np.array([0.5, 10.0, 300.0]), [], ZERO, e), 0.02, rtol=1e-15)
    b = CoxParams.exponential(0.02, beta=0.5)
    assert cox.hazard(3.0, [], ConstantTrajectory(2.0), b) == pytest.approx(0.02 * np.e, rel=1e-14)


def test_cumulative_hazard_examples():
    p = CoxParams.weibull(0.001, 1.05)
    assert cox.cumulative_hazard(5.0, 5.0, [], ZERO, p) == 0.0
    assert cox.cumulative_hazard(0.0, 100.0, [], ZERO, CoxParams.exponential(0.001)) == \
        pytest.approx(0.1, rel=1e-13)
    assert cox.cumulative_hazard(0.0, 100.0, [], ZERO, p) == pytest.approx(0.12589254117941672,
                                                                            rel=1e-8)


@pytest.mark.parametrize("rho", [0.6, 1.0, 1.05, 2.5])
def test_weibull_cumulative_hazard_closed_form(rho):
    p = CoxParams.weibull(0.003, rho)
    for a, b in [(0.0, 1.0), (0.0, 137.0), (12.0, 40.0)]:
        assert cox.cumulative_hazard(a, b, [], ZERO, p) == pytest.approx(
            0.003 * (b**rho - a**rho), rel=1e-8)


def test_unit_loglik_examples():
    e = CoxParams.exponential(0.01)
    assert cox.unit_loglik(unit(100.0, 1), ZERO, e) == pytest.approx(np.log(0.01) - 1, abs=1e-12)
    assert cox.unit_loglik(unit(100.0, 0), ZERO, e) == pytest.approx(-1.0, abs=1e-12)
    w = CoxParams.weibull(0.002, 1.3)
    V = 80.0
    exact = np.log(0.002 * 1.3 * V**0.3) - 0.002 * V**1.3
    assert cox.unit_loglik(unit(V, 1), ZERO, w) == pytest.approx(exact, rel=1e-8)


def test_neg_loglik_aggregation():
    p = CoxParams.weibull(0.004, 1.2, gamma=[0.3], beta=0.4)
    rng = np.random.default_rng(0)
    units = [UnitRecord(k, m, rng.uniform(20, 80), m % 2, [], [], [rng.normal()])
             for k in range(2) for m in range(4)]
    trajs = {(u.site_id, u.unit_id): FunctionTrajectory(lambda t, s=m: 0.02 * t + 0.1 * s)
             for m, u in enumerate(units)}
    sites = [SiteDataset(k, [u for u in units if u.site_id == k]) for k in range(2)]
    one = [SiteDataset(0, [units[0]])]
    assert cox.neg_loglik(one, trajs, p) == pytest.approx(
        -cox.unit_loglik(units[0], trajs[(0, 0)], p), rel=1e-14)
    full = cox.neg_loglik(sites, trajs, p)
    assert cox.neg_loglik_sitewise(sites, trajs, p) == pytest.approx(full, rel=1e-12)
    doubled = [SiteDataset(s.site_id, list(s.units) * 2) for s in sites]
    assert cox.neg_loglik(doubled, trajs, p) == pytest.approx(full, rel=1e-14)


def test_failure_probability_examples():
    e = CoxParams.exponential(0.001)
    assert cox.failure_probability(30.0, 0.0, [], ZERO, e) == 0.0
    assert cox.failure_probability(0.0, 100.0, [], ZERO, e) == pytest.approx(1 - np.exp(-0.1),
                                                                            rel=1e-12)
    w = CoxParams.weibull(0.001, 1.05)
    assert cox.failure_probability(50.0, 1e4, [], ZERO, w) == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(ValueError):
        cox.failure_probability(1.0, -1.0, [], ZERO, e)


def test_failure_identity():
    rng = np.random.default_rng(1)
    tr = FunctionTrajectory(lambda t: np.sin(t / 10.0) + 0.01 * t)
    for _ in range(50):
        p = CoxParams.weibull(rng.uniform(1e-4, 1e-2), rng.uniform(0.5, 2.0),
                              gamma=[rng.normal()], beta=rng.normal())
        ts, dt, w = rng.uniform(0, 100), rng.uniform(0, 100), [rng.normal()]
        F = cox.failure_probability(ts, dt, w, tr, p)
        assert 1 - F == pytest.approx(np.exp(-cox.cumulative_hazard(ts, ts + dt, w, tr, p)),
                                      rel=1e-12, abs=1e-15)


def test_mean_rul_examples():
    lam = 0.01
    e = CoxParams.exponential(lam)
    r = cox.mean_rul(40.0, [], ZERO, e, horizon=40.0 + 3000.0)
    assert r.value == pytest.approx(1 / lam, rel=1e-8) and not r.tail_warning
    rising = FunctionTrajectory(lambda t: 0.02 * t)
    lo = cox.mean_rul(10.0, [], rising, CoxParams.exponential(lam, beta=0.2), 3000.0).value
    hi = cox.mean_rul(10.0, [], rising, CoxParams.exponential(lam, beta=0.8), 3000.0).value
    assert hi < lo
    with pytest.warns(RuntimeWarning):
        assert cox.mean_rul(0.0, [], ZERO, e, horizon=50.0).tail_warning
    with pytest.raises(ValueError):
        cox.mean_rul(5.0, [], ZERO, e, horizon=5.0)


def test_survival_curve_matches_failure_probability(tmp_path):
    p = CoxParams.weibull(0.002, 1.4, beta=0.3)
    tr = TabulatedTrajectory(np.linspace(0, 60, 13), np.linspace(0, 3, 13))
    grid = np.linspace(0, 80, 9)
    S, F = cox.survival_curve(0.0, grid, [], tr, p)
    assert np.allclose(F, [cox.failure_probability(0.0, g, [], tr, p) for g in grid], atol=1e-14)
    path = tmp_path / "s.csv"
    cox.write_survival_csv(path, 0.0, grid, [], tr, p)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "S", "F"]
    assert [float(r[1]) for r in rows[1:]] == list(S)


def test_tabulated_trajectory_flat_beyond_table():
    tr = TabulatedTrajectory([0.0, 10.0], [1.0, 3.0])
    assert tr(5.0) == 2.0 and tr(50.0) == 3.0
    with pytest.raises(ValueError):
        TabulatedTrajectory([0.0, 1.0], [0.0, np.nan])


def test_trajectory_domain_enforced():
    tr = FunctionTrajectory(lambda t: t, horizon=10.0)
    with pytest.raises(ValueError):
        cox.cumulative_hazard(0.0, 20.0, [], tr, CoxParams.exponential(0.1))


def test_params_validation_and_vector_roundtrip():
    with pytest.raises(ValueError):
        CoxParams("gompertz", 0.0)
    p = CoxParams.weibull(0.01, 1.2, gamma=[0.1, -0.2], beta=0.7)
    assert np.array_equal(p.from_vector(p.to_vector()).to_vector(), p.to_vector())
    assert len(CoxParams.exponential(0.1, gamma=[1.0]).to_vector()) == 3


def test_design_matches_scalar_likelihood_and_hessian():
    rng = np.random.default_rng(3)
    units = [UnitRecord(0, m, rng.uniform(10, 60), m % 2, [], [], [rng.normal()])
             for m in range(6)]
    trajs = [TabulatedTrajectory(np.linspace(0, 60, 7), rng.normal(size=7)) for _ in units]
    for base in ("weibull", "exponential"):
        p = (CoxParams.weibull(0.01, 1.3, [0.2], 0.4) if base == "weibull"
             else CoxParams.exponential(0.01, [0.2], 0.4))
        d = cox.CoxDesign(units, trajs, base)
        x = p.to_vector()
        val, g = d.mean_neg_loglik(x)
        ref = -np.mean([cox.unit_loglik(u, t, p) for u, t in zip(units, trajs)])
        assert val == pytest.approx(ref, rel=1e-10)
        Hfd = np.array([(d.mean_neg_loglik(x + h)[1] - d.mean_neg_loglik(x - h)[1]) / 2e-6
                        for h in 1e-6 * np.eye(len(x))])
        assert np.allclose(d.mean_neg_hessian(x), Hfd, rtol=1e-5, atol=1e-7)
