import numpy as np
import pytest
from scipy import stats

from fedjoint import cox, synth
from fedjoint.data import validate
from fedjoint.synth import SynthConfig, TrueModel


def model(beta=0.5, gamma=0.2, lam=0.001, rho=1.05, scenario="I", c=0.0, d=0.0, w=1.0,
          baseline="weibull"):
    p = (cox.CoxParams.weibull(lam, rho, [gamma], beta) if baseline == "weibull"
         else cox.CoxParams.exponential(lam, [gamma], beta))
    return TrueModel(0, 0, np.array(synth.MU_B), c, d, np.array([w]), scenario, p)


def units(fleet):
    return [u for s in fleet.sites for u in s.units]


def test_gen_coeffs():
    rng = np.random.default_rng(0)
    assert np.array_equal(synth.gen_coeffs(rng, sigma_b=np.zeros((3, 3))), np.array(synth.MU_B))
    draws = np.array([synth.gen_coeffs(rng) for _ in range(100_000)])
    se = np.sqrt(np.diag(synth.SIGMA_B) / len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - synth.MU_B) < 3 * se)
    a = synth.gen_coeffs(np.random.default_rng(5))
    assert np.array_equal(a, synth.gen_coeffs(np.random.default_rng(5)))


def test_true_signal_examples():
    b = synth.MU_B
    assert synth.true_signal(1.0, b) == pytest.approx(2.52, abs=1e-15)
    assert synth.true_signal(1.0, b, "II", 1.0, 0.2) == pytest.approx(2.52 + np.sin(0.2),
                                                                     abs=1e-15)
    assert synth.true_signal(1.0, b, "II", 1.0, 0.2) == pytest.approx(2.718670, abs=1e-6)
    assert synth.true_signal(0.0, b) == 2.5
    t = np.linspace(0, 120, 241)
    assert np.array_equal(synth.true_signal(t, b, "II", 0.0, 0.2), synth.true_signal(t, b))


def test_true_failure_cdf_examples():
    m = model(beta=0.0, gamma=0.0)
    assert synth.true_failure_cdf(0.0, m) == 0.0
    assert synth.true_failure_cdf(100.0, m) == pytest.approx(1 - np.exp(-0.001 * 100**1.05),
                                                             rel=1e-10)
    # 1 - exp(-0.001 * 100**1.05) evaluated at 30 digits
    assert synth.true_failure_cdf(100.0, m) == pytest.approx(0.11829041083457875, rel=1e-10)
    F = [synth.true_failure_cdf(t, model()) for t in np.arange(0, 241, 1.0)]
    assert np.all(np.diff(F) >= 0)


def test_inverse_sampler_examples():
    m = model(beta=0.0, gamma=0.0, lam=0.01, baseline="exponential")
    grid, F = synth.cdf_grid(m, 400.0, 0.05)
    assert synth.invert_cdf(0.0, grid, F) == 0.0
    assert synth.invert_cdf(0.5, grid, F) == pytest.approx(np.log(2) / 0.01, abs=1e-3)
    assert synth.invert_cdf(F[-1] + 1e-9, grid, F) is None


def test_sampler_censors_past_the_grid():
    m = model(beta=0.0, gamma=0.0, lam=1e-6)
    grid, F = synth.cdf_grid(m, 120.0)
    rng = np.random.default_rng(0)
    out = [synth.sample_failure_time(m, rng, table=(grid, F)) for _ in range(200)]
    assert all(v == 120.0 and d == 0 for v, d in out if d == 0)
    assert sum(d == 0 for _, d in out) > 150


def test_sampler_goodness_of_fit():
    m = model(beta=0.0, gamma=0.0)
    table = synth.cdf_grid(m, 120.0)
    rng = np.random.default_rng(1)
    v = np.array([synth.sample_failure_time(m, rng, table=table)[0] for _ in range(10_000)])
    cdf = lambda t: 1 - np.exp(-0.001 * np.asarray(t) ** 1.05)
    ev = np.sort(v[v < 120.0])
    n = len(v)
    emp_hi = np.arange(1, len(ev) + 1) / n
    D = max(np.max(np.abs(emp_hi - cdf(ev))), np.max(np.abs(emp_hi - 1 / n - cdf(ev))))
    assert D < 0.02


def test_generate_fleet_censoring():
    f, truths = synth.generate_fleet(SynthConfig(n_sites=1, units_per_site=40,
                                                 censor_fraction=0.0, seed=2))
    assert all(u.event_indicator == 1 for u in units(f))
    f, truths = synth.generate_fleet(SynthConfig(n_sites=2, units_per_site=50, seed=2))
    assert sum(1 - u.event_indicator for u in units(f)) == 5
    assert validate(f).passed
    for u in units(f):
        assert u.timestamps[-1] <= u.event_time and u.n_obs >= 3
        tm = truths[(u.site_id, u.unit_id)]
        if u.event_indicator:
            assert u.event_time == tm.failure_time
        else:
            assert u.event_time <= tm.failure_time


def test_generate_fleet_is_reproducible():
    a, _ = synth.generate_fleet(SynthConfig(seed=7, scenario="II"))
    b, _ = synth.generate_fleet(SynthConfig(seed=7, scenario="II"))
    for u, v in zip(units(a), units(b)):
        assert u.event_time == v.event_time and np.array_equal(u.signal, v.signal)
    c, _ = synth.generate_fleet(SynthConfig(seed=8, scenario="II"))
    assert any(u.event_time != v.event_time for u, v in zip(units(a), units(c)))


def test_coxph_matches_true_model():
    m = model(scenario="II", c=1.0, d=0.2)
    for ts, dt in [(0.0, 30.0), (20.0, 15.0), (50.0, 40.0)]:
        F0 = synth.true_failure_cdf
        direct = 1 - (1 - F0(ts + dt, m)) / (1 - F0(ts, m))
        assert m.conditional_failure(ts, dt) == pytest.approx(direct, rel=1e-9)


def test_noise_is_variance():
    cfg = SynthConfig(n_sites=1, units_per_site=60, seed=4)
    f, truths = synth.generate_fleet(cfg)
    res = np.concatenate([u.signal - truths[(0, u.unit_id)].signal(u.timestamps) for u in units(f)])
    assert stats.chi2(len(res) - 1).ppf(0.001) < np.sum(res**2) / 0.2 < \
        stats.chi2(len(res) - 1).ppf(0.999)


def test_truth_sidecar_roundtrip(tmp_path):
    cfg = SynthConfig(n_sites=2, units_per_site=3, scenario="II", seed=1)
    _, truths = synth.generate_fleet(cfg)
    synth.write_truth(tmp_path / "truth.json", truths, cfg)
    cfg2, back = synth.read_truth(tmp_path / "truth.json")
    assert cfg2 == cfg
    for key, tm in truths.items():
        b = back[key]
        assert np.array_equal(tm.b, b.b) and tm.c == b.c and tm.d == b.d
        assert np.array_equal(tm.w, b.w)
        assert tm.failure_time == b.failure_time or (np.isnan(tm.failure_time)
                                                     and np.isnan(b.failure_time))


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(scenario="III")
    with pytest.raises(ValueError):
        SynthConfig(censor_fraction=1.5)
    with pytest.raises(ValueError):
        SynthConfig(sigma_b=((1.0, 2.0, 0.0), (2.0, 1.0, 0.0), (0.0, 0.0, 1.0)))
