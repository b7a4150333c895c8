import csv
import json

import numpy as np
import pytest

from fedjoint import harness
from fedjoint.harness import ExperimentConfig, MetricsReport


def tiny(**kw):
    base = dict(n_sites=2, units_per_site=4, repeats=2, methods=("fed", "lmm"),
                fed={"R1": 3, "R2": 3}, mgp={"n_latent": 1, "n_inducing": 4})
    base.update(kw)
    return ExperimentConfig.from_profile("desk", **base)


def test_mae_examples():
    assert harness.mae_mrl([5.0, 6.0], [5.0, 6.0]) == 0.0
    t = np.arange(20.0)
    assert harness.mae_mrl(t, t + 3) == pytest.approx(3.0)
    assert harness.mae_mrl([10, 20], [12, 17]) == 2.5
    assert harness.mae_f([0.2, 0.4], [0.3, 0.3]) == pytest.approx(0.1)
    assert harness.mae_f([0.3, 0.3], [0.2, 0.4]) == harness.mae_f([0.2, 0.4], [0.3, 0.3])
    with pytest.raises(ValueError):
        harness.mae_mrl([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        harness.mae_f([1.2], [0.5])


def test_cell_format():
    assert harness.fmt_cell(6.93, 1.69) == "6.93 (1.69)"
    assert harness.fmt_cell(0.024, 0.0) == "0.02 (0.00)"


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(alphas=(0.0,))
    with pytest.raises(ValueError):
        ExperimentConfig(dts=(-1.0,))
    with pytest.raises(ValueError):
        ExperimentConfig(repeats=0)
    with pytest.raises(ValueError):
        ExperimentConfig(methods=("fed", "gbm"))
    assert ExperimentConfig(source="cmapss").dts == harness.CMAPSS_DTS
    cfg = ExperimentConfig.from_profile("paper", fed={"R1": 7})
    assert cfg.repeats == 20 and cfg.fed["R1"] == 7 and cfg.fed["R2"] == 60


def test_empty_report_gives_header_only_tables(tmp_path):
    rep = MetricsReport({"alphas": [0.3, 0.5], "dts": [12.0]})
    harness.emit_tables(rep, tmp_path)
    rows = list(csv.reader(open(tmp_path / "table_mae_mrl.csv")))
    assert rows == [["method", "alpha=0.3", "alpha=0.5"]]
    assert len(list(csv.reader(open(tmp_path / "table_mae_f.csv")))) == 1
    back = harness.load_report(tmp_path / "metrics.json")
    assert back.to_dict() == rep.to_dict()


def test_true_failure_time_rule():
    from fedjoint.data import UnitRecord
    from fedjoint.synth import TrueModel
    u = UnitRecord(0, 3, 40.0, 0, [1.0], [0.0])
    tm = TrueModel(0, 3, np.zeros(3), 0.0, 0.0, np.zeros(1), "I", None, 55.5)
    assert harness.true_failure_time(u, {(0, 3): tm}) == 55.5
    assert harness.true_failure_time(u) is None
    assert harness.true_failure_time(UnitRecord(0, 3, 40.0, 1, [1.0], [0.0])) == 40.0


@pytest.fixture(scope="module")
def tiny_runs(tmp_path_factory):
    a = tmp_path_factory.mktemp("a")
    b = tmp_path_factory.mktemp("b")
    ra = harness.run_experiment(tiny(out_dir=str(a)))
    rb = harness.run_experiment(tiny(out_dir=str(b)))
    return a, b, ra, rb


def test_experiment_report_shape(tiny_runs):
    a, _, ra, _ = tiny_runs
    assert ra.complete
    for m in ("fed", "lmm"):
        for al in ("0.3", "0.5", "0.7"):
            assert len(ra.mrl[m][al]) == 2
            assert all(np.isfinite(v) and v >= 0 for v in ra.mrl[m][al])
            for d in ("12", "15", "18"):
                assert all(0 <= v <= 1 for v in ra.f[m][al][d])
    assert ra.runtime["messages"] == [{"fed": 6}, {"fed": 6}]
    assert ra.runtime["audit_violations"] == [{"fed": 0}, {"fed": 0}]
    rows = list(csv.reader(open(a / "table_mae_mrl.csv")))
    assert rows[1][0] == "fed" and rows[1][1] == harness.fmt_cell(*ra.summary("fed", 0.3))
    assert (a / "repeat_seed0" / "predictions_fed_seed0.csv").exists()


def test_experiment_is_deterministic(tiny_runs):
    a, b, _, _ = tiny_runs
    assert (a / "metrics.json").read_bytes() == (b / "metrics.json").read_bytes()
    assert (a / "table_mae_f.csv").read_bytes() == (b / "table_mae_f.csv").read_bytes()


def test_single_repeat_and_order_invariance(tiny_runs):
    _, _, ra, _ = tiny_runs
    one = harness.run_experiment(tiny(repeats=1, seed=1))
    for m in ("fed", "lmm"):
        assert one.mrl[m]["0.5"] == [ra.mrl[m]["0.5"][1]]
    assert one.summary("fed", 0.5)[1] == 0.0
    rev = harness.run_repeat(tiny(), 1)
    assert rev["mrl"]["fed"]["0.3"] == ra.mrl["fed"]["0.3"][1]


def test_report_json_roundtrip(tiny_runs, tmp_path):
    _, _, ra, _ = tiny_runs
    harness.emit_tables(ra, tmp_path, formats=("json",))
    back = harness.load_report(tmp_path / "metrics.json")
    assert json.dumps(back.to_dict(), sort_keys=True) == json.dumps(ra.to_dict(), sort_keys=True)
    assert not (tmp_path / "table_mae_mrl.csv").exists()


def test_failed_repeat_marks_report_incomplete(monkeypatch):
    def boom(cfg, seed, out_dir=None):
        if seed == 1:
            raise RuntimeError("diverged")
        return real(cfg, seed, out_dir)

    real = harness.run_repeat
    monkeypatch.setattr(harness, "run_repeat", boom)
    rep = harness.run_experiment(tiny(methods=("lmm",)))
    assert not rep.complete and "seed 1" in rep.failures[0]
    assert rep.mrl["lmm"]["0.3"][1] is None and rep.summary("lmm", 0.3)[1] == 0.0


def test_plot_data_files(tmp_path):
    from fedjoint.federation import train_joint
    cfg = tiny()
    fleet = harness.fleet_for_config(cfg, 0)
    model, _ = train_joint(fleet.without(0), cfg.fed_config, mgp_kw=cfg.mgp)
    u = fleet.site(0).units[0]
    harness.write_survival_plot_data(tmp_path / "s.csv", model, u, 0.5)
    harness.write_trajectory_plot_data(tmp_path / "t.csv", model, u, 0.5)
    s = list(csv.DictReader(open(tmp_path / "s.csv")))
    F = [float(r["F"]) for r in s]
    assert F[0] == 0.0 and np.all(np.diff(F) >= -1e-15)
    t = list(csv.DictReader(open(tmp_path / "t.csv")))
    assert all(float(r["lower95"]) <= float(r["mean"]) <= float(r["upper95"]) for r in t)
    t_star = harness.truncate_at_fraction(u, 0.5)[0]
    obs = [float(r["observed_t"]) for r in t if r["observed_t"]]
    assert obs and max(obs) <= t_star
