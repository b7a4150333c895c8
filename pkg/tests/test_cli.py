import csv
import json

import pytest

from fedjoint import federation
from fedjoint.cli import load_config, main

CONFIG = """\
fed:
  R1: 3
  R2: 3
mgp:
  n_latent: 1
  n_inducing: 4
"""


@pytest.fixture
def conf(tmp_path):
    p = tmp_path / "conf.yaml"
    p.write_text(CONFIG)
    return str(p)


def test_load_config(tmp_path, conf):
    assert load_config(conf)["fed"]["R1"] == 3
    j = tmp_path / "c.json"
    j.write_text(json.dumps({"fed": {"R2": 9}}))
    assert load_config(j) == {"fed": {"R2": 9}}
    assert load_config(None) == {}
    bad = tmp_path / "bad.yaml"
    bad.write_text("- 1\n- 2\n")
    with pytest.raises(ValueError):
        load_config(bad)


def test_pipeline(tmp_path, conf, capsys):
    data, model = tmp_path / "fleet", tmp_path / "model"
    g = ["--seed", "3", "--config", conf]
    assert main(g + ["synth", "--n-sites", "3", "--units-per-site", "4", "--out", str(data)]) == 0
    assert (data / "manifest.json").exists() and (data / "truth.json").exists()

    assert main(g + ["train", "--data", str(data), "--method", "fed", "--transport", "stream",
                     "--out", str(model)]) == 0
    hist = (model / "round_history.jsonl").read_text().splitlines()
    assert len(hist) == 3 + 3
    assert [json.loads(h)["stage"] for h in hist] == ["mgp"] * 3 + ["cox"] * 3

    preds = tmp_path / "preds.csv"
    curves = tmp_path / "curves"
    assert main(g + ["predict", "--model", str(model), "--data", str(data), "--alpha", "0.5",
                     "--dt", "12,15", "--curves", str(curves), "--out", str(preds)]) == 0
    rows = list(csv.DictReader(open(preds)))
    assert len(rows) == 4 and {"F_dt12", "F_dt15"} <= set(rows[0])
    assert len(list(curves.glob("survival_*.csv"))) == 4
    assert len(list(curves.glob("trajectory_*.csv"))) == 4

    ev = tmp_path / "eval.json"
    assert main(g + ["evaluate", "--predictions", str(preds), "--data", str(data),
                     "--truth", str(data / "truth.json"), "--out", str(ev)]) == 0
    scores = json.loads(ev.read_text())
    assert scores["mae_mrl"]["0.5"] >= 0
    assert 0 <= scores["mae_f"]["0.5"]["12"] <= 1

    for method in ("cen", "ind", "lmm"):
        out = tmp_path / f"model_{method}"
        assert main(g + ["train", "--data", str(data), "--method", method,
                         "--out", str(out)]) == 0
        assert main(g + ["predict", "--model", str(out), "--data", str(data), "--alpha", "0.7",
                         "--out", str(tmp_path / f"p_{method}.csv")]) == 0


def test_experiment_and_tables(tmp_path, conf):
    out = tmp_path / "exp"
    assert main(["--config", conf, "experiment", "--scenario", "II", "--n-sites", "2",
                 "--units-per-site", "4", "--repeats", "1", "--methods", "fed,lmm",
                 "--transport", "stream", "--out", str(out)]) == 0
    rep = json.loads((out / "metrics.json").read_text())
    assert rep["complete"] and set(rep["mrl"]) == {"fed", "lmm"}
    tables = tmp_path / "tables"
    assert main(["emit-tables", "--report", str(out / "metrics.json"), "--format", "csv",
                 "--out", str(tables)]) == 0
    assert (out / "table_mae_mrl.csv").read_bytes() == (tables / "table_mae_mrl.csv").read_bytes()


def test_errors_exit_with_code_two(tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err
    # a missing turbofan file fails every repeat, so the report is incomplete
    assert main(["experiment", "--source", "cmapss", "--cmapss-path",
                 str(tmp_path / "none.txt"), "--repeats", "1", "--out", str(tmp_path / "e")]) == 1
    assert "FileNotFoundError" in capsys.readouterr().out
    with pytest.raises(SystemExit):
        main(["train", "--data", "x", "--method", "svm", "--out", "y"])


def test_messages_contain_only_shared_parameters(tmp_path, conf):
    data = tmp_path / "fleet"
    main(["--config", conf, "synth", "--n-sites", "3", "--units-per-site", "3", "--out", str(data)])
    from fedjoint.data import read_fleet
    fleet = read_fleet(data).without(0)
    tr = federation.StreamTransport()
    federation.train_joint(fleet, federation.FedConfig(R1=2, R2=2), tr,
                           mgp_kw={"n_latent": 1, "n_inducing": 4})
    tr.close()
    assert len(tr.raw_lines) == 2 * (2 + 2)
    for line in tr.raw_lines:
        assert federation.audit_message(line) == []
