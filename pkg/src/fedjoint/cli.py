"""Command line: fedjoint <subcommand> [options]."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np
import yaml

from . import cmapss, harness, synth
from .baselines import train_method
from .data import read_fleet, write_fleet
from .federation import FedConfig, RoundHistory, make_transport
from .joint import load_model, save_model

log = logging.getLogger("fedjoint")


def load_config(path) -> dict:
    """YAML or JSON config file as a dict (empty when no path)."""
    if not path:
        return {}
    text = Path(path).read_text()
    data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config must be a mapping")
    return data


def _floats(s):
    return [float(x) for x in str(s).split(",") if x.strip()]


def _test_site(args):
    return None if args.test_site is None or args.test_site < 0 else args.test_site


# --- subcommands -------------------------------------------------------------------

def cmd_synth(args, conf):
    kw = dict(conf.get("synth", {}))
    for k in ("scenario", "n_sites", "units_per_site"):
        v = getattr(args, k)
        if v is not None:
            kw[k] = v
    kw["seed"] = args.seed
    cfg = synth.SynthConfig(**kw)
    fleet, truths = synth.generate_fleet(cfg)
    out = Path(args.out)
    write_fleet(fleet, out, {"source": "synthetic", "scenario": cfg.scenario, "seed": cfg.seed})
    synth.write_truth(out / "truth.json", truths, cfg)
    print(f"wrote {fleet.total_units} units in {len(fleet.sites)} sites to {out}")


def cmd_ingest(args, conf):
    series = cmapss.parse_fd001(args.input)
    units = cmapss.to_units(series, args.sensor, args.threshold)
    fleet = cmapss.split_sites(units, args.seed, args.n_test, tuple(args.train_sizes))
    stats = None
    if not args.raw:
        fleet, stats = cmapss.standardize(fleet, [s.site_id for s in fleet.sites if s.site_id])
    write_fleet(fleet, args.out, {"source": "cmapss", "sensor": args.sensor,
                                  "threshold": args.threshold, "seed": args.seed,
                                  "standardization": list(stats) if stats else None})
    print(f"wrote {fleet.total_units} units from {len(series)} engines to {args.out}")


def _fed_config(args, conf) -> FedConfig:
    d = dict(harness.PROFILES[args.profile]["fed"])
    d.update(conf.get("fed", {}))
    for k in ("R1", "R2", "E1", "E2", "eta1", "eta2", "optimizer", "optimizer2"):
        v = getattr(args, k, None)
        if v is not None:
            d[k] = v
    return FedConfig.from_dict(d)


def cmd_train(args, conf):
    fleet = read_fleet(args.data)
    manifest = json.loads((Path(args.data) / "manifest.json").read_text())
    baseline = args.baseline or ("exponential" if manifest.get("source") == "cmapss" else "weibull")
    ts = _test_site(args)
    train = fleet.without(ts) if ts is not None else fleet
    cfg = _fed_config(args, conf)
    mgp_kw = dict(harness.PROFILES[args.profile]["mgp"])
    mgp_kw.update(conf.get("mgp", {}))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    transport = make_transport(args.transport) if args.method == "fed" else None
    hist_path = out / "round_history.jsonl"
    if hist_path.exists():
        hist_path.unlink()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        try:
            if args.method == "fed":
                from .federation import train_joint

                model, msgs = train_joint(train, cfg, transport, baseline, "fed", mgp_kw,
                                          RoundHistory(hist_path))
            else:
                model, msgs = train_method(args.method, train, cfg, baseline, mgp_kw)
        finally:
            if transport is not None:
                transport.close()
    save_model(model, out)
    print(f"trained {args.method} model on {train.total_units} units; "
          f"{len(msgs)} messages; saved to {out}")


def cmd_predict(args, conf):
    model = load_model(args.model)
    fleet = read_fleet(args.data)
    site = fleet.site(args.site)
    alphas = _floats(args.alpha)
    dts = _floats(args.dt)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        preds = harness.predict_test_site(model, site, alphas, dts)
        harness.write_predictions_csv(args.out, preds)
        if args.curves:
            d = Path(args.curves)
            d.mkdir(parents=True, exist_ok=True)
            for u in site.units:
                for a in alphas:
                    harness.write_survival_plot_data(
                        d / f"survival_unit{u.unit_id}_alpha{a:g}.csv", model, u, a)
                    harness.write_trajectory_plot_data(
                        d / f"trajectory_unit{u.unit_id}_alpha{a:g}.csv", model, u, a)
    print(f"wrote {len(preds)} predictions to {args.out}")


def _read_predictions(path):
    rows = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rows.append(r)
    return rows


def cmd_evaluate(args, conf):
    fleet = read_fleet(args.data)
    site = fleet.site(args.site)
    units = {u.unit_id: u for u in site.units}
    truths = None
    if args.truth:
        _, truths = synth.read_truth(args.truth)
    rows = _read_predictions(args.predictions)
    dt_cols = [c for c in rows[0] if c.startswith("F_dt")] if rows else []
    out = {"mae_mrl": {}, "mae_f": {}}
    for a in sorted({r["alpha"] for r in rows}, key=float):
        sel = [r for r in rows if r["alpha"] == a]
        tr, es = [], []
        for r in sel:
            T = harness.true_failure_time(units[int(r["unit_id"])], truths, site.site_id)
            if T is not None:
                tr.append(T - float(r["t_star"]))
                es.append(float(r["mean_rul"]))
        out["mae_mrl"][a] = harness.mae_mrl(tr, es)
        if truths is not None:
            out["mae_f"][a] = {}
            for c in dt_cols:
                dt = float(c[4:])
                t_true = [truths[(site.site_id, int(r["unit_id"]))].conditional_failure(
                    float(r["t_star"]), dt) for r in sel]
                out["mae_f"][a][c[4:]] = harness.mae_f(t_true, [float(r[c]) for r in sel])
    text = json.dumps(out, indent=1, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text)
    print(text)


def _experiment_config(args, conf) -> harness.ExperimentConfig:
    exp = dict(conf.get("experiment", {}))
    if "fed" in conf:
        exp["fed"] = conf["fed"]
    if "mgp" in conf:
        exp["mgp"] = conf["mgp"]
    for k in ("scenario", "repeats", "source", "sensor", "cmapss_path", "n_sites",
              "units_per_site", "transport", "workers"):
        v = getattr(args, k, None)
        if v is not None:
            exp[k] = v
    if args.methods:
        exp["methods"] = args.methods.split(",")
    if args.alpha:
        exp["alphas"] = _floats(args.alpha)
    if args.dt:
        exp["dts"] = _floats(args.dt)
    exp["seed"] = args.seed
    exp["out_dir"] = args.out
    return harness.ExperimentConfig.from_profile(args.profile, **exp)


def cmd_experiment(args, conf):
    cfg = _experiment_config(args, conf)
    report = harness.run_experiment(cfg)
    for m in cfg.methods:
        cells = [harness.fmt_cell(*report.summary(m, a)) for a in cfg.alphas]
        print(m, " | ".join(cells))
    if report.failures:
        print("incomplete:", "; ".join(report.failures))
        return 1
    return 0


def cmd_emit_tables(args, conf):
    report = harness.load_report(args.report)
    files = harness.emit_tables(report, args.out, tuple(args.format))
    for f in files:
        print(f)


# --- parser ------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedjoint", description=__doc__)
    p.add_argument("--seed", type=int, default=0, help="base random seed")
    p.add_argument("--config", help="YAML or JSON config file")
    p.add_argument("--profile", choices=sorted(harness.PROFILES), default="desk")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic fleet")
    s.add_argument("--scenario", choices=["I", "II"])
    s.add_argument("--n-sites", dest="n_sites", type=int)
    s.add_argument("--units-per-site", dest="units_per_site", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("ingest-cmapss", help="convert a C-MAPSS training file")
    s.add_argument("--input", required=True)
    s.add_argument("--sensor", type=int, default=4)
    s.add_argument("--threshold", type=float, default=cmapss.DEFAULT_THRESHOLD)
    s.add_argument("--n-test", dest="n_test", type=int, default=20)
    s.add_argument("--train-sizes", dest="train_sizes", type=int, nargs="+", default=[20, 20])
    s.add_argument("--raw", action="store_true", help="skip standardisation")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("train", help="train one method")
    s.add_argument("--data", required=True)
    s.add_argument("--method", choices=list(harness.METHODS), default="fed")
    s.add_argument("--transport", choices=["loopback", "stream"], default="loopback")
    s.add_argument("--baseline", choices=["weibull", "exponential"])
    s.add_argument("--test-site", dest="test_site", type=int, default=0,
                   help="site held out of training (-1 keeps all)")
    for k, t in (("R1", int), ("R2", int), ("E1", int), ("E2", int), ("eta1", float),
                 ("eta2", float)):
        s.add_argument(f"--{k}", type=t)
    s.add_argument("--optimizer", choices=["gd", "adam"])
    s.add_argument("--optimizer2", choices=["gd", "adam", "newton"])
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="predict mean RUL and failure probabilities")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--site", type=int, default=0)
    s.add_argument("--alpha", default="0.3,0.5,0.7")
    s.add_argument("--dt", default="12,15,18")
    s.add_argument("--curves", help="directory for survival/trajectory plot data")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("evaluate", help="score a predictions file")
    s.add_argument("--predictions", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--site", type=int, default=0)
    s.add_argument("--truth", help="truth sidecar for MAE_F")
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("experiment", help="repeated comparison of methods")
    s.add_argument("--source", choices=["synthetic", "cmapss"])
    s.add_argument("--scenario", choices=["I", "II"])
    s.add_argument("--sensor", type=int)
    s.add_argument("--cmapss-path", dest="cmapss_path")
    s.add_argument("--n-sites", dest="n_sites", type=int)
    s.add_argument("--units-per-site", dest="units_per_site", type=int)
    s.add_argument("--repeats", type=int)
    s.add_argument("--methods", help="comma-separated subset of fed,cen,ind,lmm")
    s.add_argument("--alpha")
    s.add_argument("--dt")
    s.add_argument("--transport", choices=["loopback", "stream"])
    s.add_argument("--workers", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("emit-tables", help="render tables from a metrics report")
    s.add_argument("--report", required=True)
    s.add_argument("--format", nargs="+", choices=["csv", "json"], default=["csv", "json"])
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_emit_tables)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    np.seterr(over="ignore")
    conf = load_config(args.config)
    try:
        rc = args.func(args, conf)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return int(rc or 0)


if __name__ == "__main__":
    sys.exit(main())
