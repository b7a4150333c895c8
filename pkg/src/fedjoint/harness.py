"""Repeated experiments, error metrics, result tables and plot data."""

from __future__ import annotations

import csv
import json
import logging
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import cmapss, cox, synth
from .baselines import train_method
from .data import FleetDataset, truncate_at_fraction
from .federation import FedConfig, audit_message, make_transport

log = logging.getLogger(__name__)

METHODS = ("fed", "cen", "ind", "lmm")
SYNTH_DTS = (12.0, 15.0, 18.0)
CMAPSS_DTS = (50.0, 70.0, 90.0)
ALPHAS = (0.3, 0.5, 0.7)


# --- metrics -------------------------------------------------------------------

def mae_mrl(true_rul, est_rul) -> float:
    a, b = np.asarray(true_rul, dtype=float), np.asarray(est_rul, dtype=float)
    if a.shape != b.shape:
        raise ValueError("length mismatch")
    if a.size == 0:
        return float("nan")
    return float(np.mean(np.abs(a - b)))


def mae_f(true_f, est_f) -> float:
    a, b = np.asarray(true_f, dtype=float), np.asarray(est_f, dtype=float)
    if a.shape != b.shape:
        raise ValueError("length mismatch")
    if np.any((a < 0) | (a > 1)) or np.any((b < 0) | (b > 1)):
        raise ValueError("probabilities must lie in [0, 1]")
    if a.size == 0:
        return float("nan")
    return float(np.mean(np.abs(a - b)))


def fmt_cell(mean: float, sd: float) -> str:
    return f"{mean:.2f} ({sd:.2f})"


# --- configuration ---------------------------------------------------------------

PROFILES = {
    "desk": {
        "n_sites": 3, "units_per_site": 10, "repeats": 5,
        "fed": {"eta1": 0.02, "eta2": 1.0, "E1": 5, "E2": 1, "R1": 100, "R2": 30,
                "optimizer": "adam", "optimizer2": "newton", "ng_rate": 0.5},
        "mgp": {"n_latent": 2, "n_inducing": 16},
    },
    "paper": {
        "n_sites": 3, "units_per_site": 20, "repeats": 20,
        "fed": {"eta1": 0.02, "eta2": 1.0, "E1": 5, "E2": 1, "R1": 300, "R2": 60,
                "optimizer": "adam", "optimizer2": "newton", "ng_rate": 0.5},
        "mgp": {"n_latent": 2, "n_inducing": 16},
    },
}


@dataclass
class ExperimentConfig:
    methods: tuple = METHODS
    source: str = "synthetic"              # synthetic | cmapss
    scenario: str = "I"
    sensor: int = 4
    cmapss_path: str | None = None
    n_sites: int = 3                       # including the test site 0
    units_per_site: int = 10
    alphas: tuple = ALPHAS
    dts: tuple | None = None
    repeats: int = 5
    seed: int = 0
    fed: dict = field(default_factory=lambda: dict(PROFILES["desk"]["fed"]))
    mgp: dict = field(default_factory=lambda: dict(PROFILES["desk"]["mgp"]))
    transport: str = "loopback"
    out_dir: str | None = None
    workers: int = 1

    def __post_init__(self):
        self.methods = tuple(self.methods)
        self.alphas = tuple(float(a) for a in self.alphas)
        if self.dts is None:
            self.dts = CMAPSS_DTS if self.source == "cmapss" else SYNTH_DTS
        self.dts = tuple(float(d) for d in self.dts)
        if any(not 0 < a <= 1 for a in self.alphas):
            raise ValueError("alpha must lie in (0, 1]")
        if any(d <= 0 for d in self.dts):
            raise ValueError("dt must be positive")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ValueError(f"unknown methods {sorted(bad)}")
        if self.source not in ("synthetic", "cmapss"):
            raise ValueError(f"unknown source {self.source!r}")

    @property
    def seeds(self):
        return [self.seed + r for r in range(self.repeats)]

    @property
    def fed_config(self) -> FedConfig:
        return FedConfig.from_dict(self.fed)

    @classmethod
    def from_profile(cls, name: str, **overrides) -> "ExperimentConfig":
        p = PROFILES[name]
        kw = {"n_sites": p["n_sites"], "units_per_site": p["units_per_site"],
              "repeats": p["repeats"], "fed": dict(p["fed"]), "mgp": dict(p["mgp"])}
        for k in ("fed", "mgp"):
            if k in overrides:
                kw[k].update(overrides.pop(k))
        kw.update(overrides)
        return cls(**kw)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))


# --- report ----------------------------------------------------------------------------

@dataclass
class MetricsReport:
    """Raw per-repeat values per cell plus summaries.

    ``mrl[method][alpha]`` and ``f[method][alpha][dt]`` hold one value per
    repeat, in seed order.
    """

    config: dict
    mrl: dict = field(default_factory=dict)
    f: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    runtime: dict = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return not self.failures

    def summary(self, method, alpha, dt=None):
        vals = (self.mrl[method][_k(alpha)] if dt is None
                else self.f[method][_k(alpha)][_k(dt)])
        v = np.asarray([x for x in vals if x is not None and np.isfinite(x)], dtype=float)
        if v.size == 0:
            return float("nan"), float("nan")
        return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0

    def to_dict(self, with_runtime=False) -> dict:
        d = {"format": "fedjoint-metrics", "version": 1, "config": self.config,
             "mrl": self.mrl, "f": self.f, "failures": self.failures, "notes": self.notes,
             "complete": self.complete}
        if with_runtime:
            d["runtime"] = self.runtime
        return d

    @classmethod
    def from_dict(cls, d) -> "MetricsReport":
        return cls(d["config"], d["mrl"], d["f"], d.get("failures", []), d.get("notes", []),
                   d.get("runtime", {}))


def _k(x) -> str:
    return format(float(x), "g")


# --- data per repeat ---------------------------------------------------------------------

def _synthetic_split(cfg: ExperimentConfig, seed: int):
    sc = synth.SynthConfig(n_sites=cfg.n_sites, units_per_site=cfg.units_per_site,
                           scenario=cfg.scenario, seed=seed)
    fleet, truths = synth.generate_fleet(sc)
    return fleet, truths


def _cmapss_split(cfg: ExperimentConfig, seed: int, series=None):
    path = cmapss.locate_fd001(cfg.cmapss_path)
    if path is None:
        raise FileNotFoundError("C-MAPSS FD001 training file not found; set FEDJOINT_FD001 "
                                "or pass cmapss_path")
    series = series if series is not None else cmapss.parse_fd001(path)
    units = cmapss.to_units(series, cfg.sensor)
    sizes = (cfg.units_per_site,) * (cfg.n_sites - 1)
    fleet = cmapss.split_sites(units, seed, n_test=cfg.units_per_site, train_sizes=sizes)
    fleet, _ = cmapss.standardize(fleet, [s.site_id for s in fleet.sites if s.site_id != 0])
    return fleet, None


# --- one repeat ----------------------------------------------------------------------------

def true_failure_time(unit, truths=None, site_id=0):
    """Failure time used for the true RUL, or None when it is unknown."""
    if truths is not None:
        T = truths[(site_id, unit.unit_id)].failure_time
        return float(T) if np.isfinite(T) else None
    return float(unit.event_time) if unit.event_indicator else None


def evaluate_predictions(preds, test_site, truths, dts, reference=None):
    """MAE_mrl and MAE_F per alpha.

    With synthetic truths the true RUL is the sampled failure time minus t*
    (so artificially censored units still count); otherwise only units with
    an observed failure enter MAE_mrl.  MAE_F uses every test unit.
    """
    units = {u.unit_id: u for u in test_site.units}
    by_alpha: dict = {}
    for p in preds:
        by_alpha.setdefault(p.alpha, []).append(p)
    out_mrl, out_f = {}, {}
    for a, ps in by_alpha.items():
        tr, es = [], []
        for p in ps:
            T = true_failure_time(units[p.unit_id], truths, test_site.site_id)
            if T is not None:
                tr.append(T - p.t_star)
                es.append(p.mean_rul)
        out_mrl[_k(a)] = mae_mrl(tr, es)
        out_f[_k(a)] = {}
        for dt in dts:
            t_true, t_est = [], []
            for p in ps:
                if truths is not None:
                    t_true.append(truths[(test_site.site_id, p.unit_id)].conditional_failure(
                        p.t_star, dt))
                elif reference is not None:
                    t_true.append(reference[(p.unit_id, p.alpha)][float(dt)])
                else:
                    continue
                t_est.append(p.failure_prob[float(dt)])
            out_f[_k(a)][_k(dt)] = mae_f(t_true, t_est)
    return out_mrl, out_f


def predict_test_site(model, test_site, alphas, dts):
    preds = []
    for u in test_site.units:
        for a in alphas:
            preds.append(model.predict(u, a, dts))
    return preds


def cmapss_reference(model, test_site, alphas, dts):
    """Reference failure probabilities from a pooled model fed the full test signals."""
    ref = {}
    for u in test_site.units:
        traj, _ = model.test_curve(u)
        for a in alphas:
            t_star, _ = truncate_at_fraction(u, a)
            ref[(u.unit_id, a)] = {float(dt): cox.failure_probability(t_star, dt, u.covariates,
                                                                      traj, model.cox)
                                   for dt in dts}
    return ref


def run_repeat(cfg: ExperimentConfig, seed: int, out_dir: Path | None = None):
    """Train every method on one split and score it; returns a dict of results."""
    if cfg.source == "synthetic":
        fleet, truths = _synthetic_split(cfg, seed)
        baseline = "weibull"
    else:
        fleet, truths = _cmapss_split(cfg, seed)
        baseline = "exponential"
    test = fleet.site(0)
    train = fleet.without(0)
    fed_cfg = cfg.fed_config
    res = {"seed": seed, "mrl": {}, "f": {}, "runtime": {}, "messages": {}, "audit": {},
           "fallbacks": {}}
    reference = None
    models = {}
    for method in cfg.methods:
        t0 = time.perf_counter()
        transport = make_transport(cfg.transport) if method == "fed" else None
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            try:
                model, msgs = train_method(method, train, fed_cfg, baseline, cfg.mgp, transport)
            finally:
                if transport is not None:
                    transport.close()
            preds = predict_test_site(model, test, cfg.alphas, cfg.dts)
        if truths is None and reference is None:
            ref_model = models.get("cen") or (model if method == "cen" else None)
            if ref_model is None:
                ref_model, _ = train_method("cen", train, fed_cfg, baseline, cfg.mgp)
            reference = cmapss_reference(ref_model, test, cfg.alphas, cfg.dts)
        models[method] = model
        mrl, f = evaluate_predictions(preds, test, truths, cfg.dts, reference)
        res["mrl"][method] = mrl
        res["f"][method] = f
        res["runtime"][method] = time.perf_counter() - t0
        res["fallbacks"][method] = sum(p.fallback for p in preds)
        if method == "fed":
            res["messages"][method] = len(msgs)
            res["audit"][method] = sum(len(audit_message(m)) for m in msgs)
        if out_dir is not None:
            write_predictions_csv(out_dir / f"predictions_{method}_seed{seed}.csv", preds)
    return res


def run_experiment(cfg: ExperimentConfig) -> MetricsReport:
    out = Path(cfg.out_dir) if cfg.out_dir else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    results = {}

    def one(seed):
        sub = None
        if out is not None:
            sub = out / f"repeat_seed{seed}"
            sub.mkdir(exist_ok=True)
        try:
            return seed, run_repeat(cfg, seed, sub), None
        except Exception as exc:           # recorded, report marked incomplete
            log.exception("repeat with seed %s failed", seed)
            return seed, None, f"seed {seed}: {type(exc).__name__}: {exc}"

    if cfg.workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        import multiprocessing as mp

        with ProcessPoolExecutor(cfg.workers, mp_context=mp.get_context("spawn")) as ex:
            outs = list(ex.map(_repeat_worker, [(cfg, s, out) for s in cfg.seeds]))
    else:
        outs = [one(s) for s in cfg.seeds]
    # output location and worker count do not affect results, so keep them out of the report
    conf = {k: v for k, v in cfg.to_dict().items() if k not in ("out_dir", "workers")}
    report = MetricsReport(conf)
    for seed, res, err in outs:
        results[seed] = res
        if err:
            report.failures.append(err)
    for m in cfg.methods:
        report.mrl[m] = {_k(a): [] for a in cfg.alphas}
        report.f[m] = {_k(a): {_k(d): [] for d in cfg.dts} for a in cfg.alphas}
        report.runtime[m] = []
    for seed in cfg.seeds:
        res = results[seed]
        for m in cfg.methods:
            for a in cfg.alphas:
                report.mrl[m][_k(a)].append(None if res is None else res["mrl"][m][_k(a)])
                for d in cfg.dts:
                    report.f[m][_k(a)][_k(d)].append(
                        None if res is None else res["f"][m][_k(a)][_k(d)])
            report.runtime[m].append(None if res is None else res["runtime"][m])
    report.runtime["messages"] = [None if results[s] is None else results[s]["messages"]
                                  for s in cfg.seeds]
    report.runtime["audit_violations"] = [None if results[s] is None else results[s]["audit"]
                                          for s in cfg.seeds]
    report.runtime["fallbacks"] = [None if results[s] is None else results[s]["fallbacks"]
                                   for s in cfg.seeds]
    if cfg.source == "cmapss":
        report.notes.append("MAE_F is reference-relative: reference probabilities come from "
                            "a pooled model given the full test signals")
    if out is not None:
        emit_tables(report, out)
    return report


def _repeat_worker(args):
    cfg, seed, out = args
    sub = None
    if out is not None:
        sub = Path(out) / f"repeat_seed{seed}"
        sub.mkdir(exist_ok=True)
    try:
        return seed, run_repeat(cfg, seed, sub), None
    except Exception as exc:
        return seed, None, f"seed {seed}: {type(exc).__name__}: {exc}"


# --- outputs --------------------------------------------------------------------------------

def write_predictions_csv(path, preds) -> None:
    dts = sorted({dt for p in preds for dt in p.failure_prob})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["site_id", "unit_id", "alpha", "t_star", "mean_rul", "tail_survival",
                    "fallback"] + [f"F_dt{_k(d)}" for d in dts])
        for p in preds:
            w.writerow([p.site_id, p.unit_id, _k(p.alpha), repr(p.t_star), repr(p.mean_rul),
                        repr(p.tail_survival), int(p.fallback)]
                       + [repr(p.failure_prob[d]) for d in dts])


def emit_tables(report: MetricsReport, out_dir, formats=("csv", "json")) -> list:
    """MAE_mrl and MAE_F tables with "mean (sd)" cells, plus the JSON report."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    cfg = report.config
    alphas = [_k(a) for a in cfg.get("alphas", [])]
    dts = [_k(d) for d in (cfg.get("dts") or [])]
    methods = list(report.mrl)
    if "csv" in formats:
        p = out_dir / "table_mae_mrl.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method"] + [f"alpha={a}" for a in alphas])
            for m in methods:
                w.writerow([m] + [fmt_cell(*report.summary(m, a)) for a in alphas])
        written.append(p)
        p = out_dir / "table_mae_f.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method"] + [f"alpha={a} dt={d}" for a in alphas for d in dts])
            for m in methods:
                w.writerow([m] + [fmt_cell(*report.summary(m, a, d)) for a in alphas
                                  for d in dts])
            for note in report.notes:
                w.writerow([f"# {note}"])
        written.append(p)
    if "json" in formats:
        p = out_dir / "metrics.json"
        p.write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True))
        written.append(p)
        p = out_dir / "runtime.json"
        p.write_text(json.dumps(report.runtime, indent=1, sort_keys=True))
        written.append(p)
    return written


def load_report(path) -> MetricsReport:
    d = json.loads(Path(path).read_text())
    rt = Path(path).with_name("runtime.json")
    if rt.exists():
        d["runtime"] = json.loads(rt.read_text())
    return MetricsReport.from_dict(d)


# --- plot data ------------------------------------------------------------------------------

def write_survival_plot_data(path, model, unit, alpha, n_points=200) -> None:
    t_star, partial = truncate_at_fraction(unit, alpha)
    traj, _ = model.test_curve(partial)
    grid = np.linspace(t_star, model.horizon, n_points)
    cox.write_survival_csv(path, t_star, grid, unit.covariates, traj, model.cox)


def write_trajectory_plot_data(path, model, unit, alpha, n_points=200) -> None:
    """Fitted mean with a 95% band, plus the observations used."""
    t_star, partial = truncate_at_fraction(unit, alpha)
    grid = np.linspace(0.0, max(model.t_end, unit.event_time), n_points)
    if model.mgp_state is not None:
        g = model.test_predictor(partial).predict(grid)
        mean, sd = g.mean, np.sqrt(g.var)
    else:
        b = model.lmm.posterior(partial.timestamps, partial.signal)
        C = model.lmm.posterior_cov(partial.timestamps)
        from .baselines import _design

        X = _design(grid)
        mean = X @ b
        sd = np.sqrt(np.maximum(np.einsum("np,pq,nq->n", X, C, X), 0.0))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "mean", "lower95", "upper95", "observed_t", "observed_y"])
        obs = list(zip(partial.timestamps, partial.signal))
        for i, t in enumerate(grid):
            ot, oy = obs[i] if i < len(obs) else ("", "")
            w.writerow([repr(float(t)), repr(float(mean[i])), repr(float(mean[i] - 1.96 * sd[i])),
                        repr(float(mean[i] + 1.96 * sd[i])),
                        repr(float(ot)) if ot != "" else "", repr(float(oy)) if oy != "" else ""])


def fleet_for_config(cfg: ExperimentConfig, seed: int) -> FleetDataset:
    fleet, _ = (_synthetic_split if cfg.source == "synthetic" else _cmapss_split)(cfg, seed)
    return fleet
