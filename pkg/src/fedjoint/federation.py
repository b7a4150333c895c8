"""Two-stage federated training: sites iterate locally, the server averages.

Stage ``mgp`` shares the latent lengthscales and q(u); stage ``cox`` shares
the survival parameters.  Site-specific kernel/noise parameters and every
data array stay inside the site worker and never enter a message.

With ``optimizer="gd"``, one local step per round and a common start, the
averaged iterate equals full-batch gradient descent on the pooled objective:
each site descends its per-observation (MGP) or per-unit (Cox) average loss,
and the averaging weights are the matching observation or unit shares.
"""

from __future__ import annotations

import json
import queue
import socket
import threading
from dataclasses import dataclass, field

import numpy as np

from . import cox, mgp

LAYOUT_VERSION = 1
STAGES = ("mgp", "cox")
GLOBAL_FIELDS = {"mgp": ("log_ell", "mu", "psi"),
                 "cox": ("log_lambda", "log_rho", "gamma", "beta")}
MESSAGE_FIELDS = ("round", "site", "stage", "layout_version", "layout", "values",
                  "n_obs", "n_units")


class FederationError(RuntimeError):
    """Round failure.  ``last_good`` holds the last fully aggregated state."""

    def __init__(self, msg, last_good=None):
        super().__init__(msg)
        self.last_good = last_good


@dataclass
class FedConfig:
    eta1: float = 0.01
    eta2: float = 0.01
    E1: int = 1
    E2: int = 1
    R1: int = 100
    R2: int = 100
    optimizer: str = "gd"          # stage 1: gd | adam
    optimizer2: str = "gd"         # stage 2: gd | adam | newton
    ng_rate: float = 0.5           # natural-gradient rate for q(u) under adam
    lr_decay: float = 1.0          # adam step-size factor applied after every round
    early_stop: float | None = None

    def __post_init__(self):
        if self.eta1 <= 0 or self.eta2 <= 0:
            raise ValueError("step sizes must be positive")
        if min(self.E1, self.E2, self.R1, self.R2) < 1:
            raise ValueError("iteration and round counts must be >= 1")
        if self.optimizer not in ("gd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.optimizer2 not in ("gd", "adam", "newton"):
            raise ValueError(f"unknown optimizer2 {self.optimizer2!r}")
        if not 0 < self.ng_rate <= 1:
            raise ValueError("ng_rate must lie in (0, 1]")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "FedConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


def check_weights(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
        raise ValueError("aggregation weights must be nonnegative and sum to 1")
    return w


# --- messages -------------------------------------------------------------------

@dataclass
class ParameterMessage:
    round: int
    site: int
    stage: str
    layout: list                   # [(name, shape), ...]
    values: np.ndarray
    n_obs: int = 0
    n_units: int = 0
    layout_version: int = LAYOUT_VERSION

    def to_json(self) -> str:
        return json.dumps({
            "round": self.round, "site": self.site, "stage": self.stage,
            "layout_version": self.layout_version,
            "layout": [[n, list(s)] for n, s in self.layout],
            "values": [format(float(v), ".17g") for v in self.values],
            "n_obs": self.n_obs, "n_units": self.n_units,
        }, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "ParameterMessage":
        d = json.loads(line)
        return cls(int(d["round"]), int(d["site"]), d["stage"],
                   [(n, tuple(s)) for n, s in d["layout"]],
                   np.array([float(v) for v in d["values"]], dtype=float),
                   int(d["n_obs"]), int(d["n_units"]), int(d["layout_version"]))


def flatten(tree: dict, names) -> tuple:
    layout, parts = [], []
    for n in names:
        a = np.asarray(tree[n], dtype=float)
        layout.append((n, tuple(a.shape)))
        parts.append(a.reshape(-1))
    return layout, np.concatenate(parts) if parts else np.zeros(0)


def unflatten(layout, values) -> dict:
    out, pos = {}, 0
    for n, shape in layout:
        size = int(np.prod(shape)) if len(shape) else 1
        out[n] = np.array(values[pos : pos + size]).reshape(shape)
        pos += size
    return out


def audit_message(msg, expected_size: int | None = None) -> list:
    """Privacy schema check; returns a list of violations (empty if clean).

    A clean message carries only whitelisted global parameter names, two
    integer counts, and a payload whose length is fixed by the layout.
    """
    if isinstance(msg, str):
        d = json.loads(msg)
    else:
        d = json.loads(msg.to_json())
    bad = []
    extra = set(d) - set(MESSAGE_FIELDS)
    if extra:
        bad.append(f"unexpected fields {sorted(extra)}")
    stage = d.get("stage")
    if stage not in STAGES:
        return bad + [f"unknown stage {stage!r}"]
    allowed = GLOBAL_FIELDS[stage]
    size = 0
    for name, shape in d.get("layout", []):
        if name not in allowed:
            bad.append(f"field {name!r} is not a shared parameter")
        size += int(np.prod(shape)) if shape else 1
    if size != len(d.get("values", [])):
        bad.append("payload length does not match layout")
    if expected_size is not None and size != expected_size:
        bad.append(f"payload size {size} differs from the global parameter size {expected_size}")
    for k in ("n_obs", "n_units"):
        if not isinstance(d.get(k), int):
            bad.append(f"{k} must be an integer count")
    return bad


# --- transports -------------------------------------------------------------------

class Transport:
    """Site -> server uploads with a per-round barrier."""

    def __init__(self):
        self.log: list = []        # every delivered message, in arrival order

    def send(self, msg: ParameterMessage) -> None:
        raise NotImplementedError

    def _next(self, timeout):
        raise NotImplementedError

    def receive_round(self, round_idx: int, stage: str, sites, timeout: float = 60.0) -> list:
        """Block until one message from every site has arrived for this round."""
        pending = set(sites)
        got = {}
        while pending:
            try:
                msg = self._next(timeout)
            except queue.Empty:
                raise FederationError(
                    f"{stage} round {round_idx}: no message from sites {sorted(pending)}") from None
            if msg.round != round_idx or msg.stage != stage:
                raise FederationError(f"message for {msg.stage} round {msg.round} arrived during "
                                      f"{stage} round {round_idx}")
            if msg.site in got:
                raise FederationError(f"duplicate message from site {msg.site}")
            if msg.site not in pending:
                raise FederationError(f"message from unknown site {msg.site}")
            got[msg.site] = msg
            pending.discard(msg.site)
            self.log.append(msg)
        return [got[s] for s in sites]

    def close(self):
        pass


class LoopbackTransport(Transport):
    def __init__(self):
        super().__init__()
        self._q = queue.Queue()

    def send(self, msg):
        self._q.put(msg)

    def _next(self, timeout):
        return self._q.get(timeout=timeout)


class StreamTransport(Transport):
    """Newline-delimited JSON over a connected socket pair.

    Sends are serialised by a lock; a reader thread parses lines into a
    queue, so uploads never block on a full socket buffer.
    """

    def __init__(self):
        super().__init__()
        self._tx, self._rx = socket.socketpair()
        self._wfile = self._tx.makefile("w", encoding="utf-8", newline="\n")
        self._lock = threading.Lock()
        self._q = queue.Queue()
        self.raw_lines: list = []
        self._reader = threading.Thread(target=self._read, daemon=True)
        self._reader.start()

    def _read(self):
        with self._rx.makefile("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                self.raw_lines.append(line)
                try:
                    self._q.put(ParameterMessage.from_json(line))
                except (ValueError, KeyError) as exc:
                    self._q.put(exc)

    def send(self, msg):
        with self._lock:
            self._wfile.write(msg.to_json() + "\n")
            self._wfile.flush()

    def _next(self, timeout):
        item = self._q.get(timeout=timeout)
        if isinstance(item, Exception):
            raise FederationError(f"malformed message on stream: {item}")
        return item

    def close(self):
        try:
            self._wfile.close()
            self._tx.close()
        finally:
            self._reader.join(timeout=5)
            self._rx.close()


def make_transport(kind: str) -> Transport:
    if kind == "loopback":
        return LoopbackTransport()
    if kind == "stream":
        return StreamTransport()
    raise ValueError(f"unknown transport {kind!r}")


# --- history -----------------------------------------------------------------------

@dataclass
class RoundHistory:
    """Aggregated payload after every round; optionally mirrored to a file."""

    path: object = None
    records: list = field(default_factory=list)

    def record(self, stage, round_idx, layout, values):
        rec = {"stage": stage, "round": round_idx,
               "layout": [[n, list(s)] for n, s in layout],
               "values": [format(float(v), ".17g") for v in values]}
        self.records.append(rec)
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(rec, separators=(",", ":")) + "\n")

    def values(self, stage):
        return [np.array([float(v) for v in r["values"]]) for r in self.records
                if r["stage"] == stage]


# --- optimisers ----------------------------------------------------------------------

class Adam:
    def __init__(self, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, x, g):
        if self.m is None:
            self.m = np.zeros_like(x)
            self.v = np.zeros_like(x)
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        mh = self.m / (1 - self.b1**self.t)
        vh = self.v / (1 - self.b2**self.t)
        return x - self.lr * mh / (np.sqrt(vh) + self.eps)


def local_update(params, grad_fn, eta: float, E: int):
    """E plain gradient steps ``params <- params - eta * grad``."""
    if eta <= 0 or E < 1:
        raise ValueError("need eta > 0 and E >= 1")
    x = np.array(params, dtype=float)
    for _ in range(E):
        g = np.asarray(grad_fn(x), dtype=float)
        if not np.all(np.isfinite(g)):
            raise FederationError("non-finite gradient in local update")
        x = x - eta * g
    return x


def central_update(messages, weights) -> np.ndarray:
    """Weighted average of the site payloads."""
    if not messages:
        raise FederationError("no messages at barrier")
    w = check_weights(weights)
    if len(w) != len(messages):
        raise FederationError("one weight per message required")
    st = {(m.stage, m.round) for m in messages}
    if len(st) != 1:
        raise FederationError("messages from different stages or rounds")
    if len({m.site for m in messages}) != len(messages):
        raise FederationError("duplicate site message")
    sizes = {len(m.values) for m in messages}
    if len(sizes) != 1:
        raise FederationError("payload sizes differ")
    vals = np.stack([m.values for m in messages])
    if np.all(vals == vals[0]):
        return vals[0].copy()
    return np.einsum("k,kd->d", w, vals)


# --- MGP stage ----------------------------------------------------------------------

def _natural_step(mu, psi, dmu, dpsi, rate):
    """One natural-gradient ascent step on q(u) per latent block.

    dmu, dpsi are derivatives of an ELBO estimate w.r.t. (mu, Psi).
    """
    mu_new, psi_new = np.empty_like(mu), np.empty_like(psi)
    for i in range(mu.shape[0]):
        lam = np.linalg.inv(psi[i])
        lam = 0.5 * (lam + lam.T)
        theta = lam @ mu[i] + rate * (dmu[i] - 2.0 * dpsi[i] @ mu[i])
        lam_new = lam - 2.0 * rate * dpsi[i]
        lam_new = 0.5 * (lam_new + lam_new.T)
        c = np.linalg.cholesky(lam_new)
        p = np.linalg.inv(c).T @ np.linalg.inv(c)
        psi_new[i] = 0.5 * (p + p.T)
        mu_new[i] = psi_new[i] @ theta
    return mu_new, psi_new


class MGPSiteWorker:
    """Holds one site's batch and private parameters."""

    def __init__(self, site, params: mgp.SiteParams, r: float, z, jitter, config: FedConfig):
        self.site_id = site.site_id
        self.batch = mgp.make_batch(site.units)
        self.n_obs = self.batch.n_obs
        self.n_units = site.unit_count
        self.r = float(r)
        self.z = z
        self.jitter = jitter
        self.config = config
        self.loc = {k: np.array(v) for k, v in params.as_tree().items()}
        self.unit_ids = list(params.unit_ids)
        self._adam_loc = {k: Adam(config.eta1) for k in self.loc}
        self._adam_ell = Adam(config.eta1)

    def params(self) -> mgp.SiteParams:
        return mgp.SiteParams.from_tree(self.unit_ids, self.loc)

    def _grads(self, glob):
        val, g_glob, g_loc = mgp.neg_local_elbo_and_grad(glob, self.loc, self.z, self.batch,
                                                          self.r, self.jitter)
        if not np.isfinite(val) or not all(np.all(np.isfinite(a))
                                           for a in list(g_glob.values()) + list(g_loc.values())):
            raise FederationError(f"site {self.site_id}: non-finite MGP objective or gradient")
        return val, g_glob, g_loc

    def local_update(self, glob: dict) -> dict:
        glob = {k: np.array(v) for k, v in glob.items()}
        cfg = self.config
        n = float(self.n_obs)
        for _ in range(cfg.E1):
            _, g_glob, g_loc = self._grads(glob)
            if cfg.optimizer == "gd":
                # globals: step on -V_k / N_k; locals: step on -V_k / N
                for k in glob:
                    glob[k] = glob[k] - cfg.eta1 * g_glob[k] / n
                for k in self.loc:
                    self.loc[k] = self.loc[k] - cfg.eta1 * self.r * g_loc[k] / n
            else:
                glob["log_ell"] = self._adam_ell.step(glob["log_ell"], g_glob["log_ell"] / n)
                for k in self.loc:
                    self.loc[k] = self._adam_loc[k].step(self.loc[k], g_loc[k] / n)
                # ELBO estimate from this site alone: V_k / r_k
                try:
                    glob["mu"], glob["psi"] = _natural_step(
                        glob["mu"], glob["psi"], -g_glob["mu"] / self.r, -g_glob["psi"] / self.r,
                        cfg.ng_rate)
                except np.linalg.LinAlgError as exc:
                    raise FederationError(f"site {self.site_id}: q(u) update lost definiteness") from exc
        for opt in [self._adam_ell, *self._adam_loc.values()]:
            opt.lr *= cfg.lr_decay
        return glob


def _run_rounds(workers, payload, layout, stage, R, weights, transport, history, early_stop,
                expected_size, on_good):
    sites = [w.site_id for w in workers]
    for r in range(R):
        for w in workers:
            tree = w.local_update(unflatten(layout, payload))
            _, vals = flatten(tree, [n for n, _ in layout])
            msg = ParameterMessage(r, w.site_id, stage, layout, vals, w.n_obs, w.n_units)
            bad = audit_message(msg, expected_size)
            if bad:
                raise FederationError(f"privacy audit failed: {bad}")
            transport.send(msg)
        msgs = transport.receive_round(r, stage, sites)
        new = central_update(msgs, weights)
        if not np.all(np.isfinite(new)):
            raise FederationError(f"{stage} round {r}: non-finite aggregate")
        if history is not None:
            history.record(stage, r, layout, new)
        change = np.linalg.norm(new - payload) / max(np.linalg.norm(payload), 1e-300)
        payload = new
        on_good(payload)
        if early_stop is not None and change < early_stop:
            break
    return payload


def run_fed_mgp(fleet, config: FedConfig, transport: Transport | None = None,
                state: mgp.MGPState | None = None, history: RoundHistory | None = None,
                **init_kw) -> mgp.MGPState:
    """Stage 1: federated variational MGP training over the fleet's sites."""
    if not fleet.sites:
        raise ValueError("need at least one training site")
    if state is None:
        state = mgp.init_state(fleet, **init_kw)
    transport = transport or LoopbackTransport()
    batches_n = np.array([s.n_obs for s in fleet.sites], dtype=float)
    r = check_weights(batches_n / batches_n.sum())
    workers = [MGPSiteWorker(s, state.sites[s.site_id], rk, state.z, state.jitter, config)
               for s, rk in zip(fleet.sites, r)]
    layout, payload = flatten(state.global_tree(), GLOBAL_FIELDS["mgp"])
    last = {"payload": payload}

    def good(p):
        last["payload"] = p

    def snapshot():
        out = state.with_global(unflatten(layout, last["payload"]))
        for w in workers:
            out.sites[w.site_id] = w.params()
        return out

    try:
        payload = _run_rounds(workers, payload, layout, "mgp", config.R1, r, transport, history,
                              config.early_stop, len(payload), good)
    except (FederationError, OSError, np.linalg.LinAlgError) as exc:
        raise FederationError(f"MGP stage aborted: {exc}", last_good=snapshot()) from exc
    return snapshot()


# --- Cox stage ----------------------------------------------------------------------

class CoxSiteWorker:
    def __init__(self, site, trajectories, baseline, config: FedConfig):
        self.site_id = site.site_id
        units = list(site.units)
        self.design = cox.CoxDesign(units, [trajectories[(site.site_id, u.unit_id)] for u in units],
                                    baseline)
        self.n_units = len(units)
        self.n_obs = site.n_obs
        self.config = config
        self._adam = Adam(config.eta2)
        self.template = None

    def local_update(self, tree: dict) -> dict:
        _, x = flatten(tree, [n for n in GLOBAL_FIELDS["cox"] if n in tree])
        layout = [(n, np.shape(tree[n])) for n in GLOBAL_FIELDS["cox"] if n in tree]
        cfg = self.config

        def grad(v):
            return self.design.mean_neg_loglik(v)[1]

        if cfg.optimizer2 == "gd":
            try:
                x = local_update(x, grad, cfg.eta2, cfg.E2)
            except FederationError as exc:
                raise FederationError(f"site {self.site_id}: {exc}") from None
        elif cfg.optimizer2 == "adam":
            for _ in range(cfg.E2):
                g = grad(x)
                if not np.all(np.isfinite(g)):
                    raise FederationError(f"site {self.site_id}: non-finite Cox gradient")
                x = self._adam.step(x, g)
            self._adam.lr *= cfg.lr_decay
        else:
            for _ in range(cfg.E2):
                x = self._newton_step(x, cfg.eta2)
        return unflatten(layout, x)


    def _newton_step(self, x, eta):
        """Damped Newton step on the site objective with backtracking."""
        f0, g = self.design.mean_neg_loglik(x)
        if not (np.isfinite(f0) and np.all(np.isfinite(g))):
            raise FederationError(f"site {self.site_id}: non-finite Cox objective")
        H = self.design.mean_neg_hessian(x)
        damp = 0.0
        scale = max(float(np.max(np.abs(np.diag(H)))), 1e-12)
        while True:
            try:
                c = np.linalg.cholesky(H + damp * np.eye(len(x)))
                break
            except np.linalg.LinAlgError:
                damp = max(2.0 * damp, 1e-10 * scale)
        step = np.linalg.solve(c.T, np.linalg.solve(c, g))
        t = eta
        while t > 1e-8:
            y = x - t * step
            fy = self.design.mean_neg_loglik(y)[0]
            if np.isfinite(fy) and fy <= f0:
                return y
            t *= 0.5
        return x


def _cox_tree(p: cox.CoxParams) -> dict:
    t = {"log_lambda": np.array([p.log_lambda])}
    if p.baseline == "weibull":
        t["log_rho"] = np.array([p.log_rho])
    t["gamma"] = np.asarray(p.gamma, dtype=float)
    t["beta"] = np.array([p.beta])
    return t


def _cox_from_tree(template: cox.CoxParams, tree) -> cox.CoxParams:
    return cox.CoxParams(template.baseline, float(tree["log_lambda"][0]),
                         float(tree["log_rho"][0]) if "log_rho" in tree else 0.0,
                         np.array(tree["gamma"], dtype=float), float(tree["beta"][0]))


def run_fed_cox(fleet, trajectories, config: FedConfig, transport: Transport | None = None,
                init: cox.CoxParams | None = None, baseline: str = "weibull",
                history: RoundHistory | None = None) -> cox.CoxParams:
    """Stage 2: federated Cox fit with fixed trajectories (unit-share weights)."""
    if not fleet.sites:
        raise ValueError("need at least one training site")
    units = [u for s in fleet.sites for u in s.units]
    if init is None:
        init = cox.initial_params(units, baseline, len(units[0].covariates))
    transport = transport or LoopbackTransport()
    workers = [CoxSiteWorker(s, trajectories, init.baseline, config) for s in fleet.sites]
    counts = np.array([w.n_units for w in workers], dtype=float)
    weights = check_weights(counts / counts.sum())
    layout, payload = flatten(_cox_tree(init), [n for n in GLOBAL_FIELDS["cox"]
                                                if n in _cox_tree(init)])
    last = {"payload": payload}

    def good(p):
        last["payload"] = p

    try:
        payload = _run_rounds(workers, payload, layout, "cox", config.R2, weights, transport,
                              history, config.early_stop, len(payload), good)
    except (FederationError, OSError) as exc:
        raise FederationError(f"Cox stage aborted: {exc}",
                              last_good=_cox_from_tree(init, unflatten(layout, last["payload"]))
                              ) from exc
    return _cox_from_tree(init, unflatten(layout, payload))


# --- centralised references -------------------------------------------------------------

def centralized_gd_mgp(fleet, state: mgp.MGPState, eta: float, rounds: int) -> mgp.MGPState:
    """Full-batch gradient descent on -ELBO / N with every unit in one batch."""
    units = [u for s in fleet.sites for u in s.units]
    batch = mgp.make_batch(units)
    n = float(batch.n_obs)
    sizes = [s.unit_count for s in fleet.sites]
    loc = {k: np.concatenate([state.sites[s.site_id].as_tree()[k] for s in fleet.sites])
           for k in ("scale", "log_width", "log_sigma")}
    glob = {k: np.array(v) for k, v in state.global_tree().items()}
    for _ in range(rounds):
        _, g_glob, g_loc = mgp.neg_local_elbo_and_grad(glob, loc, state.z, batch, 1.0,
                                                        state.jitter)
        glob = {k: glob[k] - eta * g_glob[k] / n for k in glob}
        loc = {k: loc[k] - eta * g_loc[k] / n for k in loc}
    out = state.with_global(glob)
    pos = 0
    for s, m in zip(fleet.sites, sizes):
        out.sites[s.site_id] = mgp.SiteParams.from_tree(
            state.sites[s.site_id].unit_ids, {k: v[pos : pos + m] for k, v in loc.items()})
        pos += m
    return out


def centralized_gd_cox(fleet, trajectories, init: cox.CoxParams, eta: float,
                       rounds: int) -> cox.CoxParams:
    units = [u for s in fleet.sites for u in s.units]
    trs = [trajectories[(s.site_id, u.unit_id)] for s in fleet.sites for u in s.units]
    design = cox.CoxDesign(units, trs, init.baseline)
    x = init.to_vector()
    for _ in range(rounds):
        x = x - eta * design.mean_neg_loglik(x)[1]
    return init.from_vector(x)


# --- two-stage pipeline ------------------------------------------------------------------

@dataclass
class JointResult:
    model: object
    predictions: list
    messages: list


def train_joint(fleet, config: FedConfig, transport: Transport | None = None,
                baseline: str = "weibull", method: str = "fed", mgp_kw: dict | None = None,
                history: RoundHistory | None = None, horizon: float | None = None):
    """Stage 1 then stage 2 on the given training sites; returns (JointModel, messages)."""
    from .joint import JointModel, default_horizon, mgp_training_trajectories

    mgp_kw = dict(mgp_kw or {})
    own = transport is None
    transport = transport or LoopbackTransport()
    try:
        state = run_fed_mgp(fleet, config, transport, history=history, **mgp_kw)
        t_end = float(np.max(state.z))
        trajs = mgp_training_trajectories(fleet, state, t_end)
        phi = run_fed_cox(fleet, trajs, config, transport, baseline=baseline, history=history)
    finally:
        if own:
            transport.close()
    horizon = default_horizon(fleet) if horizon is None else horizon
    model = JointModel(method, phi, horizon, t_end, mgp_state=state)
    return model, list(transport.log)


def run_fed_joint(fleet, config: FedConfig, test_site=None, alphas=(), dts=(),
                  transport: Transport | None = None, baseline: str = "weibull",
                  mgp_kw: dict | None = None, history: RoundHistory | None = None) -> JointResult:
    """Federated training on ``fleet`` then predictions for every test unit and alpha."""
    model, msgs = train_joint(fleet, config, transport, baseline, "fed", mgp_kw, history)
    preds = []
    if test_site is not None:
        for u in test_site.units:
            for a in alphas:
                preds.append(model.predict(u, a, dts))
    return JointResult(model, preds, msgs)
