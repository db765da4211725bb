"""Experiment configs and runners behind the command-line interface.

Every runner takes a validated config dict and an output directory, writes
its CSV/JSON artifacts there and returns a summary dict.  Jobs (one per
seed and swept value) are independent and seeded, so outputs are
byte-identical for identical configs whatever ``n_jobs`` is.
"""
import copy
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from ._io import atomic_open
from ._schemas import validate
from .dp_core import model_based_pi
from .exact_solver import SolverConfig, solve
from .lq_model import LqModel, load_model
from .lstd_iv import IvEstimatorState, PeConfig, approximate_pi, policy_from_coef, \
    write_history_csv
from .mv_portfolio import BENCHMARK_R, MarketSpec, MvProblem, horizon_for, shift_state, simulate_wealth, \
    to_lq

logger = logging.getLogger(__name__)

OUT_ENV = "TSALLIS_LQ_OUT"
BANDS = (1e-2, 1e-3)
MID_RUN = slice(10, 31)
REGULARIZERS = ("tsallis", "shannon", "none")

DEFAULTS = {
    "problem": {"kind": "mv_benchmark"},
    "pe": {"M": 1200, "T": 1, "r_nu": 0.8, "r_x": 1.0, "exploration_law": "q_gaussian_clipped"},
    "iterations": 30,
    "seeds": list(range(10)),
    "mode": "offline",
    "regularizer": "tsallis",
    "beta0": 20.0,
    "theta0_fill": 0.8,
    "tol": 1e-12,
    "n_jobs": 1,
    "mv_sim": {"x0": 1.0, "horizon": None, "paths": 100000},
}

_RANGES = {"q": lambda v: 0 < v <= 1, "gamma": lambda v: 0 < v < 1, "tau": lambda v: v >= 0}


class ConfigError(ValueError):
    pass


def _merge(base, over):
    out = copy.deepcopy(base)
    for key, value in over.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict) and key != "problem":
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def make_config(overrides=None):
    """Defaults merged with ``overrides`` and validated; raises :class:`ConfigError`."""
    cfg = _merge(DEFAULTS, overrides or {})
    validate(cfg, "config", ConfigError)
    sweep = cfg.get("sweep")
    if sweep:
        for v in sweep["values"]:
            if not _RANGES[sweep["param"]](v):
                raise ConfigError(f"sweep value {sweep['param']}={v} is out of range")
    return cfg


def load_config(path, overrides=None):
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return make_config(_merge(raw, overrides or {}))


def build_problem(cfg):
    """Return ``(LqModel, MvProblem or None)`` for the configured problem."""
    spec = cfg["problem"]
    kind = spec["kind"]
    if kind == "model":
        if "path" in spec:
            try:
                return load_model(spec["path"]), None
            except ValueError as exc:
                raise ConfigError(f"{spec['path']}: {exc}") from None
        validate(spec["model"], "model", ConfigError)
        try:
            return LqModel.from_dict(spec["model"]), None
        except ValueError as exc:
            raise ConfigError(f"problem.model: {exc}") from None
    try:
        if kind == "mv_benchmark":
            market, R = MarketSpec(1.057, [0.21, 0.28, 0.22], 0.99), BENCHMARK_R
        else:
            market = MarketSpec(spec["riskfree"], spec["mean_excess"], spec["excess_cov"])
            R = spec["R"]
        problem = MvProblem(market, R, spec.get("target", 1.0), spec.get("lam", 0.0),
                            spec.get("gamma", 0.9), spec.get("tau", 0.7), spec.get("q", 0.8),
                            spec.get("noise_mode", "per_asset"))
        return to_lq(problem), problem
    except ValueError as exc:
        raise ConfigError(f"problem: {exc}") from None


def regularized(model, regularizer, pe):
    """Apply a regularizer choice; ``none`` switches exploration to the uniform ball."""
    if regularizer == "tsallis":
        return model, pe
    if regularizer == "shannon":
        return model.replace(q=1.0), pe
    if regularizer == "none":
        return model.replace(tau=0.0), PeConfig(**{**pe.__dict__, "exploration_law": "uniform_ball"})
    raise ConfigError(f"unknown regularizer {regularizer!r}")


def reference_gain(model, tol=1e-12):
    return solve(model, SolverConfig(tol=tol)).policy.K


def initial_gain(model, fill=0.8, beta0=20.0):
    """Gain induced by the all-``fill`` initial Q-function estimate."""
    dim = (model.m + model.n) * (model.m + model.n + 1) // 2 + 1
    theta0 = IvEstimatorState.initial(dim, beta0, fill).theta_hat
    return policy_from_coef(theta0, model.m, model.tau, model.q).K


# -- summaries --------------------------------------------------------------

def iterations_to_band(errors, band):
    """First iteration with error at or below ``band`` (``None`` if never)."""
    hit = np.flatnonzero(np.asarray(errors, dtype=float) <= band)
    return int(hit[0]) if hit.size else None


def curve_metrics(errors):
    e = np.asarray(errors, dtype=float)
    mid = e[MID_RUN]
    out = {"terminal_error": _finite(e[-1]), "min_error": _finite(np.nanmin(e)),
           "mid_run_std": _finite(np.std(mid)) if mid.size else None}
    for band in BANDS:
        out[f"iters_to_{band:g}"] = iterations_to_band(e, band)
    return out


def _finite(v):
    v = float(v)
    return v if np.isfinite(v) else None


def _median(values):
    # None (band never reached, or a diverged run) ranks as worst; an infinite median is None
    med = float(np.median([np.inf if v is None else v for v in values]))
    return med if np.isfinite(med) else None


def summarize(curves):
    """Per-seed metrics and their medians for ``[(seed, errors), ...]``."""
    per_seed = {str(seed): curve_metrics(err) for seed, err in curves}
    keys = list(next(iter(per_seed.values()))) if per_seed else []
    return {"per_seed": per_seed, "median": {k: _median([m[k] for m in per_seed.values()])
                                             for k in keys}}


# -- jobs -------------------------------------------------------------------

def _dd_job(args):
    model_dict, pe_dict, iterations, mode, beta0, fill, seed, K_ref = args
    hist = approximate_pi(LqModel.from_dict(model_dict), PeConfig(**pe_dict), iterations,
                          mode=mode, beta0=beta0, theta0_fill=fill,
                          generator=np.random.default_rng(seed), K_ref=np.asarray(K_ref))
    return hist.errors, hist.objectives


def _map(fn, jobs, n_jobs):
    if n_jobs <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(fn, jobs))


def data_driven_curves(cfg, model, pe, mode, K_ref):
    """One data-driven PI run per seed; returns ``[(seed, errors, objectives)]``."""
    jobs = [(model.to_dict(), dict(pe.__dict__), cfg["iterations"], mode, cfg["beta0"],
             cfg["theta0_fill"], seed, np.asarray(K_ref).tolist()) for seed in cfg["seeds"]]
    results = _map(_dd_job, jobs, cfg["n_jobs"])
    return [(seed, err, obj) for seed, (err, obj) in zip(cfg["seeds"], results)]


def _history_rows(curves, mode, model, label):
    for seed, errors, objectives in curves:
        for i, (e, j) in enumerate(zip(errors, objectives)):
            yield [i, e, j, seed, mode, model.q, model.gamma, model.tau, label]


def write_json(path, obj):
    with atomic_open(path) as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=float, allow_nan=False)
        fh.write("\n")


def _path(out_dir, name):
    os.makedirs(out_dir, exist_ok=True)
    return os.path.join(out_dir, name)


# -- runners ----------------------------------------------------------------

def run_exact(cfg, out_dir):
    """Solve the configured model and write ``exact.json``."""
    model, _ = build_problem(cfg)
    res = solve(model, SolverConfig(tol=cfg["tol"]))
    report = {"P": res.value.P.tolist(), "c": res.value.c, "K": res.policy.K.tolist(),
              "Sigma": res.policy.Sigma.tolist(), "iterations": res.iterations,
              "residual": res.residual, "q": model.q, "tau": model.tau, "gamma": model.gamma,
              "tol": cfg["tol"]}
    write_json(_path(out_dir, "exact.json"), report)
    return report


def run_pi_model(cfg, out_dir, K0=None):
    """Model-based PI from the 0.8-fill initial gain (or ``K0``); writes ``pi_model.csv``."""
    model, _ = build_problem(cfg)
    K_ref = reference_gain(model, cfg["tol"])
    if K0 is None:
        K0 = initial_gain(model, cfg["theta0_fill"], cfg["beta0"])
    hist = model_based_pi(model, K0, iters=cfg["iterations"], K_ref=K_ref, r_x=cfg["pe"]["r_x"])
    hist.to_csv(_path(out_dir, "pi_model.csv"))
    return {"errors": hist.errors, "objectives": hist.objectives, "aborted": hist.aborted}


def run_data_driven(cfg, out_dir, mode=None, regularizer=None, name=None):
    """Data-driven PI over all seeds for one regularizer; CSV plus summary JSON."""
    mode = mode or cfg["mode"]
    regularizer = regularizer or cfg["regularizer"]
    base, _ = build_problem(cfg)
    model, pe = regularized(base, regularizer, PeConfig(**cfg["pe"]))
    curves = data_driven_curves(cfg, model, pe, mode, reference_gain(base, cfg["tol"]))
    name = name or f"pi_{mode}_{regularizer}"
    write_history_csv(_path(out_dir, f"{name}.csv"), _history_rows(curves, mode, model, regularizer))
    summary = summarize([(s, e) for s, e, _ in curves])
    write_json(_path(out_dir, f"{name}_summary.json"), summary)
    return summary


def run_figure1(cfg, out_dir):
    """Offline curves for the Tsallis, Shannon and unregularised variants."""
    summary = {reg: run_data_driven(cfg, out_dir, "offline", reg, name=reg) for reg in REGULARIZERS}
    write_json(_path(out_dir, "figure1_summary.json"), summary)
    return summary


def run_sweep(cfg, out_dir):
    """One data-driven PI curve per seed and swept value, all in ``sweep_<param>.csv``."""
    sweep = cfg.get("sweep")
    if not sweep:
        raise ConfigError("the sweep command needs a 'sweep' entry in the config")
    param, values = sweep["param"], sweep["values"]
    base, _ = build_problem(cfg)
    base, pe = regularized(base, cfg["regularizer"], PeConfig(**cfg["pe"]))
    rows, results = [], {}
    for v in values:
        model = base.replace(**{param: v})
        curves = data_driven_curves(cfg, model, pe, cfg["mode"], reference_gain(model, cfg["tol"]))
        rows.extend(_history_rows(curves, cfg["mode"], model, f"{param}={v:g}"))
        results[f"{v:g}"] = summarize([(s, e) for s, e, _ in curves])
    write_history_csv(_path(out_dir, f"sweep_{param}.csv"), rows)
    summary = {"param": param, "values": values, "results": results}
    write_json(_path(out_dir, f"sweep_{param}_summary.json"), summary)
    return summary


def run_online(cfg, out_dir):
    """Online run plus an offline run with the same seeds and constants."""
    base, _ = build_problem(cfg)
    model, pe = regularized(base, cfg["regularizer"], PeConfig(**cfg["pe"]))
    K_ref = reference_gain(base, cfg["tol"])
    rows, summary = [], {}
    for mode in ("online", "offline"):
        curves = data_driven_curves(cfg, model, pe, mode, K_ref)
        rows.extend(_history_rows(curves, mode, model, mode))
        summary[mode] = summarize([(s, e) for s, e, _ in curves])
    write_history_csv(_path(out_dir, "online.csv"), rows)
    write_json(_path(out_dir, "online_summary.json"), summary)
    return summary


def run_mv_sim(cfg, out_dir):
    """Wealth paths under the exact optimal policy; writes ``wealth.csv``."""
    model, problem = build_problem(cfg)
    if problem is None:
        raise ConfigError("mv-sim needs an MV problem (kind 'mv' or 'mv_benchmark')")
    res = solve(model, SolverConfig(tol=cfg["tol"]))
    sim = cfg["mv_sim"]
    horizon = sim["horizon"] or horizon_for(problem.gamma)
    stats = simulate_wealth(problem, res.policy, sim["x0"], horizon, sim["paths"],
                            np.random.default_rng(cfg["seeds"][0]))
    stats.to_csv(_path(out_dir, "wealth.csv"))
    y0 = float(shift_state(sim["x0"], problem))
    report = {"objective": stats.objective, "objective_stderr": stats.objective_stderr,
              "mv_objective": stats.mv_objective, "mv_objective_stderr": stats.mv_objective_stderr,
              "value_at_x0": res.value(np.array([y0])), "horizon": horizon, "paths": sim["paths"]}
    write_json(_path(out_dir, "wealth_summary.json"), report)
    return report
