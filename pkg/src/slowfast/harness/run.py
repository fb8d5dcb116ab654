"""Experiment orchestration and result persistence."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import __version__, backend
from ..ergodic import AveragedDrift, estimate_abar, estimate_mixing_rate
from ..errors import BlowUpError, InsufficientDataError, SlowFastError
from ..expansion import residual_check, residual_spread
from ..integrate import ScaleParams, coupled_batch
from ..model import check_assumptions, make_model
from ..randomness import RandomPlan
from ..weakerror import fit_rate, make_observable, mc_estimate, n_rule, weak_error
from .config import ExperimentConfig

log = logging.getLogger(__name__)

__all__ = ["ResultManifest", "run_experiment", "fmt", "sha256_file"]

# per-experiment stream ids, so experiments never share draws by accident
STREAMS = {"abar": 1, "mixing": 2, "errors": 3, "expansion": 4}


def fmt(v) -> str:
    """Shortest round-trip decimal text for a number."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


@dataclass
class ResultManifest:
    config: dict
    version: str
    backend: str
    files: list = field(default_factory=list)  # {path, sha256, operation, params}
    timings: dict = field(default_factory=dict)  # experiment -> seconds
    fits: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    status: str = "running"

    def to_json(self) -> str:
        return json.dumps(_jsonable(asdict(self)), indent=2, sort_keys=True) + "\n"

    def digests(self) -> dict:
        return {f["path"]: f["sha256"] for f in self.files}


class _Writer:
    """Single writer: every file lands as ``name.partial`` and is renamed when complete."""

    def __init__(self, out_dir, manifest: ResultManifest):
        self.out = out_dir
        self.manifest = manifest

    def _commit(self, name, text, operation, params):
        path = os.path.join(self.out, name)
        tmp = path + ".partial"
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
        self.manifest.files.append(
            {"path": name, "sha256": sha256_file(path), "operation": operation, "params": _jsonable(params)})
        return path

    def csv(self, name, header, rows, operation, params):
        lines = [",".join(header)] + [",".join(fmt(v) for v in row) for row in rows]
        return self._commit(name, "\n".join(lines) + "\n", operation, params)

    def dat(self, name, header, rows, operation, params):
        lines = ["# " + " ".join(header)] + [" ".join(fmt(v) for v in row) for row in rows]
        return self._commit(name, "\n".join(lines) + "\n", operation, params)

    def json(self, name, obj, operation, params):
        return self._commit(name, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n", operation, params)

    def manifest_file(self):
        path = os.path.join(self.out, "manifest.json")
        tmp = path + ".partial"
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.manifest.to_json())
        os.replace(tmp, path)
        return path


def _fit_record(fit):
    return {
        "slope": fit.slope,
        "intercept": fit.intercept,
        "r_squared": fit.r_squared,
        "ci_low": fit.slope_ci[0],
        "ci_high": fit.slope_ci[1],
        "points": [list(p) for p in fit.points],
        "excluded_points": [list(p) for p in fit.excluded],
    }


class _Runner:
    def __init__(self, cfg: ExperimentConfig, writer: _Writer):
        self.cfg = cfg
        self.w = writer
        self.model = make_model(cfg.model, cfg.resolved_params())
        self.abar = AveragedDrift.default(self.model, seed=cfg.seed)
        self.threads = cfg.threads
        self._errors = None

    def plan(self, what):
        return RandomPlan(self.cfg.seed, STREAMS[what])

    def check(self):
        rep = check_assumptions(self.model)
        out = {
            "alpha_hat": rep.alpha_hat,
            "beta_hat": rep.beta_hat,
            "lipschitz_probe": rep.lipschitz_probe,
            "violations": [[v[0], _jsonable(v[1]), v[2]] for v in rep.violations],
            "ok": rep.ok,
        }
        self.w.json("check.json", out, "check_assumptions", {"probe": "default"})
        return out

    def abar_table(self):
        cfg = self.cfg
        rows = []
        for x in cfg.abar_x:
            est = estimate_abar(self.model, x, cfg.abar_method, cfg.abar_burn_in, cfg.abar_horizon,
                                cfg.abar_n_paths, self.plan("abar"), cfg.abar_dt, threads=self.threads)
            exact = None
            if self.model.abar_analytic is not None:
                exact = float(self.model.abar_analytic(np.array([[x]]))[0, 0])
            rows.append((x, float(est.value[0]), float(est.stderr[0]), exact, est.n_paths, est.horizon))
        self.w.csv("abar.csv", ["x", "abar_estimate", "stderr", "abar_analytic", "n_paths", "horizon"], rows,
                   "estimate_abar", {"method": cfg.abar_method, "burn_in": cfg.abar_burn_in,
                                     "dt": cfg.abar_dt, "stream": STREAMS["abar"]})
        return rows

    def mixing(self):
        cfg = self.cfg
        est = estimate_mixing_rate(self.model, cfg.mixing_x, cfg.mixing_y1, cfg.mixing_y2, cfg.mixing_horizon,
                                   cfg.mixing_n_paths, self.plan("mixing"), threads=self.threads)
        params = {"x": cfg.mixing_x, "y1": cfg.mixing_y1, "y2": cfg.mixing_y2, "horizon": cfg.mixing_horizon,
                  "n_paths": cfg.mixing_n_paths}
        self.w.csv("mixing.csv", ["t", "mean_sq_distance"], est.curve.tolist(), "estimate_mixing_rate", params)
        fit = {"beta_hat_sq": est.beta_hat_sq, "slope_stderr": est.slope_stderr}
        self.w.json("mixing_fit.json", fit, "estimate_mixing_rate", params)
        self.w.manifest.fits["mixing"] = fit
        return fit

    def _error_rows(self):
        """Weak and strong errors per epsilon (cached across the two rate experiments).

        With coupling, one run of ``max(n_weak, strong_n)`` samples serves
        both: samples are addressed by index, so the leading ``strong_n``
        rows are exactly the samples a separate strong run would draw.
        """
        if self._errors is not None:
            return self._errors
        cfg = self.cfg
        dt = cfg.resolved_dt()
        eps0 = cfg.resolved_eps0()
        strong_n = cfg.strong_n or cfg.n0
        obs = make_observable(cfg.observable)
        plan = self.plan("errors")
        rows = []
        for e in sorted(cfg.epsilons, reverse=True):
            scale = ScaleParams(e, cfg.T, dt)
            n_weak = n_rule(e, cfg.n0, eps0)
            res = coupled_batch(self.model, scale, cfg.x0, cfg.y0, plan, max(n_weak, strong_n),
                                abar=self.abar, threads=self.threads)
            strong = mc_estimate(np.abs(res.X_T[:strong_n, 0] - res.Xbar_T[:strong_n, 0]))
            if cfg.coupled:
                weak = mc_estimate(obs(res.X_T[:n_weak]) - obs(res.Xbar_T[:n_weak]))
            else:
                weak = weak_error(self.model, self.abar, scale, cfg.x0, cfg.y0, obs, n_weak, plan,
                                  coupled=False, threads=self.threads)
            rows.append({"epsilon": e, "weak": weak, "strong": strong, "dt": dt})
        self._errors = rows
        return rows

    def _rate(self, kind):
        cfg = self.cfg
        table = [(r["epsilon"], r[kind].mean, r[kind].stderr, r[kind].n, r["dt"], cfg.seed)
                 for r in self._error_rows()]
        params = {"observable": cfg.observable if kind == "weak" else "norm", "coupled": cfg.coupled,
                  "x0": cfg.x0, "y0": cfg.y0, "T": cfg.T, "stream": STREAMS["errors"]}
        op = f"{kind}_error"
        self.w.csv(f"{kind}_rate.csv", ["epsilon", "error", "stderr", "n", "dt", "seed"], table, op, params)
        self.w.dat(f"{kind}_rate.dat", ["log10_epsilon", "log10_abs_error", "log10_lo", "log10_hi"],
                   [_log_row(e, err, se) for e, err, se, *_ in table], op, params)
        try:
            fit = fit_rate([(e, err, se) for e, err, se, *_ in table])
        except InsufficientDataError as exc:
            # the error table is still worth keeping; record the refusal and move on
            rec = {"error": str(exc), "excluded_points": [list(p) for p in exc.excluded]}
            self.w.json(f"{kind}_fit.json", rec, "fit_rate", {"source": f"{kind}_rate.csv"})
            self.w.manifest.fits[kind] = rec
            raise
        rec = _fit_record(fit)
        self.w.json(f"{kind}_fit.json", rec, "fit_rate", {"source": f"{kind}_rate.csv"})
        self.w.manifest.fits[kind] = rec
        return rec

    def expansion(self):
        cfg = self.cfg
        reps = residual_check(self.model, self.abar, cfg.observable, cfg.x0, cfg.y0, cfg.expansion_epsilons,
                              cfg.expansion_n, self.plan("expansion"), T=cfg.T, S=cfg.expansion_S,
                              n_u1=cfg.expansion_n_u1, threads=self.threads)
        rows = [(r.epsilon, r.u_eps.mean, r.u_eps.stderr, r.u_bar.mean, r.u_bar.stderr, r.difference.mean,
                 r.difference.stderr, r.u1_hat.mean, r.u1_hat.stderr, r.r_eps, r.r_stderr, r.S, r.tail_bound)
                for r in reps]
        header = ["epsilon", "u_eps", "u_eps_stderr", "u_bar", "u_bar_stderr", "difference", "difference_stderr",
                  "u1_hat", "u1_stderr", "r_eps", "r_stderr", "S", "tail_bound"]
        params = {"x0": cfg.x0, "y0": cfg.y0, "T": cfg.T, "n": cfg.expansion_n, "stream": STREAMS["expansion"]}
        self.w.csv("expansion.csv", header, rows, "residual_check", params)
        summary = {"residual_spread": residual_spread(reps), "ratios": [r.ratio for r in reps]}
        self.w.manifest.fits["expansion"] = summary
        return summary


def _log_row(e, err, se):
    lo, hi = abs(err) - se, abs(err) + se
    return (math.log10(e), math.log10(abs(err)) if err else None,
            math.log10(lo) if lo > 0 else None, math.log10(hi) if hi > 0 else None)


def run_experiment(config: ExperimentConfig) -> ResultManifest:
    """Run every experiment listed in ``config.experiments`` and persist the results.

    Writes CSV/JSON/``.dat`` files and ``manifest.json`` into ``config.out``.
    A rate fit with too few usable points is recorded and the remaining
    experiments still run; the manifest then has status ``"insufficient_data"``.
    Any other error stops the run: the manifest is written with the failure
    recorded and the exception re-raised.
    """
    config.validate()
    config.check_output_dir()
    manifest = ResultManifest(config.echo(), __version__, backend.name())
    writer = _Writer(config.out, manifest)
    runner = _Runner(config, writer)
    steps = {
        "check": runner.check,
        "abar": runner.abar_table,
        "mixing": runner.mixing,
        "weak-rate": lambda: runner._rate("weak"),
        "strong-rate": lambda: runner._rate("strong"),
        "expansion": runner.expansion,
    }
    name = None
    try:
        for name in config.experiments:
            t0 = time.perf_counter()
            log.info("running %s", name)
            try:
                steps[name]()
            except InsufficientDataError as exc:
                log.warning("%s: %s", name, exc)
                manifest.failures.append({"experiment": name, "error": type(exc).__name__, "message": str(exc)})
            manifest.timings[name] = time.perf_counter() - t0
        manifest.status = "insufficient_data" if manifest.failures else "complete"
    except SlowFastError as exc:
        rec = {"experiment": name, "error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, BlowUpError):
            rec.update(time=exc.time, sample=exc.sample)
        manifest.failures.append(rec)
        manifest.status = "failed"
        writer.manifest_file()
        raise
    writer.manifest_file()
    return manifest
