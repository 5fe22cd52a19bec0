"""Experiment configuration, epsilon sweeps and report emission."""
from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
import platform
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy
from scipy.stats import ks_2samp

from . import __version__
from .effective import (EffectiveProblem, approximate_corrector, build_effective, closed_form_effective,
                        effective_hamiltonian)
from .ergodic import ergodicity_decay, lyapunov_check
from .errors import ConfigurationError, MJCError
from .hjb import Axis, Grid, SchemeConfig, solve_effective_hjb, solve_two_scale_hjb
from .model import builtin_benchmark, validate_assumptions
from .sde import PolicyHandle, coupled_frozen_contraction, estimate_sup_moment, final_averaged, final_states
from .stable import substream
from .value import cost_convergence_table

EPS_FLOOR = 0.02


@dataclass
class ExperimentConfig:
    model: str = "BM1"
    eps_list: tuple = (0.5, 0.2, 0.1, 0.05, 0.02)
    x_domain: tuple = (-4.0, 4.0, 201)
    y_domain: tuple = (-6.0, 6.0, 121)
    T: float = 1.0
    taus: tuple = (0.25, 0.5, 0.75, 1.0)
    roi: float = 1.0
    y_refs: tuple = (0.0, 2.0)
    extension: str = "constant"
    cfl_safety: float = 0.9
    grid_tol: float = 0.02
    effective_source: str = "auto"
    paths: int = 10_000
    dt_mc: float = None
    measure_n: int = 20_000
    burn_in: float = None
    thinning: float = None
    policy_v: float = 0.0
    start: tuple = (0.0, 0.0, 0.0)
    weak_start: tuple = (0.0, 0.0, 3.0)
    moment_p: float = 1.2
    two_scale: bool = True
    seed: int = 0
    out_dir: str = None

    def __post_init__(self):
        self.eps_list = tuple(float(e) for e in self.eps_list)
        self.x_domain = (float(self.x_domain[0]), float(self.x_domain[1]), int(self.x_domain[2]))
        self.y_domain = (float(self.y_domain[0]), float(self.y_domain[1]), int(self.y_domain[2]))
        self.taus = tuple(float(t) for t in self.taus)
        self.y_refs = tuple(float(y) for y in self.y_refs)
        self.start = tuple(float(s) for s in self.start)
        self.weak_start = tuple(float(s) for s in self.weak_start)
        self.validate()

    def validate(self):
        e = self.eps_list
        if not e:
            raise ConfigurationError("eps_list must not be empty")
        if any(b >= a for a, b in zip(e, e[1:])):
            raise ConfigurationError(f"eps_list must be strictly decreasing, got {list(e)}")
        if min(e) < EPS_FLOOR - 1e-12 or max(e) > 1.0:
            raise ConfigurationError(f"eps_list must lie in [{EPS_FLOOR}, 1]")
        a, b, _ = self.x_domain
        if not self.roi > 0:
            raise ConfigurationError("region of interest must have positive radius")
        centre, half = 0.5 * (a + b), 0.5 * (b - a)
        if half - abs(centre) < self.roi + 3.0 * self.roi - 1e-12:
            raise ConfigurationError(
                f"region |x| <= {self.roi} needs a margin of {3 * self.roi} inside the x-domain [{a}, {b}]")
        lo, hi, _ = self.y_domain
        if any(not (lo < y < hi) for y in self.y_refs):
            raise ConfigurationError("y_refs must lie inside the y-domain")
        if any(not (0 < t <= self.T) for t in self.taus):
            raise ConfigurationError("time-to-go levels must lie in (0, T]")
        if self.paths < 2:
            raise ConfigurationError("paths must be at least 2")

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return dataclasses.asdict(self)

    # derived objects
    def spec(self):
        return builtin_benchmark(self.model).replace(T=self.T)

    def grid1d(self):
        a, b, n = self.x_domain
        return Grid(Axis.span(a, b, n), None, self.T)

    def grid2d(self):
        a, b, n = self.x_domain
        c, d, m = self.y_domain
        return Grid(Axis.span(a, b, n), Axis.span(c, d, m), self.T)

    def scheme(self):
        return SchemeConfig(cfl_safety=self.cfl_safety, extension=self.extension, tol=self.grid_tol)


@dataclass
class Report:
    name: str
    tables: dict = field(default_factory=dict)
    verdicts: dict = field(default_factory=dict)
    fingerprint: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)

    @property
    def passed(self):
        return bool(self.verdicts) and not self.errors and all(v["pass"] for v in self.verdicts.values())

    def verdict(self, name, ok, measured, threshold, rule):
        self.verdicts[name] = {"pass": bool(ok), "measured": measured, "threshold": threshold, "rule": rule}

    def merge(self, other: "Report"):
        self.tables.update(other.tables)
        self.verdicts.update(other.verdicts)
        self.errors.update(other.errors)

    def to_dict(self):
        return {"name": self.name, "passed": self.passed, "verdicts": self.verdicts, "tables": self.tables,
                "errors": self.errors, "fingerprint": self.fingerprint}

    def to_json(self):
        return json.dumps(_plain(self.to_dict()), indent=2, sort_keys=True)

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.to_json())
        for name, rows in self.tables.items():
            if not rows:
                continue
            with open(out / f"{name}.csv", "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=list(rows[0]))
                w.writeheader()
                for r in rows:
                    w.writerow({k: _plain(v) for k, v in r.items()})
        return out


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def fingerprint(config: ExperimentConfig):
    return {"seed": config.seed, "config": config.to_dict(), "mjc": __version__, "numpy": np.__version__,
            "scipy": scipy.__version__, "python": platform.python_version()}


def _trend_ok(col, factor, inversion=0.10):
    """Total reduction by ``factor`` and at most one rise, itself within ``inversion``."""
    rises = [(a, b) for a, b in zip(col, col[1:]) if b > a]
    small = all(b <= (1 + inversion) * a for a, b in rises)
    return col[-1] <= factor * col[0] and len(rises) <= 1 and small


def effective_problem(config: ExperimentConfig, spec=None) -> EffectiveProblem:
    spec = spec or config.spec()
    src = config.effective_source
    if src == "auto":
        try:
            return closed_form_effective(spec)
        except MJCError:
            src = "simulate"
    a, b, n = config.x_domain
    nodes = np.linspace(a, b, min(n, 41))
    return build_effective(spec, nodes, src, rng=substream(config.seed, "effective").integers(2**31),
                           n=config.measure_n, burn_in=config.burn_in, thinning=config.thinning)


def _policy(config, spec):
    return PolicyHandle.constant(config.policy_v, spec.control_set)


def _dt_mc(config):
    return config.dt_mc if config.dt_mc is not None else min(config.eps_list) / 10


def _audit(config, spec, report):
    audit = validate_assumptions(spec, rng_seed=config.seed)
    report.tables["assumptions"] = [{"assumption": k, "verdict": v} for k, v in audit.verdicts.items()]
    report.verdict("assumptions", audit.passed, audit.beta_hat, 0.0, "all sampled assumptions pass, beta_hat > 0")
    return audit


def run_sweep(config: ExperimentConfig) -> Report:
    """sup over |x| <= roi and the tau grid of |u^eps(., ., y_ref) - u_bar| for each epsilon."""
    report = Report("sweep", fingerprint=fingerprint(config))
    stage = "setup"
    try:
        spec = config.spec()
        stage = "audit"
        audit = _audit(config, spec, report)
        if not audit.passed:
            raise ConfigurationError("model fails the assumption audit")
        stage = "effective"
        eff = effective_problem(config, spec)
        scheme = config.scheme()
        g1, g2 = config.grid1d(), config.grid2d()
        stage = "effective-hjb"
        ubar = solve_effective_hjb(eff, g1, scheme, taus=config.taus)
        x = g1.x.nodes
        roi = np.abs(x) <= config.roi + 1e-9
        y = g2.y.nodes
        jref = [int(np.argmin(np.abs(y - yr))) for yr in config.y_refs]
        rows = []
        report.tables["sweep"] = rows
        for eps in config.eps_list:
            stage = f"two-scale-hjb eps={eps:g}"
            sol = solve_two_scale_hjb(spec, eps, g2, scheme, taus=config.taus)
            row = {"epsilon": eps, "steps": sol.meta["steps"]}
            for yr, j in zip(config.y_refs, jref):
                row[f"gap_y{yr:g}"] = float(np.abs(sol.values[:, roi, j] - ubar.values[:, roi]).max())
            row["u_eps_0"] = float(sol.values[-1, g1.x.n // 2, jref[0]])
            row["u_bar_0"] = float(ubar.values[-1, g1.x.n // 2])
            rows.append(row)
    except (MJCError, ValueError) as exc:
        report.errors[stage] = str(exc)
        if config.out_dir:
            report.write(config.out_dir)
        raise type(exc)(f"sweep failed at stage {stage}: {exc}") from exc
    for yr in config.y_refs:
        col = [r[f"gap_y{yr:g}"] for r in rows]
        report.verdict(f"sweep_trend_y{yr:g}", _trend_ok(col, 0.5), col, 0.5,
                       "gap(min eps) <= 0.5 gap(max eps), at most one rise of <= 10%")
    if len(config.y_refs) > 1:
        last = [rows[-1][f"gap_y{yr:g}"] for yr in config.y_refs]
        spread = max(last) - min(last)
        report.verdict("sweep_y_agreement", spread <= config.grid_tol + 0.05, spread, config.grid_tol + 0.05,
                       "gaps at the y_ref values agree at min eps within grid tolerance + 0.05")
    if config.out_dir:
        report.write(config.out_dir)
    return report


def run_weak_convergence(config: ExperimentConfig) -> Report:
    """Two-sample KS distance between X^eps_T and the averaged X_T, one row per epsilon."""
    report = Report("weak", fingerprint=fingerprint(config))
    spec = config.spec()
    eff = effective_problem(config, spec)
    pol = _policy(config, spec)
    t0, x0, y0 = config.weak_start
    dt = _dt_mc(config)
    n = config.paths
    xbar = final_averaged(eff, pol, x0, t0, dt, substream(config.seed, "weak", "averaged"), n)
    floor = 1.36 * math.sqrt(2.0 / n)
    rows = []
    for i, eps in enumerate(config.eps_list):
        xe, _ = final_states(spec, eps, pol, x0, y0, t0, min(dt, eps / 10), substream(config.seed, "weak", i), n)
        res = ks_2samp(xe, xbar)
        rows.append({"epsilon": eps, "ks": float(res.statistic), "p_value": float(res.pvalue), "noise_floor": floor})
    report.tables["weak"] = rows
    ks = [r["ks"] for r in rows]
    report.verdict("weak_trend", ks[-1] <= 0.6 * ks[0], ks, 0.6, "KS(min eps) <= 0.6 KS(max eps)")
    report.verdict("weak_level", ks[-1] <= 0.05, ks[-1], 0.05, "KS(min eps) <= 0.05")
    if config.out_dir:
        report.write(config.out_dir)
    return report


# ---- run_all stages ---------------------------------------------------------------

def _stage_ergodic(config, spec, report, beta):
    dec = ergodicity_decay(spec, 0.0, np.sin, 3.0, np.linspace(0.5, 4.0, 8), config.paths, 0.01,
                           substream(config.seed, "decay").integers(2**31), beta)
    report.tables["ergodic_decay"] = [{"s": s, "error": e, "stderr": se}
                                      for s, e, se in zip(dec.times, dec.errors, dec.stderr)]
    rate = dec.rate if isinstance(dec.rate, float) else float("nan")
    report.verdict("ergodic_rate", rate >= 0.5, dec.rate, 0.5, "fitted exponential rate >= 0.5")

    lya = lyapunov_check(spec, 0.0, [5.0, 10.0])
    report.tables["lyapunov"] = [{"y": y, "minus_L2_w": v} for y, v in lya.rows]
    report.verdict("lyapunov", lya.all_positive, [v for _, v in lya.rows], 0.0, "-L2 w > 0 at |y| in {5, 10}")

    times, d2 = coupled_frozen_contraction(spec, 0.0, 1.0, 0.0, -1.0, 4.0, 0.01,
                                           substream(config.seed, "coupled"), 50)
    dist = np.sqrt(d2)
    monotone = bool(np.all(np.diff(dist, axis=1) <= 1e-12))
    rel = float(np.max(np.abs(dist - 2 * np.exp(-times)) / (2 * np.exp(-times))))
    report.tables["contraction"] = [{"s": float(t), "dY": float(d)} for t, d in zip(times[::50], dist[0, ::50])]
    report.verdict("contraction_monotone", monotone, monotone, True, "|dY| non-increasing on every path")
    report.verdict("contraction_rate", rel <= 0.05, rel, 0.05, "|dY(s)| = 2 exp(-s) within 5%")


def _stage_corrector(config, spec, eff, report):
    href = float(effective_hamiltonian(eff, 0.0, 0.0))
    rows = []
    ok = True
    for y in (0.0, 3.0):
        w, se = approximate_corrector(spec, 0.0, 0.0, 0.05, y, config.paths, 160.0, 0.02,
                                      substream(config.seed, "corrector", int(y)))
        dev = abs(-0.05 * w - href)
        tol = 0.05 + 2 * 0.05 * se
        ok &= dev <= tol
        rows.append({"y": y, "minus_eps_w": -0.05 * w, "stderr": 0.05 * se, "H_bar": href, "deviation": dev})
    report.tables["corrector"] = rows
    report.verdict("corrector", ok, [r["deviation"] for r in rows], 0.05, "|-eps w - H_bar(0,0)| <= 0.05 + 2 stderr")


def _stage_moments(config, spec, report):
    rows = []
    for eps in config.eps_list:
        # one step size for every eps so the (shared) slow noise is identical across rows
        m, se = estimate_sup_moment(spec, eps, config.moment_p, 1.0, 0.0, config.paths, _dt_mc(config), config.seed)
        rows.append({"epsilon": eps, "moment": m, "stderr": se})
    report.tables["moments"] = rows
    vals = [r["moment"] for r in rows]
    ratio = max(vals) / min(vals)
    report.verdict("moment_bound", ratio <= 2.0, ratio, 2.0, "sup-moments within a factor 2 across eps")


def _stage_cost(config, spec, eff, report):
    rows = cost_convergence_table(spec, eff, _policy(config, spec), config.eps_list, config.start, config.paths,
                                  _dt_mc(config), config.seed)
    report.tables["cost"] = rows
    first, last = rows[0], rows[-1]
    report.verdict("cost_trend", last["gap"] <= 0.5 * first["gap"] and first["gap"] > 2 * first["stderr"],
                   [r["gap"] for r in rows], 0.5, "gap(min eps) <= 0.5 gap(max eps), first gap > 2 stderr")


def run_all(config: ExperimentConfig) -> Report:
    report = Report("all", fingerprint=fingerprint(config))
    spec = config.spec()
    ctx = {}

    def stage(name, fn):
        try:
            fn()
        except (MJCError, ValueError) as exc:
            report.errors[name] = f"{type(exc).__name__}: {exc}"
            report.verdict(name, False, None, None, "stage raised")

    stage("audit", lambda: ctx.update(audit=_audit(config, spec, report)))
    beta = ctx["audit"].beta_hat if "audit" in ctx else None
    stage("effective", lambda: ctx.update(eff=effective_problem(config, spec)))
    stage("ergodic", lambda: _stage_ergodic(config, spec, report, beta))
    if "eff" in ctx:
        stage("corrector", lambda: _stage_corrector(config, spec, ctx["eff"], report))
        stage("cost", lambda: _stage_cost(config, spec, ctx["eff"], report))
    stage("moments", lambda: _stage_moments(config, spec, report))
    if config.two_scale:
        sub = dataclasses.replace(config, out_dir=None)
        stage("sweep", lambda: report.merge(run_sweep(sub)))
    stage("weak", lambda: report.merge(run_weak_convergence(dataclasses.replace(config, out_dir=None))))
    if config.out_dir:
        report.write(config.out_dir)
    return report
