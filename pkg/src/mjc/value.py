"""Monte Carlo evaluation of the multiscale and averaged cost functionals."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .sde import run_averaged, run_slow_fast

DISCOUNTS = ("printed", "dpp")


@dataclass
class CostEstimate:
    mean: float
    stderr: float
    n_paths: int
    meta: dict = field(default_factory=dict)
    per_path: np.ndarray = field(default=None, repr=False)

    def to_dict(self):
        return {"mean": self.mean, "stderr": self.stderr, "n_paths": self.n_paths, **self.meta}


def _weights(discount, lam, t0, T):
    """Running-cost weight s -> w(s) and the terminal factor."""
    if discount == "printed":
        return (lambda s: math.exp(lam * (s - T))), math.exp(lam * (t0 - T))
    if discount == "dpp":
        return (lambda s: math.exp(-lam * (s - t0))), math.exp(-lam * (T - t0))
    raise ParameterError(f"discount must be one of {DISCOUNTS}, got {discount!r}")


def _summarize(vals, meta):
    n = vals.size
    se = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return CostEstimate(float(vals.mean()), se, n, meta, vals)


def estimate_cost(spec, epsilon, policy, x0, y0, t0, n_paths, dt, rng, discount="printed", noise=True):
    """J^eps = E[-int_t0^T w(s) L ds + w_T g(X_T, Y_T)] along Euler skeletons.

    ``discount="printed"`` weights running cost by exp(lam (s - T)) and the
    terminal cost by exp(lam (t0 - T)); ``"dpp"`` uses exp(-lam (s - t0))
    for both, which is the weighting the HJB solvers represent.
    """
    w, wT = _weights(discount, spec.lam, t0, spec.T)
    acc = np.zeros(n_paths)
    prev, t_prev = None, None
    for k, t, X, Y, v in run_slow_fast(spec, epsilon, policy, x0, y0, t0, dt, rng, n_paths, noise):
        cur = w(t) * np.asarray(spec.cost_L(X, Y, v), dtype=float)
        if prev is not None:
            acc += 0.5 * (prev + cur) * (t - t_prev)
        prev, t_prev, XT, YT = cur, t, X, Y
    vals = -acc + wT * np.broadcast_to(np.asarray(spec.terminal_g(XT, YT), dtype=float), (n_paths,))
    meta = {"policy": getattr(policy, "label", ""), "epsilon": epsilon, "start": (t0, x0, y0), "discount": discount}
    return _summarize(vals, meta)


def estimate_effective_cost(effp, policy, x0, t0, n_paths, dt, rng, discount="printed", noise=True):
    w, wT = _weights(discount, effp.lam, t0, effp.T)
    acc = np.zeros(n_paths)
    prev, t_prev = None, None
    XT = np.full(n_paths, float(x0))
    for k, t, X, v in run_averaged(effp, policy, x0, t0, dt, rng, n_paths, noise):
        cur = w(t) * np.asarray(effp.L_bar(X, v), dtype=float)
        if prev is not None:
            acc += 0.5 * (prev + cur) * (t - t_prev)
        prev, t_prev, XT = cur, t, X
    vals = -acc + wT * np.broadcast_to(np.asarray(effp.g_bar(XT), dtype=float), (n_paths,))
    meta = {"policy": getattr(policy, "label", ""), "epsilon": "effective", "start": (t0, x0), "discount": discount}
    return _summarize(vals, meta)


def cost_convergence_table(spec, effp, policy, eps_list, start, n_paths, dt=None, rng=0, discount="printed"):
    """Rows (eps, |J^eps - J_bar|, paired stderr) with J_bar computed once.

    With an integer seed all runs share their slow noise, so the gap's
    standard error is that of the per-path difference.
    """
    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ParameterError("eps_list must be strictly decreasing")
    t0, x0, y0 = start
    if dt is None:
        dt = min(eps_list) / 10
    jbar = estimate_effective_cost(effp, policy, x0, t0, n_paths, dt, rng, discount)
    rows = []
    for eps in eps_list:
        je = estimate_cost(spec, eps, policy, x0, y0, t0, n_paths, dt, rng, discount)
        diff = je.per_path - jbar.per_path
        paired = float(diff.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
        rows.append({"epsilon": eps, "gap": abs(je.mean - jbar.mean), "stderr": paired, "J_eps": je.mean,
                     "J_eps_stderr": je.stderr, "J_bar": jbar.mean, "J_bar_stderr": jbar.stderr})
    return rows
