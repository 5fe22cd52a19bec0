"""Averaged coefficients, the effective Hamiltonian and the two cell problems."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import MJCError, ModelEvaluationError, ParameterError, UsageError
from .ergodic import EmpiricalMeasure, estimate_invariant_measure, integrate
from .model import ControlSet, ProblemSpec, _phi, validate_assumptions
from .sde import run_frozen, time_grid
from .stable import substream

UNBOUNDED = 1e12
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def maximize_over_controls(objective, control_set: ControlSet, shape, k=41, tol=1e-6):
    """Pointwise sup over U of ``objective(v)``; returns (value, argmax), both of ``shape``.

    ``objective`` maps an array of controls (broadcastable to ``shape``) to
    objective values. Finite sets are searched exhaustively; boxes by a grid
    scan followed by golden-section refinement of the best bracket.
    Ties go to the smallest control.
    """
    pts = control_set.sample_points(k)
    vals = np.stack([np.broadcast_to(objective(np.full(shape, v)), shape) for v in pts])
    if not np.isfinite(vals).all() or np.abs(vals).max(initial=0.0) > UNBOUNDED:
        raise ModelEvaluationError("Hamiltonian objective is unbounded or non-finite over the control set", None)
    best = np.argmax(vals, axis=0)  # first maximum, i.e. smallest control
    value = np.take_along_axis(vals, best[None], 0)[0]
    arg = pts[best]
    if control_set.kind != "box" or len(pts) < 3:
        return value, arg
    a = pts[np.maximum(best - 1, 0)]
    b = pts[np.minimum(best + 1, len(pts) - 1)]
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = objective(c), objective(d)
    while np.max(b - a) > tol:
        left = fc >= fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        c_new = b - GOLDEN * (b - a)
        d_new = a + GOLDEN * (b - a)
        # reuse one evaluation per step
        c, d = np.where(left, c_new, d), np.where(left, c, d_new)
        fc, fd = np.where(left, objective(c), fd), np.where(left, fc, objective(d))
    vm = 0.5 * (a + b)
    fm = np.broadcast_to(objective(vm), shape)
    if np.abs(fm).max(initial=0.0) > UNBOUNDED:
        raise ModelEvaluationError("Hamiltonian objective exceeded 1e12 during the search", None)
    better = fm > value + 1e-12
    return np.where(better, fm, value), np.where(better, vm, arg)


def numeric_hamiltonian(spec: ProblemSpec, x, y, p):
    x, y, p = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, y, p)))
    obj = lambda v: spec.drift_b(x, y, v) * p - spec.cost_L(x, y, v)
    return maximize_over_controls(obj, spec.control_set, x.shape)


def hamiltonian(spec: ProblemSpec, x, y, p):
    """H(x, y, p) = sup_v [b(x, y, v) p - L(x, y, v)] and the maximizing control."""
    if spec.hamiltonian is not None:
        val, arg = spec.hamiltonian(x, y, p)
        return np.asarray(val, dtype=float), np.asarray(arg, dtype=float)
    return numeric_hamiltonian(spec, x, y, p)


@dataclass
class EffectiveProblem:
    """Averaged problem. Coefficient callables are vectorized like ProblemSpec's.

    ``H_bar(x, p)`` returns the value only; ``argmax(x, p)`` the optimal
    averaged control.
    """

    b_bar: Callable
    L_bar: Callable
    g_bar: Callable
    H_bar: Callable
    control_set: ControlSet
    alpha1: float
    lam: float
    T: float
    provenance: str
    name: str = "custom"
    x_nodes: Optional[np.ndarray] = None
    measures: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)

    def argmax(self, x, p):
        x, p = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(p, dtype=float))
        obj = lambda v: self.b_bar(x, v) * p - self.L_bar(x, v)
        return maximize_over_controls(obj, self.control_set, x.shape)[1]

    def to_dict(self):
        out = {"name": self.name, "provenance": self.provenance, "alpha1": self.alpha1, "lam": self.lam, "T": self.T}
        if self.x_nodes is not None:
            out["x_nodes"] = self.x_nodes.tolist()
            out["tables"] = {k: np.asarray(v).tolist() for k, v in self.tables.items()}
            out["measures"] = [m.summary() for m in self.measures]
        return out


def effective_hamiltonian(effp: EffectiveProblem, x, p):
    return np.asarray(effp.H_bar(x, p), dtype=float)


# ---- closed forms ---------------------------------------------------------

def stable_ou_factor(alpha, beta=1.0):
    """E cos Z for the symmetric stationary law of dY = -beta Y ds + dL^alpha."""
    return math.exp(-1.0 / (alpha * beta))


def closed_form_effective(spec: ProblemSpec) -> EffectiveProblem:
    """Exact averaged data for the built-in benchmarks (stable-OU fast dynamics)."""
    K = stable_ou_factor(spec.alpha2)
    cs = spec.control_set
    if spec.name == "BM1":
        def b_bar(x, v):
            return -x + K * np.sin(0.5 * np.sin(x)) + v

        def L_bar(x, v):
            return np.sqrt(1.0 + x * x) + 0.25 * K * np.cos(0.5 * np.sin(x)) + 0.5 * v * v

        def g_bar(x):
            return np.tanh(x) + 0.25 * K * np.cos(0.5 * np.sin(x))

        def H_bar(x, p):
            x = np.asarray(x, dtype=float)
            return ((-x + K * np.sin(0.5 * np.sin(x))) * p + _phi(p) - np.sqrt(1.0 + x * x)
                    - 0.25 * K * np.cos(0.5 * np.sin(x)))
    elif spec.name == "LIN0":
        def b_bar(x, v):
            return -x + v

        def L_bar(x, v):
            return np.sqrt(1.0 + x * x) + 0.5 * v * v

        def g_bar(x):
            return np.tanh(x)

        def H_bar(x, p):
            x = np.asarray(x, dtype=float)
            return -x * p + _phi(p) - np.sqrt(1.0 + x * x)
    else:
        raise UsageError(f"no closed form for model {spec.name!r}; use the simulated measure source")
    if cs.kind != "box" or (cs.lower, cs.upper) != (-1.0, 1.0):
        raise UsageError("closed forms assume the control box [-1, 1]")
    eff = EffectiveProblem(b_bar, L_bar, g_bar, H_bar, cs, spec.alpha1, spec.lam, spec.T, "closed-form", spec.name)
    eff.argmax = lambda x, p: np.clip(np.broadcast_to(p, np.broadcast(x, p).shape), -1.0, 1.0)
    return eff


# ---- tabulated build ------------------------------------------------------

def _bracket(nodes, x):
    x = np.asarray(x, dtype=float)
    if len(nodes) == 1:
        z = np.zeros(x.shape, dtype=int)
        return z, z, np.zeros(x.shape)
    xc = np.clip(x, nodes[0], nodes[-1])
    j = np.clip(np.searchsorted(nodes, xc, side="right") - 1, 0, len(nodes) - 2)
    w = (xc - nodes[j]) / (nodes[j + 1] - nodes[j])
    return j, j + 1, w


def _interp_table(nodes, vgrid, table, x, v):
    """Bilinear lookup in a (node, v) table; constant beyond the x range."""
    x, v = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(v, dtype=float))
    j0, j1, w = _bracket(nodes, x)
    if len(vgrid) == 1:
        return (1 - w) * table[j0, 0] + w * table[j1, 0]
    vc = np.clip(v, vgrid[0], vgrid[-1])
    k = np.clip(np.searchsorted(vgrid, vc, side="right") - 1, 0, len(vgrid) - 2)
    s = (vc - vgrid[k]) / (vgrid[k + 1] - vgrid[k])
    lo = (1 - s) * table[j0, k] + s * table[j0, k + 1]
    hi = (1 - s) * table[j1, k] + s * table[j1, k + 1]
    return (1 - w) * lo + w * hi


def build_effective(spec: ProblemSpec, x_grid, measure_source="simulate", rng=0, n=20_000, dt=0.01,
                    burn_in=None, thinning=None, n_chains=100, v_points=41, h_samples=2000, beta_hat=None,
                    p_step=0.02):
    """Effective problem from invariant-measure samples at each x node, or from closed forms.

    In the simulated case b_bar and L_bar are tabulated on (node, v-grid),
    g_bar on the nodes, and H_bar(x, p) averages the inner Hamiltonian over
    (a subset of) each node's samples, then interpolates linearly in x.
    With ``p_step`` set, each node's average is cached on the lattice
    p_step * Z (filled lazily) and interpolated linearly in p; the error is
    at most p_step^2 max|H_pp| / 8. ``p_step=None`` evaluates exactly.
    """
    if measure_source in ("closed", "closed-form", "closed-form-BM1"):
        return closed_form_effective(spec)
    if measure_source not in ("simulate", "mc"):
        raise UsageError(f"unknown measure source {measure_source!r}")
    nodes = np.asarray(x_grid, dtype=float)
    if nodes.size == 0:
        raise ParameterError("x_grid must be nonempty")
    if np.any(np.diff(nodes) <= 0):
        raise ParameterError("x_grid must be strictly increasing")
    if beta_hat is None:
        beta_hat = validate_assumptions(spec).beta_hat
    burn_in = 5.0 / beta_hat if burn_in is None else burn_in
    thinning = 1.0 / beta_hat if thinning is None else thinning
    vgrid = spec.control_set.sample_points(v_points)
    measures = []
    b_tab = np.empty((nodes.size, vgrid.size))
    L_tab = np.empty_like(b_tab)
    b_se = np.empty_like(b_tab)
    L_se = np.empty_like(b_tab)
    g_tab = np.empty(nodes.size)
    g_se = np.empty(nodes.size)
    speed = np.empty(nodes.size)
    for j, x in enumerate(nodes):
        try:
            mu = estimate_invariant_measure(spec, x, burn_in, n, thinning, dt, substream(rng, "node", j),
                                            beta_hat, n_chains=n_chains)
            for k, v in enumerate(vgrid):
                b_tab[j, k], b_se[j, k] = integrate(mu, lambda y: spec.drift_b(x, y, v))
                L_tab[j, k], L_se[j, k] = integrate(mu, lambda y: spec.cost_L(x, y, v))
            g_tab[j], g_se[j] = integrate(mu, lambda y: spec.terminal_g(x, y))
            # bound on |dH_bar/dp| for the Lax-Friedrichs flux
            speed[j] = np.mean(np.max(np.abs([spec.drift_b(x, mu.samples, v) for v in vgrid]), axis=0))
        except MJCError as exc:
            raise type(exc)(f"node {j} (x = {x:g}): {exc}") from exc
        measures.append(mu)
    sub = [m.samples[:: max(1, m.n // h_samples)][:h_samples] for m in measures]

    def b_bar(x, v):
        return _interp_table(nodes, vgrid, b_tab, x, v)

    def L_bar(x, v):
        return _interp_table(nodes, vgrid, L_tab, x, v)

    def g_bar(x):
        x = np.asarray(x, dtype=float)
        j0, j1, w = _bracket(nodes, x)
        return (1 - w) * g_tab[j0] + w * g_tab[j1]

    def exact_H(j, p):
        p = np.asarray(p, dtype=float)
        ys = sub[j]
        val, _ = hamiltonian(spec, nodes[j], ys.reshape((1,) * p.ndim + (-1,)), p[..., None])
        return val.mean(axis=-1)

    cache = [None] * nodes.size  # per node: (first lattice index, values)

    def lattice_H(j, p):
        k = np.floor(p / p_step).astype(np.int64)
        lo, hi = int(k.min()), int(k.max()) + 1
        if cache[j] is None:
            k0, vals = lo, exact_H(j, p_step * np.arange(lo, hi + 1))
        else:
            k0, vals = cache[j]
            k1 = k0 + vals.size - 1
            if lo < k0:
                vals = np.concatenate([exact_H(j, p_step * np.arange(lo, k0)), vals])
                k0 = lo
            if hi > k1:
                vals = np.concatenate([vals, exact_H(j, p_step * np.arange(k1 + 1, hi + 1))])
        cache[j] = (k0, vals)
        w = p / p_step - k
        i = k - k0
        return (1 - w) * vals[i] + w * vals[i + 1]

    node_H = exact_H if p_step is None else lattice_H

    def H_bar(x, p):
        x, p = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(p, dtype=float))
        j0, j1, w = _bracket(nodes, x)
        out = np.zeros(x.shape)
        for j in np.unique(np.concatenate([j0.ravel(), j1.ravel()])):
            wj = np.where(j0 == j, 1 - w, 0.0) + np.where(j1 == j, w, 0.0)
            m = wj > 0
            if m.any():
                out[m] += wj[m] * node_H(j, p[m])
        return out

    tables = {"v_grid": vgrid, "b_bar": b_tab, "b_bar_stderr": b_se, "L_bar": L_tab, "L_bar_stderr": L_se,
              "g_bar": g_tab, "g_bar_stderr": g_se, "speed": speed}
    return EffectiveProblem(b_bar, L_bar, g_bar, H_bar, spec.control_set, spec.alpha1, spec.lam, spec.T,
                            "tabulated-from-measures", spec.name, nodes, measures, tables)


# ---- cell problems --------------------------------------------------------

def approximate_corrector(spec: ProblemSpec, x_bar, p_bar, eps_cell, y, n_paths, horizon, dt, rng):
    """Monte Carlo w(y) = -E int_0^horizon h(Y_r) e^{-eps r} dr with h = H(x_bar, ., p_bar).

    Returns (w, stderr). The horizon must make the neglected tail at most
    e^-8 of the integral's scale.
    """
    if not eps_cell > 0:
        raise ParameterError("eps_cell must be positive")
    if horizon < 8.0 / eps_cell * (1 - 1e-12):
        raise ParameterError(f"horizon {horizon} is shorter than 8/eps_cell = {8.0 / eps_cell:g}")
    _, h = time_grid(0.0, horizon, dt)
    acc = np.zeros(n_paths)
    prev = None
    for k, r, Y in run_frozen(spec, x_bar, np.full(n_paths, float(y)), horizon, dt, rng, n_paths):
        cur = hamiltonian(spec, x_bar, Y, p_bar)[0] * math.exp(-eps_cell * r)
        if prev is not None:
            acc += 0.5 * (prev + cur) * h
        prev = cur
    w = -acc
    se = float(w.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
    return float(w.mean()), se


def cauchy_cell(spec: ProblemSpec, x, r, y, n_paths, dt, rng):
    """Monte Carlo E g(x, Y_r) for the frozen equation started at y; returns (mean, stderr)."""
    if r < 0:
        raise ParameterError("r must be nonnegative")
    if r == 0:
        return float(spec.terminal_g(float(x), float(y))), 0.0
    for _, _, Y in run_frozen(spec, x, np.full(n_paths, float(y)), r, dt, rng, n_paths):
        pass
    vals = np.broadcast_to(np.asarray(spec.terminal_g(float(x), Y), dtype=float), Y.shape)
    se = float(vals.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
    return float(vals.mean()), se
