"""Euler-Maruyama integrators for the slow-fast system and its reductions.

Every integrator is vectorized over a bundle of independent paths. Slow and
fast noise come from separate random streams so that two simulations
started from the same integer seed share their slow increments.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DivergenceError, ParameterError, StepSizeError
from .model import ControlSet, ProblemSpec
from .stable import sample_standard, substream


@dataclass
class Trajectory:
    """Euler skeleton of a bundle of paths: ``states[i, k]`` is path i at ``times[k]``."""

    times: np.ndarray
    states: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_paths(self):
        return self.states.shape[0]

    def path(self, i=0):
        return self.states[i]

    @property
    def final(self):
        return self.states[:, -1]


@dataclass
class PolicyHandle:
    """Non-anticipating control rule; outputs are projected onto the control set."""

    kind: str
    fn: Callable
    control_set: ControlSet
    label: str = ""

    def __call__(self, t, x, y=None):
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            v = np.full(x.shape, self.fn)
        elif self.kind == "feedback_txy":
            v = self.fn(t, x, y)
        else:  # feedback_tx and grid policies ignore the fast state
            v = self.fn(t, x)
        return self.control_set.clamp(np.broadcast_to(np.asarray(v, dtype=float), x.shape))

    @classmethod
    def constant(cls, v, control_set: ControlSet):
        v = float(control_set.clamp(v))
        return cls("constant", v, control_set, f"const:{v:g}")

    @classmethod
    def feedback(cls, fn, control_set: ControlSet, uses_y=False, label="feedback"):
        return cls("feedback_txy" if uses_y else "feedback_tx", fn, control_set, label)


def streams(rng):
    """(slow, fast) generators from an int seed or a Generator."""
    if isinstance(rng, np.random.Generator):
        a, b = rng.spawn(2)
        return a, b
    return substream(rng, "slow"), substream(rng, "fast")


def time_grid(t0, t1, dt):
    if not dt > 0:
        raise ParameterError(f"dt must be positive, got {dt}")
    if t1 < t0:
        raise ParameterError(f"end time {t1} precedes start time {t0}")
    k = max(int(math.ceil((t1 - t0) / dt - 1e-9)), 0)
    if k == 0:
        return np.array([t0]), 0.0
    return np.linspace(t0, t1, k + 1), (t1 - t0) / k


def _check_finite(arr, k, what):
    if not np.isfinite(arr).all():
        raise DivergenceError(f"{what} became non-finite at step {k}", step=k)


def _noise(alpha, h, gen, size, on):
    if not on or h == 0.0:
        return np.zeros(size)
    return h ** (1.0 / alpha) * sample_standard(alpha, gen, size)


def run_slow_fast(spec: ProblemSpec, epsilon, policy, x0, y0, t0, dt, rng, n_paths=1, noise=True):
    """Yield ``(k, t, X, Y, v)`` at every grid time, last one included.

    ``v`` is the control applied on the step that starts at ``t``.
    """
    if not (0 < epsilon <= 1):
        raise ParameterError(f"epsilon must lie in (0, 1], got {epsilon}")
    if dt > epsilon / 10 * (1 + 1e-12):
        raise StepSizeError(f"dt = {dt} exceeds epsilon/10 = {epsilon / 10}")
    if not t0 <= spec.T:
        raise ParameterError(f"start time {t0} is after the horizon {spec.T}")
    times, h = time_grid(t0, spec.T, dt)
    slow, fast = streams(rng)
    X = np.full(n_paths, float(x0))
    Y = np.full(n_paths, float(y0))
    for k, t in enumerate(times):
        v = policy(t, X, Y)
        yield k, t, X, Y, v
        if k == len(times) - 1:
            break
        dX = spec.drift_b(X, Y, v) * h + _noise(spec.alpha1, h, slow, n_paths, noise)
        dY = spec.drift_c(X, Y) * (h / epsilon) + _noise(spec.alpha2, h / epsilon, fast, n_paths, noise)
        X = X + dX
        Y = Y + dY
        _check_finite(X, k + 1, "slow state")
        _check_finite(Y, k + 1, "fast state")


def run_averaged(eff, policy, x0, t0, dt, rng, n_paths=1, noise=True):
    """Yield ``(k, t, X, v)`` for the averaged slow equation."""
    times, h = time_grid(t0, eff.T, dt)
    slow, _ = streams(rng)
    X = np.full(n_paths, float(x0))
    for k, t in enumerate(times):
        v = policy(t, X, None)
        yield k, t, X, v
        if k == len(times) - 1:
            break
        X = X + eff.b_bar(X, v) * h + _noise(eff.alpha1, h, slow, n_paths, noise)
        _check_finite(X, k + 1, "averaged state")


def run_frozen(spec: ProblemSpec, x_frozen, y0, horizon, dt, rng, n_paths=1, noise=True):
    """Yield ``(k, s, Y)`` for dY = c(x_frozen, Y) ds + dL."""
    if not horizon > 0:
        raise ParameterError(f"horizon must be positive, got {horizon}")
    times, h = time_grid(0.0, horizon, dt)
    gen = rng if isinstance(rng, np.random.Generator) else substream(rng, "frozen")
    Y = np.broadcast_to(np.asarray(y0, dtype=float), (n_paths,)).copy()
    x = float(x_frozen)
    for k, s in enumerate(times):
        yield k, s, Y
        if k == len(times) - 1:
            break
        Y = Y + spec.drift_c(x, Y) * h + _noise(spec.alpha2, h, gen, n_paths, noise)
        _check_finite(Y, k + 1, "frozen state")


def _record(gen_steps, record_every, n_fields):
    times, rows = [], [[] for _ in range(n_fields)]
    last = None
    for item in gen_steps:
        k, t = item[0], item[1]
        last = item
        if k % record_every == 0:
            times.append(t)
            for r, a in zip(rows, item[2:2 + n_fields]):
                r.append(np.array(a, copy=True))
    if last is not None and last[0] % record_every != 0:
        times.append(last[1])
        for r, a in zip(rows, last[2:2 + n_fields]):
            r.append(np.array(a, copy=True))
    return np.asarray(times), [np.stack(r, axis=1) for r in rows]


def simulate_slow_fast(spec, epsilon, policy, x0, y0, t0, dt, rng, n_paths=1, noise=True, record_every=1):
    """Euler-Maruyama skeleton of the slow-fast pair; returns (X trajectory, Y trajectory)."""
    steps = run_slow_fast(spec, epsilon, policy, x0, y0, t0, dt, rng, n_paths, noise)
    times, (xs, ys) = _record(steps, record_every, 2)
    meta = {"epsilon": epsilon, "seed": rng if not isinstance(rng, np.random.Generator) else None, "dt": dt}
    return Trajectory(times, xs, dict(meta, component="slow")), Trajectory(times, ys, dict(meta, component="fast"))


def simulate_frozen(spec, x_frozen, y0, horizon, dt, rng, n_paths=1, noise=True, record_every=1):
    steps = run_frozen(spec, x_frozen, y0, horizon, dt, rng, n_paths, noise)
    times, (ys,) = _record(steps, record_every, 1)
    return Trajectory(times, ys, {"epsilon": "frozen", "x": float(x_frozen), "dt": dt})


def simulate_averaged(eff, policy, x0, t0, dt, rng, n_paths=1, noise=True, record_every=1):
    steps = run_averaged(eff, policy, x0, t0, dt, rng, n_paths, noise)
    times, (xs,) = _record(steps, record_every, 1)
    return Trajectory(times, xs, {"epsilon": "averaged", "dt": dt})


def final_states(spec, epsilon, policy, x0, y0, t0, dt, rng, n_paths, noise=True):
    """(X_T, Y_T) without storing the paths."""
    for k, t, X, Y, v in run_slow_fast(spec, epsilon, policy, x0, y0, t0, dt, rng, n_paths, noise):
        pass
    return X, Y


def final_averaged(eff, policy, x0, t0, dt, rng, n_paths, noise=True):
    for k, t, X, v in run_averaged(eff, policy, x0, t0, dt, rng, n_paths, noise):
        pass
    return X


def estimate_sup_moment(spec, epsilon, p, x0, y0, n_paths, dt, rng, policy=None, noise=True):
    """Monte Carlo E[sup_s |X_s|^p] over the skeleton; returns (mean, stderr).

    Only 1 <= p < alpha1 is allowed: higher moments of the slow state are infinite.
    """
    if not (1.0 <= p < spec.alpha1):
        raise ParameterError(f"moment order must satisfy 1 <= p < alpha1 = {spec.alpha1}, got {p}")
    if policy is None:
        policy = PolicyHandle.constant(0.0 if spec.control_set.kind == "box" and spec.control_set.lower <= 0 <= spec.control_set.upper
                                       else spec.control_set.sample_points()[0], spec.control_set)
    running = np.zeros(n_paths)
    for k, t, X, Y, v in run_slow_fast(spec, epsilon, policy, x0, y0, 0.0, dt, rng, n_paths, noise):
        np.maximum(running, np.abs(X), out=running)
    vals = running ** p
    se = vals.std(ddof=1) / np.sqrt(n_paths) if n_paths > 1 else 0.0
    return float(vals.mean()), float(se)


def coupled_frozen_contraction(spec, x1, y1, x2, y2, horizon, dt, rng, n_paths=1, noise=True):
    """Synchronously coupled frozen pair; returns (times, |Y1 - Y2|^2 per path and time)."""
    if not horizon > 0:
        raise ParameterError(f"horizon must be positive, got {horizon}")
    times, h = time_grid(0.0, horizon, dt)
    gen = rng if isinstance(rng, np.random.Generator) else substream(rng, "coupled")
    Y1 = np.full(n_paths, float(y1))
    Y2 = np.full(n_paths, float(y2))
    out = np.empty((n_paths, len(times)))
    out[:, 0] = (Y1 - Y2) ** 2
    for k in range(1, len(times)):
        dL = _noise(spec.alpha2, h, gen, n_paths, noise)
        Y1 = Y1 + spec.drift_c(x1, Y1) * h + dL
        Y2 = Y2 + spec.drift_c(x2, Y2) * h + dL
        _check_finite(Y1, k, "coupled state")
        _check_finite(Y2, k, "coupled state")
        out[:, k] = (Y1 - Y2) ** 2
    return times, out
