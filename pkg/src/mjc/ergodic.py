"""Invariant measure of the frozen fast equation and ergodicity diagnostics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ModelEvaluationError, ParameterError, ResolutionError, StepSizeError
from .model import AssumptionReport
from .sde import _check_finite, _noise, run_frozen, streams, time_grid
from .stable import substream
from .stencil import Stencil1D


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Equally weighted samples of mu^x, stored chain by chain.

    ``samples`` is laid out chain-major: chain 0's thinned samples first,
    then chain 1's, and so on (``meta["n_chains"]`` chains).
    """

    x_anchor: float
    samples: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.samples.size

    @property
    def weights(self):
        return np.full(self.n, 1.0 / self.n)

    def summary(self):
        s = self.samples
        q1, q3 = np.percentile(s, [25, 75])
        out = {"x": self.x_anchor, "n": int(s.size), "mean": float(s.mean()), "median": float(np.median(s)),
               "iqr": float(q3 - q1)}
        for u in (0.5, 1.0, 2.0):
            out[f"char_fn_re_u{u:g}"] = float(np.cos(u * s).mean())
            out[f"char_fn_im_u{u:g}"] = float(np.sin(u * s).mean())
        return out


def _beta(beta_hat):
    if isinstance(beta_hat, AssumptionReport):
        beta_hat = beta_hat.beta_hat
    if beta_hat is None:
        raise ParameterError("a dissipativity estimate is required: run validate_assumptions first")
    if not beta_hat > 0:
        raise ParameterError(f"fast drift is not dissipative (beta_hat = {beta_hat})")
    return float(beta_hat)


def estimate_invariant_measure(spec, x, burn_in, n, thinning, dt, rng, beta_hat, n_chains=100, y0=0.0):
    """Thinned post-burn-in samples of the frozen equation at slow state x.

    ``n_chains`` independent chains run side by side (vectorized); with
    ``n_chains=1`` this is a single long chain.
    """
    beta = _beta(beta_hat)
    if burn_in < 5.0 / beta * (1 - 1e-12):
        raise ParameterError(f"burn_in must cover five relaxation times (>= {5.0 / beta:g})")
    if thinning < 1.0 / beta * (1 - 1e-12):
        raise ParameterError(f"thinning must be at least one relaxation time (>= {1.0 / beta:g})")
    if not dt > 0:
        raise ParameterError("dt must be positive")
    n_chains = max(1, min(int(n_chains), int(n)))
    per_chain = int(math.ceil(n / n_chains))
    gen = rng if isinstance(rng, np.random.Generator) else substream(rng, "invariant", int(round(x * 1e6)))
    k_burn = int(math.ceil(burn_in / dt - 1e-9))
    k_thin = max(1, int(round(thinning / dt)))
    xf = float(x)
    Y = np.full(n_chains, float(y0))
    for k in range(k_burn):
        Y = Y + spec.drift_c(xf, Y) * dt + _noise(spec.alpha2, dt, gen, n_chains, True)
    _check_finite(Y, k_burn, "invariant-measure chain")
    out = np.empty((n_chains, per_chain))
    for j in range(per_chain):
        for _ in range(k_thin):
            Y = Y + spec.drift_c(xf, Y) * dt + _noise(spec.alpha2, dt, gen, n_chains, True)
        _check_finite(Y, k_burn + (j + 1) * k_thin, "invariant-measure chain")
        out[:, j] = Y
    samples = out.ravel()[:n] if n_chains * per_chain != n else out.ravel()
    meta = {"burn_in": burn_in, "thinning": k_thin * dt, "n": int(samples.size), "dt": dt,
            "n_chains": n_chains, "seed": rng if not isinstance(rng, np.random.Generator) else None}
    return EmpiricalMeasure(xf, samples, meta)


def batch_means_stderr(values, n_batches=20):
    v = np.asarray(values, dtype=float)
    if v.size < 2 * n_batches:
        return float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    size = v.size // n_batches
    means = v[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(n_batches))


def integrate(measure: EmpiricalMeasure, f, n_batches=20):
    """Mean of f over the samples with a batch-means standard error."""
    vals = np.broadcast_to(np.asarray(f(measure.samples), dtype=float), measure.samples.shape)
    bad = ~np.isfinite(vals)
    if bad.any():
        y = float(measure.samples[np.flatnonzero(bad)[0]])
        raise ModelEvaluationError(f"integrand is not finite at y = {y}", (measure.x_anchor, y))
    return float(vals.mean()), batch_means_stderr(vals, max(20, n_batches))


@dataclass
class DecayResult:
    times: np.ndarray
    errors: np.ndarray
    stderr: np.ndarray
    mu_value: float
    rate: object  # float, or "unresolved"
    fitted_on: np.ndarray

    @property
    def curve(self):
        return list(zip(self.times.tolist(), self.errors.tolist()))


def ergodicity_decay(spec, x, test_fn, y0, times, n_paths, dt, rng, beta_hat, measure=None,
                     measure_n=100_000):
    """|P_s phi(y0) - mu(phi)| along ``times`` and its fitted exponential rate.

    ``y0`` is a point or one starting value per path.

    The rate is fitted only where the error exceeds five combined standard
    errors; with fewer than two such points it is reported as "unresolved".
    """
    times = np.asarray(sorted(times), dtype=float)
    beta = _beta(beta_hat)
    if measure is None:
        measure = estimate_invariant_measure(spec, x, 5.0 / beta, measure_n, 1.0 / beta, dt,
                                             substream(rng if not isinstance(rng, np.random.Generator) else 0,
                                                       "decay-measure"), beta)
    mu, mu_se = integrate(measure, test_fn)
    grid, h = time_grid(0.0, float(times[-1]), dt)
    want = {int(round(t / h)): i for i, t in enumerate(times)}
    est = np.zeros(len(times))
    se = np.zeros(len(times))
    y_init = np.broadcast_to(np.asarray(y0, dtype=float), (n_paths,)).copy()
    gen = rng if isinstance(rng, np.random.Generator) else substream(rng, "decay")
    for k, s, Y in run_frozen(spec, x, y_init, float(times[-1]), dt, gen, n_paths):
        if k in want:
            vals = np.asarray(test_fn(Y), dtype=float) * np.ones(n_paths)
            i = want[k]
            est[i] = vals.mean()
            se[i] = vals.std(ddof=1) / math.sqrt(n_paths) if n_paths > 1 else 0.0
    errors = np.abs(est - mu)
    comb = np.sqrt(se**2 + mu_se**2)
    ok = errors > 5 * comb
    rate = "unresolved"
    if ok.sum() >= 2:
        slope = np.polyfit(times[ok], np.log(errors[ok]), 1)[0]
        rate = float(-slope)
    return DecayResult(times, errors, comb, mu, rate, times[ok])


@dataclass
class LyapunovResult:
    rows: list  # (y, -L2 w(y)) pairs
    R0: object  # smallest audited radius with both signs >= 0, or None
    refinement_change: float

    @property
    def all_positive(self):
        return all(v > 0 for _, v in self.rows)


def lyapunov_w(y):
    return np.sqrt(1.0 + np.asarray(y, dtype=float) ** 2)


def _neg_generator_w(spec, x, ys, h, half_width):
    n = 2 * int(round(half_width / h)) + 1
    grid = np.linspace(-half_width, half_width, n)
    st = Stencil1D(grid[1] - grid[0], n, spec.alpha2, extension="linear")
    Aw = st.apply(lyapunov_w(grid))
    idx = np.rint((np.asarray(ys) + half_width) / (grid[1] - grid[0])).astype(int)
    y = grid[idx]
    grad = y / np.sqrt(1.0 + y * y)
    return -Aw[idx] - spec.drift_c(float(x), y) * grad


def lyapunov_check(spec, x, radii, h=0.05, half_width=None, rel_tol=0.01):
    """-L2 w at y = +-radius for w(y) = sqrt(1 + y^2), by stencil quadrature.

    The quadrature is repeated at h/2; a relative change above ``rel_tol``
    raises ResolutionError.
    """
    radii = [float(r) for r in radii]
    if any(r <= 0 for r in radii):
        raise ParameterError("radii must be positive")
    if half_width is None:
        half_width = max(8.0 * max(radii), 40.0)
    ys = np.array([s * r for r in radii for s in (1.0, -1.0)])
    coarse = _neg_generator_w(spec, x, ys, h, half_width)
    fine = _neg_generator_w(spec, x, ys, h / 2, half_width)
    change = float(np.max(np.abs(fine - coarse) / np.maximum(np.abs(fine), 1e-3)))
    if change > rel_tol:
        raise ResolutionError(f"quadrature changed by {change:.2%} under refinement (limit {rel_tol:.0%})")
    rows = list(zip(ys.tolist(), fine.tolist()))
    R0 = None
    for r in sorted(radii):
        vals = [v for y, v in rows if abs(abs(y) - r) < 1e-12]
        if all(v >= 0 for v in vals):
            R0 = r
            break
    return LyapunovResult(rows, R0, change)


def path_average_error(spec, epsilon, f, x_frozen, y0, window, n_paths, dt, rng, fbar=None, measure=None,
                       beta_hat=None):
    """Monte Carlo E| int_{t1}^{t2} (f(x, Y^eps_r) - fbar(x)) dr | with the slow state pinned.

    Returns (mean, stderr). ``fbar`` defaults to the measure average of f.
    """
    t1, t2 = window
    if not 0 <= t1 < t2:
        raise ParameterError(f"bad averaging window {window}")
    if dt > epsilon / 10 * (1 + 1e-12):
        raise StepSizeError(f"dt = {dt} exceeds epsilon/10 = {epsilon / 10}")
    xf = float(x_frozen)
    if fbar is None:
        if measure is None:
            beta = _beta(beta_hat)
            measure = estimate_invariant_measure(spec, xf, 5.0 / beta, 20_000, 1.0 / beta, 0.01,
                                                 substream(0, "path-average-measure"), beta)
        fbar, _ = integrate(measure, lambda y: f(xf, y))
    grid, h = time_grid(0.0, t2, dt)
    _, fast = streams(rng)
    Y = np.full(n_paths, float(y0))
    acc = np.zeros(n_paths)
    prev = None
    for k, t in enumerate(grid):
        cur = np.asarray(f(xf, Y), dtype=float) - fbar
        if prev is not None and t > t1 + 1e-12:
            lo = max(grid[k - 1], t1)
            # trapezoid on the part of the cell inside the window
            if lo > grid[k - 1]:
                w = (lo - grid[k - 1]) / h
                prev = prev * (1 - w) + cur * w
            acc += 0.5 * (prev + cur) * (t - lo)
        prev = cur
        if k == len(grid) - 1:
            break
        Y = Y + spec.drift_c(xf, Y) * (h / epsilon) + _noise(spec.alpha2, h / epsilon, fast, n_paths, True)
        _check_finite(Y, k + 1, "fast state")
    vals = np.abs(acc)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
