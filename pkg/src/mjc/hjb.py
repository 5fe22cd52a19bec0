"""Explicit monotone finite-difference solvers for the nonlocal HJB equations.

Both solvers integrate in time-to-go tau = T - t:

    effective:  u_tau = A_x u + H_bar(x, u_x) - lam u,                u(0) = g_bar
    two-scale:  u_tau = A_x u + (A_y u + c u_y) / eps + H(x, y, u_x) - lam u,   u(0) = g

where A is the fractional-Laplacian stencil. The Hamiltonian is discretized
with a local Lax-Friedrichs flux, H((p- + p+)/2) + theta/2 (p+ - p-), with
theta bounding |dH/dp| node by node; under the CFL bound the update is a
monotone map, so ordered data stay ordered.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .effective import EffectiveProblem, hamiltonian
from .errors import ConfigurationError, InstabilityError, ParameterError, ResolutionError
from .model import ControlSet, ProblemSpec
from .sde import PolicyHandle
from .stencil import EXTENSIONS, Stencil1D


@dataclass(frozen=True)
class Axis:
    """Uniform axis centred at ``center`` with ``n`` (odd) nodes on [center - R, center + R]."""

    center: float
    half_width: float
    n: int

    def __post_init__(self):
        if self.n < 3 or self.n % 2 == 0:
            raise ParameterError(f"node count must be odd and >= 3, got {self.n}")
        if not self.half_width > 0:
            raise ParameterError("half-width must be positive")

    @classmethod
    def span(cls, a, b, n):
        return cls(0.5 * (a + b), 0.5 * (b - a), int(n))

    @property
    def h(self):
        return 2.0 * self.half_width / (self.n - 1)

    @property
    def nodes(self):
        return np.linspace(self.center - self.half_width, self.center + self.half_width, self.n)


@dataclass(frozen=True)
class Grid:
    x: Axis
    y: Optional[Axis] = None
    T: float = 1.0

    @property
    def shape(self):
        return (self.x.n,) if self.y is None else (self.x.n, self.y.n)

    def check_region(self, half_width):
        """The truncated x-domain must be at least four times the region of interest."""
        if self.x.half_width < 4.0 * half_width - 1e-12:
            raise ConfigurationError(
                f"x half-width {self.x.half_width} is below 4 x region half-width {half_width}")


@dataclass
class GridFunction:
    values: np.ndarray
    grid: Grid
    extension: str = "constant"

    def __post_init__(self):
        if self.extension not in EXTENSIONS:
            raise ParameterError(f"unknown extension rule {self.extension!r}")
        if self.values.shape != self.grid.shape:
            raise ParameterError(f"values of shape {self.values.shape} do not match grid {self.grid.shape}")


@dataclass
class SchemeConfig:
    """Solver settings. ``lf_theta=None`` bounds |dH/dp| node by node from the drift."""

    lf_theta: Optional[float] = None
    cfl_safety: float = 0.9
    dt: Optional[float] = None
    extension: str = "constant"
    tol: float = 0.02
    node_budget: int = 250_000
    split_delta: Optional[float] = None

    def __post_init__(self):
        if not 0 < self.cfl_safety <= 1:
            raise ParameterError("cfl_safety must lie in (0, 1]")
        if self.extension not in EXTENSIONS:
            raise ParameterError(f"unknown extension rule {self.extension!r}")


@dataclass
class HJBSolution:
    """u at the stored time-to-go levels: ``values[k]`` is u(tau = taus[k])."""

    taus: np.ndarray
    values: np.ndarray
    grid: Grid
    meta: dict = field(default_factory=dict)

    def at_tau(self, tau):
        k = int(np.argmin(np.abs(self.taus - tau)))
        if abs(self.taus[k] - tau) > 1e-9:
            raise ParameterError(f"tau = {tau} is not a stored level")
        return self.values[k]

    def at_time(self, t):
        return self.at_tau(self.grid.T - t)

    def interp(self, tau, x, y=None):
        """Value at (tau, x[, y]) by linear interpolation between stored levels and nodes."""
        taus = self.taus
        k = int(np.clip(np.searchsorted(taus, tau) - 1, 0, len(taus) - 2)) if len(taus) > 1 else 0
        w = 0.0 if len(taus) == 1 else float(np.clip((tau - taus[k]) / (taus[k + 1] - taus[k]), 0, 1))
        layer = self.values[k] if w == 0.0 else (1 - w) * self.values[k] + w * self.values[k + 1]
        xs = self.grid.x.nodes
        if self.grid.y is None:
            return np.interp(x, xs, layer)
        from scipy.interpolate import RegularGridInterpolator
        f = RegularGridInterpolator((xs, self.grid.y.nodes), layer)
        return f(np.column_stack(np.broadcast_arrays(np.ravel(x), np.ravel(y))))


# ---- nonlocal operators -----------------------------------------------------

def frac_laplacian_apply(f: GridFunction, alpha, axis=0) -> GridFunction:
    ax = f.grid.x if axis == 0 else f.grid.y
    st = Stencil1D(ax.h, ax.n, alpha, f.extension)
    return GridFunction(st.apply(f.values, axis=axis), f.grid, f.extension)


def localized_operators(f: GridFunction, alpha, delta, p=None, axis=0):
    """Split the operator at jump size ``delta`` into near and far parts.

    The jump measure is symmetric, so the gradient compensator integrates to
    zero on the near ball and ``p`` does not enter; it is accepted for
    interface symmetry only.
    """
    ax = f.grid.x if axis == 0 else f.grid.y
    if delta < 2 * ax.h * (1 - 1e-12):
        raise ResolutionError(f"delta = {delta} must cover at least two cells (>= {2 * ax.h:g})")
    near = Stencil1D(ax.h, ax.n, alpha, f.extension, window=(0.0, delta))
    far = Stencil1D(ax.h, ax.n, alpha, f.extension, window=(delta, math.inf))
    return (GridFunction(near.apply(f.values, axis=axis), f.grid, f.extension),
            GridFunction(far.apply(f.values, axis=axis), f.grid, f.extension))


def _operator_matrix(axis: Axis, alpha, scheme: SchemeConfig):
    if scheme.split_delta is None:
        st = Stencil1D(axis.h, axis.n, alpha, scheme.extension)
        return st.matrix(), st.total_weight
    d = scheme.split_delta
    if d < 2 * axis.h * (1 - 1e-12):
        raise ResolutionError(f"split_delta = {d} must cover at least two cells")
    near = Stencil1D(axis.h, axis.n, alpha, scheme.extension, window=(0.0, d))
    far = Stencil1D(axis.h, axis.n, alpha, scheme.extension, window=(d, math.inf))
    return near.matrix() + far.matrix(), near.total_weight + far.total_weight


def _ghosts(u, extension, axis):
    """Pad one ghost layer on each side of ``axis`` following the extension rule."""
    u = np.moveaxis(u, axis, 0)
    if extension == "constant":
        lo, hi = u[0], u[-1]
    else:
        lo, hi = 2 * u[0] - u[1], 2 * u[-1] - u[-2]
    return np.moveaxis(np.concatenate([lo[None], u, hi[None]]), 0, axis)


def _one_sided(u, h, extension, axis=0):
    g = _ghosts(u, extension, axis)
    n = u.shape[axis]
    take = lambda a, b: np.take(g, np.arange(a, a + n), axis=axis)
    lo, mid, hi = take(0, None), take(1, None), take(2, None)
    return (mid - lo) / h, (hi - mid) / h


def _steps(taus, dt_max, dt=None):
    """Split each interval between requested levels into equal steps no longer than dt_max."""
    plan = []
    prev = 0.0
    for tau in taus:
        seg = tau - prev
        if seg < -1e-12:
            raise ParameterError("tau levels must be nondecreasing")
        step = dt_max if dt is None else dt
        k = int(math.ceil(seg / step - 1e-9)) if seg > 1e-15 else 0
        plan.append((k, seg / k if k else 0.0))
        prev = tau
    return plan


def _check_cfl(dt, bound, scheme):
    admissible = scheme.cfl_safety * bound
    if dt is not None and dt > admissible * (1 + 1e-12):
        raise ConfigurationError(f"dt = {dt:g} violates the CFL condition; admissible dt <= {admissible:.6g}")
    return admissible


def _guard(u, u0_norm, ref, k):
    if not np.isfinite(u).all():
        raise InstabilityError(f"solution became non-finite at step {k}")
    if np.abs(u).max() > 100.0 * (u0_norm + ref + 1.0):
        raise InstabilityError(f"solution left the a-priori bound at step {k} (|u| = {np.abs(u).max():.3g})")


def _taus(taus, T):
    if taus is None:
        taus = np.linspace(0.0, T, 101)
    taus = np.asarray(sorted(set(float(t) for t in taus)), dtype=float)
    if taus[0] < 0 or taus[-1] > T + 1e-12:
        raise ParameterError(f"tau levels must lie in [0, {T}]")
    return taus


def _theta_effective(effp: EffectiveProblem, x):
    speed = effp.tables.get("speed") if effp.tables else None
    if speed is not None:
        return np.interp(x, effp.x_nodes, speed)
    vs = effp.control_set.sample_points(41)
    return np.max(np.abs(np.stack([effp.b_bar(x, np.full_like(x, v)) for v in vs])), axis=0)


def solve_effective_hjb(effp: EffectiveProblem, grid: Grid, scheme: SchemeConfig = None, taus=None,
                        terminal=None, hamiltonian_fn=None) -> HJBSolution:
    """u(tau, x) of the averaged equation at the requested tau levels.

    ``terminal`` and ``hamiltonian_fn`` override g_bar and H_bar (used by
    tests and linear cross-checks).
    """
    scheme = scheme or SchemeConfig()
    ax = grid.x
    x = ax.nodes
    h = ax.h
    taus = _taus(taus, grid.T)
    A, Lam = _operator_matrix(ax, effp.alpha1, scheme)
    H = hamiltonian_fn or effp.H_bar
    theta = np.full(ax.n, float(scheme.lf_theta)) if scheme.lf_theta is not None else _theta_effective(effp, x)
    bound = 1.0 / (Lam + abs(effp.lam) + theta.max() / h)
    dt_max = _check_cfl(scheme.dt, bound, scheme)
    u = np.asarray(terminal(x) if terminal is not None else effp.g_bar(x), dtype=float) * np.ones(ax.n)
    u0n = float(np.abs(u).max())
    ref = grid.T * float(np.abs(H(x, np.zeros_like(x))).max())
    out = np.empty((len(taus), ax.n))
    k_tot = 0
    for i, (k, dt) in enumerate(_steps(taus, dt_max, scheme.dt)):
        for _ in range(k):
            pm, pp = _one_sided(u, h, scheme.extension)
            flux = H(x, 0.5 * (pm + pp)) + 0.5 * theta * (pp - pm)
            u = u + dt * (A @ u + flux - effp.lam * u)
            k_tot += 1
            _guard(u, u0n, ref, k_tot)
        out[i] = u
    meta = {"kind": "effective", "steps": k_tot, "dt_max": dt_max, "extension": scheme.extension,
            "theta_max": float(theta.max()), "Lambda_h": Lam}
    return HJBSolution(taus, out, grid, meta)


def two_scale_cfl(spec: ProblemSpec, epsilon, grid: Grid, scheme: SchemeConfig = None):
    """Largest admissible step of the two-scale scheme (before the safety factor)."""
    scheme = scheme or SchemeConfig()
    x, y = grid.x.nodes, grid.y.nodes
    Lx = Stencil1D(grid.x.h, grid.x.n, spec.alpha1).total_weight
    Ly = Stencil1D(grid.y.h, grid.y.n, spec.alpha2).total_weight
    c = spec.drift_c(x[:, None], y[None, :])
    theta = _theta_two_scale(spec, x, y) if scheme.lf_theta is None else scheme.lf_theta
    return 1.0 / (Lx + (Ly + np.abs(c).max() / grid.y.h) / epsilon + abs(spec.lam) + np.max(theta) / grid.x.h)


def _theta_two_scale(spec, x, y):
    X, Y = np.meshgrid(x, y, indexing="ij")
    vs = spec.control_set.sample_points(41)
    return np.max(np.abs(np.stack([spec.drift_b(X, Y, np.full(X.shape, v)) for v in vs])), axis=0)


def solve_two_scale_hjb(spec: ProblemSpec, epsilon, grid: Grid, scheme: SchemeConfig = None, taus=None,
                        measure_free=True) -> HJBSolution:
    """u^eps(tau, x, y) on the slow x fast grid.

    The fast drift term uses first-order upwinding. The solve never touches
    invariant measures (``measure_free`` is accepted for interface parity).
    """
    scheme = scheme or SchemeConfig()
    if grid.y is None:
        raise ParameterError("the two-scale solve needs a y axis")
    if not 0 < epsilon <= 1:
        raise ParameterError(f"epsilon must lie in (0, 1], got {epsilon}")
    nx, ny = grid.x.n, grid.y.n
    if nx * ny > scheme.node_budget:
        raise ConfigurationError(f"grid has {nx * ny} nodes, above the budget of {scheme.node_budget}")
    x, y = grid.x.nodes, grid.y.nodes
    hx, hy = grid.x.h, grid.y.h
    taus = _taus(taus, grid.T)
    Ax, Lx = _operator_matrix(grid.x, spec.alpha1, scheme)
    Ay, Ly = _operator_matrix(grid.y, spec.alpha2, scheme)
    AyT = np.ascontiguousarray(Ay.T)
    X, Y = np.meshgrid(x, y, indexing="ij")
    c = np.broadcast_to(spec.drift_c(X, Y), X.shape)
    cp, cm = np.maximum(c, 0.0), np.minimum(c, 0.0)
    theta = np.full(X.shape, float(scheme.lf_theta)) if scheme.lf_theta is not None else _theta_two_scale(spec, x, y)
    bound = 1.0 / (Lx + (Ly + np.abs(c).max() / hy) / epsilon + abs(spec.lam) + theta.max() / hx)
    dt_max = _check_cfl(scheme.dt, bound, scheme)
    u = np.array(np.broadcast_to(spec.terminal_g(X, Y), X.shape), dtype=float)
    u0n = float(np.abs(u).max())
    ref = grid.T * float(np.abs(hamiltonian(spec, X, Y, np.zeros_like(X))[0]).max())
    out = np.empty((len(taus), nx, ny))
    inv_eps = 1.0 / epsilon
    k_tot = 0
    for i, (k, dt) in enumerate(_steps(taus, dt_max, scheme.dt)):
        for _ in range(k):
            pm, pp = _one_sided(u, hx, scheme.extension, axis=0)
            qm, qp = _one_sided(u, hy, scheme.extension, axis=1)
            Hval = hamiltonian(spec, X, Y, 0.5 * (pm + pp))[0]
            fast = u @ AyT + cp * qp + cm * qm
            u = u + dt * (Ax @ u + inv_eps * fast + Hval + 0.5 * theta * (pp - pm) - spec.lam * u)
            k_tot += 1
            _guard(u, u0n, ref, k_tot)
        out[i] = u
    meta = {"kind": "two-scale", "epsilon": epsilon, "steps": k_tot, "dt_max": dt_max,
            "extension": scheme.extension, "theta_max": float(theta.max())}
    return HJBSolution(taus, out, grid, meta)


# ---- policies -------------------------------------------------------------------

def central_gradient(u, h, extension="constant"):
    g = _ghosts(u, extension, 0)
    return (g[2:] - g[:-2]) / (2 * h)


def extract_policy(effp: EffectiveProblem, sol: HJBSolution, grid: Grid = None, extension="constant") -> PolicyHandle:
    """Feedback v*(t, x) = argmax_v [b_bar(x, v) u_x - L_bar(x, v)] from a solved effective HJB.

    Controls are tabulated at every stored level and node, then looked up at
    the nearest stored level at or after tau = T - t and interpolated in x.
    """
    grid = grid or sol.grid
    x = grid.x.nodes
    table = np.empty_like(sol.values)
    for k in range(len(sol.taus)):
        p = central_gradient(sol.values[k], grid.x.h, extension)
        table[k] = effp.argmax(x, p)
    taus, T = sol.taus, grid.T

    def fn(t, xq):
        tau = T - float(t)
        k = int(np.clip(np.searchsorted(taus, tau - 1e-12), 0, len(taus) - 1))
        return np.interp(xq, x, table[k])

    pol = PolicyHandle("grid", fn, effp.control_set, "hjb")
    pol.table = table
    return pol
