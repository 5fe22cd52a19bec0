"""Control-problem data, built-in benchmarks and a sampled assumption audit.

All coefficient callables must be numpy-vectorized: they receive arrays
(or scalars) that broadcast against each other and return arrays of the
broadcast shape. States and controls are scalar (n = m = r = 1).
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ModelEvaluationError, ParameterError, UsageError
from .stable import check_alpha


@dataclass(frozen=True)
class ControlSet:
    """Admissible control values: a closed interval, a finite set or one point."""

    kind: str
    lower: float = 0.0
    upper: float = 0.0
    points: tuple = ()

    def __post_init__(self):
        if self.kind == "box":
            if not (np.isfinite(self.lower) and np.isfinite(self.upper)) or self.lower > self.upper:
                raise ParameterError(f"box bounds must satisfy lower <= upper, got [{self.lower}, {self.upper}]")
        elif self.kind in ("finite", "singleton"):
            if len(self.points) == 0:
                raise ParameterError("control set must be nonempty")
            if self.kind == "singleton" and len(self.points) != 1:
                raise ParameterError("singleton control set holds exactly one point")
        else:
            raise ParameterError(f"unknown control set kind {self.kind!r}")

    @classmethod
    def box(cls, lower, upper):
        return cls("box", float(lower), float(upper))

    @classmethod
    def finite(cls, points):
        pts = tuple(sorted(float(p) for p in points))
        if not pts:
            raise ParameterError("control set must be nonempty")
        return cls("finite", pts[0], pts[-1], pts)

    @classmethod
    def singleton(cls, v):
        return cls("singleton", float(v), float(v), (float(v),))

    def clamp(self, v):
        """Project v onto the set (nearest admissible value, ties to the smaller)."""
        v = np.asarray(v, dtype=float)
        if self.kind == "box":
            return np.clip(v, self.lower, self.upper)
        pts = np.asarray(self.points)
        idx = np.argmin(np.abs(v[..., None] - pts), axis=-1)
        return pts[idx]

    def sample_points(self, k=41):
        """A representative set of controls (grid for boxes, all points otherwise)."""
        if self.kind == "box":
            if self.lower == self.upper:
                return np.array([self.lower])
            return np.linspace(self.lower, self.upper, k)
        return np.asarray(self.points, dtype=float)

    def sample_uniform(self, rng, size):
        if self.kind == "box":
            return rng.uniform(self.lower, self.upper, size)
        return rng.choice(np.asarray(self.points), size=size)


@dataclass(frozen=True)
class ProblemSpec:
    """Slow-fast controlled jump-diffusion with running and terminal costs.

    ``hamiltonian`` is an optional closed form ``(x, y, p) -> (value, argmax)``;
    when absent the supremum over the control set is computed numerically.
    """

    drift_b: Callable
    drift_c: Callable
    cost_L: Callable
    terminal_g: Callable
    control_set: ControlSet
    alpha1: float = 1.5
    alpha2: float = 1.5
    lam: float = 1.0
    T: float = 1.0
    n: int = 1
    m: int = 1
    name: str = "custom"
    hamiltonian: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        check_alpha(self.alpha1)
        check_alpha(self.alpha2)
        if not self.lam > 0:
            raise ParameterError(f"discount rate must be positive, got {self.lam}")
        if not self.T > 0:
            raise ParameterError(f"horizon must be positive, got {self.T}")
        if self.n != 1 or self.m != 1:
            raise ParameterError("only scalar slow and fast states (n = m = 1) are supported")

    def replace(self, **changes) -> "ProblemSpec":
        """Copy with changed fields; a closed-form Hamiltonian is dropped if b, L or U change."""
        if "hamiltonian" not in changes and {"drift_b", "cost_L", "control_set"} & set(changes):
            changes["hamiltonian"] = None
        return dataclasses.replace(self, **changes)

    def with_controls(self, control_set: ControlSet) -> "ProblemSpec":
        """Same model on another control set; any closed-form Hamiltonian is dropped."""
        return dataclasses.replace(self, control_set=control_set, hamiltonian=None)


@dataclass
class AssumptionReport:
    beta_hat: float
    lip_b: float
    lip_c: float
    lip_L: float
    lip_g: float
    grad_y_L: float
    growth: dict
    verdicts: dict
    witnesses: dict
    radius: float
    sample_count: int
    seed: int

    @property
    def passed(self):
        return all(v.startswith("pass") for v in self.verdicts.values())

    def to_dict(self):
        return dataclasses.asdict(self)


def _phi(p):
    """sup over |v| <= 1 of v p - v**2 / 2."""
    p = np.asarray(p, dtype=float)
    a = np.abs(p)
    return np.where(a <= 1.0, 0.5 * p * p, a - 0.5)


def _bm1():
    def b(x, y, v):
        return -x + np.sin(y) + v

    def c(x, y):
        return -y + 0.5 * np.sin(x)

    def L(x, y, v):
        return np.sqrt(1.0 + x * x) + 0.25 * np.cos(y) + 0.5 * v * v

    def g(x, y):
        return np.tanh(x) + 0.25 * np.cos(y) + 0.0 * x

    def H(x, y, p):
        x, y, p = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, y, p)))
        val = (-x + np.sin(y)) * p + _phi(p) - np.sqrt(1.0 + x * x) - 0.25 * np.cos(y)
        return val, np.clip(p, -1.0, 1.0)

    return ProblemSpec(b, c, L, g, ControlSet.box(-1.0, 1.0), 1.5, 1.5, 1.0, 1.0, name="BM1", hamiltonian=H)


def _lin0():
    def b(x, y, v):
        return -x + v + 0.0 * y

    def c(x, y):
        return -y + 0.5 * np.sin(x)

    def L(x, y, v):
        return np.sqrt(1.0 + x * x) + 0.5 * v * v + 0.0 * y

    def g(x, y):
        return np.tanh(x) + 0.0 * y

    def H(x, y, p):
        x, y, p = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, y, p)))
        return -x * p + _phi(p) - np.sqrt(1.0 + x * x), np.clip(p, -1.0, 1.0)

    return ProblemSpec(b, c, L, g, ControlSet.box(-1.0, 1.0), 1.5, 1.5, 1.0, 1.0, name="LIN0", hamiltonian=H)


BENCHMARKS = {"BM1": _bm1, "LIN0": _lin0}


def builtin_benchmark(name: str) -> ProblemSpec:
    try:
        return BENCHMARKS[name]()
    except KeyError:
        raise UsageError(f"unknown benchmark {name!r}; available: {', '.join(sorted(BENCHMARKS))}") from None


def _eval(fn, label, *args):
    out = np.asarray(fn(*args), dtype=float)
    out = np.broadcast_to(out, np.broadcast(*args).shape)
    bad = ~np.isfinite(out)
    if bad.any():
        i = int(np.flatnonzero(bad.ravel())[0])
        point = tuple(float(np.broadcast_to(a, out.shape).ravel()[i]) for a in args)
        raise ModelEvaluationError(f"{label} is not finite at {point}", point)
    return out


def _ball(rng, k, radius):
    r = radius * np.sqrt(rng.uniform(0.0, 1.0, k))
    th = rng.uniform(0.0, 2 * np.pi, k)
    return r * np.cos(th), r * np.sin(th)


def _worst(q, *cols):
    i = int(np.argmax(q))
    return float(q[i]), [float(c[i]) for c in cols]


def _growth(values, base, inner):
    """Linear-growth constant on the ball and on the inner half-ball."""
    k_full = float(np.max(np.abs(values) / (1.0 + np.abs(base))))
    k_half = float(np.max(np.abs(values[inner]) / (1.0 + np.abs(base[inner])))) if inner.any() else k_full
    return {"K": k_full, "K_half": k_half, "linear": bool(k_full <= 1.5 * k_half + 1e-12)}


def validate_assumptions(spec: ProblemSpec, sample_count: int = 4000, radius: float = 5.0,
                         rng_seed: int = 0) -> AssumptionReport:
    """Statistical audit of dissipativity, Lipschitz and growth conditions.

    Points are drawn uniformly from the (x, y) disk of the given radius;
    constants are worst-case difference quotients over random pairs.
    Verdicts read "pass (sampled)" or "fail", never a proof.
    """
    if sample_count < 1000:
        raise ParameterError("sample_count must be at least 1000")
    if not radius > 0:
        raise ParameterError("radius must be positive")
    rng = np.random.default_rng(rng_seed)
    x1, y1 = _ball(rng, sample_count, radius)
    x2, y2 = _ball(rng, sample_count, radius)
    v = spec.control_set.sample_uniform(rng, sample_count)
    v2 = spec.control_set.sample_uniform(rng, sample_count)
    tiny = 1e-300

    # dissipativity of c in y at frozen x
    dy = y1 - y2
    dc = _eval(spec.drift_c, "c", x1, y1) - _eval(spec.drift_c, "c", x1, y2)
    ok = np.abs(dy) > 1e-8
    q = (dc * dy)[ok] / (dy[ok] ** 2)
    worst_q, w_c = _worst(q, x1[ok], y1[ok], y2[ok])
    beta_hat = -worst_q

    dist = np.abs(x1 - x2) + np.abs(y1 - y2) + tiny
    c1 = _eval(spec.drift_c, "c", x1, y1)
    c2 = _eval(spec.drift_c, "c", x2, y2)
    lip_c, w_lc = _worst(np.abs(c1 - c2) / dist, x1, y1, x2, y2)

    b1 = _eval(spec.drift_b, "b", x1, y1, v)
    b2 = _eval(spec.drift_b, "b", x2, y2, v)
    lip_b, w_lb = _worst(np.abs(b1 - b2) / dist, x1, y1, x2, y2, v)

    L1 = _eval(spec.cost_L, "L", x1, y1, v)
    L2x = _eval(spec.cost_L, "L", x2, y1, v)
    L2y = _eval(spec.cost_L, "L", x1, y2, v)
    lip_L, w_lL = _worst(np.abs(L1 - L2x) / (np.abs(x1 - x2) + tiny), x1, x2, y1, v)
    grad_y_L, w_gL = _worst(np.abs(L1 - L2y) / (np.abs(y1 - y2) + tiny), x1, y1, y2, v)
    # uniform continuity in v is audited as a Lipschitz quotient
    L1v = _eval(spec.cost_L, "L", x1, y1, v2)
    lip_L_v = float(np.max(np.abs(L1 - L1v) / (np.abs(v - v2) + tiny))) if spec.control_set.kind != "singleton" else 0.0

    g1 = _eval(spec.terminal_g, "g", x1, y1)
    g2 = _eval(spec.terminal_g, "g", x2, y2)
    lip_g, w_lg = _worst(np.abs(g1 - g2) / dist, x1, y1, x2, y2)

    inner = np.hypot(x1, y1) <= radius / 2
    growth = {
        "b": _growth(b1, x1, inner),
        "c": _growth(c1, y1, inner),
        "L": _growth(L1, x1, inner),
        "g": _growth(g1, x1, inner),
        "L_v_lipschitz": lip_L_v,
    }

    def verdict(cond):
        return "pass (sampled)" if cond else "fail"

    finite = lambda *a: all(np.isfinite(a))
    verdicts = {
        "A_c": verdict(beta_hat > 0 and finite(lip_c) and growth["c"]["linear"]),
        "A_b": verdict(finite(lip_b) and growth["b"]["linear"]),
        "A_L": verdict(finite(lip_L, grad_y_L, lip_L_v) and growth["L"]["linear"]),
        "A_g": verdict(finite(lip_g) and growth["g"]["linear"]),
    }
    witnesses = {
        "beta": {"x": w_c[0], "y1": w_c[1], "y2": w_c[2]},
        "lip_c": dict(zip(("x1", "y1", "x2", "y2"), w_lc)),
        "lip_b": dict(zip(("x1", "y1", "x2", "y2", "v"), w_lb)),
        "lip_L": dict(zip(("x1", "x2", "y", "v"), w_lL)),
        "grad_y_L": dict(zip(("x", "y1", "y2", "v"), w_gL)),
        "lip_g": dict(zip(("x1", "y1", "x2", "y2"), w_lg)),
    }
    return AssumptionReport(beta_hat, lip_b, lip_c, lip_L, lip_g, grad_y_L, growth, verdicts,
                            witnesses, float(radius), int(sample_count), int(rng_seed))
