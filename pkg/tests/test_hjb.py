import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_spec
from mjc.effective import EffectiveProblem, closed_form_effective
from mjc.errors import ConfigurationError, InstabilityError, ParameterError, ResolutionError
from mjc.hjb import (Axis, Grid, GridFunction, HJBSolution, SchemeConfig, extract_policy, frac_laplacian_apply,
                     localized_operators, solve_effective_hjb, solve_two_scale_hjb, two_scale_cfl)
from mjc.model import ControlSet, builtin_benchmark
from mjc.sde import PolicyHandle
from mjc.stencil import Stencil1D, frac_constant
from mjc.value import estimate_cost

BOX = ControlSet.box(-1.0, 1.0)


def cos_grid(h):
    R = 16 * math.pi
    return Grid(Axis(0.0, R, 2 * int(round(R / h)) + 1))


def flat_problem(g, H=None, lam=1.0, T=1.0, cs=BOX):
    return EffectiveProblem(lambda x, v: 0 * x, lambda x, v: 0 * x, g, H or (lambda x, p: 0 * x), cs, 1.5, lam, T,
                            "closed-form")


# ---- stencil -----------------------------------------------------------------

def test_frac_constant_value():
    # c_alpha for alpha = 1.5 from the Gamma-function formula
    expect = 1.5 * 2**0.5 * math.gamma(1.25) / (math.sqrt(math.pi) * math.gamma(0.25))
    assert frac_constant(1.5) == pytest.approx(expect)


@settings(max_examples=30, deadline=None)
@given(st.floats(-100, 100), st.floats(0.01, 1.0), st.sampled_from(["constant", "linear"]))
def test_constants_are_annihilated(c0, h, ext):
    st_ = Stencil1D(h, 41, 1.5, ext)
    assert np.max(np.abs(st_.apply(np.full(41, c0)))) <= 1e-9 * max(1.0, abs(c0)) * st_.total_weight


def test_cosine_symbol_coarse():
    g = cos_grid(0.05)
    x = g.x.nodes
    out = frac_laplacian_apply(GridFunction(np.cos(x), g), 1.5).values
    m = np.abs(x) <= math.pi
    assert np.max(np.abs(out[m] + np.cos(x[m]))) <= 0.02


@pytest.mark.parametrize("k", [0.5, 1.0, 2.0])
def test_cosine_symbol_fine(k):
    g = cos_grid(0.025)
    x = g.x.nodes
    out = frac_laplacian_apply(GridFunction(np.cos(k * x), g), 1.5).values
    m = np.abs(x) <= math.pi
    exact = -abs(k) ** 1.5 * np.cos(k * x[m])
    assert np.max(np.abs(out[m] - exact)) <= 0.03 * abs(k) ** 1.5


def test_linear_function_has_zero_principal_value():
    g = Grid(Axis(0.0, 10.0, 201))
    x = g.x.nodes
    out = frac_laplacian_apply(GridFunction(x.copy(), g, "linear"), 1.5).values
    assert abs(out[100]) <= 1e-10


def test_matrix_matches_apply_and_is_monotone():
    st_ = Stencil1D(0.1, 61, 1.5, "constant")
    f = np.random.default_rng(0).standard_normal(61)
    A = st_.matrix()
    assert np.allclose(A @ f, st_.apply(f), atol=1e-10)
    off = A - np.diag(np.diag(A))
    assert np.all(off >= 0)
    assert np.allclose(A.sum(axis=1), 0.0, atol=1e-9)


def test_stencil_rejects_bad_input():
    with pytest.raises(ResolutionError):
        Stencil1D(0.1, 2, 1.5)
    with pytest.raises(ParameterError):
        Stencil1D(0.1, 11, 2.0)
    with pytest.raises(ParameterError):
        Stencil1D(0.1, 11, 1.5, "periodic")


def test_localized_split_adds_up():
    g = cos_grid(0.05)
    x = g.x.nodes
    f = GridFunction(np.cos(x) + 0.1 * np.sin(3 * x), g)
    near, far = localized_operators(f, 1.5, 1.0)
    full = frac_laplacian_apply(f, 1.5).values
    scale = np.abs(full).max()
    assert np.max(np.abs(near.values + far.values - full)) <= 1e-10 * scale
    fc = GridFunction(np.cos(x), g)
    near, far = localized_operators(fc, 1.5, 1.0, p=0.3)
    m = np.abs(x) <= math.pi
    assert np.max(np.abs(near.values[m] + far.values[m] + np.cos(x[m]))) <= 0.02


def test_localized_constant_and_guard():
    g = Grid(Axis(0.0, 5.0, 101))
    near, far = localized_operators(GridFunction(np.full(101, 3.0), g), 1.5, 0.5)
    assert np.max(np.abs(near.values)) <= 1e-10 and np.max(np.abs(far.values)) <= 1e-10
    with pytest.raises(ResolutionError):
        localized_operators(GridFunction(np.zeros(101), g), 1.5, 0.15)


# ---- effective solve ------------------------------------------------------------

def test_discount_only_decay():
    g = Grid(Axis(0.0, 4.0, 81), T=1.0)
    sol = solve_effective_hjb(flat_problem(lambda x: 0 * x + 2.0), g, taus=[0.5, 1.0])
    assert np.allclose(sol.values[-1], 2 * math.exp(-1), atol=1e-2)
    dt = sol.meta["dt_max"]
    assert np.max(np.abs(sol.values[-1] - 2 * math.exp(-1))) <= 2 * dt


def test_fractional_heat_eigenfunction():
    g = cos_grid(0.05)
    sol = solve_effective_hjb(flat_problem(np.cos, lam=1e-300), g, taus=[1.0])
    x = g.x.nodes
    m = np.abs(x) <= math.pi
    assert np.max(np.abs(sol.values[-1][m] - math.exp(-1) * np.cos(x[m]))) <= 0.03 * math.exp(-1)


def test_constant_running_cost_matches_cost_functional():
    L0 = 0.8
    g = Grid(Axis(0.0, 4.0, 81))
    sol = solve_effective_hjb(flat_problem(lambda x: 0 * x, H=lambda x, p: 0 * x - L0), g, taus=[1.0])
    exact = -L0 * (1 - math.exp(-1))
    assert np.max(np.abs(sol.values[-1] - exact)) <= 2 * sol.meta["dt_max"]
    spec = make_spec(L=lambda x, y, v: L0 + 0 * x)
    mc = estimate_cost(spec, 1.0, PolicyHandle.constant(0.0, BOX), 0.0, 0.0, 0.0, 4, 0.01, 0)
    assert mc.mean == pytest.approx(exact, abs=1e-4) and mc.stderr == pytest.approx(0.0, abs=1e-12)


def test_cfl_violation_reports_admissible_step(bm1):
    g = Grid(Axis(0.0, 4.0, 161))
    with pytest.raises(ConfigurationError, match="admissible dt"):
        solve_effective_hjb(closed_form_effective(bm1), g, SchemeConfig(dt=0.1))


def test_blow_up_is_detected():
    g = Grid(Axis(0.0, 4.0, 41))
    with pytest.raises(InstabilityError):
        solve_effective_hjb(flat_problem(lambda x: 1 + 0 * x, lam=-50.0), g, taus=[1.0])


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(0.0, 2.0), min_size=41, max_size=41), st.integers(0, 2**16))
def test_ordered_data_stay_ordered(bumps, seed):
    eff = closed_form_effective(builtin_benchmark("BM1"))
    g = Grid(Axis(0.0, 4.0, 41))
    base = np.random.default_rng(seed).uniform(-1, 1, 41)
    x = g.x.nodes
    g1 = lambda xx: np.interp(xx, x, base)
    g2 = lambda xx: np.interp(xx, x, base + np.asarray(bumps))
    u1 = solve_effective_hjb(eff, g, taus=[0.1, 0.5], terminal=g1).values
    u2 = solve_effective_hjb(eff, g, taus=[0.1, 0.5], terminal=g2).values
    assert np.all(u1 <= u2 + 1e-12)


def test_discount_contraction_of_sup_norm():
    g = Grid(Axis(0.0, 6.0, 121))
    sol = solve_effective_hjb(flat_problem(lambda x: np.sin(2 * x) + 0.5 * np.tanh(x), lam=0.7), g,
                              taus=np.linspace(0.1, 1.0, 10))
    sup0 = np.abs(np.sin(2 * g.x.nodes) + 0.5 * np.tanh(g.x.nodes)).max()
    for tau, u in zip(sol.taus, sol.values):
        assert np.abs(u).max() <= math.exp(-0.7 * tau) * sup0 + 1e-12


def test_refinement_self_consistency(bm1):
    eff = closed_form_effective(bm1)
    scheme = SchemeConfig()
    coarse = solve_effective_hjb(eff, Grid(Axis(0.0, 4.0, 101)), scheme, taus=[0.5, 1.0])
    fine = solve_effective_hjb(eff, Grid(Axis(0.0, 4.0, 201)), scheme, taus=[0.5, 1.0])
    roi = np.abs(coarse.grid.x.nodes) <= 1.0
    diff = np.abs(coarse.values[:, roi] - fine.values[:, ::2][:, roi]).max()
    assert diff < scheme.tol


def test_split_stencil_solve_is_identical(bm1):
    eff = closed_form_effective(bm1)
    g = Grid(Axis(0.0, 4.0, 81))
    full = solve_effective_hjb(eff, g, SchemeConfig(dt=1e-3), taus=[1.0]).values
    split = solve_effective_hjb(eff, g, SchemeConfig(dt=1e-3, split_delta=0.5), taus=[1.0]).values
    assert np.max(np.abs(full - split)) <= 1e-10


def test_region_of_interest_margin():
    Grid(Axis(0.0, 4.0, 81)).check_region(1.0)
    with pytest.raises(ConfigurationError):
        Grid(Axis(0.0, 3.0, 81)).check_region(1.0)


def test_axis_validation():
    with pytest.raises(ParameterError):
        Axis(0.0, 1.0, 10)
    assert Axis.span(-2, 2, 5).h == 1.0


# ---- two-scale solve ------------------------------------------------------------

def test_y_degenerate_problem_reduces_to_effective(lin0):
    spec = lin0.replace(drift_c=lambda x, y: 0.0 * x * y, hamiltonian=lin0.hamiltonian)
    g2 = Grid(Axis(0.0, 4.0, 41), Axis(0.0, 3.0, 21))
    dt = 0.9 * two_scale_cfl(spec, 0.5, g2)
    u2 = solve_two_scale_hjb(spec, 0.5, g2, SchemeConfig(dt=dt), taus=[0.5, 1.0]).values
    u1 = solve_effective_hjb(closed_form_effective(lin0), Grid(g2.x), SchemeConfig(dt=dt), taus=[0.5, 1.0]).values
    assert np.max(np.abs(u2 - u1[:, :, None])) <= 1e-8


def test_averaging_trend_at_origin(bm1):
    g2 = Grid(Axis(0.0, 4.0, 81), Axis(0.0, 6.0, 61))
    ubar = solve_effective_hjb(closed_form_effective(bm1), Grid(g2.x), taus=[1.0]).values[-1, 40]
    gap = {e: abs(solve_two_scale_hjb(bm1, e, g2, taus=[1.0]).values[-1, 40, 30] - ubar) for e in (1.0, 0.05)}
    assert gap[0.05] < gap[1.0]


def test_constant_terminal_without_running_cost(bm1):
    c0 = 1.7
    spec = bm1.replace(cost_L=lambda x, y, v: 0.0 * x * y * v, terminal_g=lambda x, y: c0 + 0 * x * y)
    g2 = Grid(Axis(0.0, 4.0, 41), Axis(0.0, 6.0, 31))
    for eps in (1.0, 0.2):
        u = solve_two_scale_hjb(spec, eps, g2, taus=[1.0]).values[-1]
        assert np.max(np.abs(u - c0 * math.exp(-1))) <= 1e-2


def test_two_scale_guards(bm1):
    with pytest.raises(ConfigurationError):
        solve_two_scale_hjb(bm1, 0.5, Grid(Axis(0, 4, 101), Axis(0, 6, 101)), SchemeConfig(node_budget=1000))
    with pytest.raises(ParameterError):
        solve_two_scale_hjb(bm1, 0.5, Grid(Axis(0, 4, 41)))


def test_two_scale_cfl_scales_with_epsilon(bm1):
    g2 = Grid(Axis(0.0, 4.0, 41), Axis(0.0, 6.0, 31))
    assert two_scale_cfl(bm1, 0.05, g2) < two_scale_cfl(bm1, 0.5, g2) < two_scale_cfl(bm1, 1.0, g2)


# ---- policies -------------------------------------------------------------------

def _linear_solution(slope):
    g = Grid(Axis(0.0, 4.0, 41))
    vals = np.stack([slope * g.x.nodes] * 3)
    return HJBSolution(np.array([0.0, 0.5, 1.0]), vals, g)


def test_extracted_policy_is_clamped_gradient(bm1):
    eff = closed_form_effective(bm1)
    x = np.linspace(-2, 2, 9)
    assert np.allclose(extract_policy(eff, _linear_solution(0.5))(0.3, x), 0.5)
    assert np.allclose(extract_policy(eff, _linear_solution(3.0))(0.3, x), 1.0)


def test_extracted_policy_generic_argmax(bm1):
    eff = closed_form_effective(bm1)
    generic = EffectiveProblem(eff.b_bar, eff.L_bar, eff.g_bar, eff.H_bar, BOX, 1.5, 1.0, 1.0, "closed-form")
    x = np.linspace(-2, 2, 9)
    assert np.allclose(extract_policy(generic, _linear_solution(0.5))(0.0, x), 0.5, atol=1e-6)


def test_singleton_policy():
    cs = ControlSet.singleton(0.25)
    eff = EffectiveProblem(lambda x, v: -x + v, lambda x, v: v * v + 0 * x, np.tanh, lambda x, p: 0 * x, cs, 1.5,
                           1.0, 1.0, "closed-form")
    pol = extract_policy(eff, _linear_solution(2.0))
    assert np.all(pol(0.0, np.linspace(-3, 3, 5)) == 0.25)
