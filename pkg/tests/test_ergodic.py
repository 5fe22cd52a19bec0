import numpy as np
import pytest

from conftest import K, make_spec
from mjc.errors import ModelEvaluationError, ParameterError, ResolutionError
from mjc.ergodic import (EmpiricalMeasure, batch_means_stderr, ergodicity_decay, estimate_invariant_measure,
                         integrate, lyapunov_check, lyapunov_w, path_average_error)
from mjc.sde import simulate_frozen


def measure(spec, x=0.0, n=20_000, seed=0, thinning=1.0, **kw):
    return estimate_invariant_measure(spec, x, 5.0, n, thinning, 0.01, seed, 1.0, **kw)


def test_stationary_cosine_moment():
    mu = measure(make_spec(), n=40_000)
    val, se = integrate(mu, np.cos)
    assert abs(val - K) <= 4 * se


@pytest.mark.parametrize("x", [-1.0, 0.8])
def test_bm1_location_and_integrals(bm1, x):
    mu = measure(bm1, x, seed=3)
    m, se = integrate(mu, lambda y: y)
    assert abs(m - 0.5 * np.sin(x)) <= 4 * se
    s, se = integrate(mu, np.sin)
    assert abs(s - K * np.sin(0.5 * np.sin(x))) <= 4 * se


def test_bm1_cos_at_origin(bm1):
    val, se = integrate(measure(bm1, 0.0, seed=4), np.cos)
    assert abs(val - 0.5134) <= 4 * se + 1e-4


def test_symmetric_median():
    mu = measure(make_spec(), n=20_000, seed=5, thinning=3.0)
    s = mu.samples
    q1, q3 = np.percentile(s, [25, 75])
    robust_se = 1.2533 * (q3 - q1) / 1.349 / np.sqrt(s.size)
    assert abs(np.median(s)) <= 4 * robust_se


def test_integrate_constant_and_errors():
    mu = measure(make_spec(), n=2000)
    assert integrate(mu, lambda y: np.ones_like(y)) == (1.0, 0.0)
    assert integrate(mu, lambda y: 1.0) == (1.0, 0.0)
    with np.errstate(divide="ignore"), pytest.raises(ModelEvaluationError):
        integrate(mu, lambda y: 1.0 / (y - y))


def test_measure_metadata_and_weights():
    mu = measure(make_spec(), n=3000, seed=1)
    assert mu.n == 3000 and mu.weights.sum() == pytest.approx(1.0)
    assert np.isfinite(mu.samples).all()
    assert {"burn_in", "thinning", "n", "n_chains"} <= set(mu.meta)


def test_preconditions_tied_to_dissipativity():
    spec = make_spec()
    with pytest.raises(ParameterError):
        estimate_invariant_measure(spec, 0.0, 4.0, 100, 1.0, 0.01, 0, 1.0)
    with pytest.raises(ParameterError):
        estimate_invariant_measure(spec, 0.0, 5.0, 100, 0.5, 0.01, 0, 1.0)
    with pytest.raises(ParameterError, match="validate_assumptions"):
        estimate_invariant_measure(spec, 0.0, 5.0, 100, 1.0, 0.01, 0, None)


def test_measure_is_reproducible():
    a = measure(make_spec(), n=2000, seed=9)
    b = measure(make_spec(), n=2000, seed=9)
    assert np.array_equal(a.samples, b.samples)


def test_long_chain_matches_ensemble():
    spec = make_spec()
    chain = estimate_invariant_measure(spec, 0.0, 5.0, 5000, 1.0, 0.05, 1, 1.0, n_chains=1)
    v1, s1 = integrate(chain, np.cos)
    ens = simulate_frozen(spec, 0.0, 0.0, 10.0, 0.05, 2, n_paths=20_000, record_every=1000).final
    v2, s2 = np.cos(ens).mean(), np.cos(ens).std(ddof=1) / np.sqrt(ens.size)
    assert abs(v1 - v2) <= 5 * np.hypot(s1, s2)


def test_shift_equivariance():
    delta = 0.7
    base = measure(make_spec(), n=20_000, seed=6)
    moved = measure(make_spec(c=lambda x, y: -np.asarray(y) + delta + 0 * x), n=20_000, seed=6)
    m0, se0 = integrate(base, lambda y: y)
    m1, se1 = integrate(moved, lambda y: y)
    assert abs((m1 - m0) - delta) <= 4 * np.hypot(se0, se1)

    def iqr_stats(mu):
        parts = np.array_split(mu.samples, 20)
        iqrs = [np.subtract(*np.percentile(p, [75, 25])) for p in parts]
        return np.subtract(*np.percentile(mu.samples, [75, 25])), np.std(iqrs, ddof=1) / np.sqrt(20)

    (i0, e0), (i1, e1) = iqr_stats(base), iqr_stats(moved)
    assert abs(i1 - i0) <= 4 * np.hypot(e0, e1)


def test_decay_constant_test_function(bm1):
    res = ergodicity_decay(bm1, 0.0, lambda y: 2.0 + 0 * y, 3.0, [0.5, 1.0], 200, 0.01, 0, 1.0,
                           measure=measure(bm1, n=1000))
    assert np.all(res.errors == 0.0)
    assert res.rate == "unresolved"


def test_decay_rate_from_displaced_start(bm1):
    res = ergodicity_decay(bm1, 0.0, np.sin, 3.0, np.linspace(0.5, 4.0, 8), 5000, 0.01, 7, 1.0,
                           measure=measure(bm1, n=40_000, seed=7))
    assert isinstance(res.rate, float) and res.rate >= 0.5


def test_decay_from_stationary_start_is_noise(bm1):
    mu = measure(bm1, n=20_000, seed=8)
    start = mu.samples[:5000]
    other = measure(bm1, n=40_000, seed=10)
    res = ergodicity_decay(bm1, 0.0, np.sin, start, [0.5, 1.0, 2.0], 5000, 0.01, 11, 1.0, measure=other)
    assert np.all(res.errors <= 5 * res.stderr)


def test_lyapunov_gradient_bound():
    y = np.linspace(-50, 50, 1001)
    grad = np.gradient(lyapunov_w(y), y)
    assert np.all(np.abs(grad) < 1.0)


def test_lyapunov_positive_for_bm1(bm1):
    res = lyapunov_check(bm1, 0.0, [5.0])
    assert res.all_positive and res.R0 == 5.0
    assert res.refinement_change <= 0.01


def test_lyapunov_fails_without_drift():
    res = lyapunov_check(make_spec(c=lambda x, y: 0 * np.asarray(y)), 0.0, [5.0, 10.0])
    assert all(v < 0 for _, v in res.rows)
    assert res.R0 is None


def test_lyapunov_resolution_guard(bm1):
    with pytest.raises(ResolutionError):
        lyapunov_check(bm1, 0.0, [5.0], h=2.5, rel_tol=1e-6)
    with pytest.raises(ParameterError):
        lyapunov_check(bm1, 0.0, [0.0])


def test_path_average_y_independent_integrand(bm1):
    val, se = path_average_error(bm1, 0.1, lambda x, y: np.cos(x) + 0 * y, 0.3, 0.0, (0.2, 1.0), 50, 0.01, 0,
                                 fbar=np.cos(0.3))
    assert val == pytest.approx(0.0, abs=1e-12)


def test_path_average_decays_with_epsilon(bm1):
    mu = measure(bm1, n=20_000, seed=12)
    f = lambda x, y: np.sin(y)
    errs = {e: path_average_error(bm1, e, f, 0.0, 0.0, (0.2, 1.0), 2000, e / 10, 13, measure=mu)[0]
            for e in (1.0, 0.2, 0.05, 0.02)}
    assert errs[0.05] <= 0.6 * errs[0.2]
    assert errs[0.02] < errs[1.0]


def test_batch_means_on_iid_data():
    x = np.random.default_rng(0).standard_normal(100_000)
    assert batch_means_stderr(x) == pytest.approx(1 / np.sqrt(x.size), rel=0.4)
