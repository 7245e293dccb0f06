import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.polynomial import polynomial as P
from scipy import integrate, special, stats

from oracles import wilson_direct
from shuttlelab.numerics import (ConfidenceInterval, IntegrationError, assoc_laguerre,
                                 binomial_ci, erf, integrate_ode, laguerre_sequence, lm_fit,
                                 make_rng, spawn_seeds, wilson_bounds)


# --- erf -------------------------------------------------------------------

def test_erf_zero_and_symmetry():
    assert erf(0.0) == 0.0
    assert erf(0.7) == pytest.approx(-erf(-0.7), abs=1e-15)


def test_erf_one_matches_quadrature_of_its_integrand():
    value, _ = integrate.quad(lambda y: np.exp(-y * y), 0.0, 1.0, epsabs=1e-15)
    assert erf(1.0) == pytest.approx(2.0 / np.sqrt(np.pi) * value, abs=1e-12)
    assert erf(1.0) == pytest.approx(0.8427007929497149, abs=1e-12)


def test_erf_odd_on_random_points():
    x = np.random.default_rng(0).uniform(-5, 5, 1000)
    assert np.max(np.abs(erf(x) + erf(-x))) < 1e-14


@given(st.floats(-8, 8), st.floats(0, 3))
def test_erf_monotone_and_bounded(x, step):
    assert abs(erf(x)) <= 1.0
    assert erf(x + step) >= erf(x)


# --- Laguerre --------------------------------------------------------------

def test_laguerre_low_orders():
    assert assoc_laguerre(0, 1, 3.3) == 1.0
    for x in (-1.0, 0.0, 0.4, 2.5):
        assert assoc_laguerre(1, 1, x) == pytest.approx(2.0 - x)
    assert assoc_laguerre(2, 1, 2.0) == pytest.approx(-1.0)


def _laguerre_coefficients(n, k):
    j = np.arange(n + 1)
    return (-1.0) ** j * special.binom(n + k, n - j) / special.factorial(j)


def test_laguerre_matches_explicit_coefficients():
    rng = np.random.default_rng(1)
    for n in range(11):
        for k in (0, 1, 2):
            x = rng.uniform(-3, 6, 7)
            expected = P.polyval(x, _laguerre_coefficients(n, k))
            got = assoc_laguerre(n, k, x)
            assert np.allclose(got, expected, rtol=1e-9, atol=1e-12)


def test_laguerre_sequence_agrees_with_single_order():
    seq = laguerre_sequence(30, 1.0, 0.37)
    for n in (0, 1, 7, 30):
        assert seq[n] == pytest.approx(assoc_laguerre(n, 1, 0.37), rel=1e-12)


def test_laguerre_rejects_negative_order():
    with pytest.raises(ValueError):
        assoc_laguerre(-1, 1, 0.0)


# --- Levenberg-Marquardt ---------------------------------------------------

def _line(x, p):
    return p[0] * x + p[1]


def test_lm_noiseless_line():
    x = np.linspace(-2, 3, 20)
    res = lm_fit(_line, [0.0, 0.0], x, 2 * x + 1)
    assert res.converged
    assert np.allclose(res.parameters, [2.0, 1.0], atol=1e-9)


def test_lm_deterministic():
    x = np.linspace(0, 1, 30)
    y = np.exp(-3 * x) + 0.01 * np.random.default_rng(2).normal(size=x.size)

    def model(x, p):
        return p[0] * np.exp(-p[1] * x)

    a = lm_fit(model, [1.0, 1.0], x, y, np.full(x.size, 0.01))
    b = lm_fit(model, [1.0, 1.0], x, y, np.full(x.size, 0.01))
    assert np.array_equal(a.parameters, b.parameters)
    assert np.array_equal(a.covariance, b.covariance)


def test_lm_fixed_parameter_matches_grid_oracle():
    rng = np.random.default_rng(3)
    x = np.linspace(-3, 3, 61)
    sigma = np.full(x.size, 0.02)
    y = 1.3 * np.exp(-0.5 * ((x - 0.4) / 0.8) ** 2) + rng.normal(0, 0.02, x.size)

    def gauss(x, p):
        return p[0] * np.exp(-0.5 * ((x - p[1]) / p[2]) ** 2)

    # width pinned at 0.9 through equal bounds
    res = lm_fit(gauss, [1.0, 0.0, 0.9], x, y, sigma,
                 bounds=([-np.inf, -np.inf, 0.9], [np.inf, np.inf, 0.9]))
    assert res.parameters[2] == 0.9
    assert res.covariance[2, 2] == 0.0
    amps = np.linspace(1.0, 1.6, 301)
    centres = np.linspace(0.2, 0.6, 201)
    best = np.inf
    for a in amps:
        r = (gauss(x[None, :], [a, centres[:, None], 0.9]) - y) / sigma
        best = min(best, np.min(np.sum(r * r, axis=1)))
    assert res.chi2 <= best + 1e-9
    assert res.chi2 == pytest.approx(best, rel=1e-3)


def test_lm_covariance_symmetric_psd_and_rank_deficiency_reported():
    x = np.linspace(0, 1, 10)

    def degenerate(x, p):
        return (p[0] + p[1]) * x

    res = lm_fit(degenerate, [0.5, 0.5], x, 3 * x)
    assert res.rank_deficient
    assert "rank deficient" in res.message
    cov = res.covariance
    assert np.allclose(cov, cov.T)
    assert np.min(np.linalg.eigvalsh(cov)) > -1e-12


def test_lm_iteration_cap_flags_instead_of_raising():
    x = np.linspace(0, 5, 40)
    y = np.sin(3 * x)

    def model(x, p):
        return np.sin(p[0] * x)

    res = lm_fit(model, [0.5], x, y, max_iter=1)
    assert not res.converged


def test_lm_input_checks():
    x = np.linspace(0, 1, 5)
    with pytest.raises(ValueError):
        lm_fit(_line, [0, 0], x, x, sigma=np.zeros(5))
    with pytest.raises(ValueError):
        lm_fit(_line, [0, 0], x[:1], x[:1])


def test_lm_erf_trajectory_within_three_sigma():
    from shuttlelab.probe import erf_position

    rng = np.random.default_rng(4)
    truth = np.array([-60.0, 251.0, 0.27, 1.0, 0.0])
    t = np.linspace(-0.2, 2.4, 120)
    sigma = np.full(t.size, 1.5)
    y = erf_position(t, *truth) + rng.normal(0, 1.5, t.size)

    def model(x, p):
        return erf_position(x, *p)

    res = lm_fit(model, [-58, 200, 0.3, 0.9, 0.0], t, y, sigma,
                 bounds=([-np.inf, 0, 1e-6, -np.inf, 0.0], [np.inf, np.inf, np.inf, np.inf, 0.0]))
    pulls = (res.parameters[:4] - truth[:4]) / res.errors[:4]
    assert np.all(np.abs(pulls) < 3)


# --- Wilson interval --------------------------------------------------------

def test_wilson_zero_successes():
    ci = binomial_ci(0, 400, 0.68)
    assert ci.low == 0.0 and ci.high > 0.0


def test_wilson_symmetric_at_half():
    ci = binomial_ci(200, 400, 0.68)
    assert 0.5 - ci.low == pytest.approx(ci.high - 0.5, abs=1e-15)


def test_wilson_matches_direct_formula():
    ci = binomial_ci(50, 100, 0.68)
    lo, hi = wilson_direct(50, 100, stats.norm.ppf(0.84))
    assert (ci.low, ci.high) == pytest.approx((lo, hi), abs=1e-15)


def test_wilson_width_scales_inverse_sqrt():
    w1 = binomial_ci(30, 100).half_width
    w2 = binomial_ci(3000, 10000).half_width
    assert w1 / w2 == pytest.approx(10.0, rel=0.05)


def test_wilson_errors_and_vector_form():
    with pytest.raises(ValueError):
        binomial_ci(0, 0)
    with pytest.raises(ValueError):
        binomial_ci(5, 3)
    lo, hi = wilson_bounds([0, 5, 10], [10, 10, 10])
    assert np.all(lo <= hi)
    assert lo[0] == 0.0 and hi[2] == 1.0


@given(st.integers(1, 2000), st.data(), st.floats(0.05, 0.99))
def test_wilson_contains_estimate(n, data, level):
    k = data.draw(st.integers(0, n))
    ci = binomial_ci(k, n, level)
    assert 0.0 <= ci.low <= k / n <= ci.high <= 1.0


def test_confidence_interval_validation():
    with pytest.raises(ValueError):
        ConfidenceInterval(0.6, 0.4, 0.68, 0.5)
    with pytest.raises(ValueError):
        ConfidenceInterval(0.1, 0.4, 1.2, 0.2)


# --- RK4 ----------------------------------------------------------------------

def test_rk4_constant():
    t, y = integrate_ode(lambda t, y: np.zeros_like(y), [3.0], (0.0, 1.0), 0.1)
    assert np.all(y == 3.0)


def test_rk4_harmonic_period():
    w = 2 * np.pi

    def rhs(t, y):
        return np.array([y[1], -w * w * y[0]])

    _, y = integrate_ode(rhs, [1.0, 0.0], (0.0, 1.0), 1e-3)
    assert np.allclose(y[-1], [1.0, 0.0], rtol=1e-8, atol=1e-8)


def test_rk4_exponential_and_fourth_order():
    _, y = integrate_ode(lambda t, y: y, [1.0], (0.0, 1.0), 1e-3)
    assert y[-1, 0] == pytest.approx(np.e, abs=1e-9)
    e1 = abs(integrate_ode(lambda t, y: y, [1.0], (0, 1), 0.1)[1][-1, 0] - np.e)
    e2 = abs(integrate_ode(lambda t, y: y, [1.0], (0, 1), 0.05)[1][-1, 0] - np.e)
    assert e1 / e2 == pytest.approx(16.0, rel=0.1)


def test_rk4_aborts_on_non_finite_state():
    with pytest.raises(IntegrationError) as info, np.errstate(over="ignore", invalid="ignore"):
        integrate_ode(lambda t, y: y * y, [1.0], (0.0, 2.0), 1e-3)
    assert 0.9 < info.value.time < 1.1


# --- RNG ------------------------------------------------------------------------

def test_rng_reproducible_and_spawned_streams_differ():
    assert make_rng(7).random() == make_rng(7).random()
    a, b = spawn_seeds(7, 2)
    assert make_rng(a).random() != make_rng(b).random()
