import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from osbm.mathkit import (
    LAMBDA_SERIES_CUTOFF,
    SingularMatrix,
    digamma,
    kron,
    lambda_jj,
    log_gamma,
    log_logistic,
    logistic,
    psd_solve_and_logdet,
    unvec,
    vec,
)

finite = st.floats(min_value=-700, max_value=700, allow_nan=False)


def test_logistic_values():
    assert logistic(0.0) == 0.5
    assert logistic(np.log(3.0)) == pytest.approx(0.75, rel=1e-15)
    big = logistic(np.array([-1e4, 1e4]))
    assert big[0] == 0.0 and big[1] == 1.0


@given(finite)
def test_logistic_symmetry(x):
    assert logistic(-x) == pytest.approx(1.0 - logistic(x), abs=1e-15)


@given(finite)
def test_log_logistic_matches_direct_form(x):
    direct = -np.log1p(np.exp(-x)) if x > -30 else x - np.log1p(np.exp(x))
    assert log_logistic(x) == pytest.approx(direct, rel=1e-12, abs=1e-300)


def test_log_logistic_tails():
    assert log_logistic(-800.0) == pytest.approx(-800.0)
    assert log_logistic(800.0) == 0.0


def test_lambda_small_and_known():
    assert lambda_jj(1e-12) == pytest.approx(0.125, rel=1e-15)
    x = 2.0
    assert lambda_jj(x) == pytest.approx((1 / (1 + np.exp(-x)) - 0.5) / (2 * x), rel=1e-14)


def test_lambda_continuous_across_series_cutoff():
    lo = lambda_jj(LAMBDA_SERIES_CUTOFF * (1 - 1e-9))
    hi = lambda_jj(LAMBDA_SERIES_CUTOFF * (1 + 1e-9))
    assert lo == pytest.approx(hi, rel=1e-9)


def test_lambda_decreasing_and_rejects_nonpositive():
    xs = np.logspace(-6, 2, 200)
    assert np.all(np.diff(lambda_jj(xs)) < 0)
    with pytest.raises(ValueError):
        lambda_jj(0.0)
    with pytest.raises(ValueError):
        lambda_jj(np.array([1.0, -1.0]))


@settings(max_examples=200)
@given(st.floats(-20, 20), st.floats(1e-3, 20))
def test_logistic_bound_is_a_lower_bound(x, xi):
    bound = log_logistic(xi) + 0.5 * (x - xi) - lambda_jj(xi) * (x * x - xi * xi)
    assert log_logistic(x) >= bound - 1e-12


def test_logistic_bound_tight_at_plus_minus_xi():
    for xi in (0.01, 0.7, 5.0):
        for x in (xi, -xi):
            bound = log_logistic(xi) + 0.5 * (x - xi) - lambda_jj(xi) * (x * x - xi * xi)
            assert bound == pytest.approx(log_logistic(x), abs=1e-13)


def test_vec_is_column_major():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(vec(m), [1.0, 3.0, 2.0, 4.0])
    np.testing.assert_array_equal(unvec(vec(m)), m)
    with pytest.raises(ValueError):
        unvec(np.ones(5))


def test_kron_elementwise():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(2, 3)), rng.normal(size=(4, 2))
    k = kron(a, b)
    assert k.shape == (8, 6)
    for i in range(2):
        for j in range(3):
            for r in range(4):
                for s in range(2):
                    assert k[i * 4 + r, j * 2 + s] == a[i, j] * b[r, s]


def test_kron_identities():
    rng = np.random.default_rng(1)
    a, b, c, d = (rng.normal(size=(3, 3)) for _ in range(4))
    np.testing.assert_allclose(kron(a, b) @ kron(c, d), kron(a @ c, b @ d), atol=1e-12)
    x = rng.normal(size=(3, 3))
    np.testing.assert_allclose(kron(a, b) @ vec(x), vec(b @ x @ a.T), atol=1e-12)


def test_digamma_and_log_gamma():
    assert digamma(1.0) == pytest.approx(-np.euler_gamma, rel=1e-14)
    xs = np.array([0.3, 1.7, 12.0])
    np.testing.assert_allclose(digamma(xs + 1), digamma(xs) + 1 / xs, rtol=1e-13)
    assert log_gamma(5.0) == pytest.approx(np.log(24.0), rel=1e-15)
    assert log_gamma(0.5) == pytest.approx(0.5 * np.log(np.pi), rel=1e-14)
    for f in (digamma, log_gamma):
        with pytest.raises(ValueError):
            f(0.0)


def _gauss_solve(a, b):
    """Gaussian elimination with partial pivoting; returns (x, log|det|)."""
    a = a.astype(float).copy()
    b = b.astype(float).copy()
    n = a.shape[0]
    logdet = 0.0
    for c in range(n):
        p = c + int(np.argmax(np.abs(a[c:, c])))
        a[[c, p]], b[[c, p]] = a[[p, c]], b[[p, c]]
        logdet += np.log(abs(a[c, c]))
        for r in range(c + 1, n):
            f = a[r, c] / a[c, c]
            a[r, c:] -= f * a[c, c:]
            b[r] -= f * b[c]
    x = np.zeros_like(b)
    for r in range(n - 1, -1, -1):
        x[r] = (b[r] - a[r, r + 1:] @ x[r + 1:]) / a[r, r]
    return x, logdet


def test_psd_solve_against_elimination():
    rng = np.random.default_rng(2)
    g = rng.normal(size=(6, 6))
    m = g @ g.T + 0.5 * np.eye(6)
    rhs = rng.normal(size=(6, 2))
    x, logdet = psd_solve_and_logdet(m, rhs)
    x_ref, logdet_ref = _gauss_solve(m, rhs)
    np.testing.assert_allclose(x, x_ref, rtol=1e-10)
    assert logdet == pytest.approx(logdet_ref, rel=1e-12)
    xv, _ = psd_solve_and_logdet(m, rhs[:, 0])
    np.testing.assert_allclose(xv, x_ref[:, 0], rtol=1e-10)


def test_psd_solve_jitter_and_failure():
    v = np.array([[1.0], [1.0]])
    x, logdet = psd_solve_and_logdet(v @ v.T, np.ones(2))  # rank one, rescued by jitter
    assert np.all(np.isfinite(x)) and np.isfinite(logdet)
    with pytest.raises(SingularMatrix):
        psd_solve_and_logdet(-np.eye(3), np.ones(3))
