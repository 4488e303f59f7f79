import numpy as np
import pytest

from osbm import _backend
from osbm.model import Hyperpriors, OsbmParameters, augment, sample_network
from osbm.vbem import (
    TAU_MIN,
    FitOptions,
    NonFinite,
    VariationalState,
    data_vector,
    e_step_tau,
    e_tilde,
    e_tildes,
    fit,
    il_osbm,
    lower_bound,
    m_step_alpha,
    m_step_beta,
    m_step_w,
    pair_second_moments,
    permute_state,
    precision_matrix,
    refresh_m_step,
    sigma_blocks,
    xi_step,
)
from osbm.mathkit import lambda_jj


def random_graph(rng, n, p=0.3):
    x = (rng.random((n, n)) < p).astype(float)
    np.fill_diagonal(x, 0.0)
    return x


def random_state(rng, n, q):
    k2 = (q + 1) ** 2
    tau = rng.uniform(0.05, 0.95, size=(n, q))
    pri = Hyperpriors.default(q)
    eta, zeta = m_step_alpha(tau, pri)
    g = rng.normal(size=(k2, k2))
    sigma = g @ g.T / k2 + 0.2 * np.eye(k2)
    xi = rng.uniform(0.2, 3.0, size=(n, n))
    np.fill_diagonal(xi, 0.0)
    state = VariationalState(tau=tau, eta_n=eta, zeta_n=zeta, w_n_vec=rng.normal(size=k2),
                             sigma_n=sigma, a_n=1.0 + k2 / 2, b_n=rng.uniform(1, 5), xi=xi)
    return state, pri


def test_e_tilde():
    e = e_tilde([0.2, 0.7])
    expected = np.array([[0.2, 0.14, 0.2], [0.14, 0.7, 0.7], [0.2, 0.7, 1.0]])
    np.testing.assert_allclose(e, expected)
    stack = e_tildes(np.array([[0.2, 0.7], [1.0, 0.0]]))
    np.testing.assert_allclose(stack[0], expected)


def test_m_step_alpha():
    tau = np.array([[0.9, 0.1], [0.8, 0.3], [0.1, 0.1]])
    eta, zeta = m_step_alpha(tau, Hyperpriors.default(2))
    np.testing.assert_allclose(eta, [0.5 + 1.8, 0.5 + 0.5])
    np.testing.assert_allclose(zeta, [0.5 + 1.2, 0.5 + 2.5])


def test_m_step_w_matches_dense_assembly():
    rng = np.random.default_rng(0)
    n, q = 7, 2
    state, _ = random_state(rng, n, q)
    x = random_graph(rng, n)
    w0 = rng.normal(size=(q + 1) ** 2)
    etil = e_tildes(state.tau)
    tt = augment(state.tau)
    k2 = (q + 1) ** 2
    prec = (state.a_n / state.b_n) * np.eye(k2)
    b = np.zeros(k2)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            lam = lambda_jj(state.xi[i, j])
            prec += 2 * lam * np.kron(etil[j], etil[i])
            b += (x[i, j] - 0.5) * np.kron(tt[j], tt[i])
    np.testing.assert_allclose(precision_matrix(etil, state.xi, state.a_n, state.b_n), prec,
                               rtol=1e-12)
    np.testing.assert_allclose(data_vector(x, state.tau), b, rtol=1e-12, atol=1e-12)
    sigma_ref = np.linalg.inv(prec)
    w_ref = sigma_ref @ (b + (state.a_n / state.b_n) * w0)
    w, sigma = m_step_w(x, state.tau, etil, state.xi, state.a_n, state.b_n, w0)
    np.testing.assert_allclose(sigma, sigma_ref, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(w, w_ref, rtol=1e-9, atol=1e-12)


def test_vec_kron_order_gives_bilinear_form():
    # tilde z_i^T W~ tilde z_j == (tilde z_j kron tilde z_i) . vec W~
    rng = np.random.default_rng(1)
    wt = rng.normal(size=(3, 3))
    zi, zj = augment(np.array([1.0, 0.0])), augment(np.array([1.0, 1.0]))
    assert zi @ wt @ zj == pytest.approx(np.kron(zj, zi) @ wt.reshape(-1, order="F"))


def test_m_step_beta():
    rng = np.random.default_rng(2)
    w0 = Hyperpriors.default(1)
    w = rng.normal(size=4)
    sigma = np.diag(rng.uniform(0.1, 1, size=4))
    a, b = m_step_beta(w, sigma, 1, w0)
    assert a == pytest.approx(1.0 + 2.0)
    assert b == pytest.approx(1.0 + 0.5 * np.trace(sigma) + 0.5 * w @ w)


def test_sigma_blocks_monte_carlo():
    rng = np.random.default_rng(3)
    k = 3
    g = rng.normal(size=(k * k, k * k))
    sigma = g @ g.T / 9 + 0.1 * np.eye(9)
    w = rng.normal(size=9)
    draws = rng.multivariate_normal(w, sigma, size=400_000)
    mats = draws.reshape(-1, k, k).transpose(0, 2, 1)  # undo column-major vec
    col, row = sigma_blocks(sigma, w, 0, 2)
    mc_col = np.einsum("sr,st->rt", mats[:, :, 0], mats[:, :, 2]) / len(mats)
    mc_row = np.einsum("sr,st->rt", mats[:, 0, :], mats[:, 2, :]) / len(mats)
    np.testing.assert_allclose(col, mc_col, atol=0.03)
    np.testing.assert_allclose(row, mc_row, atol=0.03)


def test_pair_second_moments_brute_force():
    rng = np.random.default_rng(4)
    state, _ = random_state(rng, 5, 2)
    etil = e_tildes(state.tau)
    m = state.sigma_n + np.outer(state.w_n_vec, state.w_n_vec)
    got = pair_second_moments(state.sigma_n, state.w_n_vec, etil)
    for i in range(5):
        for j in range(5):
            expected = 0.0 if i == j else np.trace(m @ np.kron(etil[j], etil[i]))
            assert got[i, j] == pytest.approx(expected, rel=1e-11, abs=1e-14)


def test_pair_second_moment_is_expected_square_logit():
    # E[a_ij^2] under independent Bernoulli memberships and Gaussian W~, by enumeration
    rng = np.random.default_rng(5)
    q = 2
    state, _ = random_state(rng, 2, q)
    m = state.sigma_n + np.outer(state.w_n_vec, state.w_n_vec)
    tau = state.tau
    total = 0.0
    for zi in np.ndindex(2, 2):
        for zj in np.ndindex(2, 2):
            pz = np.prod(np.where(np.array(zi), tau[0], 1 - tau[0]))
            pz *= np.prod(np.where(np.array(zj), tau[1], 1 - tau[1]))
            kv = np.kron(augment(np.array(zj, float)), augment(np.array(zi, float)))
            total += pz * kv @ m @ kv
    got = pair_second_moments(state.sigma_n, state.w_n_vec, e_tildes(tau))[0, 1]
    assert got == pytest.approx(total, rel=1e-12)


def test_xi_step_floor_and_diagonal():
    rng = np.random.default_rng(6)
    state, _ = random_state(rng, 4, 1)
    state.w_n_vec[:] = 0.0
    state.sigma_n[:] = 0.0
    xi = xi_step(state, e_tildes(state.tau))
    assert np.all(np.diag(xi) == 0.0)
    off = ~np.eye(4, dtype=bool)
    np.testing.assert_allclose(xi[off], 1e-8)


def _converged_tau(x, state, pri):
    upd = e_step_tau(x, state, pri, max_sweeps=2000, tol=1e-13)
    assert upd.converged
    return upd.tau


def test_e_step_grid_search_tiny():
    rng = np.random.default_rng(7)
    x = np.array([[0.0, 1.0], [0.0, 0.0]])
    state, pri = random_state(rng, 2, 1)
    state.tau = _converged_tau(x, state, pri)
    best = lower_bound(x, state, pri)
    grid = np.linspace(0.001, 0.999, 121)
    trial = state.copy()
    for t0 in grid:
        for t1 in grid:
            trial.tau = np.array([[t0], [t1]])
            assert lower_bound(x, trial, pri) <= best + 1e-10


@pytest.mark.parametrize("seed", [8, 9])
def test_e_step_fixed_point_is_coordinatewise_optimal(seed):
    rng = np.random.default_rng(seed)
    n, q = 6, 2
    x = random_graph(rng, n)
    state, pri = random_state(rng, n, q)
    state.tau = _converged_tau(x, state, pri)
    best = lower_bound(x, state, pri)
    trial = state.copy()
    for i in range(n):
        for c in range(q):
            for t in (TAU_MIN, 0.01, 0.3, 0.5, 0.7, 0.99, 1 - TAU_MIN):
                trial.tau = state.tau.copy()
                trial.tau[i, c] = t
                assert lower_bound(x, trial, pri) <= best + 1e-9


def test_backends_agree():
    if "cython" not in _backend.available():
        pytest.skip("compiled kernels not built")
    rng = np.random.default_rng(10)
    x = random_graph(rng, 25)
    state, pri = random_state(rng, 25, 3)
    out = {}
    for name in ("python", "cython"):
        with _backend.use_backend(name):
            out[name] = e_step_tau(x, state, pri, max_sweeps=5, tol=0.0).tau
    np.testing.assert_allclose(out["python"], out["cython"], rtol=1e-10, atol=1e-13)


def test_fit_bound_monotone_and_il_consistent():
    p = OsbmParameters.structured(2, 6.0, 1.0, -5.5)
    x, z = sample_network(p, 40, seed=3)
    init = np.where(z > 0, 0.9, 0.1)
    res = fit(x, 2, init)
    trace = np.array(res.bound_trace)
    assert np.all(np.diff(trace) >= -1e-8 * np.abs(trace[1:]))
    assert res.converged
    pri = Hyperpriors.default(2)
    assert res.il_osbm == pytest.approx(lower_bound(x, res.state, pri), rel=1e-8)
    assert res.il_osbm == pytest.approx(trace[-1], rel=1e-8)
    assert np.all((res.state.tau >= TAU_MIN) & (res.state.tau <= 1 - TAU_MIN))


def test_fit_input_validation():
    x = np.zeros((5, 5))
    with pytest.raises(ValueError):
        fit(x, 2, np.full((5, 3), 0.5))
    with pytest.raises(ValueError):
        fit(x, 0, np.full((5, 0), 0.5))
    with pytest.raises(ValueError):
        fit(x, 2, np.full((5, 2), 0.5), priors=Hyperpriors.default(3))


def test_fit_non_finite_input():
    x = np.zeros((4, 4))
    x[0, 1] = np.nan
    with pytest.raises(NonFinite):
        fit(x, 1, np.full((4, 1), 0.5), opts=FitOptions(max_outer=3))


def test_permute_state_is_equivariant():
    rng = np.random.default_rng(11)
    n, q = 8, 3
    x = random_graph(rng, n)
    state, pri = random_state(rng, n, q)
    refresh_m_step(x, state, pri)
    perm = np.array([2, 0, 1])
    moved = permute_state(state, perm)
    assert il_osbm(x, moved, pri) == pytest.approx(il_osbm(x, state, pri), rel=1e-12)
    assert lower_bound(x, moved, pri) == pytest.approx(lower_bound(x, state, pri), rel=1e-12)
    # the M-step commutes with relabeling
    again = moved.copy()
    refresh_m_step(x, again, pri)
    np.testing.assert_allclose(again.w_n_vec, moved.w_n_vec, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(again.sigma_n, moved.sigma_n, rtol=1e-9, atol=1e-12)
    # new class 0 is old class 2
    np.testing.assert_array_equal(moved.tau[:, 0], state.tau[:, 2])
    assert moved.w_n[0, 1] == state.w_n[2, 0]
    assert moved.w_n[0, q] == state.w_n[2, q]


def test_e_step_fixed_points_are_permutation_equivariant():
    # classes are swept in index order, so only fixed points (not partial
    # sweeps) are expected to commute with relabeling
    rng = np.random.default_rng(12)
    x = random_graph(rng, 10)
    state, pri = random_state(rng, 10, 3)
    state.tau = _converged_tau(x, state, pri)
    perm = np.array([1, 2, 0])
    moved = permute_state(state, perm)
    b = e_step_tau(x, moved, pri, max_sweeps=1, tol=0.0).tau
    np.testing.assert_allclose(b, state.tau[:, perm], rtol=1e-8, atol=1e-11)
