"""Variational Bayes EM for the Bayesian OSBM.

The posterior approximation factorizes as q(Z) q(alpha) q(W~) q(beta) with
Bernoulli memberships ``tau``, Beta(eta, zeta) class probabilities, a
Gaussian N(w_n, Sigma_n) on vec(W~) and a Gamma(a_n, b_n) precision. Local
logistic bounds are parameterized per ordered vertex pair by ``xi``.

Indexing conventions: vec is column-major, so entry ``W~[r, c]`` sits at
position ``c * K + r`` with ``K = Q + 1``; all sums over vertex pairs run
over ordered pairs ``i != j``.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from . import _backend
from .mathkit import (
    digamma,
    lambda_jj,
    log_gamma,
    log_logistic,
    psd_solve_and_logdet,
)
from .model import Hyperpriors, augment

logger = logging.getLogger(__name__)

TAU_MIN = 1e-10
XI_FLOOR = 1e-8
XI_INIT = 1e-3
LOG_2PI = float(np.log(2.0 * np.pi))


class NonFinite(FloatingPointError):
    """A NaN or infinity appeared in the variational state."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class VariationalState:
    tau: np.ndarray
    eta_n: np.ndarray
    zeta_n: np.ndarray
    w_n_vec: np.ndarray
    sigma_n: np.ndarray
    a_n: float
    b_n: float
    xi: np.ndarray

    @property
    def n(self):
        return self.tau.shape[0]

    @property
    def q(self):
        return self.tau.shape[1]

    @property
    def w_n(self):
        k = self.q + 1
        return self.w_n_vec.reshape((k, k), order="F")

    def copy(self):
        return VariationalState(
            tau=self.tau.copy(), eta_n=self.eta_n.copy(), zeta_n=self.zeta_n.copy(),
            w_n_vec=self.w_n_vec.copy(), sigma_n=self.sigma_n.copy(),
            a_n=self.a_n, b_n=self.b_n, xi=self.xi.copy())


@dataclass
class FitOptions:
    max_outer: int = 500
    outer_tol: float = 1e-6
    max_sweeps: int = 50
    tau_tol: float = 1e-4
    xi_init: float = XI_INIT


@dataclass
class FitResult:
    state: VariationalState
    il_osbm: float
    bound_trace: list
    converged: bool
    iterations: int
    tau_unconverged: int = 0
    backend: str = field(default_factory=_backend.name)


class TauUpdate(NamedTuple):
    tau: np.ndarray
    converged: bool
    sweeps: int


def tau_tilde(tau):
    return augment(tau)


def e_tilde(tau_row):
    """Second moment ``E[Z~ Z~^T]`` of one vertex under independent
    Bernoulli memberships: ``tau_q`` on the diagonal (not ``tau_q**2``),
    ``tau_q tau_l`` off it, ``(tau, 1)`` on the border."""
    t = augment(np.asarray(tau_row, dtype=float))
    e = np.outer(t, t)
    np.fill_diagonal(e, t)
    return e


def e_tildes(tau):
    tt = augment(tau)
    e = tt[:, :, None] * tt[:, None, :]
    idx = np.arange(tt.shape[1])
    e[:, idx, idx] = tt
    return e


def _pair_lambda(xi):
    lam = np.zeros_like(xi, dtype=float)
    off = ~np.eye(xi.shape[0], dtype=bool)
    lam[off] = lambda_jj(xi[off])
    return lam


def _centered(x):
    xc = np.asarray(x, dtype=float) - 0.5
    np.fill_diagonal(xc, 0.0)
    return xc


def m_step_alpha(tau, priors):
    s = tau.sum(axis=0)
    n = tau.shape[0]
    return priors.eta0 + s, priors.zeta0 + n - s


def precision_matrix(e_tilde_stack, xi, a_n, b_n):
    """``(a_n/b_n) I + 2 sum_{i != j} lambda(xi_ij) (E_j kron E_i)``."""
    n, k, _ = e_tilde_stack.shape
    lam = _pair_lambda(xi)
    flat = e_tilde_stack.reshape(n, k * k)
    # f_j = sum_i lam_ij E_i
    f = lam.T @ flat
    p4 = (flat.T @ f).reshape(k, k, k, k)  # [a, b, c, d] = sum_j E_j[a,b] f_j[c,d]
    prec = 2.0 * p4.transpose(0, 2, 1, 3).reshape(k * k, k * k)
    prec = 0.5 * (prec + prec.T)
    prec[np.diag_indices_from(prec)] += a_n / b_n
    return prec


def data_vector(x, tau):
    """``sum_{i != j} (X_ij - 1/2) tau~_j kron tau~_i`` as a vec."""
    tt = augment(tau)
    return (tt.T @ _centered(x) @ tt).reshape(-1, order="F")


def m_step_w(x, tau, e_tilde_stack, xi, a_n, b_n, w0_vec=None):
    """Gaussian update of q(vec W~); returns ``(mean, covariance)``.

    Raises ``SingularMatrix`` if the precision cannot be factorized.
    """
    prec = precision_matrix(e_tilde_stack, xi, a_n, b_n)
    rhs = data_vector(x, tau)
    if w0_vec is not None:
        rhs = rhs + (a_n / b_n) * w0_vec
    k2 = prec.shape[0]
    sol, _ = psd_solve_and_logdet(prec, np.column_stack([rhs, np.eye(k2)]))
    sigma = sol[:, 1:]
    sigma = 0.5 * (sigma + sigma.T)
    return sol[:, 0].copy(), sigma


def m_step_beta(w_n_vec, sigma_n, q, priors):
    k = q + 1
    dev = w_n_vec - priors.w0_vec
    a_n = priors.a0 + 0.5 * k * k
    b_n = priors.b0 + 0.5 * float(np.trace(sigma_n)) + 0.5 * float(dev @ dev)
    return a_n, b_n


def second_moment(sigma_n, w_n_vec):
    """``E[vec W~ vec W~^T] = Sigma_n + w_n w_n^T``."""
    return sigma_n + np.outer(w_n_vec, w_n_vec)


def sigma_blocks(sigma_n, w_n_vec, q, l):
    """Column and row second-moment blocks of W~ (0-based ``q``, ``l``).

    Returns ``(S, S')`` with ``S = E[W~[:, q] W~[:, l]^T]`` and
    ``S' = E[W~[q, :]^T W~[l, :]]``.
    """
    m = second_moment(sigma_n, w_n_vec)
    k = int(round(np.sqrt(w_n_vec.size)))
    rng = np.arange(k)
    col = m[np.ix_(q * k + rng, l * k + rng)]
    row = m[np.ix_(rng * k + q, rng * k + l)]
    return col, row


def _trace_operators(m):
    k = int(round(np.sqrt(m.shape[0])))
    m4 = m.reshape(k, k, k, k)  # [c1, r1, c2, r2] = E[W~[r1,c1] W~[r2,c2]]
    m_sender = np.ascontiguousarray(m4.transpose(1, 3, 0, 2).reshape(k * k, k * k))
    m_receiver = np.ascontiguousarray(m4.transpose(0, 2, 1, 3).reshape(k * k, k * k))
    return m_sender, m_receiver


def e_step_tau(x, state, priors=None, max_sweeps=50, tol=1e-4):
    """Coordinate-ascent update of the membership probabilities.

    Sweeps vertices in index order and classes in order, updating each
    ``tau_iq`` in place, until no entry moves by ``tol`` or ``max_sweeps``
    sweeps have run. Does not modify ``state``.
    """
    xd = np.ascontiguousarray(x, dtype=float)
    tt = np.ascontiguousarray(augment(state.tau))
    m_sender, m_receiver = _trace_operators(second_moment(state.sigma_n, state.w_n_vec))
    wn = np.ascontiguousarray(state.w_n)
    lam = np.ascontiguousarray(_pair_lambda(state.xi))
    prior = np.ascontiguousarray(digamma(state.eta_n) - digamma(state.zeta_n))
    kern = _backend.kernels()
    converged = False
    sweeps = 0
    while sweeps < max_sweeps:
        delta = kern.tau_sweep(xd, tt, wn, m_sender, m_receiver, lam, prior, TAU_MIN)
        sweeps += 1
        if delta < tol:
            converged = True
            break
    return TauUpdate(tt[:, :-1].copy(), converged, sweeps)


def pair_second_moments(sigma_n, w_n_vec, e_tilde_stack):
    """Grid of ``E[a_ij^2] = Tr((Sigma_n + w w^T)(E_j kron E_i))``."""
    n, k, _ = e_tilde_stack.shape
    m = second_moment(sigma_n, w_n_vec)
    m4 = m.reshape(k, k, k, k).transpose(0, 2, 1, 3).reshape(k * k, k * k)
    flat = e_tilde_stack.reshape(n, k * k)
    h = flat @ m4  # h_j[c, d] = sum_ab E_j[a, b] M[(a, c), (b, d)]
    out = (h @ flat.T).T  # out[i, j] = <h_j, E_i>
    np.fill_diagonal(out, 0.0)
    return out


def xi_step(state, e_tilde_stack):
    """Optimal local bound parameters, floored at ``XI_FLOOR``."""
    m2 = pair_second_moments(state.sigma_n, state.w_n_vec, e_tilde_stack)
    xi = np.sqrt(np.maximum(m2, XI_FLOOR ** 2))
    np.fill_diagonal(xi, 0.0)
    return xi


def _entropy(tau):
    return -float(np.sum(tau * np.log(tau) + (1.0 - tau) * np.log1p(-tau)))


def _xi_terms(xi):
    off = ~np.eye(xi.shape[0], dtype=bool)
    xo = xi[off]
    return xo, lambda_jj(xo), off


def lower_bound(x, state, priors):
    """Full variational bound L(q; xi) as a sum of expectations.

    Valid for any state; it contains the residual terms that vanish only
    right after the M-step and is therefore the ascent witness.
    """
    q, k = state.q, state.q + 1
    k2 = k * k
    xd = np.asarray(x, dtype=float)
    tau = state.tau
    etil = e_tildes(tau)
    tt = augment(tau)

    xo, lam, off = _xi_terms(state.xi)
    mean_logit = tt @ state.w_n @ tt.T
    m2 = pair_second_moments(state.sigma_n, state.w_n_vec, etil)[off]
    e_log_h = float(np.sum((xd[off] - 0.5) * mean_logit[off] - 0.5 * xo
                           + log_logistic(xo) - lam * (m2 - xo * xo)))

    eta, zeta = state.eta_n, state.zeta_n
    psi_sum = digamma(eta + zeta)
    e_log_a = digamma(eta) - psi_sum
    e_log_1ma = digamma(zeta) - psi_sum
    e_log_pz = float(np.sum(tau * e_log_a + (1.0 - tau) * e_log_1ma))
    e_log_palpha = float(np.sum(
        log_gamma(priors.eta0 + priors.zeta0) - log_gamma(priors.eta0) - log_gamma(priors.zeta0)
        + (priors.eta0 - 1.0) * e_log_a + (priors.zeta0 - 1.0) * e_log_1ma))
    e_log_qalpha = float(np.sum(
        log_gamma(eta + zeta) - log_gamma(eta) - log_gamma(zeta)
        + (eta - 1.0) * e_log_a + (zeta - 1.0) * e_log_1ma))

    a_n, b_n = state.a_n, state.b_n
    e_log_beta = digamma(a_n) - np.log(b_n)
    dev = state.w_n_vec - priors.w0_vec
    e_sq = float(np.trace(state.sigma_n) + dev @ dev)
    e_log_pw = -0.5 * k2 * LOG_2PI + 0.5 * k2 * e_log_beta - 0.5 * (a_n / b_n) * e_sq
    _, logdet_sigma = psd_solve_and_logdet(state.sigma_n, np.zeros(k2))
    e_log_qw = -0.5 * k2 * LOG_2PI - 0.5 * logdet_sigma - 0.5 * k2

    a0, b0 = priors.a0, priors.b0
    e_log_pbeta = a0 * np.log(b0) - log_gamma(a0) + (a0 - 1.0) * e_log_beta - b0 * a_n / b_n
    e_log_qbeta = a_n * np.log(b_n) - log_gamma(a_n) + (a_n - 1.0) * e_log_beta - a_n

    return float(e_log_h + e_log_pz + e_log_palpha + e_log_pw + e_log_pbeta
                 + _entropy(tau) - e_log_qalpha - e_log_qw - e_log_qbeta)


def il_osbm(x, state, priors):
    """Closed-form criterion IL_osbm.

    Equals ``lower_bound`` when the state is M-step fresh: eta/zeta match
    tau, ``a_n = a0 + (Q+1)^2/2`` and (w_n, Sigma_n) solve the Gaussian
    update for the current tau, xi, a_n and b_n.
    """
    xo, lam, _ = _xi_terms(state.xi)
    total = float(np.sum(log_logistic(xo) - 0.5 * xo + lam * xo * xo))

    e0, z0 = priors.eta0, priors.zeta0
    en, zn = state.eta_n, state.zeta_n
    total += float(np.sum(log_gamma(e0 + z0) + log_gamma(en) + log_gamma(zn)
                          - log_gamma(e0) - log_gamma(z0) - log_gamma(en + zn)))

    a0, b0, a_n, b_n = priors.a0, priors.b0, state.a_n, state.b_n
    total += log_gamma(a_n) - log_gamma(a0) + a0 * np.log(b0)
    total += a_n * (1.0 - b0 / b_n - np.log(b_n))

    prec_w, logdet_sigma = psd_solve_and_logdet(state.sigma_n, state.w_n_vec)
    total += 0.5 * float(state.w_n_vec @ prec_w) + 0.5 * logdet_sigma
    total -= 0.5 * (a_n / b_n) * float(priors.w0_vec @ priors.w0_vec)

    total += _entropy(state.tau)
    return float(total)


def _check_finite(state, iteration):
    bad = {name: int(np.size(val) - np.count_nonzero(np.isfinite(val)))
           for name, val in vars(state).items()}
    bad = {k: v for k, v in bad.items() if v}
    if bad:
        raise NonFinite(f"non-finite values at outer iteration {iteration}",
                        {"iteration": iteration, "non_finite_counts": bad})


def initial_state(x, init_tau, priors, xi_init=XI_INIT):
    tau = np.clip(np.asarray(init_tau, dtype=float), TAU_MIN, 1.0 - TAU_MIN)
    n, q = tau.shape
    k2 = (q + 1) ** 2
    xi = np.full((n, n), float(xi_init))
    np.fill_diagonal(xi, 0.0)
    eta, zeta = m_step_alpha(tau, priors)
    return VariationalState(tau=tau, eta_n=eta, zeta_n=zeta, w_n_vec=np.zeros(k2),
                            sigma_n=np.eye(k2), a_n=priors.a0, b_n=priors.b0, xi=xi)


def refresh_m_step(x, state, priors):
    """Alpha and W~ updates in place for the current tau, xi and E[beta]."""
    etil = e_tildes(state.tau)
    state.eta_n, state.zeta_n = m_step_alpha(state.tau, priors)
    state.w_n_vec, state.sigma_n = m_step_w(
        x, state.tau, etil, state.xi, state.a_n, state.b_n, priors.w0_vec)
    return etil


def fit(x, q, init_tau, priors=None, opts=None):
    """Run the VBEM loop from ``init_tau``.

    Each outer iteration performs, in order: E~ update, alpha step, W~
    step, beta step, xi step, and the inner tau loop. The bound is
    recorded right after the W~ step, where the closed-form IL_osbm is
    exact; iteration stops there once the relative change drops below
    ``opts.outer_tol`` (from the second iteration on) or at
    ``opts.max_outer``.
    """
    opts = opts or FitOptions()
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if q < 1 or n < 2:
        raise ValueError("need q >= 1 and at least two vertices")
    if np.shape(init_tau) != (n, q):
        raise ValueError(f"init_tau must have shape {(n, q)}")
    if priors is None:
        priors = Hyperpriors.default(q)
    if priors.q != q:
        raise ValueError("hyperpriors sized for a different Q")
    max_outer = max(2, int(opts.max_outer))

    state = initial_state(x, init_tau, priors, opts.xi_init)
    trace = []
    converged = False
    unconverged_e = 0
    it = 0
    for it in range(1, max_outer + 1):
        etil = refresh_m_step(x, state, priors)
        _check_finite(state, it)
        bound = lower_bound(x, state, priors)
        if not np.isfinite(bound):
            raise NonFinite("bound is not finite", {"iteration": it})
        trace.append(bound)
        if it >= 2 and abs(bound - trace[-2]) <= opts.outer_tol * abs(bound):
            converged = True
            break
        if it == max_outer:
            break
        state.a_n, state.b_n = m_step_beta(state.w_n_vec, state.sigma_n, q, priors)
        state.xi = xi_step(state, etil)
        upd = e_step_tau(x, state, priors, opts.max_sweeps, opts.tau_tol)
        state.tau = upd.tau
        unconverged_e += not upd.converged

    il = il_osbm(x, state, priors)
    logger.debug("fit q=%d: %d iterations, IL=%.6f, converged=%s", q, it, il, converged)
    return FitResult(state=state, il_osbm=il, bound_trace=trace, converged=converged,
                     iterations=it, tau_unconverged=unconverged_e)


def permute_state(state, perm):
    """Relabel classes: new class ``c`` is old class ``perm[c]``."""
    perm = np.asarray(perm)
    q = state.q
    full = np.append(perm, q)
    k = q + 1
    # new vec slot c*K + r holds old entry (full[r], full[c])
    src = (full[:, None] * k + full[None, :]).reshape(-1)
    return replace(
        state,
        tau=state.tau[:, perm].copy(),
        eta_n=state.eta_n[perm].copy(),
        zeta_n=state.zeta_n[perm].copy(),
        w_n_vec=state.w_n_vec[src].copy(),
        sigma_n=state.sigma_n[np.ix_(src, src)].copy(),
        xi=state.xi.copy(),
    )
