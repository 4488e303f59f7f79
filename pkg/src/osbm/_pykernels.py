"""Pure NumPy implementation of the hot kernels.

Used when the compiled extension is unavailable, and as its reference in
the test suite and the benchmark.
"""

import numpy as np


def tau_sweep(x, tt, wn, m_sender, m_receiver, lam, prior_logodds, tau_min):
    """One in-place coordinate-ascent sweep over all memberships.

    Parameters
    ----------
    x : (N, N) float array, adjacency with zero diagonal.
    tt : (N, K) float array, augmented memberships ``(tau_i, 1)``; updated
        in place, vertex by vertex and class by class.
    wn : (K, K) posterior mean of W-tilde.
    m_sender, m_receiver : (K*K, K*K) rearranged second moments of W-tilde
        such that ``m_sender @ A.ravel()`` yields the row-block traces
        ``Tr(Sigma'_{ql} A)`` and ``m_receiver @ B.ravel()`` the column-block
        traces ``Tr(Sigma_{ql} B)``, both as K x K grids.
    lam : (N, N) lambda(xi) with zero diagonal.
    prior_logodds : (Q,) ``psi(eta) - psi(zeta)``.
    tau_min : clipping level.

    Returns the largest absolute change of any membership.
    """
    n, k = tt.shape
    q = k - 1
    hi = 1.0 - tau_min
    max_delta = 0.0
    for b in range(n):
        # second-moment matrices E[Z~_j Z~_j^T] for all j, with current tau
        sec = tt[:, :, None] * tt[:, None, :]
        idx = np.arange(k)
        sec[:, idx, idx] = tt
        a_mat = np.tensordot(lam[b], sec, axes=1)
        b_mat = np.tensordot(lam[:, b], sec, axes=1)
        g = (m_sender @ a_mat.ravel() + m_receiver @ b_mat.ravel()).reshape(k, k)

        w_out = x[b] - 0.5
        w_out[b] = 0.0
        w_in = x[:, b] - 0.5
        w_in[b] = 0.0
        lin = wn @ (w_out @ tt) + wn.T @ (w_in @ tt)

        row = tt[b]
        for c in range(q):
            quad = g[c, c] + 2.0 * (g[c] @ row - g[c, c] * row[c])
            logit = prior_logodds[c] + lin[c] - quad
            if logit >= 0:
                new = 1.0 / (1.0 + np.exp(-logit))
            else:
                e = np.exp(logit)
                new = e / (1.0 + e)
            new = min(max(new, tau_min), hi)
            delta = abs(new - row[c])
            if delta > max_delta:
                max_delta = delta
            row[c] = new
    return max_delta
