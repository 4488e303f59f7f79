"""Scalar and matrix kernels shared by the numerical modules."""

import numpy as np
from scipy import linalg, special

LAMBDA_SERIES_CUTOFF = 1e-4


class SingularMatrix(np.linalg.LinAlgError):
    """Cholesky factorization failed even after jitter escalation."""


def logistic(x):
    """Logistic sigmoid ``1 / (1 + exp(-x))``, overflow-free for large ``|x|``."""
    out = special.expit(np.asarray(x, dtype=float))
    return out if out.ndim else float(out)


def log_logistic(x):
    """``log g(x) = -log1p(exp(-x))`` without overflow."""
    out = special.log_expit(np.asarray(x, dtype=float))
    return out if out.ndim else float(out)


def lambda_jj(xi):
    """Curvature of the local logistic bound, ``(g(xi) - 1/2) / (2 xi)``.

    Below ``xi = 1e-4`` the Taylor series ``1/8 - xi**2/192`` replaces the
    direct formula, which loses about eight digits to cancellation there.
    """
    xi = np.asarray(xi, dtype=float)
    if np.any(xi <= 0):
        raise ValueError("lambda_jj requires xi > 0")
    out = np.atleast_1d((special.expit(xi) - 0.5) / (2.0 * xi))
    small = xi < LAMBDA_SERIES_CUTOFF
    if np.any(small):
        xs = xi[small]
        out[np.atleast_1d(small)] = 0.125 - xs * xs / 192.0
    return out.reshape(xi.shape) if xi.ndim else float(out[0])


def vec(m):
    """Stack the columns of ``m`` into one vector (column-major)."""
    return np.asarray(m, dtype=float).reshape(-1, order="F")


def unvec(v, dim=None):
    v = np.asarray(v, dtype=float)
    if dim is None:
        dim = int(round(np.sqrt(v.size)))
    if dim * dim != v.size:
        raise ValueError(f"vector of length {v.size} is not a square matrix")
    return v.reshape((dim, dim), order="F")


def kron(a, b):
    """Kronecker product; ``kron(a, b) @ vec(m) == vec(b @ m @ a.T)``."""
    return np.kron(np.asarray(a, dtype=float), np.asarray(b, dtype=float))


def digamma(x):
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("digamma is only defined here for x > 0")
    out = special.digamma(x)
    return out if out.ndim else float(out)


def log_gamma(x):
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("log_gamma is only defined here for x > 0")
    out = special.gammaln(x)
    return out if out.ndim else float(out)


def psd_solve_and_logdet(m, rhs, max_retries=3):
    """Solve ``m @ x = rhs`` for symmetric positive definite ``m``.

    Returns ``(x, log|m|)``. ``rhs`` may be a vector or a matrix. When the
    Cholesky factorization fails, a diagonal jitter of
    ``1e-10 * mean(diag(m))`` is added and escalated tenfold per retry.

    Raises
    ------
    SingularMatrix
        If the matrix is still not factorizable after ``max_retries`` jitters.
    """
    m = np.asarray(m, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    jitter = 1e-10 * float(np.mean(np.diag(m)))
    if not np.isfinite(jitter) or jitter <= 0:
        jitter = 1e-10
    mj = m
    for attempt in range(max_retries + 1):
        try:
            chol = np.linalg.cholesky(mj)
            break
        except np.linalg.LinAlgError:
            if attempt == max_retries:
                raise SingularMatrix(
                    f"matrix of dim {m.shape[0]} not positive definite after "
                    f"{max_retries} jitter retries") from None
            mj = m + jitter * np.eye(m.shape[0])
            jitter *= 10.0
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    x = linalg.cho_solve((chol, True), rhs, check_finite=False)
    return x, logdet
