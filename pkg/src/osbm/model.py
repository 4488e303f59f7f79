"""OSBM parameters, the generative sampler and exact likelihood evaluators."""

from dataclasses import dataclass, field

import numpy as np

from .mathkit import log_logistic, logistic


@dataclass(frozen=True)
class OsbmParameters:
    """Generative parameters: class probabilities ``alpha``, the class
    interaction matrix ``w``, sender effects ``u``, receiver effects ``v``
    and the sparsity offset ``w_star``."""

    alpha: np.ndarray
    w: np.ndarray
    u: np.ndarray
    v: np.ndarray
    w_star: float

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float).ravel()
        q = alpha.size
        w = np.asarray(self.w, dtype=float).reshape(q, q)
        u = np.asarray(self.u, dtype=float).ravel()
        v = np.asarray(self.v, dtype=float).ravel()
        if u.size != q or v.size != q:
            raise ValueError("u and v must have one entry per class")
        if np.any(alpha < 0) or np.any(alpha > 1):
            raise ValueError("alpha entries must lie in [0, 1]")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(u))
                and np.all(np.isfinite(v)) and np.isfinite(self.w_star)):
            raise ValueError("parameters must be finite")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "w_star", float(self.w_star))

    @property
    def q(self):
        return self.alpha.size

    @classmethod
    def structured(cls, q, lam, eps, w_star, alpha=None):
        """Community-structured parameters: ``lam`` on the diagonal of W,
        ``-eps`` off it, and ``U = V = eps``. Balanced ``alpha`` by default."""
        w = np.full((q, q), -float(eps))
        np.fill_diagonal(w, lam)
        if alpha is None:
            alpha = np.full(q, 1.0 / q)
        return cls(alpha=alpha, w=w, u=np.full(q, float(eps)),
                   v=np.full(q, float(eps)), w_star=w_star)

    def wtilde(self):
        return assemble_wtilde(self)


@dataclass(frozen=True)
class Hyperpriors:
    """Prior constants. Defaults reproduce the simulation settings:
    Jeffreys Beta(1/2, 1/2) on each alpha_q, Gamma(1, 1) on the precision
    and a zero prior mean for vec(W-tilde)."""

    eta0: np.ndarray
    zeta0: np.ndarray
    a0: float = 1.0
    b0: float = 1.0
    w0_vec: np.ndarray = field(default=None)

    def __post_init__(self):
        eta0 = np.asarray(self.eta0, dtype=float).ravel()
        zeta0 = np.asarray(self.zeta0, dtype=float).ravel()
        q = eta0.size
        if zeta0.size != q:
            raise ValueError("eta0 and zeta0 must have the same length")
        if np.any(eta0 <= 0) or np.any(zeta0 <= 0) or self.a0 <= 0 or self.b0 <= 0:
            raise ValueError("prior constants must be strictly positive")
        w0 = self.w0_vec
        w0 = np.zeros((q + 1) ** 2) if w0 is None else np.asarray(w0, dtype=float).ravel()
        if w0.size != (q + 1) ** 2 or not np.all(np.isfinite(w0)):
            raise ValueError("w0_vec must hold (Q+1)^2 finite values")
        object.__setattr__(self, "eta0", eta0)
        object.__setattr__(self, "zeta0", zeta0)
        object.__setattr__(self, "a0", float(self.a0))
        object.__setattr__(self, "b0", float(self.b0))
        object.__setattr__(self, "w0_vec", w0)

    @property
    def q(self):
        return self.eta0.size

    @classmethod
    def default(cls, q, eta0=0.5, zeta0=0.5, a0=1.0, b0=1.0):
        return cls(eta0=np.full(q, eta0), zeta0=np.full(q, zeta0), a0=a0, b0=b0)


def assemble_wtilde(p):
    """Pack ``(W, U, V, W*)`` into the ``(Q+1) x (Q+1)`` block matrix
    ``[[W, U], [V^T, W*]]``."""
    q = p.q
    wt = np.empty((q + 1, q + 1))
    wt[:q, :q] = p.w
    wt[:q, q] = p.u
    wt[q, :q] = p.v
    wt[q, q] = p.w_star
    return wt


def augment(z):
    """Append the constant 1 to membership rows: ``Z -> (Z, 1)``."""
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        return np.append(z, 1.0)
    return np.hstack([z, np.ones((z.shape[0], 1))])


def edge_logit(z_i, z_j, wt):
    """Edge log-odds ``(z_i, 1)^T W~ (z_j, 1)``."""
    return float(augment(z_i) @ np.asarray(wt, dtype=float) @ augment(z_j))


def logit_matrix(z, wt):
    zt = augment(z)
    return zt @ np.asarray(wt, dtype=float) @ zt.T


def geometric_alpha(q_true, a):
    """Class probabilities proportional to ``a**q`` for ``q = 1..Q``."""
    if q_true < 1:
        raise ValueError("q_true must be >= 1")
    powers = float(a) ** np.arange(1, q_true + 1)
    return powers / powers.sum()


def sample_network(p, n, seed):
    """Draw ``(X, Z)`` from the OSBM.

    All memberships are drawn before any edge; edges are drawn row-major
    over the full ``n x n`` grid (diagonal draws are discarded). Output is
    a deterministic function of ``seed``.
    """
    if n < 2:
        raise ValueError("need at least two vertices")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    z = (rng.random((n, p.q)) < p.alpha).astype(np.int8)
    prob = logistic(logit_matrix(z, p.wtilde()))
    x = (rng.random((n, n)) < prob).astype(np.int8)
    np.fill_diagonal(x, 0)
    return x, z


def complete_log_likelihood(x, z, wt):
    """``log p(X | Z, W~) = sum_{i != j} X_ij a_ij + log g(-a_ij)``."""
    x = np.asarray(x, dtype=float)
    a = logit_matrix(z, wt)
    terms = x * a + log_logistic(-a)
    np.fill_diagonal(terms, 0.0)
    return float(terms.sum())
