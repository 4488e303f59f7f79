"""Model-order selection: starting points, restarts, argmax of IL."""

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.cluster import KMeans
from sklearn.decomposition import NMF
from sklearn.exceptions import ConvergenceWarning

from .mathkit import SingularMatrix
from .model import Hyperpriors
from .vbem import FitOptions, NonFinite, fit

logger = logging.getLogger(__name__)

INIT_HIGH = 0.9
INIT_LOW = 0.1


class SelectionFailed(RuntimeError):
    pass


def kmeans_init(x, q, seed):
    """Soft memberships from k-means on in/out connectivity profiles.

    Each vertex is described by its row and column of ``x``; the assigned
    cluster gets 0.9 and every other class 0.1.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if q > n:
        raise ValueError("more classes than vertices")
    tau = np.full((n, q), INIT_LOW)
    if q == 1:
        tau[:] = INIT_HIGH
        return tau
    features = np.hstack([x, x.T])
    km = KMeans(n_clusters=q, init="k-means++", n_init=1, max_iter=100,
                algorithm="lloyd", random_state=_int_seed(seed))
    labels = km.fit_predict(features)
    tau[np.arange(n), labels] = INIT_HIGH
    return tau


def overlap_init(x, q, seed, frac=None):
    """k-means start completed with overlaps and outliers.

    Starting from the ``kmeans_init`` partition, vertex ``i`` is given class
    ``c`` (level 0.9) whenever its in/out edge density towards the members
    of cluster ``c`` reaches ``frac`` times the mean density of those
    members among themselves; every other entry is 0.1, so a vertex may end
    up in several classes or in none. ``frac`` defaults to a draw from
    U(0.5, 0.8) keyed on ``seed``.
    """
    x = np.asarray(x, dtype=float)
    base = kmeans_init(x, q, seed)
    if frac is None:
        frac = np.random.default_rng(_int_seed(seed)).uniform(0.5, 0.8)
    labels = base.argmax(axis=1)
    both = x + x.T
    tau = np.full_like(base, INIT_LOW)
    for c in range(q):
        members = labels == c
        others = members.sum() - members.astype(int)
        density = both[:, members].sum(axis=1) / (2.0 * np.maximum(others, 1))
        core = density[members].mean()
        if core > 0:
            tau[density >= frac * core, c] = INIT_HIGH
        else:
            tau[members, c] = INIT_HIGH
    return tau


def _two_means_split(values):
    """Exact 1-D two-means: boolean mask of the upper group."""
    order = np.argsort(values, kind="stable")
    v = values[order]
    n = v.size
    csum = np.cumsum(v)
    csq = np.cumsum(v * v)
    k = np.arange(1, n)
    left = csq[:-1] - csum[:-1] ** 2 / k
    right = (csq[-1] - csq[:-1]) - (csum[-1] - csum[:-1]) ** 2 / (n - k)
    cut = int(np.argmin(left + right)) + 1
    mask = np.zeros(n, dtype=bool)
    mask[order[cut:]] = True
    return mask


def nmf_init(x, q, seed):
    """Overlapping start from a non-negative factorization ``X + X^T ~ H H'``.

    Each factor column is split into high and low loadings by 1-D
    two-means; high-loading vertices get the class (0.9), so vertices may
    join several classes or none.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if q > n:
        raise ValueError("more classes than vertices")
    sym = x + x.T
    tau = np.full((n, q), INIT_LOW)
    if not sym.any():
        return tau
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        h = NMF(n_components=q, init="random", random_state=_int_seed(seed),
                max_iter=500).fit_transform(sym)
    for c in range(q):
        if np.ptp(h[:, c]) > 0:
            tau[_two_means_split(h[:, c]), c] = INIT_HIGH
    return tau


INITIALIZERS = {"kmeans": kmeans_init, "overlap": overlap_init, "nmf": nmf_init}


def _int_seed(seed):
    if isinstance(seed, np.random.SeedSequence):
        return int(seed.generate_state(1)[0])
    return int(seed) % (2 ** 32)


def restart_seeds(seed, q, restarts):
    """Independent per-(Q, restart) seeds derived from one root seed."""
    children = np.random.SeedSequence([int(seed), int(q)]).spawn(restarts)
    return [int(c.generate_state(1)[0]) for c in children]


@dataclass
class SelectionReport:
    q_star: int
    best: dict
    restart_il: dict
    failures: dict = field(default_factory=dict)
    wall_times: dict = field(default_factory=dict)
    seed: int = 0

    @property
    def best_il(self):
        return {q: r.il_osbm for q, r in self.best.items()}


def refine_complements(x, result, priors=None, opts=None):
    """Greedy search over class complements.

    Replacing memberships ``z_q`` by ``1 - z_q`` changes the likelihood
    only through a reparameterization of W~, so the two labelings are
    separated by the priors alone and VBEM rarely crosses between them.
    Each class is flipped in turn and refitted; an improvement in IL_osbm
    is kept and the scan restarts, at most ``Q`` times.
    """
    q = result.state.q
    for _ in range(q):
        improved = False
        for c in range(q):
            tau = result.state.tau.copy()
            tau[:, c] = 1.0 - tau[:, c]
            try:
                cand = fit(x, q, tau, priors, opts)
            except (SingularMatrix, NonFinite) as exc:
                logger.debug("complement of class %d failed: %s", c, exc)
                continue
            if cand.il_osbm > result.il_osbm + 1e-9 * abs(result.il_osbm):
                result, improved = cand, True
                break
        if not improved:
            break
    return result


def fit_cell(x, q, restarts, seed, priors=None, opts=None, init="nmf", refine=True):
    """Run ``restarts`` fits for one Q; returns ``(best, ils, failures)``.

    ``ils`` lists the IL of every restart; with ``refine`` the best restart
    is then passed through ``refine_complements``.
    """
    priors = priors if priors is not None else Hyperpriors.default(q)
    make_init = INITIALIZERS[init]
    best, ils, failures = None, [], []
    for r, s in enumerate(restart_seeds(seed, q, restarts)):
        try:
            res = fit(x, q, make_init(x, q, s), priors, opts)
        except (SingularMatrix, NonFinite) as exc:
            logger.warning("q=%d restart %d failed: %s", q, r, exc)
            failures.append(f"restart {r}: {type(exc).__name__}: {exc}")
            ils.append(float("nan"))
            continue
        ils.append(res.il_osbm)
        if best is None or res.il_osbm > best.il_osbm:
            best = res
    if refine and best is not None:
        best = refine_complements(x, best, priors, opts)
    return best, ils, failures


def select_q(x, q_range, restarts=10, priors=None, seed=0, opts=None, init="nmf",
             refine=True):
    """Fit every Q in ``q_range`` with ``restarts`` random starts and pick
    the Q whose best fit has the largest IL_osbm (ties go to the smaller Q).

    ``priors`` may be a callable ``q -> Hyperpriors``; ``None`` uses the
    defaults. ``init`` names the starting-point generator in
    ``INITIALIZERS``; ``refine`` enables the complement search on each
    Q's best restart.
    """
    q_range = sorted(set(int(q) for q in q_range))
    if not q_range or restarts < 1:
        raise ValueError("need a non-empty q_range and restarts >= 1")
    opts = opts or FitOptions()
    best, restart_il, failures, times = {}, {}, {}, {}
    for q in q_range:
        pri = priors(q) if callable(priors) else (priors or Hyperpriors.default(q))
        t0 = time.perf_counter()
        cell_best, ils, errs = fit_cell(x, q, restarts, seed, pri, opts, init, refine)
        times[q] = time.perf_counter() - t0
        restart_il[q] = ils
        if errs:
            failures[q] = errs
        if cell_best is not None:
            best[q] = cell_best
    if not best:
        raise SelectionFailed(f"every fit failed for Q in {q_range}")
    q_star = max(best, key=lambda q: (best[q].il_osbm, -q))
    return SelectionReport(q_star=q_star, best=best, restart_il=restart_il,
                           failures=failures, wall_times=times, seed=int(seed))
