"""Evaluation: clustering distance, credibility intervals, simulation studies."""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special, stats

from .model import OsbmParameters, geometric_alpha, sample_network
from .selection import SelectionFailed, fit_cell, select_q
from .vbem import FitOptions, permute_state

logger = logging.getLogger(__name__)

BALANCES = ("balanced", "geometric")
COVERAGE_LABELS = ("W[1,1]", "W[1,2]", "U[1]", "W*", "alpha[1]")


def cluster_distance(z, z_hat):
    """Root mean absolute difference between co-membership counts
    ``Z Z^T`` and ``Z^ Z^^T`` over ordered pairs ``i != j``."""
    z = np.asarray(z, dtype=float)
    z_hat = np.asarray(z_hat, dtype=float)
    n = z.shape[0]
    if z_hat.shape[0] != n:
        raise ValueError("membership matrices must have the same number of rows")
    diff = np.abs(z @ z.T - z_hat @ z_hat.T)
    np.fill_diagonal(diff, 0.0)
    return float(np.sqrt(diff.sum() / (n * (n - 1))))


def threshold_memberships(tau, t=0.5):
    """``Z_iq = 1`` iff ``tau_iq > t``; all-zero rows are outliers."""
    if not 0.0 < t < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    return (np.asarray(tau) > t).astype(np.int8)


def membership_summary(z):
    """Counts of single-class, overlapping and outlier vertices, plus class sizes."""
    z = np.asarray(z)
    k = z.sum(axis=1)
    return {
        "vertices": int(z.shape[0]),
        "single": int(np.sum(k == 1)),
        "overlapping": int(np.sum(k > 1)),
        "outliers": int(np.sum(k == 0)),
        "class_sizes": [int(s) for s in z.sum(axis=0)],
    }


def align_labels(z_true, z_hat):
    """Column permutation of ``z_hat`` closest to ``z_true`` in Hamming
    distance; ``perm[c]`` is the estimated class matched to true class ``c``.

    Requires ``z_hat`` to have at least as many columns as ``z_true``.
    """
    z_true = np.asarray(z_true, dtype=float)
    z_hat = np.asarray(z_hat, dtype=float)
    cost = (z_true[:, :, None] != z_hat[:, None, :]).sum(axis=0)
    rows, cols = optimize.linear_sum_assignment(cost)
    perm = np.empty(z_true.shape[1], dtype=int)
    perm[rows] = cols
    return perm


@dataclass(frozen=True)
class CredibilityInterval:
    label: str
    lower: float
    upper: float
    level: float

    def __post_init__(self):
        if self.lower > self.upper or not 0.0 < self.level < 1.0:
            raise ValueError("invalid credibility interval")

    def contains(self, value):
        return self.lower <= value <= self.upper


def wtilde_labels(q):
    """Names of the vec(W~) entries, in vec order (1-based class indices)."""
    k = q + 1
    labels = []
    for c in range(k):
        for r in range(k):
            if r < q and c < q:
                labels.append(f"W[{r + 1},{c + 1}]")
            elif r < q:
                labels.append(f"U[{r + 1}]")
            elif c < q:
                labels.append(f"V[{c + 1}]")
            else:
                labels.append("W*")
    return labels


def beta_quantile(p, a, b, tol=1e-10):
    """Inverse of the regularized incomplete beta function by bracketing
    root search on ``I_x(a, b) - p``."""
    if p <= 0.0:
        return 0.0
    if p >= 1.0:
        return 1.0
    return optimize.brentq(lambda t: special.betainc(a, b, t) - p, 0.0, 1.0,
                           xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=500)


def credibility_intervals(state, level):
    """Equal-tailed intervals from the variational marginals: Gaussian for
    each W~ entry, Beta(eta_q, zeta_q) for each alpha_q."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    lo_p, hi_p = 0.5 * (1.0 - level), 0.5 * (1.0 + level)
    z = stats.norm.ppf(hi_p)
    sd = np.sqrt(np.clip(np.diag(state.sigma_n), 0.0, None))
    out = [CredibilityInterval(lab, float(m - z * s), float(m + z * s), level)
           for lab, m, s in zip(wtilde_labels(state.q), state.w_n_vec, sd)]
    for c, (a, b) in enumerate(zip(state.eta_n, state.zeta_n)):
        out.append(CredibilityInterval(f"alpha[{c + 1}]", beta_quantile(lo_p, a, b),
                                       beta_quantile(hi_p, a, b), level))
    return out


def true_values(params):
    """Ground-truth values keyed like ``credibility_intervals`` labels."""
    vals = dict(zip(wtilde_labels(params.q), params.wtilde().reshape(-1, order="F")))
    for c, a in enumerate(params.alpha):
        vals[f"alpha[{c + 1}]"] = float(a)
    return vals


@dataclass(frozen=True)
class SimulationCell:
    """One generative setting of the simulation study."""

    lam: float
    q_true: int
    balance: str = "balanced"
    eps: float = 1.0
    w_star: float = -5.5
    n: int = 100
    geometric_a: float = 0.7

    def __post_init__(self):
        if self.balance not in BALANCES:
            raise ValueError(f"balance must be one of {BALANCES}")

    def params(self):
        alpha = (geometric_alpha(self.q_true, self.geometric_a)
                 if self.balance == "geometric" else None)
        return OsbmParameters.structured(self.q_true, self.lam, self.eps,
                                         self.w_star, alpha)

    def seed_key(self):
        return [int(round(self.lam * 1000)), int(self.q_true), BALANCES.index(self.balance),
                int(self.n), int(round(self.eps * 1000)), int(round(-self.w_star * 1000))]


def network_seed(seed, cell, index):
    ss = np.random.SeedSequence([int(seed), *cell.seed_key(), int(index)])
    return int(ss.generate_state(1)[0])


@dataclass
class ConfusionMatrix:
    """Counts of selected Q (columns) per true Q (rows)."""

    q_true_values: list
    q_selected_values: list
    counts: np.ndarray = None

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros((len(self.q_true_values), len(self.q_selected_values)),
                                   dtype=int)

    def add(self, q_true, q_selected):
        self.counts[self.q_true_values.index(q_true),
                    self.q_selected_values.index(q_selected)] += 1

    def row(self, q_true):
        return self.counts[self.q_true_values.index(q_true)]

    def correct(self, q_true):
        if q_true not in self.q_selected_values:
            return 0
        return int(self.row(q_true)[self.q_selected_values.index(q_true)])


@dataclass
class NetworkRecord:
    cell: SimulationCell
    index: int
    seed: int
    q_selected: int = None
    il: float = None
    distance: float = None
    error: str = None


@dataclass
class ConfusionOutcome:
    matrices: dict
    records: list
    failures: dict = field(default_factory=dict)

    def distances(self, cell):
        return [r.distance for r in self.records if r.cell == cell and r.error is None]


def _confusion_task(args):
    cell, index, seed, q_range, restarts, opts, priors = args
    net_seed = network_seed(seed, cell, index)
    x, z = sample_network(cell.params(), cell.n, net_seed)
    rec = NetworkRecord(cell=cell, index=index, seed=net_seed)
    try:
        rep = select_q(x, q_range, restarts=restarts, priors=priors, seed=net_seed,
                       opts=opts)
    except SelectionFailed as exc:
        rec.error = str(exc)
        return rec
    best = rep.best[rep.q_star]
    rec.q_selected = rep.q_star
    rec.il = best.il_osbm
    rec.distance = cluster_distance(z, threshold_memberships(best.state.tau))
    return rec


def _run(tasks, fn, workers):
    if workers and workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


def confusion_experiment(cells, n_networks_per_cell, seed, q_range=range(2, 9),
                         restarts=10, opts=None, workers=1, priors=None):
    """Simulate networks per cell, select Q by IL_osbm and tally.

    One ``ConfusionMatrix`` is produced per ``(lam, balance)`` pair with a
    row per true Q. Networks whose selection fails are counted in
    ``failures`` instead of a matrix row. ``priors`` is ``None`` or a
    picklable callable ``q -> Hyperpriors``.
    """
    q_range = list(q_range)
    opts = opts or FitOptions()
    cells = list(cells)
    tasks = [(cell, i, seed, q_range, restarts, opts, priors)
             for cell in cells for i in range(n_networks_per_cell)]
    records = _run(tasks, _confusion_task, workers)
    matrices, failures = {}, {}
    for cell in cells:
        key = (cell.lam, cell.balance)
        if key not in matrices:
            rows = sorted({c.q_true for c in cells if (c.lam, c.balance) == key})
            matrices[key] = ConfusionMatrix(rows, q_range)
    for rec in records:
        key = (rec.cell.lam, rec.cell.balance)
        if rec.error is not None:
            failures.setdefault(rec.cell, []).append(rec.index)
        else:
            matrices[key].add(rec.cell.q_true, rec.q_selected)
    return ConfusionOutcome(matrices=matrices, records=records, failures=failures)


@dataclass
class CoverageOutcome:
    level: float
    hits: dict
    networks: int
    distances: list

    @property
    def rates(self):
        if not self.networks:
            return {}
        return {lab: h / self.networks for lab, h in self.hits.items()}


def _coverage_task(args):
    cell, index, seed, level, restarts, opts, labels, priors = args
    net_seed = network_seed(seed, cell, index)
    params = cell.params()
    x, z = sample_network(params, cell.n, net_seed)
    pri = priors(cell.q_true) if priors is not None else None
    best, _, _ = fit_cell(x, cell.q_true, restarts, net_seed, priors=pri, opts=opts)
    if best is None:
        return None
    z_hat = threshold_memberships(best.state.tau)
    perm = align_labels(z, z_hat)
    aligned = permute_state(best.state, perm)
    dist = cluster_distance(z, threshold_memberships(aligned.tau))
    truth = true_values(params)
    intervals = {ci.label: ci for ci in credibility_intervals(aligned, level)}
    return {lab: intervals[lab].contains(truth[lab]) for lab in labels}, dist


def coverage_experiment(cell, n_networks, seed, level=0.99, restarts=10, opts=None,
                        labels=COVERAGE_LABELS, workers=1, priors=None):
    """Fraction of networks whose credibility intervals contain the truth.

    Each network is fitted with the true Q (best IL over ``restarts``
    starts); classes are then aligned to the truth by minimum
    Hamming distance before intervals are read off.
    """
    opts = opts or FitOptions()
    tasks = [(cell, i, seed, level, restarts, opts, tuple(labels), priors)
             for i in range(n_networks)]
    results = [r for r in _run(tasks, _coverage_task, workers) if r is not None]
    hits = {lab: 0 for lab in labels}
    for res, _ in results:
        for lab, ok in res.items():
            hits[lab] += int(ok)
    return CoverageOutcome(level=level, hits=hits, networks=len(results),
                           distances=[d for _, d in results])
