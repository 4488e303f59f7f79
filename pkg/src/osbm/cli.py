"""Command-line front end: generate, fit, select, evaluate, experiment.

Exit codes: 0 success, 2 input error, 3 numerical failure, 4 selection
failure. Failures print one JSON record on stderr.
"""

import argparse
import csv
import functools
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, io
from .mathkit import SingularMatrix
from .metrics import (
    BALANCES,
    SimulationCell,
    cluster_distance,
    confusion_experiment,
    coverage_experiment,
    membership_summary,
    threshold_memberships,
)
from .model import Hyperpriors, sample_network
from .selection import INITIALIZERS, SelectionFailed, fit_cell, select_q
from .vbem import FitOptions, NonFinite, VariationalState

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_SELECTION = 4

FIT_SCHEMA = "osbm-fit/1"
SELECT_SCHEMA = "osbm-select/1"
EVAL_SCHEMA = "osbm-eval/1"
PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


class CliError(Exception):
    def __init__(self, kind, message, code):
        super().__init__(message)
        self.kind = kind
        self.code = code

    def record(self):
        return {"error": self.kind, "message": str(self)}


@dataclass
class ExperimentConfig:
    """Settings of a simulation study; ``to_text``/``from_text`` round-trip."""

    kind: str = "confusion"
    lams: list = field(default_factory=lambda: [6.0])
    eps: float = 1.0
    w_star: float = -5.5
    q_true: list = field(default_factory=lambda: [2, 3])
    balances: list = field(default_factory=lambda: ["balanced"])
    geometric_a: float = 0.7
    n: int = 100
    n_networks: int = 20
    q_min: int = 2
    q_max: int = 8
    restarts: int = 10
    eta0: float = 0.5
    zeta0: float = 0.5
    a0: float = 1.0
    b0: float = 1.0
    level: float = 0.99
    threshold: float = 0.5
    seed: int = 0
    out: str = ""

    def __post_init__(self):
        self.lams = [float(v) for v in self.lams]
        self.q_true = [int(v) for v in self.q_true]
        self.balances = [str(v) for v in self.balances]
        problems = []
        if self.kind not in ("confusion", "coverage"):
            problems.append("kind must be 'confusion' or 'coverage'")
        if not self.lams or not self.q_true or not self.balances:
            problems.append("lams, q_true and balances must be non-empty")
        if any(b not in BALANCES for b in self.balances):
            problems.append(f"balances must be drawn from {BALANCES}")
        if any(q < 1 for q in self.q_true):
            problems.append("q_true entries must be >= 1")
        if self.n < 2:
            problems.append("n must be >= 2")
        if self.n_networks < 0:
            problems.append("n_networks must be >= 0")
        if not 1 <= self.q_min <= self.q_max:
            problems.append("need 1 <= q_min <= q_max")
        if self.restarts < 1:
            problems.append("restarts must be >= 1")
        if min(self.eta0, self.zeta0, self.a0, self.b0) <= 0:
            problems.append("prior constants must be positive")
        if not 0 < self.level < 1 or not 0 < self.threshold < 1:
            problems.append("level and threshold must lie in (0, 1)")
        if not 0 < self.geometric_a:
            problems.append("geometric_a must be positive")
        if problems:
            raise ValueError("; ".join(problems))

    def to_text(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_text(cls, text):
        data = json.loads(text)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**data)

    def cells(self):
        return [SimulationCell(lam=lam, q_true=q, balance=b, eps=self.eps,
                               w_star=self.w_star, n=self.n, geometric_a=self.geometric_a)
                for lam in self.lams for b in self.balances for q in self.q_true]

    def priors(self):
        return functools.partial(Hyperpriors.default, eta0=self.eta0, zeta0=self.zeta0,
                                 a0=self.a0, b0=self.b0)

    def digest(self):
        payload = asdict(self)
        payload.pop("out")
        return io.config_digest(payload)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("UsageError", message, EXIT_INPUT)


def _graph_digest(x):
    return hashlib.sha256(np.ascontiguousarray(x, dtype=np.int8).tobytes()).hexdigest()[:16]


def _prior_args(p):
    p.add_argument("--eta0", type=float, default=0.5)
    p.add_argument("--zeta0", type=float, default=0.5)
    p.add_argument("--a0", type=float, default=1.0)
    p.add_argument("--b0", type=float, default=1.0)


def _priors(args):
    return functools.partial(Hyperpriors.default, eta0=args.eta0, zeta0=args.zeta0,
                             a0=args.a0, b0=args.b0)


def _prior_config(args):
    return {"eta0": args.eta0, "zeta0": args.zeta0, "a0": args.a0, "b0": args.b0}


def build_parser():
    parser = _Parser(prog="osbm", description="Bayesian overlapping stochastic block model")
    parser.add_argument("--version", action="version", version=f"osbm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="sample a network and its memberships")
    g.add_argument("--lam", type=float, default=6.0)
    g.add_argument("--eps", type=float, default=1.0)
    g.add_argument("--w-star", type=float, default=-5.5)
    g.add_argument("--q", type=int, default=3)
    g.add_argument("--n", type=int, default=100)
    g.add_argument("--balance", choices=BALANCES, default="balanced")
    g.add_argument("--geometric-a", type=float, default=0.7)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output directory")

    f = sub.add_parser("fit", help="fit a fixed Q and write a fit document")
    f.add_argument("graph")
    f.add_argument("--q", type=int, required=True)
    f.add_argument("--restarts", type=int, default=10)
    f.add_argument("--init", choices=sorted(INITIALIZERS), default="nmf")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", required=True)
    _prior_args(f)

    s = sub.add_parser("select", help="choose Q by IL_osbm")
    s.add_argument("graph")
    s.add_argument("--q-min", type=int, default=2)
    s.add_argument("--q-max", type=int, default=8)
    s.add_argument("--restarts", type=int, default=10)
    s.add_argument("--init", choices=sorted(INITIALIZERS), default="nmf")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--fit-out", help="also write the fit document of the chosen Q")
    _prior_args(s)

    e = sub.add_parser("evaluate", help="summarize a fit, optionally against the truth")
    e.add_argument("fit")
    e.add_argument("--truth", help="membership CSV written by generate")
    e.add_argument("--graph", help="edge list, used for the DOT export")
    e.add_argument("--threshold", type=float, default=0.5)
    e.add_argument("--out", required=True)
    e.add_argument("--dot", help="write a DOT graph with membership-colored nodes")

    x = sub.add_parser("experiment", help="run a confusion or coverage study")
    x.add_argument("config", help="ExperimentConfig JSON file")
    x.add_argument("--out", help="output directory (overrides the config)")
    x.add_argument("--workers", type=int, default=1)
    return parser


# generate

def cmd_generate(args):
    cell = SimulationCell(lam=args.lam, q_true=args.q, balance=args.balance, eps=args.eps,
                          w_star=args.w_star, n=args.n, geometric_a=args.geometric_a)
    config = {"command": "generate", **asdict(cell), "seed": args.seed}
    head = io.provenance(args.seed, io.config_digest(config))
    x, z = sample_network(cell.params(), cell.n, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_edge_list(out / "graph.edges", x, head)
    io.write_memberships(out / "truth.csv", z, head)


# fit documents

def fit_items(result, meta):
    st = result.state
    items = {"schema": FIT_SCHEMA, "tool_version": __version__}
    items.update(meta)
    items.update({
        "n": st.n, "q": st.q,
        "il_osbm": result.il_osbm,
        "converged": result.converged,
        "iterations": result.iterations,
        "tau_unconverged": result.tau_unconverged,
        "a_n": st.a_n, "b_n": st.b_n,
        "eta_n": st.eta_n, "zeta_n": st.zeta_n,
        "w_n_vec": st.w_n_vec,
        "bound_trace": np.asarray(result.bound_trace),
        "sigma_n": st.sigma_n,
        "tau": st.tau,
        "xi": st.xi,
    })
    return items


def read_fit(path):
    """Load a fit document; returns ``(VariationalState, doc)``."""
    doc = io.read_document(path)
    if doc.get("schema") != FIT_SCHEMA:
        raise io.MalformedLine(f"not a {FIT_SCHEMA} document", path=path)
    try:
        state = VariationalState(
            tau=doc["tau"], eta_n=io.floats(doc["eta_n"]), zeta_n=io.floats(doc["zeta_n"]),
            w_n_vec=io.floats(doc["w_n_vec"]), sigma_n=doc["sigma_n"],
            a_n=float(doc["a_n"]), b_n=float(doc["b_n"]), xi=doc["xi"])
    except (KeyError, ValueError) as exc:
        raise io.MalformedLine(f"incomplete fit document: {exc}", path=path) from None
    return state, doc


def cmd_fit(args):
    x = io.parse_edge_list(args.graph)
    if not 1 <= args.q <= x.shape[0] or args.restarts < 1:
        raise CliError("UsageError", "need 1 <= q <= N and restarts >= 1", EXIT_INPUT)
    opts = FitOptions()
    config = {"command": "fit", "graph": _graph_digest(x), "q": args.q,
              "restarts": args.restarts, "init": args.init, "seed": args.seed,
              "options": asdict(opts), **_prior_config(args)}
    digest = io.config_digest(config)
    best, ils, failures = fit_cell(x, args.q, args.restarts, args.seed,
                                   _priors(args)(args.q), opts, args.init)
    if best is None:
        raise CliError("NumericalFailure", "; ".join(failures), EXIT_NUMERIC)
    meta = {"seed": args.seed, "config_digest": digest, "restarts": args.restarts,
            "restart_il": np.array(ils), "failed_restarts": len(failures)}
    io.write_document(args.out, fit_items(best, meta), io.provenance(args.seed, digest))


def cmd_select(args):
    x = io.parse_edge_list(args.graph)
    if not 1 <= args.q_min <= args.q_max or args.q_max > x.shape[0] or args.restarts < 1:
        raise CliError("UsageError", "need 1 <= q-min <= q-max <= N and restarts >= 1",
                       EXIT_INPUT)
    opts = FitOptions()
    q_range = list(range(args.q_min, args.q_max + 1))
    config = {"command": "select", "graph": _graph_digest(x), "q_range": q_range,
              "restarts": args.restarts, "init": args.init, "seed": args.seed,
              "options": asdict(opts), **_prior_config(args)}
    digest = io.config_digest(config)
    rep = select_q(x, q_range, restarts=args.restarts, priors=_priors(args),
                   seed=args.seed, opts=opts, init=args.init)
    head = io.provenance(args.seed, digest)
    items = {"schema": SELECT_SCHEMA, "tool_version": __version__, "seed": args.seed,
             "config_digest": digest, "n": x.shape[0], "q_range": q_range,
             "restarts": args.restarts, "q_star": rep.q_star}
    nan = float("nan")
    items["best_il"] = np.array([rep.best[q].il_osbm if q in rep.best else nan
                                 for q in q_range])
    items["restart_il"] = np.array([rep.restart_il[q] for q in q_range])
    items["failed_restarts"] = [len(rep.failures.get(q, [])) for q in q_range]
    io.write_document(args.out, items, head)
    if args.fit_out:
        meta = {"seed": args.seed, "config_digest": digest, "restarts": args.restarts,
                "restart_il": np.array(rep.restart_il[rep.q_star]),
                "failed_restarts": len(rep.failures.get(rep.q_star, []))}
        io.write_document(args.fit_out, fit_items(rep.best[rep.q_star], meta), head)


# evaluate

def write_dot(path, z, x=None, header=None):
    """Directed graph; a node's fill lists the colors of its classes
    (outliers stay white)."""
    lines = [f"// {header}"] if header else []
    lines.append("digraph osbm {")
    lines.append('  node [style=filled, shape=circle];')
    for i, row in enumerate(np.asarray(z)):
        classes = np.flatnonzero(row)
        if classes.size == 0:
            color = "white"
        else:
            color = ":".join(PALETTE[c % len(PALETTE)] for c in classes)
        style = ', style="wedged"' if classes.size > 1 else ""
        label = ",".join(str(c + 1) for c in classes) or "-"
        lines.append(f'  {i} [fillcolor="{color}"{style}, tooltip="{label}"];')
    if x is not None:
        for s, d in zip(*np.nonzero(x)):
            lines.append(f"  {s} -> {d};")
    lines.append("}")
    Path(path).write_text("\n".join(lines) + "\n")


def cmd_evaluate(args):
    if not 0 < args.threshold < 1:
        raise CliError("UsageError", "threshold must lie in (0, 1)", EXIT_INPUT)
    state, doc = read_fit(args.fit)
    z_hat = threshold_memberships(state.tau, args.threshold)
    summary = membership_summary(z_hat)
    seed = doc.get("seed", "")
    config = {"command": "evaluate", "fit_digest": doc.get("config_digest", ""),
              "threshold": args.threshold}
    items = {"schema": EVAL_SCHEMA, "tool_version": __version__, "seed": seed}
    if args.truth:
        z = io.read_memberships(args.truth)
        if z.shape[0] != state.n:
            raise io.MalformedLine("truth and fit disagree on the vertex count",
                                   path=args.truth)
        config["truth"] = _graph_digest(z)
        dist = cluster_distance(z, z_hat)
    digest = io.config_digest(config)
    items["config_digest"] = digest
    items["threshold"] = args.threshold
    if args.truth:
        items["cluster_distance"] = dist
    items.update({k: v for k, v in summary.items()})
    items["memberships"] = z_hat
    head = io.provenance(seed, digest)
    io.write_document(args.out, items, head)
    if args.dot:
        x = io.parse_edge_list(args.graph) if args.graph else None
        if x is not None and x.shape[0] != state.n:
            raise io.MalformedLine("graph and fit disagree on the vertex count",
                                   path=args.graph)
        write_dot(args.dot, z_hat, x, head)


# experiment

def _write_csv(path, header, rows, comment):
    with Path(path).open("w", newline="") as fh:
        fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([io._fmt(v) if v is not None else "" for v in row])


def _cell_tag(cell):
    return f"lam{cell.lam:g}_{cell.balance}_q{cell.q_true}"


def cmd_experiment(args):
    try:
        cfg = ExperimentConfig.from_text(Path(args.config).read_text())
    except (ValueError, TypeError) as exc:
        raise CliError("ConfigError", str(exc), EXIT_INPUT) from None
    if args.workers < 1:
        raise CliError("UsageError", "workers must be >= 1", EXIT_INPUT)
    out = Path(args.out or cfg.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    digest = cfg.digest()
    head = io.provenance(cfg.seed, digest)
    (out / "config.json").write_text(cfg.to_text())
    cells = cfg.cells()
    if cfg.kind == "confusion":
        q_range = list(range(cfg.q_min, cfg.q_max + 1))
        res = confusion_experiment(cells, cfg.n_networks, cfg.seed, q_range, cfg.restarts,
                                   workers=args.workers, priors=cfg.priors())
        for cell in cells:
            recs = [r for r in res.records if r.cell == cell]
            _write_csv(out / f"networks_{_cell_tag(cell)}.csv",
                       ["index", "network_seed", "q_selected", "il_osbm",
                        "cluster_distance", "error"],
                       [[r.index, r.seed, r.q_selected, r.il, r.distance, r.error]
                        for r in recs], head)
            counts = np.zeros(len(q_range), dtype=int)
            for r in recs:
                if r.error is None:
                    counts[q_range.index(r.q_selected)] += 1
            rows = [[cell.q_true, *counts.tolist()]] if recs else []
            _write_csv(out / f"confusion_{_cell_tag(cell)}.csv",
                       ["q_true"] + [f"q{q}" for q in q_range], rows, head)
    else:
        for cell in cells:
            res = coverage_experiment(cell, cfg.n_networks, cfg.seed, cfg.level,
                                      cfg.restarts, workers=args.workers,
                                      priors=cfg.priors())
            rows = [[lab, h, res.networks, h / res.networks] for lab, h in res.hits.items()
                    ] if res.networks else []
            _write_csv(out / f"coverage_{_cell_tag(cell)}.csv",
                       ["parameter", "hits", "networks", "rate"], rows, head)
            _write_csv(out / f"distances_{_cell_tag(cell)}.csv", ["cluster_distance"],
                       [[d] for d in res.distances], head)


COMMANDS = {"generate": cmd_generate, "fit": cmd_fit, "select": cmd_select,
            "evaluate": cmd_evaluate, "experiment": cmd_experiment}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        COMMANDS[args.command](args)
    except CliError as exc:
        return _fail(exc.record(), exc.code)
    except io.InputError as exc:
        return _fail(exc.record(), EXIT_INPUT)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        return _fail({"error": type(exc).__name__, "message": str(exc)}, EXIT_INPUT)
    except (SingularMatrix, NonFinite) as exc:
        rec = {"error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, NonFinite):
            rec["diagnostics"] = exc.diagnostics
        return _fail(rec, EXIT_NUMERIC)
    except SelectionFailed as exc:
        return _fail({"error": "SelectionFailed", "message": str(exc)}, EXIT_SELECTION)
    return EXIT_OK


def _fail(record, code):
    record["exit_code"] = code
    sys.stderr.write(json.dumps(record, sort_keys=True, default=str) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
