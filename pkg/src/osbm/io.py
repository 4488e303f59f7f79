"""Text formats: edge lists, membership CSVs and key-value model documents.

Model documents are line oriented::

    schema = osbm-fit/1
    il_osbm = -1681.2060137067465
    eta_n = 33.5,34.1,32.9
    tau = @grid 100 3
    0.99999,1e-10,1e-10
    ...

Scalars and vectors sit on one line (vectors comma separated); ``@grid R C``
announces ``R`` CSV rows that follow. Floats are written with ``repr`` so
documents round-trip exactly and reruns are byte-identical.
"""

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from . import __version__


class InputError(ValueError):
    """Malformed or inconsistent input file."""

    kind = "InputError"

    def __init__(self, message, line=None, path=None):
        super().__init__(message)
        self.line = line
        self.path = str(path) if path is not None else None

    def record(self):
        rec = {"error": self.kind, "message": str(self)}
        if self.line is not None:
            rec["line"] = self.line
        if self.path is not None:
            rec["path"] = self.path
        return rec


class MalformedLine(InputError):
    kind = "MalformedLine"


class SelfLoop(InputError):
    kind = "SelfLoop"


class EmptyGraph(InputError):
    kind = "EmptyGraph"


def config_digest(config):
    """Short SHA-256 of the canonical JSON form of ``config``."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def provenance(seed, digest):
    return f"osbm {__version__} seed={seed} config={digest}"


def parse_edge_list(path):
    """Read a directed edge list ("src dst" per line, 0-based ids).

    An optional ``nodes N`` line fixes the vertex count; otherwise it is
    ``max id + 1``. Blank lines and ``#`` comments are skipped, duplicate
    edges are harmless, self-loops are rejected.
    """
    path = Path(path)
    n_header = None
    edges = []
    with path.open() as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if parts[0] == "nodes":
                if len(parts) != 2 or not parts[1].isdigit() or n_header is not None:
                    raise MalformedLine(f"bad header {line!r}", lineno, path)
                n_header = int(parts[1])
                continue
            if len(parts) != 2 or not all(p.isdigit() for p in parts):
                raise MalformedLine(f"expected 'src dst', got {line!r}", lineno, path)
            src, dst = int(parts[0]), int(parts[1])
            if src == dst:
                raise SelfLoop(f"self-loop on vertex {src}", lineno, path)
            edges.append((src, dst, lineno))
    n = n_header if n_header is not None else (
        max(max(s, d) for s, d, _ in edges) + 1 if edges else 0)
    if n == 0:
        raise EmptyGraph("graph has no vertices", path=path)
    x = np.zeros((n, n), dtype=np.int8)
    for src, dst, lineno in edges:
        if src >= n or dst >= n:
            raise MalformedLine(f"vertex id exceeds declared count {n}", lineno, path)
        x[src, dst] = 1
    return x


def write_edge_list(path, x, header=None):
    x = np.asarray(x)
    lines = [f"# {header}"] if header else []
    lines.append(f"nodes {x.shape[0]}")
    src, dst = np.nonzero(x)
    lines.extend(f"{s} {d}" for s, d in zip(src, dst) if s != d)
    Path(path).write_text("\n".join(lines) + "\n")


def write_memberships(path, z, header=None):
    z = np.asarray(z, dtype=int)
    with Path(path).open("w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["vertex"] + [f"class{c + 1}" for c in range(z.shape[1])])
        for i, row in enumerate(z):
            w.writerow([i, *row.tolist()])


def read_memberships(path):
    rows = []
    with Path(path).open() as fh:
        data = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    reader = csv.reader(data)
    head = next(reader, None)
    if head is None or head[0] != "vertex":
        raise MalformedLine("membership file needs a 'vertex,...' header", 1, path)
    for lineno, rec in enumerate(reader, start=2):
        try:
            vals = [int(v) for v in rec[1:]]
        except ValueError:
            raise MalformedLine(f"non-integer membership {rec!r}", lineno, path) from None
        if len(vals) != len(head) - 1 or any(v not in (0, 1) for v in vals):
            raise MalformedLine(f"bad membership row {rec!r}", lineno, path)
        rows.append(vals)
    return np.array(rows, dtype=np.int8).reshape(len(rows), len(head) - 1)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_document(path, items, comment=None):
    """Write an ordered mapping to the key-value format (see module doc)."""
    out = [f"# {comment}"] if comment else []
    for key, val in items.items():
        if isinstance(val, np.ndarray) and val.ndim == 2:
            out.append(f"{key} = @grid {val.shape[0]} {val.shape[1]}")
            out.extend(",".join(_fmt(v) for v in row) for row in val)
        elif isinstance(val, (list, tuple, np.ndarray)):
            flat = np.asarray(val).ravel().tolist()
            out.append(f"{key} = " + ",".join(_fmt(v) for v in flat))
        else:
            out.append(f"{key} = {_fmt(val)}")
    Path(path).write_text("\n".join(out) + "\n")


def read_document(path):
    """Parse a key-value document into a dict of strings and float grids."""
    path = Path(path)
    lines = path.read_text().splitlines()
    doc = {}
    i = 0
    while i < len(lines):
        line = lines[i]
        i += 1
        if not line.strip() or line.startswith("#"):
            continue
        if " = " not in line and not line.endswith(" ="):
            raise MalformedLine(f"expected 'key = value', got {line!r}", i, path)
        key, _, val = line.partition(" =")
        val = val.strip()
        if val.startswith("@grid"):
            try:
                _, r, c = val.split()
                r, c = int(r), int(c)
                grid = np.array([[float(v) for v in lines[i + k].split(",")] for k in range(r)])
            except (ValueError, IndexError):
                raise MalformedLine(f"bad grid for {key!r}", i, path) from None
            if grid.size != r * c:
                raise MalformedLine(f"grid {key!r} does not have {r}x{c} values", i, path)
            doc[key] = grid.reshape(r, c)
            i += r
        else:
            doc[key] = val
    return doc


def floats(text):
    return np.array([float(v) for v in text.split(",")]) if text else np.zeros(0)
