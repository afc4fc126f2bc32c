"""Dataset and result persistence: CSV panels, edge-list graphs, JSON
reports and run manifests.

Floats are written with 17 significant digits so a write-read round trip is
lossless for binary64 values.
"""

import csv
import hashlib
import json
import warnings

import numpy as np

from .dgp import PanelDataset
from .errors import SchemaError
from .graph import NetworkGraph

_REQUIRED = ("id", "D", "Y0", "Y1", "W", "Z")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# panel CSV


def write_panel(ds: PanelDataset, path, include_latent: bool = False):
    """Write a panel to CSV; the ground-truth effect rides in a comment line."""
    if ds.n < 2:
        raise ValueError("refusing to write a panel with fewer than 2 units")
    d = ds.X.shape[1]
    with_latent = include_latent and ds.U is not None
    header = list(_REQUIRED) + [f"X{j + 1}" for j in range(d)]
    if with_latent:
        header += [f"U{j + 1}" for j in range(ds.U.shape[1])]
    with open(path, "w", newline="") as fh:
        if ds.true_tau is not None:
            fh.write(f"# true_tau={_fmt(ds.true_tau)}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(ds.n):
            row = [
                str(i),
                str(int(ds.D[i])),
                _fmt(ds.Y0[i]),
                _fmt(ds.Y1[i]),
                _fmt(ds.W[i]),
                _fmt(ds.Z[i]),
            ] + [_fmt(v) for v in ds.X[i]]
            if with_latent:
                row += [_fmt(v) for v in ds.U[i]]
            writer.writerow(row)


def _parse_float(text, row, col):
    try:
        v = float(text)
    except ValueError:
        raise SchemaError(f"row {row}: column {col!r} is not numeric: {text!r}")
    if not np.isfinite(v):
        raise SchemaError(f"row {row}: column {col!r} is not finite: {text!r}")
    return v


def read_panel(path) -> PanelDataset:
    """Read and validate a panel CSV; rows are reordered by unit id."""
    true_tau = None
    with open(path, "r", newline="") as fh:
        first = fh.readline()
        if first.startswith("#"):
            key, _, val = first[1:].strip().partition("=")
            if key.strip() == "true_tau":
                true_tau = float(val)
            header_line = fh.readline()
        else:
            header_line = first
        header = next(csv.reader([header_line]))
        for col in _REQUIRED:
            if col not in header:
                raise SchemaError(f"missing required column {col!r}")
        x_cols = [c for c in header if c.startswith("X") and c[1:].isdigit()]
        if not x_cols:
            raise SchemaError("no covariate columns X1..Xd found")
        d = len(x_cols)
        if sorted(int(c[1:]) for c in x_cols) != list(range(1, d + 1)):
            raise SchemaError(f"covariate columns must be X1..X{d}, got {sorted(x_cols)}")
        u_cols = [c for c in header if c.startswith("U") and c[1:].isdigit()]
        idx = {c: header.index(c) for c in header}

        rows = list(csv.reader(fh))
    n = len(rows)
    if n < 2:
        raise SchemaError(f"panel must have at least 2 rows, got {n}")

    ids = np.empty(n, dtype=np.int64)
    D = np.empty(n)
    Y0 = np.empty(n)
    Y1 = np.empty(n)
    W = np.empty(n)
    Z = np.empty(n)
    X = np.empty((n, d))
    U = np.empty((n, len(u_cols))) if u_cols else None
    for r, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise SchemaError(f"row {r}: expected {len(header)} fields, got {len(row)}")
        try:
            ids[r - 1] = int(row[idx["id"]])
        except ValueError:
            raise SchemaError(f"row {r}: column 'id' is not an integer: {row[idx['id']]!r}")
        dval = row[idx["D"]]
        if dval not in ("0", "1"):
            raise SchemaError(f"row {r}: column 'D' must be 0 or 1, got {dval!r}")
        D[r - 1] = float(dval)
        Y0[r - 1] = _parse_float(row[idx["Y0"]], r, "Y0")
        Y1[r - 1] = _parse_float(row[idx["Y1"]], r, "Y1")
        W[r - 1] = _parse_float(row[idx["W"]], r, "W")
        Z[r - 1] = _parse_float(row[idx["Z"]], r, "Z")
        for j in range(d):
            X[r - 1, j] = _parse_float(row[idx[f"X{j + 1}"]], r, f"X{j + 1}")
        if U is not None:
            for j in range(len(u_cols)):
                U[r - 1, j] = _parse_float(row[idx[f"U{j + 1}"]], r, f"U{j + 1}")

    order = np.argsort(ids, kind="stable")
    sorted_ids = ids[order]
    dupes = sorted_ids[:-1][sorted_ids[1:] == sorted_ids[:-1]]
    if dupes.size:
        raise SchemaError(f"duplicate unit id {int(dupes[0])}")
    if sorted_ids[0] != 0 or sorted_ids[-1] != n - 1:
        raise SchemaError(f"unit ids must be 0..{n - 1} exactly once each")
    return PanelDataset.from_arrays(
        D[order],
        Y0[order],
        Y1[order],
        X[order],
        W[order],
        Z[order],
        U=None if U is None else U[order],
        true_tau=true_tau,
    )


# ---------------------------------------------------------------------------
# edge lists


def write_edgelist(g: NetworkGraph, path):
    """One 'i j' line per edge, each undirected edge written once."""
    iu, ju = np.nonzero(np.triu(g.adjacency, k=1))
    with open(path, "w") as fh:
        for i, j in zip(iu, ju):
            fh.write(f"{i} {j}\n")


def read_edgelist(path, n: int) -> NetworkGraph:
    """Read whitespace-separated 0-based pairs; symmetrizes, drops self-loops."""
    A = np.zeros((n, n), dtype=np.uint8)
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise SchemaError(f"line {lineno}: expected 'i j', got {line.rstrip()!r}")
            try:
                i, j = int(parts[0]), int(parts[1])
            except ValueError:
                raise SchemaError(f"line {lineno}: indices must be integers")
            if not (0 <= i < n and 0 <= j < n):
                raise SchemaError(f"line {lineno}: index out of range for n={n}")
            if i == j:
                continue
            A[i, j] = A[j, i] = 1
    return NetworkGraph.from_adjacency(A)


# ---------------------------------------------------------------------------
# negative controls from treatment and network


def derive_negative_controls(D, g: NetworkGraph):
    """Treated shares among neighbors (W) and among non-neighbors (Z).

    A unit is excluded from its own non-neighbor set. Empty neighbor or
    non-neighbor sets yield 0 with a warning.
    """
    D = np.asarray(D, dtype=np.float64)
    if g.n < 3:
        raise ValueError("need at least 3 units to form non-neighbor shares")
    if not np.isin(D, (0, 1)).all():
        raise ValueError("treatment vector must be binary")
    Af = g.adjacency.astype(np.float64)
    deg = g.degrees.astype(np.float64)
    W = np.divide(Af @ D, deg, out=np.zeros(g.n), where=deg > 0)
    non_count = g.n - 1 - deg
    non_sum = D.sum() - Af @ D - D
    Z = np.divide(non_sum, non_count, out=np.zeros(g.n), where=non_count > 0)
    if (deg == 0).any():
        warnings.warn("isolated units have no neighbors; their W is set to 0")
    if (non_count == 0).any():
        warnings.warn("fully connected units have no non-neighbors; their Z is set to 0")
    return W, Z


# ---------------------------------------------------------------------------
# reports and manifests


def write_report(report, path):
    """Serialize a report or summary object with a stable key order."""
    with open(path, "w") as fh:
        fh.write(report.to_json())
        fh.write("\n")


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, config: dict, inputs: dict, outputs: dict, wall_clock: float):
    """Record everything needed to replay a run: config, input and output
    hashes, library versions and the elapsed time."""
    import netdid

    manifest = {
        "config": config,
        "inputs": {name: file_sha256(p) for name, p in inputs.items()},
        "outputs": {name: file_sha256(p) for name, p in outputs.items()},
        "versions": {
            "netdid": getattr(netdid, "__version__", "0"),
            "numpy": np.__version__,
        },
        "wall_clock_seconds": wall_clock,
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return manifest
