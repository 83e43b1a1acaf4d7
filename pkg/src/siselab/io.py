"""File formats: system JSON, trajectory CSV and estimate CSV.

Numbers are written with 17 significant digits so every float64 survives a
write/read round trip unchanged.
"""

import csv
import json

import numpy as np

from .errors import FileFormatError, ShapeError
from .model import LinearSystem, Trajectory

SYSTEM_KEYS = ("A", "G", "C", "H", "Q", "R", "B", "D")
REQUIRED_KEYS = ("A", "G", "C")
FLOAT_FORMAT = ".17g"


def _fmt(value):
    return format(float(value), FLOAT_FORMAT)


def read_json(path):
    """Parse a JSON file, reporting the line and column of any syntax error."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FileFormatError(exc.msg, path=str(path), line=exc.lineno,
                              column=exc.colno) from exc


def system_from_dict(data, path=None):
    if not isinstance(data, dict):
        raise FileFormatError("system file must hold a JSON object", path=path)
    unknown = sorted(set(data) - set(SYSTEM_KEYS))
    if unknown:
        raise FileFormatError(f"unknown keys {unknown}", path=path)
    missing = [k for k in REQUIRED_KEYS if k not in data]
    if missing:
        raise FileFormatError(f"missing keys {missing}", path=path)
    try:
        return LinearSystem(**{k: data[k] for k in SYSTEM_KEYS if k in data})
    except (ShapeError, ValueError, TypeError) as exc:
        raise FileFormatError(str(exc), path=path) from exc


def load_system(path):
    """Read a :class:`LinearSystem` from a JSON file.

    Missing ``H`` and ``Q`` default to zeros and ``R`` to the identity.
    """
    return system_from_dict(read_json(path), path=str(path))


def save_system(sys, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(sys.to_dict(), fh, indent=2)
        fh.write("\n")


def write_rows(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def _names(prefix, k):
    return [f"{prefix}_{i + 1}" for i in range(k)]


def save_trajectory(traj, path):
    """Write ``t,x_1..x_n,d_1..d_m,y_1..y_p`` rows for ``t = 0..horizon``."""
    X, Dd, Y = traj.states, traj.disturbances, traj.measurements
    header = ["t"] + _names("x", X.shape[1]) + _names("d", Dd.shape[1]) \
        + _names("y", Y.shape[1])
    rows = ([str(t)] + [_fmt(v) for v in np.concatenate([X[t], Dd[t], Y[t]])]
            for t in range(traj.horizon + 1))
    write_rows(path, header, rows)


def _read_table(path):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FileFormatError("empty CSV file", path=str(path)) from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FileFormatError(f"expected {len(header)} fields, got {len(row)}",
                                      path=str(path), line=lineno, column=1)
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise FileFormatError(str(exc), path=str(path), line=lineno,
                                      column=1) from exc
    return header, np.array(rows, dtype=float).reshape(len(rows), len(header))


def _columns(header, table, prefix):
    idx = [i for i, h in enumerate(header) if h.rsplit("_", 1)[0] == prefix]
    return table[:, idx]


def load_trajectory(path):
    """Read a trajectory CSV. ``x`` and ``d`` columns may be absent (measurement-only files)."""
    header, table = _read_table(path)
    if not header or header[0] != "t":
        raise FileFormatError("first column must be 't'", path=str(path), line=1, column=1)
    Y = _columns(header, table, "y")
    if Y.shape[1] == 0:
        raise FileFormatError("no y_* columns", path=str(path), line=1, column=1)
    N = len(table) - 1
    X = _columns(header, table, "x")
    Dd = _columns(header, table, "d")
    return Trajectory(horizon=N, states=X, disturbances=Dd, measurements=Y)


def load_measurements(path):
    return load_trajectory(path).measurements


def save_estimates(est, path):
    """Write ``t,xhat_*,dhat_*,trP,innov_norm`` rows.

    When the input estimate on row ``t`` refers to time ``t - 1`` (the
    zero-feedthrough variants) its columns are named ``dhat_prev_*``.
    """
    n, m = est.xhat.shape[1], est.dhat.shape[1]
    dname = "dhat_prev" if est.d_offset == -1 else "dhat"
    header = ["t"] + _names("xhat", n) + _names(dname, m) + ["trP", "innov_norm"]
    trP = est.trP
    innov = np.linalg.norm(est.innovations, axis=1)
    rows = ([str(int(t))] + [_fmt(v) for v in np.concatenate([est.xhat[k], est.dhat[k]])]
            + [_fmt(trP[k]), _fmt(innov[k])] for k, t in enumerate(est.t))
    write_rows(path, header, rows)


def load_estimates(path):
    header, table = _read_table(path)
    return {
        "t": table[:, 0].astype(int),
        "xhat": _columns(header, table, "xhat"),
        "dhat": (_columns(header, table, "dhat_prev") if "dhat_prev_1" in header
                 else _columns(header, table, "dhat")),
        "d_offset": -1 if "dhat_prev_1" in header else 0,
        "trP": table[:, header.index("trP")],
        "innov_norm": table[:, header.index("innov_norm")],
    }


def save_gains(est, path):
    """Per-step gains as JSON lines: ``{"t": .., "K": [[..]], "M": [[..]]}``."""
    with open(path, "w", encoding="utf-8") as fh:
        for k, t in enumerate(est.t):
            rec = {"t": int(t)}
            if est.K is not None:
                rec["K"] = est.K[k].tolist()
            if est.M is not None:
                rec["M"] = est.M[k].tolist()
            fh.write(json.dumps(rec) + "\n")
