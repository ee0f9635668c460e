"""Plain-text outputs: atomic file writes and headered field snapshots.

A snapshot starts with ``#`` header lines::

    # nsfp snapshot
    # dims 64 64
    # spacing 0.0375 0.0375
    # lower -1.2 -1.2
    # time 0.5
    # fields rho u_x u_y E theta Psi theta_tilde

followed by one row per cell in row-major order, one column per field.
"""

from __future__ import annotations

import os
import tempfile

import numpy as np

from .grid import Grid

SNAPSHOT_FIELDS = ("rho", "u", "E", "theta", "Psi", "theta_tilde")


def atomic_write(path, text):
    """Write ``text`` to a temporary file in the target directory, then rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def snapshot_text(fields, grid: Grid, t):
    names, cols = [], []
    for name in SNAPSHOT_FIELDS:
        value = getattr(fields, name)
        if name == "u":
            for k in range(grid.dim):
                names.append(f"u_{'xyz'[k]}")
                cols.append(value[k].ravel())
        else:
            names.append(name)
            cols.append(np.asarray(value).ravel())
    header = [
        "# nsfp snapshot",
        "# dims " + " ".join(str(n) for n in grid.shape),
        "# spacing " + " ".join(repr(h) for h in grid.spacing),
        "# lower " + " ".join(repr(float(v)) for v in grid.lower),
        f"# time {float(t)!r}",
        "# fields " + " ".join(names),
    ]
    body = np.column_stack(cols)
    lines = [" ".join(repr(float(v)) for v in row) for row in body]
    return "\n".join(header + lines) + "\n"


def write_snapshot(path, fields, grid: Grid, t):
    atomic_write(path, snapshot_text(fields, grid, t))


def read_snapshot(path):
    """Return ``(header dict, {field: array shaped like the grid})``."""
    header = {}
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                parts = line[1:].split()
                if len(parts) >= 2:
                    header[parts[0]] = parts[1:]
            elif line.strip():
                rows.append([float(v) for v in line.split()])
    dims = tuple(int(v) for v in header["dims"])
    names = header["fields"]
    data = np.array(rows).reshape(-1, len(names))
    out = {name: data[:, i].reshape(dims) for i, name in enumerate(names)}
    meta = {
        "dims": dims,
        "spacing": tuple(float(v) for v in header["spacing"]),
        "lower": tuple(float(v) for v in header["lower"]),
        "time": float(header["time"][0]),
        "fields": names,
    }
    return meta, out
