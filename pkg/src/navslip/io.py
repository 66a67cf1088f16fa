"""Field snapshots and per-run CSV logs.

Snapshot files start with a short text header and continue with the raw
field as row-major little-endian float64::

    NAVSLIP-SNAPSHOT 1
    shape 64 128
    time 0.25
    quantity omega
    end
    <64 * 128 * 8 bytes>
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .elliptic import Grid, discrete_norm
from .errors import ParseError

MAGIC = "NAVSLIP-SNAPSHOT 1"

LOG_COLUMNS = [
    "step", "t", "dt", "max_omega", "l2_norm", "lp_norm", "influx", "outflux", "viscous", "cfl",
]


def write_snapshot(path, field, t: float, quantity: str = "omega"):
    """Write one field with its header; returns the path."""
    field = np.ascontiguousarray(field, dtype="<f8")
    if " " in quantity or "\n" in quantity:
        raise ValueError("quantity tag must be a single word")
    dims = " ".join(str(n) for n in field.shape)
    header = f"{MAGIC}\nshape {dims}\ntime {float(t)!r}\nquantity {quantity}\nend\n"
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(field.tobytes(order="C"))
    return path


@dataclass
class Snapshot:
    field: np.ndarray
    t: float
    quantity: str


def read_snapshot(path) -> Snapshot:
    """Read a file written by :func:`write_snapshot`.

    Raises
    ------
    ParseError
        On a wrong magic string, a malformed header or a truncated body.
    """
    with open(path, "rb") as fh:
        lines = [fh.readline().decode("ascii", "replace").rstrip("\n") for _ in range(5)]
        body = fh.read()
    if lines[0] != MAGIC:
        raise ParseError(f"{path}: not a snapshot file (magic {lines[0]!r})")
    try:
        key_s, *dims = lines[1].split()
        key_t, t = lines[2].split()
        key_q, quantity = lines[3].split()
        shape = tuple(int(n) for n in dims)
        t = float(t)
    except ValueError as exc:
        raise ParseError(f"{path}: malformed header") from exc
    if (key_s, key_t, key_q, lines[4]) != ("shape", "time", "quantity", "end"):
        raise ParseError(f"{path}: malformed header")
    count = int(np.prod(shape)) if shape else 1
    if len(body) != 8 * count:
        raise ParseError(f"{path}: expected {8 * count} data bytes, found {len(body)}")
    field = np.frombuffer(body, dtype="<f8").reshape(shape).astype(float)
    return Snapshot(field, t, quantity)


class RunLogObserver:
    """Collects per-level norms and the CFL rate during a march."""

    def __init__(self, grid: Grid, p: float = 4.0):
        self.grid = grid
        self.p = float(p)
        self.rows = []
        self._rate = []

    def level(self, lv):
        g = self.grid
        w = lv.omega
        fr, ft = lv.v.flux_r, lv.v.flux_t
        out = np.maximum(fr[1:], 0) + np.maximum(-fr[:-1], 0)
        out += np.maximum(np.roll(ft, -1, axis=1), 0) + np.maximum(-ft, 0)
        self._rate.append(float(np.max(out / g.cell_area)))
        self.rows.append(
            {
                "step": lv.n,
                "t": lv.t,
                "max_omega": float(np.max(np.abs(w))),
                "l2_norm": discrete_norm(w, g, 2),
                "lp_norm": discrete_norm(w, g, self.p),
            }
        )

    def table(self, steps, budget=None):
        """Rows for :func:`write_run_log`; ``dt`` and ``cfl`` refer to the step leaving each level."""
        rows = []
        for n, row in enumerate(self.rows):
            dt = steps[n].dt if n < len(steps) else 0.0
            full = dict(row, dt=dt, cfl=dt * self._rate[n])
            if budget is not None:
                full.update(
                    influx=budget.influx[n], outflux=budget.outflux[n], viscous=budget.viscous[n]
                )
            else:
                full.update(influx=0.0, outflux=0.0, viscous=0.0)
            rows.append(full)
        return rows


def _cell(value):
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_run_log(path, rows):
    """CSV with :data:`LOG_COLUMNS`; floats are written with ``repr`` for exact round trips."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
        for row in rows:
            writer.writerow([_cell(row[c]) for c in LOG_COLUMNS])
    return Path(path)
