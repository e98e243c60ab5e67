"""Post-processing analytics over traces.

Produces the per-vehicle series (normalized coordinate, speed ratio,
minimum distance to other traffic), the cell-grid averages used for the
macroscopic heatmaps, and the pooled summary. Output files form the
contract consumed by the plotting frontend:

  series.csv   vehicle, k, p_bar, v_bar_pct, d_min_m, u_ms2
  cells.csv    cell_x, cell_y, mean_v_kmh, mean_u_ms2, count
  summary.json pooled averages, counts, quantiles

An absent minimum distance (no other vehicle present) is an empty CSV
field, never a sentinel number.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfigError
from .sim import TraceLog, detect_collisions

CELL_SIZE = 2.5  # m, macroscopic fragment side


@dataclass
class VehicleSeries:
    vid: int
    ticks: list
    p_bar: list       # position / final position, in [0, 1]
    v_bar: list       # speed as percent of desired speed
    d_min: list       # m; None when no other vehicle is present
    u: list           # m/s^2


def _rows_by_tick(trace: TraceLog) -> dict:
    by_tick = {}
    for r in trace.rows:
        by_tick.setdefault(r.k, []).append(r)
    return by_tick


def _min_distances(trace: TraceLog) -> dict:
    """(k, vid) -> min distance to any other vehicle at k, or None."""
    out = {}
    for k, rows in _rows_by_tick(trace).items():
        if len(rows) == 1:
            out[(k, rows[0].vid)] = None
            continue
        coords = np.array([[r.x, r.y] for r in rows])
        diff = coords[:, None, :] - coords[None, :, :]
        dist = np.hypot(diff[..., 0], diff[..., 1])
        np.fill_diagonal(dist, np.inf)
        mins = dist.min(axis=1)
        for r, d in zip(rows, mins):
            out[(k, r.vid)] = float(d)
    return out


def completed_vehicles(trace: TraceLog) -> list:
    return sorted({r.vid for r in trace.rows if "completion" in r.events})


def vehicle_series(trace: TraceLog, vid: int, dmin_cache: dict | None = None) -> VehicleSeries:
    rows = sorted((r for r in trace.rows if r.vid == vid), key=lambda r: r.k)
    if not rows:
        raise InvalidConfigError(f"vehicle {vid} not in trace")
    if "completion" not in rows[-1].events:
        raise InvalidConfigError(f"vehicle {vid} did not complete its path")
    p_max = max(r.p for r in rows)
    if p_max <= 0:
        raise InvalidConfigError(f"vehicle {vid} has a zero-length trajectory")
    dmin = dmin_cache if dmin_cache is not None else _min_distances(trace)
    return VehicleSeries(
        vid=vid,
        ticks=[r.k for r in rows],
        p_bar=[r.p / p_max for r in rows],
        v_bar=[100.0 * r.v / r.v_r for r in rows],
        d_min=[dmin.get((r.k, r.vid)) for r in rows],
        u=[r.u for r in rows],
    )


def all_series(trace: TraceLog) -> list:
    dmin = _min_distances(trace)
    return [vehicle_series(trace, vid, dmin) for vid in completed_vehicles(trace)]


@dataclass
class CellGrid:
    cell_size: float
    cells: dict = field(default_factory=dict)  # (ix, iy) -> [sum_v, sum_u, n]

    def mean_speed_kmh(self, key):
        s = self.cells[key]
        return 3.6 * s[0] / s[2]

    def mean_accel(self, key):
        s = self.cells[key]
        return s[1] / s[2]


def cell_averages(trace: TraceLog, cell_size: float = CELL_SIZE) -> CellGrid:
    grid = CellGrid(cell_size)
    for r in trace.rows:
        key = (math.floor(r.x / cell_size), math.floor(r.y / cell_size))
        acc = grid.cells.setdefault(key, [0.0, 0.0, 0])
        acc[0] += r.v
        acc[1] += r.u
        acc[2] += 1
    return grid


def summary(trace: TraceLog) -> dict:
    """Sample-weighted macroscopic aggregates over the whole trace."""
    if not trace.rows:
        return {
            "avg_speed_kmh": None, "avg_accel_ms2": None,
            "samples": 0, "completed": trace.completed,
            "violations": len(detect_collisions(trace)),
            "speed_ratio_pct_quantiles": {},
            "min_distance_m": None,
        }
    v = np.array([r.v for r in trace.rows])
    u = np.array([r.u for r in trace.rows])
    ratios = np.array([100.0 * r.v / r.v_r for r in trace.rows])
    dmin = [d for d in _min_distances(trace).values() if d is not None]
    qs = {q: float(np.quantile(ratios, q / 100)) for q in (0, 5, 25, 50, 75, 95, 100)}
    return {
        "avg_speed_kmh": float(3.6 * v.mean()),
        "avg_accel_ms2": float(u.mean()),
        "samples": len(trace.rows),
        "completed": trace.completed,
        "violations": len(detect_collisions(trace)),
        "speed_ratio_pct_quantiles": qs,
        "min_distance_m": float(min(dmin)) if dmin else None,
    }


# ---------------------------------------------------------------------------
# file contract
# ---------------------------------------------------------------------------

SERIES_COLUMNS = ["vehicle", "k", "p_bar", "v_bar_pct", "d_min_m", "u_ms2"]
CELLS_COLUMNS = ["cell_x", "cell_y", "mean_v_kmh", "mean_u_ms2", "count"]


def write_series_csv(trace: TraceLog, fp) -> None:
    w = csv.writer(fp, lineterminator="\n")
    w.writerow(SERIES_COLUMNS)
    for s in all_series(trace):
        for i in range(len(s.ticks)):
            d = "" if s.d_min[i] is None else repr(float(s.d_min[i]))
            w.writerow([s.vid, s.ticks[i], repr(float(s.p_bar[i])), repr(float(s.v_bar[i])),
                        d, repr(float(s.u[i]))])


def write_cells_csv(trace: TraceLog, fp, cell_size: float = CELL_SIZE) -> None:
    grid = cell_averages(trace, cell_size)
    w = csv.writer(fp, lineterminator="\n")
    w.writerow(CELLS_COLUMNS)
    for key in sorted(grid.cells):
        w.writerow([key[0], key[1], repr(float(grid.mean_speed_kmh(key))),
                    repr(float(grid.mean_accel(key))), grid.cells[key][2]])


def write_summary_json(trace: TraceLog, fp, extra: dict | None = None) -> None:
    doc = summary(trace)
    doc.update(trace.counters())
    if extra:
        doc.update(extra)
    json.dump(doc, fp, indent=2, sort_keys=True)
    fp.write("\n")
