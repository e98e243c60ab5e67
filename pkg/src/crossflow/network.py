"""Manhattan-grid road network, vehicle paths, and collision points.

Geometry conventions (right-hand traffic, +x east, +y north):
  - horizontal road r has axis y = ys[r]; its eastbound lane centerline is
    offset -L_w/2, the westbound one +L_w/2;
  - vertical road c has axis x = xs[c]; northbound +L_w/2, southbound -L_w/2;
  - turns are quarter-circle arcs tangent to both lane centerlines, radius
    L_w/2 for right turns and 3*L_w/2 for left turns, which makes every arc
    start and end exactly on the boundary of the intersection square.

A path is an arc-length-parameterized chain of straight and circular
segments. ``point_at`` realizes the local-to-global map and ``local_of``
its inverse (with a lateral snap tolerance, so it doubles as the
"is this point on my path" membership test).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfigError, NotOnPathError, OutOfDomainError

MERGE_TOLERANCE = 0.1   # m, collision points closer than this are one point
SNAP_TOLERANCE = 0.1    # m, lateral tolerance of the global-to-local map
_PARALLEL_EPS = 1e-6    # |cross| of unit tangents below this is tangential

HEADINGS = {"E": (1.0, 0.0), "W": (-1.0, 0.0), "N": (0.0, 1.0), "S": (0.0, -1.0)}
LEFT_OF = {"E": "N", "N": "W", "W": "S", "S": "E"}
RIGHT_OF = {"E": "S", "S": "W", "W": "N", "N": "E"}

STRAIGHT, LEFT, RIGHT = "s", "l", "r"


def distance(a, b) -> float:
    """Euclidean distance between two global points."""
    return math.hypot(a[0] - b[0], a[1] - b[1])


# ---------------------------------------------------------------------------
# segments
# ---------------------------------------------------------------------------

class Straight:
    __slots__ = ("x0", "y0", "x1", "y1", "length", "unit")

    def __init__(self, x0, y0, x1, y1):
        self.x0, self.y0, self.x1, self.y1 = x0, y0, x1, y1
        self.length = math.hypot(x1 - x0, y1 - y0)
        self.unit = ((x1 - x0) / self.length, (y1 - y0) / self.length)

    def point_at(self, s: float):
        ux, uy = self.unit
        return (self.x0 + s * ux, self.y0 + s * uy)

    def tangent_at(self, s: float):
        return self.unit

    def project(self, pts: np.ndarray):
        """Per-point (lateral distance, clamped arc length) against this segment."""
        ux, uy = self.unit
        dx = pts[:, 0] - self.x0
        dy = pts[:, 1] - self.y0
        t = np.clip(dx * ux + dy * uy, 0.0, self.length)
        lx = dx - t * ux
        ly = dy - t * uy
        return np.hypot(lx, ly), t


class Arc:
    __slots__ = ("cx", "cy", "radius", "a0", "ccw", "length")

    def __init__(self, cx, cy, radius, a0, ccw):
        self.cx, self.cy, self.radius, self.a0, self.ccw = cx, cy, radius, a0, ccw
        self.length = radius * math.pi / 2

    @property
    def sweep(self) -> float:
        return math.pi / 2 if self.ccw else -math.pi / 2

    def angle_at(self, s: float) -> float:
        d = s / self.radius
        return self.a0 + (d if self.ccw else -d)

    def point_at(self, s: float):
        a = self.angle_at(s)
        return (self.cx + self.radius * math.cos(a), self.cy + self.radius * math.sin(a))

    def tangent_at(self, s: float):
        a = self.angle_at(s)
        if self.ccw:
            return (-math.sin(a), math.cos(a))
        return (math.sin(a), -math.cos(a))

    def local_angle(self, ang: float) -> float:
        """Signed angular offset from a0, positive along travel direction."""
        d = ang - self.a0 if self.ccw else self.a0 - ang
        return (d + math.pi) % (2.0 * math.pi) - math.pi

    def project(self, pts: np.ndarray):
        rel_x = pts[:, 0] - self.cx
        rel_y = pts[:, 1] - self.cy
        rho = np.hypot(rel_x, rel_y)
        ang = np.arctan2(rel_y, rel_x)
        d = ang - self.a0 if self.ccw else self.a0 - ang
        d = (d + np.pi) % (2.0 * np.pi) - np.pi
        on = (d >= 0.0) & (d <= math.pi / 2)
        loc = np.where(on, self.radius * np.clip(d, 0.0, math.pi / 2), 0.0)
        lat = np.where(on, np.abs(rho - self.radius), np.inf)
        # off-span points snap to the nearer endpoint
        p0 = self.point_at(0.0)
        p1 = self.point_at(self.length)
        d0 = np.hypot(pts[:, 0] - p0[0], pts[:, 1] - p0[1])
        d1 = np.hypot(pts[:, 0] - p1[0], pts[:, 1] - p1[1])
        end_lat = np.minimum(d0, d1)
        end_loc = np.where(d0 <= d1, 0.0, self.length)
        off = ~on
        lat = np.where(off, end_lat, lat)
        loc = np.where(off, end_loc, loc)
        return lat, loc


# ---------------------------------------------------------------------------
# path
# ---------------------------------------------------------------------------

class Path:
    """Arc-length-parameterized polyline of straights and quarter arcs."""

    def __init__(self, segments, route=None):
        if not segments:
            raise InvalidConfigError("a path needs at least one segment")
        self.segments = list(segments)
        lengths = [s.length for s in self.segments]
        self.cum = np.concatenate([[0.0], np.cumsum(lengths)])
        self.length = float(self.cum[-1])
        self.route = route

    @property
    def turns(self):
        return self.route.movements if self.route is not None else ()

    def _seg_index(self, p: float) -> int:
        i = int(np.searchsorted(self.cum, p, side="right")) - 1
        return min(max(i, 0), len(self.segments) - 1)

    def point_at(self, p: float):
        if p < -1e-9 or p > self.length + 1e-9:
            raise OutOfDomainError(f"arc length {p} outside [0, {self.length}]")
        p = min(max(float(p), 0.0), self.length)
        i = self._seg_index(p)
        x, y = self.segments[i].point_at(p - float(self.cum[i]))
        return (float(x), float(y))

    def tangent_at(self, p: float):
        p = min(max(p, 0.0), self.length)
        i = self._seg_index(p)
        return self.segments[i].tangent_at(p - self.cum[i])

    def curvature_at(self, p: float) -> float:
        """Signed curvature: 0 on straights, +-1/radius on arcs."""
        p = min(max(p, 0.0), self.length)
        seg = self.segments[self._seg_index(p)]
        if isinstance(seg, Straight):
            return 0.0
        return (1.0 if seg.ccw else -1.0) / seg.radius

    def points_at(self, ps: np.ndarray) -> np.ndarray:
        ps = np.clip(np.asarray(ps, dtype=float), 0.0, self.length)
        idx = np.clip(np.searchsorted(self.cum, ps, side="right") - 1,
                      0, len(self.segments) - 1)
        out = np.empty((len(ps), 2))
        for i in np.unique(idx):
            seg = self.segments[i]
            s = ps[idx == i] - self.cum[i]
            if isinstance(seg, Straight):
                ux, uy = seg.unit
                out[idx == i, 0] = seg.x0 + s * ux
                out[idx == i, 1] = seg.y0 + s * uy
            else:
                a = seg.a0 + (s / seg.radius if seg.ccw else -s / seg.radius)
                out[idx == i, 0] = seg.cx + seg.radius * np.cos(a)
                out[idx == i, 1] = seg.cy + seg.radius * np.sin(a)
        return out

    def locate(self, pts: np.ndarray):
        """Vectorized projection: (lateral distance, arc length) per query point."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        best_lat = np.full(len(pts), np.inf)
        best_loc = np.zeros(len(pts))
        for seg, c0 in zip(self.segments, self.cum):
            lat, loc = seg.project(pts)
            better = lat < best_lat - 1e-12
            best_loc = np.where(better, c0 + loc, best_loc)
            best_lat = np.where(better, lat, best_lat)
        return best_lat, best_loc

    def local_of(self, point, tol: float = SNAP_TOLERANCE) -> float:
        lat, loc = self.locate(np.array([point]))
        if lat[0] > tol:
            raise NotOnPathError(f"point {point} is {lat[0]:.3g} m off the path (tol {tol})")
        return float(loc[0])

    def contains(self, point, tol: float = SNAP_TOLERANCE) -> bool:
        lat, _ = self.locate(np.array([point]))
        return bool(lat[0] <= tol)


def map_local_to_global(path: Path, p: float):
    return path.point_at(p)


def map_global_to_local(path: Path, point, tol: float = SNAP_TOLERANCE) -> float:
    return path.local_of(point, tol=tol)


# ---------------------------------------------------------------------------
# pairwise conflicts between two paths
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PairConflict:
    local_a: float
    local_b: float
    x: float
    y: float
    kind: str  # "crossing" | "merge" | "fork"
    sin_angle: float = 1.0       # crossings: |sin| of the crossing angle
    rel_curvature: float = 0.0   # forks: |curvature difference| of the branches


def _segment_intersections(sa, sb):
    """Raw intersection candidates between two segments as (s_a, s_b) pairs."""
    out = []
    if isinstance(sa, Straight) and isinstance(sb, Straight):
        ux, uy = sa.unit
        vx, vy = sb.unit
        den = ux * vy - uy * vx
        if abs(den) < 1e-12:
            return out
        wx = sb.x0 - sa.x0
        wy = sb.y0 - sa.y0
        ta = (wx * vy - wy * vx) / den
        tb = (wx * uy - wy * ux) / den
        if -1e-9 <= ta <= sa.length + 1e-9 and -1e-9 <= tb <= sb.length + 1e-9:
            out.append((min(max(ta, 0.0), sa.length), min(max(tb, 0.0), sb.length)))
        return out
    if isinstance(sa, Straight) and isinstance(sb, Arc):
        flipped = [(tb, ta) for ta, tb in _segment_intersections(sb, sa)]
        return flipped
    if isinstance(sa, Arc) and isinstance(sb, Straight):
        ux, uy = sb.unit
        wx = sa.cx - sb.x0
        wy = sa.cy - sb.y0
        proj = wx * ux + wy * uy
        d2 = (wx - proj * ux) ** 2 + (wy - proj * uy) ** 2
        rad2 = sa.radius ** 2 - d2
        if rad2 < -1e-9:
            return out
        h = math.sqrt(max(rad2, 0.0))
        for tb in {proj - h, proj + h}:
            if not (-1e-9 <= tb <= sb.length + 1e-9):
                continue
            px, py = sb.point_at(min(max(tb, 0.0), sb.length))
            ang = math.atan2(py - sa.cy, px - sa.cx)
            d = sa.local_angle(ang)
            if -1e-9 <= d <= math.pi / 2 + 1e-9:
                sa_loc = sa.radius * min(max(d, 0.0), math.pi / 2)
                out.append((sa_loc, min(max(tb, 0.0), sb.length)))
        return out
    # arc x arc
    dx = sb.cx - sa.cx
    dy = sb.cy - sa.cy
    d = math.hypot(dx, dy)
    if d < 1e-12:
        return out  # concentric: either no crossing or collinear overlap
    r1, r2 = sa.radius, sb.radius
    if d > r1 + r2 + 1e-9 or d < abs(r1 - r2) - 1e-9:
        return out
    a = (r1 * r1 - r2 * r2 + d * d) / (2.0 * d)
    h2 = r1 * r1 - a * a
    h = math.sqrt(max(h2, 0.0))
    bx = sa.cx + a * dx / d
    by = sa.cy + a * dy / d
    cands = {(bx + h * dy / d, by - h * dx / d), (bx - h * dy / d, by + h * dx / d)}
    for px, py in cands:
        da = sa.local_angle(math.atan2(py - sa.cy, px - sa.cx))
        db = sb.local_angle(math.atan2(py - sb.cy, px - sb.cx))
        if -1e-9 <= da <= math.pi / 2 + 1e-9 and -1e-9 <= db <= math.pi / 2 + 1e-9:
            out.append((sa.radius * min(max(da, 0.0), math.pi / 2),
                        sb.radius * min(max(db, 0.0), math.pi / 2)))
    return out


def _collinear_overlaps(pa: Path, pb: Path):
    """Maximal same-direction co-linear stretches as (la0, la1, lb0, lb1)."""
    raw = []
    for ia, sa in enumerate(pa.segments):
        for ib, sb in enumerate(pb.segments):
            ca, cb = pa.cum[ia], pb.cum[ib]
            if isinstance(sa, Straight) and isinstance(sb, Straight):
                ux, uy = sa.unit
                vx, vy = sb.unit
                if abs(ux * vy - uy * vx) > 1e-9 or ux * vx + uy * vy < 0.0:
                    continue
                wx = sb.x0 - sa.x0
                wy = sb.y0 - sa.y0
                if abs(wx * uy - wy * ux) > 1e-9:
                    continue  # parallel but offset
                t0 = wx * ux + wy * uy
                lo = max(0.0, t0)
                hi = min(sa.length, t0 + sb.length)
                if hi - lo > 1e-9:
                    raw.append((ca + lo, ca + hi, cb + lo - t0, cb + hi - t0))
            elif isinstance(sa, Arc) and isinstance(sb, Arc):
                if (sa.ccw != sb.ccw or abs(sa.radius - sb.radius) > 1e-9
                        or math.hypot(sa.cx - sb.cx, sa.cy - sb.cy) > 1e-9):
                    continue
                d0 = sa.local_angle(sb.a0)
                lo = max(0.0, d0)
                hi = min(math.pi / 2, d0 + math.pi / 2)
                if (hi - lo) * sa.radius > 1e-9:
                    raw.append((ca + sa.radius * lo, ca + sa.radius * hi,
                                cb + sa.radius * (lo - d0), cb + sa.radius * (hi - d0)))
    raw.sort()
    merged = []
    for st in raw:
        if merged and abs(st[0] - merged[-1][1]) < 1e-6 and abs(st[2] - merged[-1][3]) < 1e-6:
            merged[-1] = (merged[-1][0], st[1], merged[-1][2], st[3])
        else:
            merged.append(st)
    return merged


def pair_conflicts(pa: Path, pb: Path):
    """Transversal crossings plus merge- and fork-points between two paths.

    Co-linear stretches are not crossings. The entry of each stretch is
    declared a merge point unless both paths start inside it (same entry
    lane, ordered by injection and covered by frontal constraints), and
    its exit is declared a fork point unless both paths end there: right
    after diverging the two centerlines are still closer than any safety
    margin, so the crossing machinery must order the vehicles through it.
    """
    cands = []
    for ia, sa in enumerate(pa.segments):
        for ib, sb in enumerate(pb.segments):
            for s_a, s_b in _segment_intersections(sa, sb):
                la = pa.cum[ia] + s_a
                lb = pb.cum[ib] + s_b
                tx_a = pa.tangent_at(la)
                tx_b = pb.tangent_at(lb)
                sin_angle = abs(tx_a[0] * tx_b[1] - tx_a[1] * tx_b[0])
                if sin_angle <= _PARALLEL_EPS:
                    continue  # tangential contact, handled by merge logic
                x, y = sa.point_at(s_a)
                cands.append(PairConflict(la, lb, x, y, "crossing", sin_angle))
    for la0, la1, lb0, lb1 in _collinear_overlaps(pa, pb):
        if la0 > 1e-9 or lb0 > 1e-9:
            x, y = pa.point_at(la0)
            cands.append(PairConflict(la0, lb0, x, y, "merge"))
        if la1 < pa.length - 1e-9 or lb1 < pb.length - 1e-9:
            x, y = pa.point_at(la1)
            rel = abs(pa.curvature_at(la1 + 1e-6) - pb.curvature_at(lb1 + 1e-6))
            cands.append(PairConflict(la1, lb1, x, y, "fork", 1.0, rel))
    cands.sort(key=lambda c: (c.local_a, c.local_b))
    dedup = []
    for c in cands:
        if dedup and abs(c.local_a - dedup[-1].local_a) < MERGE_TOLERANCE \
                and abs(c.local_b - dedup[-1].local_b) < MERGE_TOLERANCE:
            continue
        dedup.append(c)
    return dedup


# ---------------------------------------------------------------------------
# collision point registry
# ---------------------------------------------------------------------------

@dataclass
class RegistryPoint:
    x: float
    y: float
    locals: dict  # id -> arc length at which that path crosses the point

    @property
    def point(self):
        return (self.x, self.y)


class CollisionPointRegistry:
    """The set of collision points with per-path local coordinates."""

    def __init__(self, points):
        self.points = list(points)
        self._by_id = {}
        for idx, pt in enumerate(self.points):
            for pid, loc in pt.locals.items():
                self._by_id.setdefault(pid, []).append((loc, idx))
        for pid in self._by_id:
            self._by_id[pid].sort()

    def __len__(self):
        return len(self.points)

    def ids_through(self, idx: int):
        return set(self.points[idx].locals)

    def pending(self, pid, p: float):
        """Indices of points still ahead of arc length p, nearest first."""
        return [idx for loc, idx in self._by_id.get(pid, []) if loc > p]

    def contenders(self, idx: int, positions: dict):
        pt = self.points[idx]
        return {pid for pid, loc in pt.locals.items()
                if pid in positions and loc > positions[pid]}

    def export_csv(self, fp):
        w = csv.writer(fp)
        w.writerow(["h_x", "h_y", "path_id", "local_m"])
        for pt in self.points:
            for pid in sorted(pt.locals, key=str):
                w.writerow([repr(float(pt.x)), repr(float(pt.y)), pid, repr(float(pt.locals[pid]))])


def _cluster_sites(raw_entries):
    """Union points within MERGE_TOLERANCE; entries are (x, y, id, local)."""
    if not raw_entries:
        return []
    # exact near-duplicates (the same geometric site reached through many
    # path pairs) collapse on a fine grid before the tolerance sweep
    grid = {}
    for x, y, pid, loc in raw_entries:
        key = (round(x * 1e6), round(y * 1e6), pid)
        if key not in grid or loc < grid[key][3]:
            grid[key] = (x, y, pid, loc)
    entries = sorted(grid.values())
    order = sorted(range(len(entries)), key=lambda i: (entries[i][0], entries[i][1]))
    parent = list(range(len(entries)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a in range(len(order)):
        ia = order[a]
        for b in range(a + 1, len(order)):
            ib = order[b]
            if entries[ib][0] - entries[ia][0] > MERGE_TOLERANCE:
                break
            if math.hypot(entries[ib][0] - entries[ia][0],
                          entries[ib][1] - entries[ia][1]) <= MERGE_TOLERANCE:
                parent[find(ib)] = find(ia)

    clusters = {}
    for i in range(len(entries)):
        clusters.setdefault(find(i), []).append(i)
    sites = []
    for members in clusters.values():
        rep = min(members, key=lambda i: (entries[i][0], entries[i][1]))
        locs = {}
        for i in sorted(members, key=lambda i: entries[i][3]):
            pid = entries[i][2]
            if pid not in locs:
                locs[pid] = entries[i][3]
        if len(locs) >= 2:
            sites.append(RegistryPoint(entries[rep][0], entries[rep][1], locs))
    sites.sort(key=lambda s: (s.x, s.y))
    return sites


def collision_points(paths: dict, conflicts_fn=pair_conflicts) -> CollisionPointRegistry:
    """Registry of all pairwise conflict points among the given paths."""
    ids = sorted(paths, key=str)
    entries = []
    for i, aid in enumerate(ids):
        for bid in ids[i + 1:]:
            for c in conflicts_fn(paths[aid], paths[bid]):
                entries.append((c.x, c.y, aid, c.local_a))
                entries.append((c.x, c.y, bid, c.local_b))
    return CollisionPointRegistry(_cluster_sites(entries))


def pending_points(path_id, p: float, registry: CollisionPointRegistry):
    return registry.pending(path_id, p)


def contenders(registry: CollisionPointRegistry, idx: int, positions: dict):
    return registry.contenders(idx, positions)


def frontal_set(i, paths: dict, positions: dict, tol: float = SNAP_TOLERANCE):
    """Vehicles located on i's path ahead of i (Euclidean point membership)."""
    pi = paths[i]
    p_i = positions[i]
    others = [j for j in paths if j != i]
    if not others:
        return set()
    pts = np.array([paths[j].point_at(positions[j]) for j in others])
    lat, loc = pi.locate(pts)
    return {j for j, la, lo in zip(others, lat, loc) if la <= tol and lo > p_i}


# ---------------------------------------------------------------------------
# the grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Route:
    entry: tuple       # (heading, road index)
    exit: tuple        # (heading, road index)
    movements: tuple   # per traversed intersection: "s" | "l" | "r"
    intersections: tuple  # (row, col) per movement

    @property
    def key(self):
        return (self.entry, self.movements)


class RoadNetwork:
    """A rows x cols Manhattan grid with two lanes per road."""

    def __init__(self, rows, cols, lane_width, sector_unit,
                 multiples=1, margin_multiple=1):
        if rows < 1 or cols < 1:
            raise InvalidConfigError(f"grid needs at least one road each way, got {rows}x{cols}")
        if lane_width <= 0 or sector_unit <= 0:
            raise InvalidConfigError("lane width and sector unit must be positive")
        if isinstance(multiples, int):
            row_gaps = [multiples] * (rows - 1)
            col_gaps = [multiples] * (cols - 1)
        else:
            row_gaps, col_gaps = (list(multiples[0]), list(multiples[1]))
        if len(row_gaps) != rows - 1 or len(col_gaps) != cols - 1:
            raise InvalidConfigError("gap multiple lists must match grid dimensions")
        for m in [*row_gaps, *col_gaps, margin_multiple]:
            if not isinstance(m, int) or m < 1:
                raise InvalidConfigError(f"sector multiples must be positive integers, got {m}")
        if sector_unit * min([*row_gaps, *col_gaps, margin_multiple]) <= 4 * lane_width:
            raise InvalidConfigError("road spacing too small for intersection geometry")

        self.rows = rows
        self.cols = cols
        self.lane_width = float(lane_width)
        self.sector_unit = float(sector_unit)
        self.row_gaps = row_gaps
        self.col_gaps = col_gaps
        self.margin_multiple = margin_multiple

        m = margin_multiple * self.sector_unit
        self.ys = [m]
        for g in row_gaps:
            self.ys.append(self.ys[-1] + g * self.sector_unit)
        self.xs = [m]
        for g in col_gaps:
            self.xs.append(self.xs[-1] + g * self.sector_unit)
        self.width = self.xs[-1] + m
        self.height = self.ys[-1] + m

        self._route_cache = {}
        self._path_cache = {}
        self._pair_cache = {}
        self._span_cache = {}

    # -- static geometry ----------------------------------------------------

    @property
    def half_lane(self):
        return self.lane_width / 2.0

    def intersection_center(self, i, j):
        return (self.xs[j], self.ys[i])

    def intersections(self):
        return [(i, j) for i in range(self.rows) for j in range(self.cols)]

    def lane_offset_coord(self, heading, index):
        """The fixed coordinate of a directed lane centerline."""
        o = self.half_lane
        if heading == "E":
            return self.ys[index] - o
        if heading == "W":
            return self.ys[index] + o
        if heading == "N":
            return self.xs[index] + o
        if heading == "S":
            return self.xs[index] - o
        raise InvalidConfigError(f"unknown heading {heading}")

    def entry_ports(self):
        return ([("E", r) for r in range(self.rows)]
                + [("W", r) for r in range(self.rows)]
                + [("N", c) for c in range(self.cols)]
                + [("S", c) for c in range(self.cols)])

    exit_ports = entry_ports  # same labels; an exit's heading is the leaving direction

    def entry_point(self, port):
        h, idx = port
        o = self.lane_offset_coord(h, idx)
        if h == "E":
            return (0.0, o)
        if h == "W":
            return (self.width, o)
        if h == "N":
            return (o, 0.0)
        return (o, self.height)

    def exit_point(self, port):
        h, idx = port
        o = self.lane_offset_coord(h, idx)
        if h == "E":
            return (self.width, o)
        if h == "W":
            return (0.0, o)
        if h == "N":
            return (o, self.height)
        return (o, 0.0)

    def u_turn_exit(self, entry):
        h, idx = entry
        return ({"E": "W", "W": "E", "N": "S", "S": "N"}[h], idx)

    def destination_candidates(self, entry):
        banned = self.u_turn_exit(entry)
        return [p for p in self.exit_ports() if p != banned]

    # -- routing ------------------------------------------------------------

    def _entry_state(self, entry):
        h, idx = entry
        if h == "E":
            return (h, idx, 0)
        if h == "W":
            return (h, idx, self.cols - 1)
        if h == "N":
            return (h, 0, idx)
        return (h, self.rows - 1, idx)

    def _advance(self, heading, i, j):
        """State or exit port reached by leaving intersection (i, j) with heading."""
        if heading == "E":
            return (heading, i, j + 1) if j + 1 < self.cols else ("X", ("E", i))
        if heading == "W":
            return (heading, i, j - 1) if j - 1 >= 0 else ("X", ("W", i))
        if heading == "N":
            return (heading, i + 1, j) if i + 1 < self.rows else ("X", ("N", j))
        return (heading, i - 1, j) if i - 1 >= 0 else ("X", ("S", j))

    def _transitions(self, state, allow_left):
        h, i, j = state
        moves = [(STRAIGHT, h), (RIGHT, RIGHT_OF[h])]
        if allow_left:
            moves.insert(1, (LEFT, LEFT_OF[h]))
        out = []
        for mv, h2 in moves:
            nxt = self._advance(h2, i, j)
            out.append((mv, nxt))
        return out

    def _route_table(self, entry, allow_left):
        """BFS levels from the entry plus reachable exits, cached."""
        key = (entry, allow_left)
        if key in self._route_cache:
            return self._route_cache[key]
        start = self._entry_state(entry)
        dist = {start: 0}
        exit_dist = {}
        frontier = [start]
        while frontier:
            nxt = []
            for s in frontier:
                for _mv, t in self._transitions(s, allow_left):
                    if t[0] == "X":
                        if t[1] not in exit_dist:
                            exit_dist[t[1]] = dist[s] + 1
                    elif t not in dist:
                        dist[t] = dist[s] + 1
                        nxt.append(t)
            frontier = nxt
        table = (dist, exit_dist)
        self._route_cache[key] = table
        return table

    def reachable_exits(self, entry, allow_left):
        _, exit_dist = self._route_table(entry, allow_left)
        return set(exit_dist)

    def _count_routes(self, entry, exit_port, allow_left):
        """Number of hop-minimal routes from each state to the exit."""
        dist, exit_dist = self._route_table(entry, allow_left)
        if exit_port not in exit_dist:
            return None
        target_d = exit_dist[exit_port]
        counts = {}

        def count(state):
            if state in counts:
                return counts[state]
            total = 0
            for _mv, t in self._transitions(state, allow_left):
                if t[0] == "X":
                    if t[1] == exit_port and dist[state] + 1 == target_d:
                        total += 1
                elif t in dist and dist[t] == dist[state] + 1 and dist[t] <= target_d - 1:
                    total += count(t)
            counts[state] = total
            return total

        count(self._entry_state(entry))
        return counts, target_d

    def minimal_route_count(self, entry, exit_port, allow_left=True):
        res = self._count_routes(entry, exit_port, allow_left)
        if res is None:
            return 0
        counts, _ = res
        return counts[self._entry_state(entry)]

    def route_by_rank(self, entry, exit_port, rank, allow_left=True):
        """The rank-th hop-minimal route in canonical movement order."""
        res = self._count_routes(entry, exit_port, allow_left)
        if res is None:
            raise InvalidConfigError(f"exit {exit_port} unreachable from entry {entry}")
        counts, target_d = res
        dist, _ = self._route_table(entry, allow_left)
        state = self._entry_state(entry)
        if not 0 <= rank < counts[state]:
            raise InvalidConfigError(f"route rank {rank} out of range")
        movements = []
        crossings = []
        while True:
            for mv, t in self._transitions(state, allow_left):
                if t[0] == "X":
                    n = 1 if (t[1] == exit_port and dist[state] + 1 == target_d) else 0
                else:
                    ok = t in dist and dist[t] == dist[state] + 1 and dist[t] <= target_d - 1
                    n = counts.get(t, 0) if ok else 0
                if rank < n:
                    movements.append(mv)
                    crossings.append((state[1], state[2]))
                    if t[0] == "X":
                        return Route(entry, exit_port, tuple(movements), tuple(crossings))
                    state = t
                    break
                rank -= n

    # -- path geometry ------------------------------------------------------

    def _turn_arc(self, i, j, h_in, turn):
        o = self.half_lane
        r = 3.0 * o if turn == LEFT else o
        h_out = LEFT_OF[h_in] if turn == LEFT else RIGHT_OF[h_in]
        if h_in in ("E", "W"):
            qx = self.lane_offset_coord(h_out, j)
            qy = self.lane_offset_coord(h_in, i)
        else:
            qx = self.lane_offset_coord(h_in, j)
            qy = self.lane_offset_coord(h_out, i)
        din = HEADINGS[h_in]
        dout = HEADINGS[h_out]
        start = (qx - r * din[0], qy - r * din[1])
        end = (qx + r * dout[0], qy + r * dout[1])
        ccw = turn == LEFT
        nx, ny = (-din[1], din[0]) if ccw else (din[1], -din[0])
        cx, cy = start[0] + r * nx, start[1] + r * ny
        a0 = math.atan2(start[1] - cy, start[0] - cx)
        return Arc(cx, cy, r, a0, ccw), end, h_out

    def build_path(self, route: Route) -> Path:
        if route.key in self._path_cache:
            return self._path_cache[route.key]
        pos = self.entry_point(route.entry)
        heading = route.entry[0]
        segments = []
        for mv, (i, j) in zip(route.movements, route.intersections):
            if mv == STRAIGHT:
                continue
            arc, end, heading = self._turn_arc(i, j, heading, mv)
            sx, sy = arc.point_at(0.0)
            if math.hypot(sx - pos[0], sy - pos[1]) > 1e-9:
                segments.append(Straight(pos[0], pos[1], sx, sy))
            segments.append(arc)
            pos = end
        ex = self.exit_point(route.exit)
        if math.hypot(ex[0] - pos[0], ex[1] - pos[1]) > 1e-9:
            segments.append(Straight(pos[0], pos[1], ex[0], ex[1]))
        path = Path(segments, route=route)
        self._path_cache[route.key] = path
        return path

    def intersection_spans(self, path: Path):
        """Arc-length intervals where the path is inside an intersection square.

        Cached per route; used by the controller's stop-placement rule so a
        denied vehicle never plans to halt where cross traffic sweeps.
        """
        if path.route is not None and path.route.key in self._span_cache:
            return self._span_cache[path.route.key]
        w = self.lane_width
        rects = {(self.xs[j], self.ys[i])
                 for (i, j) in (path.route.intersections if path.route else
                                self.intersections())}
        raw = []
        for (cx, cy) in rects:
            for seg, c0 in zip(path.segments, path.cum):
                if isinstance(seg, Straight):
                    ux, uy = seg.unit
                    if abs(uy) < 1e-12:     # east/west
                        if abs(seg.y0 - cy) > w:
                            continue
                        t0 = (cx - w - seg.x0) / ux
                        t1 = (cx + w - seg.x0) / ux
                    else:                   # north/south
                        if abs(seg.x0 - cx) > w:
                            continue
                        t0 = (cy - w - seg.y0) / uy
                        t1 = (cy + w - seg.y0) / uy
                    lo, hi = min(t0, t1), max(t0, t1)
                    lo, hi = max(lo, 0.0), min(hi, seg.length)
                    if hi - lo > 1e-9:
                        raw.append((c0 + lo, c0 + hi))
                else:
                    mx, my = seg.point_at(seg.length / 2)
                    if abs(mx - cx) <= w and abs(my - cy) <= w:
                        raw.append((c0, c0 + seg.length))
        raw.sort()
        merged = []
        for lo, hi in raw:
            if merged and lo <= merged[-1][1] + 1e-6:
                merged[-1] = (merged[-1][0], max(hi, merged[-1][1]))
            else:
                merged.append((lo, hi))
        spans = tuple(merged)
        if path.route is not None:
            self._span_cache[path.route.key] = spans
        return spans

    def pair_conflicts_cached(self, pa: Path, pb: Path):
        if pa.route is None or pb.route is None:
            return pair_conflicts(pa, pb)
        ka, kb = pa.route.key, pb.route.key
        if ka == kb:
            return []
        swap = kb < ka
        key = (kb, ka) if swap else (ka, kb)
        if key not in self._pair_cache:
            first, second = (pb, pa) if swap else (pa, pb)
            self._pair_cache[key] = pair_conflicts(first, second)
        res = self._pair_cache[key]
        if swap:
            return [PairConflict(c.local_b, c.local_a, c.x, c.y, c.kind) for c in res]
        return res

    def to_dict(self):
        return {
            "rows": self.rows,
            "cols": self.cols,
            "lane_width_m": self.lane_width,
            "sector_unit_m": self.sector_unit,
            "row_gap_multiples": list(self.row_gaps),
            "col_gap_multiples": list(self.col_gaps),
            "margin_multiple": self.margin_multiple,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            rows=d["rows"],
            cols=d["cols"],
            lane_width=d["lane_width_m"],
            sector_unit=d["sector_unit_m"],
            multiples=(d["row_gap_multiples"], d["col_gap_multiples"])
            if "row_gap_multiples" in d else d.get("multiples", 1),
            margin_multiple=d.get("margin_multiple", 1),
        )


def build_grid(rows, cols, lane_width, sector_unit, multiples=1, margin_multiple=1):
    return RoadNetwork(rows, cols, lane_width, sector_unit, multiples, margin_multiple)
