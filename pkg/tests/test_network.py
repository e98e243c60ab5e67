import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from shapely.geometry import LineString, Point

from crossflow.errors import InvalidConfigError, NotOnPathError, OutOfDomainError
from crossflow.network import (
    Arc,
    Path,
    Straight,
    build_grid,
    collision_points,
    contenders,
    distance,
    frontal_set,
    map_global_to_local,
    map_local_to_global,
    pair_conflicts,
    pending_points,
)


@pytest.fixture(scope="module")
def net1():
    return build_grid(1, 1, 3.5, 30, 1)


@pytest.fixture(scope="module")
def net22():
    return build_grid(2, 2, 3.5, 30, 2)


def path_of(net, entry, exit_port, rank=0, allow_left=True):
    return net.build_path(net.route_by_rank(entry, exit_port, rank, allow_left))


# ---------------------------------------------------------------------------
# grid construction
# ---------------------------------------------------------------------------

def test_single_crossing_grid(net1):
    assert len(net1.intersections()) == 1
    assert len(net1.entry_ports()) == 4
    # lane centerlines offset half a lane width from the road axis
    assert net1.lane_offset_coord("E", 0) == net1.ys[0] - 1.75
    assert net1.lane_offset_coord("W", 0) == net1.ys[0] + 1.75
    assert net1.lane_offset_coord("N", 0) == net1.xs[0] + 1.75
    assert net1.lane_offset_coord("S", 0) == net1.xs[0] - 1.75


def test_grid_spacing_is_multiple_of_sector_unit(net22):
    assert len(net22.intersections()) == 4
    assert net22.xs[1] - net22.xs[0] == pytest.approx(60.0)
    assert net22.ys[1] - net22.ys[0] == pytest.approx(60.0)


def test_invalid_grid_rejected():
    with pytest.raises(InvalidConfigError):
        build_grid(0, 1, 3.5, 30)
    with pytest.raises(InvalidConfigError):
        build_grid(1, 1, -1.0, 30)
    with pytest.raises(InvalidConfigError):
        build_grid(1, 1, 3.5, 0.0)
    with pytest.raises(InvalidConfigError):
        build_grid(2, 2, 3.5, 30, 0)


# ---------------------------------------------------------------------------
# local <-> global maps
# ---------------------------------------------------------------------------

def test_local_to_global_origin_and_translation(net1):
    p = path_of(net1, ("E", 0), ("E", 0))
    assert p.point_at(0.0) == pytest.approx(net1.entry_point(("E", 0)))
    x0, y0 = p.point_at(10.0)
    x1, y1 = p.point_at(25.0)
    assert (x1 - x0, y1 - y0) == pytest.approx((15.0, 0.0))


def test_quarter_arc_midpoint_matches_dense_sampling():
    r = 5.25
    arc = Arc(0.0, 0.0, r, -math.pi / 2, True)
    pt = arc.point_at(math.pi * r / 4)
    assert pt == pytest.approx((r * math.cos(-math.pi / 4), r * math.sin(-math.pi / 4)))
    # independent oracle: dense polyline arc-length accumulation
    ss = np.linspace(0, arc.length, 20001)
    poly = np.array([arc.point_at(float(s)) for s in ss])
    seg = np.hypot(np.diff(poly[:, 0]), np.diff(poly[:, 1]))
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    k = np.searchsorted(cum, math.pi * r / 4)
    assert poly[k] == pytest.approx(pt, abs=1e-3)


def test_out_of_domain(net1):
    p = path_of(net1, ("E", 0), ("E", 0))
    with pytest.raises(OutOfDomainError):
        p.point_at(-1.0)
    with pytest.raises(OutOfDomainError):
        p.point_at(p.length + 1.0)


def test_global_to_local_round_trip(net1):
    p = path_of(net1, ("E", 0), ("N", 0))
    for s in np.linspace(0.0, p.length, 57):
        assert map_global_to_local(p, map_local_to_global(p, float(s))) == pytest.approx(
            float(s), abs=1e-9)


def test_off_path_point_rejected(net1):
    p = path_of(net1, ("E", 0), ("E", 0))
    x, y = p.point_at(5.0)
    with pytest.raises(NotOnPathError):
        map_global_to_local(p, (x, y + 0.5))
    # within the snap tolerance it resolves
    assert map_global_to_local(p, (x, y + 0.05)) == pytest.approx(5.0, abs=0.01)


def test_shared_lane_point_maps_to_each_paths_own_coordinate(net1):
    straight = path_of(net1, ("N", 0), ("N", 0))
    turner = path_of(net1, ("E", 0), ("N", 0))
    probe = (net1.lane_offset_coord("N", 0), 50.0)  # on the shared north lane
    l_s = map_global_to_local(straight, probe)
    l_t = map_global_to_local(turner, probe)
    # independent cumulative-length oracle
    assert l_s == pytest.approx(50.0, abs=1e-9)
    ss = np.linspace(0.0, turner.length, 200001)
    poly = np.array([turner.point_at(float(s)) for s in ss])
    d = np.hypot(poly[:, 0] - probe[0], poly[:, 1] - probe[1])
    assert l_t == pytest.approx(float(ss[np.argmin(d)]), abs=1e-3)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 1.0), st.integers(0, 3))
def test_round_trip_property(frac, which):
    net = build_grid(2, 3, 3.5, 30, 1)
    entries = [("E", 0), ("W", 1), ("N", 2), ("S", 0)]
    exits = [("N", 1), ("S", 2), ("E", 1), ("W", 0)]
    p = path_of(net, entries[which], exits[which])
    s = frac * p.length
    assert map_global_to_local(p, p.point_at(s)) == pytest.approx(s, abs=1e-9)


def test_monotone_positions_distinct(net1):
    p = path_of(net1, ("E", 0), ("S", 0))
    ss = np.linspace(0, p.length, 301)
    pts = p.points_at(ss)
    steps = np.hypot(np.diff(pts[:, 0]), np.diff(pts[:, 1]))
    assert (steps > 0).all()


# ---------------------------------------------------------------------------
# collision points
# ---------------------------------------------------------------------------

def test_perpendicular_straights_single_point(net1):
    pe = path_of(net1, ("E", 0), ("E", 0))
    pn = path_of(net1, ("N", 0), ("N", 0))
    reg = collision_points({"e": pe, "n": pn})
    assert len(reg) == 1
    pt = reg.points[0]
    assert (pt.x, pt.y) == pytest.approx((net1.xs[0] + 1.75, net1.ys[0] - 1.75))


def test_disjoint_right_turn_no_points(net1):
    pe = path_of(net1, ("E", 0), ("E", 0))
    # southbound turning right onto the westbound lane never touches the E lane
    pr = path_of(net1, ("S", 0), ("W", 0))
    assert pair_conflicts(pe, pr) == []


def _dense_polyline(path, step=0.02):
    ss = np.arange(0.0, path.length, step)
    ss = np.append(ss, path.length)
    return np.array([path.point_at(float(s)) for s in ss])


def _oracle_crossings(pa, pb):
    """Independent transversal-crossing finder on densely sampled polylines."""
    la = LineString(_dense_polyline(pa))
    lb = LineString(_dense_polyline(pb))
    inter = la.intersection(lb)
    geoms = getattr(inter, "geoms", [inter]) if not inter.is_empty else []
    pts = []
    for g in geoms:
        if not isinstance(g, Point):
            continue  # collinear overlap pieces are not transversal crossings
        sa = la.project(g)
        sb = lb.project(g)
        da = np.array(la.interpolate(min(sa + 0.5, la.length)).coords[0]) - \
            np.array(la.interpolate(max(sa - 0.5, 0.0)).coords[0])
        db = np.array(lb.interpolate(min(sb + 0.5, lb.length)).coords[0]) - \
            np.array(lb.interpolate(max(sb - 0.5, 0.0)).coords[0])
        da = da / np.linalg.norm(da)
        db = db / np.linalg.norm(db)
        if abs(da[0] * db[1] - da[1] * db[0]) > 0.05:
            pts.append((g.x, g.y))
    # cluster
    out = []
    for p in sorted(pts):
        if out and math.hypot(p[0] - out[-1][0], p[1] - out[-1][1]) < 0.1:
            continue
        out.append(p)
    return out


def all_twelve_movements(net):
    moves = {
        ("E", 0): [("E", 0), ("N", 0), ("S", 0)],
        ("W", 0): [("W", 0), ("S", 0), ("N", 0)],
        ("N", 0): [("N", 0), ("W", 0), ("E", 0)],
        ("S", 0): [("S", 0), ("E", 0), ("W", 0)],
    }
    return {f"{e[0]}->{x[0]}": path_of(net, e, x) for e, xs in moves.items() for x in xs}


def test_full_intersection_matches_oracle(net1):
    paths = all_twelve_movements(net1)
    names = sorted(paths)
    impl_sites = collision_points(
        paths,
        conflicts_fn=lambda a, b: [c for c in pair_conflicts(a, b) if c.kind == "crossing"],
    )
    oracle_pts = []
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            oracle_pts.extend(_oracle_crossings(paths[a], paths[b]))
    # cluster oracle points into sites
    sites = []
    for p in sorted(oracle_pts):
        if any(math.hypot(p[0] - q[0], p[1] - q[1]) < 0.1 for q in sites):
            continue
        sites.append(p)
    assert len(impl_sites) == len(sites)
    for q in sites:
        assert min(math.hypot(pt.x - q[0], pt.y - q[1]) for pt in impl_sites.points) < 0.1


def test_registry_completeness_includes_merges(net1):
    paths = all_twelve_movements(net1)
    reg = collision_points(paths)
    names = sorted(paths)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            for q in _oracle_crossings(paths[a], paths[b]):
                assert min(math.hypot(pt.x - q[0], pt.y - q[1]) for pt in reg.points) < 0.1
    # no two registered points closer than the merge tolerance
    for i, p in enumerate(reg.points):
        for q in reg.points[i + 1:]:
            assert math.hypot(p.x - q.x, p.y - q.y) > 0.1
    # every registered point lies on at least two paths
    assert all(len(p.locals) >= 2 for p in reg.points)


def test_merge_point_declared_at_lane_entry(net1):
    turner = path_of(net1, ("E", 0), ("N", 0))
    straight = path_of(net1, ("N", 0), ("N", 0))
    cs = pair_conflicts(turner, straight)
    assert len(cs) == 1 and cs[0].kind == "merge"
    assert (cs[0].x, cs[0].y) == pytest.approx((net1.xs[0] + 1.75, net1.ys[0] + 3.5))
    # both arrive at the merge point at their own local coordinate
    assert turner.point_at(cs[0].local_a) == pytest.approx((cs[0].x, cs[0].y))
    assert straight.point_at(cs[0].local_b) == pytest.approx((cs[0].x, cs[0].y))


def test_same_entry_pair_has_fork_point_only(net1):
    a = path_of(net1, ("E", 0), ("E", 0))
    b = path_of(net1, ("E", 0), ("S", 0))
    cs = pair_conflicts(a, b)
    # no merge point for a shared origin, but the divergence is registered
    assert [c.kind for c in cs] == ["fork"]
    fork = cs[0]
    # the fork sits where b's turn arc leaves the common lane
    assert fork.local_a == pytest.approx(fork.local_b)
    assert b.point_at(fork.local_b) == pytest.approx((fork.x, fork.y))
    assert fork.local_a == pytest.approx(net1.xs[0] - 3.5)


def test_identical_route_pair_has_no_points(net1):
    a = path_of(net1, ("E", 0), ("E", 0))
    b = path_of(net1, ("E", 0), ("E", 0))
    assert pair_conflicts(a, b) == []


# ---------------------------------------------------------------------------
# pending points / contenders / frontal sets
# ---------------------------------------------------------------------------

def crossing_registry(net):
    pe = path_of(net, ("E", 0), ("E", 0))
    pn = path_of(net, ("N", 0), ("N", 0))
    ps = path_of(net, ("S", 0), ("S", 0))
    pw = path_of(net, ("W", 0), ("W", 0))
    reg = collision_points({"e": pe, "n": pn, "s": ps, "w": pw})
    return reg, {"e": pe, "n": pn, "s": ps, "w": pw}


def test_pending_points_ordering(net1):
    reg, paths = crossing_registry(net1)
    # the eastbound straight crosses both vertical lanes: S lane first, N lane second
    locs = sorted(pt.locals["e"] for pt in reg.points if "e" in pt.locals)
    assert len(locs) == 2
    pend_all = pending_points("e", 0.0, reg)
    assert [reg.points[i].locals["e"] for i in pend_all] == locs
    mid = (locs[0] + locs[1]) / 2
    assert [reg.points[i].locals["e"] for i in pending_points("e", mid, reg)] == [locs[1]]
    assert pending_points("e", locs[1] + 0.1, reg) == []


def test_contenders_strict_inequality(net1):
    reg, paths = crossing_registry(net1)
    idx = next(i for i, pt in enumerate(reg.points) if {"e", "n"} <= set(pt.locals))
    pt = reg.points[idx]
    both = contenders(reg, idx, {"e": 0.0, "n": 0.0})
    assert both == {"e", "n"}
    past = contenders(reg, idx, {"e": pt.locals["e"] + 0.01, "n": 0.0})
    assert past == {"n"}
    assert contenders(reg, idx, {}) == set()


def test_frontal_set_basics(net1):
    pe = path_of(net1, ("E", 0), ("E", 0))
    pw = path_of(net1, ("W", 0), ("W", 0))
    paths = {1: pe, 2: pe, 3: pw}
    pos = {1: 10.0, 2: 30.0, 3: 10.0}
    assert frontal_set(1, {1: pe}, {1: 10.0}) == set()
    # same lane 20 m ahead
    assert frontal_set(1, paths, pos) == {2}
    # behind and opposite-direction vehicles excluded
    assert frontal_set(2, paths, pos) == set()


def test_frontal_antisymmetry_on_shared_lane(net1):
    pe = path_of(net1, ("E", 0), ("E", 0))
    paths = {1: pe, 2: pe}
    for a, b in [(3.0, 40.0), (12.0, 13.0), (0.0, 59.0)]:
        pos = {1: a, 2: b}
        f1 = frontal_set(1, paths, pos)
        f2 = frontal_set(2, paths, pos)
        assert (2 in f1) != (1 in f2)


def test_pending_contenders_consistency(net1):
    reg, paths = crossing_registry(net1)
    positions = {"e": 10.0, "n": 40.0, "s": 5.0, "w": 0.0}
    for idx in range(len(reg.points)):
        cont = contenders(reg, idx, positions)
        for vid in positions:
            assert (vid in cont) == (idx in pending_points(vid, positions[vid], reg))


# ---------------------------------------------------------------------------
# distance + export
# ---------------------------------------------------------------------------

def test_distance():
    assert distance((0, 0), (0, 0)) == 0.0
    assert distance((0, 0), (3, 4)) == 5.0
    rng = np.random.default_rng(7)
    for _ in range(20):
        a, b = rng.uniform(-10, 10, 2), rng.uniform(-10, 10, 2)
        assert distance(a, b) == pytest.approx(distance(b, a))


def test_registry_csv_export(net1):
    reg, _ = crossing_registry(net1)
    buf = io.StringIO()
    reg.export_csv(buf)
    lines = buf.getvalue().strip().splitlines()
    assert lines[0] == "h_x,h_y,path_id,local_m"
    assert len(lines) == 1 + sum(len(p.locals) for p in reg.points)


def test_network_round_trips_through_dict(net22):
    clone = type(net22).from_dict(net22.to_dict())
    assert clone.xs == net22.xs and clone.ys == net22.ys
