"""World orchestration: per-tick pipeline, injection, tracing, collision audit.

Tick pipeline: compute frontal and pending sets on a frozen snapshot, run
one auction per contested collision point, derive each vehicle's priority
set, solve every MPC on the same snapshot, apply the inputs, remove
finished vehicles, inject new ones, log. A trace row holds the snapshot
state a control was computed from, so collision detection over the trace
sees exactly what the controllers saw.

Determinism: a single seeded generator is consumed only by the injection
draws, in canonical port order, with a fixed number of draws per firing
port. Two variants driven by the same seed therefore see identical entry
times, desired speeds, and destination draws even as traffic diverges.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import cbaa, dynamics, network
from .errors import InvalidConfigError
from .mpc import MpcParams, Neighbor, control_step
from .mpc import rollout_with_globals as mpc_rollout

log = logging.getLogger(__name__)

KMH = 1 / 3.6


@dataclass(frozen=True)
class SimConfig:
    # network geometry
    rows: int = 2
    cols: int = 2
    lane_width: float = 3.5          # m
    sector_unit: float = 30.0        # m
    sector_multiples: int = 2
    margin_multiple: int = 1
    # timing and control
    t_s: float = 0.25                # s
    horizon: int = 10
    lam: float = 1.0                 # s
    lam_bar: float = 0.5             # s
    delta_bar: float = 10.0          # m
    d_min: float = 2.1               # m
    v_floor: float = 0.0             # m/s
    v_ceil: float = 130.0 * KMH      # m/s
    a_min: float = -9.0              # m/s^2
    a_max: float = 5.0               # m/s^2
    q: float = 0.1
    r: float = 0.01
    omega: float = -0.1
    # auction
    p_v: float = 1.0
    p_d: float = 0.1
    eps: float = 0.1
    topology: str = "complete"       # "complete" | "disk:<radius>"
    # injection
    inject_prob: float = 0.5
    v_min: float = 52.0 * KMH        # m/s
    v_max: float = 56.0 * KMH        # m/s
    allow_left_turns: bool = True
    # run control
    seed: int = 0
    target_completed: int = 50
    max_ticks: int | None = None
    kkt_tolerance: float = 1e-6

    def validate(self) -> None:
        checks = [
            ("rows", self.rows >= 1), ("cols", self.cols >= 1),
            ("lane_width", self.lane_width > 0), ("sector_unit", self.sector_unit > 0),
            ("t_s", self.t_s > 0), ("horizon", self.horizon >= 1),
            ("lam", self.lam > 0), ("lam_bar", 0 <= self.lam_bar < self.lam),
            ("delta_bar", self.delta_bar > 0), ("d_min", self.d_min > 0),
            ("v_ceil", self.v_ceil > self.v_floor >= 0),
            ("a_min", self.a_min < 0), ("a_max", self.a_max > 0),
            ("q", self.q > 0), ("r", self.r > 0), ("omega", self.omega < 0),
            ("p_v", self.p_v > 0), ("p_d", self.p_d > 0), ("eps", self.eps > 0),
            ("inject_prob", 0.0 < self.inject_prob < 1.0),
            ("v_min", 0 < self.v_min <= self.v_max <= self.v_ceil),
            ("target_completed", self.target_completed >= 1),
        ]
        for key, ok in checks:
            if not ok:
                raise InvalidConfigError(f"config value out of domain: {key}")
        if not (self.topology == "complete" or self.topology.startswith("disk:")):
            raise InvalidConfigError("config value out of domain: topology")
        if self.topology.startswith("disk:"):
            try:
                radius = float(self.topology.split(":", 1)[1])
            except ValueError:
                raise InvalidConfigError("config value out of domain: topology")
            if radius <= 0:
                raise InvalidConfigError("config value out of domain: topology")

    def mpc_params(self) -> MpcParams:
        return MpcParams(t_s=self.t_s, horizon=self.horizon, lam=self.lam,
                         lam_bar=self.lam_bar, delta_bar=self.delta_bar,
                         d_min=self.d_min, v_floor=self.v_floor, v_ceil=self.v_ceil,
                         q=self.q, r=self.r, omega=self.omega)

    def build_network(self) -> network.RoadNetwork:
        return network.build_grid(self.rows, self.cols, self.lane_width,
                                  self.sector_unit, self.sector_multiples,
                                  self.margin_multiple)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidConfigError(f"unknown config key: {sorted(unknown)[0]}")
        cfg = cls(**d)
        cfg.validate()
        return cfg


def route_label(route: network.Route) -> str:
    e, x = route.entry, route.exit
    return f"{e[0]}{e[1]}-{''.join(route.movements)}-{x[0]}{x[1]}"


@dataclass
class TraceRow:
    k: int
    vid: int
    path: str
    p: float
    v: float
    u: float
    x: float
    y: float
    v_r: float
    prio: int
    kappa: int
    events: tuple = ()


CSV_COLUMNS = ["k", "id", "path", "p", "v", "u", "x", "y", "v_r", "prio", "kappa", "events"]


@dataclass
class TraceLog:
    config: dict
    rows: list = field(default_factory=list)
    injected: int = 0
    completed: int = 0
    skipped_spawns: int = 0
    rerouted: int = 0
    safety_violations: int = 0
    infeasible_count: int = 0
    deadlock_warnings: int = 0
    final_tick: int = 0
    incomplete: bool = False

    def counters(self) -> dict:
        return {
            "injected": self.injected,
            "completed": self.completed,
            "skipped_spawns": self.skipped_spawns,
            "rerouted": self.rerouted,
            "safety_violations": self.safety_violations,
            "infeasible_count": self.infeasible_count,
            "deadlock_warnings": self.deadlock_warnings,
            "final_tick": self.final_tick,
            "incomplete": self.incomplete,
        }

    def to_csv(self, fp) -> None:
        w = csv.writer(fp, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([r.k, r.vid, r.path, repr(float(r.p)), repr(float(r.v)),
                        repr(float(r.u)), repr(float(r.x)), repr(float(r.y)),
                        repr(float(r.v_r)), r.prio, r.kappa, ";".join(r.events)])

    @classmethod
    def from_csv(cls, fp, config: dict | None = None) -> "TraceLog":
        rd = csv.reader(fp)
        header = next(rd)
        if header != CSV_COLUMNS:
            raise InvalidConfigError(f"malformed trace header: {header}")
        trace = cls(config or {})
        for rec in rd:
            if len(rec) != len(CSV_COLUMNS):
                raise InvalidConfigError(f"malformed trace row: {rec}")
            events = tuple(rec[11].split(";")) if rec[11] else ()
            trace.rows.append(TraceRow(int(rec[0]), int(rec[1]), rec[2],
                                       float(rec[3]), float(rec[4]), float(rec[5]),
                                       float(rec[6]), float(rec[7]), float(rec[8]),
                                       int(rec[9]), int(rec[10]), events))
            for ev in events:
                if ev == "injection":
                    trace.injected += 1
                elif ev == "completion":
                    trace.completed += 1
        if trace.rows:
            trace.final_tick = trace.rows[-1].k
        return trace


@dataclass
class Vehicle:
    vid: int
    route: network.Route
    path: network.Path
    v_r: float
    state: dynamics.VehicleState
    u_prev: float = 0.0
    injected_at: int = 0
    warm_labels: tuple = ()
    events: list = field(default_factory=list)


class World:
    def __init__(self, config: SimConfig):
        config.validate()
        self.config = config
        self.net = config.build_network()
        self.rng = np.random.default_rng(config.seed)
        self.params = config.mpc_params()
        self.tick = 0
        self.next_vid = 1
        self.vehicles: list[Vehicle] = []
        self.trace = TraceLog(config.to_dict())
        self.ports = self.net.entry_ports()
        self._dest_candidates = {p: self.net.destination_candidates(p) for p in self.ports}
        self._reachable = {}
        self._span_by_route = {}
        if config.topology.startswith("disk:"):
            self.disk_radius = float(config.topology.split(":", 1)[1])
        else:
            self.disk_radius = None
        # ceiling for along-path clearance past a conflict point; per-pair
        # values derive from crossing angle or branch curvature below
        self.max_clearance = 6.0
        self.qp_dump = None  # optional per-tick dump sink (list)

    def _conflict_clearance(self, c) -> float:
        """Along-path distance past a conflict at which true separation
        reaches d_min: d/sin(angle) for crossings, sqrt(2 d / dkappa) for
        diverging branches, the plain margin on co-linear merges."""
        d = self.config.d_min
        if c.kind == "crossing":
            return min(d / max(c.sin_angle, 1e-3), self.max_clearance)
        if c.kind == "fork":
            if c.rel_curvature <= 1e-9:
                return self.max_clearance
            return min(math.sqrt(2.0 * d / c.rel_curvature), self.max_clearance)
        return d

    # -- injection ----------------------------------------------------------

    def _reachable_exits(self, entry):
        key = (entry, self.config.allow_left_turns)
        if key not in self._reachable:
            self._reachable[key] = self.net.reachable_exits(
                entry, self.config.allow_left_turns)
        return self._reachable[key]

    def _draw_route(self, entry):
        """Destination and route from exactly three uniform draws."""
        cands = self._dest_candidates[entry]
        u_dest = self.rng.random()
        dest = cands[min(int(u_dest * len(cands)), len(cands) - 1)]
        rerouted = False
        reachable = self._reachable_exits(entry)
        if dest not in reachable:
            ex = self.net.exit_point(dest)
            dest = min(reachable, key=lambda c: (network.distance(
                self.net.exit_point(c), ex), c))
            rerouted = True
        n = self.net.minimal_route_count(entry, dest, self.config.allow_left_turns)
        u_route = self.rng.random()
        rank = min(int(u_route * n), n - 1)
        route = self.net.route_by_rank(entry, dest, rank, self.config.allow_left_turns)
        return route, rerouted

    def inject(self, prob: float | None = None) -> list:
        """Per entry port, spawn with probability prob if the lane is clear."""
        cfg = self.config
        if prob is None:
            prob = cfg.inject_prob
        born = []
        for port in self.ports:
            if self.rng.random() >= prob:
                continue
            v_r = cfg.v_min + (cfg.v_max - cfg.v_min) * self.rng.random()
            route, rerouted = self._draw_route(port)
            path = self.net.build_path(route)
            gap = cfg.d_min + cfg.lam * v_r
            blocked = False
            for veh in self.vehicles:
                pt = veh.path.point_at(veh.state.p)
                lat, loc = path.locate(np.array([pt]))
                if lat[0] <= network.SNAP_TOLERANCE and loc[0] <= gap:
                    blocked = True
                    break
            if blocked:
                self.trace.skipped_spawns += 1
                continue
            veh = Vehicle(self.next_vid, route, path, v_r,
                          dynamics.VehicleState(0.0, v_r),
                          injected_at=self.tick + 1)
            veh.events.append("injection")
            if rerouted:
                veh.events.append("rerouted")
                self.trace.rerouted += 1
            self.next_vid += 1
            self.vehicles.append(veh)
            self.trace.injected += 1
            born.append(veh)
        return born

    def _no_stop_spans(self, path):
        """Stop-forbidden arc-length bands: intersection interiors widened so
        a halt outside them keeps d_min clearance to every crossing lane."""
        key = path.route.key
        if key not in self._span_by_route:
            margin = max(0.0, self.config.d_min - self.config.lane_width / 2.0)
            self._span_by_route[key] = tuple(
                (lo - margin, hi + margin)
                for lo, hi in self.net.intersection_spans(path))
        return self._span_by_route[key]

    # -- per-tick conflict registry ------------------------------------------

    def _tick_registry(self, globals_by_vid):
        """Cluster pairwise conflict points among active vehicles.

        A vehicle stays a member of a point it has already crossed until it
        is a clearance past it: for transversal crossings at shallow angles
        and for route forks, the along-path distance understates the real
        separation, so approaching traffic must keep yielding to such
        stragglers. Returns (clusters, pending_by_vid) where pending lists
        only points still ahead of the vehicle.
        """
        entries = []
        vs = self.vehicles
        for a in range(len(vs)):
            for b in range(a + 1, len(vs)):
                va, vb = vs[a], vs[b]
                for c in self.net.pair_conflicts_cached(va.path, vb.path):
                    clear = self._conflict_clearance(c)
                    pair = frozenset((va.vid, vb.vid))
                    if c.local_a > va.state.p - clear and c.local_b > vb.state.p - clear \
                            and (c.local_a > va.state.p or c.local_b > vb.state.p):
                        entries.append((c.x, c.y, va.vid, c.local_a, pair, clear))
                        entries.append((c.x, c.y, vb.vid, c.local_b, pair, clear))
        sites = network._cluster_sites([e[:4] for e in entries])
        clusters = [{"point": (s.x, s.y), "members": s.locals, "clearance": {}}
                    for s in sites]
        by_vid_loc = {}
        for idx, cl in enumerate(clusters):
            for vid, loc in cl["members"].items():
                by_vid_loc.setdefault(vid, []).append((loc, idx))
        for x, y, vid, loc, pair, clear in entries:
            for mloc, idx in by_vid_loc.get(vid, ()):
                if abs(mloc - loc) < 2 * network.MERGE_TOLERANCE and \
                        network.distance(clusters[idx]["point"], (x, y)) <= network.MERGE_TOLERANCE:
                    cl = clusters[idx]["clearance"]
                    cl[pair] = max(cl.get(pair, 0.0), clear)
                    break
        pending = {v.vid: [] for v in vs}
        for idx, cl in enumerate(clusters):
            for v in vs:
                loc = cl["members"].get(v.vid)
                if loc is not None and loc > v.state.p:
                    pending[v.vid].append(idx)
        return clusters, pending

    # -- auctions -------------------------------------------------------------

    def _auction(self, cluster, state_by_vid, globals_by_vid):
        """Agreed orderings (one per communication component) at one point.

        Members already past the point precede every pending contender:
        they physically occupy the conflict area, so approaching winners
        must let them clear regardless of bid.
        """
        cfg = self.config
        crossed = tuple(sorted(
            vid for vid, loc in cluster["members"].items()
            if loc <= state_by_vid[vid].p))
        contenders = sorted(vid for vid in cluster["members"] if vid not in crossed)
        point = cluster["point"]
        if len(contenders) < 2:
            return [crossed + tuple(contenders)], 0
        if self.disk_radius is None:
            groups = [contenders]
            graphs = [cbaa.CommGraph.complete(len(contenders))]
        else:
            comps = cbaa.disk_components(
                {vid: globals_by_vid[vid] for vid in contenders}, self.disk_radius)
            if len(comps) > 1:
                log.warning("tick %d: disk topology split %d contenders into %d "
                            "components at %s", self.tick, len(contenders),
                            len(comps), point)
            groups = [ids for ids, _ in comps]
            graphs = [g for _, g in comps]
        orderings = []
        kappa = 0
        for ids, graph in zip(groups, graphs):
            bids = []
            for local, vid in enumerate(ids, start=1):
                d = network.distance(globals_by_vid[vid], point)
                value = cbaa.compute_bid(state_by_vid[vid].v, d, cfg.p_v, cfg.p_d, cfg.eps)
                bids.append(cbaa.Bid(local, value))
            res = cbaa.run_auction(bids, graph)
            orderings.append(crossed + tuple(ids[w - 1] for w in res.winners))
            kappa = max(kappa, res.iterations)
        return orderings, kappa

    # -- one tick --------------------------------------------------------------

    def step(self) -> None:
        cfg = self.config
        k = self.tick
        vs = list(self.vehicles)
        by_vid = {v.vid: v for v in vs}
        state_by_vid = {v.vid: v.state for v in vs}
        path_by_vid = {v.vid: v.path for v in vs}
        u_prev_by_vid = {v.vid: v.u_prev for v in vs}
        globals_by_vid = {v.vid: v.path.point_at(v.state.p) for v in vs}
        events = {v.vid: list(v.events) for v in vs}
        for v in vs:
            v.events.clear()

        # (1) frontal sets and pending collision points; same-lane vehicles
        # behind a vehicle are tracked too, because auction priority is
        # meaningless against them (overtaking is forbidden); standing
        # vehicles inside the swept corridor of a path are static obstacles
        # for it no matter what any auction said
        stop_thr = cfg.d_min + 0.2
        frontal = {}
        followers = {}
        static_block = {}   # vid -> vehicles inside the swept corridor
        headroom = {}       # vid -> free corridor distance to the next stander
        for v in vs:
            others = [w for w in vs if w.vid != v.vid]
            frontal[v.vid] = set()
            followers[v.vid] = set()
            static_block[v.vid] = set()
            headroom[v.vid] = math.inf
            if not others:
                continue
            pts = np.array([globals_by_vid[w.vid] for w in others])
            lat, loc = v.path.locate(pts)
            head = math.inf
            for w, la, lo in zip(others, lat, loc):
                if la <= network.SNAP_TOLERANCE:
                    if lo > v.state.p:
                        frontal[v.vid].add(w.vid)
                    else:
                        followers[v.vid].add(w.vid)
                if la < stop_thr and lo > v.state.p:
                    if w.state.v < 0.5:
                        static_block[v.vid].add(w.vid)
                        head = min(head, lo - v.state.p)
                    elif la < cfg.d_min:
                        # anything sweeping inside the collision disc must be
                        # trailed, winner or not; holders park outside it
                        static_block[v.vid].add(w.vid)
            headroom[v.vid] = head
        clusters, pending = self._tick_registry(globals_by_vid)

        # (2) auctions at contested points, (3) priority sets
        orderings_by_cluster = {}
        kappa_by_vid = {v.vid: 0 for v in vs}
        for idx, cl in enumerate(clusters):
            orderings, kappa = self._auction(cl, state_by_vid, globals_by_vid)
            orderings_by_cluster[idx] = orderings
            for vid in cl["members"]:
                kappa_by_vid[vid] = max(kappa_by_vid[vid], kappa)
        priority = {}
        for v in vs:
            lists = {}
            for idx in pending[v.vid]:
                for ordering in orderings_by_cluster[idx]:
                    if v.vid in ordering:
                        lists[idx] = ordering
                        break
            prio = cbaa.priority_set(v.vid, lists) if lists else set()
            priority[v.vid] = prio - followers[v.vid]

        # circular waits among stopped vehicles never clear on their own
        # (a standing vehicle's bid loses to any mover), so each detected
        # cycle releases its oldest physically-unblocked member from
        # yielding to the cycle: box-rule waiting spots keep the sweep
        # through the intersection clear of every other member
        # a crawling vehicle blocks its waiters just as a stopped one does;
        # the wait graph uses the same standing threshold as the static scan
        blocked = {v.vid for v in vs if v.state.v < 0.5}
        if blocked:
            wait = {i: (priority[i] | frontal[i] | static_block[i]) & blocked
                    for i in blocked}
            for comp in _wait_components(wait):
                self.trace.deadlock_warnings += 1
                log.debug("tick %d: circular wait among %s", k, comp)
                for vid in comp:
                    events[vid].append("deadlock_warning")
                members = set(comp)
                # releasing only drops peer-priority edges; headway, corridor
                # and standing-obstacle rows always stay, so a release is
                # safe no matter whom it hits. Aim the disjoint release slots
                # at members with the most free corridor ahead of them.
                candidates = sorted(comp, key=lambda vid: (-headroom[vid], vid))
                taken = set()
                for vid in candidates:
                    mine = set(pending[vid])
                    if mine & taken:
                        continue
                    taken |= mine
                    priority[vid] = priority[vid] - members
                    events[vid].append("deadlock_released")

        # (4) all MPC solves against the frozen snapshot; rollouts of the
        # observed vehicles are data shared by every observer this tick
        observed = set()
        for v in vs:
            observed |= priority[v.vid] | frontal[v.vid] | static_block[v.vid]
        shared_rollouts = {
            j: mpc_rollout(state_by_vid[j].p, state_by_vid[j].v,
                           u_prev_by_vid[j], path_by_vid[j], self.params)
            for j in observed}
        controls = {}
        for v in vs:
            nbs = []
            for j in sorted(priority[v.vid] | frontal[v.vid] | static_block[v.vid]):
                if j in priority[v.vid] and j not in frontal[v.vid]:
                    shared = tuple(
                        (clusters[idx]["members"][v.vid], clusters[idx]["members"][j],
                         clusters[idx]["clearance"].get(frozenset((v.vid, j)),
                                                        self.config.d_min))
                        for idx in pending[v.vid]
                        if j in clusters[idx]["members"])
                else:
                    shared = ()
                st = state_by_vid[j]
                nbs.append(Neighbor(j, st.p, st.v, u_prev_by_vid[j], path_by_vid[j],
                                    frontal=j in frontal[v.vid], shared_points=shared))
            u, info = control_step(v.path, v.state.p, v.state.v, v.v_r,
                                   cfg.a_min, cfg.a_max, nbs, self.params,
                                   cfg.kkt_tolerance, v.warm_labels,
                                   self._no_stop_spans(v.path), shared_rollouts)
            v.warm_labels = info.get("active_labels", ())
            if info["status"] != "optimal":
                events[v.vid].append("infeasible_mpc")
                self.trace.infeasible_count += 1
            if info["dropped_t0"]:
                events[v.vid].append("t0_row_dropped")
            controls[v.vid] = u
            if self.qp_dump is not None:
                self.qp_dump.append({
                    "tick": k, "vehicle": v.vid, "rows": info["rows"],
                    "vars": 2 * (cfg.horizon + 1),
                    "status": info["status"], "objective": info["objective"],
                    "used_fallback": info["used_fallback"],
                    "dropped_t0": len(info["dropped_t0"]),
                })

        # safety audit on the snapshot
        vids = [v.vid for v in vs]
        if len(vids) >= 2:
            coords = np.array([globals_by_vid[j] for j in vids])
            diff = coords[:, None, :] - coords[None, :, :]
            dist = np.hypot(diff[..., 0], diff[..., 1])
            ii, jj = np.where(np.triu(dist < cfg.d_min, 1))
            for a, b in zip(ii, jj):
                events[vids[a]].append("safety_violation")
                events[vids[b]].append("safety_violation")
                self.trace.safety_violations += 1

        # (5) apply inputs
        finished = []
        for v in vs:
            new_state = dynamics.step(v.state, controls[v.vid], cfg.t_s)
            if new_state.v < 0.0:
                if new_state.v < -1e-6:
                    raise AssertionError(
                        f"vehicle {v.vid} accepted negative speed {new_state.v}")
                new_state = dynamics.VehicleState(new_state.p, 0.0)
            v.u_prev = controls[v.vid]
            v.state = new_state
            # (6) completion once the path is fully traversed
            if new_state.p >= v.path.length - 1e-9:
                finished.append(v)
                events[v.vid].append("completion")
                self.trace.completed += 1

        gone = {v.vid for v in finished}
        self.vehicles = [v for v in self.vehicles if v.vid not in gone]

        # (7) injection; new vehicles first appear in the next tick's rows
        self.inject()

        # (8) log the snapshot this tick's controls were computed from
        for vid in vids:
            st = state_by_vid[vid]
            gx, gy = globals_by_vid[vid]
            veh = by_vid[vid]
            self.trace.rows.append(TraceRow(
                k, vid, route_label(veh.route), st.p, st.v, controls[vid],
                gx, gy, veh.v_r, len(priority[vid]), kappa_by_vid[vid],
                tuple(events[vid])))
        self.tick += 1
        self.trace.final_tick = k

    # -- full run ---------------------------------------------------------------

    def mean_route_length(self) -> float:
        total, count = 0.0, 0
        for entry in self.ports:
            for dest in self._dest_candidates[entry]:
                if dest in self._reachable_exits(entry):
                    rt = self.net.route_by_rank(entry, dest, 0, self.config.allow_left_turns)
                    total += self.net.build_path(rt).length
                    count += 1
        return total / count

    def tick_cap(self) -> int:
        if self.config.max_ticks is not None:
            return self.config.max_ticks
        per_traversal = self.mean_route_length() / (self.config.v_min * self.config.t_s)
        return int(math.ceil(40 * self.config.target_completed * per_traversal))


def run(config: SimConfig, qp_dump: list | None = None) -> TraceLog:
    world = World(config)
    world.qp_dump = qp_dump
    cap = world.tick_cap()
    while world.trace.completed < config.target_completed:
        if world.tick >= cap:
            world.trace.incomplete = True
            log.warning("tick cap %d reached with %d/%d completions",
                        cap, world.trace.completed, config.target_completed)
            break
        world.step()
    return world.trace


def _wait_components(wait: dict) -> list:
    """Strongly connected components of size >= 2 in the wait-for graph.

    Each component is a circular wait among stopped vehicles (Tarjan,
    iterative to keep deep queues off the recursion stack).
    """
    index = {}
    low = {}
    on_stack = set()
    stack = []
    comps = []
    counter = [0]

    for root in sorted(wait):
        if root in index:
            continue
        work = [(root, iter(sorted(wait.get(root, ()))))]
        index[root] = low[root] = counter[0]
        counter[0] += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            u, it = work[-1]
            advanced = False
            for w in it:
                if w not in wait:
                    continue
                if w not in index:
                    index[w] = low[w] = counter[0]
                    counter[0] += 1
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, iter(sorted(wait.get(w, ())))))
                    advanced = True
                    break
                if w in on_stack:
                    low[u] = min(low[u], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[u])
            if low[u] == index[u]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == u:
                        break
                if len(comp) >= 2:
                    comps.append(tuple(sorted(comp)))
    return comps


def detect_collisions(trace: TraceLog, d_min: float | None = None) -> list:
    """All (tick, vid_a, vid_b, distance) closer than the minimum distance."""
    if d_min is None:
        d_min = trace.config.get("d_min", 2.1)
    by_tick = {}
    for r in trace.rows:
        by_tick.setdefault(r.k, []).append(r)
    out = []
    for k in sorted(by_tick):
        rows = by_tick[k]
        if len(rows) < 2:
            continue
        coords = np.array([[r.x, r.y] for r in rows])
        diff = coords[:, None, :] - coords[None, :, :]
        dist = np.hypot(diff[..., 0], diff[..., 1])
        ii, jj = np.where(np.triu(dist < d_min, 1))
        for a, b in zip(ii, jj):
            out.append((k, rows[a].vid, rows[b].vid, float(dist[a, b])))
    return out
