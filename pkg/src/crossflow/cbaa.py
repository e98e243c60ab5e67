"""Consensus-based auction (CBAA-M) for crossing priorities.

Each agent keeps a winners list v (agent ids, 0 = empty slot) and a bids
list w of equal length S. One iteration is a local bid placement followed
by a synchronous slot-wise max-consensus merge with all neighbors. On a
connected topology every agent converges to the same descending ordering
of all bids within S*l iterations, l being the graph diameter in hops.

Bids are totally ordered by the pair (value, -agent id): ties in raw value
are broken deterministically in favor of the lower agent id, which stands
in for the protocol's distinct-bid assumption without perturbing values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import DisconnectedGraphError, ProtocolError


@dataclass(frozen=True)
class Bid:
    agent: int    # 1-based agent id
    value: float  # > 0

    @property
    def key(self):
        return (self.value, -self.agent)


class CommGraph:
    """Undirected connected communication graph over agents 1..n."""

    def __init__(self, n: int, edges):
        self.n = n
        self.neighbors = {i: set() for i in range(1, n + 1)}
        for a, b in edges:
            if a == b:
                raise ProtocolError("self-loops are not allowed")
            if not (1 <= a <= n and 1 <= b <= n):
                raise ProtocolError(f"edge ({a},{b}) outside agent range 1..{n}")
            self.neighbors[a].add(b)
            self.neighbors[b].add(a)
        if not self._connected():
            raise DisconnectedGraphError("communication graph is not connected")

    def _connected(self) -> bool:
        if self.n <= 1:
            return True
        seen = {1}
        stack = [1]
        while stack:
            for j in self.neighbors[stack.pop()]:
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
        return len(seen) == self.n

    _complete_cache: dict = {}

    @classmethod
    def complete(cls, n: int) -> "CommGraph":
        if n not in cls._complete_cache:
            cls._complete_cache[n] = cls(
                n, [(i, j) for i in range(1, n + 1) for j in range(i + 1, n + 1)])
        return cls._complete_cache[n]


def disk_components(positions, radius: float):
    """Connected components of the proximity graph over agent positions.

    positions: dict agent id -> (x, y). Returns a list of (sorted global
    ids, CommGraph over local ids 1..len) per component; local id k maps
    to global id ids[k-1].
    """
    ids = sorted(positions)
    adj = {i: set() for i in ids}
    for a in range(len(ids)):
        for b in range(a + 1, len(ids)):
            i, j = ids[a], ids[b]
            dx = positions[i][0] - positions[j][0]
            dy = positions[i][1] - positions[j][1]
            if dx * dx + dy * dy <= radius * radius:
                adj[i].add(j)
                adj[j].add(i)
    seen = set()
    comps = []
    for i in ids:
        if i in seen:
            continue
        comp = []
        stack = [i]
        seen.add(i)
        while stack:
            u = stack.pop()
            comp.append(u)
            for vtx in adj[u]:
                if vtx not in seen:
                    seen.add(vtx)
                    stack.append(vtx)
        comp.sort()
        local = {g: k + 1 for k, g in enumerate(comp)}
        edges = [(local[a2], local[b2]) for a2 in comp for b2 in adj[a2] if a2 < b2]
        comps.append((comp, CommGraph(len(comp), edges)))
    return comps


def shortest_path_bound(graph: CommGraph) -> int:
    """Graph diameter in hops (max-consensus convergence bound)."""
    cached = getattr(graph, "_diameter", None)
    if cached is not None:
        return cached
    diam = 0
    for src in range(1, graph.n + 1):
        dist = {src: 0}
        frontier = [src]
        while frontier:
            nxt = []
            for u in frontier:
                for j in graph.neighbors[u]:
                    if j not in dist:
                        dist[j] = dist[u] + 1
                        nxt.append(j)
            frontier = nxt
        if len(dist) != graph.n:
            raise DisconnectedGraphError("graph is not connected")
        diam = max(diam, max(dist.values()))
    graph._diameter = diam
    return diam


def phase1_bid(agent: int, value: float, v_prev, w_prev):
    """Insert own bid at the earliest slot it beats, unless already listed."""
    if len(v_prev) != len(w_prev):
        raise ProtocolError("winners and bids lists must have equal length")
    v = list(v_prev)
    w = list(w_prev)
    if agent in v:
        return v, w
    for j in range(len(v)):
        # lexicographic (value, -id): raw ties go to the lower agent id
        if value > w[j] or (value == w[j] and agent < v[j]):
            v[j] = agent
            w[j] = value
            break
    return v, w


def phase2_update(own, received):
    """Slot-wise max-consensus over own and all received (v, w) pairs."""
    v0, w0 = own
    s = len(v0)
    for vr, wr in received:
        if len(vr) != s or len(wr) != s:
            raise ProtocolError("received lists have mismatched length")
    v = list(v0)
    w = list(w0)
    for j in range(s):
        best_v, best_w = v0[j], w0[j]
        for vr, wr in received:
            wj = wr[j]
            if wj > best_w or (wj == best_w and vr[j] < best_v):
                best_v, best_w = vr[j], wj
        v[j] = best_v
        w[j] = best_w
    return v, w


@dataclass
class AuctionResult:
    winners: tuple        # agreed v*, agent ids in priority order
    bids: tuple           # agreed w*
    iterations: int       # measured convergence iteration count
    transcript: list = field(default_factory=list)


def run_auction(bids, graph: CommGraph, record_transcript: bool = False) -> AuctionResult:
    """Run CBAA-M to agreement on a connected graph."""
    bids = sorted(bids, key=lambda b: b.agent)
    if [b.agent for b in bids] != list(range(1, graph.n + 1)):
        raise ProtocolError("bids must cover agents 1..S exactly once")
    values = {b.agent: b.value for b in bids}
    if any(val <= 0 for val in values.values()):
        raise ProtocolError("bid values must be positive")

    s = graph.n
    l = shortest_path_bound(graph)
    cap = max(1, s * l)
    v = {i: [0] * s for i in values}
    w = {i: [0.0] * s for i in values}
    transcript = []
    for kappa in range(1, cap + 1):
        for i in values:
            v[i], w[i] = phase1_bid(i, values[i], v[i], w[i])
        snapshot = {i: (list(v[i]), list(w[i])) for i in values}
        for i in values:
            received = [snapshot[j] for j in sorted(graph.neighbors[i])]
            v[i], w[i] = phase2_update(snapshot[i], received)
        if record_transcript:
            transcript.append({
                "iteration": kappa,
                "agents": {i: {"v": list(v[i]), "w": list(w[i])} for i in sorted(values)},
            })
        first = (v[1], w[1])
        agreed = all((v[i], w[i]) == first for i in values)
        if agreed and sorted(first[0]) == list(range(1, s + 1)):
            return AuctionResult(tuple(first[0]), tuple(first[1]), kappa, transcript)
    raise ProtocolError(f"no agreement within the S*l bound ({cap} iterations)")


def compute_bid(v: float, d_to_point: float, p_v: float, p_d: float, eps: float) -> float:
    """Bid for a collision point from current speed and distance to it."""
    if d_to_point < 0 or min(p_v, p_d, eps) <= 0:
        raise ValueError("distance must be nonnegative and parameters positive")
    return (p_v * v + p_d) / (d_to_point + eps)


def priority_set(vehicle, lists_by_point: dict):
    """All ids listed before `vehicle` in any of its points' agreed orderings."""
    out = set()
    for point, order in lists_by_point.items():
        order = list(order)
        if vehicle not in order:
            raise ProtocolError(f"vehicle {vehicle} missing from ordering at {point}")
        out.update(order[:order.index(vehicle)])
    return out
