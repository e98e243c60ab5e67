"""On-board convex MPC: headway and crossing constraints over a short horizon.

Per tick each vehicle solves a small dense QP in the stacked decision
vector z = [u(0..T_h), delta(0..T_h)]:

  - own dynamics are condensed into linear maps from inputs to predicted
    speed and position, so no state variables appear;
  - other vehicles follow fixed constant-acceleration rollouts with speed
    saturated to [v_floor, v_ceil]; everything about them is data;
  - a headway row keeps the vehicle a time-headway plus fixed margin behind
    anything predicted to sit on its own path;
  - a crossing row holds the vehicle short of a shared collision point
    while a higher-priority vehicle has not yet cleared it;
  - the slack delta widens the margin when cheap (rewarded linearly) and
    may shrink it down to (lam - lam_bar) * v when needed.

All safety rows of one prediction step share a single gradient, so only
the smallest bound per step is kept. The solver is a dense active-set
method on the condensed QP; numerical trouble falls back to cvxopt's
interior point and is reported as such.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .network import Path

_DELTA_REG = 1e-5   # strict convexity for the linear-cost slack block; far
                    # below |omega| so no vertex choice ever flips
_FEAS_TOL = 1e-9
_DUAL_TOL = 1e-9


@dataclass(frozen=True)
class MpcParams:
    t_s: float = 0.25
    horizon: int = 10          # T_h
    lam: float = 1.0           # time headway, s
    lam_bar: float = 0.5       # max headway shrink, s
    delta_bar: float = 10.0    # slack cap, m
    d_min: float = 2.1         # bumper-to-bumper margin, m
    v_floor: float = 0.0
    v_ceil: float = 130.0 / 3.6
    q: float = 0.1
    r: float = 0.01
    omega: float = -0.1


@dataclass
class Neighbor:
    """Snapshot of one vehicle in L_i u F_i at the current tick."""
    vid: int
    p: float
    v: float
    u: float                 # last applied acceleration
    path: Path
    frontal: bool            # member of F_i^k
    # (own local, neighbor local, clearance) per shared pending point; the
    # crossing row stays active until the neighbor is `clearance` past it
    shared_points: tuple = ()


def predict_rollout(p0, v0, u, params: MpcParams):
    """Constant-acceleration rollout with saturated speed."""
    t = params.horizon
    p = np.empty(t + 1)
    v = np.empty(t + 1)
    p[0], v[0] = p0, v0
    for k in range(t):
        p[k + 1] = p[k] + params.t_s * v[k]
        v[k + 1] = min(max(v[k] + params.t_s * u, params.v_floor), params.v_ceil)
    return p, v


@dataclass
class HorizonPrediction:
    params: MpcParams
    own_path: Path
    own_p: float
    own_v: float
    neighbors: list                  # Neighbor records
    rollout_p: dict = field(default_factory=dict)   # vid -> (T+1,)
    rollout_v: dict = field(default_factory=dict)
    on_path: dict = field(default_factory=dict)     # vid -> bool mask (T+1,)
    rho: dict = field(default_factory=dict)         # vid -> own-path local coord

    def frontal_at(self, t: int):
        return {nb.vid for nb in self.neighbors if self.on_path[nb.vid][t]}


def rollout_with_globals(p0, v0, u, path: Path, params: MpcParams):
    """Rollout plus the global points of its in-domain prefix.

    Shareable across observers within one tick: positions beyond the path
    end mean the vehicle has left the network by that prediction step.
    """
    p, v = predict_rollout(p0, v0, u, params)
    valid = p <= path.length + 1e-9
    pts = path.points_at(p[valid]) if valid.any() else np.empty((0, 2))
    return p, v, valid, pts


def predict_others(own_path: Path, own_p: float, own_v: float,
                   neighbors, params: MpcParams,
                   snap_tol: float | None = None,
                   shared_rollouts=None) -> HorizonPrediction:
    """Roll every neighbor forward and project its positions onto own path.

    Membership uses the collision disc as its lateral tolerance: anything
    predicted to sweep within d_min of the path must be trailed with the
    full headway, which keeps the safety argument airtight at shallow
    crossing angles, route forks, and intersection stalls alike. A
    projection behind the current position is ignored: no constraint can
    act on the past, and such a vehicle is not in front.
    """
    if snap_tol is None:
        snap_tol = params.d_min + 0.1
    pred = HorizonPrediction(params, own_path, own_p, own_v, list(neighbors))
    t = params.horizon
    batches = []
    for nb in pred.neighbors:
        if shared_rollouts is not None and nb.vid in shared_rollouts:
            p, v, valid, pts = shared_rollouts[nb.vid]
        else:
            p, v, valid, pts = rollout_with_globals(nb.p, nb.v, nb.u, nb.path, params)
        pred.rollout_p[nb.vid] = p
        pred.rollout_v[nb.vid] = v
        batches.append((nb.vid, valid, pts))
    if batches:
        stacked = np.vstack([pts for _, _, pts in batches])
        lat_all, loc_all = own_path.locate(stacked) if len(stacked) else (
            np.empty(0), np.empty(0))
        at = 0
        for vid, valid, pts in batches:
            n = len(pts)
            mask = np.zeros(t + 1, dtype=bool)
            rho = np.zeros(t + 1)
            mask[valid] = (lat_all[at:at + n] <= snap_tol) & \
                (loc_all[at:at + n] >= own_p - 1e-9)
            rho[valid] = loc_all[at:at + n]
            at += n
            pred.on_path[vid] = mask
            pred.rho[vid] = rho
    return pred


def predicted_frontal(prediction: HorizonPrediction, t: int):
    """F_i^t: neighbors whose predicted position lies on own path at t."""
    return prediction.frontal_at(t)


# ---------------------------------------------------------------------------
# condensed QP
# ---------------------------------------------------------------------------

@dataclass
class QpProblem:
    H: np.ndarray
    g: np.ndarray
    G: np.ndarray
    h: np.ndarray
    n_inputs: int
    labels: list           # one (kind, t, vid) tuple per row of G
    dropped_t0: list       # safety rows at t=0 violated by measurement
    delta_cap_rows: list   # indices of the pure delta-cap rows
    v0: float
    v_r: float
    a_min: float
    a_max: float
    params: MpcParams

    def objective_of(self, u, delta):
        """Exact cost of a trajectory, replayed through the stated cost."""
        p = self.params
        v = self.v0 + p.t_s * np.concatenate([[0.0], np.cumsum(u)[:-1]])
        return float(np.sum(p.q * (v - self.v_r) ** 2 + p.r * u ** 2 + p.omega * delta))


@lru_cache(maxsize=32)
def _static_parts(params: MpcParams, a_min: float, a_max: float):
    t, ts = params.horizon, params.t_s
    nu = t + 1
    n = 2 * nu
    sv = np.zeros((nu, nu))
    sp = np.zeros((nu, nu))
    for k in range(1, nu):
        sv[k, :k] = ts
        for s in range(k):
            sp[k, s] = ts * ts * (k - 1 - s)
    H = np.zeros((n, n))
    H[:nu, :nu] = 2.0 * (params.q * sv.T @ sv + params.r * np.eye(nu))
    H[nu:, nu:] = 2.0 * _DELTA_REG * np.eye(nu)
    bg = 2.0 * params.q * sv.T @ np.ones(nu)

    ident = np.eye(nu)
    zeros = np.zeros((nu, nu))
    g_box = np.vstack([
        np.hstack([ident, zeros]),            # u <= a_max
        np.hstack([-ident, zeros]),           # -u <= -a_min
        np.hstack([sv, zeros]),               # v(t) <= v_ceil
        np.hstack([-sv, zeros]),              # v(t) >= v_floor
        np.hstack([zeros, ident]),            # delta <= cap
        np.hstack([-params.lam_bar * sv, -ident]),  # delta >= -lam_bar v(t)
    ])
    labels_box = (
        [("u_max", k, None) for k in range(nu)]
        + [("u_min", k, None) for k in range(nu)]
        + [("v_max", k, None) for k in range(nu)]
        + [("v_min", k, None) for k in range(nu)]
        + [("delta_max", k, None) for k in range(nu)]
        + [("delta_min", k, None) for k in range(nu)]
    )
    safety_coef = params.lam * sv + sp
    return sv, sp, H, bg, g_box, labels_box, safety_coef


def build_qp(own_path: Path, own_p: float, own_v: float, v_r: float,
             a_min: float, a_max: float, prediction: HorizonPrediction,
             params: MpcParams, no_stop_spans=()) -> QpProblem:
    t = params.horizon
    nu = t + 1
    n = 2 * nu
    sv, sp, H, bg, g_box, labels_box, safety_coef = _static_parts(params, a_min, a_max)

    g = np.empty(n)
    g[:nu] = bg * (own_v - v_r)
    g[nu:] = params.omega

    # planned halts must clear intersection interiors: if stopping d_min
    # short of a (near-)stationary bound would place the vehicle where cross
    # traffic sweeps, the bound retreats to just before that zone instead
    def pulled(bound):
        spot = bound - params.d_min
        for _ in range(len(no_stop_spans) + 1):
            hit = next((lo for lo, hi in no_stop_spans if lo < spot < hi), None)
            if hit is None or hit < own_p:
                break
            spot = hit
        return spot + params.d_min

    # all safety rows of one step share the gradient (lam*Sv[k] + Sp[k], e_k);
    # keep only the smallest bound per step, labeled with its source
    tightest = [None] * nu
    for nb in prediction.neighbors:
        mask = prediction.on_path[nb.vid]
        rho = prediction.rho[nb.vid]
        roll_v = prediction.rollout_v[nb.vid]
        for k in range(nu):
            if mask[k]:
                b = float(rho[k])
                if roll_v[k] < 1.0:      # standing obstruction: clear the box
                    b = pulled(b)
                if tightest[k] is None or b < tightest[k][0]:
                    tightest[k] = (b, "headway", nb.vid)
        if nb.frontal:
            continue
        roll_p = prediction.rollout_p[nb.vid]
        for own_local, nb_local, clearance in nb.shared_points:
            hold_at = pulled(own_local)
            for k in range(nu):
                if mask[k]:
                    continue  # the headway row already covers this step
                if nb_local - roll_p[k] >= -clearance:
                    if tightest[k] is None or hold_at < tightest[k][0]:
                        tightest[k] = (hold_at, "crossing", nb.vid)

    dropped = []
    labels = list(labels_box)
    extra_rows = []
    extra_rhs = []
    base = own_p + params.lam * own_v
    for k in range(nu):
        if tightest[k] is None:
            continue
        bound, kind, vid = tightest[k]
        free = bound - params.d_min - base - k * params.t_s * own_v
        if k == 0 and free < -params.lam_bar * own_v - 1e-12:
            # no motion variables at t=0: the row only caps delta(0); if the
            # measured state already violates it, drop it with a logged event
            dropped.append((kind, k, vid))
            continue
        row = np.zeros(n)
        row[:nu] = safety_coef[k]
        row[nu + k] = 1.0
        extra_rows.append(row)
        extra_rhs.append(free)
        labels.append((kind, k, vid))

    rhs_box = np.concatenate([
        np.full(nu, a_max),
        np.full(nu, -a_min),
        np.full(nu, params.v_ceil - own_v),
        np.full(nu, own_v - params.v_floor),
        np.full(nu, params.delta_bar),
        np.full(nu, params.lam_bar * own_v),
    ])
    if extra_rows:
        G = np.vstack([g_box, np.array(extra_rows)])
        h = np.concatenate([rhs_box, np.array(extra_rhs)])
    else:
        G = g_box.copy()
        h = rhs_box
    return QpProblem(H, g, G, h, nu, labels, dropped,
                     list(range(4 * nu, 5 * nu)), own_v, v_r, a_min, a_max, params)


# ---------------------------------------------------------------------------
# dense active-set solver
# ---------------------------------------------------------------------------

class _NumericalTrouble(Exception):
    pass


def _active_set_solve(H, g, G, h, warm_rows=(), max_iter=200):
    """min 1/2 x'Hx + g'x  s.t.  Gx <= h, H positive definite.

    Each iteration solves the equality-constrained subproblem for the
    current working set through its full KKT system, then drops the most
    negative multiplier or adds the most violated row.
    """
    n = H.shape[0]
    active: list[int] = list(dict.fromkeys(warm_rows))
    iters = 0
    for _ in range(max_iter):
        iters += 1
        bland = iters > 80  # anti-cycling: switch to smallest-index pivoting
        m = len(active)
        kkt = np.zeros((n + m, n + m))
        kkt[:n, :n] = H
        if m:
            ga = G[active]
            kkt[:n, n:] = ga.T
            kkt[n:, :n] = ga
        rhs = np.concatenate([-g, h[active]])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            # the newest row is a combination of older ones (e.g. a safety
            # row whose input coefficients are all pinned by box rows):
            # swap out the old row contributing most to the dependency
            if m < 2:
                raise _NumericalTrouble("singular working-set KKT system")
            rest, new = active[:-1], active[-1]
            lam, *_ = np.linalg.lstsq(G[rest].T, G[new], rcond=None)
            if np.linalg.norm(G[rest].T @ lam - G[new]) > 1e-8:
                raise _NumericalTrouble("singular working-set KKT system")
            del active[int(np.argmax(np.abs(lam)))]
            continue
        if not np.isfinite(sol).all():
            raise _NumericalTrouble("non-finite working-set solution")
        x, mu_a = sol[:n], sol[n:]
        if m and mu_a.min() < -_DUAL_TOL:
            if bland:
                neg = [j for j in range(m) if mu_a[j] < -_DUAL_TOL]
                drop = min(neg, key=lambda j: active[j])
            else:
                drop = int(np.argmin(mu_a))
            del active[drop]
            continue
        viol = G @ x - h
        if bland:
            over = np.where(viol > _FEAS_TOL)[0]
            worst = int(over[0]) if len(over) else int(np.argmax(viol))
        else:
            worst = int(np.argmax(viol))
        if viol[worst] <= _FEAS_TOL:
            mu = np.zeros(len(h))
            mu[active] = np.maximum(mu_a, 0.0)
            return x, mu, active, iters
        if worst in active:
            raise _NumericalTrouble("stalled on an active constraint")
        active.append(worst)
    raise _NumericalTrouble("active-set iteration limit")


def _cvxopt_solve(H, g, G, h):
    from cvxopt import matrix, solvers
    opts = {"show_progress": False, "abstol": 1e-8, "reltol": 1e-8,
            "feastol": 1e-9, "maxiters": 100}
    try:
        sol = solvers.qp(matrix(H), matrix(g), matrix(G), matrix(h), options=opts)
    except Exception as exc:
        raise _NumericalTrouble(str(exc)) from exc
    if sol["status"] != "optimal":
        return None, None
    return np.array(sol["x"]).ravel(), np.array(sol["z"]).ravel()


@dataclass
class QpSolution:
    status: str           # "optimal" | "infeasible"
    u: np.ndarray | None
    delta: np.ndarray | None
    objective: float | None
    kkt: dict | None
    used_fallback: bool = False
    active_labels: tuple = ()


def kkt_residuals(qp: QpProblem, x, mu):
    grad = qp.H @ x + qp.g + qp.G.T @ mu
    slack = qp.G @ x - qp.h
    return {
        "stationarity": float(np.abs(grad).max()),
        "primal": float(max(0.0, slack.max())),
        "dual": float(max(0.0, -mu.min())) if len(mu) else 0.0,
        "complementarity": float(np.abs(mu * slack).max()) if len(mu) else 0.0,
    }


def _reference_feasible_point(qp: QpProblem, a_min: float):
    """Max-braking profile with slack at its floor.

    This point minimizes the left side of every safety row over the whole
    feasible set (braking is maximal, positions and speeds are pointwise
    minimal, the slack sits at -lam_bar*v), so the QP is feasible exactly
    when this point satisfies all rows.
    """
    params = qp.params
    p_b, v_b = predict_rollout(0.0, qp.v0, a_min, params)
    # positions relative to (p0 + k*Ts*v0), matching the condensed rows
    nu = qp.n_inputs
    u_b = np.full(nu, a_min)
    u_b[:-1] = np.diff(v_b) / params.t_s
    z = np.concatenate([u_b, -params.lam_bar * v_b])
    return z


def solve_qp(qp: QpProblem, tolerance: float = 1e-6, warm_labels=()) -> QpSolution:
    """Solve to the KKT tolerance; returns an infeasible status when no
    feasible point exists (the caller applies its braking fallback)."""
    z_ref = _reference_feasible_point(qp, qp.a_min)
    if (qp.G @ z_ref - qp.h).max() > _FEAS_TOL:
        return QpSolution("infeasible", None, None, None, None, False)
    # warm start: surviving rows from the previous tick's active set, plus a
    # delta-cap row for every slack slot not already pinned by one of them
    # (the slack cost gradient is constant-negative, so each delta sits on
    # some bound at the optimum; pinning them keeps iterates well scaled)
    nu = qp.n_inputs
    label_to_row = {lab: i for i, lab in enumerate(qp.labels)}
    warm = [label_to_row[lab] for lab in warm_labels if lab in label_to_row]
    covered = np.zeros(nu, dtype=bool)
    for i in warm:
        covered |= qp.G[i, nu:] != 0.0
    warm += [row for k, row in enumerate(qp.delta_cap_rows) if not covered[k]]
    x = mu = None
    active = []
    used_fallback = False
    try:
        x, mu, active, _ = _active_set_solve(qp.H, qp.g, qp.G, qp.h, warm_rows=warm)
    except _NumericalTrouble:
        used_fallback = True
        try:
            x, mu = _cvxopt_solve(qp.H, qp.g, qp.G, qp.h)
        except _NumericalTrouble:
            x = mu = None
    if x is None:
        return QpSolution("infeasible", None, None, None, None, used_fallback)
    res = kkt_residuals(qp, x, mu)
    if max(res.values()) > tolerance and active:
        # near-dependent working sets admit many multiplier certificates;
        # the minimum-norm one deflates the huge components that blow up
        # the complementarity product
        mu2_a, *_ = np.linalg.lstsq(qp.G[active].T, -(qp.H @ x + qp.g), rcond=None)
        mu2 = np.zeros(len(qp.h))
        mu2[active] = np.maximum(mu2_a, 0.0)
        res2 = kkt_residuals(qp, x, mu2)
        if max(res2.values()) < max(res.values()):
            mu, res = mu2, res2
    if max(res.values()) > tolerance and not used_fallback:
        x2, mu2 = _cvxopt_solve(qp.H, qp.g, qp.G, qp.h)
        if x2 is not None:
            res2 = kkt_residuals(qp, x2, mu2)
            if max(res2.values()) < max(res.values()):
                x, mu, res, used_fallback = x2, mu2, res2, True
    if max(res.values()) > tolerance:
        # degraded mode, surfaced to the caller instead of escaping
        return QpSolution("tolerance_miss", None, None, None, res, used_fallback)
    nu = qp.n_inputs
    u, delta = x[:nu], x[nu:]
    act = tuple(qp.labels[i] for i in active) if not used_fallback else ()
    return QpSolution("optimal", u, delta, qp.objective_of(u, delta), res,
                      used_fallback, act)


def control_step(own_path: Path, own_p: float, own_v: float, v_r: float,
                 a_min: float, a_max: float, neighbors, params: MpcParams,
                 kkt_tolerance: float = 1e-6, warm_labels=(), no_stop_spans=(),
                 shared_rollouts=None):
    """One receding-horizon step: returns (u, info dict)."""
    prediction = predict_others(own_path, own_p, own_v, neighbors, params,
                                shared_rollouts=shared_rollouts)
    qp = build_qp(own_path, own_p, own_v, v_r, a_min, a_max, prediction, params,
                  no_stop_spans)
    sol = solve_qp(qp, kkt_tolerance, warm_labels)
    info = {
        "status": sol.status,
        "objective": sol.objective,
        "rows": len(qp.h),
        "dropped_t0": list(qp.dropped_t0),
        "used_fallback": sol.used_fallback,
        "active_labels": sol.active_labels,
    }
    if sol.status != "optimal":
        u = max(a_min, -own_v / params.t_s)  # full braking without reversing
        info["fallback_input"] = u
        return u, info
    return float(sol.u[0]), info
