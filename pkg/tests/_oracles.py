"""Independent oracles shared by module and acceptance tests.

The MPC oracle evaluates the same optimal control problem by brute force:
it rolls other vehicles forward with its own 3-line integrator, derives
per-step position bounds from first principles (perpendicular crossings
project onto the crossing point; same-lane leaders project onto their own
coordinate), eliminates the slack in closed form, and grid-searches the
input space with progressive refinement down to a 0.05 m/s^2 step.
"""

import math

import numpy as np

# Table-1 values, restated independently of the package defaults
TS = 0.25
D_MIN = 2.1
LAM = 1.0
LAM_BAR = 0.5
DELTA_BAR = 10.0
V_CEIL = 130.0 / 3.6
Q, R, OMEGA = 0.1, 0.01, -0.1
A_MIN, A_MAX = -9.0, 5.0


def rollout(p0, v0, u, horizon):
    p, v = [p0], [v0]
    for _ in range(horizon):
        p.append(p[-1] + TS * v[-1])
        v.append(min(max(v[-1] + TS * u, 0.0), V_CEIL))
    return np.array(p), np.array(v)


def step_bounds(scn, horizon):
    """Smallest position bound per prediction step, or +inf."""
    bounds = np.full(horizon + 1, np.inf)
    for rho0, v, u in scn.get("frontal", []):
        p, _ = rollout(rho0, v, u, horizon)
        bounds = np.minimum(bounds, p)
    for h_own, h_zeta, pz, v, u in scn.get("crossing", []):
        p, _ = rollout(pz, v, u, horizon)
        gate = p <= h_zeta + D_MIN  # until the crosser clears the point by d_min
        bounds = np.where(gate, np.minimum(bounds, h_own), bounds)
    return bounds


def mpc_grid_oracle(scn, horizon=5, final_step=0.05):
    """(objective, u*) of the brute-force refined grid search, or None."""
    p0, v0, v_r = scn["own"]
    nu = horizon + 1
    bounds = step_bounds(scn, horizon)
    # mirror the t=0 drop rule: a measured-state violation is not a constraint
    if bounds[0] - D_MIN - p0 - LAM * v0 < -LAM_BAR * v0 - 1e-12:
        bounds[0] = np.inf

    def evaluate(u_grid):
        n = len(u_grid)
        v = np.empty((n, nu))
        v[:, 0] = v0
        v[:, 1:] = v0 + TS * np.cumsum(u_grid[:, :-1], axis=1)
        p = np.empty((n, nu))
        p[:, 0] = p0
        p[:, 1:] = p0 + TS * np.cumsum(v[:, :-1], axis=1)
        feas = ((v >= -1e-9) & (v <= V_CEIL + 1e-9)).all(axis=1)
        allow = np.minimum(DELTA_BAR, bounds[None, :] - D_MIN - p - LAM * v)
        feas &= (allow >= -LAM_BAR * v - 1e-9).all(axis=1)
        cost = (Q * (v - v_r) ** 2).sum(axis=1) + (R * u_grid ** 2).sum(axis=1) \
            + OMEGA * allow.sum(axis=1)
        cost[~feas] = np.inf
        return cost

    centers = np.full(nu, (A_MIN + A_MAX) / 2.0)
    step = (A_MAX - A_MIN) / 6.0
    best_u, best_j = None, np.inf
    while True:
        axes = [np.clip(centers[d] + step * np.arange(-3, 4), A_MIN, A_MAX)
                for d in range(nu)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, nu)
        cost = evaluate(grid)
        k = int(np.argmin(cost))
        if not np.isfinite(cost[k]):
            return None
        best_u, best_j = grid[k], float(cost[k])
        centers = grid[k]
        if step <= final_step:
            return best_j, best_u
        step = max(step / 2.0, final_step)


def random_mpc_scenario(rng, net, horizon=5):
    """A feasible small scenario on a 1 x 4 grid with hand-derived geometry."""
    p0 = 0.0
    v0 = rng.uniform(8.0, 15.0)
    v_r = rng.uniform(12.0, 16.0)
    scn = {"own": (p0, v0, v_r), "frontal": [], "crossing": []}
    n_frontal = int(rng.integers(0, 3))
    n_cross = int(rng.integers(0, 3 - n_frontal))
    gap = rng.uniform(25.0, 55.0)
    for _ in range(n_frontal):
        scn["frontal"].append((p0 + gap, rng.uniform(4.0, 14.0), rng.uniform(-1.5, 1.0)))
        gap += rng.uniform(15.0, 30.0)
    o = net.lane_width / 2.0
    for k in range(n_cross):
        col = int(rng.integers(0, 2))
        h_own = net.xs[col] + o          # crossing of the eastbound lane
        h_zeta = net.ys[0] - o           # same point in the crosser's coordinate
        dist = rng.uniform(12.0, min(27.0, h_zeta - 1.0))
        scn["crossing"].append((h_own, h_zeta, h_zeta - dist,
                                rng.uniform(5.0, 14.0), rng.uniform(-1.0, 1.0)))
    return scn
