"""Self-consumption dispatch as a linear program.

Given a fixed envelope, the optimal dispatch decouples across profile
scenarios: each day is an independent LP in consumption, injection, charge,
discharge and stored energy. We exploit that twice. The scenario-averaged
problem is solved by stacking the identical per-day block along a
block-diagonal (Kronecker) structure and calling one sparse LP solve per
chunk, and out-of-sample evaluation reuses the same block with only the
balance right-hand side changing per day.

Costs are EUR per horizon: consumption is billed, injection is paid, battery
throughput is free but lossy. A wider envelope never increases the optimal
cost, so the plain self-consumption problem (no reserve) is solved with the
envelope opened to the whole battery.

The horizon is one cycle of a daily-periodic process, so dispatch must end the
day at least as full as it started (e_end >= e_0). Without that closure the
optimum is dominated by liquidating the initial charge into the grid in the
last steps, a profit the repeated daily operation can never realize.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .conic import SolverFailure
from .model import BatteryConfig, PriceSet, TimeGrid
from .policies import ScEnvelope, full_envelope

WEIGHT_TOL = 1e-9


class DispatchInfeasible(RuntimeError):
    """The envelope strands the initial state: no dispatch can satisfy it."""


@dataclass
class ScDispatch:
    p_cons: np.ndarray  # grid import >= 0, kW, (n, n_t)
    p_inj: np.ndarray   # grid injection <= 0, kW
    p_scc: np.ndarray   # battery charge >= 0, kW
    p_scd: np.ndarray   # battery discharge <= 0, kW
    e: np.ndarray       # stored energy after each step, kWh, (n, n_t)


@dataclass
class ScSolution:
    envelope: ScEnvelope
    objective: float               # weighted expected cost, EUR per horizon
    per_scenario_cost: np.ndarray  # EUR per horizon, one entry per scenario
    weights: np.ndarray
    dispatch: ScDispatch | None


def _dispatch_block(envelope: ScEnvelope, cfg: BatteryConfig, grid: TimeGrid,
                    prices: PriceSet):
    """One scenario's LP data: cost vector, equality matrix, rhs, bounds.

    Column layout: [p_cons, p_inj, p_scc, p_scd, e], each n_t wide. Rows are
    the n_t balance equations then the n_t energy recursions.
    """
    n = grid.n_t
    dt = grid.dt
    cost = np.zeros(5 * n)
    cost[0:n] = prices.c_cons_eur * dt
    cost[n:2 * n] = prices.c_inj_eur * dt

    rows, cols, vals = [], [], []
    for k in range(n):
        # p_cons + p_inj - p_scc - p_scd = prof
        for block, v in ((0, 1.0), (1, 1.0), (2, -1.0), (3, -1.0)):
            rows.append(k)
            cols.append(block * n + k)
            vals.append(v)
        # e_k - e_{k-1} - eta_c dt p_scc - dt/eta_d p_scd = (e_0 if k == 0 else 0)
        rows.append(n + k)
        cols.append(4 * n + k)
        vals.append(1.0)
        if k > 0:
            rows.append(n + k)
            cols.append(4 * n + k - 1)
            vals.append(-1.0)
        rows.append(n + k)
        cols.append(2 * n + k)
        vals.append(-cfg.eta_c * dt)
        rows.append(n + k)
        cols.append(3 * n + k)
        vals.append(-dt / cfg.eta_d)
    a_eq = sp.coo_matrix((vals, (rows, cols)), shape=(2 * n, 5 * n)).tocsr()

    rhs_dyn = np.zeros(n)
    rhs_dyn[0] = cfg.e_0

    bounds = np.empty((5 * n, 2))
    bounds[0:n] = (0.0, np.inf)
    bounds[n:2 * n] = (-np.inf, 0.0)
    bounds[2 * n:3 * n, 0] = 0.0
    bounds[2 * n:3 * n, 1] = np.minimum(envelope.p_max_sc, cfg.p_max)
    bounds[3 * n:4 * n, 0] = np.maximum(envelope.p_min_sc, cfg.p_min)
    bounds[3 * n:4 * n, 1] = 0.0
    bounds[4 * n:5 * n, 0] = np.maximum(envelope.e_min_sc, cfg.e_min)
    bounds[4 * n:5 * n, 1] = np.minimum(envelope.e_max_sc, cfg.e_max)
    # daily-cyclic closure: the day must end at least as full as it started
    bounds[5 * n - 1, 0] = max(bounds[5 * n - 1, 0], cfg.e_0)
    return cost, a_eq, rhs_dyn, bounds


def evaluate_sc_recourse(profiles, envelope: ScEnvelope, cfg: BatteryConfig,
                         grid: TimeGrid, prices: PriceSet, chunk: int = 512,
                         keep_dispatch: bool = False):
    """Optimal dispatch cost for each profile day inside a fixed envelope.

    Returns (costs, dispatch) with costs in EUR per horizon; dispatch is None
    unless keep_dispatch. Scenarios are independent, so they are solved in
    block-diagonal chunks with a shared block matrix.
    """
    prof = np.atleast_2d(np.asarray(profiles, dtype=float))
    n_sc, n_t = prof.shape
    if n_t != grid.n_t:
        raise ValueError(f"profiles must have {grid.n_t} steps, got {n_t}")
    cost, a_eq, rhs_dyn, bounds = _dispatch_block(envelope, cfg, grid, prices)

    costs = np.empty(n_sc)
    parts = [] if keep_dispatch else None
    for lo in range(0, n_sc, chunk):
        hi = min(lo + chunk, n_sc)
        m = hi - lo
        a_big = sp.kron(sp.eye(m, format="csr"), a_eq, format="csr")
        b_big = np.hstack([prof[lo:hi], np.tile(rhs_dyn, (m, 1))]).ravel()
        res = linprog(np.tile(cost, m), A_eq=a_big, b_eq=b_big,
                      bounds=np.tile(bounds, (m, 1)), method="highs")
        if res.status == 2:
            raise DispatchInfeasible(
                "envelope admits no dispatch (initial state outside reach)")
        if res.status != 0:
            raise SolverFailure(f"dispatch LP failed: {res.message}")
        x = res.x.reshape(m, 5 * n_t)
        costs[lo:hi] = x @ cost
        if keep_dispatch:
            parts.append(x)
    dispatch = None
    if keep_dispatch:
        x = np.vstack(parts)
        dispatch = ScDispatch(p_cons=x[:, 0:n_t], p_inj=x[:, n_t:2 * n_t],
                              p_scc=x[:, 2 * n_t:3 * n_t],
                              p_scd=x[:, 3 * n_t:4 * n_t], e=x[:, 4 * n_t:5 * n_t])
    return costs, dispatch


def solve_sc_saa(profiles, weights, cfg: BatteryConfig, grid: TimeGrid,
                 prices: PriceSet, envelope: ScEnvelope | None = None,
                 keep_dispatch: bool = True) -> ScSolution:
    """Scenario-averaged self-consumption cost, optionally inside an envelope.

    With no envelope the whole battery is available, which is weakly optimal:
    shrinking the envelope can only remove dispatch options.
    """
    prof = np.atleast_2d(np.asarray(profiles, dtype=float))
    w = np.asarray(weights, dtype=float)
    if w.shape != (prof.shape[0],):
        raise ValueError("one weight per profile scenario required")
    if np.any(w < 0) or abs(w.sum() - 1.0) > WEIGHT_TOL:
        raise ValueError("weights must be nonnegative and sum to 1")
    env = full_envelope(cfg, grid) if envelope is None else envelope
    costs, dispatch = evaluate_sc_recourse(prof, env, cfg, grid, prices,
                                           keep_dispatch=keep_dispatch)
    return ScSolution(envelope=env, objective=float(w @ costs),
                      per_scenario_cost=costs, weights=w, dispatch=dispatch)
