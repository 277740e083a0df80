"""Reserve sizing as a robust second-order cone program.

The battery serves two masters: a symmetric reserve band r that is activated
proportionally to the normalized frequency deviation, recharged through an
affine policy P_rc = D @ df with D strictly lower triangular, and a
self-consumption envelope that keeps part of the power and energy budget for
the household. Frequency-side power and energy excursions are kept inside
whatever the envelope leaves over, robustly over a deviation set calibrated so
each constraint fails with probability at most epsilon.

Constraint system (4 n_t rows), for deviation day df:

    D df           <= p_max - p_max_sc - r        (recharge power, up)
    -D df          <= p_min_sc - p_min - r        (recharge power, down)
    G (D + r I) df <= e_max - e_max_sc            (frequency-side energy, up)
    -G (D + r I) df <= e_min_sc - e_min           (frequency-side energy, down)

with G the running-sum operator (dt times lower-triangular ones). Reserve
activation r df_k is bounded deterministically by |df_k| <= 1, which is why r
appears on the right of the power rows only. The frequency-side energy is
integrated losslessly; the efficiency error lands on the state-feedback
controller, which reacts to measured energy.

Each row a^T df <= b becomes a^T mu + Omega ||u|| <= b with u the elementwise
max of the forward/backward deviation scalings of the whitened row; see the
uncertainty module. D enters through its strictly-lower entries only, packed
into a vector through a fixed scatter matrix so the cone program never carries
the n_t^2 dense variable.
"""

from __future__ import annotations

from dataclasses import dataclass

import cvxpy as cp
import numpy as np
import scipy.sparse as sp

from .conic import SolveInfo, solve_conic
from .model import BatteryConfig, PriceSet, TimeGrid
from .policies import RechargePolicy, ScEnvelope, degenerate_envelope, save_policy
from .selfcons import ScDispatch
from .uncertainty import UncertaintyModel, worst_case

FEAS_TOL = 1e-6


class InfeasibleProblem(RuntimeError):
    """The conic program solved cleanly to an infeasible/unbounded verdict."""

    def __init__(self, status: str):
        super().__init__(f"problem is {status}")
        self.status = status


def running_sum(grid: TimeGrid) -> np.ndarray:
    """G: maps per-step power to end-of-step energy increments (kWh)."""
    return grid.dt * np.tril(np.ones((grid.n_t, grid.n_t)))


@dataclass
class RobustConstraintSystem:
    """Numeric rows a_i, b_i for a fixed policy, reserve and envelope."""

    a: np.ndarray  # (4 n_t, n_t)
    b: np.ndarray  # (4 n_t,)
    g: np.ndarray
    n_t: int

    BLOCKS = ("power_up", "power_down", "energy_up", "energy_down")

    def block(self, name: str) -> slice:
        i = self.BLOCKS.index(name)
        return slice(i * self.n_t, (i + 1) * self.n_t)


def assemble_system(d: np.ndarray, r: float, envelope: ScEnvelope,
                    cfg: BatteryConfig, grid: TimeGrid) -> RobustConstraintSystem:
    n = grid.n_t
    d = np.asarray(d, dtype=float)
    g = running_sum(grid)
    gdr = g @ (d + r * np.eye(n))
    a = np.vstack([d, -d, gdr, -gdr])
    b = np.concatenate([
        cfg.p_max - envelope.p_max_sc - r,
        envelope.p_min_sc - cfg.p_min - r,
        cfg.e_max - envelope.e_max_sc,
        envelope.e_min_sc - cfg.e_min,
    ])
    return RobustConstraintSystem(a=a, b=b, g=g, n_t=n)


def verify_constraints(d, r, envelope, model: UncertaintyModel, cfg, grid,
                       validation=None) -> dict:
    """Row-by-row margins: robust worst case and, optionally, empirical max.

    Returns arrays over the 4 n_t rows: worst_case value, b, margin
    (b - worst_case), and when validation deviation days are given, the
    empirical max of a_i^T df and its margin.
    """
    sys = assemble_system(d, r, envelope, cfg, grid)
    wc = np.array([worst_case(model, row) for row in sys.a])
    report = {
        "b": sys.b,
        "worst_case": wc,
        "margin": sys.b - wc,
        "blocks": RobustConstraintSystem.BLOCKS,
    }
    if validation is not None:
        vals = np.atleast_2d(np.asarray(validation, dtype=float))
        emp = (sys.a @ vals.T).max(axis=1)
        report["empirical_max"] = emp
        report["empirical_margin"] = sys.b - emp
    return report


@dataclass
class CoOptSolution:
    r: float
    d: np.ndarray
    envelope: ScEnvelope
    objective: float      # sc_cost - fcr_revenue, EUR per horizon
    sc_cost: float        # expected grid bill over scenarios (0 when none)
    fcr_revenue: float    # c_r * r/1000 * horizon hours (0 without prices)
    info: SolveInfo
    grid: TimeGrid
    dispatch: ScDispatch | None = None

    def policy(self) -> RechargePolicy:
        return RechargePolicy(self.d, self.r, self.grid)

    def save(self, path, meta: dict | None = None) -> None:
        save_policy(path, self.policy(), self.envelope, meta=meta)


def _packed_lower(n_t: int):
    """Scatter matrix taking packed strictly-lower entries to a flat n_t^2 vector."""
    rows, cols = np.tril_indices(n_t, k=-1)
    n_free = rows.size
    flat = rows * n_t + cols
    scatter = sp.csc_matrix((np.ones(n_free), (flat, np.arange(n_free))),
                            shape=(n_t * n_t, n_free))
    return scatter, n_free


def _lower_matrix_var(n_t: int):
    """(packed variable or None, strictly-lower matrix expression)."""
    scatter, n_free = _packed_lower(n_t)
    if n_free == 0:
        return None, cp.Constant(np.zeros((n_t, n_t)))
    d_packed = cp.Variable(n_free, name="d_packed")
    return d_packed, cp.reshape(scatter @ d_packed, (n_t, n_t), order="C")


def _robust_soc(d_expr, r_expr, b_exprs, model: UncertaintyModel, grid: TimeGrid):
    """SOC constraints for the four robust blocks.

    b_exprs = (b_power_up, b_power_down, b_energy_up, b_energy_down), affine
    (n_t,) expressions. Whitened row blocks C = A @ w_inv stay n_t x n_t per
    block, so the auxiliary u variables do too.
    """
    n = grid.n_t
    g = running_sum(grid)
    w_inv = model.w_inv
    mean = model.mean
    sf = model.sigma_f[None, :]
    sb = model.sigma_b[None, :]
    inv_omega = 1.0 / model.omega

    m_expr = d_expr @ w_inv                      # D W^-1
    gm_expr = g @ m_expr + r_expr * (g @ w_inv)  # G (D + r I) W^-1
    mean_pow = d_expr @ mean
    mean_en = g @ mean_pow + r_expr * (g @ mean)
    blocks = [
        (m_expr, mean_pow, b_exprs[0]),
        (-m_expr, -mean_pow, b_exprs[1]),
        (gm_expr, mean_en, b_exprs[2]),
        (-gm_expr, -mean_en, b_exprs[3]),
    ]
    constraints = []
    for c_expr, a_mean, b_expr in blocks:
        u = cp.Variable((n, n))
        constraints += [
            u >= cp.multiply(c_expr, sf),
            u >= cp.multiply(c_expr, -sb),
            cp.SOC((b_expr - a_mean) * inv_omega, u, axis=1),
        ]
    return constraints


def build_fcr_problem(model: UncertaintyModel, cfg: BatteryConfig, grid: TimeGrid,
                      fix_r: float | None = None):
    """Reserve maximization with the whole battery behind the reserve.

    The self-consumption envelope is pinned at e_0 with zero width, which is
    exactly the no-household mode: all energy slack around the initial charge
    backs the reserve.
    """
    if model.n_t != grid.n_t:
        raise ValueError("uncertainty model and grid disagree on n_t")
    env = degenerate_envelope(cfg, grid)
    d_packed, d_expr = _lower_matrix_var(grid.n_t)
    r = cp.Variable(name="r", nonneg=True)
    ones = np.ones(grid.n_t)
    b_exprs = (
        (cfg.p_max - env.p_max_sc) - r * ones,
        (env.p_min_sc - cfg.p_min) - r * ones,
        cp.Constant(cfg.e_max - env.e_max_sc),
        cp.Constant(env.e_min_sc - cfg.e_min),
    )
    constraints = _robust_soc(d_expr, r, b_exprs, model, grid)
    if fix_r is not None:
        constraints.append(r == fix_r)
    problem = cp.Problem(cp.Maximize(r), constraints)
    handles = {"r": r, "d_packed": d_packed, "d": d_expr, "envelope": env}
    return problem, handles


def solve_fcr(model, cfg, grid, fix_r=None, solver=None, **solver_kwargs) -> CoOptSolution:
    problem, h = build_fcr_problem(model, cfg, grid, fix_r=fix_r)
    info = solve_conic(problem, solver=solver, **solver_kwargs)
    if info.status != "optimal":
        raise InfeasibleProblem(info.status)
    d_val = np.zeros((grid.n_t, grid.n_t)) if h["d_packed"] is None \
        else np.asarray(h["d"].value)
    d_val = np.tril(d_val, k=-1)  # scrub solver fuzz off the zero pattern
    return CoOptSolution(r=float(h["r"].value), d=d_val, envelope=h["envelope"],
                         objective=-float(h["r"].value), sc_cost=0.0,
                         fcr_revenue=0.0, info=info, grid=grid)


def build_combined_problem(model: UncertaintyModel, cfg: BatteryConfig,
                           grid: TimeGrid, prices: PriceSet, profiles,
                           weights=None, fix_r: float | None = None):
    """Joint reserve + self-consumption program over profile scenarios.

    Shared decision: reserve r, recharge policy D, and the envelope; per
    scenario: grid import/injection and battery charge/discharge, with the
    lossy virtual energy E_sc and the daily-cyclic closure E_sc,end >= e_0.
    The robust rows see the battery shrunk by the envelope.
    """
    if model.n_t != grid.n_t:
        raise ValueError("uncertainty model and grid disagree on n_t")
    prof = np.atleast_2d(np.asarray(profiles, dtype=float))
    n_sc, n_t = prof.shape
    if n_t != grid.n_t:
        raise ValueError(f"profiles must have {grid.n_t} steps, got {n_t}")
    if weights is None:
        w = np.full(n_sc, 1.0 / n_sc)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (n_sc,):
            raise ValueError("one weight per profile scenario required")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be nonnegative and sum to 1")

    d_packed, d_expr = _lower_matrix_var(n_t)
    r = cp.Variable(name="r", nonneg=True)
    e_min_sc = cp.Variable(n_t, name="e_min_sc")
    e_max_sc = cp.Variable(n_t, name="e_max_sc")
    p_min_sc = cp.Variable(n_t, name="p_min_sc", nonpos=True)
    p_max_sc = cp.Variable(n_t, name="p_max_sc", nonneg=True)

    p_cons = cp.Variable((n_sc, n_t), name="p_cons", nonneg=True)
    p_inj = cp.Variable((n_sc, n_t), name="p_inj", nonpos=True)
    p_scc = cp.Variable((n_sc, n_t), name="p_scc", nonneg=True)
    p_scd = cp.Variable((n_sc, n_t), name="p_scd", nonpos=True)
    e_sc = cp.Variable((n_sc, n_t), name="e_sc")

    ones_sc = np.ones((n_sc, 1))

    def rows(v):
        return ones_sc @ cp.reshape(v, (1, n_t), order="C")

    flow = (cfg.eta_c * p_scc + p_scd / cfg.eta_d) * grid.dt
    constraints = [
        p_cons + p_inj == prof + p_scc + p_scd,
        e_sc[:, 0] == cfg.e_0 + flow[:, 0],
        e_min_sc >= cfg.e_min,
        e_max_sc <= cfg.e_max,
        e_min_sc <= e_max_sc,
        p_min_sc >= cfg.p_min,
        p_max_sc <= cfg.p_max,
        e_sc >= rows(e_min_sc),
        e_sc <= rows(e_max_sc),
        p_scc <= rows(p_max_sc),
        p_scd >= rows(p_min_sc),
        e_sc[:, -1] >= cfg.e_0,
    ]
    if n_t > 1:
        constraints.append(e_sc[:, 1:] == e_sc[:, :-1] + flow[:, 1:])

    ones = np.ones(n_t)
    b_exprs = (
        cfg.p_max - p_max_sc - r * ones,
        p_min_sc - cfg.p_min - r * ones,
        cfg.e_max - e_max_sc,
        e_min_sc - cfg.e_min,
    )
    constraints += _robust_soc(d_expr, r, b_exprs, model, grid)
    if fix_r is not None:
        constraints.append(r == fix_r)

    sc_cost = (w @ (prices.c_cons_eur * cp.sum(p_cons, axis=1)
                    + prices.c_inj_eur * cp.sum(p_inj, axis=1))) * grid.dt
    fcr_revenue = prices.c_r * (r / 1000.0) * grid.horizon_h
    problem = cp.Problem(cp.Minimize(sc_cost - fcr_revenue), constraints)
    handles = {
        "r": r, "d_packed": d_packed, "d": d_expr,
        "e_min_sc": e_min_sc, "e_max_sc": e_max_sc,
        "p_min_sc": p_min_sc, "p_max_sc": p_max_sc,
        "p_cons": p_cons, "p_inj": p_inj, "p_scc": p_scc, "p_scd": p_scd,
        "e_sc": e_sc, "sc_cost": sc_cost, "fcr_revenue": fcr_revenue,
        "weights": w,
    }
    return problem, handles


def solve_combined(model, cfg, grid, prices, profiles, weights=None, fix_r=None,
                   solver=None, **solver_kwargs) -> CoOptSolution:
    problem, h = build_combined_problem(model, cfg, grid, prices, profiles,
                                        weights=weights, fix_r=fix_r)
    info = solve_conic(problem, solver=solver, **solver_kwargs)
    if info.status != "optimal":
        raise InfeasibleProblem(info.status)
    n_t = grid.n_t
    d_val = np.zeros((n_t, n_t)) if h["d_packed"] is None else np.asarray(h["d"].value)
    d_val = np.tril(d_val, k=-1)
    # clip the solver's tiny sign fuzz so the envelope invariants hold exactly
    env = ScEnvelope(
        e_min_sc=np.minimum(np.asarray(h["e_min_sc"].value), np.asarray(h["e_max_sc"].value)),
        e_max_sc=np.asarray(h["e_max_sc"].value),
        p_min_sc=np.minimum(np.asarray(h["p_min_sc"].value), 0.0),
        p_max_sc=np.maximum(np.asarray(h["p_max_sc"].value), 0.0),
    )
    dispatch = ScDispatch(
        p_cons=np.asarray(h["p_cons"].value), p_inj=np.asarray(h["p_inj"].value),
        p_scc=np.asarray(h["p_scc"].value), p_scd=np.asarray(h["p_scd"].value),
        e=np.asarray(h["e_sc"].value),
    )
    return CoOptSolution(r=float(h["r"].value), d=d_val, envelope=env,
                         objective=float(problem.value),
                         sc_cost=float(h["sc_cost"].value),
                         fcr_revenue=float(h["fcr_revenue"].value),
                         info=info, grid=grid, dispatch=dispatch)
