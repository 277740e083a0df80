"""Monte Carlo validation of reserve policies on the lossy battery.

Fresh deviation days are drawn by a whitened bootstrap of the training days:
whiten, resample each whitened coordinate independently with replacement
across the training pool, un-whiten, restore the mean. Independent coordinate
resampling matches the independence granted by the whitening step.

Each sampled day is then played against the state-feedback controller (gain
from the recharge policy) plus the proportional reserve activation r*df, and
optionally the greedy self-consumption rule inside its envelope, all through
the real lossy battery dynamics. Bound violations are recorded per constraint
row (power up/down, energy up/down, per step). Energy is clamped to the
physical range after flagging so a single excursion does not snowball; power
is applied as commanded and only flagged.

Violation probabilities get a one-sided upper confidence bound: CLT normal
approximation when counts are comfortable, exact binomial (Clopper-Pearson)
when fewer than 5 violations were seen, where the CLT is useless.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.stats

from .model import BatteryConfig, PriceSet, TimeGrid, battery_step
from .policies import (RechargePolicy, ScEnvelope, run_sc_rule_batch,
                       to_state_feedback)
from .scenarios import normal_quantile
from .uncertainty import UncertaintyModel

VIOLATION_TOL = 1e-9
BLOCKS = ("power_up", "power_down", "energy_up", "energy_down")


def resample_frequency(train_values, model: UncertaintyModel, n_r: int,
                       seed) -> np.ndarray:
    """Bootstrap n_r deviation days from the training pool via whitening.

    train_values: (m, n_t) unfolded deviation days; model must be fitted on
    the same unfolded data. Deterministic per seed; n_r = 0 gives (0, n_t).
    """
    values = np.atleast_2d(np.asarray(train_values, dtype=float))
    m, n_t = values.shape
    if n_t != model.n_t:
        raise ValueError("training days and model disagree on n_t")
    if n_r == 0:
        return np.zeros((0, n_t))
    rng = np.random.default_rng(seed)
    white = (values - model.mean) @ model.w.T
    idx = rng.integers(0, m, size=(n_r, n_t))
    resampled = white[idx, np.arange(n_t)]
    return resampled @ model.w_inv.T + model.mean


@dataclass
class ClosedLoopResult:
    energy: np.ndarray      # (n, n_t + 1) physical stored energy, kWh
    p_total: np.ndarray     # (n, n_t) commanded battery power, kW
    p_rc: np.ndarray        # recharge component
    p_reserve: np.ndarray   # r * df component
    p_sc: np.ndarray        # self-consumption component (zero without a rule)
    e_sc: np.ndarray | None  # virtual SC energy when the rule ran
    violations: np.ndarray  # (n, 4, n_t) bool, blocks as in BLOCKS

    @property
    def n_samples(self) -> int:
        return self.energy.shape[0]


def run_closed_loop(policy: RechargePolicy, cfg: BatteryConfig, grid: TimeGrid,
                    dfs, envelope: ScEnvelope | None = None, profiles=None,
                    e_0: float | None = None) -> ClosedLoopResult:
    """Play deviation days through the controller on the lossy battery.

    dfs: (n, n_t) unfolded deviation days. With an envelope and profiles the
    greedy rule runs alongside; profiles may be one day (broadcast) or one per
    sample. The controller reacts to measured total energy increments minus
    the rule's own virtual bookkeeping, so recharge corrects frequency-side
    losses but does not fight self-consumption.

    A zero-reserve policy has nothing to recharge: the gain is zero.
    """
    dfs = np.atleast_2d(np.asarray(dfs, dtype=float))
    n, n_t = dfs.shape
    if n_t != grid.n_t:
        raise ValueError(f"deviation days must have {grid.n_t} steps")
    gain = (to_state_feedback(policy).gain if policy.r > 0
            else np.zeros((n_t, n_t)))
    start = cfg.e_0 if e_0 is None else e_0
    run_rule = envelope is not None
    if run_rule:
        if profiles is None:
            raise ValueError("profiles required when an envelope is given")
        prof = np.atleast_2d(np.asarray(profiles, dtype=float))
        if prof.shape[0] == 1:
            prof = np.broadcast_to(prof, (n, n_t)).copy()
        if prof.shape != (n, n_t):
            raise ValueError("profiles must broadcast to the deviation days")
        p_sc, e_sc, _ = run_sc_rule_batch(prof, envelope, cfg, grid, e_0=start)
        d_sc = np.diff(e_sc, axis=1)
    else:
        p_sc = np.zeros((n, n_t))
        e_sc = None
        d_sc = np.zeros((n, n_t))

    energy = np.empty((n, n_t + 1))
    energy[:, 0] = start
    p_rc = np.zeros((n, n_t))
    p_res = policy.r * dfs
    delta_e_fcr = np.zeros((n, n_t))
    violations = np.zeros((n, 4, n_t), dtype=bool)

    for k in range(n_t):
        if k > 0:
            p_rc[:, k] = delta_e_fcr[:, :k] @ gain[k, :k] / grid.dt
        p_tot = p_rc[:, k] + p_res[:, k] + p_sc[:, k]
        violations[:, 0, k] = p_tot > cfg.p_max + VIOLATION_TOL
        violations[:, 1, k] = p_tot < cfg.p_min - VIOLATION_TOL
        e_next = battery_step(energy[:, k], p_tot, cfg, grid.dt)
        violations[:, 2, k] = e_next > cfg.e_max + VIOLATION_TOL
        violations[:, 3, k] = e_next < cfg.e_min - VIOLATION_TOL
        e_next = np.clip(e_next, cfg.e_min, cfg.e_max)
        delta_e_fcr[:, k] = (e_next - energy[:, k]) - d_sc[:, k]
        energy[:, k + 1] = e_next

    return ClosedLoopResult(energy=energy, p_total=p_rc + p_res + p_sc,
                            p_rc=p_rc, p_reserve=p_res, p_sc=p_sc, e_sc=e_sc,
                            violations=violations)


def violation_bound(counts, n: int, alpha: float = 0.01):
    """One-sided (1 - alpha) upper confidence bound on violation probability.

    CLT bound p_hat + z_{1-alpha} sqrt(p_hat (1-p_hat)/n) for counts >= 5,
    exact binomial upper bound below that (the CLT bound degenerates to 0 at
    zero counts). Vectorizes over counts; results clipped to [0, 1].
    """
    counts = np.asarray(counts)
    scalar = counts.ndim == 0
    c = np.atleast_1d(counts).astype(float)
    if np.any(c < 0) or np.any(c > n):
        raise ValueError("need 0 <= counts <= n")
    p_hat = c / n
    z = normal_quantile(1.0 - alpha)
    clt = p_hat + z * np.sqrt(p_hat * (1.0 - p_hat) / n)
    with np.errstate(invalid="ignore"):
        exact = scipy.stats.beta.ppf(1.0 - alpha, c + 1.0, n - c)
    exact = np.where(c >= n, 1.0, exact)
    out = np.clip(np.where(c < 5, exact, clt), 0.0, 1.0)
    return float(out[0]) if scalar else out


@dataclass
class SimulationReport:
    n_samples: int
    alpha: float
    counts: np.ndarray            # (4, n_t) violations per constraint row
    violation_prob: np.ndarray    # counts / n_samples
    max_violation_prob_hat: float
    upper_conf_bound: float       # bound on the worst row
    quantile_levels: tuple
    energy_quantiles: np.ndarray  # (len(levels), n_t + 1)
    power_quantiles: np.ndarray   # (len(levels), n_t)
    revenue: dict | None = field(default=None)

    def to_dict(self) -> dict:
        return {
            "kind": "simulation_report",
            "n_samples": self.n_samples,
            "alpha": self.alpha,
            "blocks": list(BLOCKS),
            "counts": self.counts.tolist(),
            "violation_prob": self.violation_prob.tolist(),
            "max_violation_prob_hat": self.max_violation_prob_hat,
            "upper_conf_bound": self.upper_conf_bound,
            "quantile_levels": list(self.quantile_levels),
            "energy_quantiles": self.energy_quantiles.tolist(),
            "power_quantiles": self.power_quantiles.tolist(),
            "revenue": self.revenue,
        }


def summarize(result: ClosedLoopResult, alpha: float = 0.01,
              quantile_levels=(0.01, 0.5, 0.99)) -> SimulationReport:
    n = result.n_samples
    counts = result.violations.sum(axis=0)
    worst = int(counts.max())
    return SimulationReport(
        n_samples=n,
        alpha=alpha,
        counts=counts,
        violation_prob=counts / n,
        max_violation_prob_hat=worst / n,
        upper_conf_bound=float(violation_bound(worst, n, alpha)),
        quantile_levels=tuple(quantile_levels),
        energy_quantiles=np.quantile(result.energy, quantile_levels, axis=0),
        power_quantiles=np.quantile(result.p_total, quantile_levels, axis=0),
    )


@dataclass
class RevenueReport:
    mean_total: float        # EUR per horizon: sc savings + reserve pay
    sc_mean: float           # baseline bill minus rule-based bill
    fcr_part: float          # c_r * r/1000 * horizon, scenario-independent
    baseline_mean: float     # bill with no battery at all
    per_scenario_total: np.ndarray
    quantiles: dict

    def to_dict(self) -> dict:
        return {
            "kind": "revenue_report",
            "mean_total": self.mean_total,
            "sc_mean": self.sc_mean,
            "fcr_part": self.fcr_part,
            "baseline_mean": self.baseline_mean,
            "quantiles": self.quantiles,
        }


def _grid_bill(net_power, prices: PriceSet, dt: float) -> np.ndarray:
    cons = np.maximum(net_power, 0.0).sum(axis=1)
    inj = np.minimum(net_power, 0.0).sum(axis=1)
    return (prices.c_cons_eur * cons + prices.c_inj_eur * inj) * dt


def evaluate_revenue(r: float, envelope: ScEnvelope, profiles, prices: PriceSet,
                     cfg: BatteryConfig, grid: TimeGrid, weights=None,
                     quantiles=(0.05, 0.5, 0.95)) -> RevenueReport:
    """Rule-based operating revenue: self-consumption savings plus reserve pay.

    Runs the greedy rule inside the envelope on each profile day, bills the
    residual grid exchange, and compares against the no-battery baseline.
    total_j = (baseline_j - bill_j) + c_r * r/1000 * horizon.
    """
    prof = np.atleast_2d(np.asarray(profiles, dtype=float))
    n_sc = prof.shape[0]
    w = np.full(n_sc, 1.0 / n_sc) if weights is None else np.asarray(weights, float)
    p_sc, _, _ = run_sc_rule_batch(prof, envelope, cfg, grid)
    baseline = _grid_bill(prof, prices, grid.dt)
    bill = _grid_bill(prof + p_sc, prices, grid.dt)
    fcr_part = prices.c_r * (r / 1000.0) * grid.horizon_h
    totals = (baseline - bill) + fcr_part
    qs = {repr(float(q)): float(np.quantile(totals, q)) for q in quantiles}
    return RevenueReport(mean_total=float(w @ totals),
                         sc_mean=float(w @ (baseline - bill)),
                         fcr_part=float(fcr_part),
                         baseline_mean=float(w @ baseline),
                         per_scenario_total=totals,
                         quantiles=qs)
