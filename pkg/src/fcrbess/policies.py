"""Recharge policies and the self-consumption dispatch rule.

The recharge policy is affine in the observed deviation day: p_rc = D @ df with
D strictly lower triangular, so step k only uses deviations before k. For
operation on a real (lossy) battery the same policy is run as state feedback on
measured energy increments,

    p_rc,k = sum_{i<k} K[k,i] * (E_i - E_{i-1}) / dt,
    K = (I + D/r)^-1 (D/r),

which reproduces the disturbance form exactly on a lossless battery and
self-corrects for losses on a real one.

Self-consumption runs inside a reserved envelope (power band and energy band
per step). The rule charges surplus and discharges deficit as hard as the
envelope allows, holding still on boundary ties; charging that would overshoot
the energy bound within one step is trimmed to land exactly on the bound.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import BatteryConfig, TimeGrid, battery_step

ENVELOPE_TOL = 1e-9


class ZeroReserve(ValueError):
    """State feedback needs r > 0; the gain divides by r."""


@dataclass
class RechargePolicy:
    d: np.ndarray  # (n_t, n_t), strictly lower triangular, kW per unit deviation
    r: float       # reserve capacity, kW
    grid: TimeGrid

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=float)
        n = self.grid.n_t
        if self.d.shape != (n, n):
            raise ValueError(f"d must be ({n}, {n}), got {self.d.shape}")
        if np.any(np.triu(self.d) != 0.0):
            raise ValueError("d must be strictly lower triangular")
        if not (self.r >= 0 and np.isfinite(self.r)):
            raise ValueError(f"r must be finite and >= 0, got {self.r}")


def recharge_disturbance(policy: RechargePolicy, df) -> np.ndarray:
    """Recharge powers for a full observed deviation day (kW)."""
    df = np.asarray(df, dtype=float)
    if df.shape[-1] != policy.grid.n_t:
        raise ValueError(f"deviation day must have {policy.grid.n_t} steps")
    return df @ policy.d.T


@dataclass
class StateFeedbackController:
    gain: np.ndarray  # (I + D/r)^-1 (D/r), strictly lower triangular
    r: float
    grid: TimeGrid

    def recharge_power(self, k: int, delta_e: np.ndarray) -> float:
        """Recharge power for step k given past energy increments (kWh, length >= k)."""
        if k == 0:
            return 0.0
        return float(self.gain[k, :k] @ delta_e[:k]) / self.grid.dt


def to_state_feedback(policy: RechargePolicy) -> StateFeedbackController:
    if policy.r <= 0.0:
        raise ZeroReserve("state feedback gain is D/r based; r must be positive")
    n = policy.grid.n_t
    dr = policy.d / policy.r
    gain = np.linalg.solve(np.eye(n) + dr, dr)
    gain[np.triu_indices(n)] = 0.0  # exact zeros on a strictly lower result
    return StateFeedbackController(gain=gain, r=policy.r, grid=policy.grid)


# --- self-consumption envelope and rule ----------------------------------------

@dataclass
class ScEnvelope:
    """Per-step power band and energy band reserved for self-consumption."""

    e_min_sc: np.ndarray
    e_max_sc: np.ndarray
    p_min_sc: np.ndarray
    p_max_sc: np.ndarray

    def __post_init__(self):
        for name in ("e_min_sc", "e_max_sc", "p_min_sc", "p_max_sc"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        n = self.e_min_sc.size
        shapes = {name: getattr(self, name).shape for name in
                  ("e_min_sc", "e_max_sc", "p_min_sc", "p_max_sc")}
        if any(s != (n,) for s in shapes.values()):
            raise ValueError(f"envelope arrays must share one length, got {shapes}")
        if np.any(self.e_min_sc > self.e_max_sc + ENVELOPE_TOL):
            raise ValueError("need e_min_sc <= e_max_sc")
        if np.any(self.p_min_sc > ENVELOPE_TOL) or np.any(self.p_max_sc < -ENVELOPE_TOL):
            raise ValueError("need p_min_sc <= 0 <= p_max_sc")

    @property
    def n_t(self) -> int:
        return self.e_min_sc.size


def degenerate_envelope(cfg: BatteryConfig, grid: TimeGrid) -> ScEnvelope:
    """Zero-width envelope pinned at e_0: no self-consumption activity possible."""
    n = grid.n_t
    return ScEnvelope(np.full(n, cfg.e_0), np.full(n, cfg.e_0),
                      np.zeros(n), np.zeros(n))


def full_envelope(cfg: BatteryConfig, grid: TimeGrid) -> ScEnvelope:
    """The whole battery handed to self-consumption."""
    n = grid.n_t
    return ScEnvelope(np.full(n, cfg.e_min), np.full(n, cfg.e_max),
                      np.full(n, cfg.p_min), np.full(n, cfg.p_max))


def sc_rule_step(p_prof: float, e_sc: float, env: ScEnvelope, k: int) -> float:
    """Greedy self-consumption power for one step.

    p_prof is the net household profile (consumption minus production, kW);
    surplus (p_prof < 0) charges, deficit discharges. Boundary ties hold still.
    """
    if p_prof < 0.0 and e_sc < env.e_max_sc[k]:
        return min(-p_prof, float(env.p_max_sc[k]))
    if p_prof > 0.0 and e_sc > env.e_min_sc[k]:
        return max(-p_prof, float(env.p_min_sc[k]))
    return 0.0


def track_sc_energy(p_sc, cfg: BatteryConfig, grid: TimeGrid,
                    e_0: float | None = None) -> np.ndarray:
    """Integrate self-consumption power through the lossy dynamics (no bounds)."""
    p = np.asarray(p_sc, dtype=float)
    if p.shape != (grid.n_t,):
        raise ValueError(f"p_sc must have length {grid.n_t}")
    e = np.empty(grid.n_t + 1)
    e[0] = cfg.e_0 if e_0 is None else e_0
    for k in range(grid.n_t):
        e[k + 1] = battery_step(e[k], p[k], cfg, grid.dt)
    return e


def run_sc_rule_batch(profiles, env: ScEnvelope, cfg: BatteryConfig, grid: TimeGrid,
                      e_0: float | None = None):
    """Run the rule over many profile scenarios at once.

    Returns (p_sc, e_sc, stranded): powers (n, n_t), energies (n, n_t + 1), and
    a flag per step when the energy sits outside the envelope even after the
    within-step trim (only possible when the envelope itself moves past the
    current state).
    """
    prof = np.atleast_2d(np.asarray(profiles, dtype=float))
    n, n_t = prof.shape
    if n_t != grid.n_t or env.n_t != grid.n_t:
        raise ValueError("profiles, envelope and grid disagree on n_t")
    p_sc = np.zeros((n, n_t))
    e_sc = np.empty((n, n_t + 1))
    e_sc[:, 0] = cfg.e_0 if e_0 is None else e_0
    stranded = np.zeros((n, n_t), dtype=bool)
    for k in range(n_t):
        e = e_sc[:, k]
        p = np.zeros(n)
        charge = (prof[:, k] < 0.0) & (e < env.e_max_sc[k])
        p[charge] = np.minimum(-prof[charge, k], env.p_max_sc[k])
        # trim so the step lands on, not past, the energy bound
        p[charge] = np.minimum(p[charge],
                               (env.e_max_sc[k] - e[charge]) / (cfg.eta_c * grid.dt))
        discharge = (prof[:, k] > 0.0) & (e > env.e_min_sc[k])
        p[discharge] = np.maximum(-prof[discharge, k], env.p_min_sc[k])
        p[discharge] = np.maximum(p[discharge],
                                  (env.e_min_sc[k] - e[discharge]) * cfg.eta_d / grid.dt)
        e_next = battery_step(e, p, cfg, grid.dt)
        stranded[:, k] = ((e_next > env.e_max_sc[k] + ENVELOPE_TOL)
                          | (e_next < env.e_min_sc[k] - ENVELOPE_TOL))
        p_sc[:, k] = p
        e_sc[:, k + 1] = e_next
    return p_sc, e_sc, stranded


def run_sc_rule(profile, env: ScEnvelope, cfg: BatteryConfig, grid: TimeGrid,
                e_0: float | None = None):
    """Single-scenario wrapper around run_sc_rule_batch."""
    p_sc, e_sc, stranded = run_sc_rule_batch(np.asarray(profile)[None, :],
                                             env, cfg, grid, e_0)
    return p_sc[0], e_sc[0], stranded[0]


# --- policy artifact ------------------------------------------------------------

def save_policy(path, policy: RechargePolicy, envelope: ScEnvelope | None = None,
                meta: dict | None = None) -> None:
    blob = {
        "kind": "recharge_policy",
        "r": policy.r,
        "d": policy.d.tolist(),
        "grid": {"n_t": policy.grid.n_t, "dt": policy.grid.dt},
        "envelope": None if envelope is None else {
            "e_min_sc": envelope.e_min_sc.tolist(),
            "e_max_sc": envelope.e_max_sc.tolist(),
            "p_min_sc": envelope.p_min_sc.tolist(),
            "p_max_sc": envelope.p_max_sc.tolist(),
        },
        "meta": meta or {},
    }
    Path(path).write_text(json.dumps(blob, indent=2, sort_keys=True) + "\n")


def load_policy(path) -> tuple[RechargePolicy, ScEnvelope | None, dict]:
    blob = json.loads(Path(path).read_text())
    if blob.get("kind") != "recharge_policy":
        raise ValueError(f"{path} is not a policy artifact")
    grid = TimeGrid(blob["grid"]["n_t"], blob["grid"]["dt"])
    policy = RechargePolicy(np.array(blob["d"]), blob["r"], grid)
    env = None
    if blob.get("envelope") is not None:
        e = blob["envelope"]
        env = ScEnvelope(np.array(e["e_min_sc"]), np.array(e["e_max_sc"]),
                         np.array(e["p_min_sc"]), np.array(e["p_max_sc"]))
    return policy, env, blob.get("meta", {})
