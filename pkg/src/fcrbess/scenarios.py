"""Household net-load scenarios: generation, reduction, SAA gap estimation.

Profiles are net power (demand minus production, kW) per step. Scenario sets
carry probability weights so reduced sets plug into the same sample-average
machinery as raw iid draws.

Backward reduction greedily deletes the scenario that is cheapest to
represent by its nearest survivor (weight times Euclidean distance) and moves
its weight there -- the optimal-transport redistribution for a fixed support.
The quality of a kept set S against the original measure is

    cost(S) = sum_{i not in S} w_i * min_{j in S} ||x_i - x_j||.

The gap estimator brackets the true optimum of a stochastic program from a
candidate first-stage decision: an upper confidence bound from fresh
per-scenario recourse values at the candidate, a lower one from independent
re-solved sample-average problems, combined with normal / Student-t quantile
safety terms.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
import scipy.stats
from scipy.spatial.distance import cdist

WEIGHT_TOL = 1e-12


@dataclass
class ProfileScenarioSet:
    profiles: np.ndarray  # (n_sc, n_t) net power, kW
    weights: np.ndarray   # (n_sc,) probabilities

    def __post_init__(self):
        self.profiles = np.atleast_2d(np.asarray(self.profiles, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (self.profiles.shape[0],):
            raise ValueError("one weight per scenario required")
        if self.n_sc > 0:
            if np.any(self.weights < 0):
                raise ValueError("weights must be nonnegative")
            if abs(self.weights.sum() - 1.0) > WEIGHT_TOL:
                raise ValueError(f"weights must sum to 1, got {self.weights.sum()!r}")

    @property
    def n_sc(self) -> int:
        return self.profiles.shape[0]

    @property
    def n_t(self) -> int:
        return self.profiles.shape[1]

    @classmethod
    def uniform(cls, profiles) -> "ProfileScenarioSet":
        profiles = np.atleast_2d(np.asarray(profiles, dtype=float))
        n = profiles.shape[0]
        return cls(profiles, np.full(n, 1.0 / n) if n else np.zeros(0))


def save_profile_set(path, sset: ProfileScenarioSet) -> None:
    """CSV with a weight column then one column per step (repr-exact floats)."""
    cols = ["weight"] + [f"p{k:05d}" for k in range(sset.n_t)]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for w, row in zip(sset.weights, sset.profiles):
            fh.write(",".join(repr(float(v)) for v in [w, *row]) + "\n")


def load_profile_set(path) -> ProfileScenarioSet:
    frame = pd.read_csv(path, float_precision="round_trip")
    prof_cols = sorted(c for c in frame.columns if c.startswith("p"))
    if not prof_cols:
        raise ValueError(f"{path} has no profile columns")
    profiles = frame[prof_cols].to_numpy(dtype=float)
    if "weight" in frame.columns:
        weights = frame["weight"].to_numpy(dtype=float)
    else:
        weights = np.full(len(frame), 1.0 / len(frame))
    return ProfileScenarioSet(profiles, weights)


# --- synthetic profiles ---------------------------------------------------------

def _gauss_bump(hours, center, width):
    return np.exp(-0.5 * ((hours - center) / width) ** 2)


def synth_profiles(kind: str, grid, n: int, seed: int, noise: float = 0.25,
                   base_kw: float = 0.3, morning_kw: float = 1.2,
                   evening_kw: float = 2.2, pv_peak_kw: float = 3.0,
                   day_start_h: float = 7.5, day_end_h: float = 18.5
                   ) -> ProfileScenarioSet:
    """Reproducible stand-in profiles: household demand, pv production, or net.

    household: base load plus morning and evening humps, multiplicative
    lognormal noise per step. pv: a daylight bell scaled by one clear-sky
    index per day plus milder per-step noise, zero outside daylight. net:
    household minus pv (independent draws from the same stream). noise = 0
    makes every row the deterministic base shape.
    """
    if kind not in ("household", "pv", "net"):
        raise ValueError(f"unknown profile kind {kind!r}")
    if n == 0:
        return ProfileScenarioSet(np.zeros((0, grid.n_t)), np.zeros(0))
    rng = np.random.default_rng(seed)
    hours = (np.arange(grid.n_t) + 0.5) * grid.dt

    def household():
        shape = (base_kw + morning_kw * _gauss_bump(hours, 8.0, 1.2)
                 + evening_kw * _gauss_bump(hours, 19.5, 1.8))
        z = rng.standard_normal((n, grid.n_t))
        factor = np.exp(noise * z - 0.5 * noise ** 2)
        return shape[None, :] * factor

    def pv():
        span = day_end_h - day_start_h
        inside = (hours >= day_start_h) & (hours <= day_end_h)
        shape = np.zeros(grid.n_t)
        shape[inside] = pv_peak_kw * np.sin(
            np.pi * (hours[inside] - day_start_h) / span) ** 2
        clear = np.exp(noise * rng.standard_normal((n, 1)) - 0.5 * noise ** 2)
        ripple = np.exp(0.5 * noise * rng.standard_normal((n, grid.n_t))
                        - 0.125 * noise ** 2)
        return shape[None, :] * np.clip(clear, 0.0, 1.5) * ripple

    if kind == "household":
        prof = household()
    elif kind == "pv":
        prof = pv()
    else:
        prof = household() - pv()
    return ProfileScenarioSet.uniform(prof)


# --- Kantorovich backward reduction ---------------------------------------------

def kantorovich_cost(sset: ProfileScenarioSet, kept) -> float:
    """Transport cost of collapsing the set onto the kept scenario indices."""
    kept = np.asarray(sorted(kept), dtype=int)
    dropped = np.setdiff1d(np.arange(sset.n_sc), kept)
    if dropped.size == 0:
        return 0.0
    d = cdist(sset.profiles[dropped], sset.profiles[kept])
    return float(sset.weights[dropped] @ d.min(axis=1))


def reduce_backward(sset: ProfileScenarioSet, target_n: int) -> ProfileScenarioSet:
    """Greedy backward reduction to target_n scenarios.

    Each round deletes the kept scenario u minimizing w_u * (distance to its
    nearest other kept scenario), then adds w_u onto that nearest survivor.
    Ties break to the lowest scenario index. Surviving scenarios keep their
    original order.
    """
    n = sset.n_sc
    if not 1 <= target_n <= n:
        raise ValueError(f"target_n must be in [1, {n}], got {target_n}")
    if target_n == n:
        return ProfileScenarioSet(sset.profiles.copy(), sset.weights.copy())

    dist = cdist(sset.profiles, sset.profiles)
    np.fill_diagonal(dist, np.inf)
    kept = np.ones(n, dtype=bool)
    w = sset.weights.copy()
    # nearest kept neighbour of each kept scenario (lowest index on ties)
    near = dist.argmin(axis=1)
    near_d = dist[np.arange(n), near]

    for _ in range(n - target_n):
        scores = np.where(kept, w * near_d, np.inf)
        u = int(scores.argmin())  # argmin takes the first (lowest index) tie
        kept[u] = False
        w[near[u]] += w[u]
        w[u] = 0.0
        # scenarios that leaned on u need a new nearest survivor
        stale = np.flatnonzero(kept & (near == u))
        masked = dist[:, kept]
        kept_idx = np.flatnonzero(kept)
        for s in stale:
            j = int(masked[s].argmin())
            near[s] = kept_idx[j]
            near_d[s] = masked[s, j]

    kept_idx = np.flatnonzero(kept)
    return ProfileScenarioSet(sset.profiles[kept_idx], w[kept_idx])


def brute_force_reduction(sset: ProfileScenarioSet, target_n: int):
    """Exhaustive best kept subset (tiny n_sc only). Returns (indices, cost)."""
    from itertools import combinations

    best, best_cost = None, np.inf
    for kept in combinations(range(sset.n_sc), target_n):
        c = kantorovich_cost(sset, kept)
        if c < best_cost - 1e-15:
            best, best_cost = kept, c
    return np.asarray(best, dtype=int), float(best_cost)


# --- SAA optimality gap -----------------------------------------------------------

def normal_quantile(p: float) -> float:
    """Standard normal quantile (inverse CDF)."""
    return float(scipy.stats.norm.ppf(p))


def t_quantile(p: float, dof: int) -> float:
    """Student-t quantile with dof degrees of freedom."""
    return float(scipy.stats.t.ppf(p, dof))


@dataclass
class GapEstimate:
    upper_mean: float
    lower_mean: float
    gap: float
    alpha: float
    n_u: int
    n_l: int
    n_sc: int
    sigma_u: float
    sigma_l: float

    def relative(self, scale: float | None = None) -> float:
        """Gap as a fraction of |scale| (default: the upper mean)."""
        ref = abs(self.upper_mean if scale is None else scale)
        return self.gap / ref if ref > 0 else np.inf

    def to_dict(self) -> dict:
        return {
            "upper_mean": self.upper_mean, "lower_mean": self.lower_mean,
            "gap": self.gap, "alpha": self.alpha, "n_U": self.n_u,
            "n_L": self.n_l, "n_sc": self.n_sc,
            "sigma_U": self.sigma_u, "sigma_L": self.sigma_l,
        }


def estimate_gap(solve_saa, evaluate_candidate, source, n_u: int, n_l: int,
                 n_sc: int, alpha: float, rng) -> GapEstimate:
    """Confidence bound on the optimality gap of a fixed candidate decision.

    solve_saa(profiles) -> optimal value of a fresh sample-average problem;
    evaluate_candidate(profiles) -> per-scenario objective of the candidate
    (its first-stage variables are baked into the closure);
    source(n, rng) -> (n, n_t) iid profile draws.

    gap = g_U - g_L + z_{1-alpha} sigma_U / sqrt(n_U)
                    + t_{1-alpha, n_L-1} sigma_L / sqrt(n_L).
    """
    if n_l < 2:
        raise ValueError("n_l must be at least 2 for the t-based term")
    if n_u < 2:
        raise ValueError("n_u must be at least 2 to estimate sigma_U")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    rng = np.random.default_rng(rng)

    upper_vals = np.asarray(evaluate_candidate(source(n_u, rng)), dtype=float)
    if upper_vals.shape != (n_u,):
        raise ValueError("evaluate_candidate must return one value per scenario")
    upper_mean = float(upper_vals.mean())
    sigma_u = float(upper_vals.std(ddof=1))

    lower_vals = np.array([float(solve_saa(source(n_sc, rng))) for _ in range(n_l)])
    lower_mean = float(lower_vals.mean())
    sigma_l = float(lower_vals.std(ddof=1))

    gap = (upper_mean - lower_mean
           + normal_quantile(1.0 - alpha) * sigma_u / np.sqrt(n_u)
           + t_quantile(1.0 - alpha, n_l - 1) * sigma_l / np.sqrt(n_l))
    return GapEstimate(upper_mean=upper_mean, lower_mean=lower_mean,
                       gap=float(gap), alpha=alpha, n_u=n_u, n_l=n_l, n_sc=n_sc,
                       sigma_u=sigma_u, sigma_l=sigma_l)
