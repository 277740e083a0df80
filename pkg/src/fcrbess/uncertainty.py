"""Data-driven uncertainty set for day-level deviation vectors.

The training days are whitened with a Cholesky factor of the regularized
sample covariance (w @ w.T-free convention: w.T @ w = inv(cov)). Each whitened
coordinate gets a forward and a backward deviation measure

    sigma_f = sup_{theta > 0} sqrt(2 log E[exp(theta x)] / theta^2),
    sigma_b = the same on -x,

which are at least the sample standard deviation and capture tail asymmetry.
For a linear functional a^T df the worst case over the induced uncertainty set
at exclusion level epsilon is

    a^T mean + sqrt(-2 log epsilon) * || max(sigma_f * c, -sigma_b * c) ||_2,

with c = w_inv.T @ a the functional expressed in whitened coordinates. This
value dominates the conditional value at risk at level 1 - epsilon, hence any
(1 - epsilon)-chance constraint it is substituted into.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp


class SingularCovariance(ValueError):
    """Covariance not positive definite (or too few training days)."""


class DegenerateCoordinate(ValueError):
    """A whitened coordinate is numerically constant."""


class EmptySample(ValueError):
    """CVaR of an empty sample requested."""


THETA_GRID = np.geomspace(1e-3, 1e2, 60)
COV_REG_SCALE = 1e-8


@dataclass
class UncertaintyModel:
    mean: np.ndarray
    w: np.ndarray        # whitening matrix, w.T @ w = inv(regularized covariance)
    w_inv: np.ndarray
    sigma_f: np.ndarray
    sigma_b: np.ndarray
    epsilon: float
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.w = np.asarray(self.w, dtype=float)
        self.w_inv = np.asarray(self.w_inv, dtype=float)
        self.sigma_f = np.asarray(self.sigma_f, dtype=float)
        self.sigma_b = np.asarray(self.sigma_b, dtype=float)
        n = self.mean.size
        for name in ("w", "w_inv"):
            if getattr(self, name).shape != (n, n):
                raise ValueError(f"{name} must be ({n}, {n})")
        for name in ("sigma_f", "sigma_b"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have length {n}")
        if not (0.0 < self.epsilon < 1.0):
            raise ValueError(f"epsilon must be in (0, 1), got {self.epsilon}")

    @property
    def n_t(self) -> int:
        return self.mean.size

    @property
    def omega(self) -> float:
        return math.sqrt(-2.0 * math.log(self.epsilon))


def _log_mgf(theta: float, x: np.ndarray, log_m: float) -> float:
    return float(logsumexp(theta * x)) - log_m


def _golden_max(f, lo: float, hi: float, iters: int = 48) -> float:
    """Golden-section maximization on [lo, hi], deterministic."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return max(fc, fd)


def deviation_sup(x: np.ndarray) -> float:
    """Forward deviation of a sample (use on -x for the backward deviation).

    sup over theta > 0 of 2 log mgf(theta) / theta^2, including the theta -> 0
    limit, which is the sample variance. Logarithmic grid then golden-section
    refinement around the best bracket.
    """
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise EmptySample("deviation of an empty sample")
    log_m = math.log(x.size)

    def h(theta: float) -> float:
        val = 2.0 * _log_mgf(theta, x, log_m) / theta**2
        return val if np.isfinite(val) else -np.inf

    grid_vals = np.array([h(t) for t in THETA_GRID])
    best = float(np.var(x))  # theta -> 0 limit
    i = int(np.argmax(grid_vals))
    if np.isfinite(grid_vals[i]):
        lo = THETA_GRID[max(i - 1, 0)]
        hi = THETA_GRID[min(i + 1, THETA_GRID.size - 1)]
        best = max(best, grid_vals[i], _golden_max(h, lo, hi))
    return math.sqrt(max(best, 0.0))


def fit(scenarios, epsilon: float, cov_reg_scale: float = COV_REG_SCALE,
        provenance: dict | None = None) -> UncertaintyModel:
    """Fit mean, whitening and deviation measures on training days (rows)."""
    values = np.asarray(getattr(scenarios, "values", scenarios), dtype=float)
    if values.ndim != 2:
        raise ValueError("training scenarios must be a 2d array, days by steps")
    m, n_t = values.shape
    if m < n_t + 1:
        raise SingularCovariance(f"{m} days cannot identify an order-{n_t} covariance; "
                                 f"need at least {n_t + 1}")
    if not (0.0 < epsilon < 1.0):
        raise ValueError(f"epsilon must be in (0, 1), got {epsilon}")
    mean = values.mean(axis=0)
    centered = values - mean
    cov = centered.T @ centered / m
    delta = cov_reg_scale * np.trace(cov) / n_t
    cov_reg = cov + delta * np.eye(n_t)
    try:
        chol = np.linalg.cholesky(cov_reg)
    except np.linalg.LinAlgError as exc:
        raise SingularCovariance(f"regularized covariance not positive definite: {exc}")
    w = solve_triangular(chol, np.eye(n_t), lower=True)
    whitened = centered @ w.T
    # healthy coordinates have std ~= 1 after whitening; a rank-deficient
    # direction survives only on the regularization floor, orders below 1
    stds = whitened.std(axis=0)
    bad = np.flatnonzero(stds < 1e-3)
    if bad.size:
        raise DegenerateCoordinate(f"whitened coordinate(s) {bad.tolist()} are constant")
    sigma_f = np.array([deviation_sup(whitened[:, i]) for i in range(n_t)])
    sigma_b = np.array([deviation_sup(-whitened[:, i]) for i in range(n_t)])
    return UncertaintyModel(mean, w, chol, sigma_f, sigma_b, epsilon,
                            provenance=dict(provenance or {}, n_days=m))


def worst_case(model: UncertaintyModel, a) -> float:
    """Upper bound on CVaR at level 1 - epsilon of a^T df under the model."""
    a = np.asarray(a, dtype=float)
    c = model.w_inv.T @ a
    u = np.maximum(model.sigma_f * c, -model.sigma_b * c)
    return float(a @ model.mean + model.omega * np.linalg.norm(u))


def empirical_cvar(samples, epsilon: float) -> float:
    """Exact sample CVaR at level 1 - epsilon.

    Mean of the largest ceil(epsilon * n) order statistics, the last one
    fractionally weighted so the tail mass is exactly epsilon * n samples.
    """
    x = np.asarray(samples, dtype=float).ravel()
    n = x.size
    if n == 0:
        raise EmptySample("CVaR of an empty sample")
    if not (0.0 < epsilon < 1.0):
        raise ValueError(f"epsilon must be in (0, 1), got {epsilon}")
    if n < 1.0 / epsilon:
        warnings.warn(f"only {n} samples at epsilon={epsilon}; the estimate degenerates "
                      "to the sample maximum", stacklevel=2)
    en = epsilon * n
    m = math.ceil(en)
    top = np.sort(x)[::-1][:m]
    return float((top[:-1].sum() + (en - (m - 1)) * top[-1]) / en)


# --- serialization ------------------------------------------------------------

def save_model(model: UncertaintyModel, path) -> None:
    blob = {
        "kind": "uncertainty_model",
        "epsilon": model.epsilon,
        "mean": model.mean.tolist(),
        "w": model.w.tolist(),
        "w_inv": model.w_inv.tolist(),
        "sigma_f": model.sigma_f.tolist(),
        "sigma_b": model.sigma_b.tolist(),
        "provenance": model.provenance,
    }
    Path(path).write_text(json.dumps(blob, indent=2, sort_keys=True) + "\n")


def load_model(path) -> UncertaintyModel:
    blob = json.loads(Path(path).read_text())
    if blob.get("kind") != "uncertainty_model":
        raise ValueError(f"{path} is not an uncertainty model artifact")
    return UncertaintyModel(
        np.array(blob["mean"]), np.array(blob["w"]), np.array(blob["w_inv"]),
        np.array(blob["sigma_f"]), np.array(blob["sigma_b"]),
        blob["epsilon"], blob.get("provenance", {}))
