"""Battery model on a fixed dispatch grid.

Sign convention: positive power charges the battery, negative power discharges.
Charging multiplies by eta_c before the energy integral, discharging divides by
eta_d, so a full cycle at power p loses (1 - eta_c*eta_d) of the throughput.
Energy states are kWh, powers kW, the grid step dt is hours.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, fields
from pathlib import Path

import numpy as np

VIOLATION_TOL = 1e-9


@dataclass(frozen=True)
class TimeGrid:
    """Dispatch grid: n_t steps of dt hours each."""

    n_t: int
    dt: float

    def __post_init__(self):
        if self.n_t < 1:
            raise ValueError(f"n_t must be >= 1, got {self.n_t}")
        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise ValueError(f"dt must be positive and finite, got {self.dt}")

    @property
    def horizon_h(self) -> float:
        return self.n_t * self.dt


@dataclass(frozen=True)
class BatteryConfig:
    """Physical battery limits plus the initial state of charge e_0."""

    e_min: float  # kWh
    e_max: float  # kWh
    p_min: float  # kW, most negative admissible (discharge) power
    p_max: float  # kW
    eta_c: float
    eta_d: float
    e_0: float    # kWh, state of charge at the start of the horizon

    def __post_init__(self):
        if not self.e_min <= self.e_0 <= self.e_max:
            raise ValueError(f"need e_min <= e_0 <= e_max, got {self.e_min}, {self.e_0}, {self.e_max}")
        if self.e_min >= self.e_max:
            raise ValueError("e_min must be below e_max")
        if not (self.p_min < 0 < self.p_max):
            raise ValueError(f"need p_min < 0 < p_max, got {self.p_min}, {self.p_max}")
        for name in ("eta_c", "eta_d"):
            v = getattr(self, name)
            if not (0 < v <= 1):
                raise ValueError(f"{name} must be in (0, 1], got {v}")

    @property
    def c_rate(self) -> float:
        """Discharge-duration inverse p_max / (e_max - e_min), in 1/h."""
        return self.p_max / (self.e_max - self.e_min)


@dataclass(frozen=True)
class PriceSet:
    """Tariffs. c_cons and c_inj are cEUR/kWh, c_r is EUR/MW/h of reserve."""

    c_cons: float
    c_inj: float
    c_r: float

    def __post_init__(self):
        if min(self.c_cons, self.c_inj, self.c_r) < 0:
            raise ValueError("prices must be nonnegative")
        if not self.c_inj < self.c_cons:
            raise ValueError(f"need c_inj < c_cons, got {self.c_inj} >= {self.c_cons}")

    @property
    def c_cons_eur(self) -> float:
        return self.c_cons / 100.0

    @property
    def c_inj_eur(self) -> float:
        return self.c_inj / 100.0


def efficiency_fold(x, eta_c: float, eta_d: float):
    """Apply charge/discharge efficiencies to a signed signal.

    Returns eta_c*[x]+ - (1/eta_d)*[-x]+, elementwise on arrays.
    """
    x = np.asarray(x, dtype=float)
    return eta_c * np.maximum(x, 0.0) - np.maximum(-x, 0.0) / eta_d


def battery_step(e, p, cfg: BatteryConfig, dt: float):
    """One lossy Euler step. No clamping: callers decide how to treat violations."""
    return e + efficiency_fold(p, cfg.eta_c, cfg.eta_d) * dt


@dataclass
class Trajectory:
    """Result of integrating a power series through the battery."""

    energy: np.ndarray            # length n_t + 1, energy[0] = e_0
    power_violation: np.ndarray   # bool, length n_t
    energy_violation: np.ndarray  # bool, length n_t, checked after each step

    @property
    def feasible(self) -> bool:
        return not (self.power_violation.any() or self.energy_violation.any())


def simulate_trajectory(powers, cfg: BatteryConfig, grid: TimeGrid,
                        e_0: float | None = None) -> Trajectory:
    """Integrate a commanded power series; flag bound violations, never clamp."""
    p = np.asarray(powers, dtype=float)
    if p.shape != (grid.n_t,):
        raise ValueError(f"power series has shape {p.shape}, expected ({grid.n_t},)")
    e = np.empty(grid.n_t + 1)
    e[0] = cfg.e_0 if e_0 is None else e_0
    deltas = efficiency_fold(p, cfg.eta_c, cfg.eta_d) * grid.dt
    e[1:] = e[0] + np.cumsum(deltas)
    power_bad = (p > cfg.p_max + VIOLATION_TOL) | (p < cfg.p_min - VIOLATION_TOL)
    energy_bad = (e[1:] > cfg.e_max + VIOLATION_TOL) | (e[1:] < cfg.e_min - VIOLATION_TOL)
    return Trajectory(energy=e, power_violation=power_bad, energy_violation=energy_bad)


# --- config serialization ----------------------------------------------------

_CONFIG_TYPES = {"TimeGrid": TimeGrid, "BatteryConfig": BatteryConfig, "PriceSet": PriceSet}


def config_to_dict(cfg) -> dict:
    d = asdict(cfg)
    d["kind"] = type(cfg).__name__
    return d


def config_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("kind")
    cls = _CONFIG_TYPES[kind]
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ValueError(f"unknown fields for {kind}: {sorted(unknown)}")
    return cls(**d)


def save_config(cfg, path):
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n")


def load_config(path):
    return config_from_dict(json.loads(Path(path).read_text()))
