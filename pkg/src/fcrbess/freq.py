"""Grid frequency ingestion and discretization.

1 Hz frequency recordings are segmented into UTC days, gap-cleaned, and reduced
to one normalized deviation value per dispatch step,

    df_k = (1/dt) * integral over step k of (f(t) - f_nom) / df_max dt,

approximated by the sample mean over the step. With fold=True the battery
efficiencies are applied samplewise before averaging (eta_c on over-frequency,
1/eta_d on under-frequency), which lets a lossless linear energy model stand in
for the lossy battery as long as the commanded power has the sign of the
deviation. Deviations are clamped to the activation band [-1, 1] before folding
by default.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
import json

import numpy as np
import pandas as pd

from .model import TimeGrid, efficiency_fold

DAY_SECONDS = 86400


class GridMismatch(ValueError):
    """Dispatch grid does not tile a day of 1 Hz samples."""


class EmptySet(ValueError):
    """A scenario set ended up with no rows."""


@dataclass(frozen=True)
class FrequencyBand:
    """Nominal frequency and full activation deviation, both in Hz."""

    f_nom: float = 50.0
    df_max: float = 0.2

    def __post_init__(self):
        if self.df_max <= 0:
            raise ValueError("df_max must be positive")


@dataclass
class RawFrequencyDay:
    """One day of 1 Hz samples. seconds are offsets from day start, strictly increasing."""

    date: str
    seconds: np.ndarray
    hz: np.ndarray

    def __post_init__(self):
        self.seconds = np.asarray(self.seconds, dtype=np.int64)
        self.hz = np.asarray(self.hz, dtype=float)
        if self.seconds.shape != self.hz.shape:
            raise ValueError("seconds and hz must have equal length")
        if self.seconds.size == 0:
            raise ValueError(f"day {self.date} has no samples")
        if np.any(np.diff(self.seconds) <= 0):
            raise ValueError(f"day {self.date}: seconds must be strictly increasing")
        if self.seconds[0] < 0 or self.seconds[-1] >= DAY_SECONDS:
            raise ValueError(f"day {self.date}: seconds outside [0, {DAY_SECONDS})")

    @property
    def complete(self) -> bool:
        return self.seconds.size == DAY_SECONDS


@dataclass(frozen=True)
class Rejected:
    """Day excluded by cleaning; first_bad_gap is the second where the bad gap starts."""

    date: str
    first_bad_gap: int
    reason: str


def clean_day(day: RawFrequencyDay, max_gap_s: int = 60) -> RawFrequencyDay | Rejected:
    """Fill interior gaps up to max_gap_s by linear interpolation.

    Gaps touching the day boundary or longer than max_gap_s cannot be
    interpolated; the day is rejected at the first such gap.
    """
    if day.complete:
        return day
    present = np.zeros(DAY_SECONDS, dtype=bool)
    present[day.seconds] = True
    missing = np.flatnonzero(~present)
    # contiguous runs of missing seconds, in time order
    breaks = np.flatnonzero(np.diff(missing) > 1)
    starts = np.concatenate([[missing[0]], missing[breaks + 1]])
    ends = np.concatenate([missing[breaks], [missing[-1]]])
    for s, e in zip(starts, ends):
        length = e - s + 1
        if s == 0 or e == DAY_SECONDS - 1:
            return Rejected(day.date, int(s), f"gap of {length}s touches day boundary")
        if length > max_gap_s:
            return Rejected(day.date, int(s), f"gap of {length}s exceeds {max_gap_s}s")
    filled = np.interp(np.arange(DAY_SECONDS), day.seconds, day.hz)
    return RawFrequencyDay(day.date, np.arange(DAY_SECONDS), filled)


def _samples_per_step(grid: TimeGrid) -> int:
    if abs(grid.horizon_h - 24.0) > 1e-9:
        raise GridMismatch(f"grid covers {grid.horizon_h} h, a frequency day needs 24 h")
    if DAY_SECONDS % grid.n_t != 0:
        raise GridMismatch(f"{grid.n_t} steps do not tile {DAY_SECONDS} samples")
    return DAY_SECONDS // grid.n_t


def discretize(day: RawFrequencyDay, grid: TimeGrid, band: FrequencyBand,
               eta_c: float = 1.0, eta_d: float = 1.0,
               fold: bool = False, clamp: bool = True) -> np.ndarray:
    """Per-step normalized deviations of one complete day, optionally folded."""
    spp = _samples_per_step(grid)
    if not day.complete:
        raise ValueError(f"day {day.date} is incomplete; clean_day it first")
    x = (day.hz - band.f_nom) / band.df_max
    if clamp:
        x = np.clip(x, -1.0, 1.0)
    if fold:
        x = efficiency_fold(x, eta_c, eta_d)
    return x.reshape(grid.n_t, spp).mean(axis=1)


@dataclass
class FrequencyScenarioSet:
    """Day-level deviation scenarios: one row per day, one column per step."""

    values: np.ndarray
    grid: TimeGrid
    folded: bool
    eta_c: float = 1.0
    eta_d: float = 1.0
    day_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape[1] != self.grid.n_t:
            raise GridMismatch(
                f"scenario matrix has {self.values.shape[1]} columns, grid wants {self.grid.n_t}")
        if not self.day_ids:
            self.day_ids = [f"day{i:05d}" for i in range(self.values.shape[0])]
        if len(self.day_ids) != self.values.shape[0]:
            raise ValueError("day_ids length must match the number of rows")

    @property
    def n_days(self) -> int:
        return self.values.shape[0]

    def subset(self, idx) -> "FrequencyScenarioSet":
        idx = np.asarray(idx)
        return FrequencyScenarioSet(self.values[idx], self.grid, self.folded,
                                    self.eta_c, self.eta_d,
                                    [self.day_ids[i] for i in idx])


def ingest_days(days: list[RawFrequencyDay], grid: TimeGrid, band: FrequencyBand,
                eta_c: float = 1.0, eta_d: float = 1.0, fold: bool = False,
                clamp: bool = True, max_gap_s: int = 60,
                ) -> tuple[FrequencyScenarioSet, list[Rejected]]:
    """Clean and discretize a batch of raw days; rejected days are reported, not fatal."""
    rows, ids, rejected = [], [], []
    for day in days:
        out = clean_day(day, max_gap_s=max_gap_s)
        if isinstance(out, Rejected):
            rejected.append(out)
            continue
        rows.append(discretize(out, grid, band, eta_c, eta_d, fold=fold, clamp=clamp))
        ids.append(out.date)
    if not rows:
        raise EmptySet("no day survived cleaning")
    sset = FrequencyScenarioSet(np.vstack(rows), grid, fold, eta_c, eta_d, ids)
    return sset, rejected


def split_train_validation(sset: FrequencyScenarioSet, frac: float, seed: int,
                           ) -> tuple[FrequencyScenarioSet, FrequencyScenarioSet]:
    """Seeded random split. Sizes follow half-up rounding of frac * n_days."""
    n = sset.n_days
    if n < 2:
        raise EmptySet(f"cannot split {n} day(s)")
    n_train = int(np.floor(frac * n + 0.5))
    if n_train < 1 or n_train >= n:
        raise EmptySet(f"split {frac} of {n} days leaves an empty side")
    perm = np.random.default_rng(seed).permutation(n)
    return sset.subset(np.sort(perm[:n_train])), sset.subset(np.sort(perm[n_train:]))


# --- file formats -------------------------------------------------------------

def load_frequency_csv(path) -> list[RawFrequencyDay]:
    """Read a 1 Hz recording with columns timestamp, frequency_hz.

    Timestamps are ISO-8601 strings or epoch seconds, UTC. Sub-second stamps are
    rounded to the nearest second; duplicate seconds keep the first sample.
    """
    df = pd.read_csv(path)
    for col in ("timestamp", "frequency_hz"):
        if col not in df.columns:
            raise ValueError(f"{path}: missing column {col!r}")
    ts = df["timestamp"]
    if np.issubdtype(ts.dtype, np.number):
        epoch = np.round(ts.to_numpy(dtype=float)).astype(np.int64)
    else:
        parsed = pd.to_datetime(ts, utc=True, format="ISO8601")
        nanos = parsed.astype("int64").to_numpy()
        epoch = np.round(nanos / 1e9).astype(np.int64)
    hz = df["frequency_hz"].to_numpy(dtype=float)
    order = np.argsort(epoch, kind="stable")
    epoch, hz = epoch[order], hz[order]
    days = []
    for day_num in np.unique(epoch // DAY_SECONDS):
        m = epoch // DAY_SECONDS == day_num
        secs = epoch[m] % DAY_SECONDS
        vals = hz[m]
        secs, keep = np.unique(secs, return_index=True)
        date = pd.Timestamp(day_num * DAY_SECONDS, unit="s", tz="UTC").strftime("%Y-%m-%d")
        days.append(RawFrequencyDay(date, secs, vals[keep]))
    return days


def save_scenario_set(sset: FrequencyScenarioSet, csv_path, extra: dict | None = None) -> Path:
    """Write the matrix as bare CSV and a sidecar manifest; returns the manifest path."""
    csv_path = Path(csv_path)
    _write_matrix_csv(sset.values, csv_path)
    manifest = {
        "kind": "frequency_scenarios",
        "n_days": sset.n_days,
        "grid": {"n_t": sset.grid.n_t, "dt": sset.grid.dt},
        "folded": sset.folded,
        "eta_c": sset.eta_c,
        "eta_d": sset.eta_d,
        "day_ids": sset.day_ids,
    }
    if extra:
        manifest.update(extra)
    mpath = csv_path.with_suffix(csv_path.suffix + ".manifest.json")
    mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return mpath


def load_scenario_set(csv_path) -> FrequencyScenarioSet:
    csv_path = Path(csv_path)
    mpath = csv_path.with_suffix(csv_path.suffix + ".manifest.json")
    if not mpath.exists():
        raise FileNotFoundError(f"scenario manifest {mpath} not found")
    manifest = json.loads(mpath.read_text())
    values = np.loadtxt(csv_path, delimiter=",", ndmin=2)
    return FrequencyScenarioSet(
        values,
        TimeGrid(manifest["grid"]["n_t"], manifest["grid"]["dt"]),
        manifest["folded"],
        manifest.get("eta_c", 1.0),
        manifest.get("eta_d", 1.0),
        manifest.get("day_ids") or [],
    )


def _write_matrix_csv(values: np.ndarray, path) -> None:
    with open(path, "w") as fh:
        for row in np.atleast_2d(values):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


# --- synthetic stand-ins ------------------------------------------------------
# The historical dataset is not distributable, so tests and the demo pipeline
# draw from a generator tuned to look like real deviation data: autocorrelated
# within the day, a small diurnal mean, heavier-than-Gaussian innovations
# (scale mixture), hard-limited well inside the activation band.

def synth_frequency_matrix(n_days: int, grid: TimeGrid, seed: int,
                           scale: float = 0.08, ar: float = 0.85,
                           bias_amp: float = 0.02, clip: float = 0.6,
                           mix_p: float = 0.1, mix_boost: float = 2.0) -> np.ndarray:
    """Unfolded per-step deviation days, shape (n_days, n_t), values in [-clip, clip]."""
    rng = np.random.default_rng(seed)
    n_t = grid.n_t
    z = rng.standard_normal((n_days, n_t))
    boost = np.where(rng.random((n_days, n_t)) < mix_p, mix_boost, 1.0)
    innov = z * boost / np.sqrt(1.0 - mix_p + mix_p * mix_boost**2)
    x = np.empty((n_days, n_t))
    x[:, 0] = innov[:, 0]
    damp = np.sqrt(1.0 - ar**2)
    for k in range(1, n_t):
        x[:, k] = ar * x[:, k - 1] + damp * innov[:, k]
    bias = bias_amp * np.sin(2.0 * np.pi * np.arange(n_t) / n_t)
    return np.clip(scale * x + bias, -clip, clip)


def synth_scenario_sets(n_days: int, grid: TimeGrid, seed: int,
                        eta_c: float = 1.0, eta_d: float = 1.0, **kw,
                        ) -> tuple[FrequencyScenarioSet, FrequencyScenarioSet]:
    """Matched (unfolded, folded) sets from one synthetic draw.

    Deviations are treated as constant within a step, so folding commutes with
    the step average and the folded set is exactly the samplewise-folded twin
    of the unfolded one.
    """
    raw = synth_frequency_matrix(n_days, grid, seed, **kw)
    unfolded = FrequencyScenarioSet(raw, grid, folded=False)
    folded = FrequencyScenarioSet(efficiency_fold(raw, eta_c, eta_d), grid,
                                  folded=True, eta_c=eta_c, eta_d=eta_d,
                                  day_ids=list(unfolded.day_ids))
    return unfolded, folded


def synth_frequency_csv(path, n_days: int, seed: int,
                        band: FrequencyBand = FrequencyBand(),
                        start_date: str = "2024-03-01",
                        gap_spec: list[tuple[int, int, int]] | None = None) -> Path:
    """Write a 1 Hz synthetic recording as CSV with ISO timestamps.

    gap_spec lists (day_index, start_second, length) holes to punch, for
    exercising the cleaning path.
    """
    rng = np.random.default_rng(seed)
    start = pd.Timestamp(start_date, tz="UTC")
    gaps = gap_spec or []
    path = Path(path)
    with open(path, "w") as fh:
        fh.write("timestamp,frequency_hz\n")
        for d in range(n_days):
            x = np.empty(DAY_SECONDS)
            x[0] = rng.normal(0, 0.01)
            innov = rng.standard_normal(DAY_SECONDS) * 0.0015
            ar = 0.999
            for t in range(1, DAY_SECONDS):
                x[t] = ar * x[t - 1] + innov[t]
            hz = band.f_nom + np.clip(x, -0.9 * band.df_max, 0.9 * band.df_max)
            keep = np.ones(DAY_SECONDS, dtype=bool)
            for gd, gs, gl in gaps:
                if gd == d:
                    keep[gs:gs + gl] = False
            day0 = start + pd.Timedelta(days=d)
            stamps = day0 + pd.to_timedelta(np.flatnonzero(keep), unit="s")
            for t, v in zip(stamps.strftime("%Y-%m-%dT%H:%M:%SZ"), hz[keep]):
                fh.write(f"{t},{float(v)!r}\n")
    return path
