"""Command-line pipeline: ingest, fit, optimize, reduce, gap, simulate, study.

Each command reads upstream artifacts, writes deterministic JSON/CSV artifacts
stamped with the run-config hash and input-file hashes, and prints a one-line
summary (the only place timing appears). Exit codes: 0 success, 2 validation
or input problem, 3 solver failure or infeasible program.

Configuration is a single flat JSON document; every field can be overridden by
a command-line flag. Stochastic commands (gap, simulate) require an explicit
--seed; nothing is ever seeded from the clock.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import artifacts, uncertainty
from .conic import SOLVER_ENV_VAR, SolverFailure
from .freq import FrequencyBand, ingest_days, load_frequency_csv, \
    load_scenario_set, save_scenario_set
from .model import BatteryConfig, PriceSet, TimeGrid
from .optimizer import InfeasibleProblem, solve_combined, solve_fcr
from .policies import load_policy
from .scenarios import estimate_gap, load_profile_set, reduce_backward, \
    save_profile_set, synth_profiles
from .selfcons import DispatchInfeasible, evaluate_sc_recourse
from .simulator import evaluate_revenue, resample_frequency, run_closed_loop, \
    summarize
from .uncertainty import UncertaintyModel

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SOLVER = 3


@dataclass
class RunConfig:
    """Effective settings of one command run; hashed into every artifact."""

    out_dir: str = "out"
    frequency_csv: str | None = None
    scenario_csv: str | None = None
    profile_csv: str | None = None
    model_path: str | None = None
    policy_path: str | None = None
    n_t: int = 24
    dt: float = 1.0
    e_min: float = 0.0
    e_max: float = 10.0
    p_min: float = -7.0
    p_max: float = 7.0
    eta_c: float = math.sqrt(0.9)
    eta_d: float = math.sqrt(0.9)
    e_0: float = 5.0
    c_cons: float = 28.73
    c_inj: float = 12.20
    c_r: float = 14.71
    epsilon: float = 0.01
    f_nom: float = 50.0
    df_max: float = 0.2
    max_gap_s: int = 60
    seed: int | None = None
    n_samples: int = 10_000
    alpha: float = 0.01
    quantiles: list = field(default_factory=lambda: [0.01, 0.5, 0.99])
    trajectories: int = 0
    target_n: int = 100
    fix_r: float | None = None
    gap_n_u: int = 2000
    gap_n_l: int = 10
    gap_n_sc: int = 100
    gap_alpha: float = 0.005
    profile_kind: str = "net"
    profile_noise: float = 0.25
    study_epsilons: list = field(
        default_factory=lambda: [1e-4, 1e-3, 1e-2, 1e-1])
    study_crates: list = field(
        default_factory=lambda: [0.25, 0.5, 1.0, 2.0, 4.0])
    study_c_r: list = field(
        default_factory=lambda: [0.0, 5.0, 10.0, 15.0, 20.0, 30.0, 40.0])

    def battery(self) -> BatteryConfig:
        return BatteryConfig(self.e_min, self.e_max, self.p_min, self.p_max,
                             self.eta_c, self.eta_d, self.e_0)

    def prices(self) -> PriceSet:
        return PriceSet(self.c_cons, self.c_inj, self.c_r)

    def grid(self) -> TimeGrid:
        return TimeGrid(self.n_t, self.dt)

    def band(self) -> FrequencyBand:
        return FrequencyBand(self.f_nom, self.df_max)

    def sha256(self) -> str:
        return artifacts.sha256_json(asdict(self))


def build_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if args.config is not None:
        blob = json.loads(Path(args.config).read_text())
        known = {f.name for f in fields(RunConfig)}
        bad = set(blob) - known
        if bad:
            raise ValueError(f"unknown config keys: {sorted(bad)}")
        cfg = replace(cfg, **blob)
    overrides = {f.name: getattr(args, f.name)
                 for f in fields(RunConfig)
                 if getattr(args, f.name, None) is not None}
    cfg = replace(cfg, **overrides)
    # domain constructors own the parameter invariants; trip them now so a bad
    # value fails uniformly regardless of which command was asked for
    cfg.battery(), cfg.prices(), cfg.grid(), cfg.band()
    return cfg


def _require_file(value: str | None, flag: str) -> Path:
    if value is None:
        raise ValueError(f"--{flag} is required")
    path = Path(value)
    if not path.is_file():
        raise FileNotFoundError(f"--{flag}: {path} does not exist")
    return path


def _require_seed(cfg: RunConfig) -> int:
    if cfg.seed is None:
        raise ValueError("--seed is required; stochastic commands are never "
                         "seeded from the clock")
    return cfg.seed


def _out(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _relevel(model: UncertaintyModel, epsilon: float) -> UncertaintyModel:
    if epsilon == model.epsilon:
        return model
    return UncertaintyModel(model.mean, model.w, model.w_inv, model.sigma_f,
                            model.sigma_b, epsilon,
                            provenance=dict(model.provenance))


def _opt_epsilon(cfg: RunConfig, args, model: UncertaintyModel) -> float:
    """Optimization-time exclusion level: the model's own, unless overridden."""
    return cfg.epsilon if getattr(args, "epsilon", None) is not None \
        else model.epsilon


def _write_csv(path: Path, header: list, rows: list) -> None:
    def cell(v):
        return repr(float(v)) if isinstance(v, float) else str(v)

    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(cell(v) for v in row) + "\n")


def _grid_bill(profiles, weights, prices: PriceSet, dt: float) -> float:
    cons = np.maximum(profiles, 0.0).sum(axis=1)
    inj = np.minimum(profiles, 0.0).sum(axis=1)
    return float(weights @ ((prices.c_cons_eur * cons
                             + prices.c_inj_eur * inj) * dt))


# --- commands -------------------------------------------------------------------

def cmd_ingest(cfg: RunConfig, args) -> int:
    src = _require_file(cfg.frequency_csv, "frequency-csv")
    days = load_frequency_csv(src)
    grid, band = cfg.grid(), cfg.band()
    unfolded, rejected = ingest_days(days, grid, band, fold=False,
                                     max_gap_s=cfg.max_gap_s)
    folded, _ = ingest_days(days, grid, band, cfg.eta_c, cfg.eta_d,
                            fold=True, max_gap_s=cfg.max_gap_s)
    out = _out(cfg)
    save_scenario_set(unfolded, out / "days_unfolded.csv",
                      extra={"source_sha256": artifacts.sha256_file(src)})
    save_scenario_set(folded, out / "days_folded.csv",
                      extra={"source_sha256": artifacts.sha256_file(src)})
    blob = artifacts.artifact_scaffold("ingest_report", cfg.sha256(),
                                       {"frequency_csv": src})
    blob.update({
        "n_days_kept": unfolded.n_days,
        "n_days_rejected": len(rejected),
        "rejected": [{"date": r.date, "first_bad_gap": r.first_bad_gap,
                      "reason": r.reason} for r in rejected],
        "outputs": artifacts.input_stamp({
            "days_unfolded": out / "days_unfolded.csv",
            "days_folded": out / "days_folded.csv"}),
    })
    artifacts.write_json(out / "ingest.json", blob)
    print(f"ingested {unfolded.n_days} day(s), rejected {len(rejected)}"
          f" -> {out / 'days_unfolded.csv'}, {out / 'days_folded.csv'}")
    return EXIT_OK


def cmd_fit(cfg: RunConfig, args) -> int:
    src = _require_file(cfg.scenario_csv, "scenario-csv")
    sset = load_scenario_set(src)
    model = uncertainty.fit(sset.values, cfg.epsilon, provenance={
        "config_sha256": cfg.sha256(),
        "scenario_sha256": artifacts.sha256_file(src),
        "folded": sset.folded,
        "eta_c": sset.eta_c,
        "eta_d": sset.eta_d,
    })
    out = _out(cfg)
    uncertainty.save_model(model, out / "model.json")
    print(f"fitted on {sset.n_days} day(s) at epsilon={cfg.epsilon}"
          f" -> {out / 'model.json'}")
    return EXIT_OK


def cmd_optimize(cfg: RunConfig, args) -> int:
    mode = args.mode
    mpath = _require_file(cfg.model_path, "model")
    model = uncertainty.load_model(mpath)
    model = _relevel(model, _opt_epsilon(cfg, args, model))
    battery, grid = cfg.battery(), cfg.grid()
    t0 = time.perf_counter()
    inputs = {"model": mpath}
    if mode == "fcr":
        sol = solve_fcr(model, battery, grid, fix_r=cfg.fix_r,
                        solver=args.solver)
    else:
        ppath = _require_file(cfg.profile_csv, "profile-csv")
        inputs["profiles"] = ppath
        pset = load_profile_set(ppath)
        sol = solve_combined(model, battery, grid, cfg.prices(),
                             pset.profiles, weights=pset.weights,
                             fix_r=cfg.fix_r, solver=args.solver)
    elapsed = time.perf_counter() - t0
    meta = artifacts.artifact_scaffold(f"optimize_{mode}", cfg.sha256(), inputs)
    meta.update({
        "epsilon": model.epsilon,
        "solver": sol.info.solver,
        "status": sol.info.status,
    })
    if mode == "fcr":
        # the reserve-only program maximizes r itself; there is no money term
        meta["objective_kw"] = sol.objective
        headline = f"objective={sol.objective:.4f} kW"
    else:
        meta.update({
            "objective_eur": sol.objective,
            "sc_cost_eur": sol.sc_cost,
            "fcr_revenue_eur": sol.fcr_revenue,
        })
        headline = f"objective={sol.objective:.4f} EUR"
    out = _out(cfg)
    path = out / f"policy_{mode}.json"
    sol.save(path, meta=meta)
    print(f"optimize {mode}: r={sol.r:.4f} kW {headline}"
          f" -> {path} ({elapsed:.1f} s)")
    return EXIT_OK


def cmd_reduce(cfg: RunConfig, args) -> int:
    src = _require_file(cfg.profile_csv, "profile-csv")
    pset = load_profile_set(src)
    if not (1 <= cfg.target_n <= pset.n_sc):
        raise ValueError(f"target_n must be in [1, {pset.n_sc}], "
                         f"got {cfg.target_n}")
    reduced = reduce_backward(pset, cfg.target_n)
    out = _out(cfg)
    save_profile_set(out / "profiles_reduced.csv", reduced)
    blob = artifacts.artifact_scaffold("reduce_report", cfg.sha256(),
                                       {"profiles": src})
    blob.update({
        "n_in": pset.n_sc,
        "n_out": reduced.n_sc,
        "outputs": artifacts.input_stamp(
            {"profiles_reduced": out / "profiles_reduced.csv"}),
    })
    artifacts.write_json(out / "reduce.json", blob)
    print(f"reduced {pset.n_sc} -> {reduced.n_sc} scenario(s)"
          f" -> {out / 'profiles_reduced.csv'}")
    return EXIT_OK


def cmd_gap(cfg: RunConfig, args) -> int:
    seed = _require_seed(cfg)
    mpath = _require_file(cfg.model_path, "model")
    model = uncertainty.load_model(mpath)
    model = _relevel(model, _opt_epsilon(cfg, args, model))
    battery, grid, prices = cfg.battery(), cfg.grid(), cfg.prices()
    rng = np.random.default_rng(seed)

    def source(n, rng_):
        return synth_profiles(cfg.profile_kind, grid, n,
                              seed=int(rng_.integers(2 ** 32)),
                              noise=cfg.profile_noise).profiles

    t0 = time.perf_counter()
    candidate = solve_combined(model, battery, grid, prices,
                               source(cfg.gap_n_sc, rng), solver=args.solver)
    fcr_part = candidate.fcr_revenue

    def solve_saa(profiles):
        return solve_combined(model, battery, grid, prices, profiles,
                              solver=args.solver).objective

    def evaluate_candidate(profiles):
        costs, _ = evaluate_sc_recourse(profiles, candidate.envelope,
                                        battery, grid, prices)
        return costs - fcr_part

    est = estimate_gap(solve_saa, evaluate_candidate, source,
                       n_u=cfg.gap_n_u, n_l=cfg.gap_n_l, n_sc=cfg.gap_n_sc,
                       alpha=cfg.gap_alpha, rng=rng)
    elapsed = time.perf_counter() - t0
    blob = artifacts.artifact_scaffold("gap_report", cfg.sha256(),
                                       {"model": mpath})
    blob.update(est.to_dict())
    blob.update({
        "seed": seed,
        "candidate_r_kw": candidate.r,
        "candidate_objective_eur": candidate.objective,
        "relative_gap": est.relative(),
    })
    out = _out(cfg)
    artifacts.write_json(out / "gap.json", blob)
    print(f"gap={est.gap:.6f} EUR ({100 * est.relative():.2f}% of upper mean)"
          f" -> {out / 'gap.json'} ({elapsed:.1f} s)")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, args) -> int:
    seed = _require_seed(cfg)
    ppath = _require_file(cfg.policy_path, "policy")
    spath = _require_file(cfg.scenario_csv, "scenario-csv")
    policy, envelope, _meta = load_policy(ppath)
    train = load_scenario_set(spath)
    if train.folded:
        raise ValueError("simulation needs raw (unfolded) deviation days; "
                         "this scenario set is efficiency-folded")
    if train.grid.n_t != policy.grid.n_t:
        raise ValueError("policy and scenario set disagree on n_t")
    battery, grid, prices = cfg.battery(), cfg.grid(), cfg.prices()
    rng = np.random.default_rng(seed)
    sim_model = uncertainty.fit(train.values, epsilon=0.5)
    dfs = resample_frequency(train.values, sim_model, cfg.n_samples,
                             seed=int(rng.integers(2 ** 32)))
    inputs = {"policy": ppath, "scenarios": spath}
    profiles = pset = None
    # a reserve-only policy carries a zero-power envelope: the rule is inert,
    # so no profiles are needed and none are asked for
    sc_active = envelope is not None and bool(
        np.any(envelope.p_max_sc != 0.0) or np.any(envelope.p_min_sc != 0.0))
    if sc_active:
        prof_path = _require_file(cfg.profile_csv, "profile-csv")
        inputs["profiles"] = prof_path
        pset = load_profile_set(prof_path)
        pick = rng.choice(pset.n_sc, size=cfg.n_samples, p=pset.weights)
        profiles = pset.profiles[pick]

    t0 = time.perf_counter()
    result = run_closed_loop(policy, battery, grid, dfs,
                             envelope=envelope if sc_active else None,
                             profiles=profiles)
    report = summarize(result, alpha=cfg.alpha,
                       quantile_levels=tuple(cfg.quantiles))
    if sc_active:
        report.revenue = evaluate_revenue(
            policy.r, envelope, pset.profiles, prices, battery, grid,
            weights=pset.weights).to_dict()
    elapsed = time.perf_counter() - t0

    blob = artifacts.artifact_scaffold("simulation_report", cfg.sha256(),
                                       inputs)
    blob.update(report.to_dict())
    blob["seed"] = seed
    out = _out(cfg)
    # one report per policy artifact, so validating several policies into the
    # same directory never silently overwrites
    report_path = out / f"simulation_{ppath.stem}.json"
    artifacts.write_json(report_path, blob)
    if cfg.trajectories > 0:
        k = min(cfg.trajectories, result.n_samples)
        rows = [(s, t, float(result.energy[s, t + 1]), float(result.p_rc[s, t]),
                 float(result.p_reserve[s, t]), float(result.p_sc[s, t]))
                for s in range(k) for t in range(grid.n_t)]
        _write_csv(out / f"trajectories_{ppath.stem}.csv",
                   ["sample", "step", "energy", "p_rc", "p_reserve", "p_sc"],
                   rows)
    print(f"simulated {cfg.n_samples} day(s): max p_hat="
          f"{report.max_violation_prob_hat:.2e}, "
          f"bound={report.upper_conf_bound:.2e}"
          f" -> {report_path} ({elapsed:.1f} s)")
    return EXIT_OK


def cmd_study(cfg: RunConfig, args) -> int:
    which = args.which
    mpath = _require_file(cfg.model_path, "model")
    base_model = uncertainty.load_model(mpath)
    battery, grid = cfg.battery(), cfg.grid()
    out = _out(cfg)
    inputs = {"model": mpath}
    t0 = time.perf_counter()

    if which == "epsilon":
        rows = []
        for eps in cfg.study_epsilons:
            model = _relevel(base_model, float(eps))
            sol = solve_fcr(model, battery, grid, solver=args.solver)
            rows.append((float(eps), model.omega, sol.r))
        header = ["epsilon", "omega", "r_kw"]
        csv_path = out / "study_epsilon.csv"
    elif which == "crate":
        model = _relevel(base_model, _opt_epsilon(cfg, args, base_model))
        capacity = cfg.e_max - cfg.e_min
        rows = []
        for crate in cfg.study_crates:
            p_lim = float(crate) * capacity
            bat = BatteryConfig(cfg.e_min, cfg.e_max, -p_lim, p_lim,
                                cfg.eta_c, cfg.eta_d, cfg.e_0)
            sol = solve_fcr(model, bat, grid, solver=args.solver)
            rows.append((float(crate), p_lim, sol.r, sol.r / capacity))
        header = ["c_rate", "p_max_kw", "r_kw", "r_per_kwh"]
        csv_path = out / "study_crate.csv"
    else:
        ppath = _require_file(cfg.profile_csv, "profile-csv")
        inputs["profiles"] = ppath
        pset = load_profile_set(ppath)
        model = _relevel(base_model, _opt_epsilon(cfg, args, base_model))
        rows = []
        for c_r in cfg.study_c_r:
            prices = PriceSet(cfg.c_cons, cfg.c_inj, float(c_r))
            sol = solve_combined(model, battery, grid, prices, pset.profiles,
                                 weights=pset.weights, solver=args.solver)
            baseline = _grid_bill(pset.profiles, pset.weights, prices, grid.dt)
            rows.append((float(c_r), sol.r, baseline - sol.sc_cost,
                         sol.fcr_revenue, sol.objective))
        header = ["c_r", "r_kw", "sc_revenue_eur", "fcr_revenue_eur",
                  "objective_eur"]
        csv_path = out / "study_price.csv"

    elapsed = time.perf_counter() - t0
    _write_csv(csv_path, header, rows)
    blob = artifacts.artifact_scaffold(f"study_{which}", cfg.sha256(), inputs)
    blob.update({
        "header": header,
        "rows": [[float(v) for v in row] for row in rows],
        "outputs": artifacts.input_stamp({csv_path.stem: csv_path}),
    })
    artifacts.write_json(out / f"study_{which}.json", blob)
    print(f"study {which}: {len(rows)} point(s) -> {csv_path}"
          f" ({elapsed:.1f} s)")
    return EXIT_OK


# --- argument parsing -----------------------------------------------------------

def _float_list(text: str) -> list:
    return [float(tok) for tok in text.split(",") if tok.strip()]


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("config (JSON file, then flag overrides)")
    g.add_argument("--config", type=Path, default=None,
                   help="JSON file with RunConfig fields")
    g.add_argument("--out-dir", dest="out_dir", default=None)
    g.add_argument("--frequency-csv", dest="frequency_csv", default=None)
    g.add_argument("--scenario-csv", dest="scenario_csv", default=None)
    g.add_argument("--profile-csv", dest="profile_csv", default=None)
    g.add_argument("--model", dest="model_path", default=None)
    g.add_argument("--policy", dest="policy_path", default=None)
    for name in ("n_t", "max_gap_s", "seed", "n_samples", "trajectories",
                 "target_n", "gap_n_u", "gap_n_l", "gap_n_sc"):
        g.add_argument(f"--{name.replace('_', '-')}", dest=name, type=int,
                       default=None)
    for name in ("dt", "e_min", "e_max", "p_min", "p_max", "eta_c", "eta_d",
                 "e_0", "c_cons", "c_inj", "c_r", "epsilon", "f_nom",
                 "df_max", "alpha", "fix_r", "gap_alpha", "profile_noise"):
        g.add_argument(f"--{name.replace('_', '-')}", dest=name, type=float,
                       default=None)
    g.add_argument("--profile-kind", dest="profile_kind", default=None,
                   choices=["household", "pv", "net"])
    g.add_argument("--quantiles", dest="quantiles", type=_float_list,
                   default=None)
    g.add_argument("--epsilons", dest="study_epsilons", type=_float_list,
                   default=None)
    g.add_argument("--crates", dest="study_crates", type=_float_list,
                   default=None)
    g.add_argument("--c-r-grid", dest="study_c_r", type=_float_list,
                   default=None)
    g.add_argument("--solver", default=None,
                   help=f"conic solver (or set {SOLVER_ENV_VAR})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fcrbess",
        description="Battery reserve sizing and self-consumption pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    specs = [
        ("ingest", cmd_ingest, "discretize a 1 Hz frequency CSV into days"),
        ("fit", cmd_fit, "fit the uncertainty model on deviation days"),
        ("reduce", cmd_reduce, "backward-reduce a profile scenario set"),
        ("gap", cmd_gap, "sample-average optimality gap of a candidate"),
        ("simulate", cmd_simulate, "closed-loop validation on resampled days"),
    ]
    for name, handler, doc in specs:
        p = sub.add_parser(name, help=doc)
        _add_config_flags(p)
        p.set_defaults(handler=handler)

    p = sub.add_parser("optimize", help="solve the reserve sizing program")
    p.add_argument("mode", choices=["fcr", "combined"])
    _add_config_flags(p)
    p.set_defaults(handler=cmd_optimize)

    p = sub.add_parser("study", help="parameter sweeps, one CSV per study")
    p.add_argument("which", choices=["epsilon", "crate", "price"])
    _add_config_flags(p)
    p.set_defaults(handler=cmd_study)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = build_config(args)
        return args.handler(cfg, args)
    except (SolverFailure, InfeasibleProblem, DispatchInfeasible) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    raise SystemExit(main())
