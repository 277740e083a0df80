"""Drive the whole pipeline on synthetic data through the CLI.

Data generation, model fitting, reserve-only and joint optimization, scenario
reduction, gap estimation, closed-loop validation, and the three parameter
studies, in dependency order inside one working directory. Every step goes
through fcrbess.cli.main exactly as a shell user would run it.
"""

import argparse
import json
import math
import sys
from pathlib import Path

from fcrbess.cli import main as fcrbess
from fcrbess.freq import save_scenario_set, synth_scenario_sets
from fcrbess.model import TimeGrid
from fcrbess.scenarios import save_profile_set, synth_profiles


def step(*argv) -> None:
    argv = [str(a) for a in argv]
    print(f"$ fcrbess {' '.join(argv)}")
    rc = fcrbess(argv)
    if rc != 0:
        sys.exit(f"step failed with exit code {rc}")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--work", type=Path, default=Path("demo_run"))
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--quick", action="store_true",
                    help="small sample counts, a few seconds end to end")
    args = ap.parse_args()

    work = args.work
    work.mkdir(parents=True, exist_ok=True)
    n_days, n_prof = (60, 80) if args.quick else (260, 400)
    keep = 20 if args.quick else 100
    n_sim = 2000 if args.quick else 10_000
    eta = math.sqrt(0.9)

    grid = TimeGrid(24, 1.0)
    unfolded, folded = synth_scenario_sets(n_days, grid, args.seed,
                                           eta_c=eta, eta_d=eta)
    save_scenario_set(unfolded, work / "days_unfolded.csv")
    save_scenario_set(folded, work / "days_folded.csv")
    save_profile_set(work / "profiles.csv",
                     synth_profiles("net", grid, n_prof, seed=args.seed + 1))
    config = work / "config.json"
    config.write_text(json.dumps({"n_t": 24, "dt": 1.0, "epsilon": 0.01,
                                  "out_dir": str(work)}))
    print(f"synthetic data and config -> {work}")

    step("fit", "--config", config, "--scenario-csv", work / "days_folded.csv")
    step("optimize", "fcr", "--config", config, "--model", work / "model.json")
    step("simulate", "--config", config, "--policy", work / "policy_fcr.json",
         "--scenario-csv", work / "days_unfolded.csv",
         "--seed", args.seed + 2, "--n-samples", n_sim, "--trajectories", 5)
    step("reduce", "--config", config, "--profile-csv", work / "profiles.csv",
         "--target-n", keep)
    step("optimize", "combined", "--config", config,
         "--model", work / "model.json",
         "--profile-csv", work / "profiles_reduced.csv")
    step("simulate", "--config", config,
         "--policy", work / "policy_combined.json",
         "--scenario-csv", work / "days_unfolded.csv",
         "--profile-csv", work / "profiles_reduced.csv",
         "--seed", args.seed + 3, "--n-samples", n_sim)
    step("gap", "--config", config, "--model", work / "model.json",
         "--seed", args.seed + 4, "--gap-n-u", 400 if args.quick else 2000,
         "--gap-n-l", 3 if args.quick else 10,
         "--gap-n-sc", 20 if args.quick else 100)
    step("study", "epsilon", "--config", config,
         "--model", work / "model.json")
    step("study", "crate", "--config", config, "--model", work / "model.json")
    step("study", "price", "--config", config, "--model", work / "model.json",
         "--profile-csv", work / "profiles_reduced.csv",
         "--c-r-grid", "0.0,5.0,15.0,40.0" if args.quick else
         "0.0,5.0,10.0,15.0,20.0,30.0,40.0")

    print(f"\nall artifacts in {work}: "
          f"{', '.join(sorted(p.name for p in work.glob('*.json')))}")


if __name__ == "__main__":
    main()
