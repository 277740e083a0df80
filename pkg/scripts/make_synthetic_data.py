"""Generate a synthetic demo dataset: deviation days and net-load profiles.

The historical measurement campaigns behind the case study are not
redistributable, so the repository ships generators tuned to look like them:
autocorrelated within-day frequency deviations with heavy-tailed innovations,
and household/PV net-load profiles with lognormal day-to-day variation.

Writes into --out:
  days_unfolded.csv(.manifest.json)   raw per-step deviation days
  days_folded.csv(.manifest.json)     efficiency-folded twin, for model fitting
  profiles.csv                        net-load scenarios, weight column first
  freq_1hz.csv                        optional 1 Hz recording (--raw-days > 0)
"""

import argparse
import math
from pathlib import Path

from fcrbess.freq import save_scenario_set, synth_frequency_csv, \
    synth_scenario_sets
from fcrbess.model import TimeGrid
from fcrbess.scenarios import save_profile_set, synth_profiles


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("data"))
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--n-days", type=int, default=260)
    ap.add_argument("--n-profiles", type=int, default=400)
    ap.add_argument("--n-t", type=int, default=24)
    ap.add_argument("--dt", type=float, default=1.0)
    ap.add_argument("--eta", type=float, default=math.sqrt(0.9),
                    help="charge and discharge efficiency used for folding")
    ap.add_argument("--raw-days", type=int, default=0,
                    help="also write this many days of 1 Hz samples")
    args = ap.parse_args()

    args.out.mkdir(parents=True, exist_ok=True)
    grid = TimeGrid(args.n_t, args.dt)
    unfolded, folded = synth_scenario_sets(args.n_days, grid, args.seed,
                                           eta_c=args.eta, eta_d=args.eta)
    save_scenario_set(unfolded, args.out / "days_unfolded.csv")
    save_scenario_set(folded, args.out / "days_folded.csv")
    profiles = synth_profiles("net", grid, args.n_profiles, seed=args.seed + 1)
    save_profile_set(args.out / "profiles.csv", profiles)
    print(f"{args.n_days} deviation day(s) and {args.n_profiles} profile(s)"
          f" -> {args.out}")
    if args.raw_days > 0:
        synth_frequency_csv(args.out / "freq_1hz.csv", args.raw_days,
                            seed=args.seed + 2)
        print(f"{args.raw_days} day(s) of 1 Hz samples"
              f" -> {args.out / 'freq_1hz.csv'}")


if __name__ == "__main__":
    main()
