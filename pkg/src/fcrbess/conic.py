"""Thin wrapper over the conic solver layer.

One place decides which installed solver runs, normalizes the zoo of solver
statuses to four words, and can dump any problem in a solver-independent
sparse-triplet form for inspection or replay.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import cvxpy as cp
import numpy as np

DEFAULT_SOLVER = "CLARABEL"
SOLVER_ENV_VAR = "FCRBESS_SOLVER"

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_TROUBLE = "numerical_trouble"

_STATUS_MAP = {
    cp.OPTIMAL: OPTIMAL,
    cp.INFEASIBLE: INFEASIBLE,
    cp.UNBOUNDED: UNBOUNDED,
    cp.OPTIMAL_INACCURATE: NUMERICAL_TROUBLE,
    cp.INFEASIBLE_INACCURATE: NUMERICAL_TROUBLE,
    cp.UNBOUNDED_INACCURATE: NUMERICAL_TROUBLE,
}


class SolverFailure(RuntimeError):
    """Solver crashed or returned a status outside the known set."""


@dataclass
class SolveInfo:
    status: str
    objective: float | None
    solver: str
    solve_time: float | None
    max_violation: float | None  # largest primal residual across constraints


def pick_solver(name: str | None = None) -> str:
    """Resolve the solver name: explicit arg, then env var, then the default."""
    chosen = name or os.environ.get(SOLVER_ENV_VAR) or DEFAULT_SOLVER
    chosen = chosen.upper()
    installed = cp.installed_solvers()
    if chosen not in installed:
        raise SolverFailure(
            f"solver {chosen!r} is not installed (have: {', '.join(installed)})")
    return chosen


def solve_conic(problem: cp.Problem, solver: str | None = None,
                **solver_kwargs) -> SolveInfo:
    """Solve in place and normalize the outcome.

    Returns SolveInfo; raises SolverFailure when the solver errors out or
    reports something other than optimal / infeasible / unbounded (possibly
    inaccurate). Inaccurate statuses come back as "numerical_trouble" with
    whatever iterate the solver left behind.
    """
    chosen = pick_solver(solver)
    try:
        problem.solve(solver=chosen, **solver_kwargs)
    except cp.error.SolverError as exc:
        raise SolverFailure(f"{chosen} failed: {exc}") from exc
    status = _STATUS_MAP.get(problem.status)
    if status is None:
        raise SolverFailure(f"{chosen} returned unknown status {problem.status!r}")
    max_viol = None
    if all(v.value is not None for v in problem.variables()) and problem.constraints:
        max_viol = float(max(np.max(c.violation()) for c in problem.constraints))
    solve_time = getattr(problem.solver_stats, "solve_time", None)
    return SolveInfo(status=status,
                     objective=None if problem.value is None else float(problem.value),
                     solver=chosen,
                     solve_time=None if solve_time is None else float(solve_time),
                     max_violation=max_viol)


def export_problem(problem: cp.Problem, path) -> dict:
    """Write the problem as sparse triplets plus cone sizes.

    Layout follows the standard embedding min c'x s.t. Ax + s = b, with s in
    a product of cones: `zero` equalities first, then `nonneg` inequalities,
    then second-order cones of sizes `soc`. Returns the blob it wrote.
    """
    data, _, _ = problem.get_problem_data(cp.SCS)
    a = data["A"].tocoo()
    dims = data["dims"]
    blob = {
        "kind": "conic_problem",
        "n_var": int(a.shape[1]),
        "n_con": int(a.shape[0]),
        "c": np.asarray(data["c"], dtype=float).tolist(),
        "b": np.asarray(data["b"], dtype=float).tolist(),
        "a": {
            "shape": [int(a.shape[0]), int(a.shape[1])],
            "row": a.row.tolist(),
            "col": a.col.tolist(),
            "data": a.data.tolist(),
        },
        "cones": {
            "zero": int(dims.zero),
            "nonneg": int(dims.nonneg),
            "soc": [int(q) for q in dims.soc],
        },
    }
    Path(path).write_text(json.dumps(blob, sort_keys=True) + "\n")
    return blob
