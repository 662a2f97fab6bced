"""Robustness sweep over random-parameter scopes and seeds.

Each (scope, seed) pair is an independent prequential run, so runs fan out
over worker processes; results are collected in submission order, which
keeps the output independent of scheduling.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .evaluation import prequential
from .learner import Learner, LearnerConfig
from .streams import StreamSpec, open_stream

DEFAULT_SCOPES = ((0.0, 0.1), (0.0, 0.5), (0.0, 0.8), (0.0, 5.0))
DEFAULT_SEEDS = (0, 1, 2, 3, 4)

RUN_FIELDS = ("scope", "seed", "rmse", "ndei", "clouds", "runtime", "admitted", "faults", "unstable")
TABLE_FIELDS = ("scope", "runs", "rmse_mean", "rmse_std", "clouds_mean", "clouds_std", "runtime_mean",
                "admitted_mean", "unstable_runs", "status")


@dataclass(frozen=True)
class SweepRun:
    scope: tuple
    seed: int
    config: LearnerConfig
    stream: StreamSpec


def run_one(job: SweepRun):
    learner = Learner(job.config, seed=job.seed)
    summary = prequential(learner, open_stream(job.stream), keep_records=False).summary
    out = {
        "scope": list(job.scope),
        "seed": job.seed,
        "rmse": summary["rmse"],
        "ndei": summary["ndei"],
        "clouds": summary["final_clouds"],
        "runtime": summary["wall_time"],
        "admitted": summary["admitted_fraction"],
        "faults": summary["faults"],
        "unstable": summary["unstable"],
    }
    return {k: out[k] for k in RUN_FIELDS}


def _stats(values):
    v = np.asarray(values, dtype=float)
    return float(v.mean()), float(v.std())


def tabulate(runs):
    """One row per scope: mean and std over seeds, with the unstable count.

    A scope is ``unstable`` when any of its runs diverged; its RMSE
    statistics then cover the stable runs only (NaN when there are none).
    """
    rows = []
    for scope in dict.fromkeys(tuple(r["scope"]) for r in runs):
        group = [r for r in runs if tuple(r["scope"]) == scope]
        stable = [r for r in group if not r["unstable"]]
        rmse = _stats([r["rmse"] for r in stable]) if stable else (math.nan, math.nan)
        clouds = _stats([r["clouds"] for r in group])
        row = {
            "scope": list(scope),
            "runs": len(group),
            "rmse_mean": rmse[0],
            "rmse_std": rmse[1],
            "clouds_mean": clouds[0],
            "clouds_std": clouds[1],
            "runtime_mean": _stats([r["runtime"] for r in group])[0],
            "admitted_mean": _stats([r["admitted"] for r in group])[0],
            "unstable_runs": len(group) - len(stable),
            "status": "unstable" if len(stable) < len(group) else "stable",
        }
        rows.append({k: row[k] for k in TABLE_FIELDS})
    return rows


def sweep(stream: StreamSpec, base: LearnerConfig | None = None, scopes=DEFAULT_SCOPES,
          seeds=DEFAULT_SEEDS, workers=1):
    """Run every scope x seed pair; returns ``(runs, table)``."""
    base = base or LearnerConfig()
    jobs = []
    for low, high in scopes:
        config = replace(base, scope_low=float(low), scope_high=float(high)).validate()
        for seed in seeds:
            jobs.append(SweepRun((float(low), float(high)), int(seed), config, stream))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            runs = list(pool.map(run_one, jobs))
    else:
        runs = [run_one(job) for job in jobs]
    return runs, tabulate(runs)


def format_table(rows):
    """Plain-text table: scope, RMSE mean +- std, clouds, runtime, admitted fraction."""
    lines = [f"{'scope':<14}{'RMSE':>24}{'clouds':>16}{'runtime[s]':>12}{'admitted':>10}  status"]
    for r in rows:
        scope = f"[{r['scope'][0]:g},{r['scope'][1]:g}]"
        rmse = "unstable" if r["status"] == "unstable" and r["unstable_runs"] == r["runs"] else \
            f"{r['rmse_mean']:.4g} +- {r['rmse_std']:.2g}"
        clouds = f"{r['clouds_mean']:.1f} +- {r['clouds_std']:.1f}"
        lines.append(f"{scope:<14}{rmse:>24}{clouds:>16}{r['runtime_mean']:>12.3f}"
                     f"{r['admitted_mean']:>10.3f}  {r['status']}")
    return "\n".join(lines)

