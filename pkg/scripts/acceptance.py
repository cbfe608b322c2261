#!/usr/bin/env python3

"""
Desk-scale acceptance runs.

Runs the presets (and a few direct hole runs) and prints one pass/fail row per
criterion. Expect minutes for the oracle and an hour or more for everything.

    python scripts/acceptance.py --output runs/acceptance
    python scripts/acceptance.py --only oracle velocities
    python scripts/acceptance.py --only oracle-bh10
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Any, Callable, NamedTuple

import numpy as np
import pandas as pd
from scipy.special import jv

from dwmelt import ExperimentConfig, compare_records, run_experiment, run_preset

logger = logging.getLogger("acceptance")


class Outcome(NamedTuple):
    check: str
    value: float
    threshold: float
    passed: bool


Check = Callable[[list[tuple[str, str]], int], list[Outcome]]


def below(check: str, value: float, threshold: float) -> Outcome:
    return Outcome(check, value, threshold, bool(value <= threshold))


def _oracle(preset: str, overrides: list[tuple[str, str]], jobs: int) -> list[Outcome]:
    table = run_preset(preset, overrides, jobs).tables["oracle"]
    return [
        below(f"{preset} {case}", float(group.max_deviation.max()), 1e-5)
        for case, group in table.groupby("case", sort=True)
    ]


def oracle(overrides: list[tuple[str, str]], jobs: int) -> list[Outcome]:
    return _oracle("oracle", overrides, jobs)


def oracle_bh10(overrides: list[tuple[str, str]], jobs: int) -> list[Outcome]:
    return _oracle("oracle-bh10", overrides, jobs)


def _with_output(data: dict[str, Any], overrides: list[tuple[str, str]]) -> ExperimentConfig:
    for path, value in overrides:
        if path == "output.root":
            data["output"] = {"root": value}
    return ExperimentConfig.from_dict(data)


def free_hole(overrides: list[tuple[str, str]], jobs: int) -> list[Outcome]:
    # A single hole on a polarized chain spreads as |J_n(2 t time)|**2.
    L, site, horizon = 41, 21, 6.0
    data = {
        "model": "tj",
        "L": L,
        "background": "polarized",
        "defects": [["hole", site]],
        "include_three_site": False,
        "horizon": horizon,
        "observables": {"keys": ["density"], "stride": 10},
        "label": "acceptance-free-hole",
    }
    record = run_experiment(_with_output(data, overrides)).record
    n = np.arange(L) - (site - 1)
    worst = max(
        float(np.max(np.abs((1 - record.at(t, "density")) - jv(n, 2 * t) ** 2)))
        for t in record.times
    )
    return [below("free hole density", worst, 1e-3)]


def hole_density(overrides: list[tuple[str, str]], jobs: int) -> list[Outcome]:
    # Symmetry holds for the full chain; background independence only with hopping alone.
    keys = {"keys": ["density"], "stride": 10}
    centered = {
        "model": "tj",
        "L": 13,
        "background": "polarized",
        "representation": "dense",
        "defects": [["hole", 7]],
        "horizon": 3.0,
        "observables": keys,
        "label": "acceptance-hole-symmetry",
    }
    record = run_experiment(_with_output(centered, overrides)).record
    profiles = [record.at(t, "density") for t in record.times]
    asymmetry = max(float(np.max(np.abs(n - n[::-1]))) for n in profiles)

    hopping = {
        "model": "tj",
        "L": 12,
        "representation": "dense",
        "defects": [["hole", 3]],
        "include_three_site": False,
        "include_exchange": False,
        "horizon": 3.0,
        "observables": keys,
    }
    wall = run_experiment(_with_output({**hopping, "label": "acceptance-hole-wall"}, overrides))
    polarized = run_experiment(
        _with_output(
            {**hopping, "background": "polarized", "label": "acceptance-hole-polarized"},
            overrides,
        )
    )
    gap = compare_records(wall.record, polarized.record, ["density"])["density"]
    return [
        below("hole density symmetry", asymmetry, 1e-6),
        below("hole density background independence", gap, 1e-8),
    ]


def velocities(overrides: list[tuple[str, str]], jobs: int) -> list[Outcome]:
    table = run_preset("front-velocity", overrides, jobs).tables["velocities"]
    limits = {"hole": 0.10, "flip": 0.15}
    return [
        below(f"{row.run} velocity", row.relative_error, limits[row.run])
        for row in table.itertuples()
    ]


def beating(overrides: list[tuple[str, str]], jobs: int) -> list[Outcome]:
    table = run_preset("superposition", overrides, jobs).tables["beating"]
    return [below("beating ratio", float(table.ratio.max()), 0.5)]


def currents(overrides: list[tuple[str, str]], jobs: int) -> list[Outcome]:
    table = run_preset("currents", overrides, jobs).tables["currents"]
    ratio = dict(zip(table.U, table.ratio))
    return [
        below("3-site/2-site at U=15", ratio[15.0], 0.2),
        below("3-site ratio U=60 vs U=15", ratio[60.0] - ratio[15.0], 0.0),
    ]


def model_comparison(overrides: list[tuple[str, str]], jobs: int) -> list[Outcome]:
    summary = run_preset("model-comparison", overrides, jobs).tables["summary"]
    dev = dict(zip(summary.U, summary.max_deviation_sz_center))
    return [
        below("BH vs t-J at U=8", dev[8.0], 0.05),
        below("BH vs t-J shrinks with U", dev[15.0] - dev[8.0], 0.0),
    ]


def two_holes(overrides: list[tuple[str, str]], jobs: int) -> list[Outcome]:
    summary = run_preset("two-holes", overrides, jobs).tables["two_hole_summary"]
    return [below("two holes vs one-hole deviation", float(summary.ratio.max()), 2.0)]


def u_sweep(overrides: list[tuple[str, str]], jobs: int) -> list[Outcome]:
    table = run_preset("u-sweep", overrides, jobs).tables["superposition_by_U"]
    worst = table.groupby("U").sup_deviation.max()
    steps = np.diff(worst.to_numpy())
    return [
        below("superposition deviation at U=60", float(worst[60.0]), 0.02),
        below("superposition deviation grows with U", float(steps.max()), 0.0),
    ]


def convergence(overrides: list[tuple[str, str]], jobs: int) -> list[Outcome]:
    table = run_preset("convergence", overrides, jobs).tables["convergence"]
    fine = table[table.epsilon_fine == 1e-6]
    return [below("epsilon 1e-5 vs 1e-6", float(fine.max_deviation.max()), 1e-4)]


CHECKS: dict[str, Check] = {
    "oracle": oracle,
    "oracle-bh10": oracle_bh10,
    "free-hole": free_hole,
    "hole-density": hole_density,
    "velocities": velocities,
    "beating": beating,
    "currents": currents,
    "model-comparison": model_comparison,
    "two-holes": two_holes,
    "u-sweep": u_sweep,
    "convergence": convergence,
}

# The L=10 Bose-Hubbard oracle needs several GB and hours; run it with --only.
DEFAULT = [name for name in CHECKS if name != "oracle-bh10"]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    parser.add_argument("--only", nargs="+", choices=list(CHECKS), default=DEFAULT)
    parser.add_argument("--output", help="Output root for all runs.")
    parser.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args()
    logging.basicConfig(
        level=logging.INFO, format="%(asctime)s | %(levelname)s | %(name)s | %(message)s"
    )

    overrides = [("output.root", args.output)] if args.output else []
    outcomes: list[Outcome] = []
    for name in args.only:
        logger.info("running %s", name)
        outcomes += CHECKS[name](overrides, args.jobs)

    table = pd.DataFrame(outcomes)
    print(table.to_string(index=False))
    return 0 if table.passed.all() else 1


if __name__ == "__main__":
    sys.exit(main())
