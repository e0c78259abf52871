"""Run the optimizer on scenario files and write traces, results and comparisons."""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import SolverConfig
from .rsma import NetworkState, RateBreakdown
from .scenario import Scenario, load_scenario, reseeded
from .solver import SCHEMES, TRACE_COLUMNS, SolverError, run_bcd, true_rates

log = logging.getLogger(__name__)

DEFAULT_SEEDS = (1, 2, 3, 4, 5)
COMPARISON_COLUMNS = ["n_users", "seed", "scheme", "min_rate", "status"]


@dataclass
class RunResult:
    scheme: str
    scenario: Scenario
    state: NetworkState
    breakdown: RateBreakdown
    trace: list
    config: SolverConfig
    wall_ms: float
    initial_state: NetworkState = None
    assumed_breakdown: RateBreakdown = None
    los_constraints_ok: bool = True

    @property
    def min_rate(self) -> float:
        return self.breakdown.min_rate

    def to_json(self) -> dict:
        st = self.state
        out = {
            "scheme": self.scheme,
            "scenario": self.scenario.name,
            "seed": self.scenario.seed,
            "config": self.config.to_json(),
            "positions": st.positions.tolist(),
            "powers": {"common": st.power.common.tolist(), "private": st.power.private.tolist()},
            "association": st.assoc.values.astype(int).tolist(),
            "rates": {
                "common": self.breakdown.per_user_common.tolist(),
                "private": self.breakdown.per_user_private.tolist(),
                "total": self.breakdown.per_user_total.tolist(),
            },
            "minRate": float(self.breakdown.min_rate),
            "initialMinRate": float(self.trace[0].min_rate),
            "losConstraintsOk": bool(self.los_constraints_ok),
        }
        if self.assumed_breakdown is not None:
            # rates the no-geometry optimizer believed it achieved
            out["assumedMinRate"] = float(self.assumed_breakdown.min_rate)
        return out


def _as_scenario(scenario) -> Scenario:
    return scenario if isinstance(scenario, Scenario) else load_scenario(scenario)


def apply_overrides(sc: Scenario, overrides: dict | None) -> SolverConfig:
    """Solver config of ``sc`` with camelCase ``overrides`` applied (e.g. ``{"tMax": 5}``)."""
    data = sc.solver.to_json()
    for k, v in (overrides or {}).items():
        if k not in data:
            raise KeyError(f"unknown solver override {k!r}")
        data[k] = v
    return SolverConfig.from_json(data)


def write_trace(trace, path, timing: bool = False):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for row in trace:
            w.writerow(row.row(timing))


def read_trace(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def write_json(data, path):
    with open(path, "w") as f:
        json.dump(data, f, indent=2, sort_keys=False)
        f.write("\n")


def run_experiment(
    scenario,
    scheme: str = "rsma",
    overrides: dict | None = None,
    out_dir=None,
    seed: int | None = None,
    timing: bool = False,
    figures: bool = False,
) -> RunResult:
    """Optimize one scenario with one scheme; write ``trace.csv`` and ``result.json`` to ``out_dir``.

    ``timing`` fills the ``wall_ms`` column; it is off by default so reruns are
    byte-identical.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    sc = _as_scenario(scenario)
    if seed is not None:
        sc = reseeded(sc, seed)
    cfg = apply_overrides(sc, overrides)
    sc = replace(sc, solver=cfg)

    tic = time.perf_counter()
    res = run_bcd(sc, cfg, scheme)
    wall = (time.perf_counter() - tic) * 1e3
    # report what the true model says about the final state
    br, _ = true_rates(sc, res.state, sc.blockages(), common=scheme != "noma")

    result = RunResult(
        scheme=scheme,
        scenario=sc,
        state=res.state,
        breakdown=br,
        trace=res.trace,
        config=cfg,
        wall_ms=wall,
        initial_state=res.initial_state,
        assumed_breakdown=res.assumed_breakdown,
        los_constraints_ok=res.los_constraints_ok,
    )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_trace(res.trace, out / "trace.csv", timing)
        write_json(result.to_json(), out / "result.json")
        if figures:
            from . import plotting

            plotting.plot_trace(res.trace, out / "trace.png")
            plotting.plot_layout(sc, res.state, out / "layout.png", initial=res.initial_state)
    log.info("%s on %s: min rate %.4f (%.0f ms)", scheme, sc.name, br.min_rate, wall)
    return result


@dataclass
class ComparisonCell:
    n_users: int
    seed: int
    scheme: str
    min_rate: float = float("nan")
    status: str = "ok"

    def row(self) -> list:
        rate = "" if self.status != "ok" else repr(float(self.min_rate))
        return [self.n_users, self.seed, self.scheme, rate, self.status]


@dataclass
class ComparisonReport:
    cells: list = field(default_factory=list)

    def table(self) -> dict:
        """``{(n_users, seed): {scheme: min_rate}}`` over successful cells."""
        out = {}
        for c in self.cells:
            if c.status == "ok":
                out.setdefault((c.n_users, c.seed), {})[c.scheme] = c.min_rate
        return out

    def failed(self) -> list:
        return [c for c in self.cells if c.status != "ok"]

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(COMPARISON_COLUMNS)
            for c in self.cells:
                w.writerow(c.row())


def _run_cell(args):
    sc, seed, scheme, overrides, out_dir = args
    cell = ComparisonCell(sc.n_users, seed, scheme)
    try:
        res = run_experiment(sc, scheme, overrides, out_dir, seed=seed)
        cell.min_rate = res.min_rate
    except (SolverError, ValueError, RuntimeError) as exc:
        cell.status = f"failed: {exc}".replace("\n", " ")
        log.warning("cell n=%d seed=%d %s failed: %s", sc.n_users, seed, scheme, exc)
    return cell


def compare_baselines(
    scenarios,
    seeds=DEFAULT_SEEDS,
    out_dir=None,
    schemes=SCHEMES,
    overrides: dict | None = None,
    workers: int = 1,
    figures: bool = False,
) -> ComparisonReport:
    """Every scheme on every (scenario, seed); each run gets its own directory.

    ``scenarios`` is one scenario (object or path) or a list of them, typically
    the same city at different user counts.  A failed run is recorded in its
    cell instead of aborting the table.
    """
    if isinstance(scenarios, (str, os.PathLike, Scenario)):
        scenarios = [scenarios]
    scs = [_as_scenario(s) for s in scenarios]
    jobs = []
    for sc in scs:
        for seed in seeds:
            for scheme in schemes:
                d = None
                if out_dir is not None:
                    d = Path(out_dir) / f"users{sc.n_users}" / f"seed{seed}" / scheme
                jobs.append((sc, int(seed), scheme, overrides, d))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            cells = list(ex.map(_run_cell, jobs))
    else:
        cells = [_run_cell(j) for j in jobs]
    report = ComparisonReport(cells)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        report.write_csv(Path(out_dir) / "comparison.csv")
        if figures:
            from . import plotting

            plotting.plot_comparison(report, Path(out_dir) / "comparison.png")
    return report


def scheme_wins(report: ComparisonReport, proposed: str = "rsma") -> dict:
    """Per rival scheme: number of (n_users, seed) cells where ``proposed`` is at least as good."""
    wins = {}
    for rates in report.table().values():
        if proposed not in rates:
            continue
        for s, r in rates.items():
            if s != proposed:
                wins[s] = wins.get(s, 0) + int(rates[proposed] >= r)
    return wins


def summarize(report: ComparisonReport) -> str:
    rows = []
    for (n, seed), rates in sorted(report.table().items()):
        cols = " ".join(f"{s}={rates[s]:.4f}" for s in SCHEMES if s in rates)
        rows.append(f"users={n} seed={seed} {cols}")
    for c in report.failed():
        rows.append(f"users={c.n_users} seed={c.seed} {c.scheme} {c.status}")
    return "\n".join(rows)


def mean_rates(report: ComparisonReport) -> dict:
    """Mean min-rate per (n_users, scheme) over seeds."""
    acc = {}
    for c in report.cells:
        if c.status == "ok":
            acc.setdefault((c.n_users, c.scheme), []).append(c.min_rate)
    return {k: float(np.mean(v)) for k, v in acc.items()}
