"""Simulation-study grid: (scenario, K, lambda) cells times replications.

Config files are TOML:

.. code-block:: toml

    seed = 2021
    replications = 20
    n = 100
    s = 1
    coef = 0.5
    trunc_order = 20
    k_values = [5, 10, 15, 20, 25]
    lambdas = [0.02, 0.04, 0.08]          # or: [lambda_grid] min/max/num (log spaced)
    restarts = 5
    output_dir = "results"

    [[scenario]]
    name = "full"
    t = 100
    p = 1.0

Every replication of a scenario uses the same innovations for all ``K`` and
``lambda``; a replication's panel and restart seeds depend only on
``(seed, scenario index, replication index)``.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .bench import align_and_score
from .errors import SonicError
from .estimator import FitOptions, fit, restart_seed
from .moments import estimate_moments
from .selection import lambda_heuristic
from .simulate import SimulationConfig, build_planted_model, simulate

logger = logging.getLogger(__name__)

SCHEMA = """\
seed           int     master seed (default 0)
replications   int     replications per cell, >= 1 (default 20)
n              int     network size N (default 100)
s              int     influencers per cluster (default 1)
coef           float   nonzero value of V* (default 0.5)
trunc_order    int     moving-average truncation (default 20)
k_values       [int]   numbers of clusters (default [5, 10, 15, 20, 25])
lambdas        [float] explicit positive lambda grid, or
[lambda_grid]  table   min, max, num: log-spaced grid (default 0.01, 1.0, 12)
restarts       int     restarts per fit (default 5)
max_outer      int     outer iterations per restart (default 100)
output_dir     str     directory for CSV outputs (default "results")
[[scenario]]   table   name (str), t (int), p (float in (0, 1]); repeatable
                       default: (t=100, p=1.0) and (t=400, p=0.5)
"""

DEFAULT_GRID = dict(min=0.01, max=1.0, num=12)


@dataclass(frozen=True)
class Scenario:
    name: str
    t: int
    p: float


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    replications: int = 20
    n: int = 100
    s: int = 1
    coef: float = 0.5
    trunc_order: int = 20
    k_values: tuple[int, ...] = (5, 10, 15, 20, 25)
    lambdas: tuple[float, ...] = tuple(np.geomspace(DEFAULT_GRID["min"], DEFAULT_GRID["max"], DEFAULT_GRID["num"]).tolist())
    scenarios: tuple[Scenario, ...] = (Scenario("full", 100, 1.0), Scenario("missing", 400, 0.5))
    restarts: int = 5
    max_outer: int = 100
    output_dir: str = "results"

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not self.lambdas or any(not lam > 0 for lam in self.lambdas):
            raise ValueError("lambda values must be positive")
        if not self.scenarios:
            raise ValueError("at least one scenario is required")
        for sc in self.scenarios:
            if sc.t < 2 or not 0 < sc.p <= 1:
                raise ValueError(f"invalid scenario {sc}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = {"seed", "replications", "n", "s", "coef", "trunc_order", "k_values", "lambdas",
                 "lambda_grid", "restarts", "max_outer", "output_dir", "scenario"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        for key in ("seed", "replications", "n", "s", "restarts", "max_outer", "trunc_order"):
            if key in d:
                kw[key] = int(d[key])
        if "coef" in d:
            kw["coef"] = float(d["coef"])
        if "output_dir" in d:
            kw["output_dir"] = str(d["output_dir"])
        if "k_values" in d:
            kw["k_values"] = tuple(int(k) for k in d["k_values"])
        if "lambdas" in d and "lambda_grid" in d:
            raise ValueError("give either lambdas or lambda_grid, not both")
        if "lambdas" in d:
            kw["lambdas"] = tuple(float(x) for x in d["lambdas"])
        elif "lambda_grid" in d:
            g = {**DEFAULT_GRID, **d["lambda_grid"]}
            kw["lambdas"] = tuple(np.geomspace(float(g["min"]), float(g["max"]), int(g["num"])).tolist())
        if "scenario" in d:
            kw["scenarios"] = tuple(
                Scenario(str(sc.get("name", f"s{i}")), int(sc["t"]), float(sc.get("p", 1.0)))
                for i, sc in enumerate(d["scenario"])
            )
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, "rb") as fh:
            return cls.from_dict(tomllib.load(fh))

    def to_dict(self) -> dict:
        return {
            "seed": self.seed, "replications": self.replications, "n": self.n, "s": self.s,
            "coef": self.coef, "trunc_order": self.trunc_order, "k_values": list(self.k_values),
            "lambdas": list(self.lambdas), "restarts": self.restarts, "max_outer": self.max_outer,
            "scenarios": [vars(sc) for sc in self.scenarios],
        }


@dataclass
class Record:
    scenario: str
    t: int
    p: float
    k: int
    lam: float
    rep: int
    rel_error: float = math.nan
    clustering_distance: float = math.nan
    support_exact: bool = False
    risk: float = math.nan
    iterations: int = 0
    converged: bool = False
    heuristic_lambda: float = math.nan
    error: str = ""


REPLICATION_FIELDS = [
    "scenario", "t", "p", "k", "lam", "rep", "rel_error", "clustering_distance",
    "support_exact", "risk", "iterations", "converged", "heuristic_lambda", "error",
]


def _job(cfg: ExperimentConfig, si: int, sc: Scenario, k: int, rep: int) -> list[Record]:
    """All lambdas for one (scenario, K, replication)."""
    scen_seed = restart_seed(cfg.seed, si)
    base = dict(scenario=sc.name, t=sc.t, p=sc.p, k=k, rep=rep)
    try:
        sim_cfg = SimulationConfig(n=cfg.n, k=k, s=cfg.s, coef=cfg.coef, t=sc.t, p=sc.p,
                                   trunc_order=cfg.trunc_order, seed=scen_seed)
        sim = simulate(sim_cfg, build_planted_model(sim_cfg), replication=rep)
        mom = estimate_moments(sim.panel)
        h = lambda_heuristic(mom.sigma_hat, k, mom.t, mom.p_hat)
    except (SonicError, ValueError) as exc:
        return [Record(lam=lam, error=f"{type(exc).__name__}: {exc}", **base) for lam in cfg.lambdas]
    opts = FitOptions(restarts=cfg.restarts, max_outer=cfg.max_outer, seed=restart_seed(scen_seed, 1_000_000 + rep))
    out = []
    for lam in cfg.lambdas:
        rec = Record(lam=lam, heuristic_lambda=h, **base)
        try:
            model = fit(mom, k, lam, opts)
            ev = align_and_score(model, sim.truth)
            rec.rel_error = ev.relative_frobenius
            rec.clustering_distance = ev.clustering_distance
            rec.support_exact = ev.support_exact
            rec.risk = model.risk
            rec.iterations = model.iterations
            rec.converged = model.converged
        except (SonicError, ValueError) as exc:
            rec.error = f"{type(exc).__name__}: {exc}"
        out.append(rec)
    return out


def run_experiment(cfg: ExperimentConfig, threads: int = 1, progress=None) -> list[Record]:
    jobs = [(si, sc, k, rep) for si, sc in enumerate(cfg.scenarios) for k in cfg.k_values
            for rep in range(cfg.replications)]
    records: list[Record] = []
    if threads <= 1:
        for n_done, job in enumerate(jobs, 1):
            records.extend(_job(cfg, *job))
            if progress:
                progress(n_done, len(jobs))
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for n_done, recs in enumerate(pool.map(lambda j: _job(cfg, *j), jobs), 1):
                records.extend(recs)
                if progress:
                    progress(n_done, len(jobs))
    order = {sc.name: i for i, sc in enumerate(cfg.scenarios)}
    records.sort(key=lambda r: (order[r.scenario], r.k, r.lam, r.rep))
    return records


def _mean_se(x) -> tuple[float, float]:
    x = np.asarray([v for v in x if np.isfinite(v)], dtype=float)
    if x.size == 0:
        return math.nan, math.nan
    se = float(x.std(ddof=1) / np.sqrt(x.size)) if x.size > 1 else math.nan
    return float(x.mean()), se


def summarize(cfg: ExperimentConfig, records: list[Record]) -> dict[str, list[dict]]:
    """Per-figure tables keyed by output file stem."""
    tables = {"relative_error_by_lambda": [], "best_lambda_error": [], "clustering_error": [], "optimal_lambda": []}
    by_cell: dict[tuple, list[Record]] = {}
    for r in records:
        by_cell.setdefault((r.scenario, r.k, r.lam), []).append(r)
    for sc in cfg.scenarios:
        for k in cfg.k_values:
            means = []
            complete = []
            for lam in cfg.lambdas:
                recs = by_cell.get((sc.name, k, lam), [])
                m, se = _mean_se([r.rel_error for r in recs])
                means.append(m)
                complete.append(bool(recs) and all(np.isfinite(r.rel_error) for r in recs))
                tables["relative_error_by_lambda"].append(dict(
                    scenario=sc.name, t=sc.t, p=sc.p, k=k, lam=lam, mean_rel_error=m, stderr=se,
                    n_ok=sum(np.isfinite(r.rel_error) for r in recs),
                    errors="; ".join(sorted({r.error for r in recs if r.error})),
                ))
            # a mean over the surviving replications only would be biased
            finite = [i for i, ok in enumerate(complete) if ok]
            heuristic = math.sqrt(math.log(cfg.n) / (sc.t * sc.p**2))
            if not finite:
                continue
            best = min(finite, key=lambda i: (means[i], i))
            best_lam = cfg.lambdas[best]
            recs = by_cell[(sc.name, k, best_lam)]
            m, se = _mean_se([r.rel_error for r in recs])
            tables["best_lambda_error"].append(dict(scenario=sc.name, t=sc.t, p=sc.p, k=k, best_lam=best_lam,
                                                    mean_rel_error=m, stderr=se))
            m, se = _mean_se([r.clustering_distance for r in recs])
            tables["clustering_error"].append(dict(scenario=sc.name, t=sc.t, p=sc.p, k=k, best_lam=best_lam,
                                                   mean_clustering_error=m, stderr=se))
            data_h, _ = _mean_se([r.heuristic_lambda for r in recs])
            tables["optimal_lambda"].append(dict(scenario=sc.name, t=sc.t, p=sc.p, k=k, argmin_lam=best_lam,
                                                 heuristic_lam=heuristic, mean_data_heuristic_lam=data_h))
    return tables


def _write_csv(path: Path, rows: list[dict], fields: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def write_outputs(cfg: ExperimentConfig, records: list[Record], out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    path = out_dir / "replications.csv"
    _write_csv(path, [vars(r) for r in records], REPLICATION_FIELDS)
    paths.append(path)
    for stem, rows in summarize(cfg, records).items():
        path = out_dir / f"{stem}.csv"
        fields = list(rows[0]) if rows else ["scenario", "k"]
        _write_csv(path, rows, fields)
        paths.append(path)
    return paths


def read_replications(path) -> list[Record]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(Record(
                scenario=row["scenario"], t=int(row["t"]), p=float(row["p"]), k=int(row["k"]),
                lam=float(row["lam"]), rep=int(row["rep"]), rel_error=float(row["rel_error"]),
                clustering_distance=float(row["clustering_distance"]),
                support_exact=row["support_exact"] == "True", risk=float(row["risk"]),
                iterations=int(row["iterations"]), converged=row["converged"] == "True",
                heuristic_lambda=float(row["heuristic_lambda"]), error=row["error"],
            ))
    return out
