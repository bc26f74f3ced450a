"""Numbered acceptance criteria.

Each test prints one ``[PASS]``/``[FAIL]`` line (collected again in the
pytest terminal summary).  Run on its own with::

    pytest tests/test_acceptance.py -v

The simulation-study sweep behind criteria 5 and 6 runs once per session
(about 8 minutes on a single core).
"""

import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from oracles import distance_by_permutation, lasso_sign_enumeration, moments_brute_force
from sonic.bench import clustering_distance
from sonic.cli import benchmark_rows
from sonic.estimator import FitOptions, alternating_fit, initial_clustering, restart_seed
from sonic.experiment import ExperimentConfig, run_experiment, summarize
from sonic.lasso import kkt_residual, lasso_objective, solve_lasso_quadratic
from sonic.moments import estimate_moments
from sonic.panel import Clustering, Panel
from sonic.selection import lambda_heuristic, stability_analysis
from sonic.simulate import SimulationConfig, simulate

pytestmark = pytest.mark.acceptance


def report(criterion: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def test_criterion_1_moment_oracle():
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        n, t = int(rng.integers(1, 9)), int(rng.integers(2, 13))
        y = rng.standard_normal((t, n))
        mask = rng.random((t, n)) < rng.uniform(0.3, 1.0)
        mask[rng.integers(0, t, n), np.arange(n)] = True  # every node seen at least once
        mom = estimate_moments(Panel.from_array(y, mask), psd=False)
        _, _, _, s, a = moments_brute_force(y, mask)
        worst = max(worst, np.abs(mom.sigma_hat - s).max(), np.abs(mom.a_hat - a).max())
    elapsed = time.perf_counter() - start
    report("1", worst <= 1e-12 and elapsed < 5, f"max abs deviation {worst:.2e} (<= 1e-12), {elapsed:.2f}s (< 5s)")


def test_criterion_2_lasso_oracle():
    rng = np.random.default_rng(202)
    start = time.perf_counter()
    gap = kkt = 0.0
    for _ in range(50):
        n = int(rng.integers(1, 9))
        b = rng.standard_normal((n + int(rng.integers(1, 4)), n))
        g = b.T @ b / len(b)
        c = rng.standard_normal(n)
        lam = float(rng.uniform(0.0, 1.0))
        _, f_star = lasso_sign_enumeration(g, c, lam)
        v = solve_lasso_quadratic(g, c, lam)
        gap = max(gap, abs(lasso_objective(g, c, lam, v) - f_star))
        kkt = max(kkt, kkt_residual(g, c, lam, v))
    elapsed = time.perf_counter() - start
    report("2", gap <= 1e-7 and kkt <= 1e-6 and elapsed < 30,
           f"objective gap {gap:.2e} (<= 1e-7), KKT {kkt:.2e} (<= 1e-6), {elapsed:.2f}s (< 30s)")


def test_criterion_3_clustering_distance():
    rng = np.random.default_rng(303)
    start = time.perf_counter()
    mismatches = asym = iff = 0
    for _ in range(200):
        k = int(rng.integers(1, 6))
        n = int(rng.integers(k, 16))

        def draw():
            return Clustering(rng.permutation(np.concatenate([np.arange(k), rng.integers(0, k, n - k)])), k)

        a = draw()
        b = a.relabel(rng.permutation(k)) if rng.random() < 0.25 else draw()
        d = clustering_distance(a, b)
        mismatches += d != distance_by_permutation(a.labels, b.labels, k)
        asym += d != clustering_distance(b, a)
        equivalent = set(a.to_sets()) == set(b.to_sets())
        iff += (d == 0) != equivalent
    elapsed = time.perf_counter() - start
    ok = mismatches == asym == iff == 0 and elapsed < 5
    report("3", ok, f"{mismatches} oracle mismatches, {asym} asymmetric, {iff} zero-iff violations, {elapsed:.2f}s (< 5s)")


def test_criterion_4_monotonicity():
    start = time.perf_counter()
    increases = unterminated = 0
    opts = FitOptions()
    for seed in range(100):
        sim = simulate(SimulationConfig(n=40, k=4, t=200, seed=seed))
        mom = estimate_moments(sim.panel)
        lam = lambda_heuristic(mom.sigma_hat, 4, mom.t, mom.p_hat)
        init = initial_clustering(40, 4, np.random.default_rng(restart_seed(seed, 0)))
        run = alternating_fit(mom, init, lam, opts)
        increases += int(np.any(np.diff(run.history) > 0))
        unterminated += not (run.converged and run.iterations < opts.max_outer)
    elapsed = time.perf_counter() - start
    report("4", increases == 0 and unterminated == 0 and elapsed < 120,
           f"{increases} runs with a risk increase, {unterminated} hit max_outer, {elapsed:.1f}s (< 120s)")


@pytest.fixture(scope="module")
def sweep():
    cfg = ExperimentConfig()
    start = time.perf_counter()
    records = run_experiment(cfg, threads=os.cpu_count() or 1)
    return cfg, records, summarize(cfg, records), time.perf_counter() - start


def _by_k(rows, scenario, field):
    return {row["k"]: row[field] for row in rows if row["scenario"] == scenario}


def test_criterion_5a_error_trend(sweep):
    cfg, _, tables, elapsed = sweep
    err = _by_k(tables["best_lambda_error"], "full", "mean_rel_error")
    ok = err[25] < err[5] and elapsed < 1800
    curve = ", ".join(f"K={k}: {err[k]:.3f}" for k in sorted(err))
    report("5a", ok, f"best-lambda relative error {curve}; need K=25 < K=5; sweep {elapsed:.0f}s (< 1800s)")


def test_criterion_5b_clustering_error(sweep):
    _, _, tables, _ = sweep
    d = _by_k(tables["clustering_error"], "full", "mean_clustering_error")
    ok = d[25] <= 5 and d[5] > 20
    curve = ", ".join(f"K={k}: {d[k]:.1f}" for k in sorted(d))
    report("5b", ok, f"mean clustering error {curve}; need K=25 <= 5 and K=5 > 20")


def test_criterion_5c_optimal_lambda(sweep):
    cfg, records, _, _ = sweep
    sc = next(s for s in cfg.scenarios if s.name == "full")
    target = math.sqrt(math.log(cfg.n) / (sc.t * sc.p**2))
    best: dict[tuple[int, int], tuple[float, float]] = {}
    for r in records:
        if r.scenario != "full" or r.k < 15 or not np.isfinite(r.rel_error):
            continue
        key = (r.k, r.rep)
        if key not in best or (r.rel_error, r.lam) < best[key]:
            best[key] = (r.rel_error, r.lam)
    hits = {k: 0 for k in cfg.k_values if k >= 15}
    for (k, _), (_, lam) in best.items():
        hits[k] += target / 2 <= lam <= 2 * target
    frac = sum(hits.values()) / len(best)
    per_k = ", ".join(f"K={k}: {hits[k]}/{cfg.replications}" for k in sorted(hits))
    report("5c", frac >= 0.7, f"per-rep grid argmin within [{target / 2:.4f}, {2 * target:.4f}] in {frac:.0%} of "
           f"{len(best)} (K, rep) pairs ({per_k}); need >= 70%")


def test_criterion_6_missing_data_equivalence(sweep):
    _, _, tables, _ = sweep
    full = _by_k(tables["best_lambda_error"], "full", "mean_rel_error")
    miss = _by_k(tables["best_lambda_error"], "missing", "mean_rel_error")
    rel = {k: abs(miss[k] - full[k]) / full[k] for k in full}
    detail = ", ".join(f"K={k}: {full[k]:.3f} vs {miss[k]:.3f}" for k in sorted(full))
    report("6", max(rel.values()) <= 0.2, f"best-lambda error (T=100,p=1) vs (T=400,p=0.5) {detail}; "
           f"max relative gap {max(rel.values()):.1%} (<= 20%)")


def test_criterion_7_stability():
    start = time.perf_counter()
    opts = FitOptions(seed=0)
    sim2 = simulate(SimulationConfig(n=100, k=2, t=2000, seed=0))
    rep2 = stability_analysis(sim2.panel, 2, 6, "heuristic", opts)
    d2 = rep2.distances[2]
    sim5 = simulate(SimulationConfig(n=100, k=5, t=1000, seed=0))
    rep5 = stability_analysis(sim5.panel, 2, 6, "heuristic", opts)
    elapsed = time.perf_counter() - start
    n = 100
    ok_a = max(d2) <= 4
    ok_b = max(rep5.distances[5]) <= 0.1 * n and max(rep5.distances[2]) > 0.2 * n
    report("7", ok_a and ok_b and elapsed < 600,
           f"planted K=2, T=2000: K=2 distances {d2} (all <= 4); planted K=5, T=1000: K=5 distances "
           f"{rep5.distances[5]} (<= {0.1 * n:g}), K=2 distances {rep5.distances[2]} (max > {0.2 * n:g}); "
           f"{elapsed:.0f}s (< 600s)")


def test_criterion_8_benchmark():
    wins = 0
    for seed in range(10):
        sim = simulate(SimulationConfig(n=50, k=5, t=500, seed=seed))
        rows, _ = benchmark_rows(sim.panel, 5, "auto", 0.7, FitOptions(seed=seed))
        err = {r["method"]: r["prediction_error"] for r in rows}
        wins += err["SONIC"] < err["Theta=0"]
    sim = simulate(SimulationConfig(n=100, k=25, t=60, seed=0))
    rows, _ = benchmark_rows(sim.panel, 25, "auto", 0.7, FitOptions(seed=0))
    err = {r["method"]: r for r in rows}
    sonic, var = err["SONIC"]["prediction_error"], err["VAR"]
    if var["prediction_error"] is None:
        blowup, what = True, f"SingularGram ({var['error']})"
    else:
        blowup = var["prediction_error"] >= 10 * sonic
        what = f"dense VAR {var['prediction_error']:.3g} vs SONIC {sonic:.3g} (ratio {var['prediction_error'] / sonic:.3g})"
    report("8", wins == 10 and blowup,
           f"SONIC beats Theta=0 in {wins}/10 seeds (N=50, K=5, T=500); N=100, T=60: {what}; "
           f"Gram condition {var['gram_condition']:.3g}")


def _cli(args, threads, cwd):
    env = {**os.environ, "SONIC_THREADS": str(threads)}
    res = subprocess.run([sys.executable, "-m", "sonic.cli", *args], cwd=cwd, env=env, capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    return res


def test_criterion_9_determinism(tmp_path):
    config = tmp_path / "exp.toml"
    config.write_text("seed = 5\nreplications = 2\nn = 20\nk_values = [2, 4]\nlambdas = [0.05, 0.2]\n"
                      "restarts = 3\n[[scenario]]\nname = \"full\"\nt = 60\np = 1.0\n"
                      "[[scenario]]\nname = \"missing\"\nt = 120\np = 0.7\n")
    commands = {
        "simulate": lambda d: ["simulate", "--n", "30", "--k", "5", "--t", "150", "--p", "0.8", "--seed", "3",
                               "--out", f"{d}/panel.csv", "--truth-out", f"{d}/truth.json"],
        "estimate": lambda d: ["estimate", "--input", f"{d}/panel.csv", "--k", "5", "--restarts", "8",
                               "--seed", "2", "--out", f"{d}/model.json"],
        "eval": lambda d: ["eval", "--model", f"{d}/model.json", "--truth", f"{d}/truth.json", "--out", f"{d}/eval.json"],
        "stability": lambda d: ["stability", "--input", f"{d}/panel.csv", "--k-min", "2", "--k-max", "4",
                                "--restarts", "2", "--seed", "1", "--out", f"{d}/stability.csv"],
        "benchmark": lambda d: ["benchmark", "--input", f"{d}/panel.csv", "--k", "5", "--seed", "4",
                                "--out", f"{d}/bench.json"],
        "experiment": lambda d: ["experiment", str(config), "--out", f"{d}/exp"],
    }
    runs = {}
    for label, threads in (("1a", 1), ("1b", 1), ("8", 8)):
        d = tmp_path / label
        d.mkdir()
        for cmd in commands.values():
            _cli(cmd(d), threads, tmp_path)
        runs[label] = {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}
    same = runs["1a"] == runs["1b"] == runs["8"]
    report("9", same and len(runs["8"]) >= 10,
           f"{len(runs['8'])} output files from {len(commands)} commands byte-identical across repeat and 1/8 threads"
           if same else "outputs differ between runs")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
