"""Alternating greedy estimation of ``Theta = Z_C V^T``.

``fit`` alternates a per-cluster LASSO update of ``V`` with greedy single-node
label moves that decrease ``-Tr(V' A Z_C)`` for fixed ``V``.
``fit_exact_greedy`` instead rescores each candidate move by refitting ``V``.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import DimensionMismatch, GuardTripped, NonConvergence, TooManyClusters, annotate
from .lasso import LassoOptions, lasso_objective, solve_lasso_columns
from .moments import MomentEstimates, estimate_moments
from .panel import Clustering, Panel, SonicModel, indicator_matrix

logger = logging.getLogger(__name__)

EXACT_GREEDY_MAX_N = 30


@dataclass(frozen=True)
class FitOptions:
    max_outer: int = 100
    moves_per_update: int | None = None  # None: one full sweep, i.e. N moves
    restarts: int = 5
    seed: int = 0
    min_improvement: float = 1e-10
    lasso_opts: LassoOptions = field(default_factory=LassoOptions)
    exact_greedy: bool = False
    psd_project: bool | None = None
    threads: int = 1

    def __post_init__(self):
        if self.max_outer < 1:
            raise ValueError("max_outer must be >= 1")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.moves_per_update is not None and self.moves_per_update < 1:
            raise ValueError("moves_per_update must be >= 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


@dataclass(frozen=True)
class RunResult:
    """One alternating run from a fixed initial clustering."""

    clustering: Clustering
    v: np.ndarray
    risk: float
    history: tuple[float, ...]
    iterations: int
    converged: bool


def as_moments(data: Panel | MomentEstimates, psd: bool | None = None) -> MomentEstimates:
    if isinstance(data, MomentEstimates):
        return data
    if isinstance(data, Panel):
        return estimate_moments(data, psd=psd)
    raise TypeError(f"expected Panel or MomentEstimates, got {type(data).__name__}")


def risk(v, c: Clustering, sigma_hat, a_hat, lam: float) -> float:
    """``1/2 Tr(V' S V) - Tr(V' A Z_C) + lam * |V|_{1,1}``."""
    v = np.asarray(v, dtype=float)
    if v.shape != (c.n, c.k):
        raise DimensionMismatch(f"V must be {c.n}x{c.k}, got {v.shape}")
    z = indicator_matrix(c)
    quad = 0.5 * np.sum(v * (sigma_hat @ v))
    lin = np.sum(v * (a_hat @ z))
    return float(quad - lin + lam * np.abs(v).sum())


def update_v(c: Clustering, sigma_hat, a_hat, lam: float, opts: FitOptions = FitOptions(), warm=None) -> np.ndarray:
    """Column ``j`` minimises ``1/2 v'Sv - v'(A z_j) + lam|v|_1``."""
    cols = a_hat @ indicator_matrix(c)
    try:
        return solve_lasso_columns(sigma_hat, cols, lam, opts.lasso_opts, warm=warm)
    except NonConvergence as exc:
        raise annotate(exc, "V update")


@numba.njit(cache=True, nogil=True)
def _greedy_moves(m, labels, k, max_moves, min_improvement):
    """Apply up to ``max_moves`` best single-label moves in place; returns moves made."""
    n = labels.shape[0]
    moves = 0
    sums = np.zeros(k)
    sizes = np.zeros(k, dtype=np.int64)
    while moves < max_moves:
        sums[:] = 0.0
        sizes[:] = 0
        for i in range(n):
            sums[labels[i]] += m[i, labels[i]]
            sizes[labels[i]] += 1
        trace = 0.0
        for j in range(k):
            trace += sums[j] / np.sqrt(sizes[j])
        current = -trace
        best = current
        best_i = -1
        best_l = -1
        for i in range(n):
            a = labels[i]
            if sizes[a] == 1:
                continue
            base = trace - sums[a] / np.sqrt(sizes[a]) + (sums[a] - m[i, a]) / np.sqrt(sizes[a] - 1)
            for l in range(k):
                if l == a:
                    continue
                cand = -(base - sums[l] / np.sqrt(sizes[l]) + (sums[l] + m[i, l]) / np.sqrt(sizes[l] + 1))
                if cand < best:
                    best = cand
                    best_i = i
                    best_l = l
        if best_i < 0 or not best < current - min_improvement * (1.0 + abs(current)):
            break
        labels[best_i] = best_l
        moves += 1
    return moves


def surrogate(v, c: Clustering, a_hat) -> float:
    """The clustering-dependent part of the risk, ``-Tr(V' A Z_C)``."""
    return float(-np.sum(np.asarray(v) * (a_hat @ indicator_matrix(c))))


def greedy_sweep(v, c: Clustering, a_hat, opts: FitOptions = FitOptions()) -> Clustering:
    """Greedy label moves that strictly decrease the surrogate with ``V`` fixed.

    Each move is the best over all (node, target) pairs that keep every
    cluster nonempty; ties go to the smallest node index, then target label.
    """
    v = np.asarray(v, dtype=float)
    if v.shape != (c.n, c.k) or a_hat.shape != (c.n, c.n):
        raise DimensionMismatch("V, clustering and A are not compatible")
    m = np.ascontiguousarray(a_hat.T @ v)
    labels = np.array(c.labels, dtype=np.int64)
    max_moves = c.n if opts.moves_per_update is None else opts.moves_per_update
    moved = _greedy_moves(m, labels, c.k, max_moves, opts.min_improvement)
    return c if moved == 0 else Clustering(labels, c.k)


def initial_clustering(n: int, k: int, rng: np.random.Generator) -> Clustering:
    """Random labels with every cluster seeded by a distinct node."""
    perm = rng.permutation(n)
    labels = np.empty(n, dtype=np.int64)
    labels[perm[:k]] = np.arange(k)
    labels[perm[k:]] = rng.integers(0, k, size=n - k)
    return Clustering(labels, k)


def restart_seed(seed: int, restart: int) -> int:
    return int(np.random.SeedSequence(int(seed), spawn_key=(int(restart),)).generate_state(1, np.uint64)[0])


def alternating_fit(mom: MomentEstimates, init: Clustering, lam: float, opts: FitOptions = FitOptions()) -> RunResult:
    """Alternate ``update_v`` and ``greedy_sweep`` from ``init``."""
    c = init
    v = None
    history = []
    converged = False
    iterations = 0
    while iterations < opts.max_outer:
        v = update_v(c, mom.sigma_hat, mom.a_hat, lam, opts, warm=v)
        history.append(risk(v, c, mom.sigma_hat, mom.a_hat, lam))
        iterations += 1
        nxt = greedy_sweep(v, c, mom.a_hat, opts)
        if nxt == c:
            converged = True
            break
        c = nxt
    if not converged:
        # the last sweep moved labels; refit so (C, V) is a consistent pair
        logger.warning("alternating fit hit max_outer=%d", opts.max_outer)
        v = update_v(c, mom.sigma_hat, mom.a_hat, lam, opts, warm=v)
        history.append(risk(v, c, mom.sigma_hat, mom.a_hat, lam))
    return RunResult(c, v, history[-1], tuple(history), iterations, converged)


def _check_k(mom: MomentEstimates, k: int, lam: float):
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > mom.n:
        raise TooManyClusters(f"K exceeds N ({k} > {mom.n})")
    if lam < 0:
        raise ValueError("lambda must be nonnegative")


def _map(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _best_of(runs: list[RunResult], seeds, lam: float) -> SonicModel:
    best = min(range(len(runs)), key=lambda r: (runs[r].risk, r))
    run = runs[best]
    return SonicModel(
        clustering=run.clustering,
        v=run.v,
        lam=float(lam),
        risk=run.risk,
        iterations=run.iterations,
        restarts_used=len(runs),
        converged=run.converged,
        best_restart=best,
        restart_seeds=tuple(seeds),
        history=run.history,
    )


def fit(data: Panel | MomentEstimates, k: int, lam: float, opts: FitOptions = FitOptions()) -> SonicModel:
    """Best of ``opts.restarts`` alternating runs (lowest terminal risk)."""
    if opts.exact_greedy:
        return fit_exact_greedy(data, k, lam, opts)
    mom = as_moments(data, opts.psd_project)
    _check_k(mom, k, lam)
    seeds = [restart_seed(opts.seed, r) for r in range(opts.restarts)]
    inits = [initial_clustering(mom.n, k, np.random.default_rng(s)) for s in seeds]
    runs = _map(lambda c0: alternating_fit(mom, c0, lam, opts), inits, opts.threads)
    return _best_of(runs, seeds, lam)


def cluster_objective(mom: MomentEstimates, c: Clustering, lam: float, opts: FitOptions = FitOptions(), warm=None):
    """``F(C) = min_V R(V; C)`` together with the minimising ``V``."""
    v = update_v(c, mom.sigma_hat, mom.a_hat, lam, opts, warm=warm)
    return risk(v, c, mom.sigma_hat, mom.a_hat, lam), v


def exact_greedy_run(mom: MomentEstimates, init: Clustering, lam: float, opts: FitOptions = FitOptions()) -> RunResult:
    """Move to the best single-move neighbour under ``F`` until none improves.

    A move of node ``i`` from cluster ``a`` to ``b`` only changes columns
    ``a`` and ``b`` of the optimal ``V``, so each candidate costs two solves.
    """
    n, k = init.n, init.k
    sigma, a_hat = mom.sigma_hat, mom.a_hat
    labels = np.array(init.labels)
    c = init
    f, v = cluster_objective(mom, c, lam, opts)
    col_obj = np.array([
        lasso_objective(sigma, a_hat @ indicator_matrix(c)[:, j], lam, v[:, j]) for j in range(k)
    ])
    history = [f]
    converged = False
    steps = 0
    max_steps = opts.max_outer * n
    while steps < max_steps:
        sizes = c.sizes()
        best = (f, -1, -1, None, None)
        for i in range(n):
            a = labels[i]
            if sizes[a] == 1:
                continue
            za = (labels == a) & (np.arange(n) != i)
            ca = a_hat @ (za / np.sqrt(za.sum()))
            va = solve_lasso_columns(sigma, ca[:, None], lam, opts.lasso_opts, warm=v[:, [a]])[:, 0]
            fa = lasso_objective(sigma, ca, lam, va)
            for b in range(k):
                if b == a:
                    continue
                zb = (labels == b) | (np.arange(n) == i)
                cb = a_hat @ (zb / np.sqrt(zb.sum()))
                vb = solve_lasso_columns(sigma, cb[:, None], lam, opts.lasso_opts, warm=v[:, [b]])[:, 0]
                fb = lasso_objective(sigma, cb, lam, vb)
                cand = f - col_obj[a] - col_obj[b] + fa + fb
                if cand < best[0]:
                    best = (cand, i, b, (va, fa), (vb, fb))
        cand, i, b, (col_a, col_b) = best[0], best[1], best[2], best[3:]
        if i < 0 or not cand < f - opts.min_improvement * (1.0 + abs(f)):
            converged = True
            break
        a = labels[i]
        labels[i] = b
        c = Clustering(labels, k)
        v = v.copy()
        v[:, a], col_obj[a] = col_a
        v[:, b], col_obj[b] = col_b
        f = float(col_obj.sum())
        history.append(f)
        steps += 1
    f = risk(v, c, sigma, a_hat, lam)
    return RunResult(c, v, f, tuple(history), steps + 1, converged)


def fit_exact_greedy(data: Panel | MomentEstimates, k: int, lam: float, opts: FitOptions = FitOptions()) -> SonicModel:
    """Exact local search on ``F``; restarts are seeded exactly as in :func:`fit`."""
    mom = as_moments(data, opts.psd_project)
    _check_k(mom, k, lam)
    if mom.n > EXACT_GREEDY_MAX_N:
        raise GuardTripped(f"exact greedy is limited to N <= {EXACT_GREEDY_MAX_N}, got N = {mom.n}")
    seeds = [restart_seed(opts.seed, r) for r in range(opts.restarts)]
    inits = [initial_clustering(mom.n, k, np.random.default_rng(s)) for s in seeds]
    runs = _map(lambda c0: exact_greedy_run(mom, c0, lam, opts), inits, opts.threads)
    return _best_of(runs, seeds, lam)
