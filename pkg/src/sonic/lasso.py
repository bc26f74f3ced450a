"""Cyclic coordinate descent for ``min_v 1/2 v'Gv - c'v + lam*|v|_1``.

The inner loops are compiled with numba (``nogil``), so independent solves
can share a thread pool.  The solver keeps the residual ``r = c - G v`` up to
date, which makes a sweep over mostly-zero coordinates cost ``O(N)`` plus
``O(N)`` per coordinate that actually moves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .errors import DegenerateDiagonal, DimensionMismatch, NonConvergence

DIAG_FLOOR = 1e-12
REFRESH_EVERY = 64


@dataclass(frozen=True)
class LassoOptions:
    tol: float = 1e-8
    max_sweeps: int = 10000
    warm_start: np.ndarray | None = None

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be >= 1")


@dataclass(frozen=True)
class LassoResult:
    v: np.ndarray
    sweeps: int
    converged: bool
    kkt: float
    objectives: np.ndarray | None = None


@numba.njit(cache=True, nogil=True)
def _soft(x, lam):
    if x > lam:
        return x - lam
    if x < -lam:
        return x + lam
    return 0.0


@numba.njit(cache=True, nogil=True)
def _refresh(g, c, v, r):
    n = c.shape[0]
    for i in range(n):
        acc = c[i]
        for j in range(n):
            if v[j] != 0.0:
                acc -= g[i, j] * v[j]
        r[i] = acc


@numba.njit(cache=True, nogil=True)
def _kkt_from_residual(r, v, lam, frozen):
    worst = 0.0
    for i in range(v.shape[0]):
        if frozen[i]:
            continue
        grad = -r[i]
        if v[i] > 0.0:
            e = abs(grad + lam)
        elif v[i] < 0.0:
            e = abs(grad - lam)
        else:
            e = abs(grad) - lam
            if e < 0.0:
                e = 0.0
        if e > worst:
            worst = e
    return worst


@numba.njit(cache=True, nogil=True)
def _objective(g, c, lam, v):
    n = c.shape[0]
    quad = 0.0
    for i in range(n):
        if v[i] == 0.0:
            continue
        row = 0.0
        for j in range(n):
            row += g[i, j] * v[j]
        quad += v[i] * row
    lin = 0.0
    l1 = 0.0
    for i in range(n):
        lin += c[i] * v[i]
        l1 += abs(v[i])
    return 0.5 * quad - lin + lam * l1


@numba.njit(cache=True, nogil=True)
def _cd(g, c, lam, v, frozen, tol, kkt_tol, max_sweeps, record):
    """Run sweeps in place on ``v``; returns (sweeps, converged, kkt, objectives)."""
    n = c.shape[0]
    r = np.empty(n)
    _refresh(g, c, v, r)
    objectives = np.empty(max_sweeps if record else 0)
    sweeps = 0
    converged = False
    kkt = np.inf
    while sweeps < max_sweeps:
        sweeps += 1
        max_change = 0.0
        for i in range(n):
            if frozen[i]:
                continue
            gii = g[i, i]
            old = v[i]
            new = _soft(r[i] + gii * old, lam) / gii
            delta = new - old
            if delta != 0.0:
                v[i] = new
                for j in range(n):
                    r[j] -= g[j, i] * delta
                ad = abs(delta)
                if ad > max_change:
                    max_change = ad
        if record:
            objectives[sweeps - 1] = _objective(g, c, lam, v)
        if sweeps % REFRESH_EVERY == 0:
            _refresh(g, c, v, r)
        if max_change < tol:
            _refresh(g, c, v, r)
            kkt = _kkt_from_residual(r, v, lam, frozen)
            if kkt <= kkt_tol:
                converged = True
                break
    if not converged:
        _refresh(g, c, v, r)
        kkt = _kkt_from_residual(r, v, lam, frozen)
    return sweeps, converged, kkt, objectives[:sweeps]


@numba.njit(cache=True, nogil=True)
def _cd_columns(g, cols, lam, v, frozen_cols, tol, kkt_scale, max_sweeps):
    """Solve one problem per column of ``cols``, warm-started from ``v`` (in place)."""
    k = cols.shape[1]
    sweeps = np.zeros(k, dtype=np.int64)
    ok = np.zeros(k, dtype=np.bool_)
    for j in range(k):
        c = np.ascontiguousarray(cols[:, j])
        vj = np.ascontiguousarray(v[:, j])
        cmax = 0.0
        for i in range(c.shape[0]):
            if abs(c[i]) > cmax:
                cmax = abs(c[i])
        s, conv, _, _ = _cd(g, c, lam, vj, np.ascontiguousarray(frozen_cols[:, j]), tol, kkt_scale * (1.0 + cmax), max_sweeps, False)
        v[:, j] = vj
        sweeps[j] = s
        ok[j] = conv
    return sweeps, ok


def _validate(g, c, lam):
    g = np.ascontiguousarray(g, dtype=float)
    c = np.asarray(c, dtype=float)
    n = g.shape[0]
    if g.shape != (n, n):
        raise DimensionMismatch(f"G must be square, got {g.shape}")
    if c.shape[0] != n:
        raise DimensionMismatch(f"c has length {c.shape[0]}, G is {n}x{n}")
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if n and np.max(np.abs(g - g.T)) > 1e-10 * max(1.0, np.max(np.abs(g))):
        raise DimensionMismatch("G must be symmetric")
    return g, c


def _frozen_coordinates(g: np.ndarray, c: np.ndarray, lam: float) -> np.ndarray:
    """Coordinates with vanishing curvature; only allowed when zero is optimal for them."""
    diag = np.diag(g)
    flat = diag <= DIAG_FLOOR
    if c.ndim == 1:
        bad = flat & (np.abs(c) > lam)
        frozen = flat.copy()
    else:
        bad = flat[:, None] & (np.abs(c) > lam)
        frozen = np.repeat(flat[:, None], c.shape[1], axis=1)
    if bad.any():
        idx = np.argwhere(bad)[0].tolist()
        raise DegenerateDiagonal(f"G[{idx[0]},{idx[0]}] <= {DIAG_FLOOR} but |c| > lambda at {idx}")
    return frozen


def lasso_cd(g, c, lam: float, opts: LassoOptions = LassoOptions(), record: bool = False) -> LassoResult:
    """Coordinate descent with full diagnostics; never raises on non-convergence."""
    g, c = _validate(g, c, lam)
    n = c.shape[0]
    frozen = _frozen_coordinates(g, c, lam)
    v = np.zeros(n) if opts.warm_start is None else np.array(opts.warm_start, dtype=float)
    if v.shape != (n,):
        raise DimensionMismatch("warm start has the wrong length")
    v[frozen] = 0.0
    cmax = float(np.max(np.abs(c))) if n else 0.0
    sweeps, converged, kkt, objectives = _cd(
        g, np.ascontiguousarray(c), float(lam), v, frozen, opts.tol,
        10.0 * opts.tol * (1.0 + cmax), opts.max_sweeps, record,
    )
    return LassoResult(v, int(sweeps), bool(converged), float(kkt), objectives if record else None)


def solve_lasso_quadratic(g, c, lam: float, opts: LassoOptions = LassoOptions()) -> np.ndarray:
    """Minimiser of ``1/2 v'Gv - c'v + lam*|v|_1`` for PSD ``G``.

    Raises
    ------
    NonConvergence
        After ``opts.max_sweeps`` sweeps; ``exc.best`` holds the last iterate.
    DegenerateDiagonal
        If some ``G_ii`` is (numerically) zero while ``|c_i| > lam``.
    """
    res = lasso_cd(g, c, lam, opts)
    if not res.converged:
        raise NonConvergence(
            f"coordinate descent did not converge in {res.sweeps} sweeps (kkt={res.kkt:.3g})",
            best=res.v,
        )
    return res.v


def solve_lasso_columns(g, cols, lam: float, opts: LassoOptions = LassoOptions(), warm=None) -> np.ndarray:
    """Solve the problem for every column of ``cols`` with a shared Gram matrix."""
    g, cols = _validate(g, cols, lam)
    cols = np.ascontiguousarray(cols, dtype=float)
    if cols.ndim != 2:
        raise DimensionMismatch("cols must be 2-d")
    frozen = _frozen_coordinates(g, cols, lam)
    v = np.zeros_like(cols) if warm is None else np.array(warm, dtype=float, order="C")
    if v.shape != cols.shape:
        raise DimensionMismatch("warm start has the wrong shape")
    v[frozen] = 0.0
    _, ok = _cd_columns(g, cols, float(lam), v, np.ascontiguousarray(frozen), opts.tol, 10.0 * opts.tol, opts.max_sweeps)
    if not ok.all():
        bad = int(np.flatnonzero(~ok)[0])
        raise NonConvergence(f"coordinate descent did not converge for column {bad}", best=v)
    return v


def kkt_residual(g, c, lam: float, v) -> float:
    """Largest violation of the subgradient optimality conditions."""
    g = np.asarray(g, dtype=float)
    c = np.asarray(c, dtype=float)
    v = np.asarray(v, dtype=float)
    grad = g @ v - c
    nz = v != 0
    err = np.where(nz, np.abs(grad + lam * np.sign(v)), np.maximum(0.0, np.abs(grad) - lam))
    return float(err.max()) if err.size else 0.0


def lasso_objective(g, c, lam: float, v) -> float:
    v = np.asarray(v, dtype=float)
    return float(0.5 * v @ np.asarray(g, dtype=float) @ v - np.asarray(c, dtype=float) @ v + lam * np.abs(v).sum())
