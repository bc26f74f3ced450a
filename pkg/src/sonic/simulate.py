"""Planted SONIC operators and masked VAR(1) sample paths."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import InfeasibleSparsity, TooManyClusters, UnstableOperator
from .panel import Clustering, GroundTruth, Panel

# Recorded in output metadata; changing either invalidates stored seeds.
RNG_ALGORITHM = "numpy.random.PCG64 via SeedSequence(seed, spawn_key=(stream,)); normals: Generator.standard_normal (ziggurat)"
INNOVATION_STREAM = 0
MASK_STREAM = 1


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Generator for a fixed sub-stream of ``seed``.

    Sub-streams are addressed by integer keys, so e.g. ``make_rng(seed, rep, 1)``
    is the mask stream of replication ``rep``.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=tuple(stream))))


@dataclass(frozen=True)
class SimulationConfig:
    n: int = 100
    k: int = 25
    s: int = 1
    coef: float = 0.5
    t: int = 100
    p: float | tuple[float, ...] = 1.0
    trunc_order: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.k < 1:
            raise ValueError("n and k must be positive")
        if self.k > self.n:
            raise TooManyClusters(f"K exceeds N ({self.k} > {self.n})")
        if self.s < 1 or self.s > self.n:
            raise ValueError(f"s must lie in [1, {self.n}]")
        if self.t < 2:
            raise ValueError("t must be at least 2")
        if self.trunc_order < 0:
            raise ValueError("trunc_order must be nonnegative")
        p = self.p_vector()
        if np.any(p <= 0) or np.any(p > 1):
            raise ValueError("observation probabilities must lie in (0, 1]")
        # ||Theta*||_op = ||V*||_op = |coef| * sqrt(s) for disjoint column supports
        if abs(self.coef) * np.sqrt(self.s) >= 1:
            raise UnstableOperator(f"|coef| * sqrt(s) = {abs(self.coef) * np.sqrt(self.s):.4g} must be < 1")

    def p_vector(self) -> np.ndarray:
        p = np.atleast_1d(np.asarray(self.p, dtype=float))
        if p.size == 1:
            p = np.full(self.n, p[0])
        if p.size != self.n:
            raise ValueError(f"p must be scalar or length {self.n}")
        return p

    def to_dict(self) -> dict:
        d = asdict(self)
        if isinstance(self.p, tuple):
            d["p"] = list(self.p)
        return d


def block_clustering(n: int, k: int) -> Clustering:
    """Contiguous blocks; the first ``n mod k`` clusters get one extra node."""
    if k > n:
        raise TooManyClusters(f"K exceeds N ({k} > {n})")
    base, extra = divmod(n, k)
    sizes = [base + 1 if j < extra else base for j in range(k)]
    return Clustering(np.repeat(np.arange(k), sizes), k)


def build_planted_model(cfg: SimulationConfig) -> GroundTruth:
    """Block clusters and ``v_j = coef * (e_{js} + ... + e_{js+s-1})``."""
    if cfg.k * cfg.s > cfg.n:
        raise InfeasibleSparsity(f"K*s = {cfg.k * cfg.s} exceeds N = {cfg.n}")
    clustering = block_clustering(cfg.n, cfg.k)
    v = np.zeros((cfg.n, cfg.k))
    for j in range(cfg.k):
        v[j * cfg.s:(j + 1) * cfg.s, j] = cfg.coef
    return GroundTruth.from_factors(clustering, v)


def simulate_var(
    theta: np.ndarray,
    t: int,
    trunc_order: int = 20,
    seed: int | np.random.Generator = 0,
    innovation_sqrt: np.ndarray | None = None,
) -> np.ndarray:
    """Truncated moving average ``Y_t = sum_{k<=m} theta^k W_{t-k}``.

    The ``t`` current innovations are drawn before the ``m`` pre-sample ones,
    so with ``theta = 0`` the path does not depend on ``trunc_order``.
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    n = theta.shape[0]
    if theta.shape != (n, n):
        raise ValueError("theta must be square")
    if n and np.linalg.norm(theta, 2) >= 1.0 - 1e-6:
        raise UnstableOperator(f"||theta||_op = {np.linalg.norm(theta, 2):.6g} >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed, INNOVATION_STREAM)
    current = rng.standard_normal((t, n))
    presample = rng.standard_normal((trunc_order, n))
    w = np.vstack([presample, current])
    if innovation_sqrt is not None:
        w = w @ np.asarray(innovation_sqrt, dtype=float).T
    m = trunc_order
    y = w[m:].copy()
    power = np.eye(n)
    for lag in range(1, m + 1):
        power = power @ theta
        if not power.any():
            break
        y += w[m - lag:m - lag + t] @ power.T
    return y


def apply_mask(
    y: np.ndarray,
    p,
    seed: int | np.random.Generator = 0,
    node_ids=None,
) -> Panel:
    """Keep each entry of column ``i`` independently with probability ``p_i``."""
    y = np.asarray(y, dtype=float)
    p = np.broadcast_to(np.asarray(p, dtype=float), (y.shape[1],))
    if np.any(p <= 0) or np.any(p > 1):
        raise ValueError("observation probabilities must lie in (0, 1]")
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed, MASK_STREAM)
    mask = rng.random(y.shape) < p[None, :]
    return Panel.from_array(y, mask, node_ids)


def population_covariance(theta: np.ndarray, trunc_order: int = 20, innovation_cov=None) -> np.ndarray:
    """``sum_{k<=m} theta^k S (theta^k)^T`` for the truncated process."""
    theta = np.asarray(theta, dtype=float)
    n = theta.shape[0]
    s = np.eye(n) if innovation_cov is None else np.asarray(innovation_cov, dtype=float)
    out = np.zeros((n, n))
    power = np.eye(n)
    for _ in range(trunc_order + 1):
        out += power @ s @ power.T
        power = power @ theta
    return out


@dataclass(frozen=True)
class Simulation:
    config: SimulationConfig
    truth: GroundTruth
    y: np.ndarray = field(repr=False)
    panel: Panel = field(repr=False)


def simulate(cfg: SimulationConfig, truth: GroundTruth | None = None, replication: int | None = None) -> Simulation:
    """Planted model, latent path and masked panel for one replication.

    Replication ``r`` uses sub-streams ``(r, 0)`` and ``(r, 1)`` of ``cfg.seed``;
    ``replication=None`` uses the top-level streams ``(0,)`` and ``(1,)``.
    """
    truth = build_planted_model(cfg) if truth is None else truth
    prefix = () if replication is None else (int(replication),)
    y = simulate_var(truth.theta_star, cfg.t, cfg.trunc_order, make_rng(cfg.seed, *prefix, INNOVATION_STREAM))
    panel = apply_mask(y, cfg.p_vector(), make_rng(cfg.seed, *prefix, MASK_STREAM))
    return Simulation(cfg, truth, y, panel)
