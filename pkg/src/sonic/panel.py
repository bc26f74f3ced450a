"""Data model: masked panels, clusterings and the factorised operator."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyCluster, InvalidClustering, InvalidPanel


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Panel:
    """A ``T x N`` partially observed multivariate time series.

    Unobserved entries are stored as exact zeros in ``values`` and flagged
    ``False`` in ``mask``; moment sums can then run over ``values`` directly.
    """

    values: np.ndarray
    mask: np.ndarray
    node_ids: tuple[str, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        mask = np.asarray(self.mask, dtype=bool)
        if values.ndim != 2:
            raise InvalidPanel(f"values must be 2-d, got shape {values.shape}")
        if mask.shape != values.shape:
            raise InvalidPanel(f"mask shape {mask.shape} != values shape {values.shape}")
        t, n = values.shape
        if t < 2 or n < 1:
            raise InvalidPanel(f"need T >= 2 and N >= 1, got T={t}, N={n}")
        if not np.all(np.isfinite(values[mask])):
            raise InvalidPanel("observed values must be finite")
        if np.any(values[~mask] != 0.0):
            raise InvalidPanel("masked entries must be stored as 0")
        ids = tuple(str(x) for x in self.node_ids)
        if len(ids) != n:
            raise InvalidPanel(f"expected {n} node ids, got {len(ids)}")
        if len(set(ids)) != n:
            raise InvalidPanel("node ids must be unique")
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "mask", _frozen(mask))
        object.__setattr__(self, "node_ids", ids)

    @classmethod
    def from_array(
        cls,
        values,
        mask=None,
        node_ids: Sequence[str] | None = None,
    ) -> "Panel":
        """Build a panel, zeroing any entry that ``mask`` marks unobserved.

        NaNs in ``values`` are treated as missing when ``mask`` is omitted.
        """
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if mask is None:
            mask = ~np.isnan(values)
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != values.shape:
            raise InvalidPanel(f"mask shape {mask.shape} != values shape {values.shape}")
        values = np.where(mask, values, 0.0)
        if node_ids is None:
            node_ids = [str(i) for i in range(values.shape[1])]
        return cls(values, mask, tuple(node_ids))

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def N(self) -> int:
        return self.values.shape[1]

    @property
    def fully_observed(self) -> bool:
        return bool(self.mask.all())

    def observed_fraction(self) -> float:
        return float(self.mask.mean())

    def rows(self, start: int, stop: int) -> "Panel":
        """Sub-panel of rows ``start:stop`` (0-based, half-open)."""
        return Panel(self.values[start:stop], self.mask[start:stop], self.node_ids)

    def permute_nodes(self, perm: Sequence[int]) -> "Panel":
        """Panel whose column ``i`` is column ``perm[i]`` of this one."""
        perm = np.asarray(perm)
        return Panel(
            self.values[:, perm],
            self.mask[:, perm],
            tuple(self.node_ids[p] for p in perm),
        )

    def __eq__(self, other):
        if not isinstance(other, Panel):
            return NotImplemented
        return (
            self.node_ids == other.node_ids
            and np.array_equal(self.mask, other.mask)
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self):
        return f"Panel(T={self.T}, N={self.N}, observed={self.observed_fraction():.3f})"


@dataclass(frozen=True, eq=False)
class Clustering:
    """A partition of ``N`` nodes into ``K`` nonempty clusters, as a label vector."""

    labels: np.ndarray
    k: int

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 1 or labels.size == 0:
            raise InvalidClustering("labels must be a nonempty 1-d vector")
        if not np.issubdtype(labels.dtype, np.integer):
            if not np.all(np.mod(labels, 1) == 0):
                raise InvalidClustering("labels must be integers")
        labels = labels.astype(np.int64)
        k = int(self.k)
        if k < 1:
            raise InvalidClustering(f"K must be positive, got {k}")
        if labels.min() < 0 or labels.max() >= k:
            raise InvalidClustering(f"labels must lie in [0, {k})")
        counts = np.bincount(labels, minlength=k)
        if np.any(counts == 0):
            empty = np.flatnonzero(counts == 0).tolist()
            raise EmptyCluster(f"clusters {empty} are empty")
        object.__setattr__(self, "labels", _frozen(labels))
        object.__setattr__(self, "k", k)

    @classmethod
    def from_labels(cls, labels, k: int | None = None) -> "Clustering":
        labels = np.asarray(labels, dtype=np.int64)
        if k is None:
            k = int(labels.max()) + 1
        return cls(labels, k)

    @classmethod
    def from_sets(cls, clusters: Sequence[Iterable[int]], n: int | None = None) -> "Clustering":
        clusters = [sorted(set(c)) for c in clusters]
        if n is None:
            n = sum(len(c) for c in clusters)
        labels = np.full(n, -1, dtype=np.int64)
        for j, members in enumerate(clusters):
            if not members:
                raise EmptyCluster(f"cluster {j} is empty")
            if np.any(labels[members] >= 0):
                raise InvalidClustering("clusters overlap")
            labels[members] = j
        if np.any(labels < 0):
            raise InvalidClustering("clusters do not cover all nodes")
        return cls(labels, len(clusters))

    @property
    def n(self) -> int:
        return self.labels.size

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k)

    def members(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.labels == j)

    def to_sets(self) -> list[frozenset[int]]:
        return [frozenset(self.members(j).tolist()) for j in range(self.k)]

    def relabel(self, perm: Sequence[int]) -> "Clustering":
        """Rename cluster ``j`` to ``perm[j]``."""
        perm = np.asarray(perm, dtype=np.int64)
        return Clustering(perm[self.labels], self.k)

    def __eq__(self, other):
        if not isinstance(other, Clustering):
            return NotImplemented
        return self.k == other.k and np.array_equal(self.labels, other.labels)

    def __hash__(self):
        return hash((self.k, self.labels.tobytes()))

    def __repr__(self):
        return f"Clustering(N={self.n}, K={self.k}, sizes={self.sizes().tolist()})"


def normalized_indicator(members: Iterable[int], n: int) -> np.ndarray:
    """Unit vector with entries ``|C|^{-1/2}`` on ``members`` and zero elsewhere."""
    idx = np.unique(np.fromiter(members, dtype=np.int64))
    if idx.size == 0:
        raise EmptyCluster("cannot build an indicator for an empty cluster")
    if idx.min() < 0 or idx.max() >= n:
        raise DimensionMismatch(f"members must lie in [0, {n})")
    z = np.zeros(n)
    z[idx] = 1.0 / np.sqrt(idx.size)
    return z


def indicator_matrix(c: Clustering) -> np.ndarray:
    """The ``N x K`` matrix of normalised cluster indicators (orthonormal columns)."""
    z = np.zeros((c.n, c.k))
    z[np.arange(c.n), c.labels] = 1.0
    z /= np.sqrt(c.sizes())[None, :]
    return z


def theta_from_factors(c: Clustering, v: np.ndarray) -> np.ndarray:
    """``Theta = Z_C V^T``; row ``i`` is ``v[:, label_i] / sqrt(|C_label_i|)``."""
    v = np.asarray(v, dtype=float)
    if v.shape != (c.n, c.k):
        raise DimensionMismatch(f"V must be {c.n}x{c.k}, got {v.shape}")
    scale = 1.0 / np.sqrt(c.sizes())
    return (v * scale[None, :]).T[c.labels]


@dataclass(frozen=True, eq=False)
class SonicModel:
    """A fitted factorisation ``Theta = Z_C V^T``."""

    clustering: Clustering
    v: np.ndarray
    lam: float
    risk: float
    iterations: int = 0
    restarts_used: int = 1
    converged: bool = True
    best_restart: int = 0
    restart_seeds: tuple[int, ...] = ()
    history: tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float)
        if v.shape != (self.clustering.n, self.clustering.k):
            raise DimensionMismatch(
                f"V must be {self.clustering.n}x{self.clustering.k}, got {v.shape}"
            )
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        object.__setattr__(self, "v", _frozen(v))

    @property
    def theta(self) -> np.ndarray:
        return theta_from_factors(self.clustering, self.v)

    @property
    def n(self) -> int:
        return self.clustering.n

    @property
    def k(self) -> int:
        return self.clustering.k


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Planted operator used to score simulations."""

    clustering: Clustering
    v_star: np.ndarray
    theta_star: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.v_star, dtype=float)
        theta = np.asarray(self.theta_star, dtype=float)
        if v.shape != (self.clustering.n, self.clustering.k):
            raise DimensionMismatch("v_star does not match the clustering")
        if not np.array_equal(theta, theta_from_factors(self.clustering, v)):
            raise DimensionMismatch("theta_star must equal Z_C v_star^T exactly")
        object.__setattr__(self, "v_star", _frozen(v))
        object.__setattr__(self, "theta_star", _frozen(theta))

    @classmethod
    def from_factors(cls, clustering: Clustering, v_star) -> "GroundTruth":
        return cls(clustering, v_star, theta_from_factors(clustering, v_star))

    @property
    def sparsity(self) -> int:
        """Largest number of nonzeros in any column of ``v_star``."""
        return int((self.v_star != 0).sum(axis=0).max())
