"""Choosing the regularisation level and the number of clusters."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .bench import clustering_distance
from .errors import InsufficientSamples, SonicError, ZeroFrequency, annotate
from .estimator import FitOptions, _map, fit
from .moments import estimate_moments, kth_singular_value
from .panel import Panel

N_WINDOWS = 6


def lambda_heuristic(sigma_hat, k: int, t: int, p_hat) -> float:
    """``sigma_K(S) * sqrt(ln N / (T p_min^2))``."""
    p_hat = np.asarray(p_hat, dtype=float)
    n = p_hat.size
    if t < 2:
        raise InsufficientSamples("t must be at least 2")
    p_min = float(p_hat.min())
    if not p_min > 0:
        raise ZeroFrequency(np.flatnonzero(~(p_hat > 0)).tolist())
    return kth_singular_value(sigma_hat, k) * math.sqrt(math.log(n) / (t * p_min**2))


def stability_windows(t: int) -> list[tuple[int, int]]:
    """Six overlapping windows of about ``3t/4`` samples, 1-based and inclusive.

    Window ``j`` is ``[floor((j-1) t/20) + 1, floor((j+14) t/20)]``.
    """
    if t < 8:
        raise InsufficientSamples(f"stability windows need t >= 8, got {t}")
    return [((j - 1) * t // 20 + 1, (j + 14) * t // 20) for j in range(1, N_WINDOWS + 1)]


@dataclass(frozen=True)
class StabilityReport:
    k_values: tuple[int, ...]
    window_bounds: tuple[tuple[int, int], ...]
    distances: dict[int, tuple[int, ...]]  # K -> d(C_1, C_j) for j = 2..6
    lambdas: dict[int, tuple[float, ...]]  # K -> lambda used in each window
    recommended_k: int | None
    n: int
    threshold: float

    def rows(self):
        """``(K, j, distance)`` with ``j`` the 1-based window index (2..6)."""
        for k in self.k_values:
            for j, d in enumerate(self.distances[k], start=2):
                yield k, j, d


def stability_analysis(
    panel: Panel,
    k_min: int,
    k_max: int,
    lambda_policy: float | str = "heuristic",
    fit_opts: FitOptions = FitOptions(),
    threshold_frac: float = 0.1,
) -> StabilityReport:
    """Fit every ``K`` on each window and compare window clusterings with the first.

    ``lambda_policy`` is either a fixed value or ``"heuristic"`` to re-estimate
    it per window and per ``K``.  All windows use the same restart seeds, so
    differences between windows come from the data only.
    """
    if k_min < 2 or k_max < k_min:
        raise ValueError("need 2 <= k_min <= k_max")
    windows = stability_windows(panel.T)
    moments = [estimate_moments(panel.rows(lo - 1, hi), psd=fit_opts.psd_project) for lo, hi in windows]
    ks = list(range(k_min, k_max + 1))

    def lam_for(k, w):
        if isinstance(lambda_policy, str):
            if lambda_policy != "heuristic":
                raise ValueError(f"unknown lambda policy {lambda_policy!r}")
            mom = moments[w]
            return lambda_heuristic(mom.sigma_hat, k, mom.t, mom.p_hat)
        return float(lambda_policy)

    serial = replace(fit_opts, threads=1)

    def one(cell):
        k, w = cell
        lam = lam_for(k, w)
        try:
            return lam, fit(moments[w], k, lam, serial).clustering
        except SonicError as exc:
            raise annotate(exc, f"K={k}, window={w + 1}")

    cells = [(k, w) for k in ks for w in range(len(windows))]
    results = dict(zip(cells, _map(one, cells, fit_opts.threads)))
    distances = {}
    lambdas = {}
    for k in ks:
        ref = results[(k, 0)][1]
        distances[k] = tuple(clustering_distance(ref, results[(k, w)][1]) for w in range(1, len(windows)))
        lambdas[k] = tuple(results[(k, w)][0] for w in range(len(windows)))
    limit = threshold_frac * panel.N
    recommended = next((k for k in ks if max(distances[k]) <= limit), None)
    return StabilityReport(tuple(ks), tuple(windows), distances, lambdas, recommended, panel.N, limit)
