"""Scoring against planted truth, baseline VAR estimators and prediction error."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.optimize import linear_sum_assignment

from .errors import DimensionMismatch, InsufficientSamples, NonConvergence, SingularGram, annotate
from .lasso import LassoOptions, solve_lasso_columns
from .panel import Clustering, GroundTruth, Panel, SonicModel

logger = logging.getLogger(__name__)

SUPPORT_THRESHOLD = 1e-9


@dataclass(frozen=True)
class EvalResult:
    relative_frobenius: float
    clustering_distance: int
    support_exact: bool
    aligned_permutation: tuple[int, ...]


def _intersections(a: Clustering, b: Clustering) -> np.ndarray:
    if a.n != b.n:
        raise DimensionMismatch(f"clusterings cover different node sets ({a.n} vs {b.n})")
    if a.k != b.k:
        raise DimensionMismatch(f"clusterings have different K ({a.k} vs {b.k})")
    counts = np.zeros((a.k, b.k), dtype=np.int64)
    np.add.at(counts, (a.labels, b.labels), 1)
    return counts


def best_matching(a: Clustering, b: Clustering) -> tuple[int, np.ndarray]:
    """Distance and the permutation ``pi`` with cluster ``j`` of ``a`` matched to ``pi[j]`` of ``b``."""
    counts = _intersections(a, b)
    rows, cols = linear_sum_assignment(counts, maximize=True)
    perm = np.empty(a.k, dtype=np.int64)
    perm[rows] = cols
    return int(a.n - counts[rows, cols].sum()), perm


def clustering_distance(a: Clustering, b: Clustering) -> int:
    """Fewest node reassignments that make ``a`` and ``b`` equal up to relabelling."""
    return best_matching(a, b)[0]


def align_and_score(model: SonicModel, truth: GroundTruth) -> EvalResult:
    theta_star = truth.theta_star
    if model.theta.shape != theta_star.shape:
        raise DimensionMismatch("model and truth have different N")
    dist, perm = best_matching(truth.clustering, model.clustering)
    denom = np.linalg.norm(theta_star)
    err = np.linalg.norm(model.theta - theta_star)
    rel = float(err / denom) if denom > 0 else float(err)
    v_aligned = np.asarray(model.v)[:, perm]
    support = bool(np.array_equal(np.abs(v_aligned) > SUPPORT_THRESHOLD, np.abs(truth.v_star) > SUPPORT_THRESHOLD))
    return EvalResult(rel, dist, support, tuple(int(p) for p in perm))


def gram_condition(sigma_hat: np.ndarray) -> float:
    return float(np.linalg.cond(sigma_hat))


def fit_var_baseline(sigma_hat, a_hat) -> np.ndarray:
    """Unregularised ``Theta = A' S^{-1}``; ill-conditioned Grams are not repaired."""
    sigma_hat = np.asarray(sigma_hat, dtype=float)
    a_hat = np.asarray(a_hat, dtype=float)
    if sigma_hat.shape != a_hat.shape:
        raise DimensionMismatch("covariance and cross-covariance differ in shape")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            # S symmetric: Theta S = A'  <=>  S Theta' = A
            theta_t = scipy.linalg.solve(sigma_hat, a_hat, assume_a="sym")
    except np.linalg.LinAlgError as exc:
        raise SingularGram(f"covariance estimate is singular: {exc}") from exc
    if not np.all(np.isfinite(theta_t)):
        raise SingularGram("covariance estimate is singular")
    return theta_t.T


def fit_sparse_var_baseline(sigma_hat, a_hat, lam: float, opts: LassoOptions = LassoOptions()) -> np.ndarray:
    """Row ``i`` minimises ``1/2 r'Sr - r'A e_i + lam*|r|_1``."""
    try:
        rows = solve_lasso_columns(sigma_hat, np.asarray(a_hat, dtype=float), lam, opts)
    except NonConvergence as exc:
        raise annotate(exc, "sparse VAR (columns are rows of Theta)")
    return rows.T


def var_objective(theta, sigma_hat, a_hat, lam: float = 0.0) -> float:
    """``1/2 Tr(Theta S Theta') - Tr(Theta A) + lam*|Theta|_{1,1}``."""
    theta = np.asarray(theta, dtype=float)
    return float(0.5 * np.sum((theta @ sigma_hat) * theta) - np.sum(theta * a_hat.T) + lam * np.abs(theta).sum())


def prediction_error(theta, sigma_hat_test, a_hat_test, sigma_lagged=None) -> float:
    """``Tr(S) - 2 Tr(Theta A) + Tr(Theta S Theta')`` on test moments.

    ``sigma_lagged`` optionally supplies a separate covariance for the
    quadratic term (predictor rows), which makes the value coincide with
    the in-sample one-step MSE when all moments are built from the same
    index ranges.
    """
    theta = np.asarray(theta, dtype=float)
    s = np.asarray(sigma_hat_test, dtype=float)
    a = np.asarray(a_hat_test, dtype=float)
    if not theta.shape == s.shape == a.shape:
        raise DimensionMismatch("theta and test moments differ in shape")
    s_lag = s if sigma_lagged is None else np.asarray(sigma_lagged, dtype=float)
    return float(np.trace(s) - 2.0 * np.sum(theta * a.T) + np.sum((theta @ s_lag) * theta))


def train_test_split(panel: Panel, frac: float = 0.7) -> tuple[Panel, Panel]:
    """Chronological split at ``floor(frac * T)``."""
    if not 0 < frac < 1:
        raise ValueError("frac must lie in (0, 1)")
    cut = int(np.floor(frac * panel.T))
    if cut < 2 or panel.T - cut < 2:
        raise InsufficientSamples(f"split at {cut} of {panel.T} leaves a part with < 2 rows")
    return panel.rows(0, cut), panel.rows(cut, panel.T)
