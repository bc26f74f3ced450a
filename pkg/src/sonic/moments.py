"""Second-moment estimators corrected for independently missing observations."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientSamples, NumericalFailure, ZeroFrequency
from .panel import Panel

logger = logging.getLogger(__name__)

# Rows per partial sum; fixed so accumulation order never depends on the caller.
CHUNK_ROWS = 512


@dataclass(frozen=True, eq=False)
class MomentEstimates:
    p_hat: np.ndarray
    sigma_obs: np.ndarray
    a_obs: np.ndarray
    sigma_hat: np.ndarray
    a_hat: np.ndarray
    psd_projected: bool
    t: int

    @property
    def n(self) -> int:
        return self.p_hat.size

    @property
    def p_min(self) -> float:
        return float(self.p_hat.min())


def estimate_frequencies(panel: Panel) -> np.ndarray:
    """Fraction of time points at which each node is observed."""
    p_hat = panel.mask.sum(axis=0) / panel.T
    zero = np.flatnonzero(p_hat == 0)
    if zero.size:
        raise ZeroFrequency([panel.node_ids[i] for i in zero])
    return p_hat


def _cross_sum(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    out = np.zeros((x.shape[1], y.shape[1]))
    for start in range(0, x.shape[0], CHUNK_ROWS):
        out += x[start:start + CHUNK_ROWS].T @ y[start:start + CHUNK_ROWS]
    return out


def observed_moments(panel: Panel) -> tuple[np.ndarray, np.ndarray]:
    """Zero-filled covariance ``T^-1 sum Z_t Z_t^T`` and lag-1 ``(T-1)^-1 sum Z_t Z_{t+1}^T``."""
    z = panel.values
    t = z.shape[0]
    if t < 2:
        raise InsufficientSamples(f"need at least 2 time points, got {t}")
    sigma = _cross_sum(z, z) / t
    sigma = 0.5 * (sigma + sigma.T)
    a = _cross_sum(z[:-1], z[1:]) / (t - 1)
    return sigma, a


def _check_frequencies(p_hat: np.ndarray) -> np.ndarray:
    p_hat = np.asarray(p_hat, dtype=float)
    bad = np.flatnonzero(~(p_hat > 0))
    if bad.size:
        raise ZeroFrequency(bad.tolist())
    return p_hat


def corrected_covariance(sigma_obs: np.ndarray, p_hat: np.ndarray) -> np.ndarray:
    """Diagonal divided by ``p_i``, off-diagonal by ``p_i p_j``."""
    p_hat = _check_frequencies(p_hat)
    inv = 1.0 / p_hat
    out = sigma_obs * inv[:, None] * inv[None, :]
    np.fill_diagonal(out, np.diag(sigma_obs) * inv)
    return 0.5 * (out + out.T)


def corrected_cross_covariance(a_obs: np.ndarray, p_hat: np.ndarray) -> np.ndarray:
    """Every entry, diagonal included, divided by ``p_i p_j``.

    The lag-1 product pairs masks at two different times, so the
    diagonal is doubly corrected as well.
    """
    p_hat = _check_frequencies(p_hat)
    inv = 1.0 / p_hat
    return a_obs * inv[:, None] * inv[None, :]


def psd_project(m: np.ndarray) -> np.ndarray:
    """Nearest (Frobenius) positive semidefinite matrix: floor eigenvalues at zero."""
    m = 0.5 * (np.asarray(m, dtype=float) + np.asarray(m, dtype=float).T)
    try:
        w, q = np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"eigendecomposition failed: {exc}") from exc
    if w[0] >= 0:
        return m
    out = (q * np.maximum(w, 0.0)) @ q.T
    return 0.5 * (out + out.T)


def kth_singular_value(m: np.ndarray, k: int) -> float:
    """The ``k``-th largest singular value, ``1 <= k <= N``."""
    m = np.asarray(m, dtype=float)
    if not 1 <= k <= min(m.shape):
        raise ValueError(f"k must lie in [1, {min(m.shape)}], got {k}")
    if m.shape[0] == m.shape[1] and np.array_equal(m, m.T):
        s = np.sort(np.abs(np.linalg.eigvalsh(m)))[::-1]
    else:
        s = np.linalg.svd(m, compute_uv=False)
    return float(s[k - 1])


def estimate_moments(panel: Panel, psd: bool | None = None) -> MomentEstimates:
    """All moment estimates for ``panel``.

    ``psd=None`` projects the corrected covariance only when some node has
    missing values, since the uncorrected covariance is already PSD.
    """
    p_hat = estimate_frequencies(panel)
    sigma_obs, a_obs = observed_moments(panel)
    sigma_hat = corrected_covariance(sigma_obs, p_hat)
    a_hat = corrected_cross_covariance(a_obs, p_hat)
    if psd is None:
        psd = bool(p_hat.min() < 1.0)
    if psd:
        sigma_hat = psd_project(sigma_hat)
    logger.debug("moments: N=%d T=%d p_min=%.3f psd=%s", panel.N, panel.T, p_hat.min(), psd)
    return MomentEstimates(p_hat, sigma_obs, a_obs, sigma_hat, a_hat, psd, panel.T)
