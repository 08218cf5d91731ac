"""Dense statistics kernels: correlations, covariance, ridge precision, activations.

All functions are pure and operate on numpy arrays; the dtype of the input is
preserved (float32 for training, float64 for verification).
"""

import numpy as np
from scipy import linalg

from .errors import FactorizationFailed, NonpositiveDiagonal, ShapeMismatch, ZeroVarianceColumn


def _as_2d(ts, name="ts"):
    ts = np.asarray(ts)
    if ts.ndim != 2:
        raise ShapeMismatch(f"{name} must be 2-D, got shape {ts.shape}")
    if not np.issubdtype(ts.dtype, np.floating):
        ts = ts.astype(np.float64)
    return ts


def covariance(ts):
    """Unbiased sample covariance (divisor T-1) of the columns of a T x N matrix."""
    ts = _as_2d(ts)
    t = ts.shape[0]
    if t < 2:
        raise ShapeMismatch(f"covariance needs at least 2 rows, got {t}")
    centered = ts - ts.mean(axis=0)
    cov = centered.T @ centered / (t - 1)
    return (cov + cov.T) / 2


def pearson_corr_matrix(ts):
    """N x N Pearson correlation between the columns of a T x N matrix.

    The result is exactly symmetric with a unit diagonal and entries clipped
    to [-1, 1].
    """
    ts = _as_2d(ts)
    t = ts.shape[0]
    if t < 3:
        raise ShapeMismatch(f"pearson_corr_matrix needs T >= 3, got {t}")
    centered = ts - ts.mean(axis=0)
    norms = np.sqrt((centered * centered).sum(axis=0))
    for j, nrm in enumerate(norms):
        if not nrm > 0:
            raise ZeroVarianceColumn(j)
    unit = centered / norms
    corr = unit.T @ unit
    corr = (corr + corr.T) / 2
    np.clip(corr, -1.0, 1.0, out=corr)
    np.fill_diagonal(corr, 1.0)
    return corr


def default_ridge(cov):
    """Relative ridge 1e-3 * trace(cov) / N."""
    cov = np.asarray(cov)
    return 1e-3 * float(np.trace(cov)) / cov.shape[0]


def precision_ridge(cov, ridge):
    """Inverse of ``cov + ridge * I`` through a Cholesky factorization."""
    cov = _as_2d(cov, "cov")
    n = cov.shape[0]
    if cov.shape != (n, n):
        raise ShapeMismatch(f"cov must be square, got {cov.shape}")
    if not ridge > 0:
        raise ValueError(f"ridge must be positive, got {ridge!r}")
    reg = cov + ridge * np.eye(n, dtype=cov.dtype)
    try:
        factor = linalg.cho_factor(reg, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise FactorizationFailed(f"cov + {ridge}*I is not positive definite: {exc}") from exc
    prec = linalg.cho_solve(factor, np.eye(n, dtype=cov.dtype))
    return (prec + prec.T) / 2


def partial_corr(prec):
    """Partial correlations -p_ij / sqrt(p_ii p_jj) with a zero diagonal."""
    prec = _as_2d(prec, "prec")
    diag = np.diag(prec)
    for i, d in enumerate(diag):
        if not d > 0:
            raise NonpositiveDiagonal(i, float(d))
    scale = np.sqrt(diag)
    rho = -prec / np.outer(scale, scale)
    np.fill_diagonal(rho, 0.0)
    return rho


def sigmoid(x):
    x = np.asarray(x)
    # two branches so neither exp overflows
    out = np.empty_like(x, dtype=np.result_type(x, np.float32))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(x):
    x = np.asarray(x)
    return x * sigmoid(x)


def leaky_relu(x, slope=0.2):
    x = np.asarray(x)
    return np.where(x >= 0, x, slope * x)


def softmax(x, axis=-1):
    """Softmax with max-subtraction."""
    x = np.asarray(x)
    if x.shape[axis] < 1:
        raise ShapeMismatch("softmax needs at least one entry")
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)
