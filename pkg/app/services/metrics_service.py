# app/services/metrics_service.py

import math

import numpy as np

from app.models.metrics import GaussianFit
from app.utils.exceptions import InvalidCovariance, ShapeError, TooFewSamples

SPD_TOLERANCE = 1e-12


def _points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ShapeError(f"expected an (n, 2) array, got shape {arr.shape}")
    return arr


def fit_gaussian(points) -> GaussianFit:
    arr = _points(points)
    if arr.shape[0] < 2:
        raise TooFewSamples(f"need at least 2 points, got {arr.shape[0]}")
    return GaussianFit(mean=arr.mean(axis=0), cov=np.cov(arr, rowvar=False, bias=True))


def _check_spd(cov: np.ndarray, name: str) -> np.ndarray:
    cov = np.asarray(cov, dtype=np.float64)
    if cov.shape != (2, 2):
        raise ShapeError(f"{name} covariance must be 2x2, got {cov.shape}")
    scale = max(1.0, float(np.max(np.abs(cov))))
    if np.max(np.abs(cov - cov.T)) > SPD_TOLERANCE * scale:
        raise InvalidCovariance(f"{name} covariance is not symmetric")
    sym = 0.5 * (cov + cov.T)
    if np.linalg.eigvalsh(sym)[0] < -SPD_TOLERANCE * scale:
        raise InvalidCovariance(f"{name} covariance has a negative eigenvalue")
    return sym


def sqrtm_spd_2x2(S: np.ndarray) -> np.ndarray:
    """
    Principal square root of a symmetric PSD 2x2 matrix:
    sqrt(S) = (S + sqrt(det S) I) / sqrt(tr S + 2 sqrt(det S)).
    """
    S = np.asarray(S, dtype=np.float64)
    s = math.sqrt(max(float(np.linalg.det(S)), 0.0))
    denom = float(np.trace(S)) + 2.0 * s
    if denom <= 0.0:
        return np.zeros((2, 2))
    return (S + s * np.eye(2)) / math.sqrt(denom)


def frechet_2d(a: GaussianFit, b: GaussianFit) -> float:
    """
    Squared Frechet distance between two Gaussians,
    ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2)).

    tr((S_a S_b)^(1/2)) is taken from the symmetric form
    S_a^(1/2) S_b S_a^(1/2), which has the same eigenvalues.
    """
    cov_a = _check_spd(a.cov, "first")
    cov_b = _check_spd(b.cov, "second")
    root_a = sqrtm_spd_2x2(cov_a)
    inner = root_a @ cov_b @ root_a
    inner = 0.5 * (inner + inner.T)
    diff = a.mean - b.mean
    d2 = (
        float(diff @ diff)
        + float(np.trace(cov_a) + np.trace(cov_b))
        - 2.0 * float(np.trace(sqrtm_spd_2x2(inner)))
    )
    return max(d2, 0.0)


def frechet_points(a_points, b_points) -> float:
    return frechet_2d(fit_gaussian(a_points), fit_gaussian(b_points))


def mse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))
