import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np


class AlignmentError(Exception):
    """Custom exception for failed depth alignment"""
    pass


@dataclass(frozen=True)
class AffineDepthFit:
    scale: float
    shift: float
    inlier_count: int
    inlier_fraction: float
    residual_median: float

    @staticmethod
    def identity() -> 'AffineDepthFit':
        return AffineDepthFit(1.0, 0.0, 0, 0.0, 0.0)


def _least_squares(x: np.ndarray, y: np.ndarray):
    x_mean, y_mean = x.mean(), y.mean()
    dx = x - x_mean
    var = np.mean(dx * dx)
    if var <= 0.0:
        raise AlignmentError("degenerate: zero depth variance")
    scale = np.mean(dx * (y - y_mean)) / var
    return float(scale), float(y_mean - scale * x_mean)


def fit_affine_depth_ransac(pred: np.ndarray, ctx: np.ndarray, valid: np.ndarray,
                            iterations: int = 256, thresh_frac: float = 0.05,
                            min_inlier_fraction: float = 0.2, seed: int = 0,
                            batch: int = 32, rng: Optional[np.random.Generator] = None) -> AffineDepthFit:
    """
    Robustly fit ctx ~ scale * pred + shift.

    Two-pixel minimal samples, inliers within thresh_frac * median(ctx), and
    a closed-form least-squares refit over the best inlier set.

    Raises:
        AlignmentError on too few correspondences, zero depth variance,
        a non-positive scale or an inlier fraction below min_inlier_fraction
    """
    valid = np.asarray(valid, dtype=bool) & np.isfinite(pred) & np.isfinite(ctx)
    x = np.asarray(pred, dtype=np.float64)[valid]
    y = np.asarray(ctx, dtype=np.float64)[valid]
    n = len(x)
    if n < 2:
        raise AlignmentError(f"insufficient correspondences: {n} valid pixels")
    if np.all(x == x[0]):
        raise AlignmentError("degenerate: zero depth variance")

    rng = rng or np.random.default_rng(seed)
    threshold = thresh_frac * float(np.median(y))

    samples = rng.integers(0, n, size=(iterations, 2))
    for _ in range(100):
        degenerate = x[samples[:, 0]] == x[samples[:, 1]]
        if not np.any(degenerate):
            break
        samples[degenerate] = rng.integers(0, n, size=(int(degenerate.sum()), 2))

    x1, x2 = x[samples[:, 0]], x[samples[:, 1]]
    y1, y2 = y[samples[:, 0]], y[samples[:, 1]]
    with np.errstate(divide='ignore', invalid='ignore'):
        scales = (y2 - y1) / (x2 - x1)
    shifts = y1 - scales * x1

    best_count, best_index = -1, -1
    for start in range(0, iterations, batch):
        s = scales[start:start + batch, None]
        t = shifts[start:start + batch, None]
        counts = np.sum(np.abs(s * x[None, :] + t - y[None, :]) < threshold, axis=1)
        counts = np.where(np.isfinite(scales[start:start + batch]), counts, -1)
        k = int(np.argmax(counts))
        if counts[k] > best_count:
            best_count, best_index = int(counts[k]), start + k

    inliers = np.abs(scales[best_index] * x + shifts[best_index] - y) < threshold
    if inliers.sum() < 2:
        raise AlignmentError("insufficient correspondences: best model has fewer than 2 inliers")
    scale, shift = _least_squares(x[inliers], y[inliers])
    fraction = float(inliers.sum()) / n
    residual = float(np.median(np.abs(scale * x[inliers] + shift - y[inliers])))

    logging.info(f"RANSAC depth fit: scale={scale:.5f} shift={shift:.5f} "
                 f"inliers={int(inliers.sum())}/{n} ({fraction:.1%})")
    if scale <= 0.0:
        raise AlignmentError(f"fit failed: non-positive scale {scale:.4g}")
    if fraction < min_inlier_fraction:
        raise AlignmentError(f"fit failed: inlier fraction {fraction:.3f} below {min_inlier_fraction}")
    return AffineDepthFit(scale, shift, int(inliers.sum()), fraction, residual)


def apply_affine_depth(depth: np.ndarray, fit: AffineDepthFit) -> np.ndarray:
    """D_out = scale * D_in + shift; NaN (invalid) pixels stay invalid."""
    return fit.scale * np.asarray(depth, dtype=np.float64) + fit.shift
