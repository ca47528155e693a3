"""
Image and geometry metrics.

PSNR/SSIM on [0, 1] images; Chamfer distance, F-Score and AbsRel on point
sets taken from Gaussian means.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.spatial import cKDTree

PSNR_CAP_DB = 99.0
BRUTE_FORCE_LIMIT = 10_000

SSIM_SIGMA = 1.5
SSIM_RADIUS = 5     # 11 x 11 window
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


class MetricError(Exception):
    """Custom exception for invalid metric inputs"""
    pass


@dataclass(frozen=True)
class MetricReport:
    psnr: float = math.nan
    ssim: float = math.nan
    abs_rel: float = math.nan
    chamfer: float = math.nan
    f_score: float = math.nan
    f_score_threshold: float = math.nan

    def to_dict(self) -> dict:
        """JSON-ready values: infinite PSNR capped, NaN as None."""
        def clean(value):
            if value is None or math.isnan(value):
                return None
            return min(value, PSNR_CAP_DB) if math.isinf(value) else float(value)
        return {
            'psnr': clean(self.psnr),
            'ssim': clean(self.ssim),
            'abs_rel': clean(self.abs_rel),
            'chamfer': clean(self.chamfer),
            'f_score': clean(self.f_score),
            'f_score_threshold': clean(self.f_score_threshold),
        }


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"image dimensions differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5), averaged over channels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"image dimensions differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]

    def blur(x):
        return gaussian_filter(x, sigma=SSIM_SIGMA, truncate=SSIM_RADIUS / SSIM_SIGMA, mode='reflect')

    values = []
    for c in range(a.shape[2]):
        x, y = a[..., c], b[..., c]
        mu_x, mu_y = blur(x), blur(y)
        var_x = blur(x * x) - mu_x * mu_x
        var_y = blur(y * y) - mu_y * mu_y
        cov = blur(x * y) - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * cov + SSIM_C2)
        den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (var_x + var_y + SSIM_C2)
        values.append(float(np.mean(num / den)))
    return float(np.mean(values))


def image_metrics(a: np.ndarray, b: np.ndarray) -> Tuple[float, float]:
    """(PSNR in dB, SSIM); identical images give PSNR = inf."""
    return psnr(a, b), ssim(a, b)


def nearest_distances(query: np.ndarray, reference: np.ndarray, method: str = "auto",
                      chunk: int = 1024) -> np.ndarray:
    """Distance from every query point to its nearest reference point."""
    query = np.asarray(query, dtype=np.float64).reshape(-1, 3)
    reference = np.asarray(reference, dtype=np.float64).reshape(-1, 3)
    if len(query) == 0 or len(reference) == 0:
        raise MetricError("nearest-neighbour search on an empty point set")
    if method == "auto":
        method = "brute" if max(len(query), len(reference)) <= BRUTE_FORCE_LIMIT else "tree"

    if method == "tree":
        distances, _ = cKDTree(reference).query(query, k=1)
        return np.asarray(distances, dtype=np.float64)
    if method != "brute":
        raise MetricError(f"Unknown nearest-neighbour method: {method}")
    out = np.empty(len(query))
    for start in range(0, len(query), chunk):
        diff = query[start:start + chunk, None, :] - reference[None, :, :]
        out[start:start + chunk] = np.sqrt(np.min(np.einsum('ijk,ijk->ij', diff, diff), axis=1))
    return out


def chamfer_distance(pred: np.ndarray, gt: np.ndarray, method: str = "auto") -> float:
    """Symmetrized mean nearest-neighbour distance: (mean p->g + mean g->p) / 2."""
    return 0.5 * (float(nearest_distances(pred, gt, method).mean())
                  + float(nearest_distances(gt, pred, method).mean()))


def f_score(pred: np.ndarray, gt: np.ndarray, threshold: float, method: str = "auto") -> float:
    precision = float(np.mean(nearest_distances(pred, gt, method) <= threshold))
    recall = float(np.mean(nearest_distances(gt, pred, method) <= threshold))
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def abs_rel(pred_distances: np.ndarray, gt_distances: np.ndarray) -> float:
    pred_distances = np.asarray(pred_distances, dtype=np.float64)
    gt_distances = np.asarray(gt_distances, dtype=np.float64)
    if pred_distances.shape != gt_distances.shape:
        raise MetricError(f"matched distances differ in length: {pred_distances.shape} vs {gt_distances.shape}")
    if len(gt_distances) == 0:
        raise MetricError("AbsRel over an empty correspondence set")
    return float(np.mean(np.abs(pred_distances - gt_distances) / gt_distances))


def geometry_metrics(pred: np.ndarray, gt: np.ndarray, f_thresh: float,
                     pred_distances: Optional[np.ndarray] = None,
                     gt_distances: Optional[np.ndarray] = None,
                     method: str = "auto") -> Tuple[float, float, float]:
    """
    (abs_rel, chamfer, f_score) of two point sets.

    abs_rel needs matched per-primitive ray distances and is NaN without them.

    Raises:
        MetricError on empty sets or mismatched correspondences
    """
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 3)
    if len(pred) == 0 or len(gt) == 0:
        raise MetricError(f"geometry metrics need non-empty sets (pred {len(pred)}, gt {len(gt)})")
    rel = math.nan
    if pred_distances is not None and gt_distances is not None:
        rel = abs_rel(pred_distances, gt_distances)
    cd = chamfer_distance(pred, gt, method)
    fs = f_score(pred, gt, f_thresh, method)
    logging.debug(f"Geometry metrics: abs_rel={rel:.5f} chamfer={cd:.5f} f_score={fs:.4f} @ {f_thresh:.4f}")
    return rel, cd, fs
