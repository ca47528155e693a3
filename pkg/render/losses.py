from typing import Tuple

import numpy as np

from render.buffers import RenderBuffers


def masked_depth_l1(rendered: RenderBuffers, reference: np.ndarray, reference_valid: np.ndarray,
                    weight: float = 1.0) -> Tuple[float, np.ndarray, int]:
    """
    Weighted mean |D_hat - D_ref| over pixels valid in both buffers.

    Returns:
        (loss value, per-pixel dL/d(depth), number of valid pixels)
    """
    valid = reference_valid & rendered.depth_valid & np.isfinite(reference)
    count = int(valid.sum())
    grad = np.zeros_like(rendered.alpha)
    if count == 0 or weight == 0.0:
        return 0.0, grad, count
    diff = rendered.depth[valid] - reference[valid]
    grad[valid] = weight * np.sign(diff) / count
    return float(weight * np.abs(diff).mean()), grad, count


def image_l1(rgb: np.ndarray, reference: np.ndarray, weight: float = 1.0) -> Tuple[float, np.ndarray]:
    """Weighted mean absolute error over all pixels and channels, with its subgradient."""
    if weight == 0.0:
        return 0.0, np.zeros_like(rgb)
    diff = rgb - reference
    return float(weight * np.abs(diff).mean()), weight * np.sign(diff) / diff.size
