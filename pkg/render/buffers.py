from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True, eq=False)
class RenderBuffers:
    """One render pass: rgb (H, W, 3), depth (H, W, NaN where invalid), alpha (H, W)."""
    rgb: np.ndarray
    depth: np.ndarray
    alpha: np.ndarray

    @property
    def height(self) -> int:
        return self.alpha.shape[0]

    @property
    def width(self) -> int:
        return self.alpha.shape[1]

    @property
    def depth_valid(self) -> np.ndarray:
        return np.isfinite(self.depth)

    @staticmethod
    def blank(height: int, width: int) -> 'RenderBuffers':
        return RenderBuffers(
            rgb=np.zeros((height, width, 3)),
            depth=np.full((height, width), np.nan),
            alpha=np.zeros((height, width)),
        )


@dataclass(frozen=True, eq=False)
class LossGradients:
    """Per-pixel dL/d(rgb), dL/d(depth) and dL/d(alpha); missing terms are zero."""
    rgb: Optional[np.ndarray] = None
    depth: Optional[np.ndarray] = None
    alpha: Optional[np.ndarray] = None

    def resolved(self, height: int, width: int):
        rgb = np.zeros((height, width, 3)) if self.rgb is None else np.asarray(self.rgb, dtype=np.float64)
        depth = np.zeros((height, width)) if self.depth is None else np.asarray(self.depth, dtype=np.float64)
        alpha = np.zeros((height, width)) if self.alpha is None else np.asarray(self.alpha, dtype=np.float64)
        if rgb.shape != (height, width, 3) or depth.shape != (height, width) or alpha.shape != (height, width):
            raise ValueError(f"loss gradient buffers do not match a {height}x{width} render")
        return rgb, depth, alpha

    def is_zero(self) -> bool:
        return all(g is None or not np.any(g) for g in (self.rgb, self.depth, self.alpha))

    def __add__(self, other: 'LossGradients') -> 'LossGradients':
        def add(a, b):
            if a is None:
                return b
            if b is None:
                return a
            return a + b
        return LossGradients(add(self.rgb, other.rgb), add(self.depth, other.depth), add(self.alpha, other.alpha))
