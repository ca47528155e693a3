"""
Finite-difference execution mode.

Evaluates gradients by re-rendering with perturbed parameters. Slow (two
renders per parameter) and meant for debugging small scenes and for checking
the analytic backward passes.
"""
import logging
from typing import Callable, Optional, Sequence

import numpy as np

from model.camera import Camera
from model.gaussian import GaussianScene
from render.buffers import RenderBuffers
from render.rasterizer import RenderSettings, render

SceneLoss = Callable[[RenderBuffers], float]


def fd_ray_distance_gradient(scene: GaussianScene, cam: Camera, loss: SceneLoss,
                             directions: np.ndarray, indices: Sequence[int], h: float = 1e-3,
                             settings: Optional[RenderSettings] = None) -> np.ndarray:
    """Central differences of loss(render(scene)) along each primitive's ray."""
    indices = np.asarray(indices, dtype=np.int64)
    out = np.zeros(len(indices))
    logging.debug(f"Finite-difference ray gradient over {len(indices)} primitives (h={h})")
    for k, i in enumerate(indices):
        values = []
        for sign in (1.0, -1.0):
            means = scene.means.copy()
            means[i] = means[i] + sign * h * directions[k]
            values.append(loss(render(scene.with_means(means), cam, settings)))
        out[k] = (values[0] - values[1]) / (2.0 * h)
    return out


def fd_opacity_gradient(scene: GaussianScene, cam: Camera, loss: SceneLoss, indices: Sequence[int],
                        h: float = 1e-4, settings: Optional[RenderSettings] = None) -> np.ndarray:
    """Central differences of loss(render(scene)) in each primitive's opacity."""
    indices = np.asarray(indices, dtype=np.int64)
    out = np.zeros(len(indices))
    logging.debug(f"Finite-difference opacity gradient over {len(indices)} primitives (h={h})")
    for k, i in enumerate(indices):
        values = []
        for sign in (1.0, -1.0):
            opacities = scene.opacities.copy()
            opacities[i] = opacities[i] + sign * h
            values.append(loss(render(scene.with_opacities(opacities), cam, settings)))
        out[k] = (values[0] - values[1]) / (2.0 * h)
    return out
