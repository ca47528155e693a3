"""
Hole-aware integration of registered target primitives into the context.
"""
import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from model.camera import Camera
from model.config import LossWeights
from model.gaussian import GaussianScene, Provenance
from pipeline.optim import DescentStepper, run_descent
from render.buffers import LossGradients
from render.losses import image_l1
from render.rasterizer import RenderSettings, backward_opacity, render


@dataclass(frozen=True, eq=False)
class HoleMask:
    mask: np.ndarray    # True where the context is unobserved
    tau: float

    @property
    def fraction(self) -> float:
        return float(self.mask.mean()) if self.mask.size else 0.0


@dataclass
class RefinementReport:
    initial_loss: float
    final_loss: float
    trace: List[Dict[str, float]] = field(default_factory=list)
    iterations_run: int = 0
    wall_time: float = 0.0
    backoffs: int = 0
    aborted: bool = False
    refined: int = 0

    def to_dict(self, include_timing: bool = False) -> dict:
        out = {
            'initial_loss': self.initial_loss,
            'final_loss': self.final_loss,
            'trace': self.trace,
            'iterations_run': self.iterations_run,
            'backoffs': self.backoffs,
            'aborted': self.aborted,
            'refined': self.refined,
        }
        if include_timing:
            out['wall_time'] = self.wall_time
        return out


def render_hole_mask(ctx: GaussianScene, cam: Camera, tau: float = 0.5,
                     settings: Optional[RenderSettings] = None) -> HoleMask:
    """Pixels where the context's accumulated alpha is below tau."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    alpha = render(ctx, cam, settings).alpha
    mask = HoleMask(alpha < tau, tau)
    logging.info(f"Hole mask at tau={tau}: {mask.fraction:.1%} of the view unobserved")
    return mask


def filter_by_hole_mask(tgt: GaussianScene, mask: HoleMask, cam: Camera,
                        near_plane: float = 0.01) -> GaussianScene:
    """Keep primitives whose projected mean lands on a hole pixel (nearest-pixel rule)."""
    if len(tgt) == 0:
        return tgt
    uv, z = cam.project(tgt.means)
    col = np.floor(uv[:, 0] + 0.5)
    row = np.floor(uv[:, 1] + 0.5)
    on_image = (z > near_plane) & (col >= 0) & (col < cam.width) & (row >= 0) & (row < cam.height)
    keep = np.zeros(len(tgt), dtype=bool)
    idx = np.flatnonzero(on_image)
    keep[idx] = mask.mask[row[idx].astype(np.int64), col[idx].astype(np.int64)]
    logging.info(f"Hole filter kept {int(keep.sum())} of {len(tgt)} target primitives")
    return tgt.subset(np.flatnonzero(keep))


def merge_scenes(ctx: GaussianScene, tgt_filtered: GaussianScene) -> GaussianScene:
    """
    Context first, then the new primitives tagged target.

    Primitives tagged target by an earlier merge become merged.
    """
    if len(tgt_filtered) == 0:
        return ctx
    codes = ctx.provenance.copy()
    codes[codes == Provenance.TARGET.code] = Provenance.MERGED.code
    previous = GaussianScene(ctx.means, ctx.rotations, ctx.scales, ctx.opacities, ctx.colors, codes)
    merged = previous.concat(tgt_filtered.with_provenance(Provenance.TARGET))
    logging.info(f"Merged {len(tgt_filtered)} target primitives into {len(ctx)} context primitives")
    return merged


def select_refinement_views(target: Camera, contexts: Sequence[Camera], n: int = 2) -> List[int]:
    """The n context views nearest the target by camera-center distance; ties by index."""
    distances = np.array([np.linalg.norm(target.center - c.center) for c in contexts])
    order = np.lexsort((np.arange(len(distances)), distances))
    return [int(i) for i in order[:n]]


def opacity_refine(merged: GaussianScene, new_indices: Sequence[int], target_cam: Camera,
                   reference_image: np.ndarray, context_cams: Sequence[Camera],
                   context_images: Sequence[np.ndarray], weights: Optional[LossWeights] = None,
                   iters: int = 30, lr: float = 0.08, settings: Optional[RenderSettings] = None,
                   optimizer: str = "gd", max_backoffs: int = 6) -> Tuple[GaussianScene, RefinementReport]:
    """
    Optimize only the opacities of `new_indices` against the multi-view loss.

    With lambda_mv_on == "target" the loss is
    lambda * L1(target render, reference) + sum_k L1(view k render, image k);
    with "context" lambda weights the context sum instead. Opacities are
    clamped to [0, 1] after every step. As in registration, steps follow
    the loss gradient times the target pixel count.
    """
    weights = weights or LossWeights()
    settings = settings or RenderSettings()
    new_indices = np.asarray(new_indices, dtype=np.int64)
    if len(new_indices) == 0:
        logging.warning("Opacity refinement called without new primitives; nothing to refine")
        return merged, RefinementReport(0.0, 0.0)
    if len(context_cams) != len(context_images):
        raise ValueError("context_cams and context_images differ in length")

    on_target = weights.lambda_mv_on == "target"
    views = [(target_cam, reference_image, weights.lambda_mv if on_target else 1.0)]
    views += [(cam, img, 1.0 if on_target else weights.lambda_mv) for cam, img in zip(context_cams, context_images)]
    start = time.perf_counter()
    pixel_count = float(target_cam.width * target_cam.height)

    def scene_with(alpha):
        opacities = merged.opacities.copy()
        opacities[new_indices] = alpha
        return merged.with_opacities(opacities)

    def evaluate(alpha):
        scene = scene_with(alpha)
        terms = {'target': 0.0, 'context': 0.0}
        grads = []
        for k, (cam, image, weight) in enumerate(views):
            if weight == 0.0:
                grads.append(None)
                continue
            value, g_rgb = image_l1(render(scene, cam, settings).rgb, image, weight)
            terms['target' if k == 0 else 'context'] += value
            grads.append(LossGradients(rgb=g_rgb))
        return terms['target'] + terms['context'], terms, (scene, grads)

    def gradient(alpha, state):
        scene, grads = state
        total = np.zeros(len(alpha))
        for (cam, _, _), g in zip(views, grads):
            if g is not None and not g.is_zero():
                total += backward_opacity(scene, cam, g, new_indices, settings)
        return pixel_count * total

    logging.info(f"Opacity-only refinement of {len(new_indices)} primitives over {len(views)} views, "
                 f"{iters} iterations, lr={lr}")
    result = run_descent(merged.opacities[new_indices], evaluate, gradient, DescentStepper(lr, optimizer),
                         iters, lower=0.0, upper=1.0, max_backoffs=max_backoffs, label="opacity refinement")
    report = RefinementReport(
        initial_loss=result.initial_loss, final_loss=result.final_loss, trace=result.trace,
        iterations_run=result.iterations_run, wall_time=time.perf_counter() - start,
        backoffs=result.backoffs, aborted=result.aborted, refined=len(new_indices),
    )
    logging.info(f"Refinement loss {report.initial_loss:.6g} -> {report.final_loss:.6g}")
    return scene_with(result.params), report
