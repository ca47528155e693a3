"""
Ray-constrained registration of lifted target primitives.

Every target primitive is pinned to the ray from the target camera center
through its projection, mu_i = c + d_i * r_i, and only the scalar distances
d_i are optimized against the context depth in the target and anchor views
and the reference image.
"""
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from model.camera import Camera
from model.config import LossWeights
from model.gaussian import GaussianScene
from pipeline.optim import DescentStepper, run_descent
from render.buffers import LossGradients
from render.losses import image_l1, masked_depth_l1
from render.rasterizer import RenderSettings, backward_ray_distance, render


class RegistrationError(Exception):
    """Custom exception for ray registration errors"""
    pass


@dataclass(frozen=True, eq=False)
class RayParameterization:
    """Target primitives indices[k] live at origin + distances[k] * directions[k]."""
    origin: np.ndarray
    directions: np.ndarray
    distances: np.ndarray
    indices: np.ndarray
    flagged: np.ndarray     # depth was invalid at the projection; pre-alignment distance kept
    excluded: int = 0

    def __len__(self) -> int:
        return len(self.distances)

    def positions(self) -> np.ndarray:
        return self.origin[None, :] + self.distances[:, None] * self.directions

    def with_distances(self, distances: np.ndarray) -> 'RayParameterization':
        return replace(self, distances=np.asarray(distances, dtype=np.float64))

    def apply(self, scene: GaussianScene) -> GaussianScene:
        """Scene with the parameterized means moved onto their rays."""
        means = scene.means.copy()
        means[self.indices] = self.positions()
        return scene.with_means(means)


@dataclass(frozen=True, eq=False)
class RegistrationReferences:
    image: np.ndarray           # reference image at the target view
    target_depth: np.ndarray    # context depth at the target view
    target_valid: np.ndarray
    anchor_depth: np.ndarray    # context depth at the anchor view
    anchor_valid: np.ndarray


@dataclass
class RegistrationReport:
    initial_loss: float
    final_loss: float
    trace: List[Dict[str, float]] = field(default_factory=list)
    iterations_run: int = 0
    wall_time: float = 0.0
    backoffs: int = 0
    rejected_steps: int = 0
    aborted: bool = False
    excluded: int = 0
    flagged: int = 0

    def to_dict(self, include_timing: bool = False) -> dict:
        out = {
            'initial_loss': self.initial_loss,
            'final_loss': self.final_loss,
            'trace': self.trace,
            'iterations_run': self.iterations_run,
            'backoffs': self.backoffs,
            'rejected_steps': self.rejected_steps,
            'aborted': self.aborted,
            'excluded': self.excluded,
            'flagged': self.flagged,
        }
        if include_timing:
            out['wall_time'] = self.wall_time
        return out


def unproject_to_ray_distance(depth_planar, ray_dir, principal_axis):
    """
    Ray distance d with planar depth (c + d r - c) . v = depth.

    Accepts scalars or matching arrays of depths and (N, 3) directions.

    Raises:
        RegistrationError("unprojection singular") for grazing rays (r . v <= 1e-3)
    """
    cos = np.asarray(ray_dir, dtype=np.float64) @ np.asarray(principal_axis, dtype=np.float64)
    if np.any(cos <= 1e-3):
        raise RegistrationError(f"unprojection singular: ray . axis = {np.min(cos):.3g}")
    out = np.asarray(depth_planar, dtype=np.float64) / cos
    return float(out) if np.ndim(out) == 0 else out


def _sample_depth(depth: np.ndarray, uv: np.ndarray, sampling: str) -> np.ndarray:
    h, w = depth.shape
    col = np.clip(np.floor(uv[:, 0] + 0.5).astype(np.int64), 0, w - 1)
    row = np.clip(np.floor(uv[:, 1] + 0.5).astype(np.int64), 0, h - 1)
    nearest = depth[row, col]
    if sampling == "nearest":
        return nearest

    u = np.clip(uv[:, 0], 0.0, w - 1.0)
    v = np.clip(uv[:, 1], 0.0, h - 1.0)
    c0 = np.minimum(np.floor(u).astype(np.int64), w - 2 if w > 1 else 0)
    r0 = np.minimum(np.floor(v).astype(np.int64), h - 2 if h > 1 else 0)
    c1, r1 = np.minimum(c0 + 1, w - 1), np.minimum(r0 + 1, h - 1)
    fu, fv = u - c0, v - r0
    bilinear = ((1 - fu) * (1 - fv) * depth[r0, c0] + fu * (1 - fv) * depth[r0, c1]
                + (1 - fu) * fv * depth[r1, c0] + fu * fv * depth[r1, c1])
    # any invalid corner falls back to the nearest sample
    return np.where(np.isfinite(bilinear), bilinear, nearest)


def parameterize_rays(tgt: GaussianScene, cam: Camera, aligned_depth: np.ndarray,
                      near_plane: float = 0.01,
                      sampling: str = "nearest") -> Tuple[GaussianScene, RayParameterization]:
    """
    Move each target primitive onto its camera ray at the aligned depth.

    Primitives without a pixel in `cam` are excluded (left where they are).
    Primitives over an invalid depth pixel keep their current distance and
    are flagged. Returns the updated scene and the parameterization.
    """
    uv, z = cam.project(tgt.means) if len(tgt) else (np.zeros((0, 2)), np.zeros(0))
    inside = ((z > near_plane)
              & (uv[:, 0] >= -0.5) & (uv[:, 0] < cam.width - 0.5)
              & (uv[:, 1] >= -0.5) & (uv[:, 1] < cam.height - 0.5))
    indices = np.flatnonzero(inside)
    excluded = len(tgt) - len(indices)
    if excluded:
        logging.warning(f"{excluded} target primitives have no pixel in the target view; excluded from registration")

    origin = cam.center
    directions = cam.pixel_rays(uv[indices]) if len(indices) else np.zeros((0, 3))
    current = np.linalg.norm(tgt.means[indices] - origin, axis=1)

    sampled = _sample_depth(np.asarray(aligned_depth, dtype=np.float64), uv[indices], sampling) \
        if len(indices) else np.zeros(0)
    flagged = ~np.isfinite(sampled)
    distances = current.copy()
    if np.any(~flagged):
        distances[~flagged] = unproject_to_ray_distance(sampled[~flagged], directions[~flagged],
                                                        cam.principal_axis)
    distances = np.maximum(distances, near_plane)
    if np.any(flagged):
        logging.warning(f"{int(flagged.sum())} target primitives over invalid depth keep their distance")

    rays = RayParameterization(origin=origin, directions=directions, distances=distances,
                               indices=indices, flagged=flagged, excluded=excluded)
    logging.info(f"Parameterized {len(rays)} target primitives on rays ({excluded} excluded)")
    return rays.apply(tgt), rays


def ray_constrained_optimize(ctx: GaussianScene, tgt: GaussianScene, rays: RayParameterization,
                             target_cam: Camera, anchor_cam: Camera, refs: RegistrationReferences,
                             weights: Optional[LossWeights] = None, iters: int = 50, lr: float = 0.01,
                             settings: Optional[RenderSettings] = None, optimizer: str = "gd",
                             max_backoffs: int = 6) -> Tuple[GaussianScene, RegistrationReport]:
    """
    Optimize the ray distances of the target primitives.

    Loss: lambda_d * depth L1 of the composite (ctx + tgt) render at the
    target view, lambda_s * depth L1 of the tgt-only render at the anchor
    view and lambda_c * image L1 of the composite render at the target view.
    Depth terms are means over pixels valid in both buffers. Steps follow
    the loss gradient times the target pixel count, so lr is a per-pixel
    step whatever the resolution.
    """
    weights = weights or LossWeights()
    settings = settings or RenderSettings()
    start = time.perf_counter()
    comp_indices = len(ctx) + rays.indices
    need_target = weights.lambda_d > 0 or weights.lambda_c > 0
    need_anchor = weights.lambda_s > 0
    pixel_count = float(target_cam.width * target_cam.height)

    def evaluate(d):
        moved = rays.with_distances(d).apply(tgt)
        terms = {'depth': 0.0, 'stereo': 0.0, 'rgb': 0.0}
        comp, grads_t, grads_a = None, None, None
        counts = [0, 0]
        if need_target:
            comp = ctx.concat(moved)
            buffers = render(comp, target_cam, settings)
            terms['depth'], g_depth, counts[0] = masked_depth_l1(
                buffers, refs.target_depth, refs.target_valid, weights.lambda_d)
            terms['rgb'], g_rgb = image_l1(buffers.rgb, refs.image, weights.lambda_c)
            grads_t = LossGradients(rgb=g_rgb, depth=g_depth)
        if need_anchor:
            buffers = render(moved, anchor_cam, settings)
            terms['stereo'], g_depth, counts[1] = masked_depth_l1(
                buffers, refs.anchor_depth, refs.anchor_valid, weights.lambda_s)
            grads_a = LossGradients(depth=g_depth)
        total = terms['depth'] + terms['stereo'] + terms['rgb']
        return total, terms, (moved, comp, grads_t, grads_a, counts)

    def gradient(d, state):
        moved, comp, grads_t, grads_a, _ = state
        current = rays.with_distances(d)
        grad = np.zeros(len(d))
        if grads_t is not None and not grads_t.is_zero():
            grad += backward_ray_distance(comp, target_cam, grads_t, current, comp_indices, settings)
        if grads_a is not None and not grads_a.is_zero():
            grad += backward_ray_distance(moved, anchor_cam, grads_a, current, rays.indices, settings)
        return pixel_count * grad

    if len(rays) == 0:
        logging.warning("No ray-parameterized target primitives; registration skipped")
        return tgt, RegistrationReport(0.0, 0.0, excluded=rays.excluded)

    _, _, (_, _, _, _, counts) = evaluate(rays.distances)
    if (weights.lambda_d > 0 or weights.lambda_s > 0) and counts == [0, 0]:
        logging.warning("Both depth terms have empty valid masks; registering on the rgb term only")

    logging.info(f"Ray-constrained registration: {len(rays)} distances, {iters} iterations, lr={lr}")
    result = run_descent(rays.distances, evaluate, gradient, DescentStepper(lr, optimizer), iters,
                         lower=settings.near_plane, max_backoffs=max_backoffs, label="ray registration")
    report = RegistrationReport(
        initial_loss=result.initial_loss, final_loss=result.final_loss, trace=result.trace,
        iterations_run=result.iterations_run, wall_time=time.perf_counter() - start,
        backoffs=result.backoffs, rejected_steps=result.rejected_steps, aborted=result.aborted,
        excluded=rays.excluded, flagged=int(rays.flagged.sum()),
    )
    logging.info(f"Registration loss {report.initial_loss:.6g} -> {report.final_loss:.6g} "
                 f"in {report.wall_time:.2f}s")
    return rays.with_distances(result.params).apply(tgt), report
