"""
Synthetic ground truth for the completion pipeline.

A seeded scene of flat Gaussians on textured surfaces, a camera trajectory,
and stand-ins for the two learned components the pipeline consumes: the
reference-image generator (a render of the truth, optionally degraded) and
the feed-forward lifting model (pixel-aligned primitives from the true
depth with controlled affine drift, ray noise and outliers).
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter

from model.camera import Camera
from model.gaussian import GaussianScene, Provenance, matrix_to_quaternion
from pipeline.anchor import relative_rotation_deg
from render.buffers import RenderBuffers
from render.rasterizer import RenderSettings, render

# x, y (down), z extents of the room preset
ROOM_BOUNDS = ((-2.0, 2.0), (-1.5, 1.5), (0.0, 5.0))
TERRAIN_BOUNDS = ((-4.0, 4.0), (0.6, 2.0), (0.0, 10.0))

PRESETS = ("room", "terrain")


@dataclass(frozen=True)
class CorruptionSpec:
    affine_scale: float = 1.0
    affine_shift: float = 0.0
    ray_noise_sigma: float = 0.0
    outlier_fraction: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.affine_scale <= 0:
            raise ValueError(f"affine_scale must be positive, got {self.affine_scale}")
        if self.ray_noise_sigma < 0:
            raise ValueError(f"ray_noise_sigma must be nonnegative, got {self.ray_noise_sigma}")
        if not 0.0 <= self.outlier_fraction <= 1.0:
            raise ValueError(f"outlier_fraction must lie in [0, 1], got {self.outlier_fraction}")

    @property
    def is_identity(self) -> bool:
        return (self.affine_scale == 1.0 and self.affine_shift == 0.0
                and self.ray_noise_sigma == 0.0 and self.outlier_fraction == 0.0)


@dataclass(frozen=True)
class StereoModel:
    """
    How lifting quality depends on the stereo pair.

    Depth noise grows as reference_baseline / baseline (at least 1, at most
    max_noise_gain); a pair rotated past gate_deg loses correspondence and
    its outlier fraction rises to failure_outlier_fraction.
    """
    reference_baseline: float = 2.0
    max_noise_gain: float = 8.0
    gate_deg: float = 45.0
    failure_outlier_fraction: float = 0.8

    def effective(self, spec: CorruptionSpec, baseline: float, rotation_deg: float) -> CorruptionSpec:
        gain = float(np.clip(self.reference_baseline / max(baseline, 1e-9), 1.0, self.max_noise_gain))
        outliers = spec.outlier_fraction
        if rotation_deg >= self.gate_deg:
            outliers = max(outliers, self.failure_outlier_fraction)
        return replace(spec, ray_noise_sigma=min(1.0, spec.ray_noise_sigma * gain), outlier_fraction=outliers)


@dataclass(frozen=True, eq=False)
class OracleScene:
    gt_scene: GaussianScene
    cameras: Tuple[Camera, ...]
    rng_seed: int
    preset: str = "custom"
    settings: RenderSettings = field(default_factory=RenderSettings)
    _renders: Dict[int, RenderBuffers] = field(default_factory=dict, repr=False)

    def gt_render(self, index: int) -> RenderBuffers:
        """Ground-truth render at camera `index`, computed once."""
        if index not in self._renders:
            self._renders[index] = render(self.gt_scene, self.cameras[index], self.settings)
        return self._renders[index]

    @property
    def gt_renders(self) -> List[RenderBuffers]:
        return [self.gt_render(i) for i in range(len(self.cameras))]

    @property
    def scene_diagonal(self) -> float:
        if self.preset == "room":
            return _bounds_diagonal(ROOM_BOUNDS)
        if self.preset == "terrain":
            return _bounds_diagonal(TERRAIN_BOUNDS)
        if len(self.gt_scene) == 0:
            return 1.0
        extent = self.gt_scene.means.max(axis=0) - self.gt_scene.means.min(axis=0)
        return float(max(np.linalg.norm(extent), 1e-9))


def _bounds_diagonal(bounds) -> float:
    return float(math.sqrt(sum((hi - lo) ** 2 for lo, hi in bounds)))


def _frames(tangent_u: np.ndarray, tangent_v: np.ndarray) -> np.ndarray:
    """Rotation matrices with columns (u, v, u x v) from per-primitive tangents."""
    u = tangent_u / np.linalg.norm(tangent_u, axis=1, keepdims=True)
    v = tangent_v - np.sum(tangent_v * u, axis=1, keepdims=True) * u
    v = v / np.linalg.norm(v, axis=1, keepdims=True)
    return np.stack([u, v, np.cross(u, v)], axis=2)


def _checker(a: np.ndarray, b: np.ndarray, period: float = 0.5) -> np.ndarray:
    return ((np.floor(a / period) + np.floor(b / period)) % 2).astype(np.float64)


def _room_surfaces(n: int, rng: np.random.Generator):
    (x0, x1), (y0, y1), (z0, z1) = ROOM_BOUNDS
    ex, ey, ez = np.eye(3)
    # origin, u axis, u length, v axis, v length, base color
    planes = [
        (np.array([x0, y0, z1]), ex, x1 - x0, ey, y1 - y0, np.array([0.85, 0.75, 0.55])),  # back wall
        (np.array([x0, y0, z0]), ez, z1 - z0, ey, y1 - y0, np.array([0.55, 0.70, 0.85])),  # left wall
        (np.array([x1, y0, z0]), ez, z1 - z0, ey, y1 - y0, np.array([0.80, 0.55, 0.60])),  # right wall
        (np.array([x0, y1, z0]), ex, x1 - x0, ez, z1 - z0, np.array([0.60, 0.50, 0.40])),  # floor
        (np.array([x0, y0, z0]), ex, x1 - x0, ez, z1 - z0, np.array([0.90, 0.90, 0.85])),  # ceiling
    ]
    areas = np.array([lu * lv for _, _, lu, _, lv, _ in planes])
    counts = rng.multinomial(n, areas / areas.sum())
    spacing = math.sqrt(areas.sum() / n)

    means, frames, colors = [], [], []
    for (origin, u_axis, lu, v_axis, lv, base), count in zip(planes, counts):
        if count == 0:
            continue
        a = rng.uniform(0.0, lu, count)
        b = rng.uniform(0.0, lv, count)
        means.append(origin[None, :] + a[:, None] * u_axis + b[:, None] * v_axis)
        frames.append(_frames(np.repeat(u_axis[None], count, 0), np.repeat(v_axis[None], count, 0)))
        shade = (0.65 + 0.35 * _checker(a, b))[:, None] + 0.05 * np.sin(3.0 * a)[:, None] * np.array([1.0, -1.0, 0.5])
        colors.append(np.clip(base[None, :] * shade, 0.0, 1.0))
    return np.concatenate(means), np.concatenate(frames), np.concatenate(colors), spacing


def _terrain_height(x: np.ndarray, z: np.ndarray):
    """Height (y, pointing down) and its partial derivatives."""
    y = 1.2 + 0.4 * np.sin(0.8 * x) * np.cos(0.6 * z) + 0.2 * np.sin(1.7 * x + 0.9 * z)
    dy_dx = 0.32 * np.cos(0.8 * x) * np.cos(0.6 * z) + 0.34 * np.cos(1.7 * x + 0.9 * z)
    dy_dz = -0.24 * np.sin(0.8 * x) * np.sin(0.6 * z) + 0.18 * np.cos(1.7 * x + 0.9 * z)
    return y, dy_dx, dy_dz


def _terrain_surfaces(n: int, rng: np.random.Generator):
    (x0, x1), _, (z0, z1) = TERRAIN_BOUNDS
    x = rng.uniform(x0, x1, n)
    z = rng.uniform(z0, z1, n)
    y, hx, hz = _terrain_height(x, z)
    means = np.stack([x, y, z], axis=1)
    tangent_x = np.stack([np.ones(n), hx, np.zeros(n)], axis=1)
    tangent_z = np.stack([np.zeros(n), hz, np.ones(n)], axis=1)
    low, high = np.array([0.35, 0.55, 0.25]), np.array([0.60, 0.50, 0.40])
    t = np.clip((y - 0.6) / 1.2, 0.0, 1.0)[:, None]
    colors = (1.0 - t) * high + t * low
    colors = np.clip(colors * (0.75 + 0.25 * _checker(x, z, 0.8))[:, None], 0.0, 1.0)
    spacing = math.sqrt((x1 - x0) * (z1 - z0) / n)
    return means, _frames(tangent_x, tangent_z), colors, spacing


def generate_trajectory(preset: str, length: int, focal: float, width: int, height: int,
                        yaw_step_deg: float = 1.4, max_step_rotation_deg: float = 5.0) -> List[Camera]:
    """
    Camera path with a constant yaw increment per frame.

    Room: lateral dolly half a unit outside the open front of the room.
    Terrain: forward flight with a small downward pitch.
    """
    if yaw_step_deg > max_step_rotation_deg:
        raise ValueError(f"yaw step {yaw_step_deg} exceeds the inter-frame bound {max_step_rotation_deg}")
    steps = max(length - 1, 1)
    yaw0 = -0.5 * yaw_step_deg * (length - 1)
    cameras = []
    for j in range(length):
        yaw = math.radians(yaw0 + j * yaw_step_deg)
        if preset == "room":
            eye = np.array([-1.2 + 2.4 * j / steps, 0.0, -0.5])
            forward = np.array([math.sin(yaw), 0.0, math.cos(yaw)])
        elif preset == "terrain":
            eye = np.array([-1.0 + 2.0 * j / steps, 0.0, 4.0 * j / steps])
            forward = np.array([math.sin(yaw), 0.3, math.cos(yaw)])
        else:
            raise ValueError(f"Unknown preset: {preset}")
        cameras.append(Camera.look_at(eye, eye + forward, fx=focal, width=width, height=height))
    return cameras


def generate_synthetic_scene(preset: str = "room", n_primitives: int = 4000, seed: int = 0,
                             trajectory_length: int = 51, width: int = 96, height: int = 96,
                             focal: float = 80.0, yaw_step_deg: float = 1.4,
                             max_step_rotation_deg: float = 5.0,
                             settings: Optional[RenderSettings] = None) -> OracleScene:
    """Seeded ground-truth scene and camera trajectory."""
    if n_primitives < 1:
        raise ValueError("n_primitives must be at least 1")
    rng = np.random.default_rng(seed)
    if preset == "room":
        means, frames, colors, spacing = _room_surfaces(n_primitives, rng)
    elif preset == "terrain":
        means, frames, colors, spacing = _terrain_surfaces(n_primitives, rng)
    else:
        raise ValueError(f"Unknown preset: {preset}")

    tangent = 0.5 * spacing
    scales = np.tile([tangent, tangent, 0.1 * tangent], (len(means), 1))
    scene = GaussianScene.from_arrays(
        means=means,
        rotations=matrix_to_quaternion(frames),
        scales=scales,
        opacities=rng.uniform(0.8, 0.95, len(means)),
        colors=colors,
    )
    cameras = generate_trajectory(preset, trajectory_length, focal, width, height,
                                  yaw_step_deg, max_step_rotation_deg)
    logging.info(f"Generated {preset} scene: {len(scene)} primitives, {len(cameras)} cameras, seed {seed}")
    return OracleScene(scene, tuple(cameras), seed, preset, settings or RenderSettings())


def visible_in(scene: GaussianScene, cam: Camera, near_plane: float = 0.01) -> np.ndarray:
    """Primitives whose mean projects onto a pixel of cam."""
    if len(scene) == 0:
        return np.zeros(0, dtype=bool)
    uv, z = cam.project(scene.means)
    return ((z > near_plane) & (uv[:, 0] >= -0.5) & (uv[:, 0] < cam.width - 0.5)
            & (uv[:, 1] >= -0.5) & (uv[:, 1] < cam.height - 0.5))


def reconstruct_context(gt_scene: GaussianScene, cameras: Sequence[Camera], ray_stretch: float = 0.1,
                        near_plane: float = 0.01) -> GaussianScene:
    """
    Context reconstruction from a few views.

    Keeps the primitives seen by at least one view. Those seen by exactly one
    view are elongated along that view's ray (sigma = ray_stretch * distance):
    unchanged in that view, smeared in any other.
    """
    seen = np.stack([visible_in(gt_scene, cam, near_plane) for cam in cameras])
    keep = np.flatnonzero(seen.any(axis=0))
    ctx = gt_scene.subset(keep).with_provenance(Provenance.CONTEXT)
    single = seen[:, keep].sum(axis=0) == 1
    if ray_stretch <= 0 or not np.any(single):
        return ctx

    idx = np.flatnonzero(single)
    view = np.argmax(seen[:, keep][:, idx], axis=0)
    centers = np.stack([cam.center for cam in cameras])[view]
    offset = ctx.means[idx] - centers
    dist = np.linalg.norm(offset, axis=1)
    rays = offset / dist[:, None]
    cov = ctx.covariances()[idx] + ((ray_stretch * dist) ** 2)[:, None, None] * rays[:, :, None] * rays[:, None, :]
    eigvals, eigvecs = np.linalg.eigh(cov)
    flip = np.linalg.det(eigvecs) < 0
    eigvecs[flip, :, 0] *= -1.0

    rotations = ctx.rotations.copy()
    scales = ctx.scales.copy()
    rotations[idx] = matrix_to_quaternion(eigvecs)
    scales[idx] = np.sqrt(np.maximum(eigvals, 1e-12))
    logging.info(f"Context reconstruction: {len(ctx)} primitives, {len(idx)} seen by a single view")
    return GaussianScene(ctx.means, rotations, scales, ctx.opacities, ctx.colors, ctx.provenance)


def make_reference_image(gt_scene: GaussianScene, target_cam: Camera, blur_sigma: float = 0.0,
                         noise: float = 0.0, seed: int = 0,
                         settings: Optional[RenderSettings] = None,
                         clean: Optional[np.ndarray] = None) -> np.ndarray:
    """Render of the truth at the target view, optionally blurred (sigma px) and noised."""
    image = render(gt_scene, target_cam, settings).rgb if clean is None else np.array(clean, copy=True)
    if blur_sigma > 0:
        image = gaussian_filter(image, sigma=(blur_sigma, blur_sigma, 0))
    if noise > 0:
        image = np.clip(image + np.random.default_rng(seed).normal(0.0, noise, image.shape), 0.0, 1.0)
    return image


def pixel_aligned_primitives(buffers: RenderBuffers, cam: Camera, stride: int = 2,
                             opacity: float = 0.9) -> Tuple[GaussianScene, np.ndarray]:
    """
    One ray-facing disc per strided pixel with valid depth, unprojected from the buffers.

    Returns the scene (tagged target) and each primitive's ray distance.
    """
    rows, cols = np.mgrid[0:cam.height:stride, 0:cam.width:stride]
    rows, cols = rows.ravel(), cols.ravel()
    depth = buffers.depth[rows, cols]
    ok = np.isfinite(depth) & (buffers.alpha[rows, cols] > 0.5)
    rows, cols, depth = rows[ok], cols[ok], depth[ok]
    if len(rows) == 0:
        return GaussianScene.empty(), np.zeros(0)

    pixels = np.stack([cols, rows], axis=1).astype(np.float64)
    rays = cam.pixel_rays(pixels)
    distances = depth / (rays @ cam.principal_axis)
    means = cam.center[None, :] + distances[:, None] * rays

    # local z of each disc along its ray
    u = np.cross(np.tile(cam.rotation[1], (len(rays), 1)), rays)
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    frames = np.stack([u, np.cross(rays, u), rays], axis=2)
    tangent = 0.5 * stride * depth / cam.fx
    scales = np.stack([tangent, tangent, 0.2 * tangent], axis=1)
    scene = GaussianScene.from_arrays(
        means=means,
        rotations=matrix_to_quaternion(frames),
        scales=scales,
        opacities=np.full(len(means), opacity),
        colors=np.clip(buffers.rgb[rows, cols], 0.0, 1.0),
        tag=Provenance.TARGET,
    )
    return scene, distances


def corrupt_target_prediction(gt_target: GaussianScene, target_cam: Camera, spec: CorruptionSpec,
                              near_plane: float = 0.01) -> GaussianScene:
    """
    Move each primitive along its target ray to a corrupted distance.

    Planar depth becomes (z - shift) / scale, then multiplicative noise
    (1 + N(0, sigma)) on the distance, then outlier_fraction of the
    primitives are redrawn uniformly over the set's distance range.
    """
    if len(gt_target) == 0 or spec.is_identity:
        return gt_target.with_provenance(Provenance.TARGET)
    rng = np.random.default_rng(spec.rng_seed)
    origin = target_cam.center
    offset = gt_target.means - origin
    d = np.linalg.norm(offset, axis=1)
    rays = offset / d[:, None]

    d_pred = d.copy()
    if spec.affine_scale != 1.0 or spec.affine_shift != 0.0:
        cos = rays @ target_cam.principal_axis
        d_pred = (d * cos - spec.affine_shift) / spec.affine_scale / cos
    if spec.ray_noise_sigma > 0:
        d_pred = d_pred * (1.0 + rng.normal(0.0, spec.ray_noise_sigma, len(d)))
    if spec.outlier_fraction > 0:
        k = int(round(spec.outlier_fraction * len(d)))
        chosen = rng.choice(len(d), size=k, replace=False)
        d_pred[chosen] = rng.uniform(d.min(), d.max(), k)
    d_pred = np.maximum(d_pred, near_plane)

    means = gt_target.means + (d_pred - d)[:, None] * rays
    logging.debug(f"Corrupted {len(d)} target primitives: mean |delta d| = {np.mean(np.abs(d_pred - d)):.4f}")
    return gt_target.with_means(means).with_provenance(Provenance.TARGET)


def predict_view_depth(gt_depth: np.ndarray, spec: CorruptionSpec, rng: np.random.Generator) -> np.ndarray:
    """Dense predicted depth of one view: (D - shift) / scale with per-pixel noise and outliers."""
    depth = (np.asarray(gt_depth, dtype=np.float64) - spec.affine_shift) / spec.affine_scale
    valid = np.isfinite(depth)
    if spec.ray_noise_sigma > 0:
        depth = depth * (1.0 + rng.normal(0.0, spec.ray_noise_sigma, depth.shape))
    if spec.outlier_fraction > 0 and np.any(valid):
        values = depth[valid]
        pick = rng.random(depth.shape) < spec.outlier_fraction
        pick &= valid
        depth[pick] = rng.uniform(values.min(), values.max(), int(pick.sum()))
    return depth


def primitive_depth_buffer(scene: GaussianScene, cam: Camera, near_plane: float = 0.01) -> np.ndarray:
    """Planar depth of each primitive's mean at its nearest pixel (front-most wins); NaN elsewhere."""
    out = np.full((cam.height, cam.width), np.inf)
    if len(scene):
        uv, z = cam.project(scene.means)
        col = np.floor(uv[:, 0] + 0.5)
        row = np.floor(uv[:, 1] + 0.5)
        ok = (z > near_plane) & (col >= 0) & (col < cam.width) & (row >= 0) & (row < cam.height)
        np.minimum.at(out, (row[ok].astype(np.int64), col[ok].astype(np.int64)), z[ok])
    out[np.isinf(out)] = np.nan
    return out


@dataclass(frozen=True, eq=False)
class CompletionCase:
    """One extrapolation instance: a context reconstruction and an unobserved target view."""
    oracle: OracleScene
    context_indices: Tuple[int, ...]
    context_scene: GaussianScene
    context_cams: Tuple[Camera, ...]
    context_images: Tuple[np.ndarray, ...]
    target_index: int
    target_cam: Camera
    target_image: np.ndarray        # clean truth at the target view
    gt_target: GaussianScene        # pixel-aligned truth at the target view
    gt_distances: np.ndarray
    lift_stride: int = 2

    @property
    def scene_diagonal(self) -> float:
        return self.oracle.scene_diagonal


@dataclass(frozen=True, eq=False)
class LiftedTarget:
    scene: GaussianScene
    target_depth: np.ndarray    # predicted planar depth at the target view
    anchor_depth: np.ndarray    # predicted planar depth at the anchor view
    spec: CorruptionSpec


def build_completion_case(oracle: OracleScene, context_indices: Sequence[int], target_index: int,
                          ray_stretch: float = 0.1, lift_stride: int = 2,
                          context_scene: Optional[GaussianScene] = None,
                          context_cams: Optional[Sequence[Camera]] = None,
                          context_images: Optional[Sequence[np.ndarray]] = None) -> CompletionCase:
    """
    Assemble the inputs of one completion step.

    By default the context is reconstructed from the oracle views in
    `context_indices`; an explicit context scene, cameras and images (as
    produced by an earlier step) replace it.
    """
    if target_index in context_indices:
        raise ValueError(f"target view {target_index} is also a context view")
    target_cam = oracle.cameras[target_index]
    if context_cams is None:
        context_cams = [oracle.cameras[i] for i in context_indices]
        context_images = [oracle.gt_render(i).rgb for i in context_indices]
    if context_scene is None:
        context_scene = reconstruct_context(oracle.gt_scene, context_cams, ray_stretch, oracle.settings.near_plane)

    truth = oracle.gt_render(target_index)
    gt_target, gt_distances = pixel_aligned_primitives(truth, target_cam, lift_stride)
    logging.info(f"Completion case: contexts {list(context_indices)}, target {target_index}, "
                 f"{len(context_scene)} context and {len(gt_target)} target primitives")
    return CompletionCase(
        oracle=oracle, context_indices=tuple(int(i) for i in context_indices), context_scene=context_scene,
        context_cams=tuple(context_cams), context_images=tuple(context_images), target_index=int(target_index),
        target_cam=target_cam, target_image=truth.rgb,
        gt_target=gt_target, gt_distances=gt_distances, lift_stride=lift_stride,
    )


def lift_target(case: CompletionCase, anchor_cam: Camera, spec: CorruptionSpec,
                stereo: Optional[StereoModel] = None) -> LiftedTarget:
    """
    Feed-forward lifting stand-in for the (reference image, anchor) pair.

    Noise and outlier levels follow the stereo geometry of the pair.
    """
    stereo = stereo or StereoModel()
    baseline = float(np.linalg.norm(case.target_cam.center - anchor_cam.center))
    rotation = relative_rotation_deg(case.target_cam, anchor_cam)
    effective = stereo.effective(spec, baseline, rotation)
    logging.info(f"Lifting with baseline {baseline:.3f}, rotation {rotation:.1f} deg: "
                 f"noise {effective.ray_noise_sigma:.3f}, outliers {effective.outlier_fraction:.2f}")

    near = case.oracle.settings.near_plane
    scene = corrupt_target_prediction(case.gt_target, case.target_cam, effective, near)
    anchor_truth = render(case.oracle.gt_scene, anchor_cam, case.oracle.settings).depth
    anchor_depth = predict_view_depth(anchor_truth, effective, np.random.default_rng(effective.rng_seed + 1))
    return LiftedTarget(scene, primitive_depth_buffer(scene, case.target_cam, near), anchor_depth, effective)


def target_hole_fraction(case: CompletionCase, tau: float = 0.5) -> float:
    """Share of the target view the context leaves unobserved."""
    alpha = render(case.context_scene, case.target_cam, case.oracle.settings).alpha
    return float(np.mean(alpha < tau))
