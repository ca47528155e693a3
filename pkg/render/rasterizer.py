"""
Tile-based CPU splat rasterizer.

Forward: EWA projection, global front-to-back sort by camera depth (ties by
primitive index), per-tile alpha compositing. Backward: analytic gradients
of a per-pixel loss with respect to primitive means and opacities, reduced
per tile and merged in tile index order so results are bit-reproducible
regardless of the worker count.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from model.camera import Camera
from model.gaussian import GaussianPrimitive, GaussianScene, GeometryError
from render.buffers import LossGradients, RenderBuffers


GUARD_BAND = 1.3


class RenderError(Exception):
    """Custom exception for renderer contract violations"""
    pass


@dataclass(frozen=True)
class RenderSettings:
    near_plane: float = 0.01
    lowpass_eps: float = 0.3
    max_alpha: float = 0.99
    min_transmittance: float = 1e-4
    min_depth_alpha: float = 1e-6
    tile_size: int = 16
    # Mahalanobis support radius of a splat, also the visibility border margin
    cutoff_sigma: float = 3.0
    workers: int = 0


@dataclass(frozen=True)
class SplatProjection:
    mean2d: np.ndarray
    cov2d: np.ndarray
    z_cam: float
    visible: bool


@dataclass(frozen=True, eq=False)
class ProjectedSplats:
    """Visible splats of one scene in one camera, sorted front to back."""
    index: np.ndarray       # scene index of each splat
    t_cam: np.ndarray       # (M, 3) camera-space means
    mean2d: np.ndarray      # (M, 2)
    conic: np.ndarray       # (M, 3) inverse cov2d entries (a, b, c)
    cov2d: np.ndarray       # (M, 2, 2)
    jacobian: np.ndarray    # (M, 2, 3)
    cov_cam: np.ndarray     # (M, 3, 3) R Sigma R^T
    radius: np.ndarray      # (M,) pixel support radius
    opacity: np.ndarray
    color: np.ndarray

    def __len__(self) -> int:
        return len(self.index)

    @property
    def depth(self) -> np.ndarray:
        return self.t_cam[:, 2]


def _project_arrays(means: np.ndarray, covariances: np.ndarray, cam: Camera, settings: RenderSettings):
    """Projection of every primitive; rows behind the near plane are computed at the plane and flagged."""
    t = means @ cam.rotation.T + cam.translation
    z = t[:, 2]
    in_front = z > settings.near_plane
    zs = np.where(in_front, z, settings.near_plane)

    mean2d = np.stack([cam.fx * t[:, 0] / zs + cam.cx, cam.fy * t[:, 1] / zs + cam.cy], axis=1)

    # guard band: the Jacobian saturates at 1.3x the half field of view
    lim_x = GUARD_BAND * 0.5 * cam.width / cam.fx
    lim_y = GUARD_BAND * 0.5 * cam.height / cam.fy
    x_ratio = t[:, 0] / zs
    y_ratio = t[:, 1] / zs
    jac = np.zeros((len(means), 2, 3))
    jac[:, 0, 0] = cam.fx / zs
    jac[:, 0, 2] = -cam.fx * np.clip(x_ratio, -lim_x, lim_x) / zs
    jac[:, 1, 1] = cam.fy / zs
    jac[:, 1, 2] = -cam.fy * np.clip(y_ratio, -lim_y, lim_y) / zs

    cov_cam = cam.rotation[None] @ covariances @ cam.rotation.T[None]
    cov2d = jac @ cov_cam @ np.transpose(jac, (0, 2, 1))
    cov2d = 0.5 * (cov2d + np.transpose(cov2d, (0, 2, 1)))
    cov2d[:, 0, 0] += settings.lowpass_eps
    cov2d[:, 1, 1] += settings.lowpass_eps

    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    half_trace = 0.5 * (a + c)
    lambda_max = half_trace + np.sqrt(np.maximum(half_trace ** 2 - (a * c - b * b), 0.0))
    radius = settings.cutoff_sigma * np.sqrt(lambda_max)

    # visible splats never reach the saturated Jacobian; the backward pass relies on it
    visible = (
        in_front
        & (np.abs(x_ratio) <= lim_x) & (np.abs(y_ratio) <= lim_y)
        & (mean2d[:, 0] > -0.5 - radius) & (mean2d[:, 0] < cam.width - 0.5 + radius)
        & (mean2d[:, 1] > -0.5 - radius) & (mean2d[:, 1] < cam.height - 0.5 + radius)
    )
    return t, mean2d, jac, cov_cam, cov2d, radius, visible


def project_gaussian(prim: GaussianPrimitive, cam: Camera,
                     settings: Optional[RenderSettings] = None) -> SplatProjection:
    """EWA projection of one primitive: cov2d = J W Sigma W^T J^T + eps I."""
    settings = settings or RenderSettings()
    mean = np.asarray(prim.mean, dtype=np.float64)
    if not np.all(np.isfinite(mean)):
        raise GeometryError("primitive mean contains non-finite values")
    cov = prim.covariance
    t, mean2d, _, _, cov2d, _, visible = _project_arrays(mean[None], cov[None], cam, settings)
    return SplatProjection(mean2d=mean2d[0], cov2d=cov2d[0], z_cam=float(t[0, 2]), visible=bool(visible[0]))


def project_scene(scene: GaussianScene, cam: Camera, settings: Optional[RenderSettings] = None) -> ProjectedSplats:
    """Project all primitives, keep the visible ones, sort by (depth, index)."""
    settings = settings or RenderSettings()
    n = len(scene)
    if n == 0:
        empty2 = np.zeros((0, 2))
        return ProjectedSplats(np.zeros(0, dtype=np.int64), np.zeros((0, 3)), empty2, np.zeros((0, 3)),
                               np.zeros((0, 2, 2)), np.zeros((0, 2, 3)), np.zeros((0, 3, 3)),
                               np.zeros(0), np.zeros(0), np.zeros((0, 3)))
    t, mean2d, jac, cov_cam, cov2d, radius, visible = _project_arrays(
        scene.means, scene.covariances(), cam, settings)

    index = np.flatnonzero(visible)
    order = np.lexsort((index, t[index, 2]))
    index = index[order]

    cov = cov2d[index]
    det = cov[:, 0, 0] * cov[:, 1, 1] - cov[:, 0, 1] ** 2
    # eps regularization keeps det > 0; anything else is skipped
    ok = det > 1e-12
    if not np.all(ok):
        logging.warning(f"Skipping {int(np.sum(~ok))} splats with singular 2D covariance")
        index, cov, det = index[ok], cov[ok], det[ok]
    conic = np.stack([cov[:, 1, 1] / det, -cov[:, 0, 1] / det, cov[:, 0, 0] / det], axis=1)

    return ProjectedSplats(
        index=index, t_cam=t[index], mean2d=mean2d[index], conic=conic, cov2d=cov,
        jacobian=jac[index], cov_cam=cov_cam[index], radius=radius[index],
        opacity=scene.opacities[index], color=scene.colors[index],
    )


@dataclass(frozen=True, eq=False)
class _TileBins:
    tiles_x: int
    tiles_y: int
    tile_ids: np.ndarray    # non-empty tiles in ascending order
    starts: np.ndarray
    ends: np.ndarray
    splats: np.ndarray      # splat ids grouped by tile, front to back within a tile


def _bin_splats(proj: ProjectedSplats, cam: Camera, tile_size: int) -> _TileBins:
    tiles_x = -(-cam.width // tile_size)
    tiles_y = -(-cam.height // tile_size)
    m = len(proj)
    if m == 0:
        empty = np.zeros(0, dtype=np.int64)
        return _TileBins(tiles_x, tiles_y, empty, empty, empty, empty)

    u, v, r = proj.mean2d[:, 0], proj.mean2d[:, 1], proj.radius
    x0 = np.clip(np.ceil(u - r), 0, cam.width - 1).astype(np.int64)
    x1 = np.clip(np.floor(u + r), 0, cam.width - 1).astype(np.int64)
    y0 = np.clip(np.ceil(v - r), 0, cam.height - 1).astype(np.int64)
    y1 = np.clip(np.floor(v + r), 0, cam.height - 1).astype(np.int64)
    empty = (np.floor(u + r) < np.ceil(u - r)) | (np.floor(v + r) < np.ceil(v - r)) \
        | (u + r < 0) | (u - r > cam.width - 1) | (v + r < 0) | (v - r > cam.height - 1)

    tx0, tx1 = x0 // tile_size, x1 // tile_size
    ty0, ty1 = y0 // tile_size, y1 // tile_size
    n_tx = tx1 - tx0 + 1
    counts = np.where(empty, 0, n_tx * (ty1 - ty0 + 1))

    splat = np.repeat(np.arange(m), counts)
    offset = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    tile = (ty0[splat] + offset // n_tx[splat]) * tiles_x + tx0[splat] + offset % n_tx[splat]

    order = np.lexsort((splat, tile))
    tile, splat = tile[order], splat[order]
    tile_ids, starts = np.unique(tile, return_index=True)
    ends = np.append(starts[1:], len(tile))
    return _TileBins(tiles_x, tiles_y, tile_ids, starts, ends, splat)


def _tile_pixels(tile_id: int, bins: _TileBins, cam: Camera, tile_size: int):
    ty, tx = divmod(int(tile_id), bins.tiles_x)
    ys = np.arange(ty * tile_size, min((ty + 1) * tile_size, cam.height))
    xs = np.arange(tx * tile_size, min((tx + 1) * tile_size, cam.width))
    yy, xx = np.meshgrid(ys, xs, indexing='ij')
    return ys, xs, np.stack([xx.ravel(), yy.ravel()], axis=1).astype(np.float64)


def _composite(pixels: np.ndarray, ids: np.ndarray, proj: ProjectedSplats, settings: RenderSettings):
    """Per-pixel compositing terms for one tile; columns follow front-to-back order."""
    dx = pixels[:, 0:1] - proj.mean2d[ids, 0][None, :]
    dy = pixels[:, 1:2] - proj.mean2d[ids, 1][None, :]
    ca, cb, cc = proj.conic[ids, 0], proj.conic[ids, 1], proj.conic[ids, 2]
    power = ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy
    g = np.where(power <= settings.cutoff_sigma ** 2, np.exp(-0.5 * power), 0.0)
    raw = proj.opacity[ids][None, :] * g
    a = np.minimum(raw, settings.max_alpha)
    trans = np.cumprod(1.0 - a, axis=1)
    trans = np.concatenate([np.ones((len(pixels), 1)), trans[:, :-1]], axis=1)
    live = trans >= settings.min_transmittance
    w = np.where(live, trans * a, 0.0)
    return dx, dy, g, raw, a, trans, live, w


def _map_tiles(fn, tile_ids, workers: int):
    if workers and workers > 1 and len(tile_ids) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, tile_ids))
    return [fn(t) for t in tile_ids]


def render(scene: GaussianScene, cam: Camera, settings: Optional[RenderSettings] = None) -> RenderBuffers:
    """Alpha-composite the scene front to back into rgb, expected depth and accumulated alpha."""
    settings = settings or RenderSettings()
    proj = project_scene(scene, cam, settings)
    bins = _bin_splats(proj, cam, settings.tile_size)

    rgb = np.zeros((cam.height, cam.width, 3))
    alpha = np.zeros((cam.height, cam.width))
    numer = np.zeros((cam.height, cam.width))

    def tile_pass(k):
        tile_id = bins.tile_ids[k]
        ids = bins.splats[bins.starts[k]:bins.ends[k]]
        ys, xs, pixels = _tile_pixels(tile_id, bins, cam, settings.tile_size)
        *_, w = _composite(pixels, ids, proj, settings)
        shape = (len(ys), len(xs))
        return (ys, xs, (w @ proj.color[ids]).reshape(shape + (3,)),
                w.sum(axis=1).reshape(shape), (w @ proj.depth[ids]).reshape(shape))

    for ys, xs, tile_rgb, tile_alpha, tile_numer in _map_tiles(tile_pass, range(len(bins.tile_ids)),
                                                               settings.workers):
        rgb[ys[0]:ys[-1] + 1, xs[0]:xs[-1] + 1] = tile_rgb
        alpha[ys[0]:ys[-1] + 1, xs[0]:xs[-1] + 1] = tile_alpha
        numer[ys[0]:ys[-1] + 1, xs[0]:xs[-1] + 1] = tile_numer

    valid = alpha > settings.min_depth_alpha
    depth = np.full_like(alpha, np.nan)
    depth[valid] = numer[valid] / alpha[valid]
    return RenderBuffers(rgb=rgb, depth=depth, alpha=np.clip(alpha, 0.0, 1.0))


@dataclass(frozen=True, eq=False)
class PrimitiveGradients:
    means: np.ndarray       # (N, 3) dL/dmu
    opacities: np.ndarray   # (N,) dL/dalpha


def render_gradients(scene: GaussianScene, cam: Camera, loss_grads: LossGradients,
                     settings: Optional[RenderSettings] = None,
                     active: Optional[np.ndarray] = None) -> PrimitiveGradients:
    """
    Analytic dL/dmu and dL/dalpha for a loss whose per-pixel gradients are given.

    The support cutoff, the alpha clamp, early termination and depth validity
    are held fixed (they are piecewise constant). Only primitives flagged in
    `active` (default: all) receive gradients.
    """
    settings = settings or RenderSettings()
    n = len(scene)
    grad_means = np.zeros((n, 3))
    grad_opacity = np.zeros(n)
    if n == 0 or loss_grads.is_zero():
        return PrimitiveGradients(grad_means, grad_opacity)

    g_rgb, g_depth, g_alpha = loss_grads.resolved(cam.height, cam.width)
    proj = project_scene(scene, cam, settings)
    bins = _bin_splats(proj, cam, settings.tile_size)
    active_mask = np.ones(n, dtype=bool) if active is None else np.asarray(active, dtype=bool)
    splat_active = active_mask[proj.index]

    def tile_pass(k):
        ids = bins.splats[bins.starts[k]:bins.ends[k]]
        cols = splat_active[ids]
        if not np.any(cols):
            return None
        ys, xs, pixels = _tile_pixels(bins.tile_ids[k], bins, cam, settings.tile_size)
        dx, dy, g, raw, a, trans, live, w = _composite(pixels, ids, proj, settings)

        rows = (slice(ys[0], ys[-1] + 1), slice(xs[0], xs[-1] + 1))
        p_rgb = g_rgb[rows].reshape(-1, 3)
        p_depth = g_depth[rows].reshape(-1)
        p_alpha = g_alpha[rows].reshape(-1)

        acc = w.sum(axis=1)
        valid = acc > settings.min_depth_alpha
        safe_acc = np.where(valid, acc, 1.0)
        z = proj.depth[ids]
        depth = np.where(valid, (w @ z) / safe_acc, 0.0)
        gd = np.where(valid, p_depth, 0.0) / safe_acc

        # dL/dw for every (pixel, splat)
        dl_dw = p_rgb @ proj.color[ids].T + p_alpha[:, None] + gd[:, None] * (z[None, :] - depth[:, None])
        contrib = w * dl_dw
        behind = np.cumsum(contrib[:, ::-1], axis=1)[:, ::-1] - contrib
        dl_da = np.where(live, trans * dl_dw - behind / (1.0 - a), 0.0)
        dl_draw = np.where(raw < settings.max_alpha, dl_da, 0.0)

        dl_draw = dl_draw[:, cols]
        g = g[:, cols]
        dx, dy = dx[:, cols], dy[:, cols]
        local = ids[cols]

        d_opacity = np.sum(dl_draw * g, axis=0)
        q = dl_draw * g * proj.opacity[local][None, :]
        ca, cb, cc = proj.conic[local, 0], proj.conic[local, 1], proj.conic[local, 2]
        qdx = ca * dx + cb * dy
        qdy = cb * dx + cc * dy
        d_mean2d = np.stack([np.sum(q * qdx, axis=0), np.sum(q * qdy, axis=0)], axis=1)
        d_conic = -0.5 * np.stack([np.sum(q * dx * dx, axis=0), np.sum(q * dx * dy, axis=0),
                                   np.sum(q * dy * dy, axis=0)], axis=1)
        d_z = np.sum(w[:, cols] * gd[:, None], axis=0)
        return local, d_opacity, d_mean2d, d_conic, d_z

    m = len(proj)
    acc_opacity = np.zeros(m)
    acc_mean2d = np.zeros((m, 2))
    acc_conic = np.zeros((m, 3))
    acc_z = np.zeros(m)
    # fixed merge order: tile index
    for part in _map_tiles(tile_pass, range(len(bins.tile_ids)), settings.workers):
        if part is None:
            continue
        local, d_opacity, d_mean2d, d_conic, d_z = part
        acc_opacity[local] += d_opacity
        acc_mean2d[local] += d_mean2d
        acc_conic[local] += d_conic
        acc_z[local] += d_z

    grad_t = _camera_space_gradient(proj, cam, acc_mean2d, acc_conic, acc_z)
    grad_means[proj.index] = grad_t @ cam.rotation
    grad_opacity[proj.index] = acc_opacity
    grad_means[~active_mask] = 0.0
    grad_opacity[~active_mask] = 0.0
    return PrimitiveGradients(grad_means, grad_opacity)


def _symmetric2(entries: np.ndarray) -> np.ndarray:
    """(M, 3) entries (xx, xy, yy) to (M, 2, 2) symmetric matrices."""
    out = np.empty((len(entries), 2, 2))
    out[:, 0, 0] = entries[:, 0]
    out[:, 0, 1] = entries[:, 1]
    out[:, 1, 0] = entries[:, 1]
    out[:, 1, 1] = entries[:, 2]
    return out


def _camera_space_gradient(proj: ProjectedSplats, cam: Camera, d_mean2d: np.ndarray,
                           d_conic: np.ndarray, d_z: np.ndarray) -> np.ndarray:
    """Chain dL/d(mean2d), dL/d(conic), dL/dz back to camera-space means."""
    m = len(proj)
    tx, ty, tz = proj.t_cam[:, 0], proj.t_cam[:, 1], proj.t_cam[:, 2]
    fx, fy = cam.fx, cam.fy

    grad = np.zeros((m, 3))
    grad[:, 0] += d_mean2d[:, 0] * fx / tz
    grad[:, 1] += d_mean2d[:, 1] * fy / tz
    grad[:, 2] += -d_mean2d[:, 0] * fx * tx / tz ** 2 - d_mean2d[:, 1] * fy * ty / tz ** 2
    grad[:, 2] += d_z

    # conic Q = cov2d^-1: dL/dcov2d = -Q G Q
    q = _symmetric2(proj.conic)
    g_cov = -q @ _symmetric2(d_conic) @ q

    # d cov2d / dt_k = dJ_k M J^T + (dJ_k M J^T)^T
    dj = np.zeros((m, 3, 2, 3))
    dj[:, 0, 0, 2] = -fx / tz ** 2
    dj[:, 1, 1, 2] = -fy / tz ** 2
    dj[:, 2, 0, 0] = -fx / tz ** 2
    dj[:, 2, 0, 2] = 2.0 * fx * tx / tz ** 3
    dj[:, 2, 1, 1] = -fy / tz ** 2
    dj[:, 2, 1, 2] = 2.0 * fy * ty / tz ** 3
    mj = proj.cov_cam @ np.transpose(proj.jacobian, (0, 2, 1))
    half = np.einsum('mkab,mbc->mkac', dj, mj)
    grad += 2.0 * np.einsum('mac,mkac->mk', g_cov, half)
    return grad


def backward_ray_distance(scene: GaussianScene, cam: Camera, loss_grads: LossGradients,
                          rays, indices: Sequence[int],
                          settings: Optional[RenderSettings] = None) -> np.ndarray:
    """
    dL/dd_i = (dL/dmu_i) . r_i for the ray-parameterized primitives `indices`.

    `rays` is the RayParameterization whose i-th entry belongs to scene
    primitive indices[i]. Returns one value per ray.

    Raises:
        RenderError("not ray-parameterized") when a primitive has no matching ray
    """
    indices = np.asarray(indices, dtype=np.int64)
    if len(indices) != len(rays.distances):
        raise RenderError(f"not ray-parameterized: {len(indices)} primitives for {len(rays.distances)} rays")
    if len(indices) and (indices.min() < 0 or indices.max() >= len(scene)):
        raise RenderError("not ray-parameterized: primitive index out of range")
    expected = rays.positions()
    if len(indices) and np.abs(scene.means[indices] - expected).max() > 1e-4:
        raise RenderError("not ray-parameterized: primitive means are off their stored rays")

    active = np.zeros(len(scene), dtype=bool)
    active[indices] = True
    grads = render_gradients(scene, cam, loss_grads, settings, active=active)
    return np.einsum('ij,ij->i', grads.means[indices], rays.directions)


def backward_opacity(scene: GaussianScene, cam: Camera, loss_grads: LossGradients,
                     indices: Sequence[int], settings: Optional[RenderSettings] = None) -> np.ndarray:
    """dL/dalpha_i for the optimizable primitives `indices` (one value per index)."""
    indices = np.asarray(indices, dtype=np.int64)
    if len(indices) == 0:
        return np.zeros(0)
    if indices.min() < 0 or indices.max() >= len(scene):
        raise RenderError(f"opacity index out of range for a scene of {len(scene)} primitives")
    active = np.zeros(len(scene), dtype=bool)
    active[indices] = True
    grads = render_gradients(scene, cam, loss_grads, settings, active=active)
    return grads.opacities[indices]
