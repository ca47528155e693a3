"""
Naive per-pixel compositing used as a test oracle.

Every pixel walks the full front-to-back list of visible splats with the same
cutoff, alpha clamp and early termination as the tile renderer.
"""
import numpy as np

from model.camera import Camera
from model.gaussian import GaussianScene, matrix_to_quaternion
from render.buffers import RenderBuffers
from render.rasterizer import RenderSettings, project_gaussian


def random_scene(rng: np.random.Generator, n: int = 40, depth_range=(2.0, 5.0), spread: float = 1.2,
                 scale_range=(0.05, 0.25), opacity_range=(0.3, 0.9)) -> GaussianScene:
    """Random primitives in front of a camera at the origin looking down +z"""
    z = rng.uniform(*depth_range, n)
    xy = rng.uniform(-spread, spread, (n, 2)) * z[:, None] / depth_range[1]
    means = np.column_stack([xy, z])
    q, _ = np.linalg.qr(rng.normal(size=(n, 3, 3)))
    q[np.linalg.det(q) < 0, :, 0] *= -1.0
    return GaussianScene.from_arrays(
        means=means,
        rotations=matrix_to_quaternion(q),
        scales=rng.uniform(*scale_range, (n, 3)),
        opacities=rng.uniform(*opacity_range, n),
        colors=rng.uniform(0.0, 1.0, (n, 3)),
    )


def front_camera(size: int = 32, focal: float = None) -> Camera:
    focal = focal or 0.9 * size
    return Camera.look_at([0.0, 0.0, 0.0], [0.0, 0.0, 1.0], fx=focal, width=size, height=size)


def reference_render(scene: GaussianScene, cam: Camera, settings: RenderSettings = None) -> RenderBuffers:
    settings = settings or RenderSettings()
    splats = []
    for i in range(len(scene)):
        proj = project_gaussian(scene[i], cam, settings)
        if proj.visible:
            splats.append((proj.z_cam, i, proj.mean2d, np.linalg.inv(proj.cov2d)))
    splats.sort(key=lambda s: (s[0], s[1]))

    rgb = np.zeros((cam.height, cam.width, 3))
    alpha = np.zeros((cam.height, cam.width))
    depth = np.full((cam.height, cam.width), np.nan)
    if not splats:
        return RenderBuffers(rgb, depth, alpha)

    z = np.array([s[0] for s in splats])
    index = np.array([s[1] for s in splats])
    centers = np.array([s[2] for s in splats])
    conics = np.array([s[3] for s in splats])
    opacity = scene.opacities[index]
    colors = scene.colors[index]

    for row in range(cam.height):
        for col in range(cam.width):
            d = np.array([col, row], dtype=np.float64) - centers
            power = np.einsum('ni,nij,nj->n', d, conics, d)
            hits = np.flatnonzero(power <= settings.cutoff_sigma ** 2)
            trans, acc, numer, color = 1.0, 0.0, 0.0, np.zeros(3)
            for k in hits:
                if trans < settings.min_transmittance:
                    break
                a = min(opacity[k] * np.exp(-0.5 * power[k]), settings.max_alpha)
                w = trans * a
                color += w * colors[k]
                acc += w
                numer += w * z[k]
                trans *= 1.0 - a
            rgb[row, col] = color
            alpha[row, col] = acc
            if acc > settings.min_depth_alpha:
                depth[row, col] = numer / acc
    return RenderBuffers(rgb, depth, np.clip(alpha, 0.0, 1.0))


def brute_force_hole_mask(scene: GaussianScene, cam: Camera, tau: float = 0.5,
                          settings: RenderSettings = None) -> np.ndarray:
    return reference_render(scene, cam, settings).alpha < tau
