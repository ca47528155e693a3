from dataclasses import dataclass

import numpy as np

from model.gaussian import GeometryError


@dataclass(frozen=True, eq=False)
class Camera:
    """Pinhole camera with a world-to-camera pose (x right, y down, z forward)."""
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        rotation = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        translation = np.array(self.translation, dtype=np.float64).reshape(3)
        rotation.setflags(write=False)
        translation.setflags(write=False)
        object.__setattr__(self, 'rotation', rotation)
        object.__setattr__(self, 'translation', translation)

        values = np.array([self.fx, self.fy, self.cx, self.cy], dtype=np.float64)
        if not (np.all(np.isfinite(values)) and np.all(np.isfinite(rotation))
                and np.all(np.isfinite(translation))):
            raise GeometryError("camera contains non-finite values")
        if self.fx <= 0 or self.fy <= 0:
            raise GeometryError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width < 1 or self.height < 1:
            raise GeometryError(f"resolution must be at least 1x1, got {self.width}x{self.height}")
        if np.abs(rotation.T @ rotation - np.eye(3)).max() > 1e-6:
            raise GeometryError("rotation is not orthonormal")
        if np.linalg.det(rotation) < 0:
            raise GeometryError("reflection not a rotation")

    @staticmethod
    def look_at(eye, target, fx: float, width: int, height: int, up=(0.0, -1.0, 0.0),
                fy: float = None) -> 'Camera':
        """Camera at `eye` looking at `target`; `up` is the world direction that appears up."""
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(right) < 1e-9:
            raise GeometryError("up vector is parallel to the viewing direction")
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        rotation = np.stack([right, down, forward])
        return Camera(
            fx=fx, fy=fx if fy is None else fy,
            cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
            rotation=rotation, translation=-rotation @ eye,
            width=width, height=height,
        )

    @property
    def intrinsic_matrix(self) -> np.ndarray:
        return np.array([
            [self.fx, 0.0, self.cx],
            [0.0, self.fy, self.cy],
            [0.0, 0.0, 1.0],
        ])

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates, c = -R^T t."""
        return -self.rotation.T @ self.translation

    @property
    def principal_axis(self) -> np.ndarray:
        """Unit viewing direction in world coordinates."""
        return self.rotation[2].copy()

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def project(self, points: np.ndarray):
        """Pixel coordinates (N, 2) and camera-space depth (N,) of world points."""
        t = self.world_to_camera(np.atleast_2d(points))
        z = t[:, 2]
        with np.errstate(divide='ignore', invalid='ignore'):
            u = self.fx * t[:, 0] / z + self.cx
            v = self.fy * t[:, 1] / z + self.cy
        return np.stack([u, v], axis=1), z

    def pixel_rays(self, pixels: np.ndarray) -> np.ndarray:
        """Unit world-space ray directions r = normalize(R^T K^-1 [u, v, 1])."""
        pixels = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
        local = np.stack([
            (pixels[:, 0] - self.cx) / self.fx,
            (pixels[:, 1] - self.cy) / self.fy,
            np.ones(len(pixels)),
        ], axis=1)
        world = local @ self.rotation
        return world / np.linalg.norm(world, axis=1, keepdims=True)

    def pixel_grid(self) -> np.ndarray:
        """Pixel centers (H, W, 2) in (u, v) order; pixel (row, col) sits at (col, row)."""
        v, u = np.mgrid[0:self.height, 0:self.width].astype(np.float64)
        return np.stack([u, v], axis=-1)

    def to_dict(self) -> dict:
        return {
            'fx': float(self.fx), 'fy': float(self.fy),
            'cx': float(self.cx), 'cy': float(self.cy),
            'rotation': self.rotation.tolist(),
            'translation': self.translation.tolist(),
            'width': int(self.width), 'height': int(self.height),
        }


def orthonormalize(rotation: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense."""
    u, _, vt = np.linalg.svd(np.asarray(rotation, dtype=np.float64))
    return u @ vt


def relative_center_distance(a: Camera, b: Camera) -> float:
    return float(np.linalg.norm(a.center - b.center))
