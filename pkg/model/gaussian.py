from dataclasses import dataclass
from enum import Enum
from typing import Iterable, List, Optional, Sequence

import numpy as np
from scipy.spatial.transform import Rotation


class GeometryError(Exception):
    """Custom exception for invalid geometric input"""
    pass


class Provenance(str, Enum):
    """Where a primitive came from.

    CONTEXT primitives were reconstructed from observed views, TARGET ones
    were lifted from the latest reference image, MERGED ones were TARGET
    primitives integrated by an earlier completion step.
    """
    CONTEXT = "context"
    TARGET = "target"
    MERGED = "merged"

    @property
    def code(self) -> int:
        return _PROVENANCE_CODES[self]

    @staticmethod
    def from_code(code: int) -> 'Provenance':
        return _PROVENANCE_BY_CODE[int(code)]


_PROVENANCE_CODES = {Provenance.CONTEXT: 0, Provenance.TARGET: 1, Provenance.MERGED: 2}
_PROVENANCE_BY_CODE = {v: k for k, v in _PROVENANCE_CODES.items()}


def _check_finite(name: str, values: np.ndarray):
    if not np.all(np.isfinite(values)):
        raise GeometryError(f"{name} contains non-finite values")


def quaternion_to_matrix(q) -> np.ndarray:
    """Rotation matrix (or stack of them) for (w, x, y, z) quaternions."""
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    # scipy is scalar-last
    mats = Rotation.from_quat(q[:, [1, 2, 3, 0]]).as_matrix()
    return mats[0] if single else mats


def matrix_to_quaternion(m) -> np.ndarray:
    """(w, x, y, z) quaternion for a rotation matrix, w >= 0."""
    xyzw = Rotation.from_matrix(np.asarray(m, dtype=np.float64)).as_quat()
    wxyz = np.roll(xyzw, 1, axis=-1)
    sign = np.where(wxyz[..., :1] < 0, -1.0, 1.0)
    return wxyz * sign


def covariance_from_scale_rotation(q, s) -> np.ndarray:
    """
    Build the 3D covariance Sigma = R S S^T R^T of one Gaussian.

    Args:
        q: unit quaternion (w, x, y, z)
        s: positive scale vector

    Returns:
        3x3 symmetric positive semi-definite matrix
    """
    q = np.asarray(q, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    _check_finite("quaternion", q)
    _check_finite("scale", s)
    if q.shape != (4,) or s.shape != (3,):
        raise GeometryError(f"expected quaternion (4,) and scale (3,), got {q.shape} and {s.shape}")
    if np.linalg.norm(q) < 1e-12:
        raise GeometryError("degenerate quaternion")
    if np.any(s <= 0):
        raise GeometryError(f"scale must be strictly positive, got {s.tolist()}")
    return covariances_from_scale_rotation(q[None, :], s[None, :])[0]


def covariances_from_scale_rotation(rotations: np.ndarray, scales: np.ndarray) -> np.ndarray:
    """Batched Sigma = R S S^T R^T, shape (N, 3, 3)."""
    if len(rotations) == 0:
        return np.zeros((0, 3, 3))
    r = quaternion_to_matrix(rotations)
    m = r * scales[:, None, :]
    cov = m @ np.transpose(m, (0, 2, 1))
    # exact symmetry
    return 0.5 * (cov + np.transpose(cov, (0, 2, 1)))


@dataclass(frozen=True)
class GaussianPrimitive:
    mean: np.ndarray
    rotation: np.ndarray
    scale: np.ndarray
    opacity: float
    color: np.ndarray

    @property
    def covariance(self) -> np.ndarray:
        return covariance_from_scale_rotation(self.rotation, self.scale)


def _frozen(values, dtype=np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class GaussianScene:
    """
    Ordered collection of Gaussian primitives stored column-wise.

    Arrays are read-only; every edit returns a new scene.
    """
    means: np.ndarray
    rotations: np.ndarray
    scales: np.ndarray
    opacities: np.ndarray
    colors: np.ndarray
    provenance: np.ndarray

    def __post_init__(self):
        n = len(self.means)
        object.__setattr__(self, 'means', _frozen(np.reshape(self.means, (n, 3))))
        object.__setattr__(self, 'rotations', _frozen(np.reshape(self.rotations, (n, 4))))
        object.__setattr__(self, 'scales', _frozen(np.reshape(self.scales, (n, 3))))
        object.__setattr__(self, 'opacities', _frozen(np.clip(np.reshape(self.opacities, (n,)), 0.0, 1.0)))
        object.__setattr__(self, 'colors', _frozen(np.reshape(self.colors, (n, 3))))
        object.__setattr__(self, 'provenance', _frozen(np.reshape(self.provenance, (n,)), dtype=np.uint8))

        if len(self.provenance) != n:
            raise GeometryError(f"provenance length {len(self.provenance)} != primitive count {n}")
        for name in ('means', 'rotations', 'scales', 'opacities', 'colors'):
            _check_finite(name, getattr(self, name))
        if n and np.any(self.scales <= 0):
            raise GeometryError("scale components must be strictly positive")
        if n and np.any(np.linalg.norm(self.rotations, axis=1) < 1e-12):
            raise GeometryError("degenerate quaternion")

    @staticmethod
    def empty() -> 'GaussianScene':
        return GaussianScene(
            means=np.zeros((0, 3)),
            rotations=np.zeros((0, 4)),
            scales=np.zeros((0, 3)),
            opacities=np.zeros(0),
            colors=np.zeros((0, 3)),
            provenance=np.zeros(0, dtype=np.uint8),
        )

    @staticmethod
    def from_arrays(means, rotations, scales, opacities, colors,
                    provenance: Optional[Iterable] = None,
                    tag: Provenance = Provenance.CONTEXT) -> 'GaussianScene':
        """Build a scene, normalizing quaternions; provenance defaults to one tag for all."""
        means = np.asarray(means, dtype=np.float64).reshape(-1, 3)
        rotations = np.asarray(rotations, dtype=np.float64).reshape(-1, 4)
        norms = np.linalg.norm(rotations, axis=1, keepdims=True)
        if np.any(norms < 1e-12):
            raise GeometryError("degenerate quaternion")
        if provenance is None:
            codes = np.full(len(means), tag.code, dtype=np.uint8)
        else:
            codes = np.array([p.code if isinstance(p, Provenance) else int(p) for p in provenance],
                             dtype=np.uint8)
        return GaussianScene(means, rotations / norms, scales, opacities, colors, codes)

    @staticmethod
    def from_primitives(primitives: Sequence[GaussianPrimitive],
                        provenance: Optional[Sequence[Provenance]] = None) -> 'GaussianScene':
        if not primitives:
            return GaussianScene.empty()
        return GaussianScene.from_arrays(
            means=[p.mean for p in primitives],
            rotations=[p.rotation for p in primitives],
            scales=[p.scale for p in primitives],
            opacities=[p.opacity for p in primitives],
            colors=[p.color for p in primitives],
            provenance=provenance,
        )

    def __len__(self) -> int:
        return len(self.means)

    def __getitem__(self, index: int) -> GaussianPrimitive:
        return GaussianPrimitive(
            mean=self.means[index],
            rotation=self.rotations[index],
            scale=self.scales[index],
            opacity=float(self.opacities[index]),
            color=self.colors[index],
        )

    @property
    def primitives(self) -> List[GaussianPrimitive]:
        return [self[i] for i in range(len(self))]

    @property
    def tags(self) -> List[Provenance]:
        return [Provenance.from_code(c) for c in self.provenance]

    def indices_with(self, tag: Provenance) -> np.ndarray:
        return np.flatnonzero(self.provenance == tag.code)

    def covariances(self) -> np.ndarray:
        return covariances_from_scale_rotation(self.rotations, self.scales)

    def subset(self, indices) -> 'GaussianScene':
        idx = np.asarray(indices)
        if idx.dtype != bool:
            idx = idx.astype(np.int64)
        return GaussianScene(self.means[idx], self.rotations[idx], self.scales[idx],
                             self.opacities[idx], self.colors[idx], self.provenance[idx])

    def with_means(self, means: np.ndarray) -> 'GaussianScene':
        return GaussianScene(means, self.rotations, self.scales, self.opacities, self.colors, self.provenance)

    def with_opacities(self, opacities: np.ndarray) -> 'GaussianScene':
        return GaussianScene(self.means, self.rotations, self.scales, opacities, self.colors, self.provenance)

    def with_provenance(self, tag: Provenance) -> 'GaussianScene':
        codes = np.full(len(self), tag.code, dtype=np.uint8)
        return GaussianScene(self.means, self.rotations, self.scales, self.opacities, self.colors, codes)

    def concat(self, other: 'GaussianScene') -> 'GaussianScene':
        return GaussianScene(
            np.concatenate([self.means, other.means]),
            np.concatenate([self.rotations, other.rotations]),
            np.concatenate([self.scales, other.scales]),
            np.concatenate([self.opacities, other.opacities]),
            np.concatenate([self.colors, other.colors]),
            np.concatenate([self.provenance, other.provenance]),
        )
