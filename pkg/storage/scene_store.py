"""
Scene and camera persistence.

Scenes use the binary little-endian 3DGS PLY layout:

| property            | type  | stored value                         |
|---------------------|-------|--------------------------------------|
| x, y, z             | float | mean                                 |
| nx, ny, nz          | float | zeros (layout compatibility)         |
| f_dc_0..2           | float | (color - 0.5) / C0, C0 = 0.28209...  |
| opacity             | float | logit(alpha)                         |
| scale_0..2          | float | log(scale)                           |
| rot_0..3            | float | quaternion (w, x, y, z)              |
| provenance          | uchar | 0 context, 1 target, 2 merged        |

Every row is 4 * 17 + 1 = 69 bytes. `nx..nz` and `provenance` are optional
on load. Cameras are a JSON array of
`{fx, fy, cx, cy, rotation: 3x3 row-major, translation: [3], width, height}`.
"""
import json
import logging
import os
from typing import List

import numpy as np
from plyfile import PlyData, PlyElement

from model.camera import Camera, orthonormalize
from model.gaussian import GaussianScene, GeometryError, Provenance

SH_C0 = 0.28209479177387814
OPACITY_EPS = 1e-7

REQUIRED_FIELDS = (
    'x', 'y', 'z',
    'f_dc_0', 'f_dc_1', 'f_dc_2',
    'opacity',
    'scale_0', 'scale_1', 'scale_2',
    'rot_0', 'rot_1', 'rot_2', 'rot_3',
)

PLY_DTYPE = np.dtype(
    [(name, '<f4') for name in ('x', 'y', 'z', 'nx', 'ny', 'nz')]
    + [(name, '<f4') for name in REQUIRED_FIELDS[3:]]
    + [('provenance', 'u1')]
)


class SceneFormatError(Exception):
    """Custom exception for malformed scene or camera files"""
    pass


def _logit(p: np.ndarray) -> np.ndarray:
    p = np.clip(p, OPACITY_EPS, 1.0 - OPACITY_EPS)
    return np.log(p) - np.log1p(-p)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def save_scene_ply(scene: GaussianScene, path: str):
    """Write a scene as a binary little-endian 3DGS PLY file."""
    rows = np.zeros(len(scene), dtype=PLY_DTYPE)
    rows['x'], rows['y'], rows['z'] = scene.means.T
    for i in range(3):
        rows[f'f_dc_{i}'] = (scene.colors[:, i] - 0.5) / SH_C0
        rows[f'scale_{i}'] = np.log(scene.scales[:, i])
    rows['opacity'] = _logit(scene.opacities)
    for i in range(4):
        rows[f'rot_{i}'] = scene.rotations[:, i]
    rows['provenance'] = scene.provenance

    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    element = PlyElement.describe(rows, 'vertex')
    PlyData([element], text=False, byte_order='<').write(path)
    logging.info(f"Saved {len(scene)} primitives to {path}")


def load_scene_ply(path: str) -> GaussianScene:
    """
    Read a 3DGS PLY file.

    Opacity passes through the logistic, scale through exp, and quaternions
    are renormalized when their norm is off by more than 1e-6.

    Raises:
        SceneFormatError naming the offending element or field
    """
    try:
        ply = PlyData.read(path)
    except FileNotFoundError:
        raise
    except Exception as e:
        logging.error(f"Malformed PLY header in {path}: {e}")
        raise SceneFormatError(f"malformed header in {path}: {e}")

    try:
        vertices = ply['vertex'].data
    except KeyError:
        raise SceneFormatError(f"missing element 'vertex' in {path}")

    names = set(vertices.dtype.names or ())
    for name in REQUIRED_FIELDS:
        if name not in names:
            raise SceneFormatError(f"missing field '{name}' in element 'vertex'")

    columns = {}
    for name in REQUIRED_FIELDS:
        column = np.asarray(vertices[name], dtype=np.float64)
        bad = np.flatnonzero(~np.isfinite(column))
        if len(bad):
            raise SceneFormatError(f"NaN or infinite value in field '{name}' at vertex {bad[0]}")
        columns[name] = column

    rotations = np.stack([columns[f'rot_{i}'] for i in range(4)], axis=1)
    norms = np.linalg.norm(rotations, axis=1)
    degenerate = np.flatnonzero(norms < 1e-12)
    if len(degenerate):
        raise SceneFormatError(f"degenerate quaternion at vertex {degenerate[0]}")
    off = np.abs(norms - 1.0) > 1e-6
    rotations[off] /= norms[off, None]

    if 'provenance' in names:
        provenance = np.asarray(vertices['provenance'], dtype=np.uint8)
        if np.any(provenance > Provenance.MERGED.code):
            raise SceneFormatError("unknown provenance code in field 'provenance'")
    else:
        provenance = np.zeros(len(vertices), dtype=np.uint8)

    colors = 0.5 + SH_C0 * np.stack([columns[f'f_dc_{i}'] for i in range(3)], axis=1)
    try:
        scene = GaussianScene(
            means=np.stack([columns['x'], columns['y'], columns['z']], axis=1),
            rotations=rotations,
            scales=np.exp(np.stack([columns[f'scale_{i}'] for i in range(3)], axis=1)),
            opacities=_sigmoid(columns['opacity']),
            colors=np.clip(colors, 0.0, 1.0),
            provenance=provenance,
        )
    except GeometryError as e:
        raise SceneFormatError(f"invalid primitive data in element 'vertex': {e}")
    logging.info(f"Loaded {len(scene)} primitives from {path}")
    return scene


def _camera_from_entry(entry: dict, index: int) -> Camera:
    try:
        rotation = np.asarray(entry['rotation'], dtype=np.float64).reshape(3, 3)
        translation = np.asarray(entry['translation'], dtype=np.float64).reshape(3)
        fx, fy = float(entry['fx']), float(entry['fy'])
        cx, cy = float(entry['cx']), float(entry['cy'])
        width, height = int(entry['width']), int(entry['height'])
    except KeyError as e:
        raise SceneFormatError(f"camera {index}: missing key {e}")
    except (TypeError, ValueError) as e:
        raise SceneFormatError(f"camera {index}: malformed value ({e})")

    if fx <= 0 or fy <= 0:
        raise SceneFormatError(f"camera {index}: negative or zero focal length (fx={fx}, fy={fy})")
    if not np.all(np.isfinite(rotation)):
        raise SceneFormatError(f"camera {index}: non-finite rotation")
    if np.linalg.det(rotation) < 0:
        raise SceneFormatError(f"camera {index}: reflection not a rotation")
    deviation = np.abs(rotation.T @ rotation - np.eye(3)).max()
    if deviation > 1e-4:
        raise SceneFormatError(f"camera {index}: rotation not orthonormal (max deviation {deviation:.2e})")
    if deviation > 0.0:
        rotation = orthonormalize(rotation)
    try:
        return Camera(fx=fx, fy=fy, cx=cx, cy=cy, rotation=rotation, translation=translation,
                      width=width, height=height)
    except GeometryError as e:
        raise SceneFormatError(f"camera {index}: {e}")


def load_cameras_json(path: str) -> List[Camera]:
    """Read a JSON array of cameras, preserving order."""
    try:
        with open(path, 'r', encoding='utf-8') as f:
            entries = json.load(f)
    except json.JSONDecodeError as e:
        raise SceneFormatError(f"malformed camera JSON in {path}: {e}")
    if not isinstance(entries, list):
        raise SceneFormatError(f"camera file {path} must contain a JSON array")
    cameras = [_camera_from_entry(entry, i) for i, entry in enumerate(entries)]
    logging.info(f"Loaded {len(cameras)} cameras from {path}")
    return cameras


def save_cameras_json(cameras: List[Camera], path: str):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump([cam.to_dict() for cam in cameras], f, indent=2)
        f.write('\n')
    logging.info(f"Saved {len(cameras)} cameras to {path}")
