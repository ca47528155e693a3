from model.camera import Camera
from model.gaussian import GaussianScene
from render.buffers import RenderBuffers
from render.rasterizer import RenderSettings, render
from storage.scene_store import SceneFormatError, load_cameras_json, load_scene_ply
from typing import Callable, List, Optional, Tuple
from PIL import Image
import numpy as np
import os
import threading
import logging

BUFFER_KINDS = ("rgb", "depth", "alpha", "hole")


def buffer_to_image(buffers: RenderBuffers, kind: str, tau: float = 0.5) -> Image.Image:
    """
    Convert one render buffer to an 8-bit PIL image

    Args:
        buffers: Rendered buffers of a single view
        kind: One of rgb, depth, alpha or hole
        tau: Alpha threshold for the hole view

    Returns:
        Image.Image: RGB image for rgb, grayscale otherwise
    """
    if kind == "rgb":
        data = np.clip(np.round(buffers.rgb * 255.0), 0, 255).astype(np.uint8)
        return Image.fromarray(data)
    if kind == "alpha":
        return Image.fromarray(np.clip(np.round(buffers.alpha * 255.0), 0, 255).astype(np.uint8))
    if kind == "hole":
        return Image.fromarray(np.where(buffers.alpha < tau, 255, 0).astype(np.uint8))
    if kind == "depth":
        depth = buffers.depth
        valid = np.isfinite(depth)
        data = np.zeros(depth.shape, dtype=np.uint8)
        if np.any(valid):
            near, far = float(depth[valid].min()), float(depth[valid].max())
            span = far - near if far > near else 1.0
            # near is bright, invalid stays black
            data[valid] = np.clip(np.round(255.0 - 200.0 * (depth[valid] - near) / span), 0, 255).astype(np.uint8)
        return Image.fromarray(data)
    raise ValueError(f"Unknown buffer kind: {kind}")


def default_camera(scene: GaussianScene, width: int = 256, height: int = 256) -> Camera:
    """Camera in front of the scene's bounding box looking at its center"""
    if len(scene) == 0:
        return Camera.look_at([0.0, 0.0, -3.0], [0.0, 0.0, 0.0], fx=0.8 * width, width=width, height=height)
    low, high = scene.means.min(axis=0), scene.means.max(axis=0)
    center = 0.5 * (low + high)
    radius = max(float(np.linalg.norm(high - low)), 1e-3)
    eye = center - np.array([0.0, 0.0, 1.5 * radius])
    return Camera.look_at(eye, center, fx=0.8 * width, width=width, height=height)


class SceneViewerViewModel:
    def __init__(self, settings: Optional[RenderSettings] = None):
        self.settings = settings or RenderSettings()
        self._scene: Optional[GaussianScene] = None
        self._scene_path: Optional[str] = None
        self._cameras: List[Camera] = []
        self._camera_index = 0
        self._buffer_kind = "rgb"
        self._tau = 0.5
        self._buffers: Optional[RenderBuffers] = None
        self._image: Optional[Image.Image] = None
        self._status = ""
        self._on_data_changed: Optional[Callable] = None
        self._lock = threading.Lock()

    @property
    def scene(self) -> Optional[GaussianScene]:
        return self._scene

    @property
    def cameras(self) -> List[Camera]:
        return self._cameras

    @property
    def camera_index(self) -> int:
        return self._camera_index

    @property
    def buffer_kind(self) -> str:
        return self._buffer_kind

    @property
    def tau(self) -> float:
        return self._tau

    @property
    def image(self) -> Optional[Image.Image]:
        """Latest rendered image, None before the first render"""
        with self._lock:
            return self._image

    @property
    def status(self) -> str:
        return self._status

    def camera_labels(self) -> List[str]:
        return [f"camera {i:03d}" for i in range(len(self._cameras))]

    def set_data_changed_callback(self, callback: Callable):
        """Set callback for data changes"""
        self._on_data_changed = callback

    def _notify_data_changed(self):
        """Notify observers of data changes"""
        if self._on_data_changed:
            self._on_data_changed()

    def load_scene(self, ply_path: str, cameras_path: Optional[str] = None) -> Tuple[bool, str]:
        """
        Load a scene and its cameras

        Args:
            ply_path: Path to the scene PLY file
            cameras_path: Path to a cameras JSON file; defaults to cameras.json next to the PLY

        Returns:
            Tuple[bool, str]: (success, status message)
        """
        try:
            scene = load_scene_ply(ply_path)
            if cameras_path is None:
                candidate = os.path.join(os.path.dirname(os.path.abspath(ply_path)), 'cameras.json')
                cameras_path = candidate if os.path.exists(candidate) else None
            if cameras_path:
                cameras = load_cameras_json(cameras_path)
            else:
                logging.warning(f"No cameras found for {ply_path}; using a default view")
                cameras = [default_camera(scene)]
            if not cameras:
                cameras = [default_camera(scene)]
        except (OSError, SceneFormatError) as e:
            logging.error(f"Error loading scene {ply_path}: {e}")
            self._status = f"Could not load {os.path.basename(ply_path)}: {e}"
            self._notify_data_changed()
            return False, self._status

        self._scene = scene
        self._scene_path = ply_path
        self._cameras = cameras
        self._camera_index = 0
        self._buffers = None
        self._status = f"Loaded {len(scene)} primitives, {len(cameras)} cameras"
        logging.info(f"Viewer loaded {ply_path}: {self._status}")
        self._notify_data_changed()
        return True, self._status

    def set_camera(self, index: int):
        if not 0 <= index < len(self._cameras):
            raise IndexError(f"camera index {index} out of range for {len(self._cameras)} cameras")
        if index != self._camera_index:
            self._camera_index = index
            self._buffers = None

    def set_buffer_kind(self, kind: str):
        if kind not in BUFFER_KINDS:
            raise ValueError(f"Unknown buffer kind: {kind}")
        self._buffer_kind = kind

    def set_tau(self, tau: float):
        if not 0.0 < tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {tau}")
        self._tau = tau

    def render_now(self) -> Optional[Image.Image]:
        """Render the selected camera and buffer kind in the calling thread"""
        if self._scene is None:
            self._status = "No scene loaded"
            return None
        try:
            # buffers are reused across buffer kinds and tau changes
            if self._buffers is None:
                self._buffers = render(self._scene, self._cameras[self._camera_index], self.settings)
            image = buffer_to_image(self._buffers, self._buffer_kind, self._tau)
        except Exception as e:
            logging.error(f"Error rendering view: {e}", exc_info=True)
            self._status = f"Render failed: {e}"
            return None
        with self._lock:
            self._image = image
        self._status = f"{self.camera_labels()[self._camera_index]}, {self._buffer_kind}"
        return image

    def request_render(self):
        """Render in a background thread and notify when the image is ready"""
        threading.Thread(target=self._render_thread_main, daemon=True).start()

    def _render_thread_main(self):
        self.render_now()
        self._notify_data_changed()

    def save_image(self, path: str) -> bool:
        image = self.image
        if image is None:
            return False
        try:
            image.save(path)
            logging.info(f"Saved view to {path}")
            return True
        except OSError as e:
            logging.error(f"Error saving view: {e}")
            return False
