import unittest
import os
import shutil
import tempfile
import threading
import numpy as np
from model.camera import Camera
from render.buffers import RenderBuffers
from storage.scene_store import save_cameras_json, save_scene_ply
from ui.viewmodel.scene_viewer_viewmodel import SceneViewerViewModel, buffer_to_image, default_camera
from reference_renderer import random_scene


class TestBufferToImage(unittest.TestCase):
    def setUp(self):
        """Buffers with a valid near pixel, a valid far pixel and two invalid ones"""
        self.buffers = RenderBuffers(
            rgb=np.array([[[1.0, 0.0, 0.0], [0.0, 0.5, 0.0]], [[0.0, 0.0, 0.0], [0.2, 0.2, 0.2]]]),
            depth=np.array([[2.0, 4.0], [np.nan, np.nan]]),
            alpha=np.array([[1.0, 0.6], [0.0, 0.3]]),
        )

    def test_rgb(self):
        """RGB buffers become 8-bit color images"""
        image = np.asarray(buffer_to_image(self.buffers, "rgb"))
        self.assertEqual(image.shape, (2, 2, 3))
        self.assertEqual(tuple(image[0, 0]), (255, 0, 0))

    def test_depth_near_is_bright(self):
        """Nearest depth is brightest, invalid depth black"""
        image = np.asarray(buffer_to_image(self.buffers, "depth"))
        self.assertEqual(image[0, 0], 255)
        self.assertEqual(image[0, 1], 55)
        self.assertEqual(image[1, 0], 0)

    def test_hole(self):
        """Hole view marks alpha below tau"""
        image = np.asarray(buffer_to_image(self.buffers, "hole", tau=0.5))
        self.assertTrue(np.array_equal(image > 0, [[False, False], [True, True]]))

    def test_unknown_kind(self):
        """Unknown buffer kinds raise"""
        with self.assertRaises(ValueError):
            buffer_to_image(self.buffers, "normals")


class TestSceneViewerViewModel(unittest.TestCase):
    def setUp(self):
        """Scene and cameras on disk plus a view model"""
        self.tmp = tempfile.mkdtemp()
        self.scene = random_scene(np.random.default_rng(3), n=20)
        self.ply = os.path.join(self.tmp, 'scene.ply')
        save_scene_ply(self.scene, self.ply)
        self.cameras = [
            Camera.look_at([0.0, 0.0, 0.0], [0.0, 0.0, 1.0], fx=20.0, width=24, height=24),
            Camera.look_at([0.5, 0.0, 0.0], [0.0, 0.0, 3.0], fx=20.0, width=24, height=24),
        ]
        self.vm = SceneViewerViewModel()
        self.notifications = 0

    def tearDown(self):
        """Remove the temporary directory"""
        shutil.rmtree(self.tmp, ignore_errors=True)

    def _notified(self):
        self.notifications += 1

    def test_load_with_cameras_next_to_scene(self):
        """cameras.json beside the PLY is picked up"""
        save_cameras_json(self.cameras, os.path.join(self.tmp, 'cameras.json'))
        self.vm.set_data_changed_callback(self._notified)
        ok, message = self.vm.load_scene(self.ply)
        self.assertTrue(ok)
        self.assertIn("20 primitives", message)
        self.assertEqual(self.vm.camera_labels(), ["camera 000", "camera 001"])
        self.assertEqual(self.notifications, 1)

    def test_load_without_cameras(self):
        """A default camera is used when none are given"""
        ok, _ = self.vm.load_scene(self.ply)
        self.assertTrue(ok)
        self.assertEqual(len(self.vm.cameras), 1)

    def test_load_failure(self):
        """A broken file reports failure and keeps the previous state"""
        bad = os.path.join(self.tmp, 'bad.ply')
        with open(bad, 'wb') as f:
            f.write(b'garbage')
        ok, message = self.vm.load_scene(bad)
        self.assertFalse(ok)
        self.assertIn("bad.ply", message)
        self.assertIsNone(self.vm.scene)

    def test_render_and_switch(self):
        """Rendering follows the selected camera and buffer kind"""
        save_cameras_json(self.cameras, os.path.join(self.tmp, 'cameras.json'))
        self.vm.load_scene(self.ply)
        rgb = self.vm.render_now()
        self.assertEqual(rgb.size, (24, 24))
        self.vm.set_buffer_kind("depth")
        self.assertEqual(self.vm.render_now().mode, "L")
        self.vm.set_camera(1)
        self.assertIsNotNone(self.vm.render_now())
        self.assertIn("camera 001", self.vm.status)

    def test_invalid_selection(self):
        """Out-of-range cameras, unknown kinds and bad tau raise"""
        self.vm.load_scene(self.ply)
        with self.assertRaises(IndexError):
            self.vm.set_camera(5)
        with self.assertRaises(ValueError):
            self.vm.set_buffer_kind("normals")
        with self.assertRaises(ValueError):
            self.vm.set_tau(1.5)

    def test_render_without_scene(self):
        """Nothing loaded renders nothing"""
        self.assertIsNone(self.vm.render_now())
        self.assertFalse(self.vm.save_image(os.path.join(self.tmp, 'view.png')))

    def test_background_render_notifies(self):
        """A background render calls back once the image is ready"""
        self.vm.load_scene(self.ply)
        done = threading.Event()
        self.vm.set_data_changed_callback(done.set)
        self.vm.request_render()
        self.assertTrue(done.wait(30))
        self.assertIsNotNone(self.vm.image)
        path = os.path.join(self.tmp, 'view.png')
        self.assertTrue(self.vm.save_image(path))
        self.assertTrue(os.path.exists(path))

    def test_default_camera_sees_scene(self):
        """The default camera looks at the scene center"""
        cam = default_camera(self.scene, 32, 32)
        center = 0.5 * (self.scene.means.min(axis=0) + self.scene.means.max(axis=0))
        uv, z = cam.project(center[None, :])
        self.assertGreater(z[0], 0.0)
        self.assertTrue(np.allclose(uv[0], [cam.cx, cam.cy]))


if __name__ == '__main__':
    unittest.main()
