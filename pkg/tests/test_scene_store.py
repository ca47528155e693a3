import unittest
import os
import json
import shutil
import tempfile
import numpy as np
from plyfile import PlyData, PlyElement
from model.camera import Camera
from model.gaussian import GaussianScene, Provenance
from storage.scene_store import (PLY_DTYPE, SceneFormatError, load_cameras_json, load_scene_ply,
                                 save_cameras_json, save_scene_ply)
from reference_renderer import random_scene


class TestSceneStore(unittest.TestCase):
    def setUp(self):
        """Temporary directory and a random scene"""
        self.tmp = tempfile.mkdtemp()
        self.scene = random_scene(np.random.default_rng(11), n=25)
        codes = np.array([Provenance.CONTEXT.code] * 20 + [Provenance.TARGET.code] * 5, dtype=np.uint8)
        self.scene = GaussianScene(self.scene.means, self.scene.rotations, self.scene.scales,
                                   self.scene.opacities, self.scene.colors, codes)

    def tearDown(self):
        """Remove the temporary directory"""
        shutil.rmtree(self.tmp, ignore_errors=True)

    def _path(self, name):
        return os.path.join(self.tmp, name)

    def test_ply_roundtrip(self):
        """Saved scenes load back within float32 precision"""
        path = self._path('scene.ply')
        save_scene_ply(self.scene, path)
        loaded = load_scene_ply(path)
        self.assertEqual(len(loaded), len(self.scene))
        self.assertTrue(np.allclose(loaded.means, self.scene.means, atol=1e-6))
        self.assertTrue(np.allclose(loaded.scales, self.scene.scales, rtol=1e-5))
        self.assertTrue(np.allclose(loaded.opacities, self.scene.opacities, atol=1e-6))
        self.assertTrue(np.allclose(loaded.colors, self.scene.colors, atol=1e-6))
        self.assertTrue(np.array_equal(loaded.provenance, self.scene.provenance))

    def test_row_size(self):
        """Each vertex row is 69 bytes"""
        self.assertEqual(PLY_DTYPE.itemsize, 69)
        path = self._path('scene.ply')
        save_scene_ply(self.scene, path)
        with open(path, 'rb') as f:
            data = f.read()
        header_end = data.index(b'end_header\n') + len(b'end_header\n')
        self.assertEqual(len(data) - header_end, 69 * len(self.scene))

    def test_byte_identical_saves(self):
        """Saving the same scene twice gives identical bytes"""
        save_scene_ply(self.scene, self._path('a.ply'))
        save_scene_ply(self.scene, self._path('b.ply'))
        with open(self._path('a.ply'), 'rb') as a, open(self._path('b.ply'), 'rb') as b:
            self.assertEqual(a.read(), b.read())

    def test_empty_scene(self):
        """A scene with zero primitives round-trips"""
        path = self._path('empty.ply')
        save_scene_ply(GaussianScene.empty(), path)
        self.assertEqual(len(load_scene_ply(path)), 0)

    def test_missing_field(self):
        """A vertex element without opacity names the field"""
        dtype = [(name, '<f4') for name in PLY_DTYPE.names if name not in ('opacity', 'provenance')]
        rows = np.zeros(2, dtype=dtype)
        rows['rot_0'] = 1.0
        path = self._path('bad.ply')
        PlyData([PlyElement.describe(rows, 'vertex')], text=False).write(path)
        with self.assertRaises(SceneFormatError) as ctx:
            load_scene_ply(path)
        self.assertIn('opacity', str(ctx.exception))

    def test_nan_value(self):
        """NaN values are rejected with the field name"""
        rows = np.zeros(1, dtype=PLY_DTYPE)
        rows['rot_0'] = 1.0
        rows['x'] = np.nan
        path = self._path('nan.ply')
        PlyData([PlyElement.describe(rows, 'vertex')], text=False).write(path)
        with self.assertRaises(SceneFormatError) as ctx:
            load_scene_ply(path)
        self.assertIn("'x'", str(ctx.exception))

    def test_optional_provenance(self):
        """Files without provenance load as context"""
        dtype = [(name, '<f4') for name in PLY_DTYPE.names if name != 'provenance']
        rows = np.zeros(3, dtype=dtype)
        rows['rot_0'] = 1.0
        path = self._path('plain.ply')
        PlyData([PlyElement.describe(rows, 'vertex')], text=False).write(path)
        loaded = load_scene_ply(path)
        self.assertTrue(np.all(loaded.provenance == Provenance.CONTEXT.code))

    def test_unnormalized_quaternion(self):
        """Quaternions are renormalized on load"""
        rows = np.zeros(1, dtype=PLY_DTYPE)
        rows['rot_0'] = 2.0
        path = self._path('quat.ply')
        PlyData([PlyElement.describe(rows, 'vertex')], text=False).write(path)
        loaded = load_scene_ply(path)
        self.assertAlmostEqual(float(np.linalg.norm(loaded.rotations[0])), 1.0)

    def test_malformed_header(self):
        """Garbage files raise a format error"""
        path = self._path('garbage.ply')
        with open(path, 'wb') as f:
            f.write(b'not a ply file at all')
        with self.assertRaises(SceneFormatError):
            load_scene_ply(path)


class TestCameraStore(unittest.TestCase):
    def setUp(self):
        """Temporary directory and two cameras"""
        self.tmp = tempfile.mkdtemp()
        self.cameras = [
            Camera.look_at([0.0, 0.0, -2.0], [0.0, 0.0, 0.0], fx=40.0, width=32, height=24),
            Camera.look_at([1.0, 0.0, -2.0], [0.0, 0.0, 1.0], fx=45.0, width=32, height=24),
        ]
        self.path = os.path.join(self.tmp, 'cameras.json')

    def tearDown(self):
        """Remove the temporary directory"""
        shutil.rmtree(self.tmp, ignore_errors=True)

    def test_roundtrip_preserves_order(self):
        """Cameras load back in order with identical parameters"""
        save_cameras_json(self.cameras, self.path)
        loaded = load_cameras_json(self.path)
        self.assertEqual(len(loaded), 2)
        for a, b in zip(self.cameras, loaded):
            self.assertTrue(np.allclose(a.rotation, b.rotation))
            self.assertTrue(np.allclose(a.translation, b.translation))
            self.assertEqual(a.fx, b.fx)

    def test_negative_focal(self):
        """Non-positive focal lengths are rejected"""
        entry = self.cameras[0].to_dict()
        entry['fx'] = -5.0
        with open(self.path, 'w') as f:
            json.dump([entry], f)
        with self.assertRaises(SceneFormatError):
            load_cameras_json(self.path)

    def test_reflection(self):
        """A reflection matrix is not a rotation"""
        entry = self.cameras[0].to_dict()
        entry['rotation'] = np.diag([1.0, 1.0, -1.0]).tolist()
        with open(self.path, 'w') as f:
            json.dump([entry], f)
        with self.assertRaises(SceneFormatError):
            load_cameras_json(self.path)

    def test_non_orthonormal(self):
        """Rotations far from orthonormal are rejected, slightly off ones repaired"""
        entry = self.cameras[0].to_dict()
        entry['rotation'] = (np.eye(3) * 1.1).tolist()
        with open(self.path, 'w') as f:
            json.dump([entry], f)
        with self.assertRaises(SceneFormatError):
            load_cameras_json(self.path)

        entry['rotation'] = (np.eye(3) + 1e-6).tolist()
        with open(self.path, 'w') as f:
            json.dump([entry], f)
        loaded = load_cameras_json(self.path)[0]
        self.assertTrue(np.allclose(loaded.rotation.T @ loaded.rotation, np.eye(3), atol=1e-12))

    def test_missing_key(self):
        """A camera without height names the key"""
        entry = self.cameras[0].to_dict()
        del entry['height']
        with open(self.path, 'w') as f:
            json.dump([entry], f)
        with self.assertRaises(SceneFormatError) as ctx:
            load_cameras_json(self.path)
        self.assertIn('height', str(ctx.exception))


if __name__ == '__main__':
    unittest.main()
