import unittest
import numpy as np
from model.camera import Camera, orthonormalize, relative_center_distance
from model.gaussian import (GaussianPrimitive, GaussianScene, GeometryError, Provenance,
                            covariance_from_scale_rotation, matrix_to_quaternion, quaternion_to_matrix)


class TestGaussianScene(unittest.TestCase):
    def setUp(self):
        """Build a small mixed-provenance scene"""
        self.rng = np.random.default_rng(3)
        self.scene = GaussianScene.from_arrays(
            means=self.rng.normal(size=(5, 3)),
            rotations=self.rng.normal(size=(5, 4)),
            scales=self.rng.uniform(0.1, 0.5, (5, 3)),
            opacities=self.rng.uniform(0.2, 0.9, 5),
            colors=self.rng.uniform(size=(5, 3)),
            provenance=[Provenance.CONTEXT, Provenance.CONTEXT, Provenance.TARGET, Provenance.MERGED, 1],
        )

    def test_covariance_is_symmetric_psd(self):
        """Covariance of a valid primitive is symmetric with nonnegative eigenvalues"""
        for prim in self.scene.primitives:
            cov = prim.covariance
            self.assertTrue(np.array_equal(cov, cov.T))
            self.assertGreaterEqual(np.linalg.eigvalsh(cov).min(), -1e-12)

    def test_identity_rotation_covariance(self):
        """Identity rotation gives diag(s^2)"""
        cov = covariance_from_scale_rotation([1.0, 0.0, 0.0, 0.0], [1.0, 2.0, 3.0])
        self.assertTrue(np.allclose(cov, np.diag([1.0, 4.0, 9.0]), atol=1e-12))

    def test_rotation_about_z(self):
        """90 degree rotation about z swaps the x and y variances"""
        q = [np.cos(np.pi / 4), 0.0, 0.0, np.sin(np.pi / 4)]
        cov = covariance_from_scale_rotation(q, [1.0, 2.0, 3.0])
        self.assertTrue(np.allclose(cov, np.diag([4.0, 1.0, 9.0]), atol=1e-12))

    def test_invalid_primitives_raise(self):
        """Zero scale, zero quaternion and NaN inputs are rejected"""
        with self.assertRaises(GeometryError):
            covariance_from_scale_rotation([1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 1.0])
        with self.assertRaises(GeometryError):
            covariance_from_scale_rotation([0.0, 0.0, 0.0, 0.0], [1.0, 1.0, 1.0])
        with self.assertRaises(GeometryError):
            covariance_from_scale_rotation([1.0, 0.0, 0.0, 0.0], [np.nan, 1.0, 1.0])
        with self.assertRaises(GeometryError):
            GaussianScene.from_arrays(np.zeros((1, 3)), [[1, 0, 0, 0]], [[-1.0, 1.0, 1.0]], [0.5], [[0, 0, 0]])

    def test_quaternion_matrix_roundtrip(self):
        """Matrix to quaternion and back reproduces the rotation"""
        q = self.scene.rotations
        mats = quaternion_to_matrix(q)
        back = quaternion_to_matrix(matrix_to_quaternion(mats))
        self.assertTrue(np.allclose(mats, back, atol=1e-12))
        self.assertTrue(np.all(matrix_to_quaternion(mats)[:, 0] >= 0))

    def test_arrays_are_read_only(self):
        """Scene arrays cannot be edited in place"""
        with self.assertRaises(ValueError):
            self.scene.means[0, 0] = 1.0

    def test_provenance_and_subset(self):
        """Tags survive subset and concat; indices_with finds them"""
        self.assertEqual(self.scene.tags[3], Provenance.MERGED)
        self.assertEqual(list(self.scene.indices_with(Provenance.TARGET)), [2, 4])
        sub = self.scene.subset([2, 3])
        self.assertEqual(len(sub), 2)
        self.assertEqual(sub.tags, [Provenance.TARGET, Provenance.MERGED])
        self.assertEqual(len(self.scene.subset([])), 0)
        both = self.scene.concat(sub)
        self.assertEqual(len(both), 7)
        self.assertTrue(np.array_equal(both.means[5:], sub.means))

    def test_with_provenance_retags_all(self):
        """with_provenance leaves geometry untouched"""
        tagged = self.scene.with_provenance(Provenance.TARGET)
        self.assertTrue(np.all(tagged.provenance == Provenance.TARGET.code))
        self.assertTrue(np.array_equal(tagged.means, self.scene.means))

    def test_from_primitives(self):
        """A primitive list builds the same arrays"""
        prim = GaussianPrimitive(np.zeros(3), np.array([1.0, 0, 0, 0]), np.ones(3), 0.5, np.full(3, 0.2))
        scene = GaussianScene.from_primitives([prim, prim])
        self.assertEqual(len(scene), 2)
        self.assertEqual(len(GaussianScene.from_primitives([])), 0)


class TestCamera(unittest.TestCase):
    def setUp(self):
        """Camera two units behind the origin looking at it"""
        self.cam = Camera.look_at([0.0, 0.0, -2.0], [0.0, 0.0, 0.0], fx=50.0, width=64, height=48)

    def test_center_and_axis(self):
        """Center and principal axis follow the look-at inputs"""
        self.assertTrue(np.allclose(self.cam.center, [0.0, 0.0, -2.0]))
        self.assertTrue(np.allclose(self.cam.principal_axis, [0.0, 0.0, 1.0]))

    def test_principal_point_projects_to_center(self):
        """A point on the axis lands on (cx, cy)"""
        uv, z = self.cam.project(np.array([[0.0, 0.0, 3.0]]))
        self.assertTrue(np.allclose(uv[0], [self.cam.cx, self.cam.cy]))
        self.assertAlmostEqual(z[0], 5.0)

    def test_pixel_rays_reproject(self):
        """Points along a pixel's ray project back onto that pixel"""
        pixels = np.array([[0.0, 0.0], [10.5, 20.0], [63.0, 47.0]])
        rays = self.cam.pixel_rays(pixels)
        self.assertTrue(np.allclose(np.linalg.norm(rays, axis=1), 1.0))
        points = self.cam.center + 3.0 * rays
        uv, _ = self.cam.project(points)
        self.assertTrue(np.allclose(uv, pixels, atol=1e-9))

    def test_pixel_grid_order(self):
        """Pixel (row, col) sits at (u, v) = (col, row)"""
        grid = self.cam.pixel_grid()
        self.assertEqual(grid.shape, (48, 64, 2))
        self.assertTrue(np.array_equal(grid[5, 7], [7.0, 5.0]))

    def test_invalid_cameras(self):
        """Non-positive focal length and reflections are rejected"""
        with self.assertRaises(GeometryError):
            Camera(fx=-1.0, fy=1.0, cx=0, cy=0, rotation=np.eye(3), translation=np.zeros(3), width=4, height=4)
        with self.assertRaises(GeometryError):
            Camera(fx=1.0, fy=1.0, cx=0, cy=0, rotation=np.diag([1.0, 1.0, -1.0]), translation=np.zeros(3),
                   width=4, height=4)

    def test_orthonormalize_and_distance(self):
        """Near-rotations snap back; center distance is Euclidean"""
        noisy = np.eye(3) + 1e-5 * np.arange(9).reshape(3, 3)
        fixed = orthonormalize(noisy)
        self.assertTrue(np.allclose(fixed.T @ fixed, np.eye(3), atol=1e-12))
        other = Camera.look_at([3.0, 0.0, -2.0], [3.0, 0.0, 0.0], fx=50.0, width=64, height=48)
        self.assertAlmostEqual(relative_center_distance(self.cam, other), 3.0)


if __name__ == '__main__':
    unittest.main()
