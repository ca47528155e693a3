import unittest
import numpy as np
from model.gaussian import GaussianPrimitive, GaussianScene
from render.rasterizer import RenderSettings, project_gaussian, project_scene, render
from reference_renderer import front_camera, random_scene, reference_render


def single_splat(z=3.0, opacity=0.8, scale=0.2, color=(0.2, 0.4, 0.6), xy=(0.0, 0.0)):
    return GaussianScene.from_arrays(
        means=[[xy[0], xy[1], z]], rotations=[[1.0, 0.0, 0.0, 0.0]], scales=[[scale, scale, scale]],
        opacities=[opacity], colors=[color],
    )


class TestProjection(unittest.TestCase):
    def setUp(self):
        """Camera at the origin looking down +z"""
        self.cam = front_camera(32)

    def test_on_axis_projection(self):
        """A primitive on the axis projects to the principal point with eps-regularized covariance"""
        prim = GaussianPrimitive(np.array([0.0, 0.0, 2.0]), np.array([1.0, 0, 0, 0]), np.full(3, 0.1), 0.5,
                                 np.zeros(3))
        proj = project_gaussian(prim, self.cam)
        self.assertTrue(np.allclose(proj.mean2d, [self.cam.cx, self.cam.cy]))
        expected = (self.cam.fx * 0.1 / 2.0) ** 2 + 0.3
        self.assertAlmostEqual(proj.cov2d[0, 0], expected)
        self.assertAlmostEqual(proj.cov2d[0, 1], 0.0)
        self.assertTrue(proj.visible)
        self.assertAlmostEqual(proj.z_cam, 2.0)

    def test_behind_camera_invisible(self):
        """Primitives behind the near plane are culled"""
        prim = GaussianPrimitive(np.array([0.0, 0.0, -1.0]), np.array([1.0, 0, 0, 0]), np.full(3, 0.1), 0.5,
                                 np.zeros(3))
        self.assertFalse(project_gaussian(prim, self.cam).visible)

    def test_far_off_screen_invisible(self):
        """Primitives far outside the frustum are culled"""
        prim = GaussianPrimitive(np.array([50.0, 0.0, 2.0]), np.array([1.0, 0, 0, 0]), np.full(3, 0.1), 0.5,
                                 np.zeros(3))
        self.assertFalse(project_gaussian(prim, self.cam).visible)

    def test_splat_beside_near_plane_is_culled(self):
        """A splat just past the near plane and far off to the side neither projects nor draws"""
        scene = single_splat(z=0.015, opacity=0.9, scale=0.117, xy=(-2.7, 0.47))
        self.assertFalse(project_gaussian(scene[0], self.cam).visible)
        self.assertEqual(len(project_scene(scene, self.cam)), 0)
        self.assertTrue(np.all(render(scene, self.cam).alpha == 0.0))

    def test_guard_band(self):
        """Off-image means inside 1.3x the half field of view stay visible; beyond it they are culled"""
        half_fov = 0.5 * self.cam.width / self.cam.fx
        inside = single_splat(z=3.0, scale=0.3, xy=(3.0 * 1.15 * half_fov, 0.0))
        outside = single_splat(z=3.0, scale=0.3, xy=(3.0 * 1.45 * half_fov, 0.0))
        near_edge = project_gaussian(inside[0], self.cam)
        self.assertGreater(near_edge.mean2d[0], self.cam.width - 0.5)
        self.assertTrue(near_edge.visible)
        beyond = project_gaussian(outside[0], self.cam)
        # its footprint would still reach the image
        self.assertLess(beyond.mean2d[0] - 3.0 * np.sqrt(beyond.cov2d[0, 0]), self.cam.width - 0.5)
        self.assertFalse(beyond.visible)

        self.assertFalse(project_gaussian(prim, self.cam).visible)

    def test_sort_order_depth_then_index(self):
        """Projected splats are sorted by depth; equal depths by index"""
        scene = GaussianScene.from_arrays(
            means=[[0.0, 0.0, 4.0], [0.1, 0.0, 2.0], [-0.1, 0.0, 4.0]],
            rotations=np.tile([1.0, 0, 0, 0], (3, 1)), scales=np.full((3, 3), 0.1),
            opacities=[0.5] * 3, colors=np.zeros((3, 3)))
        proj = project_scene(scene, self.cam)
        self.assertEqual(list(proj.index), [1, 0, 2])


class TestRender(unittest.TestCase):
    def setUp(self):
        """Camera and settings shared by the render tests"""
        self.cam = front_camera(24)
        self.settings = RenderSettings()

    def test_empty_scene(self):
        """An empty scene renders black with zero alpha and invalid depth"""
        buffers = render(GaussianScene.empty(), self.cam)
        self.assertTrue(np.all(buffers.rgb == 0.0))
        self.assertTrue(np.all(buffers.alpha == 0.0))
        self.assertTrue(np.all(np.isnan(buffers.depth)))

    def test_single_splat_center(self):
        """Center pixel of a single splat carries its opacity, color and depth"""
        scene = single_splat(z=3.0, opacity=0.8)
        cam = front_camera(25)
        buffers = render(scene, cam)
        center = (12, 12)
        self.assertAlmostEqual(buffers.alpha[center], 0.8)
        self.assertTrue(np.allclose(buffers.rgb[center], 0.8 * np.array([0.2, 0.4, 0.6])))
        self.assertAlmostEqual(buffers.depth[center], 3.0)

    def test_opaque_front_hides_back(self):
        """A clamped front splat lets 1% of the back splat through"""
        cam = front_camera(25)
        front = single_splat(z=2.0, opacity=1.0, scale=0.5, color=(1.0, 0.0, 0.0))
        back = single_splat(z=4.0, opacity=1.0, scale=1.0, color=(0.0, 0.0, 1.0))
        buffers = render(front.concat(back), cam)
        center = (12, 12)
        self.assertAlmostEqual(buffers.rgb[center][0], 0.99)
        self.assertAlmostEqual(buffers.rgb[center][2], 0.01 * 0.99)

    def test_two_splat_expected_depth(self):
        """Two half-opaque splats on one pixel at z=2 and z=4 give depth (0.5*2 + 0.25*4) / 0.75"""
        cam = front_camera(9)
        scene = single_splat(z=2.0, opacity=0.5, scale=0.1).concat(single_splat(z=4.0, opacity=0.5, scale=0.1))
        buffers = render(scene, cam)
        self.assertAlmostEqual(buffers.alpha[4, 4], 0.75)
        self.assertAlmostEqual(buffers.depth[4, 4], 8.0 / 3.0)

    def test_storage_order_invariance(self):
        """Permuting the primitives does not change the render"""
        rng = np.random.default_rng(11)
        scene = random_scene(rng, n=40)
        permuted = scene.subset(rng.permutation(len(scene)))
        a = render(scene, self.cam)
        b = render(permuted, self.cam)
        self.assertTrue(np.allclose(a.rgb, b.rgb, atol=1e-6))
        self.assertTrue(np.allclose(a.alpha, b.alpha, atol=1e-6))
        self.assertTrue(np.array_equal(np.isnan(a.depth), np.isnan(b.depth)))
        valid = ~np.isnan(a.depth)
        self.assertTrue(np.allclose(a.depth[valid], b.depth[valid], atol=1e-6))

    def test_matches_reference(self):
        """Tile renderer agrees with the naive per-pixel renderer"""
        for seed in range(3):
            scene = random_scene(np.random.default_rng(seed), n=30)
            fast = render(scene, self.cam, self.settings)
            slow = reference_render(scene, self.cam, self.settings)
            self.assertTrue(np.allclose(fast.rgb, slow.rgb, atol=1e-9))
            self.assertTrue(np.allclose(fast.alpha, slow.alpha, atol=1e-9))
            self.assertTrue(np.array_equal(np.isnan(fast.depth), np.isnan(slow.depth)))
            valid = ~np.isnan(fast.depth)
            self.assertTrue(np.allclose(fast.depth[valid], slow.depth[valid], atol=1e-9))

    def test_tile_size_invariance(self):
        """Tile size does not change the image"""
        scene = random_scene(np.random.default_rng(5), n=30)
        a = render(scene, self.cam, RenderSettings(tile_size=16))
        b = render(scene, self.cam, RenderSettings(tile_size=5))
        self.assertTrue(np.allclose(a.rgb, b.rgb, atol=1e-12))
        self.assertTrue(np.allclose(a.alpha, b.alpha, atol=1e-12))

    def test_workers_are_bit_identical(self):
        """Threaded tile rendering is bit-identical to serial"""
        scene = random_scene(np.random.default_rng(6), n=40)
        serial = render(scene, self.cam, RenderSettings(tile_size=8, workers=0))
        threaded = render(scene, self.cam, RenderSettings(tile_size=8, workers=4))
        self.assertTrue(np.array_equal(serial.rgb, threaded.rgb))
        self.assertTrue(np.array_equal(serial.alpha, threaded.alpha))

    def test_buffer_ranges(self):
        """Alpha stays in [0, 1] and depth lies within the primitive depth range"""
        scene = random_scene(np.random.default_rng(8), n=40, opacity_range=(0.9, 1.0))
        buffers = render(scene, self.cam)
        self.assertGreaterEqual(buffers.alpha.min(), 0.0)
        self.assertLessEqual(buffers.alpha.max(), 1.0)
        valid = ~np.isnan(buffers.depth)
        self.assertTrue(np.all(buffers.depth[valid] >= scene.means[:, 2].min() - 1e-9))
        self.assertTrue(np.all(buffers.depth[valid] <= scene.means[:, 2].max() + 1e-9))


if __name__ == '__main__':
    unittest.main()
