import unittest
import numpy as np
from model.gaussian import Provenance
from oracle.synth import (CorruptionSpec, StereoModel, build_completion_case, corrupt_target_prediction,
                          generate_synthetic_scene, lift_target, make_reference_image, pixel_aligned_primitives,
                          predict_view_depth, primitive_depth_buffer, reconstruct_context, visible_in)
from pipeline.anchor import relative_rotation_deg
from render.rasterizer import project_scene


class TestSyntheticScene(unittest.TestCase):
    def setUp(self):
        """A small room scene"""
        self.oracle = generate_synthetic_scene("room", n_primitives=600, seed=2, trajectory_length=9,
                                               width=32, height=32, focal=28.0)

    def test_deterministic(self):
        """The same seed gives the same scene and cameras"""
        again = generate_synthetic_scene("room", n_primitives=600, seed=2, trajectory_length=9,
                                         width=32, height=32, focal=28.0)
        self.assertTrue(np.array_equal(again.gt_scene.means, self.oracle.gt_scene.means))
        self.assertTrue(np.array_equal(again.gt_scene.colors, self.oracle.gt_scene.colors))
        other = generate_synthetic_scene("room", n_primitives=600, seed=3, trajectory_length=9,
                                         width=32, height=32, focal=28.0)
        self.assertFalse(np.array_equal(other.gt_scene.means, self.oracle.gt_scene.means))

    def test_trajectory_rotation_bound(self):
        """Consecutive cameras rotate by the yaw step"""
        cams = self.oracle.cameras
        self.assertEqual(len(cams), 9)
        for a, b in zip(cams, cams[1:]):
            self.assertAlmostEqual(relative_rotation_deg(a, b), 1.4, places=6)

    def test_terrain_preset(self):
        """The terrain preset renders something in every frame"""
        oracle = generate_synthetic_scene("terrain", n_primitives=800, seed=0, trajectory_length=5,
                                          width=24, height=24, focal=20.0)
        for i in range(5):
            self.assertGreater(oracle.gt_render(i).alpha.mean(), 0.2)

    def test_unknown_preset(self):
        """Only room and terrain exist"""
        with self.assertRaises(ValueError):
            generate_synthetic_scene("forest", n_primitives=10)

    def test_rotation_step_bound(self):
        """A yaw step above the bound is rejected"""
        with self.assertRaises(ValueError):
            generate_synthetic_scene("room", n_primitives=10, yaw_step_deg=6.0)

    def test_context_reconstruction(self):
        """Context keeps only primitives seen by a context view, tagged context"""
        cams = [self.oracle.cameras[0], self.oracle.cameras[2]]
        ctx = reconstruct_context(self.oracle.gt_scene, cams, ray_stretch=0.1)
        seen = visible_in(self.oracle.gt_scene, cams[0]) | visible_in(self.oracle.gt_scene, cams[1])
        self.assertEqual(len(ctx), int(seen.sum()))
        self.assertTrue(np.all(ctx.provenance == Provenance.CONTEXT.code))
        self.assertTrue(np.array_equal(ctx.means, self.oracle.gt_scene.means[seen]))

    def test_reference_image(self):
        """Clean reference equals the truth render; noise stays in range"""
        cam = self.oracle.cameras[5]
        clean = make_reference_image(self.oracle.gt_scene, cam)
        self.assertTrue(np.array_equal(clean, self.oracle.gt_render(5).rgb))
        noisy = make_reference_image(self.oracle.gt_scene, cam, blur_sigma=1.0, noise=0.05, seed=1, clean=clean)
        self.assertEqual(noisy.shape, clean.shape)
        self.assertTrue(np.all((noisy >= 0.0) & (noisy <= 1.0)))
        self.assertFalse(np.array_equal(noisy, clean))


class TestTrajectoryFraming(unittest.TestCase):
    def setUp(self):
        """Small room and terrain oracles"""
        self.oracles = [
            generate_synthetic_scene("room", n_primitives=600, seed=2, trajectory_length=9,
                                     width=32, height=32, focal=28.0),
            generate_synthetic_scene("terrain", n_primitives=800, seed=0, trajectory_length=5,
                                     width=24, height=24, focal=20.0),
        ]

    def test_geometry_stays_clear_of_the_near_plane(self):
        """Every frame sees its scene well past the near plane"""
        for oracle in self.oracles:
            near = oracle.settings.near_plane
            for i, cam in enumerate(oracle.cameras):
                depth = oracle.gt_render(i).depth
                self.assertGreater(np.median(depth[np.isfinite(depth)]), 10.0 * near, (oracle.preset, i))
                proj = project_scene(oracle.gt_scene, cam, oracle.settings)
                self.assertGreater(proj.depth.min(), 10.0 * near, (oracle.preset, i))

    def test_no_splat_covers_the_frame(self):
        """The largest projected footprint is smaller than the image"""
        for oracle in self.oracles:
            for i, cam in enumerate(oracle.cameras):
                proj = project_scene(oracle.gt_scene, cam, oracle.settings)
                self.assertLess(proj.radius.max(), min(cam.width, cam.height), (oracle.preset, i))


class TestLifting(unittest.TestCase):
    def setUp(self):
        """Completion case with contexts 0 and 3 and target 8"""
        self.oracle = generate_synthetic_scene("room", n_primitives=600, seed=4, trajectory_length=9,
                                               width=32, height=32, focal=28.0)
        self.case = build_completion_case(self.oracle, (0, 3), 8, lift_stride=2)

    def test_pixel_aligned_depth(self):
        """Pixel-aligned primitives sit at the rendered depth of their pixels"""
        buffers = self.oracle.gt_render(8)
        scene, distances = pixel_aligned_primitives(buffers, self.case.target_cam, stride=2)
        self.assertEqual(len(scene), len(distances))
        self.assertGreater(len(scene), 0)
        _, z = self.case.target_cam.project(scene.means)
        uv, _ = self.case.target_cam.project(scene.means)
        rows = np.round(uv[:, 1]).astype(int)
        cols = np.round(uv[:, 0]).astype(int)
        self.assertTrue(np.allclose(z, buffers.depth[rows, cols]))
        self.assertTrue(np.all(scene.provenance == Provenance.TARGET.code))

    def test_identity_corruption_is_exact(self):
        """No corruption returns the truth unchanged"""
        out = corrupt_target_prediction(self.case.gt_target, self.case.target_cam, CorruptionSpec())
        self.assertTrue(np.array_equal(out.means, self.case.gt_target.means))

    def test_affine_corruption(self):
        """Pure affine drift maps planar depth to (z - shift) / scale along the same rays"""
        spec = CorruptionSpec(affine_scale=1.2, affine_shift=0.1)
        out = corrupt_target_prediction(self.case.gt_target, self.case.target_cam, spec)
        cam = self.case.target_cam
        _, z_true = cam.project(self.case.gt_target.means)
        _, z_pred = cam.project(out.means)
        self.assertTrue(np.allclose(z_pred, (z_true - 0.1) / 1.2))
        rays_true = self.case.gt_target.means - cam.center
        rays_pred = out.means - cam.center
        cos = np.sum(rays_true * rays_pred, axis=1) / (np.linalg.norm(rays_true, axis=1)
                                                       * np.linalg.norm(rays_pred, axis=1))
        self.assertTrue(np.allclose(cos, 1.0))

    def test_outliers_count(self):
        """The outlier fraction picks that share of primitives"""
        spec = CorruptionSpec(outlier_fraction=0.25, rng_seed=5)
        out = corrupt_target_prediction(self.case.gt_target, self.case.target_cam, spec)
        moved = np.any(out.means != self.case.gt_target.means, axis=1)
        self.assertLessEqual(int(moved.sum()), int(round(0.25 * len(out))))
        self.assertGreater(int(moved.sum()), 0)

    def test_corruption_spec_validation(self):
        """Scale must be positive and fractions in range"""
        with self.assertRaises(ValueError):
            CorruptionSpec(affine_scale=0.0)
        with self.assertRaises(ValueError):
            CorruptionSpec(outlier_fraction=1.5)

    def test_predict_view_depth(self):
        """Dense prediction inverts the affine drift and keeps invalid pixels"""
        depth = np.array([[1.0, 2.0], [np.nan, 4.0]])
        out = predict_view_depth(depth, CorruptionSpec(affine_scale=2.0, affine_shift=1.0),
                                 np.random.default_rng(0))
        self.assertTrue(np.isnan(out[1, 0]))
        self.assertTrue(np.allclose(out[[0, 0, 1], [0, 1, 1]], [0.0, 0.5, 1.5]))

    def test_primitive_depth_buffer(self):
        """Front-most primitive wins its pixel; empty pixels are NaN"""
        buffer = primitive_depth_buffer(self.case.gt_target, self.case.target_cam)
        self.assertEqual(buffer.shape, (32, 32))
        self.assertTrue(np.any(np.isnan(buffer)))
        _, z = self.case.target_cam.project(self.case.gt_target.means)
        valid = buffer[np.isfinite(buffer)]
        self.assertTrue(np.all(valid >= z.min() - 1e-9))

    def test_stereo_model(self):
        """Short baselines amplify noise and wide rotations flood with outliers"""
        spec = CorruptionSpec(ray_noise_sigma=0.02, outlier_fraction=0.1)
        model = StereoModel(reference_baseline=2.0, max_noise_gain=8.0, gate_deg=45.0,
                            failure_outlier_fraction=0.8)
        wide = model.effective(spec, baseline=4.0, rotation_deg=10.0)
        short = model.effective(spec, baseline=0.5, rotation_deg=10.0)
        rotated = model.effective(spec, baseline=4.0, rotation_deg=60.0)
        self.assertEqual(wide.ray_noise_sigma, 0.02)
        self.assertAlmostEqual(short.ray_noise_sigma, 0.08)
        self.assertEqual(rotated.outlier_fraction, 0.8)

    def test_lift_without_corruption(self):
        """An identity corruption lifts the truth and its depth buffer"""
        lifted = lift_target(self.case, self.oracle.cameras[3], CorruptionSpec())
        self.assertTrue(np.array_equal(lifted.scene.means, self.case.gt_target.means))
        truth = primitive_depth_buffer(self.case.gt_target, self.case.target_cam)
        self.assertTrue(np.array_equal(np.isnan(lifted.target_depth), np.isnan(truth)))
        anchor_truth = self.oracle.gt_render(3).depth
        valid = np.isfinite(anchor_truth)
        self.assertTrue(np.allclose(lifted.anchor_depth[valid], anchor_truth[valid]))

    def test_case_rejects_context_target(self):
        """The target cannot be one of the context views"""
        with self.assertRaises(ValueError):
            build_completion_case(self.oracle, (0, 3), 3)


if __name__ == '__main__':
    unittest.main()
