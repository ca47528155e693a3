"""
Generate-then-register scene completion.

Stages, in order: reference-image supply, target-Gaussian supply (stereo
anchor + lifting), depth alignment, ray-constrained registration, and
hole-aware integration with opacity-only multi-view refinement. Each stage
can be switched off for ablations; every run is a pure function of the
config and its seed.
"""
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from metrics.metrics import MetricError, MetricReport, geometry_metrics, image_metrics, psnr
from model.config import PipelineConfig
from model.gaussian import GaussianScene, Provenance
from oracle.synth import (CompletionCase, CorruptionSpec, OracleScene, StereoModel, build_completion_case,
                          generate_synthetic_scene, lift_target, make_reference_image, target_hole_fraction)
from pipeline.anchor import AnchorDecision, nearest_view, select_stereo_anchor
from pipeline.depth_align import AffineDepthFit, AlignmentError, apply_affine_depth, fit_affine_depth_ransac
from pipeline.integrator import (HoleMask, RefinementReport, filter_by_hole_mask, merge_scenes, opacity_refine,
                                 render_hole_mask, select_refinement_views)
from pipeline.ray_register import (RegistrationReferences, RegistrationReport, parameterize_rays,
                                   ray_constrained_optimize)
from pipeline.timing import StageTimer, TimingReport
from render.buffers import RenderBuffers
from render.rasterizer import RenderSettings, render
from storage.artifact_store import save_pfm, save_png_mask, save_png_rgb, write_json_report
from storage.scene_store import load_cameras_json, load_scene_ply, save_cameras_json, save_scene_ply

ABLATION_ROWS = {
    "full": {},
    "w/o SA": {"use_sa": False},
    "w/o DA": {"use_da": False},
    "w/o RC": {"use_rc": False},
    "w/o DA&RC": {"use_da": False, "use_rc": False},
    "w/o MV": {"use_mv": False},
}


class PipelineError(Exception):
    """Custom exception for a failed pipeline stage"""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage


def render_settings_for(config: PipelineConfig) -> RenderSettings:
    return RenderSettings(
        near_plane=config.near_plane, lowpass_eps=config.lowpass_eps, max_alpha=config.max_alpha,
        min_transmittance=config.min_transmittance, tile_size=config.tile_size,
        cutoff_sigma=config.cutoff_sigma, workers=config.workers,
    )


def corruption_spec_for(config: PipelineConfig, target_index: int) -> CorruptionSpec:
    return CorruptionSpec(
        affine_scale=config.affine_scale, affine_shift=config.affine_shift,
        ray_noise_sigma=config.ray_noise_sigma, outlier_fraction=config.outlier_fraction,
        rng_seed=config.seed * 1009 + target_index,
    )


def stereo_model_for(config: PipelineConfig) -> StereoModel:
    return StereoModel(
        reference_baseline=config.reference_baseline, max_noise_gain=config.max_noise_gain,
        gate_deg=config.anchor_gate_deg, failure_outlier_fraction=config.failure_outlier_fraction,
    )


def default_case_indices(config: PipelineConfig) -> Tuple[Tuple[int, int], int]:
    """Two context frames inside the span, the target frame at its end."""
    span = config.context_span
    second = min(max(1, int(round(0.8 * span))), span - 1)
    return (0, second), span


def build_oracle(config: PipelineConfig, trajectory_length: Optional[int] = None) -> OracleScene:
    return generate_synthetic_scene(
        preset=config.preset, n_primitives=config.n_primitives, seed=config.seed,
        trajectory_length=trajectory_length or config.trajectory_length,
        width=config.width, height=config.height, focal=config.focal,
        yaw_step_deg=config.yaw_step_deg, max_step_rotation_deg=config.max_step_rotation_deg,
        settings=render_settings_for(config),
    )


def load_oracle(config: PipelineConfig) -> Tuple[OracleScene, Optional[dict]]:
    """Ground-truth scene and cameras from config.input_dir, plus the case layout if saved."""
    directory = config.input_dir
    scene = load_scene_ply(os.path.join(directory, 'gt_scene.ply'))
    cameras = load_cameras_json(os.path.join(directory, 'cameras.json'))
    layout = None
    layout_path = os.path.join(directory, 'case.json')
    if os.path.exists(layout_path):
        with open(layout_path, 'r', encoding='utf-8') as f:
            layout = json.load(f)
    return OracleScene(scene, tuple(cameras), config.seed, "custom", render_settings_for(config)), layout


def prepare_case(config: PipelineConfig, oracle: Optional[OracleScene] = None,
                 target_index: Optional[int] = None) -> CompletionCase:
    """Oracle (generated or loaded from input_dir) and the default extrapolation case."""
    layout = None
    if oracle is None:
        if config.input_dir:
            oracle, layout = load_oracle(config)
        else:
            oracle = build_oracle(config)
    contexts, target = default_case_indices(config)
    if layout:
        contexts, target = tuple(layout['context_indices']), int(layout['target_index'])
    if target_index is not None:
        target = target_index
    if target >= len(oracle.cameras):
        raise PipelineError("context supply", f"target frame {target} beyond a {len(oracle.cameras)}-frame trajectory")
    return build_completion_case(oracle, contexts, target, config.context_ray_stretch, config.lift_stride)


@dataclass
class CompletionResult:
    completed: GaussianScene
    registered_target: GaussianScene
    reference_image: np.ndarray
    target_render: RenderBuffers
    hole_mask: HoleMask
    anchor: AnchorDecision
    fit: AffineDepthFit
    alignment_fallback: bool
    target: MetricReport            # completed scene at the target view, registered target geometry
    target_before: MetricReport     # context only at the target view, lifted target geometry
    target_no_mv: MetricReport      # merged scene before refinement
    context_psnr: float
    context_psnr_pre_merge: float
    context_psnr_no_mv: float
    registration: RegistrationReport
    refinement: RefinementReport
    timing: TimingReport
    stages: Dict[str, bool] = field(default_factory=dict)

    def report(self) -> dict:
        """Deterministic summary (no wall times)."""
        return {
            'stages': self.stages,
            'anchor': {
                'index': self.anchor.anchor_index,
                'relative_rotation_deg': self.anchor.relative_rotation_deg,
                'baseline': self.anchor.baseline,
                'fallback_used': self.anchor.fallback_used,
            },
            'depth_alignment': {
                'scale': self.fit.scale,
                'shift': self.fit.shift,
                'inlier_count': self.fit.inlier_count,
                'inlier_fraction': self.fit.inlier_fraction,
                'residual_median': self.fit.residual_median,
                'fallback_used': self.alignment_fallback,
            },
            'hole_fraction': self.hole_mask.fraction,
            'metrics': {
                'target': self.target.to_dict(),
                'target_before_completion': self.target_before.to_dict(),
                'target_without_refinement': self.target_no_mv.to_dict(),
                'context_psnr': self.context_psnr,
                'context_psnr_pre_merge': self.context_psnr_pre_merge,
                'context_psnr_without_refinement': self.context_psnr_no_mv,
            },
            'registration': self.registration.to_dict(),
            'refinement': self.refinement.to_dict(),
            'primitives': {
                'completed': len(self.completed),
                'registered_target': len(self.registered_target),
                'integrated': int(len(self.completed.indices_with(Provenance.TARGET))),
            },
        }


def _mean_psnr(scene: GaussianScene, cams, images, settings: RenderSettings) -> float:
    values = [psnr(render(scene, cam, settings).rgb, image) for cam, image in zip(cams, images)]
    return float(np.mean(values)) if values else math.nan


def _target_metrics(scene_render: RenderBuffers, geometry: Optional[GaussianScene], case: CompletionCase,
                    f_thresh: float) -> MetricReport:
    p, s = image_metrics(scene_render.rgb, case.target_image)
    rel = cd = fs = math.nan
    if geometry is not None and len(geometry) and len(case.gt_target):
        distances = np.linalg.norm(geometry.means - case.target_cam.center, axis=1)
        matched = distances if len(geometry) == len(case.gt_target) else None
        try:
            rel, cd, fs = geometry_metrics(geometry.means, case.gt_target.means, f_thresh,
                                           matched, case.gt_distances if matched is not None else None)
        except MetricError as e:
            logging.warning(f"Geometry metrics unavailable: {e}")
    return MetricReport(psnr=p, ssim=s, abs_rel=rel, chamfer=cd, f_score=fs, f_score_threshold=f_thresh)


class _Artifacts:
    """Collects artifact writers so a failed run can flush what it has."""

    def __init__(self, output_dir: Optional[str]):
        self.output_dir = output_dir
        self.pending = {}

    def add(self, name: str, writer):
        self.pending[name] = writer

    def flush(self):
        if not self.output_dir:
            return
        os.makedirs(self.output_dir, exist_ok=True)
        for name, writer in self.pending.items():
            try:
                writer(os.path.join(self.output_dir, name))
            except Exception as e:
                logging.error(f"Could not write artifact {name}: {e}", exc_info=True)
        self.pending = {}


def complete_view(case: CompletionCase, config: PipelineConfig,
                  output_dir: Optional[str] = None) -> CompletionResult:
    """
    Run one completion step on a prepared case.

    Raises:
        PipelineError naming the failed stage, after flushing partial artifacts to output_dir
    """
    settings = render_settings_for(config)
    weights = config.loss_weights()
    timer = StageTimer()
    artifacts = _Artifacts(output_dir)
    ctx = case.context_scene
    target_cam = case.target_cam
    stage = "reference-image supply"
    renders = {}

    def ctx_render(key, cam):
        if key not in renders:
            renders[key] = render(ctx, cam, settings)
        return renders[key]

    try:
        logging.info(f"Completing target view {case.target_index} from {len(ctx)} context primitives")
        with timer.stage(stage):
            reference = make_reference_image(
                case.oracle.gt_scene, target_cam, config.reference_blur_sigma, config.reference_noise,
                seed=config.seed * 7919 + case.target_index, settings=settings)
        artifacts.add('reference.png', lambda p: save_png_rgb(reference, p))

        stage = "target-gaussian supply"
        with timer.stage(stage):
            if config.use_sa:
                anchor = select_stereo_anchor(target_cam, case.context_cams, config.anchor_gate_deg)
            else:
                anchor = nearest_view(target_cam, case.context_cams)
                logging.info(f"Stereo anchor selection off; nearest view {anchor.anchor_index} used")
            anchor_cam = case.context_cams[anchor.anchor_index]
            lifted = lift_target(case, anchor_cam, corruption_spec_for(config, case.target_index),
                                 stereo_model_for(config))
        artifacts.add('lifted_target.ply', lambda p: save_scene_ply(lifted.scene, p))

        stage = "depth-alignment"
        fit, fallback, rays = AffineDepthFit.identity(), False, None
        tgt = lifted.scene
        if config.use_da:
            with timer.stage(stage):
                if config.alignment_view == "anchor":
                    ref = ctx_render('anchor', anchor_cam)
                    pred = lifted.anchor_depth
                else:
                    ref = ctx_render('target', target_cam)
                    pred = lifted.target_depth
                try:
                    fit = fit_affine_depth_ransac(
                        pred, ref.depth, ref.alpha >= weights.tau, config.ransac_iters,
                        config.ransac_thresh_frac, config.ransac_min_inlier_fraction, seed=config.seed)
                except AlignmentError as e:
                    logging.warning(f"Depth alignment failed ({e}); continuing with the identity fit")
                    fallback = True
                aligned = apply_affine_depth(lifted.target_depth, fit)
                tgt, rays = parameterize_rays(lifted.scene, target_cam, aligned, config.near_plane,
                                              config.depth_sampling)
        else:
            timer.skip(stage)

        stage = "ray-register"
        registration = RegistrationReport(0.0, 0.0)
        if config.use_rc:
            with timer.stage(stage):
                if rays is None:
                    tgt, rays = parameterize_rays(lifted.scene, target_cam, lifted.target_depth,
                                                  config.near_plane, config.depth_sampling)
                at_target = ctx_render('target', target_cam)
                at_anchor = ctx_render('anchor', anchor_cam)
                refs = RegistrationReferences(
                    image=reference,
                    target_depth=at_target.depth, target_valid=at_target.alpha >= weights.tau,
                    anchor_depth=at_anchor.depth, anchor_valid=at_anchor.alpha >= weights.tau,
                )
                tgt, registration = ray_constrained_optimize(
                    ctx, tgt, rays, target_cam, anchor_cam, refs, weights, config.reg_iters, config.reg_lr,
                    settings, config.optimizer, config.max_backoffs)
        else:
            timer.skip(stage)
        registered = tgt
        artifacts.add('registered_target.ply', lambda p: save_scene_ply(registered, p))
        artifacts.add('registration.json', lambda p: write_json_report(registration.to_dict(), p))

        stage = "multi-view refinement"
        refinement = RefinementReport(0.0, 0.0)
        with timer.stage(stage):
            hole_mask = render_hole_mask(ctx, target_cam, weights.tau, settings)
            kept = filter_by_hole_mask(registered, hole_mask, target_cam, config.near_plane)
            merged = merge_scenes(ctx, kept)
            completed = merged
            new_indices = np.arange(len(merged) - len(kept), len(merged))
            if config.use_mv:
                views = select_refinement_views(target_cam, case.context_cams, config.n_context_views)
                completed, refinement = opacity_refine(
                    merged, new_indices, target_cam, reference,
                    [case.context_cams[i] for i in views], [case.context_images[i] for i in views],
                    weights, config.refine_iters, config.refine_lr, settings, config.optimizer,
                    config.max_backoffs)
        if not config.use_mv:
            timer.skip(stage)
        artifacts.add('hole_mask.png', lambda p: save_png_mask(hole_mask.mask, p))
        artifacts.add('completed.ply', lambda p: save_scene_ply(completed, p))

        stage = "evaluation"
        f_thresh = config.f_score_frac * case.scene_diagonal
        target_render = render(completed, target_cam, settings)
        result = CompletionResult(
            completed=completed, registered_target=registered, reference_image=reference,
            target_render=target_render, hole_mask=hole_mask, anchor=anchor, fit=fit,
            alignment_fallback=fallback,
            target=_target_metrics(target_render, registered, case, f_thresh),
            target_before=_target_metrics(ctx_render('target', target_cam), lifted.scene, case, f_thresh),
            target_no_mv=_target_metrics(render(merged, target_cam, settings), registered, case, f_thresh),
            context_psnr=_mean_psnr(completed, case.context_cams, case.context_images, settings),
            context_psnr_pre_merge=_mean_psnr(ctx, case.context_cams, case.context_images, settings),
            context_psnr_no_mv=_mean_psnr(merged, case.context_cams, case.context_images, settings),
            registration=registration, refinement=refinement, timing=timer.report,
            stages={'use_sa': config.use_sa, 'use_da': config.use_da, 'use_rc': config.use_rc,
                    'use_mv': config.use_mv},
        )
    except PipelineError:
        artifacts.flush()
        raise
    except Exception as e:
        logging.error(f"Pipeline stage '{stage}' failed: {e}", exc_info=True)
        artifacts.add('error.json', lambda p: write_json_report({'stage': stage, 'error': str(e)}, p))
        artifacts.flush()
        raise PipelineError(stage, str(e)) from e

    artifacts.add('target_render.png', lambda p: save_png_rgb(target_render.rgb, p))
    artifacts.add('target_depth.pfm', lambda p: save_pfm(target_render.depth, p))
    artifacts.add('metrics.json', lambda p: write_json_report(result.report(), p))
    artifacts.add('timing.json', lambda p: write_json_report(result.timing.to_dict(), p))
    artifacts.flush()
    logging.info(f"Target PSNR {result.target_before.psnr:.2f} -> {result.target.psnr:.2f} dB, "
                 f"chamfer {result.target_before.chamfer:.4f} -> {result.target.chamfer:.4f}")
    logging.info("Stage timing:\n" + result.timing.to_table())
    return result


def run_completion_pipeline(config: PipelineConfig, case: Optional[CompletionCase] = None,
                            write: bool = True) -> CompletionResult:
    """Prepare the case (oracle or input_dir) and complete its target view."""
    if case is None:
        try:
            case = prepare_case(config)
        except PipelineError:
            raise
        except Exception as e:
            logging.error(f"Context supply failed: {e}", exc_info=True)
            raise PipelineError("context supply", str(e)) from e
    return complete_view(case, config, config.output_dir if write else None)


def generate_inputs(config: PipelineConfig, output_dir: str) -> CompletionCase:
    """Write an oracle scene, its cameras and the default case to disk (synth-generate)."""
    case = prepare_case(config, oracle=build_oracle(config))
    oracle = case.oracle
    save_scene_ply(oracle.gt_scene, os.path.join(output_dir, 'gt_scene.ply'))
    save_cameras_json(list(oracle.cameras), os.path.join(output_dir, 'cameras.json'))
    save_scene_ply(case.context_scene, os.path.join(output_dir, 'context.ply'))
    save_scene_ply(case.gt_target, os.path.join(output_dir, 'target_gt.ply'))
    for k, image in zip(case.context_indices, case.context_images):
        save_png_rgb(image, os.path.join(output_dir, f'context_{k:03d}.png'))
    save_png_rgb(case.target_image, os.path.join(output_dir, 'target_gt.png'))
    write_json_report({
        'preset': oracle.preset, 'seed': config.seed, 'n_primitives': len(oracle.gt_scene),
        'context_indices': list(case.context_indices), 'target_index': case.target_index,
    }, os.path.join(output_dir, 'case.json'))
    return case


@dataclass
class LongRunStep:
    step: int
    target_index: int
    target_psnr: float
    context_psnr: float
    chamfer: float
    wall_time: float

    def to_dict(self, include_timing: bool = False) -> dict:
        out = {'step': self.step, 'target_index': self.target_index, 'target_psnr': self.target_psnr,
               'context_psnr': self.context_psnr, 'chamfer': self.chamfer}
        if include_timing:
            out['wall_time'] = self.wall_time
        return out


@dataclass
class LongRunReport:
    steps: List[LongRunStep]
    reports: List[MetricReport]

    @property
    def drift_curve(self) -> List[float]:
        return [s.chamfer for s in self.steps]

    @property
    def context_psnr_stable(self) -> bool:
        """No step's running context PSNR falls more than 1 dB below the first step's."""
        values = [s.context_psnr for s in self.steps]
        return bool(values) and min(values) >= values[0] - 1.0

    def to_dict(self, include_timing: bool = False) -> dict:
        return {
            'steps': [s.to_dict(include_timing) for s in self.steps],
            'drift_curve': self.drift_curve,
            'context_psnr_stable': self.context_psnr_stable,
        }


def run_long_sequence_harness(config: PipelineConfig, length: Optional[int] = None,
                              interval: Optional[int] = None, write: bool = True) -> LongRunReport:
    """
    Complete `length` successive target views along the trajectory.

    Each merged scene becomes the context of the next step; the completed
    target view joins the context views with its reference image.
    """
    length = config.long_run_steps if length is None else length
    interval = config.long_run_interval if interval is None else interval
    if length < 1 or interval < 1:
        raise PipelineError("long run", f"length and interval must be at least 1, got {length} and {interval}")
    contexts, first_target = default_case_indices(config)
    needed = first_target + (length - 1) * interval + 1
    oracle = build_oracle(config, max(config.trajectory_length, needed))

    initial = build_completion_case(oracle, contexts, first_target, config.context_ray_stretch, config.lift_stride)
    initial_cams, initial_images = initial.context_cams, initial.context_images
    scene, cams, images, indices = initial.context_scene, list(initial_cams), list(initial_images), list(contexts)
    settings = render_settings_for(config)

    steps, reports = [], []
    for j in range(length):
        target_index = first_target + j * interval
        case = initial if j == 0 else build_completion_case(
            oracle, indices, target_index, config.context_ray_stretch, config.lift_stride,
            context_scene=scene, context_cams=cams, context_images=images)
        step_dir = os.path.join(config.output_dir, f'step_{j:02d}') if write else None
        result = complete_view(case, config, step_dir)
        running = _mean_psnr(result.completed, initial_cams, initial_images, settings)
        steps.append(LongRunStep(j, target_index, result.target.psnr, running, result.target.chamfer,
                                 result.timing.total))
        reports.append(result.target)
        logging.info(f"Long run step {j}: target {target_index}, PSNR {result.target.psnr:.2f} dB, "
                     f"context PSNR {running:.2f} dB, chamfer {result.target.chamfer:.4f}, "
                     f"{result.timing.total:.2f}s")
        scene = result.completed
        cams.append(case.target_cam)
        images.append(result.reference_image)
        indices.append(target_index)

    report = LongRunReport(steps, reports)
    if not report.context_psnr_stable:
        logging.warning("Running context PSNR dropped more than 1 dB below the first step")
    if write:
        write_json_report(report.to_dict(), os.path.join(config.output_dir, 'long_run.json'))
        write_json_report([s.wall_time for s in steps], os.path.join(config.output_dir, 'long_run_timing.json'))
    return report


def _ablation_job(job: Tuple[dict, str, int]) -> Tuple[str, int, Dict[str, float]]:
    values, row, seed = job
    config = PipelineConfig.from_dict(values).with_overrides(seed=seed, **ABLATION_ROWS[row])
    result = run_completion_pipeline(config, write=False)
    return row, seed, {
        'psnr': result.target.psnr, 'abs_rel': result.target.abs_rel,
        'chamfer': result.target.chamfer, 'f_score': result.target.f_score,
    }


def _run_jobs(fn, jobs: list, workers: int) -> list:
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(job) for job in jobs]


def run_ablation_grid(config: PipelineConfig, seeds: Sequence[int],
                      rows: Optional[Sequence[str]] = None) -> dict:
    """
    Mean target metrics per ablation row over independent seeds.

    Seeds run as separate processes when config.workers > 1; each job renders serially.
    """
    rows = list(rows or ABLATION_ROWS)
    unknown = [r for r in rows if r not in ABLATION_ROWS]
    if unknown:
        raise ValueError(f"Unknown ablation rows: {unknown}")
    values = config.with_overrides(workers=0).to_dict()
    jobs = [(values, row, seed) for row in rows for seed in seeds]
    logging.info(f"Ablation grid: {len(rows)} rows x {len(seeds)} seeds")
    outcomes = _run_jobs(_ablation_job, jobs, config.workers)

    per_seed = {row: {} for row in rows}
    for row, seed, metrics in outcomes:
        per_seed[row][seed] = metrics
    means = {row: {name: float(np.nanmean([per_seed[row][s][name] for s in seeds]))
                   for name in ('psnr', 'abs_rel', 'chamfer', 'f_score')} for row in rows}
    for row in rows:
        logging.info(f"{row:>10}: PSNR {means[row]['psnr']:.2f}  AbsRel {means[row]['abs_rel']:.4f}  "
                     f"CD {means[row]['chamfer']:.4f}  F {means[row]['f_score']:.4f}")
    return {'rows': means, 'per_seed': {row: {str(s): m for s, m in v.items()} for row, v in per_seed.items()}}


def find_hole_target(config: PipelineConfig, oracle: OracleScene) -> CompletionCase:
    """First frame past the span whose context leaves at least min_hole_fraction unobserved."""
    contexts, start = default_case_indices(config)
    best, best_fraction = None, -1.0
    for index in range(start, len(oracle.cameras)):
        case = build_completion_case(oracle, contexts, index, config.context_ray_stretch, config.lift_stride)
        fraction = target_hole_fraction(case, config.tau)
        if fraction >= config.min_hole_fraction:
            logging.info(f"Frame {index} leaves {fraction:.1%} of the target view unobserved")
            return case
        if fraction > best_fraction:
            best, best_fraction = case, fraction
    logging.warning(f"No frame reaches a {config.min_hole_fraction:.0%} hole fraction; "
                    f"using frame {best.target_index} ({best_fraction:.1%})")
    return best


def _alignment_job(job: Tuple[dict, int]) -> dict:
    values, seed = job
    config = PipelineConfig.from_dict(values).with_overrides(seed=seed)
    case = find_hole_target(config, build_oracle(config))
    out = {'seed': seed, 'target_index': case.target_index, 'hole_fraction': target_hole_fraction(case, config.tau)}
    for view in ("anchor", "target"):
        result = complete_view(case, config.with_overrides(alignment_view=view))
        out[view] = {'chamfer': result.target.chamfer, 'f_score': result.target.f_score,
                     'abs_rel': result.target.abs_rel, 'scale': result.fit.scale, 'shift': result.fit.shift}
    return out


def compare_alignment_strategies(config: PipelineConfig, seeds: Sequence[int]) -> dict:
    """Anchor-view versus target-view depth alignment on views with large holes."""
    values = config.with_overrides(workers=0).to_dict()
    per_seed = _run_jobs(_alignment_job, [(values, s) for s in seeds], config.workers)
    wins = sum(1 for r in per_seed if r['anchor']['chamfer'] < r['target']['chamfer'])
    logging.info(f"Anchor-based alignment wins {wins}/{len(per_seed)} seeds on chamfer distance")
    return {
        'per_seed': per_seed,
        'anchor_wins': wins,
        'mean': {view: {name: float(np.nanmean([r[view][name] for r in per_seed]))
                        for name in ('chamfer', 'f_score', 'abs_rel')} for view in ("anchor", "target")},
    }


def run_span_sweep(config: PipelineConfig, spans: Sequence[int] = (10, 20, 30)) -> List[dict]:
    """Target PSNR of the raw lifted prediction versus the full pipeline per extrapolation span."""
    rows = []
    for span in spans:
        spanned = config.with_overrides(context_span=span, trajectory_length=max(config.trajectory_length, span + 1))
        case = prepare_case(spanned)
        baseline = complete_view(case, spanned.with_overrides(use_da=False, use_rc=False, use_mv=False))
        full = complete_view(case, spanned)
        rows.append({
            'span': span,
            'psnr_context_only': baseline.target_before.psnr,
            'psnr_baseline': baseline.target.psnr,
            'psnr_completed': full.target.psnr,
            'chamfer_baseline': baseline.target.chamfer,
            'chamfer_completed': full.target.chamfer,
        })
        logging.info(f"Span {span}: baseline {baseline.target.psnr:.2f} dB, completed {full.target.psnr:.2f} dB")
    return rows
