import os
import sys
import logging
import argparse
import traceback

import numpy as np

from metrics.metrics import MetricReport, geometry_metrics, image_metrics
from model.config import ConfigError, PipelineConfig
from pipeline.completion import (ABLATION_ROWS, PipelineError, compare_alignment_strategies, generate_inputs,
                                 render_settings_for, run_ablation_grid, run_completion_pipeline,
                                 run_long_sequence_harness, run_span_sweep)
from render.rasterizer import render
from storage.artifact_store import load_png_rgb, save_pfm, save_png_mask, save_png_rgb, write_json_report
from storage.scene_store import load_cameras_json, load_scene_ply

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'


def setup_logging(verbose: bool = False):
    """File log in SPLATCOMPLETE_LOG_DIR (default: working directory) plus console output"""
    log_dir = os.environ.get('SPLATCOMPLETE_LOG_DIR', os.getcwd())
    os.makedirs(log_dir, exist_ok=True)
    log_file = os.path.join(log_dir, 'splatcomplete.log')

    root = logging.getLogger()
    root.setLevel(logging.DEBUG)
    for handler in list(root.handlers):
        root.removeHandler(handler)

    file_handler = logging.FileHandler(log_file)
    file_handler.setLevel(logging.DEBUG)
    file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(file_handler)

    console_handler = logging.StreamHandler()
    console_handler.setLevel(logging.DEBUG if verbose else logging.INFO)
    console_handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(console_handler)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='SplatComplete: generate-then-register Gaussian scene completion')
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='YAML config file (flat key/value mapping)')
    common.add_argument('--out', help='Output directory')
    common.add_argument('--seed', type=int, help='Random seed')
    common.add_argument('--workers', type=int, help='Worker threads/processes (0 = serial)')
    common.add_argument('--verbose', action='store_true', help='Debug output on the console')

    pipeline = argparse.ArgumentParser(add_help=False)
    pipeline.add_argument('--input', help='Directory with gt_scene.ply, cameras.json and optional case.json')
    pipeline.add_argument('--preset', choices=('room', 'terrain'), help='Synthetic scene preset')
    pipeline.add_argument('--n-primitives', type=int, help='Primitives in the synthetic scene')
    pipeline.add_argument('--no-sa', action='store_true', help='Nearest context view instead of the stereo anchor')
    pipeline.add_argument('--no-da', action='store_true', help='Skip RANSAC depth alignment')
    pipeline.add_argument('--no-rc', action='store_true', help='Skip ray-constrained registration')
    pipeline.add_argument('--no-mv', action='store_true', help='Skip multi-view opacity refinement')
    pipeline.add_argument('--anchor-gate-deg', type=float, help='Stereo anchor rotation gate in degrees')
    pipeline.add_argument('--ransac-iters', type=int, help='RANSAC iterations')
    pipeline.add_argument('--ransac-thresh-frac', type=float, help='Inlier threshold as a fraction of median depth')
    pipeline.add_argument('--reg-iters', type=int, help='Registration iterations')
    pipeline.add_argument('--reg-lr', type=float, help='Registration learning rate')
    pipeline.add_argument('--lambda-d', type=float, help='Target depth term weight')
    pipeline.add_argument('--lambda-s', type=float, help='Anchor stereo depth term weight')
    pipeline.add_argument('--lambda-c', type=float, help='Target color term weight')
    pipeline.add_argument('--tau', type=float, help='Hole mask alpha threshold')
    pipeline.add_argument('--refine-iters', type=int, help='Opacity refinement iterations')
    pipeline.add_argument('--refine-lr', type=float, help='Opacity refinement learning rate')
    pipeline.add_argument('--lambda-mv', type=float, help='Multi-view refinement weight')
    pipeline.add_argument('--n-context-views', type=int, help='Context views used by refinement')

    sub = parser.add_subparsers(dest='command', required=True)
    sub.add_parser('synth-generate', parents=[common, pipeline], help='Write a synthetic scene, cameras and case')
    sub.add_parser('complete', parents=[common, pipeline], help='Complete one target view')

    long_run = sub.add_parser('long-run', parents=[common, pipeline], help='Complete successive target views')
    long_run.add_argument('--length', type=int, help='Number of completion steps')
    long_run.add_argument('--interval', type=int, help='Frames between successive targets')

    render_cmd = sub.add_parser('render', parents=[common], help='Render a scene from its cameras')
    render_cmd.add_argument('--scene', required=True, help='Scene PLY')
    render_cmd.add_argument('--cameras', required=True, help='Cameras JSON')
    render_cmd.add_argument('--camera-index', type=int, help='Render only this camera')

    metrics_cmd = sub.add_parser('metrics', parents=[common], help='Compare two scenes or two images')
    metrics_cmd.add_argument('--pred', required=True, help='Predicted PLY or PNG')
    metrics_cmd.add_argument('--gt', required=True, help='Ground-truth PLY or PNG')
    metrics_cmd.add_argument('--f-thresh', type=float, help='F-Score threshold in world units')
    metrics_cmd.add_argument('--cameras', help='Cameras JSON for AbsRel ray distances')
    metrics_cmd.add_argument('--camera-index', type=int, default=0, help='Camera whose center is the ray origin')

    ablate = sub.add_parser('ablate', parents=[common, pipeline], help='Ablation grid over seeds')
    ablate.add_argument('--seeds', type=int, default=20, help='Number of seeds, starting at --seed')
    ablate.add_argument('--rows', nargs='+', choices=list(ABLATION_ROWS), help='Subset of ablation rows')

    align = sub.add_parser('align-compare', parents=[common, pipeline],
                           help='Anchor-view versus target-view depth alignment')
    align.add_argument('--seeds', type=int, default=20, help='Number of seeds, starting at --seed')

    span = sub.add_parser('span-sweep', parents=[common, pipeline], help='Target quality per extrapolation span')
    span.add_argument('--spans', type=int, nargs='+', default=[10, 20, 30], help='Extrapolation spans')

    view = sub.add_parser('view', parents=[common], help='Open the scene viewer')
    view.add_argument('--scene', help='Scene PLY to open')
    return parser


def load_config(args) -> PipelineConfig:
    """Config file values, overridden by any flag given on the command line"""
    config = PipelineConfig.from_yaml(args.config) if args.config else PipelineConfig()
    overrides = {
        'output_dir': args.out,
        'seed': args.seed,
        'workers': args.workers,
    }
    if hasattr(args, 'reg_iters'):
        overrides.update({
            'input_dir': args.input,
            'preset': args.preset,
            'n_primitives': args.n_primitives,
            'anchor_gate_deg': args.anchor_gate_deg,
            'ransac_iters': args.ransac_iters,
            'ransac_thresh_frac': args.ransac_thresh_frac,
            'reg_iters': args.reg_iters,
            'reg_lr': args.reg_lr,
            'lambda_d': args.lambda_d,
            'lambda_s': args.lambda_s,
            'lambda_c': args.lambda_c,
            'tau': args.tau,
            'refine_iters': args.refine_iters,
            'refine_lr': args.refine_lr,
            'lambda_mv': args.lambda_mv,
            'n_context_views': args.n_context_views,
        })
        for flag, key in (('no_sa', 'use_sa'), ('no_da', 'use_da'), ('no_rc', 'use_rc'), ('no_mv', 'use_mv')):
            if getattr(args, flag):
                overrides[key] = False
    return config.with_overrides(**overrides)


def run_render(args, config: PipelineConfig):
    scene = load_scene_ply(args.scene)
    cameras = load_cameras_json(args.cameras)
    indices = [args.camera_index] if args.camera_index is not None else range(len(cameras))
    settings = render_settings_for(config)
    for i in indices:
        buffers = render(scene, cameras[i], settings)
        save_png_rgb(buffers.rgb, os.path.join(config.output_dir, f'render_{i:03d}.png'))
        save_pfm(buffers.depth, os.path.join(config.output_dir, f'depth_{i:03d}.pfm'))
        save_png_mask(buffers.alpha >= config.tau, os.path.join(config.output_dir, f'coverage_{i:03d}.png'))
    logging.info(f"Rendered {len(indices)} views to {config.output_dir}")


def run_metrics(args, config: PipelineConfig) -> dict:
    if args.pred.lower().endswith('.png'):
        p, s = image_metrics(load_png_rgb(args.pred), load_png_rgb(args.gt))
        report = MetricReport(psnr=p, ssim=s)
    else:
        pred, gt = load_scene_ply(args.pred), load_scene_ply(args.gt)
        f_thresh = args.f_thresh
        if f_thresh is None:
            extent = gt.means.max(axis=0) - gt.means.min(axis=0) if len(gt) else np.zeros(3)
            f_thresh = config.f_score_frac * float(np.linalg.norm(extent))
        pred_d = gt_d = None
        if args.cameras and len(pred) == len(gt):
            origin = load_cameras_json(args.cameras)[args.camera_index].center
            pred_d = np.linalg.norm(pred.means - origin, axis=1)
            gt_d = np.linalg.norm(gt.means - origin, axis=1)
        rel, cd, fs = geometry_metrics(pred.means, gt.means, f_thresh, pred_d, gt_d)
        report = MetricReport(abs_rel=rel, chamfer=cd, f_score=fs, f_score_threshold=f_thresh)
    values = report.to_dict()
    write_json_report(values, os.path.join(config.output_dir, 'metrics.json'))
    for name, value in values.items():
        if value is not None:
            logging.info(f"{name}: {value:.6g}")
    return values


def dispatch(args) -> int:
    config = load_config(args)
    command = args.command
    if command == 'synth-generate':
        generate_inputs(config, config.output_dir)
    elif command == 'complete':
        result = run_completion_pipeline(config)
        logging.info(f"Completed scene written to {os.path.join(config.output_dir, 'completed.ply')} "
                     f"({len(result.completed)} primitives)")
    elif command == 'long-run':
        run_long_sequence_harness(config, args.length, args.interval)
    elif command == 'render':
        run_render(args, config)
    elif command == 'metrics':
        run_metrics(args, config)
    elif command == 'ablate':
        seeds = list(range(config.seed, config.seed + args.seeds))
        report = run_ablation_grid(config, seeds, args.rows)
        write_json_report(report, os.path.join(config.output_dir, 'ablation.json'))
    elif command == 'align-compare':
        seeds = list(range(config.seed, config.seed + args.seeds))
        report = compare_alignment_strategies(config, seeds)
        write_json_report(report, os.path.join(config.output_dir, 'alignment.json'))
    elif command == 'span-sweep':
        rows = run_span_sweep(config, args.spans)
        write_json_report(rows, os.path.join(config.output_dir, 'span_sweep.json'))
    elif command == 'view':
        # Tk is only needed here
        from ui.view.scene_viewer_view import launch_viewer
        launch_viewer(args.scene, render_settings_for(config))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    try:
        logging.info(f"Starting SplatComplete {args.command}")
        return dispatch(args)
    except ConfigError as e:
        logging.error(f"Configuration error: {e}")
        return 1
    except PipelineError as e:
        logging.error(f"Pipeline failed in stage '{e.stage}': {e}")
        return 1
    except Exception as e:
        logging.error(f"Unexpected error: {e}")
        logging.error(traceback.format_exc())
        return 1


if __name__ == "__main__":
    sys.exit(main())
