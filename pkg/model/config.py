import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Dict, Optional

import yaml


class ConfigError(Exception):
    """Custom exception for invalid configuration"""
    pass


def default_workers() -> int:
    """Worker threads for tile parallelism, from SPLATCOMPLETE_WORKERS (0 = serial)."""
    try:
        return max(0, int(os.environ.get('SPLATCOMPLETE_WORKERS', '0')))
    except ValueError:
        logging.warning(f"Ignoring invalid SPLATCOMPLETE_WORKERS={os.environ.get('SPLATCOMPLETE_WORKERS')!r}")
        return 0


@dataclass(frozen=True)
class LossWeights:
    lambda_d: float = 1.0
    lambda_s: float = 1.0
    lambda_c: float = 0.1
    lambda_mv: float = 0.1
    tau: float = 0.5
    # where lambda_mv sits in the multi-view loss: "target" weights the
    # pseudo-ground-truth term (as the loss is written), "context" the context views
    lambda_mv_on: str = "target"

    def __post_init__(self):
        for name in ('lambda_d', 'lambda_s', 'lambda_c', 'lambda_mv'):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if not 0.0 < self.tau < 1.0:
            raise ConfigError(f"tau must lie in (0, 1), got {self.tau}")
        if self.lambda_mv_on not in ("target", "context"):
            raise ConfigError(f"lambda_mv_on must be 'target' or 'context', got {self.lambda_mv_on!r}")


@dataclass(frozen=True)
class PipelineConfig:
    """
    Every knob of the completion pipeline.

    Stage toggles mirror the ablation rows: use_sa (stereo anchor), use_da
    (RANSAC depth alignment), use_rc (ray-constrained registration), use_mv
    (opacity-only multi-view refinement).
    """
    # stage toggles
    use_sa: bool = True
    use_da: bool = True
    use_rc: bool = True
    use_mv: bool = True

    # io
    input_dir: Optional[str] = None
    output_dir: str = "out"
    seed: int = 0
    workers: int = field(default_factory=default_workers)

    # renderer
    near_plane: float = 0.01
    lowpass_eps: float = 0.3
    max_alpha: float = 0.99
    min_transmittance: float = 1e-4
    tile_size: int = 16
    cutoff_sigma: float = 3.0

    # anchor selection
    anchor_gate_deg: float = 45.0

    # depth alignment
    ransac_iters: int = 256
    ransac_thresh_frac: float = 0.05
    ransac_min_inlier_fraction: float = 0.2

    # ray-constrained registration
    reg_iters: int = 50
    reg_lr: float = 0.01
    lambda_d: float = 1.0
    lambda_s: float = 1.0
    lambda_c: float = 0.1
    depth_sampling: str = "nearest"
    optimizer: str = "gd"
    max_backoffs: int = 6

    # integration and refinement
    tau: float = 0.5
    refine_iters: int = 30
    refine_lr: float = 0.08
    lambda_mv: float = 0.1
    lambda_mv_on: str = "target"
    n_context_views: int = 2

    # metrics
    f_score_frac: float = 0.05

    # oracle scene
    preset: str = "room"
    n_primitives: int = 4000
    width: int = 96
    height: int = 96
    focal: float = 80.0
    trajectory_length: int = 51
    context_span: int = 30
    yaw_step_deg: float = 1.4
    max_step_rotation_deg: float = 5.0
    reference_blur_sigma: float = 0.0
    reference_noise: float = 0.0
    context_ray_stretch: float = 0.1
    lift_stride: int = 2

    # corruption of the feed-forward stand-in
    affine_scale: float = 1.15
    affine_shift: float = 0.1
    ray_noise_sigma: float = 0.05
    outlier_fraction: float = 0.3
    # stereo model of the lifting stand-in
    reference_baseline: float = 2.0
    max_noise_gain: float = 8.0
    failure_outlier_fraction: float = 0.8
    # "anchor" fits depth in the stereo anchor view, "target" in the target view
    alignment_view: str = "anchor"
    min_hole_fraction: float = 0.4

    # long-sequence harness
    long_run_steps: int = 5
    long_run_interval: int = 4

    # budgets
    cpu_budget_s: float = 120.0

    def __post_init__(self):
        if self.depth_sampling not in ("nearest", "bilinear"):
            raise ConfigError(f"depth_sampling must be 'nearest' or 'bilinear', got {self.depth_sampling!r}")
        if self.optimizer not in ("gd", "adam"):
            raise ConfigError(f"optimizer must be 'gd' or 'adam', got {self.optimizer!r}")
        if self.alignment_view not in ("anchor", "target"):
            raise ConfigError(f"alignment_view must be 'anchor' or 'target', got {self.alignment_view!r}")
        if self.yaw_step_deg > self.max_step_rotation_deg:
            raise ConfigError(f"yaw_step_deg {self.yaw_step_deg} exceeds max_step_rotation_deg {self.max_step_rotation_deg}")
        if self.preset not in ("room", "terrain"):
            raise ConfigError(f"preset must be 'room' or 'terrain', got {self.preset!r}")
        if self.affine_scale <= 0:
            raise ConfigError(f"affine_scale must be positive, got {self.affine_scale}")
        for name in ('ray_noise_sigma', 'outlier_fraction', 'ransac_thresh_frac', 'failure_outlier_fraction',
                     'min_hole_fraction'):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {value}")
        for name in ('reg_iters', 'refine_iters', 'ransac_iters', 'n_context_views', 'workers'):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative, got {getattr(self, name)}")
        for name in ('tile_size', 'lift_stride', 'width', 'height', 'long_run_steps', 'long_run_interval'):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1, got {getattr(self, name)}")
        if self.trajectory_length <= self.context_span:
            raise ConfigError(f"trajectory_length {self.trajectory_length} must exceed context_span {self.context_span}")
        if self.context_span < 2:
            raise ConfigError(f"context_span must be at least 2, got {self.context_span}")
        if self.n_primitives < 1:
            raise ConfigError("n_primitives must be at least 1")
        # validates the weight ranges
        self.loss_weights()

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            lambda_d=self.lambda_d, lambda_s=self.lambda_s, lambda_c=self.lambda_c,
            lambda_mv=self.lambda_mv, tau=self.tau, lambda_mv_on=self.lambda_mv_on,
        )

    def with_overrides(self, **overrides) -> 'PipelineConfig':
        """Copy with the given non-None values replaced (CLI flags win over the file)."""
        known = {f.name for f in fields(self)}
        unknown = set(overrides) - known
        if unknown:
            raise ConfigError(f"Unknown config keys: {sorted(unknown)}")
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @staticmethod
    def from_dict(values: Dict[str, Any]) -> 'PipelineConfig':
        return PipelineConfig().with_overrides(**values)

    @staticmethod
    def from_yaml(path: str) -> 'PipelineConfig':
        """Load a flat key/value YAML config file."""
        try:
            with open(path, 'r', encoding='utf-8') as f:
                values = yaml.safe_load(f) or {}
        except (OSError, yaml.YAMLError) as e:
            logging.error(f"Error reading config {path}: {e}")
            raise ConfigError(f"Failed to read config {path}: {e}")
        if not isinstance(values, dict):
            raise ConfigError(f"Config {path} must be a key/value mapping")
        logging.info(f"Loaded {len(values)} config keys from {path}")
        return PipelineConfig.from_dict(values)
