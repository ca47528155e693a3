import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from model.camera import Camera


class AnchorError(Exception):
    """Custom exception for anchor selection errors"""
    pass


@dataclass(frozen=True)
class AnchorDecision:
    anchor_index: int
    relative_rotation_deg: float
    baseline: float
    fallback_used: bool


def relative_rotation_deg(a: Camera, b: Camera) -> float:
    """Geodesic angle between two camera orientations, in [0, 180] degrees."""
    cos_theta = (np.trace(a.rotation @ b.rotation.T) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(cos_theta, -1.0, 1.0))))


def select_stereo_anchor(target: Camera, contexts: Sequence[Camera], gate_deg: float = 45.0) -> AnchorDecision:
    """
    Pick the context view to pair with the target for lifting.

    Among contexts rotated less than `gate_deg` from the target, take the one
    with the largest baseline (camera-center distance). When none passes the
    gate, fall back to the smallest rotation. Ties go to the lowest index.
    """
    if not contexts:
        raise AnchorError("cannot select a stereo anchor from an empty context list")

    rotations = np.array([relative_rotation_deg(target, c) for c in contexts])
    baselines = np.array([np.linalg.norm(target.center - c.center) for c in contexts])
    gated = np.flatnonzero(rotations < gate_deg)

    if len(gated):
        # argmax returns the first maximum, i.e. the lowest index
        index = int(gated[np.argmax(baselines[gated])])
        fallback = False
    else:
        index = int(np.argmin(rotations))
        fallback = True
        logging.warning(f"No context view within {gate_deg:.1f} deg of the target; "
                        f"falling back to view {index} ({rotations[index]:.1f} deg)")

    decision = AnchorDecision(index, float(rotations[index]), float(baselines[index]), fallback)
    logging.info(f"Stereo anchor: view {index}, rotation {decision.relative_rotation_deg:.2f} deg, "
                 f"baseline {decision.baseline:.3f}, fallback={fallback}")
    return decision


def nearest_view(target: Camera, contexts: Sequence[Camera]) -> AnchorDecision:
    """Nearest context view by camera-center distance (the policy used when stereo selection is off)."""
    if not contexts:
        raise AnchorError("cannot select a nearest view from an empty context list")
    baselines = np.array([np.linalg.norm(target.center - c.center) for c in contexts])
    index = int(np.argmin(baselines))
    return AnchorDecision(index, relative_rotation_deg(target, contexts[index]), float(baselines[index]), False)
