import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, List

STAGES = (
    "reference-image supply",
    "target-gaussian supply",
    "depth-alignment",
    "ray-register",
    "multi-view refinement",
)


@dataclass
class TimingReport:
    """Per-stage wall time in seconds; skipped stages are reported as 0."""
    stages: Dict[str, float] = field(default_factory=lambda: {name: 0.0 for name in STAGES})
    skipped: Dict[str, bool] = field(default_factory=lambda: {name: False for name in STAGES})

    @property
    def total(self) -> float:
        return sum(self.stages.values())

    def to_dict(self) -> dict:
        return {
            'stages': {name: {'seconds': self.stages[name], 'skipped': self.skipped[name]} for name in self.stages},
            'total': self.total,
        }

    def to_table(self) -> str:
        width = max(len(name) for name in list(self.stages) + ['total'])
        lines = [f"{'stage':<{width}}  {'time (s)':>10}"]
        for name, seconds in self.stages.items():
            note = "  (skipped)" if self.skipped[name] else ""
            lines.append(f"{name:<{width}}  {seconds:>10.3f}{note}")
        lines.append(f"{'total':<{width}}  {self.total:>10.3f}")
        return "\n".join(lines)


class StageTimer:
    """Accumulates monotonic wall time per pipeline stage."""

    def __init__(self):
        self.report = TimingReport()

    @contextmanager
    def stage(self, name: str):
        if name not in self.report.stages:
            raise KeyError(f"Unknown pipeline stage: {name}")
        start = time.perf_counter()
        try:
            yield
        finally:
            elapsed = time.perf_counter() - start
            self.report.stages[name] += elapsed
            logging.debug(f"Stage '{name}' took {elapsed:.3f}s")

    def skip(self, name: str):
        self.report.stages[name] = 0.0
        self.report.skipped[name] = True
        logging.info(f"Stage '{name}' skipped")


def timing_report(durations: Dict[str, float], skipped: List[str] = ()) -> TimingReport:
    """Build a report from recorded stage durations (seconds)."""
    report = TimingReport()
    for name, seconds in durations.items():
        if name not in report.stages:
            raise KeyError(f"Unknown pipeline stage: {name}")
        report.stages[name] = float(seconds)
    for name in skipped:
        report.stages[name] = 0.0
        report.skipped[name] = True
    return report
