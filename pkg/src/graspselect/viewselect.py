"""Pick the least ambiguous camera view before running the pipeline.

Each view is scored by an object detector's maximum confidence for the task
object; the argmax view feeds the rest of the pipeline. The detector is an
interface so a real open-vocabulary model can plug in; the bundled stub
scores views from ground truth (scene-file annotations or analytic region
visibility), keeping view selection testable offline.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

from .errors import ConfigError, DetectorFailure
from .scenes import SceneDescription, region_visibility


class Detector(Protocol):
    def score_view(self, scene: SceneDescription, view_index: int,
                   object_prompt: str) -> float: ...


@dataclass(frozen=True)
class DetectorScore:
    view_index: int
    confidence: float
    failed: bool = False

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ConfigError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class StubDetector:
    """Ground-truth detector: annotated visibility, else analytic visibility.

    The analytic fallback measures what fraction of the task's target region
    surface is unoccluded and in-frustum, which tracks how unambiguous the
    region appears from that view.
    """

    samples: int = 256
    seed: int = 0

    def score_view(self, scene: SceneDescription, view_index: int,
                   object_prompt: str) -> float:
        annotated = scene.views[view_index].visibility
        if annotated is not None:
            return float(annotated)
        if scene.task is None:
            raise DetectorFailure("stub detector needs a task or annotations")
        return region_visibility(scene, view_index,
                                 scene.task.target_object,
                                 scene.task.target_region,
                                 samples=self.samples, seed=self.seed)


def score_views(scene: SceneDescription, object_prompt: str,
                detector: Detector | None = None) -> list[DetectorScore]:
    """One score per view, in view order; detector failures score 0."""
    detector = detector or StubDetector()
    out = []
    for i in range(len(scene.views)):
        try:
            conf = float(detector.score_view(scene, i, object_prompt))
            out.append(DetectorScore(view_index=i,
                                     confidence=min(max(conf, 0.0), 1.0)))
        except DetectorFailure:
            out.append(DetectorScore(view_index=i, confidence=0.0, failed=True))
    return out


def select_view(scores: list[DetectorScore]) -> int:
    """Argmax confidence; ties break to the lowest view index."""
    if not scores:
        raise ConfigError("no views to select from")
    best = scores[0]
    for s in scores[1:]:
        if s.confidence > best.confidence:
            best = s
    return best.view_index
