"""Task-agnostic grasp candidates: generation, file exchange and pre-filtering.

The synthetic generator stands in for a learned grasp network: it samples
antipodal pinches on primitive objects with a deterministic confidence score,
so the rest of the pipeline can be exercised without any model. External
grasp sources plug in through the grasp-exchange JSON format.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, NoGraspExists, ParseError
from .geometry import GraspPose, GripperGeometry, contact_point
from .primitives import PrimitiveObject

GRASP_FORMAT_VERSION = 1

WORLD_UP = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class GraspCandidate:
    pose: GraspPose
    confidence: float
    contact: np.ndarray  # cached contact_point(pose, grip), world frame
    id: int

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ConfigError(f"confidence {self.confidence} outside [0, 1]")
        object.__setattr__(self, "contact",
                           np.asarray(self.contact, dtype=np.float64).reshape(3))

    def to_dict(self) -> dict:
        d = self.pose.to_dict()
        d["confidence"] = float(self.confidence)
        return d


def _sort_key(c: GraspCandidate):
    return (-c.confidence, c.id)


@dataclass(frozen=True)
class CandidateSet:
    """Candidates ordered by descending confidence (ties: lower id first)."""

    candidates: tuple[GraspCandidate, ...]
    source: str = "synthetic"

    def __post_init__(self):
        ids = [c.id for c in self.candidates]
        if len(set(ids)) != len(ids):
            raise ConfigError("candidate ids must be unique")
        ordered = tuple(sorted(self.candidates, key=_sort_key))
        object.__setattr__(self, "candidates", ordered)

    def __len__(self) -> int:
        return len(self.candidates)

    def __iter__(self):
        return iter(self.candidates)

    def __getitem__(self, i: int) -> GraspCandidate:
        return self.candidates[i]

    def contacts(self) -> np.ndarray:
        return np.array([c.contact for c in self.candidates]).reshape(-1, 3)

    def by_id(self, cid: int) -> GraspCandidate:
        for c in self.candidates:
            if c.id == cid:
                return c
        raise KeyError(cid)


@dataclass(frozen=True)
class WorkspaceScene:
    """The scene facts the feasibility filter needs."""

    workspace_center: np.ndarray  # (3,)
    workspace_radius: float
    table_height: float

    def __post_init__(self):
        object.__setattr__(
            self, "workspace_center",
            np.asarray(self.workspace_center, dtype=np.float64).reshape(3))
        if self.workspace_radius <= 0:
            raise ConfigError("workspace radius must be positive")


# --- synthetic generation ---------------------------------------------------

def _pinch_modes(part, grip: GripperGeometry) -> list[str]:
    """Which antipodal pinch families fit the gripper on this part's shape."""
    shape = part.shape
    modes = []
    if shape.kind == "sphere":
        if 2 * shape.radius <= grip.max_width:
            modes.append("through-center")
    elif shape.kind == "cylinder":
        if 2 * shape.radius <= grip.max_width:
            modes.append("side")
        if shape.height <= grip.max_width:
            modes.append("caps")
    elif shape.kind == "box":
        for axis in range(3):
            if shape.size[axis] <= grip.max_width:
                modes.append(f"axis{axis}")
    return modes


def _sample_pinch(part, mode: str, rng: np.random.Generator):
    """Contact point and closing axis in the PART's local frame."""
    shape = part.shape
    if mode == "through-center":
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        return np.zeros(3), axis
    if mode == "side":
        theta = rng.uniform(0, 2 * math.pi)
        z = rng.uniform(-0.4, 0.4) * shape.height
        return np.array([0.0, 0.0, z]), np.array([math.cos(theta), math.sin(theta), 0.0])
    if mode == "caps":
        theta = rng.uniform(0, 2 * math.pi)
        r = 0.6 * shape.radius * math.sqrt(rng.uniform())
        return np.array([r * math.cos(theta), r * math.sin(theta), 0.0]), \
            np.array([0.0, 0.0, 1.0])
    axis_idx = int(mode[-1])
    contact = rng.uniform(-0.4, 0.4, size=3) * np.asarray(shape.size)
    contact[axis_idx] = 0.0
    closing = np.zeros(3)
    closing[axis_idx] = 1.0
    return contact, closing


def _perpendicular(axis: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Random unit vector orthogonal to ``axis``."""
    while True:
        v = rng.normal(size=3)
        v -= np.dot(v, axis) * axis
        norm = np.linalg.norm(v)
        if norm > 1e-8:
            return v / norm


def synthetic_confidence(width_margin: float, approach_world: np.ndarray,
                         grip: GripperGeometry) -> float:
    """Deterministic stand-in score: width margin times approach verticality.

    Verticality rewards approaches pointing straight down at the table
    (approach antiparallel to the world up axis).
    """
    margin_term = float(np.clip(width_margin / grip.max_width, 0.0, 1.0))
    vert = 0.5 + 0.5 * float(np.dot(approach_world, -WORLD_UP))
    return float(np.clip(margin_term * vert, 0.0, 1.0))


def generate_synthetic(obj: PrimitiveObject, n: int, seed: int,
                       grip: GripperGeometry | None = None) -> CandidateSet:
    """Sample ``n`` antipodal grasps on a primitive object (world frame)."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    grip = grip or GripperGeometry()
    part_modes = [(part, _pinch_modes(part, grip)) for part in obj.parts]
    part_modes = [(p, m) for p, m in part_modes if m]
    if not part_modes:
        raise NoGraspExists(
            f"no surface span of {obj.name!r} fits within max_width {grip.max_width}")

    rng = np.random.default_rng(seed)
    out: list[GraspCandidate] = []
    attempts = 0
    max_attempts = 200 * n
    while len(out) < n and attempts < max_attempts:
        attempts += 1
        part, modes = part_modes[rng.integers(len(part_modes))]
        mode = modes[rng.integers(len(modes))]
        contact_local, closing_local = _sample_pinch(part, mode, rng)
        contact_obj = part.pose.transform(contact_local)
        closing_obj = part.pose.rotation @ closing_local
        # Width against the whole union: junctions can exceed the jaw span.
        span = obj.width_through(contact_obj, closing_obj)
        if span is None or span[0] > grip.max_width:
            continue
        width = span[0]
        contact_w = obj.pose.transform(contact_obj)
        closing_w = obj.pose.rotation @ closing_obj
        approach_w = _perpendicular(closing_w, rng)
        x = np.cross(closing_w, approach_w)
        rot = np.column_stack([x, closing_w, approach_w])
        t = contact_w - grip.finger_length * approach_w
        pose = GraspPose(rot, t)
        conf = synthetic_confidence(grip.max_width - width, approach_w, grip)
        out.append(GraspCandidate(pose=pose, confidence=conf,
                                  contact=contact_w, id=len(out)))
    if len(out) < n:
        raise NoGraspExists(
            f"could not place {n} grasps on {obj.name!r} "
            f"({len(out)} found in {attempts} attempts)")
    return CandidateSet(candidates=tuple(out), source="synthetic")


# --- grasp-exchange JSON ----------------------------------------------------

def save_candidates(cands: CandidateSet, path: str | Path) -> None:
    doc = {"format_version": GRASP_FORMAT_VERSION,
           "grasps": [c.to_dict() for c in cands]}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))


def load_candidates(path: str | Path,
                    grip: GripperGeometry | None = None) -> CandidateSet:
    """Read grasps from the exchange format; contacts are recomputed."""
    grip = grip or GripperGeometry()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"grasp file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e
    if not isinstance(doc, dict) or "grasps" not in doc:
        raise ParseError(f"{path}: missing 'grasps' field")
    out = []
    for i, entry in enumerate(doc["grasps"]):
        try:
            conf = float(entry["confidence"])
        except (KeyError, TypeError, ValueError):
            raise ParseError(f"{path}: grasp {i}: missing or bad 'confidence'")
        if not (0.0 <= conf <= 1.0):
            raise ParseError(f"{path}: grasp {i}: confidence {conf} out of range")
        try:
            pose = GraspPose.from_dict(entry, tol=1e-6)
        except KeyError as e:
            raise ParseError(f"{path}: grasp {i}: missing field {e}")
        out.append(GraspCandidate(pose=pose, confidence=conf,
                                  contact=contact_point(pose, grip), id=i))
    return CandidateSet(candidates=tuple(out), source="file")


# --- pre-filtering ----------------------------------------------------------

@dataclass(frozen=True)
class FeasibilityConfig:
    min_approach_angle_deg: float = 30.0  # angle between approach and table up-normal
    table_clearance: float = 0.005


def feasibility_filter(cands: CandidateSet, scene: WorkspaceScene,
                       grip: GripperGeometry | None = None,
                       cfg: FeasibilityConfig | None = None) -> CandidateSet:
    """Rule-based stand-in for a motion planner's reachability check.

    Keeps candidates whose contact lies in the workspace sphere, whose
    approach is tilted at least the configured angle away from the table's
    up-normal, and whose gripper keypoints all clear the table plane.
    """
    grip = grip or GripperGeometry()
    cfg = cfg or FeasibilityConfig()
    cos_max = math.cos(math.radians(cfg.min_approach_angle_deg))
    kept = []
    for c in cands:
        if np.linalg.norm(c.contact - scene.workspace_center) > scene.workspace_radius:
            continue
        if float(np.dot(c.pose.approach, WORLD_UP)) > cos_max:
            continue
        keypoints = c.pose.transform(grip.wireframe_keypoints)
        if np.min(keypoints[:, 2]) < scene.table_height + cfg.table_clearance:
            continue
        kept.append(c)
    return CandidateSet(candidates=tuple(kept), source=cands.source)


def top_k(cands: CandidateSet, k: int) -> CandidateSet:
    """First min(k, n) candidates by descending confidence (ties: lower id)."""
    if k < 1:
        raise ConfigError("k must be >= 1")
    return CandidateSet(candidates=cands.candidates[:k], source=cands.source)
