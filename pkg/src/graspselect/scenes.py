"""Synthetic desk-scale scenes: description files, rendering, observations.

A scene is a set of primitive objects on a table plane inside a workspace
sphere, observed by one or more posed cameras. Rendering raycasts the
primitives to produce a depth image (0 = background) and a flat-shaded RGB
image, which is enough to exercise the whole pipeline offline.

The scene JSON is versioned; multi-view scenes list several camera poses,
optionally annotated with a ground-truth visibility fraction for the task's
target region (consumed by the stub detector).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .candidates import WorkspaceScene
from .errors import ConfigError, ParseError
from .geometry import CameraIntrinsics, DepthImage, GraspPose
from .primitives import PrimitiveObject

SCENE_FORMAT_VERSION = 1

TASK_CATEGORIES = ("specific-position", "tool-use", "handover")


@dataclass(frozen=True)
class TaskSpec:
    """A natural-language task plus the labeled region that scores it."""

    description: str
    category: str
    target_region: str
    polarity: str = "require"  # "require": contact must lie inside; "avoid": outside
    target_object: str = ""  # empty = first object in the scene

    def __post_init__(self):
        if self.category not in TASK_CATEGORIES:
            raise ConfigError(f"unknown task category {self.category!r}")
        if self.polarity not in ("require", "avoid"):
            raise ConfigError(f"polarity must be 'require' or 'avoid'")

    def to_dict(self) -> dict:
        return {"description": self.description, "category": self.category,
                "target_region": self.target_region, "polarity": self.polarity,
                "target_object": self.target_object}

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        return cls(description=d["description"], category=d["category"],
                   target_region=d["target_region"],
                   polarity=d.get("polarity", "require"),
                   target_object=d.get("target_object", ""))


@dataclass(frozen=True)
class ViewSpec:
    """Camera placement for one view, with optional visibility annotation."""

    world_from_camera: GraspPose
    visibility: float | None = None  # ground-truth fraction for the stub detector

    def to_dict(self) -> dict:
        d = {"pose": self.world_from_camera.to_dict()}
        if self.visibility is not None:
            d["visibility"] = float(self.visibility)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ViewSpec":
        vis = d.get("visibility")
        return cls(world_from_camera=GraspPose.from_dict(d["pose"]),
                   visibility=None if vis is None else float(vis))


@dataclass(frozen=True)
class SceneDescription:
    name: str
    objects: tuple[PrimitiveObject, ...]
    workspace: WorkspaceScene
    intrinsics: CameraIntrinsics
    views: tuple[ViewSpec, ...]
    task: TaskSpec | None = None

    def __post_init__(self):
        if not self.objects:
            raise ConfigError("scene needs at least one object")
        if not self.views:
            raise ConfigError("scene needs at least one view")

    def object_named(self, name: str) -> PrimitiveObject:
        if not name:
            return self.objects[0]
        for obj in self.objects:
            if obj.name == name:
                return obj
        raise ConfigError(f"scene {self.name!r} has no object {name!r}")

    def target_object(self) -> PrimitiveObject:
        return self.object_named(self.task.target_object if self.task else "")

    def to_dict(self) -> dict:
        d = {
            "format_version": SCENE_FORMAT_VERSION,
            "name": self.name,
            "objects": [o.to_dict() for o in self.objects],
            "workspace": {
                "center": [float(v) for v in self.workspace.workspace_center],
                "radius": float(self.workspace.workspace_radius),
            },
            "table_height": float(self.workspace.table_height),
            "intrinsics": self.intrinsics.to_dict(),
            "views": [v.to_dict() for v in self.views],
        }
        if self.task is not None:
            d["task"] = self.task.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneDescription":
        try:
            ws = WorkspaceScene(
                workspace_center=d["workspace"]["center"],
                workspace_radius=float(d["workspace"]["radius"]),
                table_height=float(d["table_height"]))
            return cls(
                name=d.get("name", "scene"),
                objects=tuple(PrimitiveObject.from_dict(o) for o in d["objects"]),
                workspace=ws,
                intrinsics=CameraIntrinsics.from_dict(d["intrinsics"]),
                views=tuple(ViewSpec.from_dict(v) for v in d["views"]),
                task=TaskSpec.from_dict(d["task"]) if "task" in d else None)
        except KeyError as e:
            raise ParseError(f"scene description missing field {e}") from e


def save_scene(scene: SceneDescription, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scene.to_dict(), indent=2, sort_keys=True))


def load_scene(path: str | Path) -> SceneDescription:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"scene file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e
    return SceneDescription.from_dict(doc)


# --- cameras ----------------------------------------------------------------

def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> GraspPose:
    """World-from-camera pose with +z toward the target and image-up aligned
    against world ``up`` (camera y points down)."""
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    up = np.asarray(up, dtype=np.float64)
    z = target - eye
    nz = np.linalg.norm(z)
    if nz < 1e-12:
        raise ConfigError("camera eye and target coincide")
    z = z / nz
    y = -up + np.dot(up, z) * z
    ny = np.linalg.norm(y)
    if ny < 1e-9:
        # Looking straight up/down: pick an arbitrary stable image orientation.
        y = np.array([0.0, 1.0, 0.0]) if abs(z[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
        y = y - np.dot(y, z) * z
        ny = np.linalg.norm(y)
    y = y / ny
    x = np.cross(y, z)
    return GraspPose(np.column_stack([x, y, z]), eye)


def default_intrinsics(width: int = 320, height: int = 240) -> CameraIntrinsics:
    f = width / (2 * np.tan(np.radians(30.0)))  # 60 degree horizontal FOV
    return CameraIntrinsics(fx=f, fy=f, cx=width / 2.0, cy=height / 2.0,
                            width=width, height=height)


def camera_ring(count: int = 4, radius: float = 0.2, height: float = 0.35,
                target=(0.0, 0.0, 0.05)) -> list[GraspPose]:
    """Evenly spaced cameras on a circle looking at a common target."""
    if count < 1 or radius <= 0:
        raise ConfigError("ring needs count >= 1 and positive radius")
    target = np.asarray(target, dtype=np.float64)
    poses = []
    for i in range(count):
        ang = 2 * np.pi * i / count
        eye = np.array([radius * np.cos(ang), radius * np.sin(ang), height])
        poses.append(look_at(eye, target))
    return poses


# --- rendering --------------------------------------------------------------

@dataclass(frozen=True)
class SceneObservation:
    """RGB-D observation: images, intrinsics and camera placement."""

    rgb: np.ndarray  # (H, W, 3) uint8
    depth: DepthImage
    intrinsics: CameraIntrinsics
    world_from_camera: GraspPose


BACKGROUND_RGB = (70, 70, 75)
LIGHT_DIR = np.array([0.3, -0.5, 1.0]) / np.linalg.norm([0.3, -0.5, 1.0])


def render_view(scene: SceneDescription, view_index: int = 0) -> SceneObservation:
    """Raycast the scene's primitives from one camera.

    Depth holds z-depth in meters (0 where no object is hit); RGB is the
    object color with Lambert shading over a flat background. Fully
    deterministic for a fixed scene.
    """
    intr = scene.intrinsics
    view = scene.views[view_index]
    pose = view.world_from_camera
    h, w = intr.height, intr.width
    us, vs = np.meshgrid(np.arange(w), np.arange(h))
    dirs_cam = np.stack([(us - intr.cx) / intr.fx,
                         (vs - intr.cy) / intr.fy,
                         np.ones_like(us, dtype=np.float64)], axis=-1).reshape(-1, 3)
    dirs_w = dirs_cam @ pose.rotation.T
    origins = np.broadcast_to(pose.translation, dirs_w.shape)

    best_t = np.full(len(dirs_w), np.inf)
    best_obj = np.full(len(dirs_w), -1, dtype=np.int64)
    for oi, obj in enumerate(scene.objects):
        inv = obj.pose.inverse()
        o_local = inv.transform(origins)
        d_local = dirs_w @ inv.rotation.T
        t, _ = obj.raycast(o_local, d_local)
        closer = t < best_t
        best_t[closer] = t[closer]
        best_obj[closer] = oi

    depth = np.where(np.isfinite(best_t), best_t, 0.0).reshape(h, w)
    rgb = np.empty((h * w, 3), dtype=np.float64)
    rgb[:] = BACKGROUND_RGB
    for oi, obj in enumerate(scene.objects):
        mask = best_obj == oi
        if not mask.any():
            continue
        hits_w = origins[mask] + best_t[mask, None] * dirs_w[mask]
        hits_obj = obj.pose.inverse().transform(hits_w)
        normals_w = obj.normals(hits_obj) @ obj.pose.rotation.T
        shade = 0.35 + 0.65 * np.maximum(normals_w @ LIGHT_DIR, 0.0)
        rgb[mask] = shade[:, None] * np.asarray(obj.color, dtype=np.float64)
    rgb = np.clip(np.round(rgb), 0, 255).astype(np.uint8).reshape(h, w, 3)
    return SceneObservation(rgb=rgb, depth=DepthImage.from_array(depth),
                            intrinsics=intr, world_from_camera=pose)


def region_visibility(scene: SceneDescription, view_index: int,
                      object_name: str, region_name: str,
                      samples: int = 256, seed: int = 0,
                      tol: float = 2e-3) -> float:
    """Fraction of a region's surface that is unoccluded and in-frustum.

    Analytic ground truth for the stub detector: sample points on the
    labeled region, project them into the view, and test each against the
    scene raycast along its own viewing ray.
    """
    intr = scene.intrinsics
    pose = scene.views[view_index].world_from_camera
    obj = scene.object_named(object_name)
    rng = np.random.default_rng(seed)
    pts_obj = obj.sample_region_surface(region_name, samples, rng)
    pts_w = obj.pose.transform(pts_obj)
    cam = pose.inverse().transform(pts_w)
    z = cam[:, 2]
    in_front = z > 1e-6
    u = intr.fx * cam[:, 0] / np.maximum(z, 1e-9) + intr.cx
    v = intr.fy * cam[:, 1] / np.maximum(z, 1e-9) + intr.cy
    in_frame = in_front & (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
    if not in_frame.any():
        return 0.0
    eye = pose.translation
    dirs = pts_w[in_frame] - eye
    dist = np.linalg.norm(dirs, axis=1)
    dirs = dirs / dist[:, None]
    origins = np.broadcast_to(eye, dirs.shape)
    nearest = np.full(len(dirs), np.inf)
    for other in scene.objects:
        inv = other.pose.inverse()
        t, _ = other.raycast(inv.transform(origins), dirs @ inv.rotation.T)
        nearest = np.minimum(nearest, t)
    visible = nearest >= dist - tol
    return float(np.count_nonzero(visible)) / samples
