"""Built-in synthetic scene corpus: 10 labeled household/kitchen/tool objects.

Each scene holds one two-part object on a table with a task whose target is
a labeled region. Dimensions are chosen so the widest width margin (and so
the highest synthetic confidence) usually sits on the part the task does
NOT want, which is what makes task-aware selection measurably better than
the confidence-only baseline on this corpus.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .candidates import WorkspaceScene
from .geometry import GraspPose
from .primitives import Box, Cylinder, Part, PrimitiveObject, Sphere
from .scenes import (SceneDescription, TaskSpec, ViewSpec, camera_ring,
                     default_intrinsics, look_at, save_scene)

MANIFEST_FORMAT_VERSION = 1


def _at(x: float, y: float, z: float) -> GraspPose:
    return GraspPose(np.eye(3), np.array([x, y, z]))


def _obj(name, parts, regions, color) -> PrimitiveObject:
    return PrimitiveObject(name=name, parts=tuple(parts),
                           pose=GraspPose.identity(),
                           regions=regions, color=color)


def _two_part(name, a_name, a, a_z, b_name, b, b_z, color):
    pa = Part(shape=a, pose=_at(0, 0, a_z), name=a_name)
    pb = Part(shape=b, pose=_at(0, 0, b_z), name=b_name)
    return _obj(name, [pa, pb], {a_name: pa, b_name: pb}, color)


def corpus_objects() -> list[tuple[PrimitiveObject, TaskSpec]]:
    """The 10 (object, task) pairs of the built-in corpus."""
    out: list[tuple[PrimitiveObject, TaskSpec]] = []

    obj = _two_part("screwdriver",
                    "handle", Cylinder(radius=0.015, height=0.10), 0.05,
                    "shaft", Cylinder(radius=0.004, height=0.12), 0.16,
                    (200, 60, 40))
    out.append((obj, TaskSpec(
        description="Hold the screwdriver by the handle for ease of use.",
        category="tool-use", target_region="handle")))

    handle = Part(shape=Cylinder(radius=0.011, height=0.14),
                  pose=_at(0, 0, 0.07), name="handle")
    head = Part(shape=Box(size=(0.10, 0.03, 0.03)),
                pose=_at(0, 0, 0.165), name="head")
    obj = _obj("hammer", [handle, head],
               {"handle": handle, "head": head}, (120, 120, 130))
    out.append((obj, TaskSpec(
        description="Pass me the hammer.",
        category="handover", target_region="head")))

    obj = _two_part("spatula",
                    "handle", Cylinder(radius=0.009, height=0.14), 0.07,
                    "blade", Box(size=(0.07, 0.006, 0.05)), 0.165,
                    (60, 60, 60))
    out.append((obj, TaskSpec(
        description="Hold the spatula by the handle.",
        category="tool-use", target_region="handle")))

    obj = _two_part("knife",
                    "handle", Box(size=(0.025, 0.02, 0.10)), 0.05,
                    "blade", Box(size=(0.02, 0.004, 0.12)), 0.16,
                    (160, 160, 170))
    out.append((obj, TaskSpec(
        description="Hold the knife by the handle to cut.",
        category="tool-use", target_region="handle")))

    body = Part(shape=Cylinder(radius=0.035, height=0.09),
                pose=_at(0, 0, 0.045), name="body")
    handle = Part(shape=Box(size=(0.01, 0.025, 0.05)),
                  pose=_at(0.045, 0, 0.045), name="handle")
    obj = _obj("mug", [body, handle],
               {"body": body, "handle": handle}, (60, 110, 200))
    out.append((obj, TaskSpec(
        description="Pass me the mug so I can grab the handle.",
        category="handover", target_region="body")))

    obj = _two_part("bottle",
                    "body", Cylinder(radius=0.03, height=0.14), 0.07,
                    "neck", Cylinder(radius=0.011, height=0.06), 0.17,
                    (40, 150, 90))
    out.append((obj, TaskSpec(
        description="Grasp the bottle by its body.",
        category="specific-position", target_region="body")))

    body = Part(shape=Cylinder(radius=0.038, height=0.08),
                pose=_at(0, 0, 0.04), name="body")
    handle = Part(shape=Box(size=(0.06, 0.012, 0.02)),
                  pose=_at(0.07, 0, 0.06), name="handle")
    obj = _obj("pot", [body, handle],
               {"body": body, "handle": handle}, (180, 40, 40))
    out.append((obj, TaskSpec(
        description="Hold the pot by its handle.",
        category="tool-use", target_region="handle")))

    obj = _two_part("brush",
                    "handle", Cylinder(radius=0.012, height=0.10), 0.05,
                    "head", Box(size=(0.04, 0.05, 0.015)), 0.1225,
                    (150, 100, 50))
    out.append((obj, TaskSpec(
        description="Use the brush.",
        category="tool-use", target_region="handle")))

    obj = _two_part("spoon",
                    "handle", Cylinder(radius=0.006, height=0.16), 0.08,
                    "bowl", Sphere(radius=0.028), 0.188,
                    (90, 90, 100))
    out.append((obj, TaskSpec(
        description="Pass me the spoon.",
        category="handover", target_region="bowl")))

    bottom = Part(shape=Sphere(radius=0.025), pose=_at(0, 0, 0.025), name="bottom")
    bar = Part(shape=Cylinder(radius=0.008, height=0.08),
               pose=_at(0, 0, 0.09), name="bar")
    top = Part(shape=Sphere(radius=0.025), pose=_at(0, 0, 0.155), name="top")
    obj = _obj("toy", [bottom, bar, top],
               {"bottom": bottom, "bar": bar, "top": top}, (220, 180, 40))
    out.append((obj, TaskSpec(
        description="Grip the toy by its top ball.",
        category="specific-position", target_region="top")))

    return out


DEFAULT_WORKSPACE = WorkspaceScene(workspace_center=(0.0, 0.0, 0.2),
                                   workspace_radius=0.6, table_height=0.0)


def make_scene(obj: PrimitiveObject, task: TaskSpec,
               image_width: int = 320, image_height: int = 240) -> SceneDescription:
    intr = default_intrinsics(image_width, image_height)
    pose = look_at(eye=(0.32, -0.30, 0.40), target=(0.0, 0.0, 0.08))
    return SceneDescription(name=obj.name, objects=(obj,),
                            workspace=DEFAULT_WORKSPACE, intrinsics=intr,
                            views=(ViewSpec(world_from_camera=pose),),
                            task=task)


def corpus_scenes(image_width: int = 320,
                  image_height: int = 240) -> list[SceneDescription]:
    return [make_scene(obj, task, image_width, image_height)
            for obj, task in corpus_objects()]


def make_ring_scene(scene: SceneDescription, count: int = 4,
                    radius: float = 0.2, height: float = 0.35,
                    visibilities: list[float] | None = None) -> SceneDescription:
    """Replace the scene's views with a camera ring around the workspace."""
    poses = camera_ring(count=count, radius=radius, height=height)
    if visibilities is None:
        views = tuple(ViewSpec(world_from_camera=p) for p in poses)
    else:
        views = tuple(ViewSpec(world_from_camera=p, visibility=v)
                      for p, v in zip(poses, visibilities))
    return SceneDescription(name=scene.name, objects=scene.objects,
                            workspace=scene.workspace,
                            intrinsics=scene.intrinsics,
                            views=views, task=scene.task)


def build_corpus(out_dir: str | Path, image_width: int = 320,
                 image_height: int = 240) -> Path:
    """Write the corpus scene files plus a manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for i, scene in enumerate(corpus_scenes(image_width, image_height)):
        fname = f"scene_{i:02d}_{scene.name}.json"
        save_scene(scene, out / fname)
        names.append(fname)
    manifest = out / "manifest.json"
    manifest.write_text(json.dumps(
        {"format_version": MANIFEST_FORMAT_VERSION, "scenes": names},
        indent=2, sort_keys=True))
    return manifest


def load_manifest(path: str | Path) -> list[Path]:
    from .errors import ConfigError, ParseError
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"corpus manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
        return [path.parent / name for name in doc["scenes"]]
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise ParseError(f"{path}: bad manifest: {e}") from e
