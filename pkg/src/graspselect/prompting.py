"""Query construction for the five VLM strategies, plus reply parsing.

Images are (H, W, 3) uint8 numpy arrays. Drawing is done with in-package
rasterizers (integer disc membership and Bresenham lines) so marker pixels
are exactly reproducible across platforms; Pillow is used only for PNG
encode/decode.

Strategies:
  GSI  - all grasps as colored wireframes in one image
  CPSI - all contact points as colored dots in one image
  GMI  - one image per grasp, red wireframe
  CPMI - one image per grasp, red dot
  CPG  - no markers; the model names a pixel directly
"""

from __future__ import annotations

import io
import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image

from .candidates import CandidateSet
from .errors import (AmbiguousReply, ConfigError, IndexOutOfRange, OutOfBounds,
                     PointOutOfImage, TooManyCandidates, UnparseableReply)
from .geometry import (CameraIntrinsics, GraspPose, GripperGeometry,
                       project, wireframe_segments)


class Strategy(str, Enum):
    GSI = "GSI"
    CPSI = "CPSI"
    GMI = "GMI"
    CPMI = "CPMI"
    CPG = "CPG"

    @property
    def single_image(self) -> bool:
        return self in (Strategy.GSI, Strategy.CPSI)

    @property
    def uses_dots(self) -> bool:
        return self in (Strategy.CPSI, Strategy.CPMI)


# First three palette entries are fixed: red, green, blue.
DEFAULT_PALETTE: tuple[tuple[int, int, int], ...] = (
    (255, 0, 0),      # red
    (0, 200, 0),      # green
    (0, 0, 255),      # blue
    (255, 220, 0),    # yellow
    (255, 0, 255),    # magenta
    (0, 220, 220),    # cyan
    (255, 140, 0),    # orange
    (150, 0, 200),    # purple
)

COLOR_NAMES = ("red", "green", "blue", "yellow", "magenta", "cyan",
               "orange", "purple")

REFERENCE_WIDTH = 640


@dataclass(frozen=True)
class MarkerStyle:
    palette: tuple[tuple[int, int, int], ...] = DEFAULT_PALETTE
    dot_radius_px: int = 6
    line_width_px: int = 3

    def __post_init__(self):
        if not self.palette:
            raise ConfigError("palette must not be empty")

    def scaled(self, image_width: int) -> "MarkerStyle":
        """Marker sizes proportional to image width (reference 640 px)."""
        f = image_width / REFERENCE_WIDTH
        return MarkerStyle(
            palette=self.palette,
            dot_radius_px=max(1, round(self.dot_radius_px * f)),
            line_width_px=max(1, round(self.line_width_px * f)),
        )


# --- rasterization ----------------------------------------------------------

def _stamp_disc(img: np.ndarray, cx: int, cy: int, radius: int, color) -> None:
    h, w = img.shape[:2]
    x0, x1 = max(0, cx - radius), min(w - 1, cx + radius)
    y0, y1 = max(0, cy - radius), min(h - 1, cy + radius)
    if x0 > x1 or y0 > y1:
        return
    ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    mask = (xs - cx) ** 2 + (ys - cy) ** 2 <= radius ** 2
    img[y0:y1 + 1, x0:x1 + 1][mask] = color


def draw_dot(img: np.ndarray, at: tuple[float, float], color,
             style: MarkerStyle) -> np.ndarray:
    """Filled disc at a pixel coordinate; returns a new image."""
    h, w = img.shape[:2]
    cx, cy = int(round(at[0])), int(round(at[1]))
    if not (0 <= cx < w and 0 <= cy < h):
        raise OutOfBounds(f"dot center ({at[0]}, {at[1]}) outside {w}x{h} image")
    out = img.copy()
    _stamp_disc(out, cx, cy, style.dot_radius_px, color)
    return out


def _clip_segment(p0, p1, w: int, h: int):
    """Liang-Barsky clip against [0, w-1] x [0, h-1]; None if fully outside."""
    x0, y0 = p0
    x1, y1 = p1
    dx, dy = x1 - x0, y1 - y0
    t0, t1 = 0.0, 1.0
    for p, q in ((-dx, x0 - 0), (dx, (w - 1) - x0),
                 (-dy, y0 - 0), (dy, (h - 1) - y0)):
        if p == 0:
            if q < 0:
                return None
            continue
        r = q / p
        if p < 0:
            if r > t1:
                return None
            t0 = max(t0, r)
        else:
            if r < t0:
                return None
            t1 = min(t1, r)
    return ((x0 + t0 * dx, y0 + t0 * dy), (x0 + t1 * dx, y0 + t1 * dy))


def _bresenham(x0: int, y0: int, x1: int, y1: int):
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    x, y = x0, y0
    while True:
        yield x, y
        if x == x1 and y == y1:
            return
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x += sx
        if e2 <= dx:
            err += dx
            y += sy


def draw_wireframe(img: np.ndarray, segments, color,
                   style: MarkerStyle) -> np.ndarray:
    """Rasterize line segments, clipping to the image; returns a new image."""
    h, w = img.shape[:2]
    out = img.copy()
    radius = (style.line_width_px - 1) // 2
    for p0, p1 in segments:
        clipped = _clip_segment(p0, p1, w, h)
        if clipped is None:
            continue
        (cx0, cy0), (cx1, cy1) = clipped
        for x, y in _bresenham(int(round(cx0)), int(round(cy0)),
                               int(round(cx1)), int(round(cy1))):
            if radius == 0:
                if 0 <= x < w and 0 <= y < h:
                    out[y, x] = color
            else:
                _stamp_disc(out, x, y, radius, color)
    return out


# --- prompt templates -------------------------------------------------------

PROMPT_TEMPLATES: dict[Strategy, str] = {
    Strategy.GSI: (
        "Given an image showing the object with different grasp candidates "
        "highlighted in red, green, and blue, your task is to analyze these "
        "grasp candidates based on the task description and choose the index "
        "of the grasp that would best accomplish the task."),
    Strategy.CPSI: (
        "Given an image showing the object with different grasp candidates "
        "highlighted in red, green, and blue dots, your task is to analyze "
        "these grasp candidates based on the task description and choose the "
        "index of the grasp that would best accomplish the task."),
    Strategy.GMI: (
        "Given multiple images, each showing the object with a different "
        "grasp candidate highlighted in red, and a task description, your "
        "task is to analyze the grasp candidates in each image based on the "
        "task description and choose the index of the grasp that would best "
        "accomplish the task."),
    Strategy.CPMI: (
        "Given multiple images, each showing the object with a different "
        "grasp candidate with a red dot, and a task description, your task "
        "is to analyze the grasp candidates in each image based on the task "
        "description and choose the index of the grasp that would best "
        "accomplish the task."),
    Strategy.CPG: (
        "Given an image of the scene and a task description, you should "
        "provide a point on the image where the robot should grasp the "
        "object to best accomplish the task."),
}

CHOICE_FORMAT = 'Answer with JSON: {"choice": <1-based index>}'
POINT_FORMAT = 'Answer with JSON: {"point": [u, v]}'
REPROMPT_REMINDER_CHOICE = 'Reply with only {"choice": <1-based index>}.'
REPROMPT_REMINDER_POINT = 'Reply with only {"point": [u, v]}.'


def _legend(strategy: Strategy, n: int) -> str:
    if strategy.single_image:
        parts = [f"Grasp {i + 1} is {COLOR_NAMES[i]}" for i in range(n)]
        return ". ".join(parts) + "."
    return " ".join(f"Image {i + 1} shows grasp {i + 1}." for i in range(n))


def prompt_text(strategy: Strategy, task_description: str, n_candidates: int) -> str:
    lines = [PROMPT_TEMPLATES[strategy],
             "",
             f"Task description: {task_description}"]
    if strategy is Strategy.CPG:
        lines += ["", "Provide a point on the target object itself.",
                  "", POINT_FORMAT]
    else:
        lines += ["", _legend(strategy, n_candidates), "", CHOICE_FORMAT]
    return "\n".join(lines)


@dataclass(frozen=True)
class QueryBundle:
    images: tuple[np.ndarray, ...]
    prompt: str
    strategy: Strategy
    candidate_order: tuple[int, ...]  # candidate ids in display order

    def __post_init__(self):
        if self.strategy is Strategy.CPG:
            if len(self.images) != 1 or self.candidate_order:
                raise ConfigError("CPG bundles carry one image and no markers")
        elif self.strategy.single_image:
            if len(self.images) != 1:
                raise ConfigError(f"{self.strategy.value} needs exactly 1 image")
        elif len(self.images) != len(self.candidate_order):
            raise ConfigError(
                f"{self.strategy.value} needs one image per candidate")


def build_query(image: np.ndarray, reps: CandidateSet, task_description: str,
                strategy: Strategy, intr: CameraIntrinsics,
                grip: GripperGeometry | None = None,
                style: MarkerStyle | None = None,
                world_from_camera: GraspPose | None = None) -> QueryBundle:
    """Render annotated image(s) and prompt text for one strategy.

    ``world_from_camera`` maps camera coordinates to the frame the candidate
    poses live in; identity means the candidates are already camera-frame.
    """
    grip = grip or GripperGeometry()
    style = (style or MarkerStyle()).scaled(image.shape[1])
    if strategy is Strategy.CPG:
        return QueryBundle(images=(image.copy(),),
                           prompt=prompt_text(strategy, task_description, 0),
                           strategy=strategy, candidate_order=())
    if len(reps) == 0:
        raise ConfigError(f"{strategy.value} needs at least one candidate")
    cam_from_world = (world_from_camera or GraspPose.identity()).inverse()
    cam_poses = [cam_from_world.compose(c.pose) for c in reps]
    cam_contacts = [cam_from_world.transform(c.contact) for c in reps]
    order = tuple(c.id for c in reps)
    if strategy.single_image and len(reps) > len(style.palette):
        raise TooManyCandidates(
            f"{len(reps)} candidates exceed the {len(style.palette)}-color palette")

    def marker(img, i, color):
        if strategy.uses_dots:
            return draw_dot(img, project(cam_contacts[i], intr), color, style)
        segs = wireframe_segments(cam_poses[i], grip, intr)
        return draw_wireframe(img, segs, color, style)

    if strategy.single_image:
        out = image.copy()
        for i in range(len(reps)):
            out = marker(out, i, style.palette[i])
        images = (out,)
    else:
        images = tuple(marker(image.copy(), i, style.palette[0])
                       for i in range(len(reps)))
    return QueryBundle(images=images,
                       prompt=prompt_text(strategy, task_description, len(reps)),
                       strategy=strategy, candidate_order=order)


# --- reply parsing ----------------------------------------------------------

@dataclass(frozen=True)
class VlmReply:
    raw_text: str
    choice: int | None = None  # 0-based index into candidate_order
    point: tuple[float, float] | None = None

    def canonical(self) -> str:
        if self.choice is not None:
            return json.dumps({"choice": self.choice + 1})
        return json.dumps({"point": [self.point[0], self.point[1]]})


_JSON_RE = re.compile(r"\{[^{}]*\}")
_GRASP_RE = re.compile(r"grasp\s*#?\s*(\d+)", re.IGNORECASE)
_COLOR_RE = re.compile(r"\b(" + "|".join(COLOR_NAMES) + r")\b", re.IGNORECASE)
_INT_RE = re.compile(r"(?<![\w.\-])\d+(?![\w.])")
_NUM = r"(-?\d+(?:\.\d+)?)"
_UV_RE = re.compile(r"u\s*=\s*" + _NUM + r"\s*,?\s*v\s*=\s*" + _NUM,
                    re.IGNORECASE)
_PAIR_RE = re.compile(r"\(\s*" + _NUM + r"\s*,\s*" + _NUM + r"\s*\)")


def _unique_or_ambiguous(values: list, what: str):
    distinct = []
    for v in values:
        if v not in distinct:
            distinct.append(v)
    if len(distinct) > 1:
        raise AmbiguousReply(f"conflicting {what}: {distinct}")
    return distinct[0]


def _json_objects(text: str) -> list[dict]:
    out = []
    for m in _JSON_RE.finditer(text):
        try:
            obj = json.loads(m.group(0))
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            out.append(obj)
    return out


def parse_reply(raw_text: str, strategy: Strategy, n_candidates: int,
                image_size: tuple[int, int]) -> VlmReply:
    """Interpret a model reply for a given strategy.

    Matches are tried in decreasing strictness: the JSON answer contract
    first, then phrase forms, then bare values. Within the tier that
    matches, conflicting distinct values raise AmbiguousReply.
    """
    if strategy is Strategy.CPG:
        return _parse_point(raw_text, image_size)
    return _parse_choice(raw_text, strategy, n_candidates)


def _parse_choice(text: str, strategy: Strategy, n: int) -> VlmReply:
    tiers: list[tuple[str, list[int]]] = []
    json_vals = [int(o["choice"]) for o in _json_objects(text)
                 if isinstance(o.get("choice"), (int, float))]
    tiers.append(("JSON choice", json_vals))
    tiers.append(("grasp indices", [int(m.group(1)) for m in _GRASP_RE.finditer(text)]))
    if strategy.single_image:
        colors = [COLOR_NAMES.index(m.group(1).lower()) + 1
                  for m in _COLOR_RE.finditer(text)]
        tiers.append(("color words", colors))
    tiers.append(("bare integers", [int(m.group(0)) for m in _INT_RE.finditer(text)]))
    for what, values in tiers:
        if values:
            one_based = _unique_or_ambiguous(values, what)
            idx = one_based - 1
            if not (0 <= idx < n):
                raise IndexOutOfRange(
                    f"reply index {one_based} outside 1..{n}")
            return VlmReply(raw_text=text, choice=idx)
    raise UnparseableReply(f"no grasp index found in reply: {text[:120]!r}")


def _parse_point(text: str, image_size: tuple[int, int]) -> VlmReply:
    w, h = image_size
    tiers: list[tuple[str, list[tuple[float, float]]]] = []
    json_pts = []
    for o in _json_objects(text):
        p = o.get("point")
        if isinstance(p, (list, tuple)) and len(p) == 2:
            try:
                json_pts.append((float(p[0]), float(p[1])))
            except (TypeError, ValueError):
                continue
    tiers.append(("JSON points", json_pts))
    tiers.append(("u=,v= pairs", [(float(m.group(1)), float(m.group(2)))
                                  for m in _UV_RE.finditer(text)]))
    tiers.append(("(u, v) pairs", [(float(m.group(1)), float(m.group(2)))
                                   for m in _PAIR_RE.finditer(text)]))
    for what, values in tiers:
        if values:
            u, v = _unique_or_ambiguous(values, what)
            if not (0 <= u < w and 0 <= v < h):
                raise PointOutOfImage(f"point ({u}, {v}) outside {w}x{h} image")
            return VlmReply(raw_text=text, point=(u, v))
    raise UnparseableReply(f"no pixel point found in reply: {text[:120]!r}")


# --- bundle export ----------------------------------------------------------

def encode_png(img: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(img).save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes) -> np.ndarray:
    return np.asarray(Image.open(io.BytesIO(data)).convert("RGB"))


def dump_bundle(bundle: QueryBundle, out_dir: str | Path) -> None:
    """Write a bundle as PNGs + prompt.txt + order.json for inspection."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(bundle.images):
        (out / f"image_{i:02d}.png").write_bytes(encode_png(img))
    (out / "prompt.txt").write_text(bundle.prompt)
    (out / "order.json").write_text(json.dumps(
        {"strategy": bundle.strategy.value,
         "candidate_order": list(bundle.candidate_order)},
        indent=2, sort_keys=True))
