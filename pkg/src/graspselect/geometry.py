"""Camera model, rigid transforms, depth unprojection and grasp projection.

Conventions used throughout the package:
  - Camera frame: x right, y down, z forward (pinhole looking along +z).
  - Gripper frame: z = approach direction, y = finger closing axis,
    x = y cross z; the pose translation t sits at the gripper base, with the
    contact point offset by ``finger_length`` along the approach axis.
  - Poses are (R, t) with R a 3x3 rotation matrix acting on column vectors.

All functions here are pure and operate on immutable inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (BehindCamera, ConfigError, DimensionMismatch, InvalidPose,
                     ParseError)

ORTHONORMAL_TOL = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ConfigError("principal point outside image")

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        try:
            return cls(fx=float(d["fx"]), fy=float(d["fy"]), cx=float(d["cx"]),
                       cy=float(d["cy"]), width=int(d["width"]), height=int(d["height"]))
        except KeyError as e:
            raise ConfigError(f"intrinsics missing field {e}") from e


@dataclass(frozen=True)
class DepthImage:
    """Per-pixel depth in meters; 0 marks an invalid pixel."""

    width: int
    height: int
    data: np.ndarray  # (height, width) float64

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.shape != (self.height, self.width):
            raise DimensionMismatch(
                f"depth data shape {data.shape} != ({self.height}, {self.width})")
        if not np.all(np.isfinite(data)):
            raise ConfigError("depth image contains non-finite values")
        if np.any(data < 0):
            raise ConfigError("depth image contains negative values")
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, data: np.ndarray) -> "DepthImage":
        data = np.asarray(data, dtype=np.float64)
        return cls(width=data.shape[1], height=data.shape[0], data=data)


@dataclass(frozen=True)
class PointCloud:
    """3D points in the camera frame with optional source pixels."""

    points: np.ndarray  # (n, 3)
    pixels: np.ndarray | None = None  # (n, 2) real-valued (u, v), or None

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(points)):
            raise ConfigError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", points)
        if self.pixels is not None:
            pixels = np.asarray(self.pixels, dtype=np.float64).reshape(-1, 2)
            if len(pixels) != len(points):
                raise DimensionMismatch("pixels/points length mismatch")
            object.__setattr__(self, "pixels", pixels)

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class GraspPose:
    """SE(3) pose of a parallel-jaw gripper: rotation R and translation t."""

    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        check_rotation(r, tol=ORTHONORMAL_TOL)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Map points from the gripper frame into the parent frame."""
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def compose(self, other: "GraspPose") -> "GraspPose":
        """Compose: apply ``other`` first, then ``self``."""
        return GraspPose(self.rotation @ other.rotation,
                         self.rotation @ other.translation + self.translation)

    def inverse(self) -> "GraspPose":
        rt = self.rotation.T
        return GraspPose(rt, -rt @ self.translation)

    @property
    def approach(self) -> np.ndarray:
        """Approach direction (gripper +z) in the parent frame."""
        return self.rotation[:, 2].copy()

    @property
    def closing_axis(self) -> np.ndarray:
        """Finger closing axis (gripper +y) in the parent frame."""
        return self.rotation[:, 1].copy()

    def to_dict(self) -> dict:
        return {"rotation": [float(v) for v in self.rotation.ravel()],
                "translation": [float(v) for v in self.translation]}

    @classmethod
    def from_dict(cls, d: dict, tol: float = 1e-6) -> "GraspPose":
        r = np.asarray(d["rotation"], dtype=np.float64).reshape(3, 3)
        t = np.asarray(d["translation"], dtype=np.float64).reshape(3)
        check_rotation(r, tol=tol)
        return cls(orthonormalize(r), t)

    @classmethod
    def identity(cls) -> "GraspPose":
        return cls(np.eye(3), np.zeros(3))


def check_rotation(r: np.ndarray, tol: float) -> None:
    """Raise InvalidPose unless r is orthonormal with det +1 within tol."""
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3, 3):
        raise InvalidPose(f"rotation has shape {r.shape}, expected (3, 3)")
    err = np.max(np.abs(r.T @ r - np.eye(3)))
    if err > tol:
        raise InvalidPose(f"rotation not orthonormal (|R^T R - I| = {err:.3g})")
    det = np.linalg.det(r)
    if abs(det - 1.0) > tol:
        raise InvalidPose(f"rotation determinant {det:.6g} != 1")


def orthonormalize(r: np.ndarray) -> np.ndarray:
    """Project a near-rotation onto SO(3) via SVD (polar decomposition)."""
    u, _, vt = np.linalg.svd(np.asarray(r, dtype=np.float64))
    out = u @ vt
    if np.linalg.det(out) < 0:
        u[:, -1] *= -1
        out = u @ vt
    return out


def rotation_about(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix about a (not necessarily unit) axis."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    k = np.array([[0, -axis[2], axis[1]],
                  [axis[2], 0, -axis[0]],
                  [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


@dataclass(frozen=True)
class GripperGeometry:
    """Parallel-jaw gripper dimensions; defaults are Panda-like."""

    max_width: float = 0.08
    finger_length: float = 0.041

    def __post_init__(self):
        if self.max_width <= 0 or self.finger_length < 0:
            raise ConfigError("gripper dimensions must be positive")

    @property
    def wireframe_keypoints(self) -> np.ndarray:
        """5 canonical points in the gripper frame.

        Order: base, left root, left tip, right root, right tip. "Left" is
        -y, "right" is +y along the closing axis; tips sit finger_length
        along the approach axis.
        """
        hw = self.max_width / 2.0
        fl = self.finger_length
        return np.array([
            [0.0, 0.0, 0.0],   # base
            [0.0, -hw, 0.0],   # left root
            [0.0, -hw, fl],    # left tip
            [0.0, hw, 0.0],    # right root
            [0.0, hw, fl],     # right tip
        ])


# U-shape edges over the keypoint order above.
WIREFRAME_EDGES = ((0, 1), (0, 3), (1, 2), (3, 4))


def unproject(depth: DepthImage, intr: CameraIntrinsics) -> PointCloud:
    """Lift every valid depth pixel into a 3D point in the camera frame."""
    if (depth.width, depth.height) != (intr.width, intr.height):
        raise DimensionMismatch(
            f"depth {depth.width}x{depth.height} vs intrinsics "
            f"{intr.width}x{intr.height}")
    v, u = np.nonzero(depth.data > 0)
    d = depth.data[v, u]
    x = (u - intr.cx) * d / intr.fx
    y = (v - intr.cy) * d / intr.fy
    points = np.column_stack([x, y, d])
    pixels = np.column_stack([u, v]).astype(np.float64)
    return PointCloud(points=points, pixels=pixels)


def project(point: np.ndarray, intr: CameraIntrinsics) -> tuple[float, float]:
    """Project a camera-frame point to real-valued pixel coordinates."""
    x, y, z = np.asarray(point, dtype=np.float64).reshape(3)
    if z <= 0:
        raise BehindCamera(f"point z = {z} is not in front of the camera")
    return (intr.fx * x / z + intr.cx, intr.fy * y / z + intr.cy)


def project_many(points: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Vectorized projection; raises BehindCamera if any z <= 0."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    z = points[:, 2]
    if np.any(z <= 0):
        raise BehindCamera("point(s) behind the camera")
    u = intr.fx * points[:, 0] / z + intr.cx
    v = intr.fy * points[:, 1] / z + intr.cy
    return np.column_stack([u, v])


def contact_point(g: GraspPose, grip: GripperGeometry) -> np.ndarray:
    """Midpoint between fingertips, finger_length along the approach axis."""
    return g.transform(np.array([0.0, 0.0, grip.finger_length]))


def wireframe_segments(g: GraspPose, grip: GripperGeometry,
                       intr: CameraIntrinsics) -> list[tuple[tuple[float, float], tuple[float, float]]]:
    """Project the gripper U-shape into the image as 4 line segments."""
    pts = g.transform(grip.wireframe_keypoints)
    if np.any(pts[:, 2] <= 0):
        raise BehindCamera("gripper keypoint behind the camera")
    px = project_many(pts, intr)
    return [(tuple(px[a]), tuple(px[b])) for a, b in WIREFRAME_EDGES]


# --- file I/O ---------------------------------------------------------------

def load_depth(image_path: str | Path) -> tuple[DepthImage, CameraIntrinsics]:
    """Read a 16-bit depth image with its JSON sidecar.

    The sidecar ``<image>.json`` holds ``depth_scale`` (meters per raw unit)
    and ``intrinsics``.
    """
    image_path = Path(image_path)
    sidecar = image_path.with_suffix(image_path.suffix + ".json")
    if not image_path.exists():
        raise ConfigError(f"depth image not found: {image_path}")
    if not sidecar.exists():
        raise ConfigError(f"depth sidecar not found: {sidecar}")
    meta = json.loads(sidecar.read_text())
    intr = CameraIntrinsics.from_dict(meta["intrinsics"])
    raw = np.asarray(Image.open(image_path), dtype=np.float64)
    depth = DepthImage.from_array(raw * float(meta["depth_scale"]))
    if (depth.width, depth.height) != (intr.width, intr.height):
        raise DimensionMismatch("depth image size disagrees with sidecar intrinsics")
    return depth, intr


def save_depth(depth: DepthImage, intr: CameraIntrinsics,
               image_path: str | Path, depth_scale: float = 1e-4) -> None:
    """Write depth as 16-bit PNG plus sidecar JSON."""
    image_path = Path(image_path)
    raw = np.clip(np.round(depth.data / depth_scale), 0, 65535).astype(np.uint16)
    Image.fromarray(raw).save(image_path)
    sidecar = image_path.with_suffix(image_path.suffix + ".json")
    sidecar.write_text(json.dumps(
        {"depth_scale": depth_scale, "intrinsics": intr.to_dict()},
        indent=2, sort_keys=True))


def save_ply(cloud: PointCloud, path: str | Path) -> None:
    """Export the cloud as ASCII PLY with x y z properties."""
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(cloud)}",
        "property float x",
        "property float y",
        "property float z",
        "end_header",
    ]
    for p in cloud.points:
        lines.append(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_ply(path: str | Path) -> PointCloud:
    """Read an ASCII PLY written by :func:`save_ply`."""
    text = Path(path).read_text().splitlines()
    try:
        end = text.index("end_header")
    except ValueError:
        raise ParseError(f"{path}: missing PLY end_header")
    points = [[float(v) for v in line.split()[:3]] for line in text[end + 1:] if line.strip()]
    return PointCloud(points=np.array(points, dtype=np.float64).reshape(-1, 3))
