"""Analytic primitive shapes: spheres, boxes, cylinders and posed unions.

These back the synthetic scene corpus: candidate sampling probes object
width along a closing line, compliance checks use signed distances of
labeled regions, and the renderer raycasts the same shapes. All bulk
operations are vectorized over numpy arrays of points or rays.

Shapes are defined in their own local frame (cylinder axis = local z);
``Part`` attaches a rigid pose, and ``PrimitiveObject`` is a union of posed
parts with named sub-volume regions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, UnknownRegion
from .geometry import GraspPose

# A rigid transform is just an SE(3) pose; reuse the validated type.
RigidTransform = GraspPose

_INF = np.inf


def _as_points(pts) -> np.ndarray:
    return np.asarray(pts, dtype=np.float64).reshape(-1, 3)


@dataclass(frozen=True)
class Sphere:
    radius: float

    kind = "sphere"

    def __post_init__(self):
        if self.radius <= 0:
            raise ConfigError("sphere radius must be positive")

    def sdf(self, pts) -> np.ndarray:
        pts = _as_points(pts)
        return np.linalg.norm(pts, axis=1) - self.radius

    def intersect(self, origins, dirs) -> tuple[np.ndarray, np.ndarray]:
        """Entry/exit ray parameters; (inf, -inf) where the ray misses."""
        o, d = _as_points(origins), _as_points(dirs)
        a = np.sum(d * d, axis=1)
        b = 2.0 * np.sum(o * d, axis=1)
        c = np.sum(o * o, axis=1) - self.radius ** 2
        disc = b * b - 4 * a * c
        hit = disc >= 0
        sq = np.sqrt(np.maximum(disc, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            t0 = np.where(hit, (-b - sq) / (2 * a), _INF)
            t1 = np.where(hit, (-b + sq) / (2 * a), -_INF)
        return t0, t1

    def sample_surface(self, n: int, rng: np.random.Generator) -> np.ndarray:
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return v * self.radius

    def bounding_radius(self) -> float:
        return self.radius

    def dims_dict(self) -> dict:
        return {"radius": self.radius}


@dataclass(frozen=True)
class Box:
    size: tuple[float, float, float]  # full extents along x, y, z

    kind = "box"

    def __post_init__(self):
        size = tuple(float(s) for s in np.asarray(self.size).reshape(3))
        if any(s <= 0 for s in size):
            raise ConfigError("box extents must be positive")
        object.__setattr__(self, "size", size)

    def _half(self) -> np.ndarray:
        return np.asarray(self.size) / 2.0

    def sdf(self, pts) -> np.ndarray:
        pts = _as_points(pts)
        q = np.abs(pts) - self._half()
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(np.max(q, axis=1), 0.0)
        return outside + inside

    def intersect(self, origins, dirs) -> tuple[np.ndarray, np.ndarray]:
        o, d = _as_points(origins), _as_points(dirs)
        half = self._half()
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            ta = (-half - o) * inv
            tb = (half - o) * inv
        # Axes with zero direction: inside slab -> (-inf, inf), else miss.
        par = np.abs(d) < 1e-300
        inside_slab = np.abs(o) <= half
        lo = np.where(par, np.where(inside_slab, -_INF, _INF), np.minimum(ta, tb))
        hi = np.where(par, np.where(inside_slab, _INF, -_INF), np.maximum(ta, tb))
        t0 = np.max(lo, axis=1)
        t1 = np.min(hi, axis=1)
        miss = t0 > t1
        return np.where(miss, _INF, t0), np.where(miss, -_INF, t1)

    def sample_surface(self, n: int, rng: np.random.Generator) -> np.ndarray:
        half = self._half()
        areas = np.array([half[1] * half[2], half[0] * half[2], half[0] * half[1]])
        probs = np.repeat(areas, 2)
        probs = probs / probs.sum()
        faces = rng.choice(6, size=n, p=probs)
        pts = rng.uniform(-half, half, size=(n, 3))
        axis = faces // 2
        sign = np.where(faces % 2 == 0, -1.0, 1.0)
        pts[np.arange(n), axis] = sign * half[axis]
        return pts

    def bounding_radius(self) -> float:
        return float(np.linalg.norm(self._half()))

    def dims_dict(self) -> dict:
        return {"size": list(self.size)}


@dataclass(frozen=True)
class Cylinder:
    radius: float
    height: float  # full height along local z

    kind = "cylinder"

    def __post_init__(self):
        if self.radius <= 0 or self.height <= 0:
            raise ConfigError("cylinder dimensions must be positive")

    def sdf(self, pts) -> np.ndarray:
        pts = _as_points(pts)
        dr = np.linalg.norm(pts[:, :2], axis=1) - self.radius
        dz = np.abs(pts[:, 2]) - self.height / 2.0
        q = np.column_stack([dr, dz])
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(np.max(q, axis=1), 0.0)
        return outside + inside

    def intersect(self, origins, dirs) -> tuple[np.ndarray, np.ndarray]:
        o, d = _as_points(origins), _as_points(dirs)
        # Radial interval.
        a = d[:, 0] ** 2 + d[:, 1] ** 2
        b = 2.0 * (o[:, 0] * d[:, 0] + o[:, 1] * d[:, 1])
        c = o[:, 0] ** 2 + o[:, 1] ** 2 - self.radius ** 2
        par = a < 1e-300
        disc = b * b - 4 * a * c
        hit = disc >= 0
        sq = np.sqrt(np.maximum(disc, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            r0 = np.where(hit, (-b - sq) / (2 * a), _INF)
            r1 = np.where(hit, (-b + sq) / (2 * a), -_INF)
        inside_radial = c <= 0
        r0 = np.where(par, np.where(inside_radial, -_INF, _INF), r0)
        r1 = np.where(par, np.where(inside_radial, _INF, -_INF), r1)
        # Axial slab.
        half = self.height / 2.0
        zpar = np.abs(d[:, 2]) < 1e-300
        with np.errstate(divide="ignore", invalid="ignore"):
            za = (-half - o[:, 2]) / d[:, 2]
            zb = (half - o[:, 2]) / d[:, 2]
        inside_z = np.abs(o[:, 2]) <= half
        z0 = np.where(zpar, np.where(inside_z, -_INF, _INF), np.minimum(za, zb))
        z1 = np.where(zpar, np.where(inside_z, _INF, -_INF), np.maximum(za, zb))
        t0 = np.maximum(r0, z0)
        t1 = np.minimum(r1, z1)
        miss = t0 > t1
        return np.where(miss, _INF, t0), np.where(miss, -_INF, t1)

    def sample_surface(self, n: int, rng: np.random.Generator) -> np.ndarray:
        side_area = 2 * np.pi * self.radius * self.height
        cap_area = np.pi * self.radius ** 2
        total = side_area + 2 * cap_area
        which = rng.uniform(size=n)
        theta = rng.uniform(0, 2 * np.pi, size=n)
        pts = np.empty((n, 3))
        on_side = which < side_area / total
        pts[:, 0] = np.cos(theta) * self.radius
        pts[:, 1] = np.sin(theta) * self.radius
        pts[:, 2] = rng.uniform(-self.height / 2, self.height / 2, size=n)
        caps = ~on_side
        r = self.radius * np.sqrt(rng.uniform(size=n))
        sign = np.where(rng.uniform(size=n) < 0.5, -1.0, 1.0)
        pts[caps, 0] = (np.cos(theta) * r)[caps]
        pts[caps, 1] = (np.sin(theta) * r)[caps]
        pts[caps, 2] = (sign * self.height / 2)[caps]
        return pts

    def bounding_radius(self) -> float:
        return float(np.hypot(self.radius, self.height / 2.0))

    def dims_dict(self) -> dict:
        return {"radius": self.radius, "height": self.height}


Shape = Sphere | Box | Cylinder


def shape_from_dict(kind: str, dims: dict) -> Shape:
    if kind == "sphere":
        return Sphere(radius=float(dims["radius"]))
    if kind == "box":
        return Box(size=tuple(float(v) for v in dims["size"]))
    if kind == "cylinder":
        return Cylinder(radius=float(dims["radius"]), height=float(dims["height"]))
    raise ConfigError(f"unknown shape kind: {kind!r}")


@dataclass(frozen=True)
class Part:
    """A shape placed by a rigid pose within its parent frame."""

    shape: Shape
    pose: RigidTransform = field(default_factory=RigidTransform.identity)
    name: str = ""

    def to_local(self, pts) -> np.ndarray:
        return self.pose.inverse().transform(_as_points(pts))

    def sdf(self, pts) -> np.ndarray:
        return self.shape.sdf(self.to_local(pts))

    def intersect(self, origins, dirs) -> tuple[np.ndarray, np.ndarray]:
        inv = self.pose.inverse()
        o = inv.transform(_as_points(origins))
        d = _as_points(dirs) @ inv.rotation.T
        return self.shape.intersect(o, d)

    def sample_surface(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.pose.transform(self.shape.sample_surface(n, rng))

    def to_dict(self) -> dict:
        return {"shape": self.shape.kind, "dimensions": self.shape.dims_dict(),
                "pose": self.pose.to_dict(), "name": self.name}

    @classmethod
    def from_dict(cls, d: dict) -> "Part":
        pose = RigidTransform.from_dict(d["pose"]) if "pose" in d \
            else RigidTransform.identity()
        return cls(shape=shape_from_dict(d["shape"], d["dimensions"]),
                   pose=pose, name=d.get("name", ""))


def merge_intervals(intervals: list[tuple[float, float]]) -> list[tuple[float, float]]:
    """Union of closed intervals, merged and sorted."""
    valid = sorted((lo, hi) for lo, hi in intervals if lo <= hi)
    out: list[tuple[float, float]] = []
    for lo, hi in valid:
        if out and lo <= out[-1][1] + 1e-12:
            out[-1] = (out[-1][0], max(out[-1][1], hi))
        else:
            out.append((lo, hi))
    return out


@dataclass(frozen=True)
class PrimitiveObject:
    """Union of posed primitive parts with named labeled regions.

    ``pose`` places the object in the world frame; parts and regions are
    expressed in the object frame.
    """

    name: str
    parts: tuple[Part, ...]
    pose: RigidTransform = field(default_factory=RigidTransform.identity)
    regions: dict[str, Part] = field(default_factory=dict)
    color: tuple[int, int, int] = (180, 120, 60)

    def __post_init__(self):
        if not self.parts:
            raise ConfigError("object needs at least one part")
        object.__setattr__(self, "parts", tuple(self.parts))

    # All queries below are in the OBJECT frame.

    def sdf(self, pts) -> np.ndarray:
        return np.min(np.stack([p.sdf(pts) for p in self.parts]), axis=0)

    def contains(self, pts, margin: float = 0.0) -> np.ndarray:
        return self.sdf(pts) <= margin

    def normals(self, pts, h: float = 1e-6) -> np.ndarray:
        """Outward surface normals by central differences of the sdf."""
        pts = _as_points(pts)
        grad = np.empty_like(pts)
        for axis in range(3):
            e = np.zeros(3)
            e[axis] = h
            grad[:, axis] = (self.sdf(pts + e) - self.sdf(pts - e)) / (2 * h)
        norms = np.linalg.norm(grad, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        return grad / norms

    def line_intervals(self, point, direction) -> list[tuple[float, float]]:
        """Parameter intervals where the line point + t*direction is inside."""
        o = _as_points(point)
        d = _as_points(direction)
        spans = []
        for part in self.parts:
            t0, t1 = part.intersect(o, d)
            spans.append((float(t0[0]), float(t1[0])))
        return merge_intervals(spans)

    def width_through(self, point, direction) -> tuple[float, float, float] | None:
        """Chord width of the object along ``direction`` through ``point``.

        Returns (width, t_enter, t_exit) for the merged interval containing
        t = 0, or None when the point is outside the object on that line.
        """
        for lo, hi in self.line_intervals(point, direction):
            if lo - 1e-9 <= 0.0 <= hi + 1e-9:
                return hi - lo, lo, hi
        return None

    def raycast(self, origins, dirs) -> tuple[np.ndarray, np.ndarray]:
        """Nearest positive hit parameter and part index per ray.

        Misses get t = inf and part index -1.
        """
        o, d = _as_points(origins), _as_points(dirs)
        best_t = np.full(len(o), _INF)
        best_part = np.full(len(o), -1, dtype=np.int64)
        for i, part in enumerate(self.parts):
            t0, t1 = part.intersect(o, d)
            t = np.where(t0 > 1e-9, t0, np.where(t1 > 1e-9, t1, _INF))
            closer = t < best_t
            best_t[closer] = t[closer]
            best_part[closer] = i
        return best_t, best_part

    def region(self, name: str) -> Part:
        try:
            return self.regions[name]
        except KeyError:
            raise UnknownRegion(
                f"object {self.name!r} has no region {name!r} "
                f"(known: {sorted(self.regions)})")

    def region_contains(self, name: str, pts, margin: float = 0.0) -> np.ndarray:
        return self.region(name).sdf(pts) <= margin

    def sample_region_surface(self, name: str, n: int,
                              rng: np.random.Generator) -> np.ndarray:
        return self.region(name).sample_surface(n, rng)

    def bounding_radius(self) -> float:
        return max(np.linalg.norm(p.pose.translation) + p.shape.bounding_radius()
                   for p in self.parts)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "pose": self.pose.to_dict(),
            "parts": [p.to_dict() for p in self.parts],
            "regions": {k: v.to_dict() for k, v in sorted(self.regions.items())},
            "color": list(self.color),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PrimitiveObject":
        pose = RigidTransform.from_dict(d["pose"]) if "pose" in d \
            else RigidTransform.identity()
        return cls(
            name=d.get("name", "object"),
            parts=tuple(Part.from_dict(p) for p in d["parts"]),
            pose=pose,
            regions={k: Part.from_dict(v) for k, v in d.get("regions", {}).items()},
            color=tuple(d.get("color", (180, 120, 60))),
        )
