"""Calibrated scene: pinhole camera, world regions, and geometric queries.

World frame: x right (aligned with the image's u axis), y away from the
camera, z up; the water surface is the z = 0 plane.  Camera frame: x right,
y down, z forward, with p_cam = R @ (p_world - position).

A SceneConfig is immutable after load and safe to share across threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence


class SceneError(ValueError):
    """Raised when a scene config file violates the schema or its invariants."""


Vec2 = tuple[float, float]
Vec3 = tuple[float, float, float]


@dataclass(frozen=True)
class Camera:
    position: Vec3
    rotation: tuple[Vec3, Vec3, Vec3]   # world-to-camera, rows
    focal_px: float
    principal: Vec2
    image_size: tuple[int, int]

    def __post_init__(self):
        w, h = self.image_size
        if self.focal_px <= 0 or w <= 0 or h <= 0:
            raise SceneError("focal length and image size must be positive")
        for v in (*self.position, *self.principal, self.focal_px):
            if not math.isfinite(v):
                raise SceneError("camera parameters must be finite")
        r = self.rotation
        # orthonormal rows, right-handed
        for i in range(3):
            for j in range(3):
                dot = sum(r[i][k] * r[j][k] for k in range(3))
                want = 1.0 if i == j else 0.0
                if abs(dot - want) > 1e-6:
                    raise SceneError("camera rotation is not orthonormal")
        det = (r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
               - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
               + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]))
        if det < 0:
            raise SceneError("camera rotation must be right-handed")


@dataclass(frozen=True)
class Rect:
    """Axis-aligned image-space rectangle, pixels, edges inclusive."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise SceneError("rectangle must have positive extent")

    def contains_point(self, u: float, v: float) -> bool:
        return self.x <= u <= self.x + self.w and self.y <= v <= self.y + self.h

    def covers(self, other: "Rect") -> bool:
        return (self.x <= other.x and self.y <= other.y
                and other.x + other.w <= self.x + self.w
                and other.y + other.h <= self.y + self.h)


@dataclass(frozen=True)
class Physics:
    idle_drift_speed: float = 0.05      # m/s, +x when idle
    idle_relax_per_s: float = 0.15      # fraction of velocity deviation kept after 1 s
    dash_speed: float = 4.0             # m/s
    dash_duration_s: float = 2.0
    restitution: float = 0.9
    lotus_radius: float = 1.2           # m
    shine_duration_s: float = 2.0
    fish_duration_s: float = 2.5
    firework_duration_s: float = 3.0
    umbrella_duration_s: float = 12.0
    umbrella_text_max: int = 140
    boat_duration_s: float = 10.0
    boat_half_width: float = 4.0        # m
    boat_path: tuple[Vec2, Vec2] = ((-75.0, 62.0), (110.0, 62.0))

    def __post_init__(self):
        if not 0.0 <= self.restitution <= 1.0:
            raise SceneError("restitution must be in [0, 1]")
        if not 0.0 <= self.idle_relax_per_s < 1.0:
            raise SceneError("idle_relax_per_s must be in [0, 1)")
        for name in ("idle_drift_speed", "dash_speed", "dash_duration_s", "lotus_radius",
                     "shine_duration_s", "fish_duration_s", "firework_duration_s",
                     "umbrella_duration_s", "boat_duration_s", "boat_half_width"):
            if getattr(self, name) <= 0:
                raise SceneError(f"physics.{name} must be positive")
        if self.umbrella_text_max < 2:
            raise SceneError("umbrella_text_max must be at least 2")


@dataclass(frozen=True)
class SceneConfig:
    camera: Camera
    lake_polygon: tuple[Vec2, ...]      # counterclockwise after load
    sky_band: Rect
    viewport: Rect
    physics: Physics
    background_plate: str = ""
    server: dict = field(default_factory=dict)   # opaque session section, see server module


# ---------------------------------------------------------------------------
# geometric queries


def project(camera: Camera, p: Sequence[float]) -> Optional[Vec2]:
    """Pinhole projection of a world point; None when at or behind the camera."""
    uvz = project_with_depth(camera, p)
    return None if uvz is None else (uvz[0], uvz[1])


def project_with_depth(camera: Camera, p: Sequence[float]) -> Optional[Vec3]:
    """Like project, but also returns the camera-frame depth (for compositing)."""
    cx, cy, cz = camera.position
    dx, dy, dz = p[0] - cx, p[1] - cy, p[2] - cz
    r = camera.rotation
    z = r[2][0] * dx + r[2][1] * dy + r[2][2] * dz
    if z <= 0.0:
        return None
    x = r[0][0] * dx + r[0][1] * dy + r[0][2] * dz
    y = r[1][0] * dx + r[1][1] * dy + r[1][2] * dz
    pu, pv = camera.principal
    return (camera.focal_px * x / z + pu, camera.focal_px * y / z + pv, z)


def in_viewport(camera: Camera, viewport: Rect, p: Sequence[float]) -> bool:
    """True iff the point projects and its image lies inside the viewport."""
    uv = project(camera, p)
    return uv is not None and viewport.contains_point(uv[0], uv[1])


_EPS = 1e-12


def _on_segment(px, py, ax, ay, bx, by) -> bool:
    cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
    if abs(cross) > _EPS * max(1.0, abs(bx - ax) + abs(by - ay)):
        return False
    dot = (px - ax) * (bx - ax) + (py - ay) * (by - ay)
    return -_EPS <= dot <= (bx - ax) ** 2 + (by - ay) ** 2 + _EPS

def contains(polygon: Sequence[Vec2], p: Sequence[float]) -> bool:
    """Even-odd point-in-polygon test; boundary points count as inside."""
    px, py = p[0], p[1]
    inside = False
    n = len(polygon)
    for i in range(n):
        ax, ay = polygon[i]
        bx, by = polygon[(i + 1) % n]
        if _on_segment(px, py, ax, ay, bx, by):
            return True
        if (ay > py) != (by > py):
            x_cross = ax + (py - ay) * (bx - ax) / (by - ay)
            if px < x_cross:
                inside = not inside
    return inside


def polygon_area(polygon: Sequence[Vec2]) -> float:
    """Signed area; positive for counterclockwise vertex order."""
    total = 0.0
    n = len(polygon)
    for i in range(n):
        ax, ay = polygon[i]
        bx, by = polygon[(i + 1) % n]
        total += ax * by - bx * ay
    return 0.5 * total


def polygon_bbox(polygon: Sequence[Vec2]) -> tuple[float, float, float, float]:
    xs = [p[0] for p in polygon]
    ys = [p[1] for p in polygon]
    return min(xs), min(ys), max(xs), max(ys)


def sample_lake_point(rng, polygon: Sequence[Vec2]) -> Vec2:
    """Uniform point inside the polygon by rejection over its bounding box.

    Deterministic for a given RNG state.  The polygon is validated at scene
    load, so rejection terminates quickly; a hard cap guards miswired calls.
    """
    minx, miny, maxx, maxy = polygon_bbox(polygon)
    for _ in range(100_000):
        x = rng.uniform(minx, maxx)
        y = rng.uniform(miny, maxy)
        if contains(polygon, (x, y)):
            return (x, y)
    raise SceneError("rejection sampling failed; polygon has (near-)zero area")


def _proper_intersect(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return (v > _EPS) - (v < -_EPS)

    o1, o2 = orient(p1, p2, p3), orient(p1, p2, p4)
    o3, o4 = orient(p3, p4, p1), orient(p3, p4, p2)
    return o1 != o2 and o3 != o4 and 0 not in (o1, o2, o3, o4)


def validate_polygon(polygon: Sequence[Vec2]) -> tuple[Vec2, ...]:
    """Check the lake polygon invariants and normalize to counterclockwise."""
    if len(polygon) < 3:
        raise SceneError("lake polygon needs at least 3 vertices")
    for p in polygon:
        if not (math.isfinite(p[0]) and math.isfinite(p[1])):
            raise SceneError("lake polygon vertices must be finite")
    area = polygon_area(polygon)
    if abs(area) < 1e-9:
        raise SceneError("lake polygon has zero area")
    n = len(polygon)
    for i in range(n):
        a, b = polygon[i], polygon[(i + 1) % n]
        if math.hypot(b[0] - a[0], b[1] - a[1]) < 1e-12:
            raise SceneError("lake polygon has a degenerate (zero-length) edge")
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            c, d = polygon[j], polygon[(j + 1) % n]
            if _proper_intersect(a, b, c, d):
                raise SceneError("lake polygon is self-intersecting")
    pts = tuple((float(p[0]), float(p[1])) for p in polygon)
    return pts if area > 0 else pts[::-1]


# ---------------------------------------------------------------------------
# loading


def _need(obj: dict, key: str, where: str):
    if key not in obj:
        raise SceneError(f"{where}: missing required key {key!r}")
    return obj[key]


def _rect(obj, where: str) -> Rect:
    if not isinstance(obj, dict):
        raise SceneError(f"{where}: expected an object with x/y/w/h")
    try:
        return Rect(float(obj["x"]), float(obj["y"]), float(obj["w"]), float(obj["h"]))
    except KeyError as e:
        raise SceneError(f"{where}: missing {e.args[0]!r}") from e


def parse_scene(doc: dict, origin: str = "<scene>") -> SceneConfig:
    cam = _need(doc, "camera", origin)
    try:
        camera = Camera(
            position=tuple(float(v) for v in _need(cam, "position", "camera")),
            rotation=tuple(tuple(float(v) for v in row)
                           for row in _need(cam, "rotation", "camera")),
            focal_px=float(_need(cam, "focal_px", "camera")),
            principal=tuple(float(v) for v in _need(cam, "principal", "camera")),
            image_size=tuple(int(v) for v in _need(cam, "image_size", "camera")),
        )
    except (TypeError, ValueError) as e:
        if isinstance(e, SceneError):
            raise
        raise SceneError(f"{origin}: malformed camera block: {e}") from e
    if len(camera.position) != 3 or len(camera.rotation) != 3 or len(camera.image_size) != 2:
        raise SceneError(f"{origin}: camera vectors have wrong arity")

    polygon = validate_polygon([tuple(map(float, p))
                                for p in _need(doc, "lake_polygon", origin)])
    sky = _rect(_need(doc, "sky_band", origin), "sky_band")
    viewport = _rect(_need(doc, "viewport", origin), "viewport")
    w, h = camera.image_size
    image_rect = Rect(0, 0, w, h)
    if not image_rect.covers(sky):
        raise SceneError(f"{origin}: sky_band exceeds the image bounds")
    if not image_rect.covers(viewport):
        raise SceneError(f"{origin}: viewport exceeds the image bounds")

    phys_doc = dict(doc.get("physics", {}))
    if "boat_path" in phys_doc:
        phys_doc["boat_path"] = tuple(tuple(map(float, p)) for p in phys_doc["boat_path"])
    try:
        physics = Physics(**phys_doc)
    except TypeError as e:
        raise SceneError(f"{origin}: unknown physics key: {e}") from e

    server = doc.get("server", {})
    if not isinstance(server, dict):
        raise SceneError(f"{origin}: server section must be an object")
    return SceneConfig(
        camera=camera,
        lake_polygon=polygon,
        sky_band=sky,
        viewport=viewport,
        physics=physics,
        background_plate=str(doc.get("background_plate", "")),
        server=server,
    )


def load_scene(path) -> SceneConfig:
    """Load and validate a scene config file (JSON)."""
    p = Path(path)
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except OSError as e:
        raise SceneError(f"cannot read scene file {p}: {e}") from e
    except json.JSONDecodeError as e:
        raise SceneError(f"scene file {p} is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise SceneError(f"scene file {p}: top level must be an object")
    return parse_scene(doc, origin=str(p))
