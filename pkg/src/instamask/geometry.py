"""Projection of 3D boxes to per-frame pixel masks.

Pipeline per instance and frame: world corners -> camera space -> near-plane
clip -> perspective divide -> 2D convex hull -> raster coverage.

Coverage rule: pixel (row r, col c) covers the unit square [c, c+1) x
[r, r+1) and is set iff its center (c + 0.5, r + 0.5) lies inside or on the
boundary of the hull polygon.  Degenerate polygons (signed area under one
pixel, which includes every polygon with fewer than three vertices) instead
set exactly the pixels containing their vertices.  The implementation
evaluates half-plane edge functions over the polygon's bounding box, but the
output is defined solely by the center rule above.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .scene import BoxCorners3D, CameraFrame, Instance, Scene, corners_from_pose

EPS_NEAR = 1e-3

# box edges join corners whose indices differ in exactly one bit
BOX_EDGES = tuple(
    (a, b) for a in range(8) for b in range(a + 1, 8) if bin(a ^ b).count("1") == 1
)


def _to_camera(point, camera: CameraFrame) -> tuple[float, float, float]:
    x, y, z = point
    r, t = camera.R, camera.T
    return (
        r[0][0] * x + r[0][1] * y + r[0][2] * z + t[0],
        r[1][0] * x + r[1][1] * y + r[1][2] * z + t[1],
        r[2][0] * x + r[2][1] * y + r[2][2] * z + t[2],
    )


def _perspective(cam_point, camera: CameraFrame) -> tuple[float, float]:
    x, y, z = cam_point
    k = camera.K
    xh = k[0][0] * x + k[0][1] * y + k[0][2] * z
    yh = k[1][0] * x + k[1][1] * y + k[1][2] * z
    return (xh / z, yh / z)


def project_corner(point, camera: CameraFrame) -> tuple[tuple[float, float] | None, float]:
    """Project one world point; returns ((x, y) or None, depth).

    Depth is the camera-space z (the third homogeneous component, since K's
    bottom row is (0, 0, 1)).  Points with depth <= EPS_NEAR are behind the
    camera for masking purposes and get no 2D coordinates.
    """
    cam = _to_camera(point, camera)
    depth = cam[2]
    if depth <= EPS_NEAR:
        return None, depth
    return _perspective(cam, camera), depth


@dataclass(frozen=True)
class ProjectedPolygon:
    """Convex polygon in pixel coordinates, vertices ordered with
    non-negative consecutive cross products (counterclockwise in the
    coordinate algebra).  ``degenerate`` marks hulls with < 3 vertices."""

    vertices: tuple[tuple[float, float], ...]
    degenerate: bool

    @property
    def empty(self) -> bool:
        return len(self.vertices) == 0

    def signed_area(self) -> float:
        verts = self.vertices
        n = len(verts)
        if n < 3:
            return 0.0
        acc = 0.0
        for i in range(n):
            x1, y1 = verts[i]
            x2, y2 = verts[(i + 1) % n]
            acc += x1 * y2 - x2 * y1
        return acc / 2.0


def convex_hull(points) -> list[tuple[float, float]]:
    """Andrew's monotone chain; output counterclockwise, strict corners only.

    Collinear inputs collapse to their two extremes; <= 2 distinct points
    come back as-is (sorted).
    """
    pts = sorted(set((float(x), float(y)) for x, y in points))
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list[tuple[float, float]] = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[tuple[float, float]] = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:
        # all points collinear: keep the two extremes
        return [pts[0], pts[-1]]
    return hull


def hull_polygon(corners: BoxCorners3D, camera: CameraFrame) -> ProjectedPolygon:
    """Screen-space convex hull of the box after near-plane clipping.

    Corners with depth > EPS_NEAR project directly.  Box edges straddling
    the depth = EPS_NEAR plane contribute the intersection point, so every
    hull vertex has pre-projection depth >= EPS_NEAR.  A box entirely
    behind the plane yields the empty polygon.
    """
    cam_pts = [_to_camera(c, camera) for c in corners.corners]
    depths = [p[2] for p in cam_pts]
    keep = [p for p in cam_pts if p[2] > EPS_NEAR]
    for a, b in BOX_EDGES:
        za, zb = depths[a], depths[b]
        if (za > EPS_NEAR) == (zb > EPS_NEAR):
            continue
        t = (EPS_NEAR - za) / (zb - za)
        pa, pb = cam_pts[a], cam_pts[b]
        keep.append(
            (pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1]), EPS_NEAR)
        )
    if not keep:
        return ProjectedPolygon(vertices=(), degenerate=True)
    projected = [_perspective(p, camera) for p in keep]
    hull = convex_hull(projected)
    return ProjectedPolygon(vertices=tuple(hull), degenerate=len(hull) < 3)


def rasterize(polygon: ProjectedPolygon, height: int, width: int) -> np.ndarray:
    """Boolean (height, width) coverage mask for the polygon; see module
    docstring for the exact rule."""
    if height < 1 or width < 1:
        raise ValidationError(f"raster grid must be positive, got {height}x{width}")
    out = np.zeros((height, width), dtype=bool)
    verts = polygon.vertices
    if not verts:
        return out
    if len(verts) < 3 or polygon.signed_area() < 1.0:
        for x, y in verts:
            col, row = math.floor(x), math.floor(y)
            if 0 <= row < height and 0 <= col < width:
                out[row, col] = True
        return out

    xs = [v[0] for v in verts]
    ys = [v[1] for v in verts]
    r0 = max(0, math.ceil(min(ys) - 0.5))
    r1 = min(height - 1, math.floor(max(ys) - 0.5))
    c0 = max(0, math.ceil(min(xs) - 0.5))
    c1 = min(width - 1, math.floor(max(xs) - 0.5))
    if r0 > r1 or c0 > c1:
        return out

    cy = np.arange(r0, r1 + 1, dtype=np.float64)[:, None] + 0.5
    cx = np.arange(c0, c1 + 1, dtype=np.float64)[None, :] + 0.5
    inside = np.ones((r1 - r0 + 1, c1 - c0 + 1), dtype=bool)
    n = len(verts)
    for i in range(n):
        x1, y1 = verts[i]
        x2, y2 = verts[(i + 1) % n]
        inside &= (x2 - x1) * (cy - y1) - (y2 - y1) * (cx - x1) >= 0.0
    out[r0 : r1 + 1, c0 : c1 + 1] = inside
    return out


@dataclass(frozen=True, eq=False)
class PixelMaskStack:
    """Bit-packed binary occupancy of one instance over T x H x W pixels."""

    instance_id: int
    num_frames: int
    height: int
    width: int
    packed: np.ndarray  # uint8, numpy bit order (most significant bit first)

    def __post_init__(self) -> None:
        expected = (self.num_frames * self.height * self.width + 7) // 8
        if self.packed.dtype != np.uint8 or self.packed.ndim != 1 or len(self.packed) != expected:
            raise ValidationError(
                f"packed payload must be {expected} uint8 bytes, got "
                f"{self.packed.dtype} x {self.packed.shape}"
            )
        self.packed.setflags(write=False)

    @classmethod
    def from_frames(cls, instance_id: int, frames: np.ndarray) -> "PixelMaskStack":
        frames = np.asarray(frames)
        if frames.ndim != 3:
            raise ValidationError(f"frames must be (T, H, W), got shape {frames.shape}")
        t, h, w = frames.shape
        packed = np.packbits(frames.astype(bool).reshape(-1))
        return cls(instance_id, t, h, w, packed)

    def to_array(self) -> np.ndarray:
        total = self.num_frames * self.height * self.width
        bits = np.unpackbits(self.packed, count=total)
        return bits.astype(bool).reshape(self.num_frames, self.height, self.width)

    def frame(self, t: int) -> np.ndarray:
        if not 0 <= t < self.num_frames:
            raise ValidationError(f"frame {t} out of range (T={self.num_frames})")
        return self.to_array()[t]

    def count(self) -> int:
        return int(self.to_array().sum())

    def __eq__(self, other) -> bool:
        if not isinstance(other, PixelMaskStack):
            return NotImplemented
        return (
            self.instance_id == other.instance_id
            and self.num_frames == other.num_frames
            and self.height == other.height
            and self.width == other.width
            and np.array_equal(self.packed, other.packed)
        )


def build_mask_stack(instance: Instance, scene: Scene, view_id: int = 0) -> PixelMaskStack:
    """Per-frame raster masks for one instance under one view's cameras.

    Frames where the instance has no pose are all-zero.
    """
    frames = np.zeros((scene.num_frames, scene.height, scene.width), dtype=bool)
    for t in range(scene.num_frames):
        if instance.pose_at(t) is None:
            continue
        corners = corners_from_pose(instance, t)
        polygon = hull_polygon(corners, scene.camera_at(view_id, t))
        frames[t] = rasterize(polygon, scene.height, scene.width)
    return PixelMaskStack.from_frames(instance.tracking_id, frames)


# ---------------------------------------------------------------------------
# mask stack IO: 16-byte header + packbits payload, and per-frame PGM

MASK_MAGIC = b"IMSK"
MASK_VERSION = 1
_HEADER = struct.Struct("<4sHHHHI")  # magic, version, T, H, W, reserved


def write_mask_stack(stack: PixelMaskStack, path) -> None:
    header = _HEADER.pack(
        MASK_MAGIC, MASK_VERSION, stack.num_frames, stack.height, stack.width, 0
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(stack.packed.tobytes())


def read_mask_stack(path, instance_id: int) -> PixelMaskStack:
    """Read a mask stack; the instance id travels in the filename/manifest,
    not the header, so the caller supplies it."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise ValidationError(f"mask stack file too short: {len(blob)} bytes")
    magic, version, t, h, w, _reserved = _HEADER.unpack_from(blob)
    if magic != MASK_MAGIC:
        raise ValidationError(f"bad mask stack magic {magic!r}")
    if version != MASK_VERSION:
        raise ValidationError(f"unsupported mask stack version {version}")
    payload = np.frombuffer(blob, dtype=np.uint8, offset=_HEADER.size)
    expected = (t * h * w + 7) // 8
    if len(payload) != expected:
        raise ValidationError(
            f"mask stack payload is {len(payload)} bytes, expected {expected}"
        )
    return PixelMaskStack(instance_id, t, h, w, payload.copy())


def write_frame_pgm(stack: PixelMaskStack, t: int, path) -> None:
    """Binary PGM (P5) of one frame, 255 = covered, for eyeballing masks."""
    frame = stack.frame(t)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{stack.width} {stack.height}\n255\n".encode("ascii"))
        fh.write((frame.astype(np.uint8) * 255).tobytes())
