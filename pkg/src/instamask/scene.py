"""Scene model: cameras, tracked instances with 3D boxes, and scene IO.

Conventions fixed here and relied on everywhere downstream:

- World frame: x right, y forward, z up.  Yaw rotates about the world z
  axis (the vertical), counterclockwise looking down.
- Camera frame: x right, y down, z forward (depth).  A point projects via
  x_hom = K (R X + T); the third homogeneous component is the depth.
- Box corner ordering: corner index c in 0..7 places the corner at the
  offset (sx*dx/2, sy*dy/2, sz*dz/2) before rotation, where sx is +1 when
  bit 0 of c is set and -1 otherwise, sy follows bit 1, sz bit 2.
- Scene files store every real number as a decimal string produced by
  repr(), so load(save(scene)) reproduces the exact float bits.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

from .errors import SceneFormatError, ValidationError
from .rng import CounterRng

Vec3 = tuple[float, float, float]
Mat3 = tuple[Vec3, Vec3, Vec3]

CATEGORY_SIZES: dict[str, Vec3] = {
    "car": (4.4, 1.9, 1.6),
    "truck": (7.5, 2.5, 3.0),
    "bus": (11.0, 2.9, 3.2),
    "pedestrian": (0.6, 0.6, 1.75),
    "cyclist": (1.8, 0.6, 1.7),
}

MOTION_TYPES = ("linear", "turning", "occluded-gap")


def _check_vec3(v, name: str) -> Vec3:
    if len(v) != 3:
        raise ValidationError(f"{name} must have 3 components, got {len(v)}")
    out = tuple(float(x) for x in v)
    if not all(math.isfinite(x) for x in out):
        raise ValidationError(f"{name} must be finite, got {out}")
    return out


def _check_mat3(m, name: str) -> Mat3:
    if len(m) != 3:
        raise ValidationError(f"{name} must be 3x3")
    return tuple(_check_vec3(row, f"{name} row {i}") for i, row in enumerate(m))


@dataclass(frozen=True)
class Pose:
    """Rigid pose of a box at one frame: center plus yaw about vertical."""

    frame_index: int
    center: Vec3
    yaw: float

    def __post_init__(self) -> None:
        if self.frame_index < 0:
            raise ValidationError(f"pose frame_index must be >= 0, got {self.frame_index}")
        object.__setattr__(self, "center", _check_vec3(self.center, "pose center"))
        object.__setattr__(self, "yaw", float(self.yaw))
        if not math.isfinite(self.yaw):
            raise ValidationError("pose yaw must be finite")


@dataclass(frozen=True)
class Instance:
    """A tracked object: id, category, box extents, per-frame poses.

    Frames absent from ``poses`` are frames where the instance does not
    exist (not yet spawned, occluded, or departed).  Gaps are legal.
    """

    tracking_id: int
    category: str
    size: Vec3
    poses: tuple[Pose, ...]

    def __post_init__(self) -> None:
        if self.tracking_id < 0:
            raise ValidationError(f"tracking_id must be >= 0, got {self.tracking_id}")
        size = _check_vec3(self.size, f"instance {self.tracking_id} size")
        if min(size) <= 0:
            raise ValidationError(f"instance {self.tracking_id} size must be positive, got {size}")
        object.__setattr__(self, "size", size)
        ordered = tuple(sorted(self.poses, key=lambda p: p.frame_index))
        frames = [p.frame_index for p in ordered]
        if len(set(frames)) != len(frames):
            raise ValidationError(f"instance {self.tracking_id} has duplicate pose frames")
        object.__setattr__(self, "poses", ordered)

    def pose_at(self, frame_index: int) -> Pose | None:
        for pose in self.poses:
            if pose.frame_index == frame_index:
                return pose
        return None

    def visible_frames(self) -> tuple[int, ...]:
        return tuple(p.frame_index for p in self.poses)


@dataclass(frozen=True)
class CameraFrame:
    """Calibrated camera for one (view, frame): intrinsics K, extrinsics R, T."""

    view_id: int
    frame_index: int
    K: Mat3
    R: Mat3
    T: Vec3

    def __post_init__(self) -> None:
        if self.view_id < 0 or self.frame_index < 0:
            raise ValidationError("camera view_id and frame_index must be >= 0")
        K = _check_mat3(self.K, "camera K")
        R = _check_mat3(self.R, "camera R")
        T = _check_vec3(self.T, "camera T")
        if K[2] != (0.0, 0.0, 1.0):
            raise ValidationError(f"camera K bottom row must be (0, 0, 1), got {K[2]}")
        # orthonormality within 1e-9: rows must form a proper rotation
        for i in range(3):
            for j in range(3):
                dot = sum(R[i][a] * R[j][a] for a in range(3))
                want = 1.0 if i == j else 0.0
                if abs(dot - want) > 1e-9:
                    raise ValidationError(
                        f"camera R not orthonormal: row{i}.row{j} = {dot!r}"
                    )
        det = (
            R[0][0] * (R[1][1] * R[2][2] - R[1][2] * R[2][1])
            - R[0][1] * (R[1][0] * R[2][2] - R[1][2] * R[2][0])
            + R[0][2] * (R[1][0] * R[2][1] - R[1][1] * R[2][0])
        )
        if abs(det - 1.0) > 1e-9:
            raise ValidationError(f"camera R must be a proper rotation (det 1), det = {det!r}")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "T", T)


@dataclass(frozen=True)
class Scene:
    """Full clip description: dims, compression factors, cameras, instances."""

    num_frames: int
    height: int
    width: int
    factors: tuple[int, int, int]
    cameras: tuple[CameraFrame, ...]
    instances: tuple[Instance, ...]

    def __post_init__(self) -> None:
        if self.num_frames < 1 or self.height < 1 or self.width < 1:
            raise ValidationError(
                f"dims must be >= 1, got T={self.num_frames} H={self.height} W={self.width}"
            )
        factors = tuple(int(f) for f in self.factors)
        if len(factors) != 3 or min(factors) < 1:
            raise ValidationError(f"factors must be 3 positive ints, got {self.factors}")
        f_t, f_h, f_w = factors
        for value, factor, names in (
            (self.num_frames, f_t, ("T", "f_t")),
            (self.height, f_h, ("H", "f_h")),
            (self.width, f_w, ("W", "f_w")),
        ):
            if value % factor != 0:
                raise ValidationError(
                    f"{names[0]}={value} not divisible by {names[1]}={factor}"
                )
        object.__setattr__(self, "factors", factors)
        object.__setattr__(self, "cameras", tuple(self.cameras))
        object.__setattr__(self, "instances", tuple(self.instances))

        seen: dict[tuple[int, int], bool] = {}
        views: dict[int, set[int]] = {}
        for cam in self.cameras:
            key = (cam.view_id, cam.frame_index)
            if key in seen:
                raise ValidationError(f"duplicate camera for view {key[0]} frame {key[1]}")
            seen[key] = True
            if cam.frame_index >= self.num_frames:
                raise ValidationError(
                    f"camera frame_index {cam.frame_index} out of range (T={self.num_frames})"
                )
            views.setdefault(cam.view_id, set()).add(cam.frame_index)
        for view_id, frames in views.items():
            if frames != set(range(self.num_frames)):
                missing = sorted(set(range(self.num_frames)) - frames)
                raise ValidationError(f"view {view_id} missing camera frames {missing}")

        ids = [inst.tracking_id for inst in self.instances]
        for tid in ids:
            if ids.count(tid) > 1:
                raise ValidationError(f"duplicate tracking_id {tid}")
        for inst in self.instances:
            for pose in inst.poses:
                if pose.frame_index >= self.num_frames:
                    raise ValidationError(
                        f"instance {inst.tracking_id} pose frame {pose.frame_index}"
                        f" out of range (T={self.num_frames})"
                    )

    @property
    def view_ids(self) -> tuple[int, ...]:
        return tuple(sorted({cam.view_id for cam in self.cameras}))

    @property
    def num_views(self) -> int:
        return len(self.view_ids)

    @property
    def latent_dims(self) -> tuple[int, int, int]:
        f_t, f_h, f_w = self.factors
        return (self.num_frames // f_t, self.height // f_h, self.width // f_w)

    @property
    def tokens_per_view(self) -> int:
        t_c, h_c, w_c = self.latent_dims
        return t_c * h_c * w_c

    def camera_at(self, view_id: int, frame_index: int) -> CameraFrame:
        for cam in self.cameras:
            if cam.view_id == view_id and cam.frame_index == frame_index:
                return cam
        raise ValidationError(f"no camera for view {view_id} frame {frame_index}")

    def instance_by_id(self, tracking_id: int) -> Instance:
        for inst in self.instances:
            if inst.tracking_id == tracking_id:
                return inst
        raise ValidationError(f"no instance with tracking_id {tracking_id}")


@dataclass(frozen=True)
class BoxCorners3D:
    """The 8 world-space corners of one instance's box at one frame."""

    instance_id: int
    frame_index: int
    corners: tuple[Vec3, ...]

    def __post_init__(self) -> None:
        if len(self.corners) != 8:
            raise ValidationError(f"box must have 8 corners, got {len(self.corners)}")
        object.__setattr__(
            self, "corners", tuple(_check_vec3(c, f"corner {i}") for i, c in enumerate(self.corners))
        )


def corners_from_pose(instance: Instance, frame_index: int) -> BoxCorners3D:
    """Corners of the instance's box at a frame, per the bit convention above.

    Raises ValidationError if the instance has no pose at that frame.
    """
    pose = instance.pose_at(frame_index)
    if pose is None:
        raise ValidationError(
            f"instance {instance.tracking_id} has no pose at frame {frame_index}"
        )
    hx, hy, hz = (s / 2.0 for s in instance.size)
    cx, cy, cz = pose.center
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    corners = []
    for idx in range(8):
        ox = hx if idx & 1 else -hx
        oy = hy if idx & 2 else -hy
        oz = hz if idx & 4 else -hz
        corners.append((cx + c * ox - s * oy, cy + s * ox + c * oy, cz + oz))
    return BoxCorners3D(instance.tracking_id, frame_index, tuple(corners))


# ---------------------------------------------------------------------------
# synthetic scene generation


@dataclass(frozen=True)
class GeneratorSpec:
    """Knobs for the synthetic scene generator."""

    num_frames: int = 8
    height: int = 64
    width: int = 64
    factors: tuple[int, int, int] = (2, 8, 8)
    num_instances: int = 3
    num_views: int = 1
    motions: tuple[str, ...] = ("linear", "turning")

    def __post_init__(self) -> None:
        object.__setattr__(self, "factors", tuple(int(f) for f in self.factors))
        object.__setattr__(self, "motions", tuple(self.motions))
        if self.num_instances < 0:
            raise ValidationError("num_instances must be >= 0")
        if self.num_views < 1:
            raise ValidationError("num_views must be >= 1")
        for motion in self.motions:
            if motion not in MOTION_TYPES:
                raise ValidationError(
                    f"unknown motion type {motion!r}; choose from {MOTION_TYPES}"
                )
        if self.num_instances > 0 and not self.motions:
            raise ValidationError("motions must be non-empty when instances are requested")
        if "occluded-gap" in self.motions and self.num_frames < 3:
            raise ValidationError("occluded-gap motion requires num_frames >= 3")


def _rot_z(angle: float) -> Mat3:
    c, s = math.cos(angle), math.sin(angle)
    return ((c, -s, 0.0), (s, c, 0.0), (0.0, 0.0, 1.0))


def _view_camera(view_id: int, num_views: int) -> tuple[Mat3, Vec3]:
    # camera at (0, 0, 1.5) looking along world +y rotated by the view heading
    h = 2.0 * math.pi * view_id / num_views
    ch, sh = math.cos(h), math.sin(h)
    r: Mat3 = ((ch, sh, 0.0), (0.0, 0.0, -1.0), (-sh, ch, 0.0))
    center = (0.0, 0.0, 1.5)
    t = tuple(-sum(r[i][j] * center[j] for j in range(3)) for i in range(3))
    return r, t


def generate_synthetic_scene(spec: GeneratorSpec = GeneratorSpec(), seed: int = 0) -> Scene:
    """Deterministic random scene: same (spec, seed) gives the same scene.

    Motion types cycle over instances in spec order.  An occluded-gap
    instance has poses at every frame except T//2, so the gap is bracketed
    by visible frames on both sides.
    """
    root = CounterRng.from_seed(seed)
    rinst = root.split("instances")

    focal = 0.8 * spec.width
    k: Mat3 = (
        (focal, 0.0, spec.width / 2.0),
        (0.0, focal, spec.height / 2.0),
        (0.0, 0.0, 1.0),
    )
    cameras = []
    for view_id in range(spec.num_views):
        r, t = _view_camera(view_id, spec.num_views)
        for frame in range(spec.num_frames):
            cameras.append(CameraFrame(view_id, frame, k, r, t))

    categories = tuple(CATEGORY_SIZES)
    used_ids: set[int] = set()
    instances = []
    for i in range(spec.num_instances):
        tid = rinst.randint1(0, 10 * spec.num_instances + 10)
        while tid in used_ids:
            tid = rinst.randint1(0, 10 * spec.num_instances + 10)
        used_ids.add(tid)
        category = categories[rinst.randint1(0, len(categories))]
        base = CATEGORY_SIZES[category]
        size = tuple(b * (0.9 + 0.2 * rinst.uniform1()) for b in base)

        motion = spec.motions[i % len(spec.motions)]
        # spawn close enough that boxes cover whole latent cells even on
        # small test images
        x0 = -4.0 + 8.0 * rinst.uniform1()
        y0 = 4.0 + 8.0 * rinst.uniform1()
        z0 = size[2] / 2.0
        poses = []
        if motion == "turning":
            speed = 0.3 + 0.6 * rinst.uniform1()
            omega = (0.05 + 0.15 * rinst.uniform1()) * (1 if rinst.uniform1() < 0.5 else -1)
            heading = 2.0 * math.pi * rinst.uniform1()
            x, y = x0, y0
            for t_idx in range(spec.num_frames):
                poses.append(Pose(t_idx, (x, y, z0), heading))
                x += speed * math.cos(heading)
                y += speed * math.sin(heading)
                heading += omega
        else:
            vx = -0.5 + 1.0 * rinst.uniform1()
            vy = -0.4 + 1.2 * rinst.uniform1()
            yaw = math.atan2(vy, vx) if (vx, vy) != (0.0, 0.0) else 0.0
            gap = {spec.num_frames // 2} if motion == "occluded-gap" else set()
            for t_idx in range(spec.num_frames):
                if t_idx in gap:
                    continue
                poses.append(Pose(t_idx, (x0 + vx * t_idx, y0 + vy * t_idx, z0), yaw))
        instances.append(Instance(tid, category, size, tuple(poses)))

    return Scene(
        num_frames=spec.num_frames,
        height=spec.height,
        width=spec.width,
        factors=spec.factors,
        cameras=tuple(cameras),
        instances=tuple(instances),
    )


# ---------------------------------------------------------------------------
# serialization: reals as decimal strings for exact round-trips

SCENE_FORMAT = "instamask-scene"
SCENE_VERSION = 1


def _fmt(x: float) -> str:
    return repr(float(x))


def _fmt_vec(v) -> list[str]:
    return [_fmt(x) for x in v]


def _fmt_mat(m) -> list[list[str]]:
    return [_fmt_vec(row) for row in m]


def scene_to_doc(scene: Scene) -> dict:
    return {
        "format": SCENE_FORMAT,
        "version": SCENE_VERSION,
        "dims": {
            "T": scene.num_frames,
            "H": scene.height,
            "W": scene.width,
            "f_t": scene.factors[0],
            "f_h": scene.factors[1],
            "f_w": scene.factors[2],
        },
        "cameras": [
            {
                "view_id": cam.view_id,
                "frame_index": cam.frame_index,
                "K": _fmt_mat(cam.K),
                "R": _fmt_mat(cam.R),
                "T": _fmt_vec(cam.T),
            }
            for cam in scene.cameras
        ],
        "instances": [
            {
                "tracking_id": inst.tracking_id,
                "category": inst.category,
                "size": _fmt_vec(inst.size),
                "poses": [
                    {
                        "frame": pose.frame_index,
                        "center": _fmt_vec(pose.center),
                        "yaw": _fmt(pose.yaw),
                    }
                    for pose in inst.poses
                ],
            }
            for inst in scene.instances
        ],
    }


def save_scene(scene: Scene, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(scene_to_doc(scene), fh, indent=2)
        fh.write("\n")


def _want(obj, key, kind, path):
    if not isinstance(obj, dict):
        raise SceneFormatError(f"expected an object, got {type(obj).__name__}", path)
    if key not in obj:
        raise SceneFormatError("missing required field", f"{path}.{key}" if path else key)
    value = obj[key]
    where = f"{path}.{key}" if path else key
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise SceneFormatError(f"expected an integer, got {value!r}", where)
    elif not isinstance(value, kind):
        raise SceneFormatError(f"expected {kind.__name__}, got {type(value).__name__}", where)
    return value


def _real(value, path) -> float:
    if not isinstance(value, str):
        raise SceneFormatError(
            f"reals must be decimal strings, got {type(value).__name__}", path
        )
    try:
        out = float(value)
    except ValueError:
        raise SceneFormatError(f"not a decimal number: {value!r}", path) from None
    return out


def _real_vec(value, path, length=3) -> tuple:
    if not isinstance(value, list) or len(value) != length:
        raise SceneFormatError(f"expected a list of {length} decimal strings", path)
    return tuple(_real(v, f"{path}[{i}]") for i, v in enumerate(value))


def _real_mat(value, path) -> tuple:
    if not isinstance(value, list) or len(value) != 3:
        raise SceneFormatError("expected a 3x3 matrix of decimal strings", path)
    return tuple(_real_vec(row, f"{path}[{i}]") for i, row in enumerate(value))


def _build(where: str, ctor, **kwargs):
    # constructor invariant failures become format errors with a field path
    try:
        return ctor(**kwargs)
    except SceneFormatError:
        raise
    except ValidationError as exc:
        raise SceneFormatError(str(exc), where) from None


def scene_from_doc(doc: dict) -> Scene:
    if _want(doc, "format", str, "") != SCENE_FORMAT:
        raise SceneFormatError(f"unknown format {doc.get('format')!r}", "format")
    if _want(doc, "version", int, "") != SCENE_VERSION:
        raise SceneFormatError(f"unsupported version {doc.get('version')!r}", "version")
    dims = _want(doc, "dims", dict, "")
    num_frames = _want(dims, "T", int, "dims")
    height = _want(dims, "H", int, "dims")
    width = _want(dims, "W", int, "dims")
    factors = tuple(_want(dims, key, int, "dims") for key in ("f_t", "f_h", "f_w"))

    cameras = []
    for i, cam in enumerate(_want(doc, "cameras", list, "")):
        where = f"cameras[{i}]"
        cameras.append(
            _build(
                where,
                CameraFrame,
                view_id=_want(cam, "view_id", int, where),
                frame_index=_want(cam, "frame_index", int, where),
                K=_real_mat(_want(cam, "K", list, where), f"{where}.K"),
                R=_real_mat(_want(cam, "R", list, where), f"{where}.R"),
                T=_real_vec(_want(cam, "T", list, where), f"{where}.T"),
            )
        )

    instances = []
    for i, inst in enumerate(_want(doc, "instances", list, "")):
        where = f"instances[{i}]"
        poses = []
        for j, pose in enumerate(_want(inst, "poses", list, where)):
            pwhere = f"{where}.poses[{j}]"
            poses.append(
                _build(
                    pwhere,
                    Pose,
                    frame_index=_want(pose, "frame", int, pwhere),
                    center=_real_vec(_want(pose, "center", list, pwhere), f"{pwhere}.center"),
                    yaw=_real(_want(pose, "yaw", str, pwhere), f"{pwhere}.yaw"),
                )
            )
        instances.append(
            _build(
                where,
                Instance,
                tracking_id=_want(inst, "tracking_id", int, where),
                category=_want(inst, "category", str, where),
                size=_real_vec(_want(inst, "size", list, where), f"{where}.size"),
                poses=tuple(poses),
            )
        )

    return _build(
        "scene",
        Scene,
        num_frames=num_frames,
        height=height,
        width=width,
        factors=factors,
        cameras=tuple(cameras),
        instances=tuple(instances),
    )


def load_scene(path) -> Scene:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneFormatError(
            f"invalid JSON: {exc.msg}", f"line {exc.lineno} column {exc.colno}"
        ) from None
    return scene_from_doc(doc)
