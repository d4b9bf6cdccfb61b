"""Synthetic two-hand + cuboid scenes, their renders, and dataset files.

World units are "synthetic-mm": a hand from wrist to middle fingertip is
185 units long.  The camera sits at the origin looking down +z; pixel
centres are at integer image coordinates, so pixel ``(row, col)`` covers
``[col - 0.5, col + 0.5) x [row - 0.5, row + 0.5)``.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .errors import DatasetFormatError

IMAGE_SIZE = 64
GRID_SIZE = 32
N_JOINTS = 21
N_HANDS = 2
LEFT, RIGHT = 0, 1
FOCAL = 100.0

# segmentation classes
BACKGROUND, LEFT_HAND, RIGHT_HAND, OBJECT = 0, 1, 2, 3
N_SEG_CLASSES = 4

# 21-joint layout: wrist, then thumb/index/middle/ring/pinky, base to tip.
FINGER_BASES = {
    0: (22.0, 18.0, -5.0),
    1: (25.0, 85.0, 0.0),
    2: (5.0, 90.0, 0.0),
    3: (-14.0, 84.0, 0.0),
    4: (-30.0, 74.0, 0.0),
}
FINGER_BONES = {
    0: (34.0, 30.0, 24.0),
    1: (40.0, 24.0, 20.0),
    2: (45.0, 28.0, 22.0),
    3: (42.0, 26.0, 21.0),
    4: (32.0, 20.0, 18.0),
}
# in-plane heading of each finger, degrees from +y towards +x
FINGER_HEADING = {0: 50.0, 1: 8.0, 2: 0.0, 3: -7.0, 4: -15.0}
FLEX_LIMIT = {0: 30.0, 1: 45.0, 2: 45.0, 3: 45.0, 4: 45.0}
ABDUCTION_LIMIT = 12.0

BONES = tuple(
    (0 if k == 0 else 1 + 4 * f + k - 1, 1 + 4 * f + k) for f in range(5) for k in range(4)
)

JOINT_RADIUS = 9.0
BONE_RADIUS = 6.0
BACKGROUND_COLOR = (0.06, 0.06, 0.09)
OBJECT_COLOR = (0.52, 0.58, 0.33)
BONE_COLORS = ((0.86, 0.70, 0.55), (0.62, 0.55, 0.86))


def _hsv(h: float, s: float, v: float) -> tuple[float, float, float]:
    i = int(h * 6.0) % 6
    f = h * 6.0 - math.floor(h * 6.0)
    p, q, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    return [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i]


JOINT_COLORS = np.array(
    [[_hsv(j / N_JOINTS, 1.0, 1.0) for j in range(N_JOINTS)],
     [_hsv((j + 0.5) / N_JOINTS, 0.55, 0.7) for j in range(N_JOINTS)]]
)


def template_bone_lengths() -> np.ndarray:
    """Bone lengths of the fixed skeleton, ordered as :data:`BONES`."""
    lengths = []
    for f in range(5):
        lengths.append(float(np.linalg.norm(FINGER_BASES[f])))
        lengths.extend(FINGER_BONES[f][:3])
    # BONES order per finger is wrist->base, base->1, 1->2, 2->tip
    return np.array(lengths)


def _rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    x, y, z = axis
    c, s = math.cos(angle), math.sin(angle)
    cross = np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]])
    return c * np.eye(3) + s * cross + (1 - c) * np.outer(axis, axis)


def rotation_xyz(rx: float, ry: float, rz: float) -> np.ndarray:
    return _rotation([0, 0, 1], rz) @ _rotation([0, 1, 0], ry) @ _rotation([1, 0, 0], rx)


def pose_skeleton(rng: np.random.Generator) -> np.ndarray:
    """Right-hand skeleton in its local frame with random joint angles."""
    joints = np.zeros((N_JOINTS, 3))
    for f in range(5):
        heading = math.radians(FINGER_HEADING[f] + rng.uniform(-ABDUCTION_LIMIT, ABDUCTION_LIMIT))
        dx, dy = math.sin(heading), math.cos(heading)
        bends = np.cumsum(np.radians(rng.uniform(0.0, FLEX_LIMIT[f], size=3)))
        # flexion turns the in-plane heading towards the palm normal (+z)
        steps = np.stack([np.cos(bends) * dx, np.cos(bends) * dy, np.sin(bends)], axis=1)
        lengths = np.array(FINGER_BONES[f])[:, None]
        idx = 1 + 4 * f
        joints[idx] = FINGER_BASES[f]
        joints[idx + 1:idx + 4] = joints[idx] + np.cumsum(lengths * steps, axis=0)
    return joints


def intrinsics(size: int = IMAGE_SIZE) -> np.ndarray:
    scale = size / IMAGE_SIZE
    c = (size - 1) / 2.0
    return np.array([[FOCAL * scale, 0.0, c], [0.0, FOCAL * scale, c], [0.0, 0.0, 1.0]])


def project(points: np.ndarray, K: np.ndarray) -> np.ndarray:
    """Perspective projection of (..., 3) camera-frame points to pixels."""
    p = np.asarray(points, dtype=np.float64)
    return np.stack([K[0, 0] * p[..., 0] / p[..., 2] + K[0, 2],
                     K[1, 1] * p[..., 1] / p[..., 2] + K[1, 2]], axis=-1)


def image_to_grid(uv: np.ndarray) -> np.ndarray:
    """Map 64-px image coordinates to 32-px heatmap-grid coordinates."""
    scale = GRID_SIZE / IMAGE_SIZE
    return (np.asarray(uv) + 0.5) * scale - 0.5


def cuboid_corners(side: float, height: float) -> np.ndarray:
    """Rest-pose corners of a square-based box centred at the origin."""
    a, h = side / 2.0, height / 2.0
    return np.array([[sx * a, sy * a, sz * h] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])


def cuboid_symmetries() -> list[np.ndarray]:
    """The four rotations about the box's z axis that map it onto itself."""
    return [np.round(_rotation([0, 0, 1], k * math.pi / 2), 15) for k in range(4)]


@dataclass
class Scene:
    joints3d: np.ndarray          # (2, 21, 3) camera frame, synthetic-mm
    hand_present: np.ndarray      # (2,) bool
    corners: np.ndarray           # (8, 3) rest-pose object box
    rotation: np.ndarray          # (3, 3) object rotation
    translation: np.ndarray       # (3,) object translation
    K: np.ndarray                 # (3, 3) intrinsics of the 64x64 image
    joints2d: np.ndarray          # (2, 21, 2) pixels
    visibility: np.ndarray        # (2, 21) bool
    occlusion_ratio: float
    seed: int

    @property
    def two_hand(self) -> bool:
        return bool(self.hand_present.all())

    def object_corners_world(self) -> np.ndarray:
        return self.corners @ self.rotation.T + self.translation

    def joints2d_grid(self) -> np.ndarray:
        return image_to_grid(self.joints2d)

    def root_relative(self) -> np.ndarray:
        return self.joints3d - self.joints3d[:, :1]

    def relative_translation(self) -> np.ndarray:
        """Right wrist minus left wrist."""
        return self.joints3d[RIGHT, 0] - self.joints3d[LEFT, 0]


@dataclass(frozen=True)
class SceneConfig:
    two_hand: bool = True
    occlusion_level: float = 0.25


# ---------------------------------------------------------------------------
# primitives and coverage


@dataclass
class _Primitives:
    """Everything drawable, in pixel units of one resolution.

    Disks and capsules share one representation: a segment a->b with a
    radius (a == b for disks), one row of ``seg`` per primitive.
    """
    depth: np.ndarray
    label: np.ndarray
    color: np.ndarray
    seg: np.ndarray
    polygon: np.ndarray | None = None
    polygon_depth: float = 0.0


_BONE_A = np.array([a for a, _ in BONES])
_BONE_B = np.array([b for _, b in BONES])


def _convex_hull(points: np.ndarray) -> np.ndarray:
    pts = sorted(map(tuple, points))
    if len(pts) <= 2:
        return np.array(pts)

    def half(seq):
        out = []
        for p in seq:
            while len(out) >= 2:
                (ax, ay), (bx, by) = out[-2], out[-1]
                if (bx - ax) * (p[1] - ay) - (by - ay) * (p[0] - ax) <= 0:
                    out.pop()
                else:
                    break
            out.append(p)
        return out

    lower, upper = half(pts), half(reversed(pts))
    return np.array(lower[:-1] + upper[:-1])


def _hand_primitives(scene: Scene, size: int) -> _Primitives:
    K = intrinsics(size)
    depth, label, color, seg = [], [], [], []
    for h in range(N_HANDS):
        if not scene.hand_present[h]:
            continue
        joints = scene.joints3d[h]
        uv = project(joints, K)
        zb = 0.5 * (joints[_BONE_A, 2] + joints[_BONE_B, 2])
        zj = joints[:, 2]
        depth += [zb, zj - 1e-3]  # disks sit just in front of their bones
        label.append(np.full(len(BONES) + N_JOINTS, LEFT_HAND if h == LEFT else RIGHT_HAND))
        color += [np.tile(BONE_COLORS[h], (len(BONES), 1)), JOINT_COLORS[h]]
        seg += [np.column_stack([uv[_BONE_A], uv[_BONE_B], K[0, 0] * BONE_RADIUS / zb]),
                np.column_stack([uv, uv, K[0, 0] * JOINT_RADIUS / zj])]
    if not depth:
        return _Primitives(np.zeros(0), np.zeros(0, dtype=np.int64), np.zeros((0, 3)), np.zeros((0, 5)))
    return _Primitives(np.concatenate(depth), np.concatenate(label), np.concatenate(color),
                       np.concatenate(seg))


def _with_object(prims: _Primitives, scene: Scene, size: int) -> _Primitives:
    world = scene.object_corners_world()
    out = _Primitives(prims.depth, prims.label, prims.color, prims.seg)
    if np.all(world[:, 2] > 1.0):
        out.polygon = _convex_hull(project(world, intrinsics(size)))
        out.polygon_depth = float(world[:, 2].mean())
    return out


def _primitives(scene: Scene, size: int) -> _Primitives:
    return _with_object(_hand_primitives(scene, size), scene, size)


def _segment_cover(px: np.ndarray, py: np.ndarray, seg: np.ndarray) -> np.ndarray:
    """Coverage matrix (n_prims, n_points) for capsules/disks."""
    ax, ay, bx, by, r = (seg[:, i:i + 1] for i in range(5))
    dx, dy = bx - ax, by - ay
    length2 = dx * dx + dy * dy
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(length2 > 0, ((px - ax) * dx + (py - ay) * dy) / np.where(length2 > 0, length2, 1), 0.0)
    t = np.clip(t, 0.0, 1.0)
    cx, cy = ax + t * dx - px, ay + t * dy - py
    return cx * cx + cy * cy <= r * r


def _polygon_cover(px: np.ndarray, py: np.ndarray, poly: np.ndarray) -> np.ndarray:
    if poly is None or len(poly) < 3:
        return np.zeros(px.shape, dtype=bool)
    inside = np.ones(px.shape, dtype=bool)
    for i in range(len(poly)):
        ax, ay = poly[i]
        bx, by = poly[(i + 1) % len(poly)]
        inside &= (bx - ax) * (py - ay) - (by - ay) * (px - ax) >= 0
    return inside


def _owners(prims: _Primitives, px: np.ndarray, py: np.ndarray):
    """Index of the nearest covering primitive per point (-1 background, -2 object)."""
    n = px.shape[0]
    best_depth = np.full(n, np.inf)
    owner = np.full(n, -1)
    if len(prims.seg):
        cover = _segment_cover(px[None, :], py[None, :], prims.seg)
        depth = np.where(cover, prims.depth[:, None], np.inf)
        idx = depth.argmin(axis=0)
        d = depth[idx, np.arange(n)]
        hit = np.isfinite(d)
        owner[hit] = idx[hit]
        best_depth[hit] = d[hit]
    poly_hit = _polygon_cover(px, py, prims.polygon) & (prims.polygon_depth < best_depth)
    owner[poly_hit] = -2
    return owner


def _raster(scene: Scene, size: int, with_color: bool):
    prims = _primitives(scene, size)
    rows, cols = np.mgrid[0:size, 0:size]
    owner = _owners(prims, cols.ravel().astype(np.float64), rows.ravel().astype(np.float64))
    labels = np.full(owner.shape, BACKGROUND, dtype=np.int64)
    labels[owner == -2] = OBJECT
    hit = owner >= 0
    labels[hit] = prims.label[owner[hit]]
    image = None
    if with_color:
        image = np.tile(np.array(BACKGROUND_COLOR), (owner.size, 1))
        image[owner == -2] = OBJECT_COLOR
        image[hit] = prims.color[owner[hit]]
        image = image.reshape(size, size, 3)
    return labels.reshape(size, size), image


def render(scene: Scene) -> np.ndarray:
    """64 x 64 x 3 image in [0, 1]; nearest primitive wins (painter's order)."""
    return _raster(scene, IMAGE_SIZE, with_color=True)[1]


def render_labels(scene: Scene, size: int = IMAGE_SIZE) -> np.ndarray:
    """Per-pixel class map (background / left / right / object)."""
    return _raster(scene, size, with_color=False)[0]


def segmentation_target(scene: Scene) -> np.ndarray:
    """Ground-truth 32 x 32 class map on the heatmap grid."""
    return render_labels(scene, GRID_SIZE)


def compute_visibility(scene: Scene, _hands: _Primitives | None = None) -> np.ndarray:
    """Joint flags: true when the joint's own hand owns its projected pixel."""
    hands = _hands if _hands is not None else _hand_primitives(scene, IMAGE_SIZE)
    prims = _with_object(hands, scene, IMAGE_SIZE)
    vis = np.zeros((N_HANDS, N_JOINTS), dtype=bool)
    present = [h for h in range(N_HANDS) if scene.hand_present[h]]
    if not present:
        return vis
    uv = np.concatenate([scene.joints2d[h] for h in present])
    px, py = np.round(uv[:, 0]), np.round(uv[:, 1])
    inside = (px >= 0) & (px < IMAGE_SIZE) & (py >= 0) & (py < IMAGE_SIZE)
    owner = _owners(prims, px, py)
    labels = np.full(owner.shape, BACKGROUND)
    labels[owner == -2] = OBJECT
    hit = owner >= 0
    labels[hit] = prims.label[owner[hit]]
    for n, h in enumerate(present):
        own = LEFT_HAND if h == LEFT else RIGHT_HAND
        sl = slice(n * N_JOINTS, (n + 1) * N_JOINTS)
        vis[h] = (labels[sl] == own) & inside[sl]
    return vis


# ---------------------------------------------------------------------------
# scene generation

_MARGIN = 2.0
_MAX_TRIES = 60


def _place_hand(rng: np.random.Generator, hand: int, two_hand: bool) -> np.ndarray:
    local = pose_skeleton(rng)
    if hand == LEFT:
        local = local * np.array([-1.0, 1.0, 1.0])
    # local +y (fingers) maps to image up, flexion curls towards the camera
    base = np.diag([1.0, -1.0, -1.0])
    spin = rotation_xyz(math.radians(rng.uniform(-30, 30)), math.radians(rng.uniform(-30, 30)),
                        math.radians(rng.uniform(-35, 35)))
    world = local @ (spin @ base).T
    depth = rng.uniform(440.0, 540.0)
    if two_hand:
        side = -1.0 if hand == LEFT else 1.0
        cx = side * rng.uniform(0.35, 0.5) * depth * 0.32
    else:
        cx = rng.uniform(-0.08, 0.08) * depth * 0.32
    cy = rng.uniform(-0.1, 0.1) * depth * 0.32
    centre = world.mean(axis=0)
    return world - centre + np.array([cx, cy, depth])


def _in_frame(uv: np.ndarray) -> bool:
    return bool(np.all(uv >= _MARGIN) and np.all(uv <= IMAGE_SIZE - 1 - _MARGIN))


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def generate_scene(seed: int, config: SceneConfig = SceneConfig()) -> Scene:
    """Deterministic scene for ``seed``; retries placements until valid."""
    rng = rngmod.stream(seed, rngmod.SCENE)
    K = intrinsics()
    if config.two_hand:
        present = np.array([True, True])
    else:
        present = np.array([False, False])
        present[int(rng.integers(2))] = True

    corners = cuboid_corners(rng.uniform(40.0, 70.0), rng.uniform(60.0, 110.0))
    hidden = np.array([0.0, 0.0, -1000.0])
    scene = Scene(np.zeros((N_HANDS, N_JOINTS, 3)), present, corners, np.eye(3), hidden, K,
                  np.zeros((N_HANDS, N_JOINTS, 2)), np.zeros((N_HANDS, N_JOINTS), dtype=bool), 0.0,
                  int(seed))
    for _ in range(_MAX_TRIES):
        hands = np.zeros((N_HANDS, N_JOINTS, 3))
        for h in range(N_HANDS):
            if present[h]:
                hands[h] = _place_hand(rng, h, config.two_hand)
        uv = np.where(present[:, None, None], project(np.where(present[:, None, None], hands, 1.0), K), 0.0)
        scene.joints3d, scene.joints2d = hands, uv
        if not all(_in_frame(uv[h]) for h in range(N_HANDS) if present[h]):
            continue
        # the object is the only occluder: hands may not cover each other
        if compute_visibility(scene)[present].all():
            break
    hand_ids = [h for h in range(N_HANDS) if present[h]]
    nearest = min(hands[h, :, 2].min() for h in hand_ids)
    farthest = max(hands[h, :, 2].max() for h in hand_ids)

    hand_prims = _hand_primitives(scene, IMAGE_SIZE)
    best = None
    for _ in range(_MAX_TRIES):
        if config.occlusion_level == 0.0:
            # behind both hands, so it can never cover a joint
            z = farthest + rng.uniform(80.0, 160.0)
            u, v = rng.uniform(8.0, IMAGE_SIZE - 9.0, size=2)
            target = None
        else:
            target = hand_ids[int(rng.integers(len(hand_ids)))]
            anchor = scene.joints2d[target, int(rng.integers(N_JOINTS))]
            u, v = anchor + rng.normal(0.0, 4.0, size=2)
            z = nearest - rng.uniform(40.0, 120.0)
        xyz = np.array([(u - K[0, 2]) * z / K[0, 0], (v - K[1, 2]) * z / K[1, 1], z])
        scene.rotation = _random_rotation(rng)
        scene.translation = xyz
        if not _in_frame(project(scene.object_corners_world(), K).clip(-1e6, 1e6)) and target is None:
            continue
        vis = compute_visibility(scene, hand_prims)
        if target is None:
            score = 0.0 if vis[hand_ids].all() else math.inf
        else:
            ratio = 1.0 - vis[target].mean()
            score = abs(ratio - config.occlusion_level)
        if best is None or score < best[0]:
            best = (score, scene.rotation.copy(), scene.translation.copy())
        if score <= (0.0 if target is None else 0.06):
            break
    if best is not None:
        scene.rotation, scene.translation = best[1], best[2]
    scene.visibility = compute_visibility(scene)
    occluded = sum(int((~scene.visibility[h]).sum()) for h in hand_ids)
    scene.occlusion_ratio = occluded / float(N_JOINTS * len(hand_ids))
    return scene


def generate_dataset(seed: int, n: int, occlusion_level: float = 0.25,
                     two_hand_fraction: float = 0.5) -> list[Scene]:
    """``n`` scenes with per-scene seeds derived from ``seed``."""
    layout = rngmod.stream(seed, rngmod.SCENE, 0)
    flags = layout.random(n) < two_hand_fraction
    return [generate_scene(rngmod.derive_seed(seed, rngmod.SCENE, i + 1),
                           SceneConfig(two_hand=bool(flags[i]), occlusion_level=occlusion_level))
            for i in range(n)]


def render_gt_heatmaps(joints2d: np.ndarray, visibility: np.ndarray, sigma: float = 1.5,
                       size: int = GRID_SIZE) -> np.ndarray:
    """One unit-peak Gaussian per joint on the heatmap grid.

    ``joints2d`` is (N, 2) in grid pixels; invisible or out-of-frame joints
    get an all-zero map.
    """
    joints2d = np.asarray(joints2d, dtype=np.float64).reshape(-1, 2)
    visibility = np.asarray(visibility, dtype=bool).reshape(-1)
    coords = np.arange(size, dtype=np.float64)
    gx = np.exp(-((coords[None, :] - joints2d[:, :1]) ** 2) / (2 * sigma * sigma))
    gy = np.exp(-((coords[None, :] - joints2d[:, 1:]) ** 2) / (2 * sigma * sigma))
    maps = gy[:, :, None] * gx[:, None, :]
    inside = np.all((joints2d >= -0.5) & (joints2d < size - 0.5), axis=1)
    maps[~(inside & visibility)] = 0.0
    return maps


def scene_heatmaps(scene: Scene, sigma: float = 1.5) -> np.ndarray:
    """(42, 32, 32) targets; left-hand joints first."""
    return render_gt_heatmaps(scene.joints2d_grid().reshape(-1, 2),
                              (scene.visibility & scene.hand_present[:, None]).reshape(-1), sigma)


# ---------------------------------------------------------------------------
# persistence

MAGIC = b"OCRB"
VERSION = 1
_HEADER = struct.Struct("<4sHIQ")
_FIELDS = (
    ("joints3d", (N_HANDS, N_JOINTS, 3)),
    ("hand_present", (N_HANDS,)),
    ("corners", (8, 3)),
    ("rotation", (3, 3)),
    ("translation", (3,)),
    ("K", (3, 3)),
    ("joints2d", (N_HANDS, N_JOINTS, 2)),
    ("visibility", (N_HANDS, N_JOINTS)),
    ("occlusion_ratio", ()),
    ("seed", ()),
)
_BOOL_FIELDS = {"hand_present", "visibility"}


def _field_bytes(name: str, shape: tuple) -> int:
    if name == "seed":
        return 8
    n = int(np.prod(shape)) if shape else 1
    return n if name in _BOOL_FIELDS else 8 * n


RECORD_SIZE = sum(_field_bytes(n, s) for n, s in _FIELDS)


def _encode(scene: Scene) -> bytes:
    out = io.BytesIO()
    for name, shape in _FIELDS:
        value = getattr(scene, name)
        if name == "seed":
            out.write(struct.pack("<Q", int(value)))
        elif name in _BOOL_FIELDS:
            out.write(np.asarray(value, dtype=np.uint8).reshape(shape).tobytes())
        else:
            out.write(np.asarray(value, dtype="<f8").reshape(shape).tobytes())
    return out.getvalue()


def _decode(payload: bytes, index: int) -> Scene:
    if len(payload) != RECORD_SIZE:
        raise DatasetFormatError(f"expected {RECORD_SIZE} payload bytes, got {len(payload)}", index)
    values = {}
    offset = 0
    for name, shape in _FIELDS:
        size = _field_bytes(name, shape)
        chunk = payload[offset:offset + size]
        offset += size
        if name == "seed":
            values[name] = struct.unpack("<Q", chunk)[0]
        elif name in _BOOL_FIELDS:
            raw = np.frombuffer(chunk, dtype=np.uint8)
            if np.any(raw > 1):
                raise DatasetFormatError(f"flag field {name} holds a non-boolean byte", index)
            values[name] = raw.astype(bool).reshape(shape)
        else:
            arr = np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(shape)
            values[name] = float(arr) if name == "occlusion_ratio" else arr
    return Scene(**values)


def dumps_dataset(scenes: list[Scene], seed: int) -> bytes:
    parts = [_HEADER.pack(MAGIC, VERSION, len(scenes), int(seed))]
    for scene in scenes:
        payload = _encode(scene)
        parts.append(struct.pack("<I", len(payload)))
        parts.append(payload)
    return b"".join(parts)


def loads_dataset(blob: bytes) -> tuple[list[Scene], int]:
    if len(blob) < _HEADER.size:
        raise DatasetFormatError("file shorter than header")
    magic, version, count, seed = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise DatasetFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise DatasetFormatError(f"unsupported version {version}")
    offset = _HEADER.size
    scenes = []
    for index in range(count):
        if offset + 4 > len(blob):
            raise DatasetFormatError("truncated length prefix", index)
        (length,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        if offset + length > len(blob):
            raise DatasetFormatError("truncated record", index)
        scenes.append(_decode(blob[offset:offset + length], index))
        offset += length
    if offset != len(blob):
        raise DatasetFormatError(f"{len(blob) - offset} trailing bytes after {count} records")
    return scenes, seed


def write_dataset(path: str | Path, scenes: list[Scene], seed: int) -> None:
    Path(path).write_bytes(dumps_dataset(scenes, seed))


def read_dataset(path: str | Path) -> tuple[list[Scene], int]:
    return loads_dataset(Path(path).read_bytes())


def scene_to_json(scene: Scene) -> dict:
    out = {}
    for name, _ in _FIELDS:
        value = getattr(scene, name)
        out[name] = value.tolist() if isinstance(value, np.ndarray) else value
    return out


def write_dataset_json(path: str | Path, scenes: list[Scene], seed: int) -> None:
    doc = {"magic": MAGIC.decode(), "version": VERSION, "seed": int(seed),
           "scenes": [scene_to_json(s) for s in scenes]}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")
