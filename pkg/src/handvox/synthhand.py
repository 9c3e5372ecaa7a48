"""Procedural articulated hand: ground-truth meshes, joints, and depth renders.

The skeleton has 21 joints (wrist + 5 fingers x metacarpal/proximal/
intermediate/tip). The surface is a union of capsules tessellated to exactly
1193 vertices with fixed topology; every vertex is rigidly skinned to the
bone that generated it, so any pose preserves topology and bone lengths
exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .heatmap import JointSet
from .voxgrid import CameraIntrinsics, DepthMap, Mesh, _freeze

JOINT_COUNT = 21
VERTEX_COUNT = 1193
WRIST = 0
FINGERS = ("thumb", "index", "middle", "ring", "pinky")

# joint index layout: wrist, then per finger (metacarpal, proximal,
# intermediate, tip) in the order of FINGERS
METACARPALS = tuple(1 + 4 * f for f in range(5))

MCP_FLEX_LIMITS = (-15.0, 80.0)
MCP_ABD_LIMITS = (-15.0, 15.0)
PIP_FLEX_LIMITS = (0.0, 100.0)
DIP_FLEX_LIMITS = (0.0, 80.0)
ROOT_ROT_LIMITS = (-180.0, 180.0)

_PALM_NORMAL = np.array([0.0, 0.0, 1.0])


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def _axis_angle(axis: np.ndarray, degrees: float) -> np.ndarray:
    """Rodrigues rotation matrix about a unit axis."""
    rad = np.deg2rad(degrees)
    c, s = np.cos(rad), np.sin(rad)
    x, y, z = axis
    cross = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return c * np.eye(3) + s * cross + (1.0 - c) * np.outer(axis, axis)


def _euler_xyz(degrees) -> np.ndarray:
    rx = _axis_angle(np.array([1.0, 0.0, 0.0]), degrees[0])
    ry = _axis_angle(np.array([0.0, 1.0, 0.0]), degrees[1])
    rz = _axis_angle(np.array([0.0, 0.0, 1.0]), degrees[2])
    return rx @ ry @ rz


@dataclass(frozen=True, eq=False)
class HandModel:
    """Rest skeleton, capsule surface template, and rigid skinning assignment."""

    rest_joints: np.ndarray  # (21, 3) mm
    parents: np.ndarray  # (21,) parent joint index, -1 at the wrist
    template: Mesh  # K = 1193 vertices
    vertex_bone: np.ndarray  # (K,) child-joint id of the bone owning each vertex (0 = wrist-rigid)
    flex_axes: np.ndarray  # (5, 3) per-finger flexion axis in the rest frame

    def __post_init__(self):
        if self.template.num_vertices != VERTEX_COUNT:
            raise ValueError(f"hand template must have exactly {VERTEX_COUNT} vertices")
        object.__setattr__(self, "rest_joints", _freeze(np.array(self.rest_joints, dtype=np.float64)))
        object.__setattr__(self, "parents", _freeze(np.array(self.parents, dtype=np.int64)))
        object.__setattr__(self, "vertex_bone", _freeze(np.array(self.vertex_bone, dtype=np.int64)))
        object.__setattr__(self, "flex_axes", _freeze(np.array(self.flex_axes, dtype=np.float64)))


@dataclass(frozen=True, eq=False)
class PoseParams:
    """Joint angles (degrees) within anatomical limits plus a global 6-DOF root."""

    mcp_flex: np.ndarray = field(default_factory=lambda: np.zeros(5))
    mcp_abduct: np.ndarray = field(default_factory=lambda: np.zeros(5))
    pip_flex: np.ndarray = field(default_factory=lambda: np.zeros(5))
    dip_flex: np.ndarray = field(default_factory=lambda: np.zeros(5))
    root_rotation: np.ndarray = field(default_factory=lambda: np.zeros(3))  # Euler xyz, degrees
    root_translation: np.ndarray = field(default_factory=lambda: np.zeros(3))  # mm

    def __post_init__(self):
        for name, vals, (lo, hi), n in (
            ("mcp_flex", self.mcp_flex, MCP_FLEX_LIMITS, 5),
            ("mcp_abduct", self.mcp_abduct, MCP_ABD_LIMITS, 5),
            ("pip_flex", self.pip_flex, PIP_FLEX_LIMITS, 5),
            ("dip_flex", self.dip_flex, DIP_FLEX_LIMITS, 5),
            ("root_rotation", self.root_rotation, ROOT_ROT_LIMITS, 3),
        ):
            arr = np.array(vals, dtype=np.float64).reshape(n)
            if arr.min() < lo or arr.max() > hi:
                raise ValueError(f"{name} outside limits [{lo}, {hi}]")
            object.__setattr__(self, name, _freeze(arr))
        t = np.array(self.root_translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError("root translation must be finite")
        object.__setattr__(self, "root_translation", _freeze(t))

    @classmethod
    def rest(cls) -> "PoseParams":
        return cls()

    def translated(self, offset) -> "PoseParams":
        """Same pose with the root shifted by `offset` mm."""
        return PoseParams(
            self.mcp_flex,
            self.mcp_abduct,
            self.pip_flex,
            self.dip_flex,
            self.root_rotation,
            self.root_translation + np.asarray(offset, dtype=np.float64),
        )


def sample_pose(seed: int) -> PoseParams:
    """Deterministic random pose; seed 0 is reserved for the rest pose."""
    if seed == 0:
        return PoseParams.rest()
    rng = np.random.default_rng(seed)
    return PoseParams(
        mcp_flex=rng.uniform(-10.0, 60.0, size=5),
        mcp_abduct=rng.uniform(-12.0, 12.0, size=5),
        pip_flex=rng.uniform(0.0, 75.0, size=5),
        dip_flex=rng.uniform(0.0, 55.0, size=5),
        root_rotation=np.append(rng.uniform(-25.0, 25.0, size=2), rng.uniform(-60.0, 60.0)),
        root_translation=rng.uniform(-15.0, 15.0, size=3),
    )


def _capsule(a, b, radius: float, segments: int, rings: int, flatten=(1.0, 1.0)):
    """Capsule from a to b: 2 + segments*rings vertices, 2*segments*rings faces.

    `flatten` scales the two transverse axes (slab-like palm geometry).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    axis = b - a
    length = np.linalg.norm(axis)
    az = axis / length
    ref = np.array([0.0, 0.0, 1.0]) if abs(az[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    ax = _unit(np.cross(ref, az))
    ay = np.cross(az, ax)

    quarter = 0.5 * np.pi * radius
    total = 2 * quarter + length
    verts = [a - radius * az]  # poles sit on the axis; flattening leaves them
    for k in range(1, rings + 1):
        s = total * k / (rings + 1)
        if s < quarter:  # cap at a
            phi = s / radius
            h, r, base = -radius * np.cos(phi), radius * np.sin(phi), a
        elif s <= quarter + length:  # cylinder body
            h, r, base = s - quarter, radius, a
        else:  # cap at b
            phi = (s - quarter - length) / radius
            h, r, base = radius * np.sin(phi), radius * np.cos(phi), b
        for j in range(segments):
            ang = 2.0 * np.pi * j / segments
            offset = (ax * (np.cos(ang) * flatten[0]) + ay * (np.sin(ang) * flatten[1])) * r
            verts.append(base + az * h + offset)
    verts.append(b + radius * az)

    faces = []
    last = 1 + segments * rings
    for j in range(segments):
        jn = (j + 1) % segments
        faces.append((0, 1 + jn, 1 + j))
        faces.append((last, last - segments + j, last - segments + jn))
    for i in range(rings - 1):
        r0 = 1 + i * segments
        r1 = r0 + segments
        for j in range(segments):
            jn = (j + 1) % segments
            faces.append((r0 + j, r0 + jn, r1 + jn))
            faces.append((r0 + j, r1 + jn, r1 + j))
    return np.array(verts), np.array(faces, dtype=np.int64)


_REST_WRIST = np.array([0.0, -50.0, 0.0])
_MCP_BASES = {
    "thumb": np.array([-38.0, -8.0, 0.0]),
    "index": np.array([-22.0, 32.0, 0.0]),
    "middle": np.array([-7.0, 36.0, 0.0]),
    "ring": np.array([9.0, 33.0, 0.0]),
    "pinky": np.array([25.0, 27.0, 0.0]),
}
_FINGER_DIRS = {
    "thumb": _unit([-0.62, 0.78, 0.0]),
    "index": _unit([-0.09, 1.0, 0.0]),
    "middle": np.array([0.0, 1.0, 0.0]),
    "ring": _unit([0.09, 1.0, 0.0]),
    "pinky": _unit([0.22, 0.97, 0.0]),
}
_BONE_LENGTHS = {  # proximal, intermediate, distal
    "thumb": (34.0, 25.0, 26.0),
    "index": (40.0, 24.0, 22.0),
    "middle": (44.0, 27.0, 23.0),
    "ring": (40.0, 25.0, 22.0),
    "pinky": (31.0, 20.0, 19.0),
}
_FINGER_RADII = {  # metacarpal, proximal, intermediate, distal capsule radii
    "thumb": (12.0, 9.0, 8.0, 7.0),
    "index": (11.0, 7.5, 6.5, 5.5),
    "middle": (11.0, 7.5, 6.5, 5.5),
    "ring": (11.0, 7.2, 6.2, 5.2),
    "pinky": (10.0, 6.5, 5.8, 5.0),
}
# tessellation densities chosen so the total vertex count is exactly 1193:
# 20 finger capsules * 42 + palm 211 + forearm 142
_FINGER_TESS = (10, 4)
_PALM_TESS = (11, 19)
_FOREARM_TESS = (14, 10)


@lru_cache(maxsize=1)
def default_hand_model() -> HandModel:
    """Build the fixed rest-pose hand (deterministic, cached)."""
    rest = np.zeros((JOINT_COUNT, 3))
    parents = np.full(JOINT_COUNT, -1, dtype=np.int64)
    rest[WRIST] = _REST_WRIST
    flex_axes = np.zeros((5, 3))
    for f, name in enumerate(FINGERS):
        m = 1 + 4 * f
        d = _FINGER_DIRS[name]
        l1, l2, l3 = _BONE_LENGTHS[name]
        rest[m] = _MCP_BASES[name]
        rest[m + 1] = rest[m] + l1 * d
        rest[m + 2] = rest[m + 1] + l2 * d
        rest[m + 3] = rest[m + 2] + l3 * d
        parents[m] = WRIST
        parents[m + 1] = m
        parents[m + 2] = m + 1
        parents[m + 3] = m + 2
        flex_axes[f] = _unit(np.cross(_PALM_NORMAL, d))

    all_verts, all_faces, bone_ids = [], [], []

    def add_capsule(a, b, radius, tess, bone, flatten=(1.0, 1.0)):
        v, fc = _capsule(a, b, radius, tess[0], tess[1], flatten)
        offset = sum(len(x) for x in all_verts)
        all_verts.append(v)
        all_faces.append(fc + offset)
        bone_ids.append(np.full(len(v), bone, dtype=np.int64))

    add_capsule(rest[WRIST] + [0.0, -45.0, 0.0], rest[WRIST], 16.0, _FOREARM_TESS, 0, flatten=(1.0, 0.6))
    add_capsule(rest[WRIST] + [0.0, 8.0, 0.0], [0.0, 28.0, 0.0], 30.0, _PALM_TESS, 0, flatten=(1.0, 0.45))
    for f, name in enumerate(FINGERS):
        m = 1 + 4 * f
        radii = _FINGER_RADII[name]
        add_capsule(rest[WRIST], rest[m], radii[0], _FINGER_TESS, m, flatten=(1.0, 0.7))
        add_capsule(rest[m], rest[m + 1], radii[1], _FINGER_TESS, m + 1)
        add_capsule(rest[m + 1], rest[m + 2], radii[2], _FINGER_TESS, m + 2)
        add_capsule(rest[m + 2], rest[m + 3], radii[3], _FINGER_TESS, m + 3)

    template = Mesh(np.concatenate(all_verts), np.concatenate(all_faces))
    return HandModel(rest, parents, template, np.concatenate(bone_ids), flex_axes)


def pose_hand(model: HandModel, params: PoseParams) -> tuple[Mesh, JointSet]:
    """Forward kinematics plus rigid nearest-bone skinning.

    Bone lengths are preserved exactly (rigid transforms only); the rest pose
    reproduces the template.
    """
    rest = model.rest_joints
    root_rot = _euler_xyz(params.root_rotation)
    posed = np.zeros_like(rest)
    rot_at = np.zeros((JOINT_COUNT, 3, 3))
    posed[WRIST] = rest[WRIST] + params.root_translation
    rot_at[WRIST] = root_rot

    for f in range(5):
        m = 1 + 4 * f
        axis = model.flex_axes[f]
        local = {
            m: _axis_angle(_PALM_NORMAL, params.mcp_abduct[f]) @ _axis_angle(axis, params.mcp_flex[f]),
            m + 1: _axis_angle(axis, params.pip_flex[f]),
            m + 2: _axis_angle(axis, params.dip_flex[f]),
            m + 3: np.eye(3),
        }
        for j in (m, m + 1, m + 2, m + 3):
            parent = model.parents[j]
            posed[j] = posed[parent] + rot_at[parent] @ (rest[j] - rest[parent])
            rot_at[j] = rot_at[parent] @ local[j]

    verts = np.empty_like(model.template.vertices)
    anchors = np.where(model.vertex_bone == 0, 0, model.parents[model.vertex_bone])
    for joint in np.unique(anchors):
        mask = anchors == joint
        verts[mask] = posed[joint] + (model.template.vertices[mask] - rest[joint]) @ rot_at[joint].T
    return model.template.with_vertices(verts), JointSet(posed)


def palm_center(joints) -> np.ndarray:
    """Average of the five metacarpal joints and the wrist."""
    pts = np.asarray(joints.joints if hasattr(joints, "joints") else joints, dtype=np.float64)
    if pts.shape[0] < JOINT_COUNT:
        raise ValueError(f"need the {JOINT_COUNT}-joint convention to locate the palm center")
    return pts[[WRIST, *METACARPALS]].mean(axis=0)


def joints_with_palm_center(joints: JointSet) -> JointSet:
    """22-joint export: the 21 skeleton joints plus the palm center."""
    return JointSet(np.vstack([joints.joints, palm_center(joints)]))


def render_depth(
    mesh: Mesh,
    intrinsics: CameraIntrinsics,
    size: int | tuple[int, int],
    sample_spacing: float = 2.0,
) -> DepthMap:
    """Z-buffer point-splat render of surface samples; empty pixels read 0.

    Triangles are covered with a barycentric sample grid at roughly
    `sample_spacing` mm; the nearest sample wins per pixel. The whole mesh
    must lie in front of the camera (z > 0).
    """
    width, height = (size, size) if isinstance(size, int) else size
    if mesh.num_vertices and mesh.vertices[:, 2].min() <= 0:
        raise ValueError("mesh must lie entirely in front of the camera (z > 0)")

    samples = [mesh.vertices]
    v = mesh.vertices
    for tri in mesh.faces:
        a, b, c = v[tri[0]], v[tri[1]], v[tri[2]]
        edge = max(np.linalg.norm(b - a), np.linalg.norm(c - a), np.linalg.norm(c - b))
        n = max(int(np.ceil(edge / sample_spacing)), 1)
        i, j = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
        keep = (i + j) <= n
        bi, bj = i[keep] / n, j[keep] / n
        samples.append(a + bi[:, None] * (b - a) + bj[:, None] * (c - a))
    pts = np.concatenate(samples) if samples else np.zeros((0, 3))

    depth = np.zeros((height, width))
    if len(pts):
        z = pts[:, 2]
        u = np.rint(intrinsics.fx * pts[:, 0] / z + intrinsics.cx).astype(np.int64)
        vv = np.rint(intrinsics.fy * pts[:, 1] / z + intrinsics.cy).astype(np.int64)
        ok = (u >= 0) & (u < width) & (vv >= 0) & (vv < height)
        buf = np.full((height, width), np.inf)
        np.minimum.at(buf, (vv[ok], u[ok]), z[ok])
        hit = np.isfinite(buf)
        depth[hit] = buf[hit]
    return DepthMap(depth)
