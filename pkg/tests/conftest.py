import numpy as np
import pytest

from handvox.voxgrid import CubeFrame, Mesh
from handvox.synthhand import default_hand_model, palm_center, pose_hand, sample_pose


def icosphere(radius=50.0, center=(0.0, 0.0, 0.0), subdivisions=1) -> Mesh:
    """Subdivided icosahedron, vertices projected onto the sphere."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
            (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
            (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
        ],
        dtype=np.float64,
    )
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [v / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}
        new_faces = []

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    pts = np.array(verts) * radius + np.asarray(center, dtype=np.float64)
    return Mesh(pts, np.array(faces, dtype=np.int64))


def vertex_normals(mesh: Mesh) -> np.ndarray:
    """Area-weighted vertex normals."""
    v, f = mesh.vertices, mesh.faces
    fn = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    n = np.zeros_like(v)
    for k in range(3):
        np.add.at(n, f[:, k], fn)
    lens = np.linalg.norm(n, axis=1, keepdims=True)
    lens[lens == 0] = 1.0
    return n / lens


def perturb_surface(mesh: Mesh, seed: int, mean_amplitude=8.0, deflate_cap=4.0) -> Mesh:
    """Smooth normal-direction perturbation with exact mean |amplitude|.

    Inward motion is bounded by deflate_cap so thin tubes never evert
    (an everted surface carries no recoverable shape information).
    """
    rng = np.random.default_rng(seed)
    v = mesh.vertices
    raw = np.zeros(len(v))
    for _ in range(3):
        k = rng.normal(size=3)
        k /= np.linalg.norm(k)
        freq = rng.uniform(0.015, 0.035)  # wavelengths ~180-420mm: smooth at hand scale
        raw += rng.normal() * np.sin(freq * (v @ k) + rng.uniform(0, 2 * np.pi))
    g = raw / np.abs(raw).max()
    lo, hi = 0.0, 10.0 * mean_amplitude
    for _ in range(60):
        c = 0.5 * (lo + hi)
        if np.abs(c * (g + 1.0) - deflate_cap).mean() < mean_amplitude:
            lo = c
        else:
            hi = c
    amp = c * (g + 1.0) - deflate_cap
    return mesh.with_vertices(v + amp[:, None] * vertex_normals(mesh))


def noisy_sphere(seed: int, radius=40.0, noise=3.0) -> Mesh:
    base = icosphere(radius=radius, subdivisions=2)
    rng = np.random.default_rng(seed)
    return base.with_vertices(base.vertices + rng.normal(scale=noise, size=base.vertices.shape))


def posed_hand(pose_seed: int):
    """(mesh, joints, palm-centered frame) for one sampled pose."""
    mesh, joints = pose_hand(default_hand_model(), sample_pose(pose_seed))
    return mesh, joints, CubeFrame(palm_center(joints))


@pytest.fixture(scope="session")
def hand_model():
    return default_hand_model()


@pytest.fixture(scope="session")
def rest_hand(hand_model):
    mesh, joints = pose_hand(hand_model, sample_pose(0))
    return mesh, joints, CubeFrame(palm_center(joints))
