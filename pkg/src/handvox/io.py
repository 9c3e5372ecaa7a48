"""Bit-exact readers and writers for all on-disk formats.

Binary grid formats are little-endian with a fixed header:

* VGRD: magic "VGRD", u16 version=1, u32 Dx Dy Dz, f32 origin xyz,
  f32 voxel_size, u8 kind (0 occupancy / 1 probability), then the payload
  (u8 per voxel for occupancy, f32 for probability), x fastest.
* VDSP: same header with magic "VDSP" and kind byte 2, payload 3 x f32
  per voxel.
* Heatmap stacks: u32 map count, f32 sigma, then that many VGRD blocks.

Meshes are Wavefront OBJ (v/f records only, 1-based indices on disk), depth
maps are 16-bit big-endian binary PGM (value = millimeters), and point sets
are JSON arrays of [x, y, z]. Every reader raises FormatError with a
position diagnostic on malformed input; truncated input never crashes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .heatmap import HeatmapStack, JointSet
from .registration import DisplacementField
from .voxgrid import DepthMap, GridKind, Mesh, VoxelGrid

GRID_MAGIC = b"VGRD"
FIELD_MAGIC = b"VDSP"
FORMAT_VERSION = 1
MAX_GRID_DIM = 512
_FIELD_KIND = 2


class FormatError(ValueError):
    """Malformed or truncated on-disk data."""


class _Cursor:
    """Sequential byte reader that reports offsets on underflow."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(
                f"truncated input: needed {n} byte(s) for {what} at offset {self.pos}, "
                f"have {len(self.data) - self.pos}"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def expect_end(self):
        if self.pos != len(self.data):
            raise FormatError(f"{len(self.data) - self.pos} unexpected trailing byte(s) at offset {self.pos}")


def _read_grid_header(cur: _Cursor, magic: bytes):
    got = cur.take(4, "magic")
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")
    (version,) = cur.unpack("<H", "version")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")
    dims = cur.unpack("<3I", "grid dimensions")
    if min(dims) < 1 or max(dims) > MAX_GRID_DIM:
        raise FormatError(f"grid dimensions {dims} outside [1, {MAX_GRID_DIM}]")
    origin = np.array(cur.unpack("<3f", "origin"), dtype=np.float64)
    (voxel_size,) = cur.unpack("<f", "voxel size")
    if not (np.isfinite(voxel_size) and voxel_size > 0):
        raise FormatError(f"invalid voxel size {voxel_size}")
    (kind,) = cur.unpack("<B", "kind byte")
    return dims, origin, voxel_size, kind


def _grid_from_cursor(cur: _Cursor) -> VoxelGrid:
    dims, origin, voxel_size, kind = _read_grid_header(cur, GRID_MAGIC)
    count = dims[0] * dims[1] * dims[2]
    if kind == GridKind.OCCUPANCY:
        raw = np.frombuffer(cur.take(count, "occupancy payload"), dtype=np.uint8)
        if raw.size and not np.isin(np.unique(raw), (0, 1)).all():
            raise FormatError("occupancy payload contains bytes other than 0/1")
        data = raw
    elif kind == GridKind.PROBABILITY:
        raw = np.frombuffer(cur.take(4 * count, "probability payload"), dtype="<f4")
        if raw.size and (not np.all(np.isfinite(raw)) or raw.min() < 0 or raw.max() > 1):
            raise FormatError("probability payload outside [0, 1]")
        data = raw
    else:
        raise FormatError(f"unknown grid kind byte {kind}")
    # payload is x fastest: Fortran order over an [x, y, z]-indexed array
    return VoxelGrid(data.reshape(dims, order="F"), origin, voxel_size, GridKind(kind))


def read_grid(data: bytes) -> VoxelGrid:
    cur = _Cursor(data)
    grid = _grid_from_cursor(cur)
    cur.expect_end()
    return grid


def write_grid(grid: VoxelGrid) -> bytes:
    head = struct.pack(
        "<4sH3I3ffB",
        GRID_MAGIC,
        FORMAT_VERSION,
        *grid.dims,
        *np.asarray(grid.origin, dtype=np.float32),
        np.float32(grid.voxel_size),
        int(grid.kind),
    )
    if grid.kind == GridKind.OCCUPANCY:
        payload = grid.data.ravel(order="F").astype(np.uint8).tobytes()
    else:
        payload = grid.data.ravel(order="F").astype("<f4").tobytes()
    return head + payload


def read_dispfield(data: bytes) -> DisplacementField:
    cur = _Cursor(data)
    dims, origin, voxel_size, kind = _read_grid_header(cur, FIELD_MAGIC)
    if kind != _FIELD_KIND:
        raise FormatError(f"displacement field kind byte must be {_FIELD_KIND}, got {kind}")
    if not dims[0] == dims[1] == dims[2]:
        raise FormatError(f"displacement field must be cubic, got {dims}")
    count = dims[0] * dims[1] * dims[2]
    raw = np.frombuffer(cur.take(12 * count, "vector payload"), dtype="<f4")
    if not np.all(np.isfinite(raw)):
        raise FormatError("vector payload contains non-finite values")
    cur.expect_end()
    # one (dx, dy, dz) triple per voxel, voxels x fastest
    vectors = raw.reshape(dims[2], dims[1], dims[0], 3).transpose(2, 1, 0, 3)
    return DisplacementField(vectors, origin, voxel_size)


def write_dispfield(field: DisplacementField) -> bytes:
    dim = field.dim
    head = struct.pack(
        "<4sH3I3ffB",
        FIELD_MAGIC,
        FORMAT_VERSION,
        dim,
        dim,
        dim,
        *np.asarray(field.origin, dtype=np.float32),
        np.float32(field.voxel_size),
        _FIELD_KIND,
    )
    flat = field.vectors.transpose(2, 1, 0, 3).reshape(dim**3, 3)
    return head + flat.astype("<f4").tobytes()


def read_heatmaps(data: bytes) -> HeatmapStack:
    cur = _Cursor(data)
    (count,) = cur.unpack("<I", "map count")
    if count < 1 or count > 4096:
        raise FormatError(f"implausible heatmap count {count}")
    (sigma,) = cur.unpack("<f", "sigma")
    if not (np.isfinite(sigma) and sigma > 0):
        raise FormatError(f"invalid sigma {sigma}")
    maps = tuple(_grid_from_cursor(cur) for _ in range(count))
    cur.expect_end()
    try:
        return HeatmapStack(maps, sigma)
    except ValueError as exc:
        raise FormatError(f"inconsistent heatmap stack: {exc}") from exc


def write_heatmaps(stack: HeatmapStack) -> bytes:
    head = struct.pack("<If", stack.count, np.float32(stack.sigma))
    return head + b"".join(write_grid(m) for m in stack.maps)


# ---------------------------------------------------------------------------
# text formats


def read_mesh(text) -> Mesh:
    """Parse OBJ v/f records; other record types are ignored."""
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"OBJ is not valid UTF-8: {exc}") from exc
    verts: list = []
    faces: list = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            if len(parts) < 4:
                raise FormatError(f"line {lineno}: vertex record needs 3 coordinates")
            try:
                verts.append([float(x) for x in parts[1:4]])
            except ValueError as exc:
                raise FormatError(f"line {lineno}: bad vertex coordinate ({exc})") from exc
        elif parts[0] == "f":
            if len(parts) != 4:
                raise FormatError(f"line {lineno}: only triangle faces are supported")
            tri = []
            for token in parts[1:]:
                head = token.split("/")[0]
                try:
                    idx = int(head)
                except ValueError as exc:
                    raise FormatError(f"line {lineno}: bad face index {token!r}") from exc
                if idx < 1:
                    raise FormatError(f"line {lineno}: face indices are 1-based, got {idx}")
                tri.append(idx - 1)
            faces.append(tri)
    mx = max((max(t) for t in faces), default=-1)
    if mx >= len(verts):
        raise FormatError(f"face references vertex {mx + 1} but only {len(verts)} vertices exist")
    try:
        return Mesh(np.array(verts, dtype=np.float64).reshape(len(verts), 3), np.array(faces, dtype=np.int64).reshape(len(faces), 3))
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def write_mesh(mesh: Mesh) -> str:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist()]
    return "\n".join(lines) + "\n"


def read_depth(data: bytes) -> DepthMap:
    """Parse a 16-bit binary PGM (big-endian sample order)."""
    cur = _Cursor(data)
    if cur.take(2, "PGM magic") != b"P5":
        raise FormatError("not a binary PGM (magic must be P5)")

    def next_token() -> bytes:
        tok = b""
        while True:
            ch = cur.take(1, "PGM header")
            if ch == b"#":
                while cur.take(1, "PGM comment") not in b"\r\n":
                    pass
                continue
            if ch.isspace():
                if tok:
                    return tok
                continue
            tok += ch

    fields = []
    for name in ("width", "height", "maxval"):
        tok = next_token()
        if not tok.isdigit():
            raise FormatError(f"PGM {name} is not a number: {tok!r}")
        fields.append(int(tok))
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise FormatError(f"PGM size {width}x{height} is empty")
    if not 256 <= maxval <= 65535:
        raise FormatError(f"need a 16-bit PGM (maxval in [256, 65535]), got {maxval}")
    raw = np.frombuffer(cur.take(2 * width * height, "PGM payload"), dtype=">u2")
    cur.expect_end()
    return DepthMap(raw.reshape(height, width).astype(np.float64))


def write_depth(depth_map: DepthMap) -> bytes:
    vals = np.rint(np.clip(depth_map.depth, 0, 65535)).astype(">u2")
    header = f"P5\n{depth_map.width} {depth_map.height}\n65535\n".encode("ascii")
    return header + vals.tobytes()


def read_joints(text) -> JointSet:
    """Parse a JSON array of [x, y, z]; an empty array is a valid empty set."""
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"joints JSON is not valid UTF-8: {exc}") from exc
    try:
        parsed = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"bad joints JSON: {exc}") from exc
    if not isinstance(parsed, list):
        raise FormatError("joints JSON must be an array of [x, y, z]")
    for i, item in enumerate(parsed):
        if not (isinstance(item, list) and len(item) == 3 and all(isinstance(c, (int, float)) for c in item)):
            raise FormatError(f"joints JSON entry {i} is not an [x, y, z] triple")
    try:
        return JointSet(np.array(parsed, dtype=np.float64).reshape(len(parsed), 3))
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def write_joints(joints: JointSet) -> str:
    return json.dumps([[float(c) for c in row] for row in joints.joints]) + "\n"


# ---------------------------------------------------------------------------
# path helpers


def load_grid(path) -> VoxelGrid:
    return read_grid(_read_bytes(path))


def save_grid(path, grid: VoxelGrid):
    _write_bytes(path, write_grid(grid))


def load_dispfield(path) -> DisplacementField:
    return read_dispfield(_read_bytes(path))


def save_dispfield(path, field: DisplacementField):
    _write_bytes(path, write_dispfield(field))


def load_heatmaps(path) -> HeatmapStack:
    return read_heatmaps(_read_bytes(path))


def save_heatmaps(path, stack: HeatmapStack):
    _write_bytes(path, write_heatmaps(stack))


def load_mesh(path) -> Mesh:
    return read_mesh(_read_bytes(path))


def save_mesh(path, mesh: Mesh):
    _write_bytes(path, write_mesh(mesh).encode("ascii"))


def load_depth(path) -> DepthMap:
    return read_depth(_read_bytes(path))


def save_depth(path, depth_map: DepthMap):
    _write_bytes(path, write_depth(depth_map))


def load_joints(path) -> JointSet:
    return read_joints(_read_bytes(path))


def save_joints(path, joints: JointSet):
    _write_bytes(path, write_joints(joints).encode("ascii"))


def _read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def _write_bytes(path, data: bytes):
    with open(path, "wb") as fh:
        fh.write(data)
