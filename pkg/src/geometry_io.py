"""
Point cloud and mesh I/O, plus normalization into the canonical domain.

Point clouds are read from ASCII ``.xyz`` (optionally with normals) and
ASCII PLY 1.0 vertices. Meshes are read with trimesh from ``.obj`` and PLY
and written back as ASCII.
"""

import logging
import os
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import trimesh

from src.errors import (
    DegenerateExtentError,
    EmptyInputError,
    MeshReadError,
    MPFError,
    PointCloudParseError,
    UnsupportedFormatError,
)

logger = logging.getLogger(__name__)

# Largest half-extent after normalization; leaves room in [-1, 1]^3 for
# far-field samples.
NORMALIZED_HALF_EXTENT = 0.9

FLOAT_FORMAT = "{:.9g}"

POINT_FORMATS = ("xyz", "ply")
MESH_FORMATS = ("obj", "ply")


@dataclass
class PointCloud:
    """Sample positions with optional unit (unoriented) normals."""

    points: np.ndarray
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.normals is not None:
            self.normals = np.asarray(
                self.normals, dtype=np.float64
            ).reshape(-1, 3)
            if len(self.normals) != len(self.points):
                raise MPFError(
                    f"normal count {len(self.normals)} does not match "
                    f"point count {len(self.points)}"
                )

    @property
    def count(self) -> int:
        return len(self.points)

    @property
    def has_normals(self) -> bool:
        return self.normals is not None


@dataclass(frozen=True)
class Transform:
    """
    Uniform scale plus translation: ``normalized = scale * raw + translation``.
    """

    scale: float
    translation: Tuple[float, float, float]

    @classmethod
    def identity(cls) -> "Transform":
        return cls(1.0, (0.0, 0.0, 0.0))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) * self.scale + np.asarray(
            self.translation
        )

    def invert(self, points: np.ndarray) -> np.ndarray:
        return (
            np.asarray(points, dtype=np.float64) - np.asarray(self.translation)
        ) / self.scale

    def to_dict(self) -> dict:
        return {"scale": self.scale, "translation": list(self.translation)}

    @classmethod
    def from_dict(cls, data: dict) -> "Transform":
        return cls(float(data["scale"]),
                   tuple(float(v) for v in data["translation"]))


@dataclass
class TriangleMesh:
    """Vertex positions and triangle index triples."""

    vertices: np.ndarray = field(
        default_factory=lambda: np.zeros((0, 3), dtype=np.float64)
    )
    triangles: np.ndarray = field(
        default_factory=lambda: np.zeros((0, 3), dtype=np.int64)
    )

    def __post_init__(self):
        self.vertices = np.asarray(
            self.vertices, dtype=np.float64
        ).reshape(-1, 3)
        self.triangles = np.asarray(
            self.triangles, dtype=np.int64
        ).reshape(-1, 3)

    @property
    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    def validate(self) -> None:
        """
        Check the mesh invariants.

        Raises:
            MPFError: On out-of-range indices, non-finite coordinates or
                triangles with repeated indices
        """
        if not np.all(np.isfinite(self.vertices)):
            raise MPFError("mesh has non-finite vertex coordinates")
        if len(self.triangles) == 0:
            return
        if self.triangles.min() < 0 or \
                self.triangles.max() >= len(self.vertices):
            raise MPFError("mesh triangle index out of range")
        t = self.triangles
        repeated = (t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | \
            (t[:, 0] == t[:, 2])
        if repeated.any():
            raise MPFError(
                f"{int(repeated.sum())} degenerate triangles with repeated "
                f"indices"
            )


def _infer_format(path: str, allowed: Tuple[str, ...]) -> str:
    ext = os.path.splitext(path)[1].lower().lstrip(".")
    if ext not in allowed:
        raise UnsupportedFormatError(
            f"cannot infer format of '{path}' (expected one of {allowed})"
        )
    return ext


def _unit_normals(normals: np.ndarray, path: str,
                  lines: List[int]) -> np.ndarray:
    lengths = np.linalg.norm(normals, axis=1)
    bad = np.flatnonzero(lengths == 0)
    if len(bad):
        raise PointCloudParseError(path, lines[bad[0]], "zero-length normal")
    return normals / lengths[:, None]


def _parse_xyz(path: str) -> PointCloud:
    rows: List[List[float]] = []
    line_numbers: List[int] = []
    width = None
    with open(path, "r") as f:
        for lineno, raw in enumerate(f, start=1):
            text = raw.strip()
            if not text or text.startswith("#"):
                continue
            tokens = text.replace(",", " ").split()
            if len(tokens) not in (3, 6):
                raise PointCloudParseError(
                    path, lineno,
                    f"expected 3 or 6 values, got {len(tokens)}"
                )
            if width is None:
                width = len(tokens)
            elif len(tokens) != width:
                raise PointCloudParseError(
                    path, lineno,
                    f"expected {width} values like the first record, "
                    f"got {len(tokens)}"
                )
            try:
                values = [float(tok) for tok in tokens]
            except ValueError:
                raise PointCloudParseError(
                    path, lineno, f"non-numeric token in '{text}'"
                ) from None
            if not all(np.isfinite(values)):
                raise PointCloudParseError(path, lineno, "non-finite value")
            rows.append(values)
            line_numbers.append(lineno)

    if not rows:
        raise EmptyInputError(f"{path}: no points found")

    data = np.array(rows, dtype=np.float64)
    normals = None
    if width == 6:
        normals = _unit_normals(data[:, 3:6], path, line_numbers)
    return PointCloud(data[:, :3], normals)


def _read_ply(path: str):
    """
    Parse the vertex element of an ASCII PLY file; other elements are
    skipped.

    Returns:
        Tuple of (vertex property names, vertex rows, line number of each
        vertex row)
    """
    with open(path, "r") as f:
        lines = f.read().splitlines()

    if not lines or lines[0].strip() != "ply":
        raise PointCloudParseError(path, 1, "missing 'ply' magic")

    elements = []  # (name, count, [property names])
    lineno = 1
    header_end = None
    for lineno in range(2, len(lines) + 1):
        tokens = lines[lineno - 1].split()
        if not tokens or tokens[0] in ("comment", "obj_info"):
            continue
        if tokens[0] == "format":
            if len(tokens) < 2 or tokens[1] != "ascii":
                raise PointCloudParseError(
                    path, lineno, "only ascii PLY is supported"
                )
        elif tokens[0] == "element":
            if len(tokens) != 3:
                raise PointCloudParseError(path, lineno, "bad element line")
            try:
                count = int(tokens[2])
            except ValueError:
                raise PointCloudParseError(
                    path, lineno, "bad element count"
                ) from None
            elements.append((tokens[1], count, []))
        elif tokens[0] == "property":
            if not elements:
                raise PointCloudParseError(
                    path, lineno, "property before element"
                )
            elements[-1][2].append(tokens[-1])
        elif tokens[0] == "end_header":
            header_end = lineno
            break
        else:
            raise PointCloudParseError(
                path, lineno, f"unexpected header keyword '{tokens[0]}'"
            )
    if header_end is None:
        raise PointCloudParseError(path, lineno, "missing end_header")

    names: List[str] = []
    vertices: List[List[float]] = []
    vertex_lines: List[int] = []
    cursor = header_end
    for name, count, props in elements:
        for _ in range(count):
            cursor += 1
            if cursor > len(lines):
                raise PointCloudParseError(
                    path, cursor, f"unexpected end of file in '{name}'"
                )
            if name != "vertex":
                continue
            tokens = lines[cursor - 1].split()
            if len(tokens) != len(props):
                raise PointCloudParseError(
                    path, cursor,
                    f"expected {len(props)} values, got {len(tokens)}",
                )
            try:
                vertices.append([float(tok) for tok in tokens])
            except ValueError as exc:
                raise PointCloudParseError(path, cursor, str(exc)) from None
            vertex_lines.append(cursor)
        if name == "vertex":
            names = props
    return names, vertices, vertex_lines


def _parse_ply_points(path: str) -> PointCloud:
    names, vertices, vertex_lines = _read_ply(path)
    if not vertices:
        raise EmptyInputError(f"{path}: no vertices found")
    for axis in ("x", "y", "z"):
        if axis not in names:
            raise PointCloudParseError(
                path, 1, f"vertex element lacks property '{axis}'"
            )
    data = np.array(vertices, dtype=np.float64)
    points = data[:, [names.index(a) for a in ("x", "y", "z")]]
    normals = None
    if all(n in names for n in ("nx", "ny", "nz")):
        normals = data[:, [names.index(a) for a in ("nx", "ny", "nz")]]
        normals = _unit_normals(normals, path, vertex_lines)
    return PointCloud(points, normals)


def load_points(path: str, fmt: Optional[str] = None) -> PointCloud:
    """
    Load a raw (un-normalized) point cloud.

    Args:
        path: File to read
        fmt: 'xyz' or 'ply'; inferred from the extension when omitted

    Returns:
        PointCloud in input units, with normals when the file carries them

    Raises:
        PointCloudParseError: On a malformed record (carries the line number)
        EmptyInputError: When the file holds no points
    """
    fmt = fmt or _infer_format(path, POINT_FORMATS)
    if fmt not in POINT_FORMATS:
        raise UnsupportedFormatError(f"unsupported point format '{fmt}'")
    if not os.path.exists(path):
        raise FileNotFoundError(f"input not found: {path}")

    cloud = _parse_xyz(path) if fmt == "xyz" else _parse_ply_points(path)
    logger.info("Loaded %d points from %s (normals: %s)",
                cloud.count, path, cloud.has_normals)
    return cloud


def load_mesh(path: str, fmt: Optional[str] = None) -> TriangleMesh:
    """
    Load an obj or PLY triangle mesh with trimesh.

    Polygons are triangulated by the reader. Multi-object files are
    concatenated into one mesh; files without faces give an empty mesh.

    Args:
        path: File to read
        fmt: 'obj' or 'ply'; inferred from the extension when omitted

    Returns:
        TriangleMesh with 0-based indices

    Raises:
        MeshReadError: When trimesh cannot read the file
    """
    fmt = fmt or _infer_format(path, MESH_FORMATS)
    if fmt not in MESH_FORMATS:
        raise UnsupportedFormatError(f"unsupported mesh format '{fmt}'")
    if not os.path.exists(path):
        raise FileNotFoundError(f"input not found: {path}")

    try:
        loaded = trimesh.load(path, file_type=fmt, process=False)
    except Exception as exc:
        raise MeshReadError(f"{path}: {exc}") from exc

    if isinstance(loaded, trimesh.Scene):
        meshes = [
            g for g in loaded.geometry.values()
            if isinstance(g, trimesh.Trimesh)
        ]
        loaded = trimesh.util.concatenate(meshes) if meshes \
            else trimesh.Trimesh()
    faces = getattr(loaded, "faces", None)
    mesh = TriangleMesh(
        np.asarray(loaded.vertices, dtype=np.float64),
        np.zeros((0, 3)) if faces is None else np.asarray(faces),
    )
    mesh.validate()
    logger.info("Loaded mesh with %d vertices / %d triangles from %s",
                len(mesh.vertices), len(mesh.triangles), path)
    return mesh


def normalize(cloud: PointCloud) -> Tuple[PointCloud, Transform]:
    """
    Map a raw cloud into the canonical domain.

    The bounding-box center goes to the origin and the largest half-extent
    to NORMALIZED_HALF_EXTENT, with one isotropic scale for all axes.

    Args:
        cloud: Raw point cloud

    Returns:
        Tuple of (normalized cloud, transform that produced it)

    Raises:
        EmptyInputError: When the cloud is empty
        DegenerateExtentError: When all points coincide
    """
    if cloud.count == 0:
        raise EmptyInputError("cannot normalize an empty point cloud")

    lo = cloud.points.min(axis=0)
    hi = cloud.points.max(axis=0)
    center = (lo + hi) / 2.0
    half_extent = float(np.max(hi - lo)) / 2.0
    if half_extent <= 0.0:
        raise DegenerateExtentError(
            f"all {cloud.count} points coincide at {center.tolist()}"
        )

    scale = NORMALIZED_HALF_EXTENT / half_extent
    transform = Transform(scale, tuple(float(v) for v in -center * scale))
    normalized = PointCloud(transform.apply(cloud.points), cloud.normals)
    logger.debug("Normalized %d points: scale=%.6g translation=%s",
                 cloud.count, scale, transform.translation)
    return normalized, transform


def denormalize_mesh(mesh: TriangleMesh, t: Transform) -> TriangleMesh:
    """
    Map mesh vertices from the canonical domain back to raw units.

    Args:
        mesh: Mesh in normalized coordinates
        t: Transform returned by normalize

    Returns:
        New mesh with identical triangles
    """
    return TriangleMesh(t.invert(mesh.vertices), mesh.triangles.copy())


def _format_row(prefix: str, values) -> str:
    body = " ".join(FLOAT_FORMAT.format(float(v)) for v in values)
    return f"{prefix} {body}\n" if prefix else f"{body}\n"


def write_mesh(path: str, mesh: TriangleMesh, fmt: Optional[str] = None):
    """
    Write a mesh as ASCII obj or PLY with 9 significant digits.

    Args:
        path: Destination file
        mesh: Mesh to write
        fmt: 'obj' or 'ply'; inferred from the extension when omitted
    """
    fmt = fmt or _infer_format(path, MESH_FORMATS)
    parts: List[str] = []
    if fmt == "obj":
        parts.extend(_format_row("v", v) for v in mesh.vertices)
        parts.extend(
            f"f {a + 1} {b + 1} {c + 1}\n" for a, b, c in mesh.triangles
        )
    elif fmt == "ply":
        parts.append(
            "ply\nformat ascii 1.0\n"
            f"element vertex {len(mesh.vertices)}\n"
            "property double x\nproperty double y\nproperty double z\n"
            f"element face {len(mesh.triangles)}\n"
            "property list uchar int vertex_indices\nend_header\n"
        )
        parts.extend(_format_row("", v) for v in mesh.vertices)
        parts.extend(f"3 {a} {b} {c}\n" for a, b, c in mesh.triangles)
    else:
        raise UnsupportedFormatError(f"unsupported mesh format '{fmt}'")

    with open(path, "w", newline="\n") as f:
        f.write("".join(parts))
    logger.info("Wrote mesh with %d vertices / %d triangles to %s",
                len(mesh.vertices), len(mesh.triangles), path)


def write_points(path: str, cloud: PointCloud):
    """
    Write a point cloud as ``.xyz`` (six columns when normals are present).

    Args:
        path: Destination file
        cloud: Cloud to write
    """
    data = cloud.points
    if cloud.has_normals:
        data = np.hstack([cloud.points, cloud.normals])
    with open(path, "w", newline="\n") as f:
        f.write("".join(_format_row("", row) for row in data))
