"""
Dense-grid evaluation, zero-level mesh extraction, slices and probes.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple, Union

import matplotlib
matplotlib.use('Agg')
from matplotlib import colormaps  # noqa: E402
from matplotlib.colors import Normalize  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from skimage import measure  # noqa: E402

from src.field import MetricPhaseField  # noqa: E402
from src.geometry_io import TriangleMesh  # noqa: E402
from src.spatial import DOMAIN_HIGH, DOMAIN_LOW  # noqa: E402

logger = logging.getLogger(__name__)

AXES = {"x": 0, "y": 1, "z": 2}
SLICE_COLORMAP = "RdBu_r"
CONTOUR_RGB = (0, 0, 0)

Resolution = Union[int, Sequence[int]]


def _resolution(res: Resolution) -> Tuple[int, int, int]:
    dims = (res,) * 3 if np.isscalar(res) else tuple(res)
    if len(dims) != 3 or any(int(n) < 2 for n in dims):
        raise ValueError(f"grid resolution must be >= 2 per axis, got {res}")
    return tuple(int(n) for n in dims)


@dataclass
class ScalarGrid:
    """
    Field samples at the corners of a regular grid over the domain box.

    ``values[i, j, k]`` sits at ``origin + (i, j, k) * spacing``; flattening
    in C order therefore runs z fastest.
    """

    values: np.ndarray
    origin: np.ndarray
    spacing: np.ndarray

    @property
    def resolution(self) -> Tuple[int, int, int]:
        return tuple(self.values.shape)

    def axis_coordinates(self, axis: int) -> np.ndarray:
        n = self.values.shape[axis]
        return self.origin[axis] + np.arange(n) * self.spacing[axis]

    def points(self) -> np.ndarray:
        return grid_points(self.resolution)

    @classmethod
    def from_function(cls, fn: Callable[[np.ndarray], np.ndarray],
                      res: Resolution) -> "ScalarGrid":
        """Sample an arbitrary vectorized function of (N, 3) points."""
        dims = _resolution(res)
        values = np.asarray(fn(grid_points(dims)), dtype=np.float64)
        return cls(values.reshape(dims), *_grid_frame(dims))


def _grid_frame(dims: Tuple[int, int, int]):
    origin = np.full(3, DOMAIN_LOW)
    spacing = np.array([(DOMAIN_HIGH - DOMAIN_LOW) / (n - 1) for n in dims])
    return origin, spacing


def grid_points(res: Resolution) -> np.ndarray:
    """Corner positions of the grid, z fastest."""
    dims = _resolution(res)
    axes = [np.linspace(DOMAIN_LOW, DOMAIN_HIGH, n) for n in dims]
    xx, yy, zz = np.meshgrid(*axes, indexing="ij")
    return np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=1)


def evaluate_grid(field: MetricPhaseField, res: Resolution = 128,
                  which: str = "phi") -> ScalarGrid:
    """
    Evaluate phi, r or theta at every grid corner.

    The grid is filled one x-slab at a time, so only ``ny * nz`` query
    points exist at once.

    Args:
        field: Trained field
        res: Points per axis (int or 3-tuple, each >= 2)
        which: 'phi', 'r' or 'theta'

    Returns:
        ScalarGrid
    """
    dims = _resolution(res)
    xs, ys, zs = (np.linspace(DOMAIN_LOW, DOMAIN_HIGH, n) for n in dims)
    yy, zz = np.meshgrid(ys, zs, indexing="ij")
    slab = np.stack([np.empty(yy.size), yy.ravel(), zz.ravel()], axis=1)
    values = np.empty(dims)
    for i, x in enumerate(xs):
        slab[:, 0] = x
        values[i] = field.values(slab, which=which).reshape(dims[1:])
    logger.info("Evaluated %s on a %dx%dx%d grid", which, *dims)
    return ScalarGrid(values, *_grid_frame(dims))


def _refine_on_edges(verts: np.ndarray, values: np.ndarray,
                     iso: float) -> np.ndarray:
    """
    Recompute edge crossings in float64 from the grid values.

    skimage reports vertices in single precision; each lies on one grid
    edge, found as its most fractional index coordinate.
    """
    verts = np.asarray(verts, dtype=np.float64)
    rows = np.arange(len(verts))
    axis = np.argmax(np.abs(verts - np.round(verts)), axis=1)
    base = np.round(verts).astype(np.int64)
    upper = np.array(values.shape)[axis] - 2
    lo = base.copy()
    lo[rows, axis] = np.clip(np.floor(verts[rows, axis]), 0, upper)
    hi = lo.copy()
    hi[rows, axis] += 1
    v0 = values[tuple(lo.T)]
    v1 = values[tuple(hi.T)]
    denom = v1 - v0
    fallback = verts[rows, axis] - lo[rows, axis]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(denom != 0, (iso - v0) / denom, fallback)
    refined = lo.astype(np.float64)
    refined[rows, axis] += np.clip(t, 0.0, 1.0)
    return refined


def marching_cubes(grid: ScalarGrid, iso: float = 0.0) -> TriangleMesh:
    """
    Extract the iso-surface with the classic 256-case Marching Cubes table.

    Vertices are placed on sign-changing grid edges by linear interpolation.

    Args:
        grid: Sampled field
        iso: Iso-value

    Returns:
        TriangleMesh in grid coordinates; empty when iso is never crossed
    """
    values = grid.values
    if not (values.min() < iso < values.max()):
        logger.info("Iso-value %g not crossed by the grid; empty mesh", iso)
        return TriangleMesh()
    try:
        verts, faces, _, _ = measure.marching_cubes(
            values, level=iso, method="lorensen", allow_degenerate=False,
        )
    except (ValueError, RuntimeError) as exc:
        logger.warning("Marching cubes produced no surface: %s", exc)
        return TriangleMesh()
    index = _refine_on_edges(verts, values, iso)
    mesh = TriangleMesh(grid.origin + index * grid.spacing, faces)
    logger.info("Extracted %d vertices / %d triangles",
                len(mesh.vertices), len(mesh.triangles))
    return mesh


def extract_mesh(field: MetricPhaseField, res: Resolution = 128,
                 which: str = "phi", iso: float = 0.0) -> TriangleMesh:
    return marching_cubes(evaluate_grid(field, res, which), iso)


@dataclass
class SliceImage:
    """
    Field values on an axis-aligned plane.

    Rows run from +1 down to -1 along the second in-plane axis, columns
    from -1 to +1 along the first.
    """

    values: np.ndarray
    axis: str
    offset: float
    which: str = "phi"

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def plane_axes(self) -> Tuple[int, int]:
        a = AXES[self.axis]
        u, v = [i for i in range(3) if i != a]
        return u, v

    def zero_crossings(self) -> np.ndarray:
        """Pixels whose value has the opposite strict sign of a neighbor."""
        s = np.sign(self.values)
        mask = np.zeros(self.values.shape, dtype=bool)
        horizontal = s[:, :-1] * s[:, 1:] < 0
        vertical = s[:-1, :] * s[1:, :] < 0
        mask[:, :-1] |= horizontal
        mask[:, 1:] |= horizontal
        mask[:-1, :] |= vertical
        mask[1:, :] |= vertical
        return mask

    def to_rgb(self, contour: bool = True) -> np.ndarray:
        """
        Diverging color image: warm positive, cool negative, white near 0.

        Returns:
            (height, width, 3) uint8 array
        """
        limit = float(np.max(np.abs(self.values))) or 1.0
        norm = Normalize(vmin=-limit, vmax=limit)
        rgba = colormaps[SLICE_COLORMAP](norm(self.values))
        rgb = np.round(rgba[..., :3] * 255).astype(np.uint8)
        if contour:
            rgb[self.zero_crossings()] = CONTOUR_RGB
        return rgb

    def to_frame(self) -> pd.DataFrame:
        """Long-format table of pixel positions and values."""
        rows, cols = np.indices(self.values.shape)
        coords = slice_points(self.axis, self.offset, self.width)
        return pd.DataFrame({
            "row": rows.ravel(),
            "col": cols.ravel(),
            "x": coords[:, 0],
            "y": coords[:, 1],
            "z": coords[:, 2],
            "value": self.values.ravel(),
        })


def slice_points(axis: str, offset: float, res: int) -> np.ndarray:
    """Pixel centers of a res x res slice, row-major."""
    if axis not in AXES:
        raise ValueError(
            f"slice axis must be one of {tuple(AXES)}, got '{axis}'"
        )
    if not DOMAIN_LOW <= offset <= DOMAIN_HIGH:
        raise ValueError(f"slice offset must lie in [-1, 1], got {offset}")
    if res < 2:
        raise ValueError(f"slice resolution must be >= 2, got {res}")
    a = AXES[axis]
    u, v = [i for i in range(3) if i != a]
    cols = np.linspace(DOMAIN_LOW, DOMAIN_HIGH, res)
    rows = np.linspace(DOMAIN_HIGH, DOMAIN_LOW, res)
    vv, uu = np.meshgrid(rows, cols, indexing="ij")
    points = np.empty((res * res, 3))
    points[:, a] = offset
    points[:, u] = uu.ravel()
    points[:, v] = vv.ravel()
    return points


def render_slice(field: MetricPhaseField, axis: str = "z", offset: float = 0.0,
                 res: int = 256, which: str = "phi") -> SliceImage:
    """
    Evaluate a field on an axis-aligned plane.

    Args:
        field: Trained field
        axis: Plane normal axis, 'x', 'y' or 'z'
        offset: Plane position along the axis, in [-1, 1]
        res: Pixels per side
        which: 'phi', 'r' or 'theta'

    Returns:
        SliceImage
    """
    values = field.values(slice_points(axis, offset, res), which=which)
    return SliceImage(values.reshape(res, res), axis, float(offset), which)


def write_ppm(path: str, rgb: np.ndarray):
    """Write an (H, W, 3) uint8 image as binary PPM (P6)."""
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    height, width = rgb.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{width} {height}\n255\n".encode("ascii"))
        f.write(rgb.tobytes())
    logger.info("Wrote %dx%d slice image to %s", width, height, path)


def read_ppm(path: str) -> np.ndarray:
    """Read a binary PPM written by write_ppm."""
    with open(path, "rb") as f:
        data = f.read()
    header = data.split(b"\n", 3)
    if header[0] != b"P6":
        raise ValueError(f"{path} is not a binary PPM")
    width, height = (int(v) for v in header[1].split())
    pixels = np.frombuffer(header[3], dtype=np.uint8)
    return pixels.reshape(height, width, 3)


def parse_probe(text: str) -> Tuple[np.ndarray, np.ndarray]:
    """
    Parse ``"x0,y0,z0:x1,y1,z1"`` into start and end points.

    Raises:
        ValueError: On malformed input
    """
    try:
        start_text, end_text = text.split(":")
        start = np.array([float(v) for v in start_text.split(",")])
        end = np.array([float(v) for v in end_text.split(",")])
    except ValueError:
        raise ValueError(
            f"probe must look like 'x0,y0,z0:x1,y1,z1', got '{text}'"
        ) from None
    if start.shape != (3,) or end.shape != (3,):
        raise ValueError(f"probe endpoints must be 3-vectors, got '{text}'")
    return start, end


def extract_probe(field: MetricPhaseField, start, end, n: int = 256,
                  which: str = "phi") -> pd.DataFrame:
    """
    Sample a field along the segment from start to end.

    Args:
        field: Trained field
        start: Segment start
        end: Segment end
        n: Number of samples (>= 2)
        which: 'phi', 'r' or 'theta'

    Returns:
        DataFrame with columns t, x, y, z, value
    """
    if n < 2:
        raise ValueError(f"probe needs at least 2 samples, got {n}")
    start = np.asarray(start, dtype=np.float64)
    end = np.asarray(end, dtype=np.float64)
    t = np.linspace(0.0, 1.0, n)
    points = start + t[:, None] * (end - start)
    return pd.DataFrame({
        "t": t,
        "x": points[:, 0],
        "y": points[:, 1],
        "z": points[:, 2],
        "value": field.values(points, which=which),
    })


def sign_changes(values: np.ndarray) -> int:
    """Number of strict sign flips along a sequence."""
    s = np.sign(np.asarray(values))
    s = s[s != 0]
    return int(np.count_nonzero(s[1:] != s[:-1]))


def write_slice(prefix: str, image: SliceImage,
                probe: Optional[pd.DataFrame] = None) -> dict:
    """
    Write ``<prefix>.ppm`` and ``<prefix>.csv`` (plus ``<prefix>_probe.csv``).

    Returns:
        Mapping of artifact kind to written path
    """
    written = {"image": f"{prefix}.ppm", "values": f"{prefix}.csv"}
    write_ppm(written["image"], image.to_rgb())
    image.to_frame().to_csv(written["values"], index=False)
    if probe is not None:
        written["probe"] = f"{prefix}_probe.csv"
        probe.to_csv(written["probe"], index=False)
    return written
