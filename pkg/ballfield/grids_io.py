"""
Cross-sections, file formats and slice rendering for ball realizations.

Formats (all written at full double precision):

* CSV: comment header with the grid dimensions, provenance and then the
  column line ``r,phi,theta,value``; one row per node in grid order.
* BALLF1: magic ``BALLF1``, five little-endian uint64 (M, n_theta, n_phi,
  seed, realization index), then float64 radii, theta, phi and values.
* Legacy VTK ASCII structured grid with the φ = 0 column repeated at the
  end so that closed surfaces render without a seam.
* Binary PPM (P6) images of slices.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from matplotlib import colormaps

from ballfield.grids import BallGrid, SphereGrid
from ballfield.radial_factorization import RadialGrid
from ballfield.sampler import Realization
from ballfield.utils.error_handler import FieldFormatError, GridError

logger = logging.getLogger(__name__)

CSV_COLUMNS = "r,phi,theta,value"
BINARY_MAGIC = b"BALLF1"
_HEADER_DTYPE = np.dtype("<u8")
_VALUE_DTYPE = np.dtype("<f8")

PHI_SLICE = "phi"
SHELL_SLICE = "r"

LUT_SIZE = 256
WHITE = np.array([255, 255, 255], dtype=np.uint8)


@dataclass(frozen=True)
class SliceSpec:
    """Plane selector for extract_slice.

    Attributes:
        kind (str): "phi" for the great-circle plane through the z axis at
            longitude value (φ₀ and φ₀+π half-planes), "r" for the
            spherical shell at radius value.
        value (float): φ₀ in [0, π) or a grid radius r₀.
    """

    kind: str
    value: float

    def __post_init__(self):
        if self.kind not in (PHI_SLICE, SHELL_SLICE):
            raise GridError(f"Slice kind must be 'phi' or 'r', got {self.kind!r}")
        if not math.isfinite(self.value):
            raise GridError("Slice value must be finite")
        if self.kind == PHI_SLICE and not 0.0 <= self.value < math.pi:
            raise GridError(f"Slice longitude must lie in [0, π), got {self.value}")

    @classmethod
    def parse(cls, text):
        """Parse "phi=<radians>" or "r=<radius>"."""
        kind, sep, value = text.partition("=")
        if not sep:
            raise GridError(f"Slice must look like 'phi=<radians>' or 'r=<radius>', got {text!r}")
        try:
            number = float(value)
        except ValueError:
            raise GridError(f"Slice value {value!r} is not a number")
        return cls(kind.strip(), number)


@dataclass(frozen=True, eq=False)
class Slice:
    """A 2-D cross-section with its coordinates.

    For a phi slice rows are the radii and columns run over the polar angle
    ψ ∈ [0, 2π] measured from the north pole: θ ascending on the φ₀
    half-plane, then θ descending on the φ₀+π half-plane (ψ = 2π − θ).
    For a shell slice rows are θ and columns φ.
    """

    kind: str
    values: np.ndarray
    rows: np.ndarray
    columns: np.ndarray

    @property
    def shape(self):
        return self.values.shape


def _require_ball_grid(realization):
    if not isinstance(realization.grid, BallGrid):
        raise GridError("Only realizations on a BallGrid can be sliced or written to field files")
    return realization.grid


def _phi_index(sphere, phi):
    matches = np.flatnonzero(np.isclose(sphere.phi, phi, rtol=0.0, atol=1e-12))
    if not matches.size:
        raise GridError(
            f"Longitude {phi} is not on the φ grid; choose a multiple of 2π/{sphere.n_phi} "
            "with an even n_phi so that both half-planes exist"
        )
    return int(matches[0])


def extract_slice(realization, spec):
    """Cut a great-circle plane or a spherical shell out of a realization.

    Args:
        realization (Realization): Field on a BallGrid.
        spec (SliceSpec): Slice selector.

    Returns:
        Slice: (M, 2·n_theta) for a phi slice, (n_theta, n_phi) for a shell.

    Raises:
        GridError: If the longitude or radius is not a grid node.
    """
    grid = _require_ball_grid(realization)
    cube = realization.values.reshape(grid.shape)
    sphere = grid.sphere

    if spec.kind == SHELL_SLICE:
        i_r = grid.radial.index_of(spec.value)
        if i_r is None:
            raise GridError(
                f"Radius {spec.value} is not on the radial grid; add it to grid.radii "
                "(slices are never interpolated)"
            )
        return Slice(SHELL_SLICE, cube[i_r].copy(), sphere.theta.copy(), sphere.phi.copy())

    front = _phi_index(sphere, spec.value)
    back = _phi_index(sphere, spec.value + math.pi)
    values = np.concatenate([cube[:, :, front], cube[:, ::-1, back]], axis=1)
    psi = np.concatenate([sphere.theta, 2.0 * math.pi - sphere.theta[::-1]])
    return Slice(PHI_SLICE, values, grid.radii.copy(), psi)


def _csv_header(grid, realization):
    m, n_theta, n_phi = grid.shape
    return [
        "# ballfield field",
        f"# grid M={m} n_theta={n_theta} n_phi={n_phi}",
        f"# seed={realization.seed} realization_index={realization.realization_index}",
        CSV_COLUMNS,
    ]


def write_field_csv(realization, path):
    """Write a realization as `r,phi,theta,value` rows in grid order.

    Args:
        realization (Realization): Field on a BallGrid.
        path (str or Path): Destination file.

    Returns:
        Path: The written file.
    """
    grid = _require_ball_grid(realization)
    r, phi, theta = grid.coordinates()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        f.write("\n".join(_csv_header(grid, realization)) + "\n")
        np.savetxt(f, np.column_stack((r, phi, theta, realization.values)), fmt="%.17g", delimiter=",")
    return path


def _parse_settings(line, path):
    settings = {}
    for item in line.lstrip("#").split():
        key, sep, value = item.partition("=")
        if sep:
            try:
                settings[key] = int(value)
            except ValueError:
                raise FieldFormatError(f"{path}: bad header value {item!r}")
    return settings


def read_field_csv(path):
    """Read a realization written by write_field_csv.

    The grid is rebuilt from the coordinates and every row is checked
    against it, so the result is bit-identical to what was written.

    Raises:
        FieldFormatError: On empty or malformed files, non-finite values or
            a row count that disagrees with the header.
    """
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines:
        raise FieldFormatError(f"{path}: empty field file")

    settings = {}
    body_start = None
    for number, line in enumerate(lines):
        if line.startswith("#"):
            settings.update(_parse_settings(line, path))
        elif line.strip() == CSV_COLUMNS:
            body_start = number + 1
            break
        else:
            raise FieldFormatError(f"{path}:{number + 1}: expected header line {CSV_COLUMNS!r}")
    if body_start is None:
        raise FieldFormatError(f"{path}: missing column header {CSV_COLUMNS!r}")
    for key in ("M", "n_theta", "n_phi"):
        if key not in settings:
            raise FieldFormatError(f"{path}: header does not declare {key}")

    rows = []
    for number, line in enumerate(lines[body_start:], start=body_start + 1):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != 4:
            raise FieldFormatError(f"{path}:{number}: expected 4 columns, got {len(fields)}")
        try:
            rows.append([float(v) for v in fields])
        except ValueError:
            raise FieldFormatError(f"{path}:{number}: non-numeric value")

    m, n_theta, n_phi = settings["M"], settings["n_theta"], settings["n_phi"]
    if len(rows) != m * n_theta * n_phi:
        raise FieldFormatError(
            f"{path}: {len(rows)} rows do not match the declared grid {m}×{n_theta}×{n_phi}"
        )
    data = np.array(rows, dtype=float)
    if not np.all(np.isfinite(data)):
        raise FieldFormatError(f"{path}: field values must be finite")

    cube = data.reshape(m, n_theta, n_phi, 4)
    try:
        grid = BallGrid(RadialGrid(cube[:, 0, 0, 0]), SphereGrid(cube[0, 0, :, 1], cube[0, :, 0, 2]))
    except ValueError as e:
        raise FieldFormatError(f"{path}: inconsistent grid coordinates ({e})")
    r, phi, theta = grid.coordinates()
    if not (np.array_equal(r, data[:, 0]) and np.array_equal(phi, data[:, 1])
            and np.array_equal(theta, data[:, 2])):
        raise FieldFormatError(f"{path}: rows are not a tensor grid in r, theta, phi order")

    return Realization(grid, data[:, 3], settings.get("seed", 0), settings.get("realization_index", 0))


def write_field_binary(realization, path):
    """Write a realization in the raw BALLF1 layout."""
    grid = _require_ball_grid(realization)
    m, n_theta, n_phi = grid.shape
    header = np.array([m, n_theta, n_phi, realization.seed, realization.realization_index], dtype=_HEADER_DTYPE)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(BINARY_MAGIC)
        f.write(header.tobytes())
        for array in (grid.radii, grid.sphere.theta, grid.sphere.phi, realization.values):
            f.write(np.asarray(array, dtype=_VALUE_DTYPE).tobytes())
    return path


def read_field_binary(path):
    """Read a BALLF1 file.

    Raises:
        FieldFormatError: On a wrong magic, truncated data or bad values.
    """
    with open(path, "rb") as f:
        raw = f.read()
    if raw[: len(BINARY_MAGIC)] != BINARY_MAGIC:
        raise FieldFormatError(f"{path}: not a BALLF1 file")
    offset = len(BINARY_MAGIC)
    header_size = 5 * _HEADER_DTYPE.itemsize
    if len(raw) < offset + header_size:
        raise FieldFormatError(f"{path}: truncated header")
    m, n_theta, n_phi, seed, index = (int(v) for v in np.frombuffer(raw, _HEADER_DTYPE, 5, offset))
    offset += header_size

    counts = (m, n_theta, n_phi, m * n_theta * n_phi)
    expected = offset + sum(counts) * _VALUE_DTYPE.itemsize
    if len(raw) != expected:
        raise FieldFormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    arrays = []
    for count in counts:
        arrays.append(np.frombuffer(raw, _VALUE_DTYPE, count, offset).copy())
        offset += count * _VALUE_DTYPE.itemsize
    radii, theta, phi, values = arrays
    if not np.all(np.isfinite(values)):
        raise FieldFormatError(f"{path}: field values must be finite")
    try:
        grid = BallGrid(RadialGrid(radii), SphereGrid(phi, theta))
    except ValueError as e:
        raise FieldFormatError(f"{path}: invalid grid ({e})")
    return Realization(grid, values, seed, index)


def read_field(path):
    """Read a CSV or BALLF1 field file, chosen by its leading bytes."""
    with open(path, "rb") as f:
        head = f.read(len(BINARY_MAGIC))
    if head == BINARY_MAGIC:
        return read_field_binary(path)
    return read_field_csv(path)


def write_vtk_ball(realization, path):
    """Write a legacy VTK ASCII STRUCTURED_GRID.

    Dimensions are (n_phi + 1, n_theta, M); the last φ column repeats φ = 0.
    Points are Cartesian (r sinθ cosφ, r sinθ sinφ, r cosθ) and the field is
    stored as POINT_DATA scalars named ``field``.
    """
    grid = _require_ball_grid(realization)
    m, n_theta, n_phi = grid.shape
    phi = np.append(grid.sphere.phi, grid.sphere.phi[0])
    theta = grid.sphere.theta
    values = realization.values.reshape(grid.shape)
    values = np.concatenate([values, values[:, :, :1]], axis=2)

    r3 = grid.radii[:, None, None]
    sin_theta = np.sin(theta)[None, :, None]
    x = r3 * sin_theta * np.cos(phi)[None, None, :]
    y = r3 * sin_theta * np.sin(phi)[None, None, :]
    z = r3 * np.cos(theta)[None, :, None] * np.ones_like(phi)[None, None, :]
    count = (n_phi + 1) * n_theta * m

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        f.write("# vtk DataFile Version 3.0\n")
        f.write(f"ballfield realization seed={realization.seed} index={realization.realization_index}\n")
        f.write("ASCII\n")
        f.write("DATASET STRUCTURED_GRID\n")
        f.write(f"DIMENSIONS {n_phi + 1} {n_theta} {m}\n")
        f.write(f"POINTS {count} double\n")
        np.savetxt(f, np.column_stack((x.ravel(), y.ravel(), z.ravel())), fmt="%.17g")
        f.write(f"POINT_DATA {count}\n")
        f.write("SCALARS field double 1\n")
        f.write("LOOKUP_TABLE default\n")
        np.savetxt(f, values.ravel(), fmt="%.17g")
    return path


def colormap_table(name="RdBu_r"):
    """256×3 uint8 lookup table sampled from a matplotlib colormap."""
    try:
        cmap = colormaps[name].resampled(LUT_SIZE)
    except KeyError:
        raise GridError(f"Unknown colormap {name!r}")
    rgba = cmap(np.arange(LUT_SIZE))
    return np.round(rgba[:, :3] * 255.0).astype(np.uint8)


def color_indices(values, symmetric=True):
    """Map values linearly onto 0..255.

    With symmetric set the range is [-c, c], c = max|value|; otherwise
    [min, max]. A degenerate range maps everything to the middle entry.
    """
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise GridError("Slice values must be finite to render")
    if symmetric:
        c = float(np.max(np.abs(values)))
        lo, hi = -c, c
    else:
        lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        logger.warning("Slice has a degenerate value range [%g, %g]; rendering a uniform image", lo, hi)
        return np.full(values.shape, LUT_SIZE // 2, dtype=np.intp)
    scaled = (values - lo) / (hi - lo) * (LUT_SIZE - 1)
    return np.clip(np.rint(scaled), 0, LUT_SIZE - 1).astype(np.intp)


def _nearest(nodes, x):
    """Index of the nearest entry of the sorted array nodes for each x."""
    upper = np.clip(np.searchsorted(nodes, x), 1, max(nodes.size - 1, 1))
    if nodes.size == 1:
        return np.zeros(x.shape, dtype=np.intp)
    lower = upper - 1
    return np.where(np.abs(x - nodes[lower]) <= np.abs(nodes[upper] - x), lower, upper)


def _rasterize_polar(slice_, canvas_size):
    """Nearest-node lookup of a phi slice on a square canvas.

    Returns:
        tuple: (row index, column index, inside-disk mask) per pixel.
    """
    centers = (np.arange(canvas_size) + 0.5) / canvas_size * 2.0 - 1.0
    u = centers[None, :]
    v = -centers[:, None]
    radius = np.hypot(u, v)
    inside = radius <= 1.0
    psi = np.mod(np.arctan2(u, v), 2.0 * math.pi)

    # radii and ψ columns are both ascending
    rows = _nearest(slice_.rows, radius)
    columns = _nearest(slice_.columns, psi)
    return rows, columns, inside


def render_slice(slice_, path, colormap="RdBu_r", symmetric=True, canvas_size=512):
    """Render a slice to a binary PPM (P6) image.

    Shell slices map one node to one pixel (n_theta rows, n_phi columns).
    Phi slices are drawn as a disk on a canvas_size × canvas_size canvas,
    north pole up, the φ₀ half-plane on the right, outside pixels white.

    Args:
        slice_ (Slice): Slice from extract_slice.
        path (str or Path): Destination image.
        colormap (str): Matplotlib colormap name.
        symmetric (bool): Use a range symmetric about zero.
        canvas_size (int): Edge length of polar renderings.

    Returns:
        Path: The written image.
    """
    lut = colormap_table(colormap)
    indices = color_indices(slice_.values, symmetric)

    if slice_.kind == SHELL_SLICE:
        image = lut[indices]
    else:
        if canvas_size < 1:
            raise GridError(f"Canvas size must be positive, got {canvas_size}")
        rows, columns, inside = _rasterize_polar(slice_, canvas_size)
        image = lut[indices[rows, columns]]
        image[~inside] = WHITE

    height, width = image.shape[:2]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(f"P6\n{width} {height}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(image, dtype=np.uint8).tobytes())
    return path
