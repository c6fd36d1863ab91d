"""Voxel occupancy maps, procedural forests/corridors and collision queries."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .motion_primitives import Trajectory, sample_times  # noqa: F401


class MapFormatError(ValueError):
    pass


class PlacementError(RuntimeError):
    pass


@dataclass(eq=False)
class OccupancyGrid:
    """Axis-aligned voxel map. ``occupancy[i, j(, k)]`` is the voxel whose
    lower corner sits at ``origin + (i, j, k) * resolution``."""

    origin: np.ndarray
    resolution: float
    occupancy: np.ndarray
    inflation_radius: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float).reshape(-1)
        self.occupancy = np.asarray(self.occupancy, dtype=bool)
        if not self.resolution > 0:
            raise ValueError("resolution must be > 0")
        if self.occupancy.ndim not in (2, 3) or self.occupancy.ndim != self.origin.size:
            raise ValueError("occupancy must be 2D or 3D and match the origin dimension")
        if min(self.occupancy.shape) <= 0:
            raise ValueError("dims must be positive")

    @classmethod
    def empty(cls, origin, extent, resolution: float) -> "OccupancyGrid":
        extent = np.asarray(extent, dtype=float)
        dims = tuple(int(round(e / resolution)) for e in extent)
        return cls(np.asarray(origin, dtype=float), resolution, np.zeros(dims, dtype=bool))

    @property
    def dim(self) -> int:
        return self.occupancy.ndim

    @property
    def dims(self) -> tuple:
        return self.occupancy.shape

    @property
    def extent(self) -> np.ndarray:
        return np.asarray(self.dims, dtype=float) * self.resolution

    @property
    def upper(self) -> np.ndarray:
        return self.origin + self.extent

    def cell_centers(self, axis: int) -> np.ndarray:
        return self.origin[axis] + (np.arange(self.dims[axis]) + 0.5) * self.resolution

    def index_of(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.floor((pts - self.origin) / self.resolution).astype(np.int64)

    def in_bounds(self, idx: np.ndarray) -> np.ndarray:
        return np.all((idx >= 0) & (idx < np.asarray(self.dims)), axis=1)

    def points_free(self, points) -> np.ndarray:
        """Free-mask for (M, D) points; anything outside the grid is occupied."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        idx = self.index_of(pts[:, : self.dim])
        inside = self.in_bounds(idx)
        out = np.zeros(pts.shape[0], dtype=bool)
        if np.any(inside):
            ii = idx[inside]
            out[inside] = ~self.occupancy[tuple(ii.T)]
        return out

    def is_free(self, point) -> bool:
        return bool(self.points_free(point)[0])

    def crop(self, center, half_size: float) -> "OccupancyGrid":
        """Robot-centred window snapped to this grid's voxels."""
        c = np.asarray(center, dtype=float)[: self.dim]
        lo = np.floor((c - half_size - self.origin) / self.resolution).astype(int)
        n = int(math.ceil(2 * half_size / self.resolution))
        hi = lo + n
        occ = np.ones((n,) * self.dim, dtype=bool)  # outside the source map is occupied
        src_lo = np.maximum(lo, 0)
        src_hi = np.minimum(hi, np.asarray(self.dims))
        if np.all(src_hi > src_lo):
            dst = tuple(slice(a - l, b - l) for a, b, l in zip(src_lo, src_hi, lo))
            src = tuple(slice(a, b) for a, b in zip(src_lo, src_hi))
            occ[dst] = self.occupancy[src]
        return OccupancyGrid(self.origin + lo * self.resolution, self.resolution, occ, self.inflation_radius)

    def coarsen(self, factor: int) -> "OccupancyGrid":
        """Block max-pool: a coarse voxel is occupied if any fine voxel is."""
        if factor == 1:
            return self
        dims = tuple(int(math.ceil(d / factor)) for d in self.dims)
        padded = np.zeros(tuple(d * factor for d in dims), dtype=bool)
        padded[tuple(slice(0, d) for d in self.dims)] = self.occupancy
        shape = []
        for d in dims:
            shape += [d, factor]
        occ = padded.reshape(shape).any(axis=tuple(range(1, 2 * len(dims), 2)))
        return OccupancyGrid(self.origin, self.resolution * factor, occ, self.inflation_radius)

    def __eq__(self, other):
        if not isinstance(other, OccupancyGrid):
            return NotImplemented
        return (
            np.array_equal(self.origin, other.origin)
            and self.resolution == other.resolution
            and np.array_equal(self.occupancy, other.occupancy)
            and self.inflation_radius == other.inflation_radius
        )

    __hash__ = None


# ---------------------------------------------------------------------------
# Procedural maps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ForestSpec:
    extent: tuple = (40.0, 40.0)
    tree_count: int | None = None
    density: float | None = None  # trees per m^2, used when tree_count is None
    radius_range: tuple = (0.15, 0.3)
    min_spacing: float = 0.0  # centre-to-centre
    seed: int = 0
    origin: tuple = (0.0, 0.0)
    resolution: float = 0.25

    def count(self) -> int:
        if self.tree_count is not None:
            return int(self.tree_count)
        if self.density is None:
            raise ValueError("give tree_count or density")
        return int(round(self.density * self.extent[0] * self.extent[1]))

    def validate(self):
        if self.radius_range[0] <= 0 or self.radius_range[1] < self.radius_range[0]:
            raise ValueError("bad radius range")
        if self.count() < 0:
            raise ValueError("tree count must be >= 0")


def mean_corridor_width(centers: np.ndarray, radii: np.ndarray) -> float:
    """Mean surface gap from each trunk to its nearest neighbour."""
    if len(centers) < 2:
        return math.inf
    tree = cKDTree(centers)
    dist, nn = tree.query(centers, k=2)
    gaps = dist[:, 1] - radii - radii[nn[:, 1]]
    return float(np.mean(gaps))


def place_trees(spec: ForestSpec) -> tuple[np.ndarray, np.ndarray]:
    spec.validate()
    n = spec.count()
    rng = np.random.default_rng(spec.seed)
    lo = np.asarray(spec.origin, dtype=float)
    ext = np.asarray(spec.extent, dtype=float)
    centers = np.zeros((n, 2))
    radii = np.zeros(n)
    placed = 0
    tries = 0
    budget = 100 * max(n, 1)
    while placed < n:
        if tries >= budget:
            raise PlacementError(f"placed {placed}/{n} trees with spacing {spec.min_spacing} in {budget} tries")
        tries += 1
        c = lo + rng.random(2) * ext
        r = rng.uniform(*spec.radius_range)
        if placed and spec.min_spacing > 0:
            if np.min(np.hypot(*(centers[:placed] - c).T)) < spec.min_spacing:
                continue
        centers[placed] = c
        radii[placed] = r
        placed += 1
    return centers, radii


def rasterize_discs(grid: OccupancyGrid, centers: np.ndarray, radii: np.ndarray) -> OccupancyGrid:
    occ = np.array(grid.occupancy)
    xs, ys = grid.cell_centers(0), grid.cell_centers(1)
    res = grid.resolution
    for (cx, cy), r in zip(centers, radii):
        i0 = max(int(math.floor((cx - r - grid.origin[0]) / res)), 0)
        i1 = min(int(math.ceil((cx + r - grid.origin[0]) / res)) + 1, grid.dims[0])
        j0 = max(int(math.floor((cy - r - grid.origin[1]) / res)), 0)
        j1 = min(int(math.ceil((cy + r - grid.origin[1]) / res)) + 1, grid.dims[1])
        if i0 >= i1 or j0 >= j1:
            continue
        dx = xs[i0:i1, None] - cx
        dy = ys[None, j0:j1] - cy
        occ[i0:i1, j0:j1] |= dx * dx + dy * dy <= r * r
    return OccupancyGrid(grid.origin, res, occ, grid.inflation_radius, dict(grid.meta))


def make_forest(spec: ForestSpec, base: OccupancyGrid | None = None, keep_clear=(), clearance: float = 0.0) -> OccupancyGrid:
    """Rasterise circular trunks; ``meta`` carries the trees and the mean corridor width.

    With ``base`` the trees are drawn onto a copy of that grid, which is how
    maps with regions of different density are assembled.  Trees whose trunk
    comes within ``clearance`` of a point in ``keep_clear`` are dropped.
    """
    centers, radii = place_trees(spec)
    for p in keep_clear:
        gap = np.linalg.norm(centers - np.asarray(p, float)[:2], axis=1) - radii
        keep = gap > clearance
        centers, radii = centers[keep], radii[keep]
    if base is None:
        base = OccupancyGrid.empty(spec.origin, spec.extent, spec.resolution)
    grid = rasterize_discs(base, centers, radii)
    grid.meta = {
        "trees": np.column_stack([centers, radii]).tolist(),
        "mean_corridor": mean_corridor_width(centers, radii),
        "tree_count": len(radii),
    }
    return grid


def forest_for_corridor(
    target: float,
    extent=(40.0, 40.0),
    radius_range=(0.15, 0.3),
    seed: int = 0,
    origin=(0.0, 0.0),
    resolution: float = 0.25,
    min_spacing: float = 0.0,
    tol: float = 0.05,
) -> ForestSpec:
    """Pick the tree count whose forest has mean corridor width nearest ``target``."""
    area = extent[0] * extent[1]
    rbar = 0.5 * (radius_range[0] + radius_range[1])
    guess = max(2, int(area * (0.5 / (target + 2 * rbar)) ** 2))

    def width(n):
        spec = ForestSpec(tuple(extent), n, None, tuple(radius_range), min_spacing, seed, tuple(origin), resolution)
        c, r = place_trees(spec)
        return mean_corridor_width(c, r), spec

    best = None
    lo, hi = 2, max(4 * guess, 8)
    # width decreases with count (in expectation); bisection on the count
    while lo <= hi:
        mid = (lo + hi) // 2
        w, spec = width(mid)
        if best is None or abs(w - target) < abs(best[0] - target):
            best = (w, spec)
        if abs(w - target) <= tol * target:
            break
        if w > target:
            lo = mid + 1
        else:
            hi = mid - 1
    return best[1]


@dataclass(frozen=True)
class CorridorSpec:
    width: float
    wall_thickness: float | None = None  # None fills to the map edge
    orientation: str = "x"  # axis the corridor runs along
    length: float | None = None  # None spans the whole map

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError("corridor width must be > 0")
        if self.orientation not in ("x", "y"):
            raise ValueError("orientation must be 'x' or 'y'")


def make_corridor(spec: CorridorSpec, extent: float, resolution: float = 0.1, origin=(0.0, 0.0)) -> OccupancyGrid:
    """Two parallel walls ``spec.width`` apart, centred in a square map.

    The corridor centre line passes through the centre of the middle voxel
    row, so a width of k voxels leaves exactly k free rows.
    """
    n = int(round(extent / resolution))
    if n % 2 == 0:
        n += 1
    grid = OccupancyGrid(np.asarray(origin, float), resolution, np.zeros((n, n), dtype=bool))
    along, across = (0, 1) if spec.orientation == "x" else (1, 0)
    c_across = grid.cell_centers(across)
    mid = c_across[n // 2]
    off = np.abs(c_across - mid)
    half = spec.width / 2.0 + 1e-9 * resolution
    wall = off > half
    if spec.wall_thickness is not None:
        wall &= off <= half + spec.wall_thickness
    c_along = grid.cell_centers(along)
    if spec.length is None:
        span = np.ones(n, dtype=bool)
    else:
        amid = c_along[n // 2]
        span = np.abs(c_along - amid) <= spec.length / 2.0
    mask = span[:, None] & wall[None, :]
    if spec.orientation == "y":
        mask = mask.T
    grid.occupancy[mask] = True
    grid.meta = {"corridor_width": spec.width}
    return grid


def inflate(grid: OccupancyGrid, robot_radius: float) -> OccupancyGrid:
    """Mark every voxel whose centre lies within ``robot_radius`` of an occupied voxel centre."""
    if robot_radius < 0:
        raise ValueError("robot_radius must be >= 0")
    if robot_radius == 0 or not np.any(grid.occupancy):
        return OccupancyGrid(grid.origin, grid.resolution, np.array(grid.occupancy),
                             grid.inflation_radius + robot_radius, dict(grid.meta))
    dist = ndimage.distance_transform_edt(~grid.occupancy, sampling=grid.resolution)
    occ = grid.occupancy | (dist <= robot_radius + 1e-9 * grid.resolution)
    return OccupancyGrid(grid.origin, grid.resolution, occ, grid.inflation_radius + robot_radius, dict(grid.meta))


# ---------------------------------------------------------------------------
# Collision queries
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CollisionResult:
    free: bool
    first_collision_time: float | None = None

    def __bool__(self):
        return self.free


def is_trajectory_free(grid: OccupancyGrid, traj: Trajectory, dt_check: float) -> CollisionResult:
    if not dt_check > 0:
        raise ValueError("dt_check must be > 0")
    t, pts = traj.sample_segments(dt_check)
    ok = grid.points_free(pts)
    if np.all(ok):
        return CollisionResult(True)
    return CollisionResult(False, float(t[np.argmin(ok)]))


def default_dt_check(grid: OccupancyGrid, v_max: float) -> float:
    return grid.resolution / v_max


# ---------------------------------------------------------------------------
# Map files
# ---------------------------------------------------------------------------

def _rle(bits: np.ndarray) -> list:
    flat = bits.reshape(-1).astype(np.int8)
    if flat.size == 0:
        return []
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat[0] == 1:
        runs = [0] + runs  # runs alternate starting with free
    return runs


def _unrle(runs: list, size: int) -> np.ndarray:
    if sum(runs) != size:
        raise MapFormatError(f"run lengths cover {sum(runs)} voxels, expected {size}")
    vals = np.arange(len(runs)) % 2 == 1
    return np.repeat(vals, runs)


def grid_to_dict(grid: OccupancyGrid) -> dict:
    return {
        "D": grid.dim,
        "origin": grid.origin.tolist(),
        "resolution": grid.resolution,
        "dims": list(grid.dims),
        "inflation_radius": grid.inflation_radius,
        "occupancy_rle": _rle(grid.occupancy),
        "meta": getattr(grid, "meta", None) or {},
    }


def grid_from_dict(data: dict) -> OccupancyGrid:
    try:
        dims = tuple(int(x) for x in data["dims"])
        if len(dims) != int(data["D"]):
            raise MapFormatError("dims do not match D")
        occ = _unrle([int(r) for r in data["occupancy_rle"]], int(np.prod(dims))).reshape(dims)
        grid = OccupancyGrid(np.asarray(data["origin"], float), float(data["resolution"]), occ,
                             float(data.get("inflation_radius", 0.0)))
        grid.meta = dict(data.get("meta", {}))
        return grid
    except MapFormatError:
        raise
    except (KeyError, TypeError, ValueError) as err:
        raise MapFormatError(f"malformed map: {err}") from err


def parse_ascii(text: str, resolution: float = 1.0, origin=(0.0, 0.0)) -> OccupancyGrid:
    """``.`` free, ``#`` occupied; the first line is the top (largest y) row."""
    rows = [ln.rstrip("\n") for ln in text.strip("\n").splitlines() if ln.strip()]
    if not rows or len({len(r) for r in rows}) != 1:
        raise MapFormatError("ASCII map rows must be nonempty and equal length")
    bad = set("".join(rows)) - {".", "#"}
    if bad:
        raise MapFormatError(f"unexpected characters {sorted(bad)}")
    arr = np.array([[ch == "#" for ch in r] for r in rows], dtype=bool)
    return OccupancyGrid(np.asarray(origin, float), resolution, arr[::-1].T.copy())


def to_ascii(grid: OccupancyGrid) -> str:
    if grid.dim != 2:
        raise MapFormatError("ASCII export is 2D only")
    arr = grid.occupancy.T[::-1]
    return "\n".join("".join("#" if v else "." for v in row) for row in arr) + "\n"


def save_map(grid: OccupancyGrid, path) -> None:
    path = Path(path)
    if path.suffix == ".txt":
        path.write_text(to_ascii(grid))
    else:
        path.write_text(json.dumps(grid_to_dict(grid)))


def load_map(path, resolution: float = 1.0) -> OccupancyGrid:
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".txt":
        return parse_ascii(text, resolution)
    try:
        return grid_from_dict(json.loads(text))
    except json.JSONDecodeError as err:
        raise MapFormatError(f"{path}: not valid JSON ({err})") from err
