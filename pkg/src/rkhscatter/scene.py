"""Grids, susceptibility phantoms, source placements and detector sets."""

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from ._validation import check_count, check_dim, check_points, check_positive
from .exceptions import GeometryInfeasibleError, InvalidArgumentError

# Three-ball sample, nm.
SAMPLE_BOX = (70.0, 70.0, 40.0)
BALL_RADIUS = 12.0
BALL_CLEARANCE = 3.0
BALL_MIN_GAP = 5.0
BALL_CENTERS = ((20.0, 20.0, 15.0), (50.0, 24.0, 15.0), (33.0, 48.0, 15.0))
BALL_ETAS = (1.275, 1.275, 1.885)


def make_rng(seed):
    """Counter-based generator used for every stochastic operation."""
    return np.random.Generator(np.random.Philox(int(seed)))


def _frozen(arr):
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class VoxelGrid:
    """Regular cell-centred grid with isotropic spacing ``spacing``."""

    dim: int
    shape: Tuple[int, ...]
    spacing: float
    origin: Tuple[float, ...]

    @property
    def n_cells(self):
        return int(np.prod(self.shape))

    @property
    def cell_volume(self):
        return self.spacing ** self.dim

    @property
    def extent(self):
        return np.asarray(self.shape, dtype=float) * self.spacing

    @property
    def lower(self):
        return np.asarray(self.origin, dtype=float)

    @property
    def upper(self):
        return self.lower + self.extent

    @property
    def side(self):
        """Largest edge of the bounding box; used as the length scale."""
        return float(self.extent.max())

    def axis_centers(self, axis):
        return self.origin[axis] + (np.arange(self.shape[axis]) + 0.5) * self.spacing

    def centers(self):
        """Cell centres as an (n_cells, dim) array in C order."""
        axes = [self.axis_centers(a) for a in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def cell_index(self, points):
        """Multi-index of the cell containing each point.

        A point exactly on an interior cell face belongs to the lower-index
        cell. Points outside the box are clipped to the nearest cell.
        """
        pts = check_points(points, self.dim)
        rel = (pts - self.lower) / self.spacing
        idx = np.floor(rel).astype(np.int64)
        on_face = (rel == idx) & (idx > 0)
        idx[on_face] -= 1
        return np.clip(idx, 0, np.asarray(self.shape) - 1)

    def flat_index(self, points):
        return np.ravel_multi_index(tuple(self.cell_index(points).T), self.shape)

    def contains(self, points, strict=True):
        pts = check_points(points, self.dim)
        if strict:
            return np.all((pts > self.lower) & (pts < self.upper), axis=1)
        return np.all((pts >= self.lower) & (pts <= self.upper), axis=1)

    def interior(self, margin):
        """Centred sub-grid with ``margin`` cells dropped on every side."""
        margin = int(margin)
        shape = tuple(n - 2 * margin for n in self.shape)
        if min(shape) < 1:
            raise InvalidArgumentError(f"margin {margin} leaves no cells in {self.shape}")
        origin = tuple(o + margin * self.spacing for o in self.origin)
        return VoxelGrid(self.dim, shape, self.spacing, origin)


def make_grid(dim, shape, spacing, origin=None):
    """Build a :class:`VoxelGrid` after validating its arguments."""
    dim = check_dim(dim)
    shape = tuple(int(n) for n in np.atleast_1d(shape))
    if len(shape) != dim or min(shape) < 1:
        raise InvalidArgumentError(f"shape must have {dim} entries >= 1, got {shape}")
    spacing = check_positive(spacing, "spacing")
    if origin is None:
        origin = (0.0,) * dim
    origin = tuple(float(o) for o in np.atleast_1d(origin))
    if len(origin) != dim:
        raise InvalidArgumentError(f"origin must have {dim} entries")
    return VoxelGrid(dim, shape, spacing, origin)


def centered_subgrid(grid, shape):
    """Grid with the same spacing, ``shape`` cells, centred inside ``grid``."""
    shape = tuple(int(n) for n in shape)
    if len(shape) != grid.dim or any(m > n for m, n in zip(shape, grid.shape)):
        raise InvalidArgumentError(f"sub-grid {shape} does not fit in {grid.shape}")
    origin = tuple(o + 0.5 * (n - m) * grid.spacing
                   for o, n, m in zip(grid.origin, grid.shape, shape))
    return VoxelGrid(grid.dim, shape, grid.spacing, origin)


@dataclass(frozen=True)
class SusceptibilityField:
    grid: VoxelGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.size != self.grid.n_cells:
            raise InvalidArgumentError(
                f"{values.size} values for a grid of {self.grid.n_cells} cells")
        values = values.reshape(self.grid.shape)
        if not np.all(np.isfinite(values)):
            raise InvalidArgumentError("susceptibility values must be finite")
        object.__setattr__(self, "values", _frozen(values))

    @property
    def flat(self):
        return self.values.ravel()

    def sample(self, points):
        """Cell-centre lookup of the field at arbitrary points."""
        return self.flat[self.grid.flat_index(points)]


@dataclass(frozen=True)
class SourceSet:
    positions: np.ndarray
    amplitudes: Optional[np.ndarray] = None

    def __post_init__(self):
        pos = check_points(self.positions, name="source positions")
        amps = np.ones(len(pos)) if self.amplitudes is None else np.asarray(
            self.amplitudes, dtype=float)
        if amps.shape != (len(pos),):
            raise InvalidArgumentError("one amplitude per source required")
        object.__setattr__(self, "positions", _frozen(pos))
        object.__setattr__(self, "amplitudes", _frozen(amps))

    def __len__(self):
        return len(self.positions)

    @property
    def dim(self):
        return self.positions.shape[1]


@dataclass(frozen=True)
class DetectorSet:
    directions: np.ndarray

    def __post_init__(self):
        dirs = check_points(self.directions, name="detector directions")
        norms = np.linalg.norm(dirs, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-12):
            raise InvalidArgumentError("detector directions must be unit vectors")
        object.__setattr__(self, "directions", _frozen(dirs))

    def __len__(self):
        return len(self.directions)

    @property
    def dim(self):
        return self.directions.shape[1]


@dataclass(frozen=True)
class ThreeBallModel:
    """Analytic three-sphere sample, optionally scaled by ``scale``."""

    scale: float = 1.0
    centers: np.ndarray = field(default=None)
    radius: float = None
    etas: Tuple[float, ...] = BALL_ETAS

    def __post_init__(self):
        if self.centers is None:
            object.__setattr__(self, "centers",
                               _frozen(np.asarray(BALL_CENTERS) * self.scale))
        if self.radius is None:
            object.__setattr__(self, "radius", BALL_RADIUS * self.scale)

    @property
    def box(self):
        return np.asarray(SAMPLE_BOX) * self.scale

    def constraint_report(self):
        """Analytic clearance and pairwise surface gaps."""
        c, r = self.centers, self.radius
        gaps = [float(np.linalg.norm(c[i] - c[j]) - 2 * r)
                for i in range(3) for j in range(i + 1, 3)]
        clearance = (c[:, 2] - r).tolist()
        return {"gaps": gaps, "clearance": clearance}

    def check(self):
        rep = self.constraint_report()
        s = self.scale
        if min(rep["gaps"]) < BALL_MIN_GAP * s - 1e-9 * s:
            raise GeometryInfeasibleError(f"sphere gaps {rep['gaps']} below {BALL_MIN_GAP * s}")
        if not np.allclose(rep["clearance"], BALL_CLEARANCE * s, rtol=0, atol=1e-9 * s):
            raise GeometryInfeasibleError(f"bottom clearance {rep['clearance']} != {BALL_CLEARANCE * s}")
        lo = self.centers - self.radius
        hi = self.centers + self.radius
        if np.any(lo < 0) or np.any(hi > self.box):
            raise GeometryInfeasibleError("spheres do not fit inside the sample box")
        return rep

    def evaluate(self, points):
        """Susceptibility at 3-D points (sample frame, origin at box corner)."""
        pts = check_points(points, 3)
        out = np.zeros(len(pts))
        r2 = self.radius ** 2
        for center, eta in zip(self.centers, self.etas):
            d2 = ((pts[:, 0] - center[0]) ** 2 + (pts[:, 1] - center[1]) ** 2
                  + (pts[:, 2] - center[2]) ** 2)
            out[d2 <= r2] = eta
        return out


def _infer_scale(grid, axes):
    ratios = [grid.extent[a] / SAMPLE_BOX[a] for a in axes]
    return float(min(ratios))


def three_ball_phantom(grid, scale=None):
    """Voxelise the three-ball sample onto a 3-D grid.

    The sample box (70 x 70 x 40 nm times ``scale``) is anchored at the grid
    origin; ``scale`` defaults to the largest factor that fits the grid box.
    """
    if grid.dim != 3:
        raise InvalidArgumentError("three_ball_phantom needs a 3-D grid")
    if scale is None:
        scale = _infer_scale(grid, (0, 1, 2))
    model = ThreeBallModel(scale=float(scale))
    if np.any(model.box > grid.extent * (1 + 1e-9)):
        raise GeometryInfeasibleError(
            f"grid box {grid.extent} smaller than sample box {model.box}")
    model.check()
    pts = grid.centers() - grid.lower
    return SusceptibilityField(grid, model.evaluate(pts))


def layer_heights(n_layers, height=SAMPLE_BOX[2]):
    """Mid-heights of ``n_layers`` equal slabs across the sample height."""
    n_layers = check_count(n_layers, "n_layers")
    return (np.arange(n_layers) + 0.5) * (height / n_layers)


def three_ball_layer(grid, z, scale=None):
    """2-D cross-section of the three-ball sample at height ``z`` (sample frame)."""
    if grid.dim != 2:
        raise InvalidArgumentError("three_ball_layer needs a 2-D grid")
    if scale is None:
        scale = _infer_scale(grid, (0, 1))
    model = ThreeBallModel(scale=float(scale))
    if np.any(model.box[:2] > grid.extent * (1 + 1e-9)):
        raise GeometryInfeasibleError(
            f"grid box {grid.extent} smaller than sample cross-section {model.box[:2]}")
    model.check()
    xy = grid.centers() - grid.lower
    pts = np.column_stack([xy, np.full(len(xy), float(z))])
    return SusceptibilityField(grid, model.evaluate(pts))


def gaussian_bump(grid, width, amplitude=1.0, center=None):
    """Smooth isotropic bump ``amplitude * exp(-|r - c|^2 / (2 width^2))``."""
    width = check_positive(width, "width")
    c = 0.5 * (grid.lower + grid.upper) if center is None else np.asarray(center, float)
    d2 = np.sum((grid.centers() - c) ** 2, axis=1)
    return SusceptibilityField(grid, amplitude * np.exp(-0.5 * d2 / width ** 2))


def zero_field(grid):
    return SusceptibilityField(grid, np.zeros(grid.n_cells))


def place_sources_random(grid, n_s, seed):
    """``n_s`` i.i.d. uniform positions strictly inside the grid box."""
    n_s = check_count(n_s, "n_s")
    rng = make_rng(seed)
    lo, hi = grid.lower, grid.upper
    pos = rng.uniform(lo, hi, size=(n_s, grid.dim))
    # uniform() is half-open; redraw the measure-zero lower-face hits
    bad = ~grid.contains(pos)
    while np.any(bad):
        pos[bad] = rng.uniform(lo, hi, size=(int(bad.sum()), grid.dim))
        bad = ~grid.contains(pos)
    return SourceSet(pos)


def place_sources_lattice(grid, shape=None):
    """Sources on a cell-centred lattice over the grid box (C order)."""
    shape = grid.shape if shape is None else tuple(int(n) for n in shape)
    if len(shape) != grid.dim or min(shape) < 1:
        raise InvalidArgumentError(f"lattice shape {shape} invalid for a {grid.dim}-D grid")
    axes = [grid.origin[a] + (np.arange(n) + 0.5) * grid.extent[a] / n
            for a, n in enumerate(shape)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return SourceSet(np.stack([m.ravel() for m in mesh], axis=1))


def _arc(n, axis_a, axis_b, dim):
    theta = np.linspace(0.0, 0.5 * np.pi, n) if n > 1 else np.array([0.0])
    out = np.zeros((n, dim))
    out[:, axis_a] = np.cos(theta)
    out[:, axis_b] = np.sin(theta)
    return out


def l_shape_detectors(dim, n_d):
    """Far-field directions arranged in an L.

    2-D: ``n_d`` angles equally spaced over [0, 90] degrees. 3-D: one arc
    from +x to +z and one from +y to +z, equally spaced, with +z used once.
    """
    dim = check_dim(dim)
    n_d = check_count(n_d, "n_d", minimum=2)
    if dim == 2:
        dirs = _arc(n_d, 0, 1, 2)
    else:
        n_first = n_d // 2 + 1
        n_second = n_d - n_first + 1
        first = _arc(n_first, 0, 2, 3)
        second = _arc(n_second, 1, 2, 3)[:-1]
        dirs = np.vstack([first, second])
    # exact unit norm after the trig round-off
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return DetectorSet(dirs)
