"""Scattering amplitudes from internal point sources.

Amplitudes are stored as an (n_sources, n_detectors) matrix; flattening in
C order gives the source-major data vector used by the kernel fit.
"""

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.sparse.linalg import LinearOperator, gmres

from ._validation import check_kh, check_positive
from .exceptions import InvalidArgumentError, SolverError
from .greens import amplitude_prefactor, greens_from_distance, self_cell_integral
from .scene import DetectorSet, SourceSet, VoxelGrid, make_rng

DIRECT_SOLVE_LIMIT = 5000
RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class ScatteringData:
    amplitudes: np.ndarray
    sources: SourceSet
    detectors: DetectorSet
    k: float
    domain: Optional[VoxelGrid] = None
    noise_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != (len(self.sources), len(self.detectors)):
            raise InvalidArgumentError(
                f"amplitude shape {amps.shape} != ({len(self.sources)}, {len(self.detectors)})")
        if not np.all(np.isfinite(amps)):
            raise InvalidArgumentError("amplitudes must be finite")
        amps = amps.copy()
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def dim(self):
        return self.sources.dim

    @property
    def n(self):
        return self.amplitudes.size

    def design(self):
        """(n, 2*dim) inputs ``(r1, r2_hat)`` in source-major order."""
        n_s, n_d = self.amplitudes.shape
        src = np.repeat(self.sources.positions, n_d, axis=0)
        det = np.tile(self.detectors.directions, (n_s, 1))
        return np.hstack([src, det])

    def target(self):
        return self.amplitudes.ravel()


@dataclass(frozen=True)
class FieldSolution:
    grid: VoxelGrid
    total_field: np.ndarray
    incident_field: np.ndarray

    @property
    def scattered_field(self):
        return self.total_field - self.incident_field


def _check_setup(field_, sources, k, strict):
    grid = field_.grid
    if sources.dim != grid.dim:
        raise InvalidArgumentError("source dimension does not match the grid")
    k = check_positive(k, "k")
    check_kh(k, grid.spacing, strict)
    if not np.all(grid.contains(sources.positions, strict=False)):
        raise InvalidArgumentError("internal sources must lie inside the grid box")
    return k


def effective_greens(grid, positions, k, cells=None, strict=False):
    """Cell-to-point Green's matrix with the singular cell replaced.

    Entry ``[s, c]`` is ``G(r_c, r_s)`` unless cell ``c`` contains point
    ``s``, where it is the cell average ``self_cell_integral / h^dim``.
    """
    centers = grid.centers()
    cells = np.arange(grid.n_cells) if cells is None else np.asarray(cells)
    pos = np.asarray(positions, dtype=float)
    dist = np.sqrt(np.sum((pos[:, None, :] - centers[None, cells, :]) ** 2, axis=-1))
    own = grid.flat_index(pos)
    mask = own[:, None] == cells[None, :]
    safe = np.where(mask, 1.0, dist)
    g = greens_from_distance(grid.dim, safe, k)
    g[mask] = self_cell_integral(grid.dim, grid.spacing, k, strict) / grid.cell_volume
    return g


def _phases(grid, detectors, k, cells):
    centers = grid.centers()[cells]
    return np.exp(-1j * k * detectors.directions @ centers.T)


def forward_matrix(grid, sources, detectors, k, strict=False):
    """Linear map from cell susceptibilities to Born amplitudes.

    Shape ``(n_s * n_d, n_cells)``, rows in source-major order.
    """
    k = check_positive(k, "k")
    cells = np.arange(grid.n_cells)
    g = effective_greens(grid, sources.positions, k, cells, strict)
    e = _phases(grid, detectors, k, cells)
    scale = amplitude_prefactor(grid.dim, k) * grid.cell_volume
    m = (sources.amplitudes[:, None, None] * scale) * g[:, None, :] * e[None, :, :]
    return m.reshape(len(sources) * len(detectors), grid.n_cells)


def born_amplitude(field_, sources, detectors, k, strict=False):
    """Weak-scattering amplitude matrix by midpoint quadrature over cells."""
    k = _check_setup(field_, sources, k, strict)
    grid = field_.grid
    eta = field_.flat
    cells = np.flatnonzero(eta)
    amps = np.zeros((len(sources), len(detectors)), dtype=complex)
    if cells.size:
        g = effective_greens(grid, sources.positions, k, cells, strict)
        e = _phases(grid, detectors, k, cells)
        amps = g @ (eta[cells] * e).T
        amps *= amplitude_prefactor(grid.dim, k) * grid.cell_volume
        amps *= sources.amplitudes[:, None]
    return ScatteringData(amps, sources, detectors, k, domain=grid)


class _DipoleSystem:
    """Discretised Lippmann-Schwinger operator restricted to the support of eta."""

    def __init__(self, field_, k, strict=False):
        grid = field_.grid
        self.grid, self.k = grid, k
        self.eta = field_.flat
        self.cells = np.flatnonzero(self.eta)
        centers = grid.centers()
        self.self_term = self_cell_integral(grid.dim, grid.spacing, k, strict)
        sc = centers[self.cells]
        n = len(self.cells)
        dist = np.sqrt(np.sum((sc[:, None, :] - sc[None, :, :]) ** 2, axis=-1))
        np.fill_diagonal(dist, 1.0)
        g = greens_from_distance(grid.dim, dist, k) * grid.cell_volume
        np.fill_diagonal(g, self.self_term)
        self.coupling = (k * k) * g * self.eta[self.cells][None, :]
        self.matrix = np.eye(n, dtype=complex) - self.coupling
        self._lu = None

    def incident(self, sources, cells=None):
        g = effective_greens(self.grid, sources.positions, self.k, cells)
        return g * sources.amplitudes[:, None]

    def solve(self, rhs):
        """Solve for the total field on the support, one row per source."""
        n = len(self.cells)
        if n == 0:
            return rhs.copy()
        if n <= DIRECT_SOLVE_LIMIT:
            if self._lu is None:
                self._lu = linalg.lu_factor(self.matrix)
            sol = linalg.lu_solve(self._lu, rhs.T).T
        else:
            op = LinearOperator((n, n), matvec=lambda v: self.matrix @ v, dtype=complex)
            sol = np.empty_like(rhs)
            for i, b in enumerate(rhs):
                x, info = gmres(op, b, rtol=RESIDUAL_TOL, atol=0.0, restart=50, maxiter=1000)
                if info != 0:
                    raise SolverError(f"GMRES did not converge (info={info})",
                                      condition=np.linalg.cond(self.matrix))
                sol[i] = x
        resid = np.linalg.norm(sol @ self.matrix.T - rhs) / max(np.linalg.norm(rhs), 1e-300)
        if not resid <= RESIDUAL_TOL:
            cond = np.linalg.cond(self.matrix)
            raise SolverError(
                f"coupled-dipole residual {resid:.3g} exceeds {RESIDUAL_TOL} (cond {cond:.3g})",
                condition=cond)
        return sol

    def full_field(self, sources, support_field):
        """Extend the support solution to every cell."""
        grid = self.grid
        u_inc = self.incident(sources)
        if len(self.cells) == 0:
            return u_inc, u_inc
        centers = grid.centers()
        pos = centers
        sc = centers[self.cells]
        dist = np.sqrt(np.sum((pos[:, None, :] - sc[None, :, :]) ** 2, axis=-1))
        same = np.arange(grid.n_cells)[:, None] == self.cells[None, :]
        g = greens_from_distance(grid.dim, np.where(same, 1.0, dist), self.k) * grid.cell_volume
        g[same] = self.self_term
        weights = (self.k ** 2) * self.eta[self.cells]
        total = u_inc + (support_field * weights) @ g.T
        return total, u_inc


def coupled_dipole_solve(field_, source, k, method="direct", strict=False):
    """Total field inside the medium for one internal point source.

    ``method="born"`` returns the first fixed-point sweep
    ``U_i + k^2 G eta U_i`` instead of solving the system.
    """
    source = source if isinstance(source, SourceSet) else SourceSet(np.atleast_2d(source))
    if len(source) != 1:
        raise InvalidArgumentError("coupled_dipole_solve takes a single source")
    k = _check_setup(field_, source, k, strict)
    system = _DipoleSystem(field_, k, strict)
    rhs = system.incident(source, system.cells)
    if method == "direct":
        support = system.solve(rhs)
    elif method == "born":
        support = rhs
    else:
        raise InvalidArgumentError(f"unknown method {method!r}")
    total, inc = system.full_field(source, support)
    return FieldSolution(field_.grid, total[0].reshape(field_.grid.shape),
                         inc[0].reshape(field_.grid.shape))


def full_wave_amplitude(field_, sources, detectors, k, strict=False):
    """Amplitude with the coupled-dipole total field in place of the incident field."""
    k = _check_setup(field_, sources, k, strict)
    grid = field_.grid
    system = _DipoleSystem(field_, k, strict)
    amps = np.zeros((len(sources), len(detectors)), dtype=complex)
    if len(system.cells):
        u = system.solve(system.incident(sources, system.cells))
        e = _phases(grid, detectors, k, system.cells)
        amps = (u * system.eta[system.cells]) @ e.T
        amps *= amplitude_prefactor(grid.dim, k) * grid.cell_volume
    return ScatteringData(amps, sources, detectors, k, domain=grid)


def add_noise(data, sources, level, seed, side=None):
    """Perturb amplitudes and source positions with Gaussian noise.

    Amplitude noise is circular complex Gaussian with standard deviation
    ``level * RMS|A|``; positions get ``level * side`` per coordinate, where
    ``side`` defaults to the largest edge of the data's domain box.
    """
    level = float(level)
    if level < 0:
        raise InvalidArgumentError("noise level must be >= 0")
    if level == 0:
        return data, sources
    if side is None:
        if data.domain is None:
            raise InvalidArgumentError("side is required when data has no domain")
        side = data.domain.side
    rng = make_rng(seed)
    amps = data.amplitudes
    rms = np.sqrt(np.mean(np.abs(amps) ** 2))
    sigma = level * rms / np.sqrt(2.0)
    noise = rng.normal(0.0, 1.0, amps.shape) + 1j * rng.normal(0.0, 1.0, amps.shape)
    noisy_amps = amps + sigma * noise
    pos = sources.positions + rng.normal(0.0, level * side, sources.positions.shape)
    new_sources = SourceSet(pos, sources.amplitudes)
    meta = dict(data.noise_meta, level=level, seed=int(seed), side=float(side))
    noisy = replace(data, amplitudes=noisy_amps, sources=new_sources, noise_meta=meta)
    return noisy, new_sources
