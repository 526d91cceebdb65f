"""Susceptibility reconstruction from amplitude data.

The RKHS route differentiates a fitted surrogate of the amplitude; the
finite-difference oracle differentiates lattice data directly; the linear
baseline solves the discretised Born system with a truncated SVD.
"""

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import Delaunay, QhullError
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_dim, check_points, check_positive
from .exceptions import ExtrapolationWarning, InvalidArgumentError, MetricUndefinedError
from .forward import forward_matrix
from .greens import amplitude_prefactor
from .rkhs import (SobolevKernelSpec, discrepancy_lambda, fit_representer, gcv_lambda, kernel_matrix,
                   surrogate_eval, surrogate_laplacian)
from .scene import DetectorSet, VoxelGrid


@dataclass(frozen=True)
class ReconstructedField:
    """Reconstruction on ``grid``; ``values`` is the real part of ``values_complex``."""

    grid: VoxelGrid
    values_complex: np.ndarray
    per_detector: Optional[np.ndarray] = None
    inside_hull: Optional[np.ndarray] = None
    layer_heights: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values_complex, dtype=complex)
        if vals.size != self.grid.n_cells:
            raise InvalidArgumentError("one value per reconstruction cell required")
        object.__setattr__(self, "values_complex", vals.reshape(self.grid.shape))

    @property
    def values(self):
        return self.values_complex.real

    @property
    def imag_max(self):
        """Largest imaginary magnitude; a numerical-error diagnostic."""
        return float(np.max(np.abs(self.values_complex.imag)))


def hull_mask(hull_points, query):
    """True where ``query`` lies inside the convex hull of ``hull_points``."""
    try:
        tri = Delaunay(hull_points)
    except (QhullError, ValueError):
        return np.zeros(len(query), dtype=bool)
    return tri.find_simplex(query) >= 0


def _detector_blocks(detectors, blocks):
    dirs = detectors.directions
    if blocks == "single":
        return dirs[:1]
    if blocks == "all":
        return dirs
    idx = np.atleast_1d(np.asarray(blocks, dtype=int))
    return dirs[idx]


def reconstruct(model, recon_grid, detectors, k, dim=None, blocks="single", warn=True):
    """Laplacian inversion of a fitted amplitude surrogate.

    For each reconstruction cell centre ``g`` and detector direction ``d``:
    ``eta(g; d) = -exp(ik d.g) / k^p * (Lap f + k^2 f)`` with ``p = 3/2``
    (2-D) or ``2`` (3-D); the result is the mean over the chosen detectors
    (``"single"``: the first one, ``"all"``, or a list of indices).
    """
    dim = check_dim(recon_grid.dim if dim is None else dim)
    if model.spec.d_in != 2 * dim or recon_grid.dim != dim:
        raise InvalidArgumentError("model, grid and dim disagree on the spatial dimension")
    k = check_positive(k, "k")
    dirs = _detector_blocks(detectors, blocks)
    g = recon_grid.centers()
    n_g, n_b = len(g), len(dirs)
    T = np.hstack([np.tile(g, (n_b, 1)), np.repeat(dirs, n_g, axis=0)])
    Tn = model.transform(T)
    Xn = model.normalized_centers
    f = model.coefficients @ kernel_matrix(model.spec, Xn, Tn)
    lap = model.coefficients @ kernel_matrix(model.spec, Xn, Tn, laplacian=True)
    lap = lap / model.length ** 2
    phase = np.exp(1j * k * np.sum(T[:, :dim] * T[:, dim:], axis=1))
    eta = -phase / amplitude_prefactor(dim, k) * (lap + k * k * f)
    per = eta.reshape(n_b, n_g)
    inside = hull_mask(model.centers[:, :dim], g)
    if warn and not np.all(inside):
        warnings.warn(f"{int((~inside).sum())} of {n_g} reconstruction cells lie outside "
                      "the convex hull of the sources", ExtrapolationWarning, stacklevel=2)
    return ReconstructedField(recon_grid, per.mean(axis=0),
                              per.reshape((n_b,) + recon_grid.shape), inside)


def lattice_indices(positions):
    """Map positions on a regular lattice to integer indices and spacing.

    Raises :class:`InvalidArgumentError` unless the points fill a complete
    lattice with one common spacing.
    """
    pos = check_points(positions)
    axes, index, steps = [], [], []
    for a in range(pos.shape[1]):
        vals = np.unique(np.round(pos[:, a], 9))
        if len(vals) < 3:
            raise InvalidArgumentError("lattice needs at least 3 points per axis")
        step = np.diff(vals)
        if not np.allclose(step, step[0], rtol=1e-6, atol=0):
            raise InvalidArgumentError("source coordinates are not equally spaced")
        axes.append(vals)
        steps.append(step[0])
        index.append(np.searchsorted(vals, np.round(pos[:, a], 9)))
    if not np.allclose(steps, steps[0], rtol=1e-6):
        raise InvalidArgumentError("lattice spacing differs between axes")
    shape = tuple(len(v) for v in axes)
    if len(pos) != np.prod(shape):
        raise InvalidArgumentError("sources do not fill a complete lattice")
    flat = np.ravel_multi_index(tuple(index), shape)
    if len(np.unique(flat)) != len(pos):
        raise InvalidArgumentError("duplicate lattice points")
    return flat, shape, float(steps[0]), np.array([v[0] for v in axes])


def reconstruct_fd_oracle(data, detectors=None, k=None, dim=None):
    """Finite-difference inversion on a regular source lattice.

    Applies the 5-point (2-D) or 7-point (3-D) Laplacian to the measured
    amplitudes in the source position and averages over detectors. Only
    interior lattice points get a value.
    """
    detectors = data.detectors if detectors is None else detectors
    k = data.k if k is None else check_positive(k, "k")
    dim = check_dim(data.dim if dim is None else dim)
    flat, shape, step, first = lattice_indices(data.sources.positions)
    lattice = np.empty((len(detectors),) + shape, dtype=complex)
    det_idx = [int(np.argmin(np.linalg.norm(data.detectors.directions - d, axis=1)))
               for d in detectors.directions]
    for b, j in enumerate(det_idx):
        lattice[b].flat[flat] = data.amplitudes[:, j]
    inner = tuple(slice(1, -1) for _ in range(dim))
    lap = -2.0 * dim * lattice[(slice(None),) + inner]
    for a in range(dim):
        for shift in (0, 2):
            sl = [slice(1, -1)] * dim
            sl[a] = slice(shift, shift + shape[a] - 2)
            lap = lap + lattice[(slice(None),) + tuple(sl)]
    lap /= step ** 2
    a_in = lattice[(slice(None),) + inner]
    grid = VoxelGrid(dim, tuple(n - 2 for n in shape), step,
                     tuple(first + 0.5 * step))
    pts = grid.centers()
    dirs = detectors.directions
    phase = np.exp(1j * k * dirs @ pts.T).reshape((len(dirs),) + grid.shape)
    per = -phase / amplitude_prefactor(dim, k) * (lap + k * k * a_in)
    return ReconstructedField(grid, per.mean(axis=0), per)


def assemble_slices(layers, layer_heights=None):
    """Stack 2-D reconstructions along a third axis, in the given order."""
    layers = list(layers)
    if not layers:
        raise InvalidArgumentError("no layers to assemble")
    g0 = layers[0].grid
    if g0.dim != 2:
        raise InvalidArgumentError("layers must be 2-D")
    for lay in layers[1:]:
        if lay.grid != g0:
            raise InvalidArgumentError("layers do not share the in-plane grid")
    vol = np.stack([lay.values_complex for lay in layers], axis=-1)
    heights = (np.arange(len(layers)) + 0.5) * g0.spacing if layer_heights is None \
        else np.asarray(layer_heights, dtype=float)
    grid = VoxelGrid(3, g0.shape + (len(layers),), g0.spacing, g0.origin + (0.0,))
    inside = None
    if all(lay.inside_hull is not None for lay in layers):
        inside = np.stack([np.asarray(lay.inside_hull).reshape(g0.shape) for lay in layers],
                          axis=-1).ravel()
    return ReconstructedField(grid, vol, inside_hull=inside, layer_heights=heights)


def baseline_linear_inversion(data, forward_grid, k=None, rcond=1e-3):
    """Truncated-SVD solution of the discretised Born system for real eta."""
    k = data.k if k is None else check_positive(k, "k")
    n_rows, n_cells = data.n, forward_grid.n_cells
    if n_rows < n_cells:
        raise InvalidArgumentError(
            f"underdetermined system: {n_rows} amplitudes for {n_cells} cells")
    m = forward_matrix(forward_grid, data.sources, data.detectors, k)
    a = data.target()
    m_real = np.vstack([m.real, m.imag])
    rhs = np.concatenate([a.real, a.imag])
    u, sig, vt = np.linalg.svd(m_real, full_matrices=False)
    keep = sig > rcond * sig[0]
    coef = (u[:, keep].T @ rhs) / sig[keep]
    eta = vt[keep].T @ coef
    return ReconstructedField(forward_grid, eta.astype(complex))


def predict_amplitudes(recon, data, k=None):
    """Born amplitudes implied by a reconstruction on its own grid."""
    k = data.k if k is None else k
    m = forward_matrix(recon.grid, data.sources, data.detectors, k)
    return (m @ recon.values.ravel()).reshape(data.amplitudes.shape)


def chi_squared_amplitudes(a, a_rec):
    a = np.asarray(a)
    denom = np.sum(np.abs(a) ** 2)
    if denom == 0:
        raise MetricUndefinedError("chi^2 is undefined for all-zero data")
    return float(np.sum(np.abs(a - np.asarray(a_rec)) ** 2) / denom)


def chi_squared(data, model):
    """Relative squared amplitude misfit of the surrogate at the data inputs."""
    a_rec = surrogate_eval(model, data.design())
    return chi_squared_amplitudes(data.target(), a_rec)


def delta_error(truth, recon):
    """Mean absolute susceptibility error over the reconstruction cells.

    ``truth`` is sampled at the reconstruction cell centres by cell lookup.
    """
    if truth.grid.dim != recon.grid.dim:
        raise InvalidArgumentError("truth and reconstruction dimensions differ")
    pts = recon.grid.centers()
    if not np.all(truth.grid.contains(pts, strict=False)):
        raise InvalidArgumentError("reconstruction cells fall outside the truth grid")
    eta_true = truth.sample(pts)
    return float(np.mean(np.abs(eta_true - recon.values.ravel())))


class RKHSReconstructor(BaseEstimator):
    """Fit an amplitude surrogate and invert it for the susceptibility.

    ``fit(X, y)`` takes inputs ``X = [r1, r2_hat]`` (one row per
    source/detector pair) and complex amplitudes ``y``. ``predict(points)``
    returns the real susceptibility at spatial points; ``reconstruct(grid)``
    returns a :class:`ReconstructedField`.

    ``alpha`` is the regularisation weight lambda: a number, ``None`` for the
    trace-scaled default, ``"gcv"`` for generalised cross-validation over a
    grid, or ``"discrepancy"`` to pick it from the grid so the relative misfit
    matches ``(tau * noise_level)^2``.
    """

    def __init__(self, k, truncation=8.0, nodes=None, scheme="gauss-legendre", seed=0,
                 alpha=None, rcond=None, blocks="single", origin=None, length=None,
                 noise_level=0.0, tau=1.0):
        self.k = k
        self.truncation = truncation
        self.nodes = nodes
        self.scheme = scheme
        self.seed = seed
        self.alpha = alpha
        self.rcond = rcond
        self.blocks = blocks
        self.origin = origin
        self.length = length
        self.noise_level = noise_level
        self.tau = tau

    def _lambda_rule(self):
        if isinstance(self.alpha, str):
            if self.alpha == "gcv":
                return lambda K, y: gcv_lambda(K, y, rcond=self.rcond)
            if self.alpha != "discrepancy":
                raise InvalidArgumentError(f"unknown lambda rule {self.alpha!r}")
            if self.noise_level > 0:
                return lambda K, y: discrepancy_lambda(K, y, self.noise_level, self.tau,
                                                       rcond=self.rcond)
            return None
        return self.alpha

    def fit(self, X, y, domain=None):
        """Fit the surrogate; ``domain`` (a grid) overrides the inferred normalisation."""
        X = check_points(X, name="X")
        dim = check_dim(X.shape[1] // 2)
        spec = SobolevKernelSpec(2 * dim, scheme=self.scheme, truncation=self.truncation,
                                 nodes=self.nodes, seed=self.seed)
        origin, length = self.origin, self.length
        if domain is not None:
            origin = domain.lower if origin is None else origin
            length = domain.side if length is None else length
        origin = X[:, :dim].min(axis=0) if origin is None else np.asarray(origin, float)
        length = float(np.ptp(X[:, :dim], axis=0).max()) if length is None else float(length)
        offset = np.concatenate([origin, np.zeros(dim)])
        self.model_ = fit_representer(spec, X, np.asarray(y), self._lambda_rule(), self.rcond,
                                      offset, length)
        self.detectors_ = DetectorSet(_ordered_unique(X[:, dim:]))
        self.dim_ = dim
        return self

    def fit_data(self, data):
        """Fit from :class:`ScatteringData`, normalising by its domain box."""
        return self.fit(data.design(), data.target(), domain=data.domain)

    def reconstruct(self, grid, warn=True):
        check_is_fitted(self, "model_")
        return reconstruct(self.model_, grid, self.detectors_, self.k, self.dim_,
                           self.blocks, warn)

    def predict(self, points):
        check_is_fitted(self, "model_")
        pts = check_points(points, self.dim_)
        dirs = _detector_blocks(self.detectors_, self.blocks)
        T = np.hstack([np.tile(pts, (len(dirs), 1)), np.repeat(dirs, len(pts), axis=0)])
        f = surrogate_eval(self.model_, T)
        lap = surrogate_laplacian(self.model_, T)
        phase = np.exp(1j * self.k * np.sum(T[:, :self.dim_] * T[:, self.dim_:], axis=1))
        eta = -phase / amplitude_prefactor(self.dim_, self.k) * (lap + self.k ** 2 * f)
        return eta.reshape(len(dirs), len(pts)).mean(axis=0).real


def _ordered_unique(rows):
    """Unique rows in order of first appearance."""
    _, first = np.unique(rows, axis=0, return_index=True)
    return rows[np.sort(first)]
