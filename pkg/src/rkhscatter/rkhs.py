"""Sobolev reproducing kernels, representer-theorem fits and surrogates.

The kernel of ``W_2^s(R^d)`` is the Fourier integral

    kappa(x, t) = int prod_j cos(2 pi (x_j - t_j) u_j) / D(u) du,
    D(u) = sum_{|alpha| <= s} prod_j (2 pi u_j)^(2 alpha_j),

evaluated here by a fixed, truncated quadrature on ``[0, U]^d`` (the
integrand is even in every ``u_j``). The input splits into a leading block
(source position) and a trailing block (detector direction) of equal size;
quadrature nodes are a product of one rule per block, so a batch of kernel
values reduces to ``F_a @ W @ F_b.T`` with per-block cosine features.
"""

import itertools
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.stats import qmc
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_points
from .exceptions import DegenerateKernelWarning, InvalidArgumentError

#: Difference vectors are snapped to this grid before caching/evaluation.
QUANTUM = 1e-9
#: Self-convergence of the default rules (doubling nodes in R^4, 4/3x in R^6),
#: relative to kappa(0), over separations up to 2 in normalised units.
QUADRATURE_TOLERANCE = {4: 1e-6, 6: 2e-3}
_CHUNK = 2048
_TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class SobolevKernelSpec:
    """Kernel dimension, smoothness and quadrature configuration.

    ``nodes`` is the Gauss-Legendre order per axis, or the number of Sobol
    points per block. Nodes on each axis are placed by the map
    ``u = sinh(a v) / (2 pi)``, ``v`` in [0, 1], which concentrates them where
    the spectral density is large.
    """

    d_in: int = 4
    s: Optional[int] = None
    scheme: str = "gauss-legendre"
    truncation: float = 8.0
    nodes: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.d_in not in (4, 6):
            raise InvalidArgumentError(f"d_in must be 4 or 6, got {self.d_in}")
        if self.s is None:
            object.__setattr__(self, "s", 3 if self.d_in == 4 else 4)
        if not self.s > self.d_in / 2:
            raise InvalidArgumentError(f"need s > d_in/2, got s={self.s}, d_in={self.d_in}")
        if self.scheme not in ("gauss-legendre", "sobol"):
            raise InvalidArgumentError(f"unknown quadrature scheme {self.scheme!r}")
        if self.nodes is None:
            default = {("gauss-legendre", 4): 24, ("gauss-legendre", 6): 12,
                       ("sobol", 4): 1024, ("sobol", 6): 2048}
            object.__setattr__(self, "nodes", default[(self.scheme, self.d_in)])
        if not self.truncation > 0:
            raise InvalidArgumentError("truncation must be positive")

    @property
    def block_dim(self):
        return self.d_in // 2

    def refined(self, factor=2):
        """Same integral with ``factor`` times the nodes per axis/block."""
        return SobolevKernelSpec(self.d_in, self.s, self.scheme, self.truncation,
                                 int(round(self.nodes * factor)), self.seed)

    def tail_bound(self):
        """Upper bound on the integral of 1/D outside ``[-U, U]^d``.

        Uses ``D >= (4 pi^2 |u|^2)^s / s!`` and that the box contains the
        ball of radius U.
        """
        d, s, U = self.d_in, self.s, self.truncation
        sphere = 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)
        return math.factorial(s) * (4 * math.pi ** 2) ** (-s) * sphere * U ** (d - 2 * s) / (2 * s - d)

    def quadrature(self):
        return _quadrature(self)


def complete_homogeneous(w, s):
    """Columns ``h_0 .. h_s`` of the complete homogeneous symmetric polynomials of rows of ``w``."""
    q, d = w.shape
    h = np.zeros((q, s + 1))
    h[:, 0] = 1.0
    for j in range(d):
        new = np.zeros_like(h)
        power = np.ones(q)
        for i in range(s + 1):
            new[:, i:] += power[:, None] * h[:, :s + 1 - i]
            power = power * w[:, j]
        h = new
    return h


def spectral_denominator(u, s):
    """``D(u) = sum_{|alpha|_1 <= s} prod_j (2 pi u_j)^(2 alpha_j)`` for rows of ``u``."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    return complete_homogeneous((_TWO_PI * u) ** 2, s).sum(axis=1)


def _axis_rule(spec):
    if spec.scheme == "gauss-legendre":
        v, wv = np.polynomial.legendre.leggauss(spec.nodes)
        v = 0.5 * (v + 1.0)
        wv = 0.5 * wv
        vv = np.array(list(itertools.product(v, repeat=spec.block_dim)))
        ww = np.prod(np.array(list(itertools.product(wv, repeat=spec.block_dim))), axis=1)
    else:
        sampler = qmc.Sobol(spec.block_dim, scramble=True, seed=spec.seed)
        vv = sampler.random(spec.nodes)
        ww = np.full(spec.nodes, 1.0 / spec.nodes)
    a = np.arcsinh(_TWO_PI * spec.truncation)
    u = np.sinh(a * vv) / _TWO_PI
    jac = np.prod(a * np.cosh(a * vv) / _TWO_PI, axis=1)
    return u, ww * jac


@lru_cache(maxsize=16)
def _quadrature(spec):
    """Block nodes ``u`` (Q, d/2) and the (Q, Q) weight matrix over node pairs."""
    u, w = _axis_rule(spec)
    h = complete_homogeneous((_TWO_PI * u) ** 2, spec.s)
    denom = np.zeros((len(u), len(u)))
    for i in range(spec.s + 1):
        for j in range(spec.s + 1 - i):
            denom += np.outer(h[:, i], h[:, j])
    weights = (2.0 ** spec.d_in) * np.outer(w, w) / denom
    weights.setflags(write=False)
    u.setflags(write=False)
    return u, weights


def _cos_features(diffs, u):
    out = np.ones((len(diffs), len(u)))
    for j in range(diffs.shape[1]):
        out *= np.cos(_TWO_PI * np.outer(diffs[:, j], u[:, j]))
    return out


def _unique_abs_diffs(a, b):
    """Quantised |a_i - b_j| keyed for reuse; returns (unique diffs, index (na, nb))."""
    ua, ia = np.unique(a, axis=0, return_inverse=True)
    ub, ib = np.unique(b, axis=0, return_inverse=True)
    diff = np.abs(ua[:, None, :] - ub[None, :, :]).reshape(-1, a.shape[1])
    keys = np.rint(diff / QUANTUM).astype(np.int64)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.reshape(len(ua), len(ub))
    return uniq * QUANTUM, inv[ia.ravel()][:, ib.ravel()]


def _check_active(spec, active):
    lead = tuple(range(spec.block_dim))
    if active is None:
        return lead
    active = tuple(int(a) for a in active)
    if active != lead:
        raise InvalidArgumentError(
            f"Laplacian is supported over the leading block {lead} only, got {active}")
    return active


def kernel_matrix(spec, X, T, laplacian=False, active=None):
    """Kernel (or leading-block Laplacian in ``T``) between rows of X and T."""
    X = check_points(X, spec.d_in, "X")
    T = check_points(T, spec.d_in, "T")
    if laplacian:
        _check_active(spec, active)
    half = spec.block_dim
    da, ia = _unique_abs_diffs(X[:, :half], T[:, :half])
    db, ib = _unique_abs_diffs(X[:, half:], T[:, half:])
    u, weights = _quadrature(spec)
    fb = _cos_features(db, u)
    right = weights @ fb.T
    vals = np.empty((len(da), len(db)))
    lap_weight = -4.0 * np.pi ** 2 * np.sum(u ** 2, axis=1)
    for start in range(0, len(da), _CHUNK):
        fa = _cos_features(da[start:start + _CHUNK], u)
        if laplacian:
            fa *= lap_weight
        vals[start:start + _CHUNK] = fa @ right
    return vals[ia, ib]


def kernel_eval(spec, x, t):
    """kappa(x, t) under the configured quadrature."""
    return float(kernel_matrix(spec, np.atleast_2d(x), np.atleast_2d(t))[0, 0])


def kernel_laplacian(spec, x, t, active=None):
    """Laplacian of kappa(x, t) in the leading-block coordinates of ``t``."""
    return float(kernel_matrix(spec, np.atleast_2d(x), np.atleast_2d(t),
                               laplacian=True, active=active)[0, 0])


def gram_matrix(spec, centers):
    """Symmetric Gram matrix ``K_ij = kappa(x_i, x_j)``."""
    centers = check_points(centers, spec.d_in, "centers")
    return kernel_matrix(spec, centers, centers)


def default_lambda(K):
    return 1e-8 * float(np.trace(K)) / K.shape[0]


def representer_fit(K, data, lam, rcond=None):
    """Coefficients ``c = A K [K (n lam I + K)]^+`` of the regularised fit.

    The generalized inverse is formed from the eigendecomposition of the
    symmetric ``K`` (it diagonalises ``K (n lam I + K)`` too); modes whose
    singular value falls below ``rcond * max`` are dropped. The real kernel
    acts on real and imaginary parts of ``data`` independently.
    """
    K = np.asarray(K, dtype=float)
    data = np.asarray(data)
    n = K.shape[0]
    if K.shape != (n, n) or data.shape != (n,):
        raise InvalidArgumentError("K must be (n, n) and data (n,)")
    lam = float(lam)
    if lam < 0:
        raise InvalidArgumentError("lambda must be >= 0")
    if rcond is None:
        rcond = n * np.finfo(float).eps
    if not np.any(K):
        warnings.warn("all-zero Gram matrix; returning zero coefficients",
                      DegenerateKernelWarning, stacklevel=2)
        return np.zeros(n, dtype=np.result_type(data, float))
    sig, vec = np.linalg.eigh(0.5 * (K + K.T))
    prod = np.abs(sig * (n * lam + sig))
    keep = prod > rcond * prod.max()
    inv = np.zeros_like(sig)
    inv[keep] = 1.0 / (n * lam + sig[keep])
    return ((data @ vec) * inv) @ vec.T


def lambda_grid(K, decades=(-10, -2)):
    """Candidate regularisation values ``10^j * tr(K)/n`` for integer ``j``."""
    lo, hi = decades
    return (10.0 ** np.arange(lo, hi + 1)) * float(np.trace(K)) / K.shape[0]


def discrepancy_lambda(K, data, level, tau=1.0, grid=None, rcond=None):
    """Largest grid value of lambda whose relative misfit stays below ``(tau*level)^2``.

    Morozov's discrepancy principle with the misfit measured as
    ``|A - f|^2 / |A|^2``. Falls back to the smallest grid value when no
    candidate reaches the target.
    """
    K = np.asarray(K, dtype=float)
    data = np.asarray(data)
    n = K.shape[0]
    grid = np.sort(lambda_grid(K) if grid is None else np.asarray(grid, dtype=float))
    if rcond is None:
        rcond = n * np.finfo(float).eps
    norm = np.sum(np.abs(data) ** 2)
    if norm == 0 or not np.any(K):
        return float(grid[0])
    sig, vec = np.linalg.eigh(0.5 * (K + K.T))
    proj = data @ vec
    target = (tau * level) ** 2
    best = grid[0]
    for lam in grid:
        prod = np.abs(sig * (n * lam + sig))
        keep = prod > rcond * prod.max()
        gain = np.where(keep, sig / np.where(keep, n * lam + sig, 1.0), 0.0)
        misfit = np.sum(np.abs(proj * (1.0 - gain)) ** 2) / norm
        if misfit <= target:
            best = lam
    return float(best)


def gcv_lambda(K, data, grid=None, rcond=None):
    """Grid value of lambda minimising the generalized cross-validation score.

    ``GCV = n |(I - H) A|^2 / tr(I - H)^2`` with ``H`` the hat matrix of the fit.
    """
    K = np.asarray(K, dtype=float)
    data = np.asarray(data)
    n = K.shape[0]
    grid = np.sort(lambda_grid(K) if grid is None else np.asarray(grid, dtype=float))
    if rcond is None:
        rcond = n * np.finfo(float).eps
    if not np.any(K):
        return float(grid[0])
    sig, vec = np.linalg.eigh(0.5 * (K + K.T))
    proj = data @ vec
    scores = []
    for lam in grid:
        prod = np.abs(sig * (n * lam + sig))
        keep = prod > rcond * prod.max()
        gain = np.where(keep, sig / np.where(keep, n * lam + sig, 1.0), 0.0)
        resid = np.sum(np.abs(proj * (1.0 - gain)) ** 2)
        dof = n - gain.sum()
        scores.append(n * resid / dof ** 2 if dof > 0 else np.inf)
    return float(grid[int(np.argmin(scores))])


def stationarity_residual(K, data, coef, lam):
    """Relative norm of ``-2/n A K + 2 c K (lam I + K/n)``."""
    n = K.shape[0]
    aK = data @ K
    grad = -2.0 / n * aK + 2.0 * (coef @ K) @ (lam * np.eye(n) + K / n)
    return float(np.linalg.norm(grad) / max(np.linalg.norm(aK), 1e-300))


def objective(K, data, coef, lam):
    """Regularised least-squares objective in Gram form."""
    n = K.shape[0]
    misfit = np.sum(np.abs(data - coef @ K) ** 2) / n
    return float(misfit + lam * np.real(coef @ K @ np.conj(coef)))


@dataclass(frozen=True)
class RepresenterModel:
    """Fitted surrogate ``f(t) = sum_i c_i kappa(x_i, t)``.

    Inputs are mapped by ``(t - offset) * scale`` before the kernel is
    applied, where ``scale`` is ``1/length`` on the leading block and 1 on
    the trailing block; Laplacians are returned in the raw coordinates.
    """

    spec: SobolevKernelSpec
    centers: np.ndarray
    coefficients: np.ndarray
    lam: float
    gram: Optional[np.ndarray] = field(default=None, repr=False)
    offset: Optional[np.ndarray] = None
    length: float = 1.0

    def __post_init__(self):
        if len(self.centers) != len(self.coefficients):
            raise InvalidArgumentError("one coefficient per center required")
        if self.offset is None:
            object.__setattr__(self, "offset", np.zeros(self.spec.d_in))

    def transform(self, points):
        pts = check_points(points, self.spec.d_in)
        return normalize_inputs(pts, self.offset, self.length)

    @property
    def normalized_centers(self):
        return self.transform(self.centers)


def normalize_inputs(points, offset, length):
    half = points.shape[1] // 2
    out = points - np.asarray(offset, dtype=float)
    out[:, :half] /= length
    return out


def fit_representer(spec, X, y, lam=None, rcond=None, offset=None, length=1.0):
    """Assemble the Gram matrix on (normalised) ``X`` and fit ``y``.

    ``lam`` is a value, ``None`` for :func:`default_lambda`, or a callable
    ``lam(K, y)`` returning the value to use.
    """
    X = check_points(X, spec.d_in, "X")
    y = np.asarray(y)
    if y.shape != (len(X),):
        raise InvalidArgumentError("y must have one value per row of X")
    offset = np.zeros(spec.d_in) if offset is None else np.asarray(offset, dtype=float)
    K = gram_matrix(spec, normalize_inputs(X, offset, length))
    if lam is None:
        lam = default_lambda(K)
    elif callable(lam):
        lam = lam(K, y)
    lam = float(lam)
    coef = representer_fit(K, y, lam, rcond)
    return RepresenterModel(spec, X.copy(), coef, lam, K, offset, float(length))


def surrogate_eval(model, t):
    """Surrogate values at rows of ``t`` (raw coordinates)."""
    T = model.transform(t)
    return model.coefficients @ kernel_matrix(model.spec, model.normalized_centers, T)


def surrogate_laplacian(model, t):
    """Leading-block Laplacian of the surrogate at rows of ``t`` (raw coordinates)."""
    T = model.transform(t)
    lap = kernel_matrix(model.spec, model.normalized_centers, T, laplacian=True)
    return (model.coefficients @ lap) / model.length ** 2


class SobolevKernelRegressor(BaseEstimator):
    """Regularised least squares in a Sobolev RKHS, sklearn style.

    ``fit(X, y)`` accepts complex targets; ``predict`` returns complex
    values and ``laplacian`` the Laplacian over the leading half of the
    input coordinates. ``length``/``offset`` set the normalisation of the
    leading block; ``None`` infers them from the bounding box of ``X``.
    """

    def __init__(self, d_in=4, smoothness=None, scheme="gauss-legendre", truncation=8.0,
                 nodes=None, seed=0, alpha=None, rcond=None, offset=None, length=None):
        self.d_in = d_in
        self.smoothness = smoothness
        self.scheme = scheme
        self.truncation = truncation
        self.nodes = nodes
        self.seed = seed
        self.alpha = alpha
        self.rcond = rcond
        self.offset = offset
        self.length = length

    def _spec(self):
        return SobolevKernelSpec(self.d_in, self.smoothness, self.scheme, self.truncation,
                                 self.nodes, self.seed)

    def fit(self, X, y):
        spec = self._spec()
        X = check_points(X, spec.d_in, "X")
        half = spec.block_dim
        if self.offset is None:
            offset = np.zeros(spec.d_in)
            offset[:half] = X[:, :half].min(axis=0)
        else:
            offset = np.asarray(self.offset, dtype=float)
        if self.length is None:
            span = np.ptp(X[:, :half], axis=0).max()
            length = float(span) if span > 0 else 1.0
        else:
            length = float(self.length)
        self.model_ = fit_representer(spec, X, y, self.alpha, self.rcond, offset, length)
        self.coef_ = self.model_.coefficients
        self.lambda_ = self.model_.lam
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return surrogate_eval(self.model_, X)

    def laplacian(self, X):
        check_is_fitted(self, "model_")
        return surrogate_laplacian(self.model_, X)
