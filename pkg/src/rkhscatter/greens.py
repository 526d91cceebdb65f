"""Free-space Helmholtz Green's functions and singular-cell integrals."""

import numpy as np
from scipy import special

from ._validation import check_dim, check_kh, check_points, check_positive
from .exceptions import DomainError, SingularityError

EULER_GAMMA = float(np.euler_gamma)

#: 2-D cell constant: (3 + ln 2)/2 - pi/4 - gamma + i pi/2
XI_2D = complex(0.5 * (3.0 + np.log(2.0)) - 0.25 * np.pi - EULER_GAMMA, 0.5 * np.pi)
#: 3-D cell constant: integral of 1/|r| over the unit cube about its centre
XI_3D = float(np.log(26.0 + 15.0 * np.sqrt(3.0)) - 0.5 * np.pi)


def hankel_h0_first_kind(z):
    """H0^(1)(z) = J0(z) + i Y0(z) for real ``z > 0``."""
    z = np.asarray(z, dtype=float)
    if np.any(~(z > 0)):
        raise DomainError("hankel_h0_first_kind requires z > 0")
    return special.hankel1(0, z)


def _distances(r, r_prime):
    r = np.asarray(r, dtype=float)
    r_prime = np.asarray(r_prime, dtype=float)
    return np.sqrt(np.sum((r - r_prime) ** 2, axis=-1))


def greens_from_distance(dim, dist, k):
    """Green's function as a function of the separation ``dist > 0``."""
    dist = np.asarray(dist, dtype=float)
    if np.any(dist == 0):
        raise SingularityError("coincident points; use the singular-cell integral")
    if dim == 2:
        return 0.25j * hankel_h0_first_kind(k * dist)
    return np.exp(1j * k * dist) / (4.0 * np.pi * dist)


def greens(dim, r, r_prime, k):
    """Outgoing free-space Green's function of the Helmholtz operator.

    ``dim == 2``: ``(i/4) H0^(1)(k |r - r'|)``; ``dim == 3``:
    ``exp(ik|r - r'|) / (4 pi |r - r'|)``. Broadcasts over leading axes.
    """
    dim = check_dim(dim)
    k = check_positive(k, "k")
    return greens_from_distance(dim, _distances(r, r_prime), k)


def greens_small_argument_2d(dist, k):
    """Logarithmic small-``k|r - r'|`` form of the 2-D Green's function."""
    dist = np.asarray(dist, dtype=float)
    return (np.log(1.0 / dist) / (2 * np.pi) + 0.25j - EULER_GAMMA / (2 * np.pi)
            - np.log(0.5 * k) / (2 * np.pi))


def greens_far_field(dim, r, r_prime, k, correction=False):
    """Far-zone factorisation of the Green's function for ``|r| >> |r'|``.

    2-D: ``e^{i pi/4} / sqrt(8 pi k) * e^{ik|r|} / sqrt|r| * e^{-ik r_hat.r'}``,
    times ``(1 + r_hat.r' / (2|r|))`` when ``correction`` is set.
    3-D: ``e^{ik|r|} / (4 pi |r|) * e^{-ik r_hat.r'}``.
    """
    dim = check_dim(dim)
    r = np.asarray(r, dtype=float)
    r_prime = np.asarray(r_prime, dtype=float)
    rn = np.linalg.norm(r, axis=-1)
    rhat = r / rn[..., None]
    proj = np.sum(rhat * r_prime, axis=-1)
    phase = np.exp(-1j * k * proj)
    if dim == 2:
        out = (np.exp(0.25j * np.pi) / np.sqrt(8 * np.pi * k)
               * np.exp(1j * k * rn) / np.sqrt(rn) * phase)
        if correction:
            out = out * (1.0 + 0.5 * proj / rn)
        return out
    return np.exp(1j * k * rn) / (4 * np.pi * rn) * phase


def singular_constant(dim, h, k):
    """Closed-form cell constant: ``XI_2D`` in 2-D, ``zeta = h^2 (XI_3D + ikh)`` in 3-D."""
    if check_dim(dim) == 2:
        return XI_2D
    return h * h * (XI_3D + 1j * k * h)


def self_cell_integral(dim, h, k, strict=False):
    """Integral of G(r, r_c) over the cell centred at r_c (no phase, no eta).

    2-D: ``h^2 (XI_2D - ln(hk/2)) / (2 pi)``; 3-D: ``zeta / (4 pi)``.
    """
    dim = check_dim(dim)
    h = check_positive(h, "h")
    k = check_positive(k, "k")
    check_kh(k, h, strict)
    if dim == 2:
        return h * h * (XI_2D - np.log(0.5 * h * k)) / (2 * np.pi)
    return singular_constant(3, h, k) / (4 * np.pi)


def amplitude_prefactor(dim, k):
    """``k^{3/2}`` in 2-D, ``k^2`` in 3-D."""
    return k ** 1.5 if check_dim(dim) == 2 else k ** 2


def singular_cell_integral(dim, h, k, eta_tilde, phase_point, detector, strict=False):
    """Amplitude contribution of the cell containing the source.

    Returns ``k^p * eta(r~) * exp(-ik d.r~) * self_cell_integral`` with
    ``p = 3/2`` (2-D) or ``2`` (3-D), ready to add to the midpoint sum.
    """
    dim = check_dim(dim)
    r_t = check_points(phase_point, dim)
    d = check_points(detector, dim)
    phase = np.exp(-1j * k * np.sum(d * r_t, axis=1))
    val = amplitude_prefactor(dim, k) * np.asarray(eta_tilde) * phase * self_cell_integral(
        dim, h, k, strict)
    return val[0] if val.size == 1 else val
