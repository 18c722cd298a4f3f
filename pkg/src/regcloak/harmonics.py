"""Scalar and vector spherical harmonics, and the spherical wave functions.

Conventions
-----------
``Y_n^m`` is orthonormal on the unit sphere and carries the Condon-Shortley
phase, so ``Y_n^{-m} = (-1)^m conj(Y_n^m)``. The tangential fields are

* ``U_n^m = grad_S Y_n^m / sqrt(n(n+1))``
* ``V_n^m = xhat x U_n^m``

Both are evaluated without dividing by ``sin(theta)``, so they are finite
at the poles: ``dY/dtheta`` and ``(m / sin theta) Y`` are expressed through
the ladder identities in :func:`_dtheta_and_msin`.

Radiating and entire vector wave functions with wavenumber ``zeta``:

* ``M = -sqrt(n(n+1)) j_n(zeta r) V_n^m``
* ``curl M = sqrt(n(n+1))/r * J_n(zeta r) U_n^m + n(n+1)/r * j_n(zeta r) Y_n^m xhat``

``N`` and ``curl N`` are the same with ``h_n^{(1)}`` and ``H_n``.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.typing import ArrayLike

from .specfun import BesselSet

__all__ = [
    "mode_count",
    "iter_modes",
    "spherical_coords",
    "sph_frame",
    "legendre_normalized",
    "Y",
    "U",
    "V",
    "vsh",
    "vsh_table",
    "iter_vsh",
    "wave_M",
    "wave_N",
    "curl_M",
    "curl_N",
]


def mode_count(N: int) -> int:
    """Number of modes ``(n, m)`` with ``1 <= n <= N``, ``|m| <= n``."""
    return N * (N + 2)


def iter_modes(N: int):
    """Yield ``(n, m)`` for ``n = 1..N`` and ``m = -n..n`` in order."""
    for n in range(1, N + 1):
        for m in range(-n, n + 1):
            yield n, m


def _check_mode(n: int, m: int, allow_zero: bool = False) -> None:
    if int(n) != n or int(m) != m:
        raise ValueError("n and m must be integers")
    if n < (0 if allow_zero else 1) or abs(m) > n:
        raise ValueError(f"invalid mode (n, m) = ({n}, {m})")


def spherical_coords(x: ArrayLike) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(r, theta, phi)`` for points ``x`` of shape ``(..., 3)``."""
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1)
    rho_xy = np.hypot(x[..., 0], x[..., 1])
    theta = np.arctan2(rho_xy, x[..., 2])
    phi = np.arctan2(x[..., 1], x[..., 0])
    return r, theta, phi


def sph_frame(theta: ArrayLike, phi: ArrayLike) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cartesian components of ``rhat``, ``thetahat``, ``phihat``.

    Each returned array has shape ``np.broadcast(theta, phi).shape + (3,)``.
    """
    theta, phi = np.broadcast_arrays(np.asarray(theta, float), np.asarray(phi, float))
    st, ct, sp, cp = np.sin(theta), np.cos(theta), np.sin(phi), np.cos(phi)
    rhat = np.stack([st * cp, st * sp, ct], axis=-1)
    that = np.stack([ct * cp, ct * sp, -st], axis=-1)
    phat = np.stack([-sp, cp, np.zeros_like(sp)], axis=-1)
    return rhat, that, phat


@lru_cache(maxsize=None)
def _legendre_coeffs(nmax: int) -> tuple[np.ndarray, np.ndarray]:
    a = np.zeros((nmax + 1, nmax + 1))
    b = np.zeros((nmax + 1, nmax + 1))
    for m in range(nmax + 1):
        for n in range(m + 2, nmax + 1):
            a[n, m] = np.sqrt((4.0 * n * n - 1.0) / (n * n - m * m))
            b[n, m] = np.sqrt(((n - 1.0) ** 2 - m * m) / (4.0 * (n - 1.0) ** 2 - 1.0))
    return a, b


def legendre_normalized(nmax: int, theta: ArrayLike) -> np.ndarray:
    """Orthonormalized associated Legendre functions with Condon-Shortley phase.

    Returns ``P[..., n, m]`` for ``0 <= m <= n <= nmax`` (zero above the
    diagonal), normalized so that ``Y_n^m = P[n, m] exp(i m phi)``.
    """
    theta = np.asarray(theta, dtype=float)
    x, s = np.cos(theta), np.sin(theta)
    P = np.zeros(theta.shape + (nmax + 1, nmax + 1))
    P[..., 0, 0] = 1.0 / np.sqrt(4.0 * np.pi)
    for m in range(1, nmax + 1):
        P[..., m, m] = -np.sqrt((2.0 * m + 1.0) / (2.0 * m)) * s * P[..., m - 1, m - 1]
    a, b = _legendre_coeffs(nmax)
    for m in range(0, nmax):
        P[..., m + 1, m] = np.sqrt(2.0 * m + 3.0) * x * P[..., m, m]
        for n in range(m + 2, nmax + 1):
            P[..., n, m] = a[n, m] * (x * P[..., n - 1, m] - b[n, m] * P[..., n - 2, m])
    return P


def _Y_from_table(P: np.ndarray, n: int, m: int, phi: np.ndarray) -> np.ndarray:
    """``Y_n^m`` from a Legendre table; zero when ``|m| > n`` or ``n`` is out of range."""
    if n < 0 or abs(m) > n or n >= P.shape[-1]:
        return np.zeros(np.shape(phi), dtype=complex)
    val = P[..., n, abs(m)] * np.exp(1j * abs(m) * phi)
    if m < 0:
        val = (-1) ** (-m) * np.conj(val)
    return val


def Y(n: int, m: int, theta: ArrayLike, phi: ArrayLike) -> np.ndarray:
    """Orthonormal scalar spherical harmonic ``Y_n^m(theta, phi)``."""
    _check_mode(n, m, allow_zero=True)
    theta, phi = np.broadcast_arrays(np.asarray(theta, float), np.asarray(phi, float))
    P = legendre_normalized(n, theta)
    return _Y_from_table(P, n, m, phi)


def _dtheta_and_msin(n: int, m: int, theta: np.ndarray, phi: np.ndarray, P: np.ndarray | None = None):
    """Return ``dY_n^m/dtheta`` and ``(m / sin theta) Y_n^m`` without poles."""
    if P is None:
        P = legendre_normalized(n + 1, theta)
    ep, em = np.exp(1j * phi), np.exp(-1j * phi)
    dth = 0.5 * (
        np.sqrt((n - m) * (n + m + 1.0)) * em * _Y_from_table(P, n, m + 1, phi)
        - np.sqrt((n + m) * (n - m + 1.0)) * ep * _Y_from_table(P, n, m - 1, phi)
    )
    msin = -0.5 * np.sqrt((2.0 * n + 1.0) / (2.0 * n + 3.0)) * (
        np.sqrt((n + m + 1.0) * (n + m + 2.0)) * em * _Y_from_table(P, n + 1, m + 1, phi)
        + np.sqrt((n - m + 1.0) * (n - m + 2.0)) * ep * _Y_from_table(P, n + 1, m - 1, phi)
    )
    return dth, msin


def vsh(n: int, m: int, theta: ArrayLike, phi: ArrayLike):
    """Return ``(Y, U, V)`` at the given angles; ``U`` and ``V`` are Cartesian.

    ``Y`` has the broadcast shape of the angles; ``U`` and ``V`` add a
    trailing axis of length 3.
    """
    _check_mode(n, m)
    theta, phi = np.broadcast_arrays(np.asarray(theta, float), np.asarray(phi, float))
    y = Y(n, m, theta, phi)
    dth, msin = _dtheta_and_msin(n, m, theta, phi)
    _, that, phat = sph_frame(theta, phi)
    c = 1.0 / np.sqrt(n * (n + 1.0))
    u = c * (dth[..., None] * that + (1j * msin)[..., None] * phat)
    v = c * (dth[..., None] * phat - (1j * msin)[..., None] * that)
    return y, u, v


def iter_vsh(N: int, theta: ArrayLike, phi: ArrayLike):
    """Yield ``(n, m, Y, U, V)`` for every mode ``n <= N`` from one Legendre table.

    Memory stays at one mode's worth of output, unlike :func:`vsh_table`.
    """
    theta, phi = np.broadcast_arrays(np.asarray(theta, float), np.asarray(phi, float))
    P = legendre_normalized(N + 1, theta)
    _, that, phat = sph_frame(theta, phi)
    for n, m in iter_modes(N):
        y = _Y_from_table(P, n, m, phi)
        dth, msin = _dtheta_and_msin(n, m, theta, phi, P)
        c = 1.0 / np.sqrt(n * (n + 1.0))
        u = c * (dth[..., None] * that + (1j * msin)[..., None] * phat)
        v = c * (dth[..., None] * phat - (1j * msin)[..., None] * that)
        yield n, m, y, u, v


def vsh_table(N: int, theta: ArrayLike, phi: ArrayLike) -> dict[tuple[int, int], tuple]:
    """``(Y, U, V)`` for every mode ``n <= N`` from one shared Legendre table.

    Equivalent to calling :func:`vsh` per mode, but the recurrence runs once.
    """
    return {(n, m): (y, u, v) for n, m, y, u, v in iter_vsh(N, theta, phi)}


def U(n: int, m: int, theta: ArrayLike, phi: ArrayLike) -> np.ndarray:
    """Tangential gradient field ``grad_S Y_n^m / sqrt(n(n+1))`` (Cartesian)."""
    return vsh(n, m, theta, phi)[1]


def V(n: int, m: int, theta: ArrayLike, phi: ArrayLike) -> np.ndarray:
    """Rotated tangential field ``xhat x U_n^m`` (Cartesian)."""
    return vsh(n, m, theta, phi)[2]


def _wave(n: int, m: int, zeta: complex, x: ArrayLike, radiating: bool, curl: bool) -> np.ndarray:
    _check_mode(n, m)
    x = np.asarray(x, dtype=float)
    r, theta, phi = spherical_coords(x)
    if radiating and np.any(r == 0):
        raise ValueError("radiating wave functions are singular at the origin")
    y, u, v = vsh(n, m, theta, phi)
    rhat = sph_frame(theta, phi)[0]
    safe_r = np.where(r > 0, r, 1.0)
    b = BesselSet(n, zeta * safe_r)
    f = b.h if radiating else b.j
    F = b.H if radiating else b.J
    s = np.sqrt(n * (n + 1.0))
    if not curl:
        out = -s * f[..., None] * v
    else:
        out = (s / safe_r * F)[..., None] * u + (n * (n + 1.0) / safe_r * f * y)[..., None] * rhat
    if not radiating:
        # Entire fields: the limit at the origin is zero except for curl M at n = 1.
        at0 = r == 0
        if np.any(at0):
            if curl and n == 1:
                # The limit is a constant vector; sample it just off the origin.
                eps = 1e-8
                out[at0] = _wave(n, m, zeta, np.array([0.0, 0.0, eps]), radiating, curl)
            else:
                out[at0] = 0.0
    return out


def wave_M(n: int, m: int, zeta: complex, x: ArrayLike) -> np.ndarray:
    """Entire wave function ``M_n^m`` with wavenumber ``zeta`` at points ``x``."""
    return _wave(n, m, zeta, x, radiating=False, curl=False)


def wave_N(n: int, m: int, zeta: complex, x: ArrayLike) -> np.ndarray:
    """Radiating wave function ``N_n^m`` (outgoing, ``h_n^{(1)}``)."""
    return _wave(n, m, zeta, x, radiating=True, curl=False)


def curl_M(n: int, m: int, zeta: complex, x: ArrayLike) -> np.ndarray:
    """``curl M_n^m`` evaluated in closed form."""
    return _wave(n, m, zeta, x, radiating=False, curl=True)


def curl_N(n: int, m: int, zeta: complex, x: ArrayLike) -> np.ndarray:
    """``curl N_n^m`` evaluated in closed form."""
    return _wave(n, m, zeta, x, radiating=True, curl=True)
