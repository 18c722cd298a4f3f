"""Pure-Python spherical Bessel kernels.

This module mirrors ``regcloak._kernels`` (the compiled core) line for line
and is selected automatically when the extension is unavailable.
"""

from __future__ import annotations

import cmath
import math

import numpy as np

_RESCALE_AT = 1e200


def miller_start(nmax: int, az: float) -> int:
    """Starting order for the downward recurrence of ``j_n``."""
    return nmax + max(20, int(math.ceil(az))) + int(math.ceil(8.0 * az ** (1.0 / 3.0)))


def _jh_one(nmax: int, z: complex, jout, hout) -> None:
    if z == 0:
        jout[0] = 1.0
        for k in range(1, nmax + 1):
            jout[k] = 0.0
        for k in range(nmax + 1):
            hout[k] = complex(math.nan, math.nan)
        return

    s = cmath.sin(z)
    c = cmath.cos(z)
    j0 = s / z
    j1 = s / (z * z) - c / z

    # Miller's algorithm: unnormalized downward recurrence with rescaling.
    start = miller_start(nmax, abs(z))
    iz = 1.0 / z
    f_next = 0j
    f_cur = 1e-300 + 0j
    for k in range(start, 0, -1):
        f_prev = ((2 * k + 1) * iz) * f_cur - f_next
        f_next = f_cur
        f_cur = f_prev
        if k - 1 <= nmax:
            jout[k - 1] = f_cur
        if k <= nmax:
            jout[k] = f_next
        if abs(f_cur.real) + abs(f_cur.imag) > _RESCALE_AT:
            f_cur /= _RESCALE_AT
            f_next /= _RESCALE_AT
            for i in range(k - 1, nmax + 1):
                jout[i] = jout[i] / _RESCALE_AT
    # jout[0] holds f_0, jout[1] holds f_1 (when nmax >= 1)
    f0 = jout[0]
    f1 = jout[1] if nmax >= 1 else f_next
    # divide before multiplying: the unnormalized values can be far
    # below 1 while j_0 is huge (large Im z), so j0 / f0 may overflow
    if abs(f0) >= abs(f1) or abs(z) < 1.0:
        fref, scale = f0, j0
    else:
        fref, scale = f1, j1
    for k in range(nmax + 1):
        jout[k] = (jout[k] / fref) * scale
    # the two lowest orders are known in closed form; this also avoids
    # cancellation in whichever one was not used for normalization
    # (the closed form of j_1 itself cancels for small |z|)
    jout[0] = j0
    if nmax >= 1 and abs(z) >= 1.0:
        jout[1] = j1

    # Hankel functions: upward recurrence is stable for h^(1).
    e = cmath.exp(1j * z)
    h0 = -1j * e / z
    hout[0] = h0
    if nmax >= 1:
        h1 = -e * (z + 1j) / (z * z)
        hout[1] = h1
        for k in range(1, nmax):
            hout[k + 1] = ((2 * k + 1) * iz) * hout[k] - hout[k - 1]


def sph_jh_table(nmax: int, z) -> tuple[np.ndarray, np.ndarray]:
    """Return ``j_n(z)`` and ``h_n^{(1)}(z)`` for ``n = 0..nmax``.

    Parameters
    ----------
    nmax : int
        Highest order (inclusive), ``nmax >= 0``.
    z : array_like of complex
        Arguments; any shape.

    Returns
    -------
    j, h : ndarray
        Complex arrays of shape ``z.shape + (nmax + 1,)``.
    """
    if nmax < 0:
        raise ValueError("nmax must be non-negative")
    za = np.asarray(z, dtype=complex)
    flat = za.ravel()
    j = np.empty((flat.size, nmax + 1), dtype=complex)
    h = np.empty((flat.size, nmax + 1), dtype=complex)
    jrow = [0j] * (nmax + 2)
    hrow = [0j] * (nmax + 1)
    for i, zi in enumerate(flat.tolist()):
        _jh_one(nmax, complex(zi), jrow, hrow)
        j[i, :] = jrow[: nmax + 1]
        h[i, :] = hrow
    return j.reshape(za.shape + (nmax + 1,)), h.reshape(za.shape + (nmax + 1,))
