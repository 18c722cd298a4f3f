# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled spherical Bessel kernels (same algorithm as ``_fallback``)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, sinh, cosh, exp, ceil, cbrt, fabs, NAN

cnp.import_array()

cdef double RESCALE_AT = 1e200


cdef inline double cabs_(double complex z) nogil:
    cdef double a = fabs(z.real), b = fabs(z.imag), t
    if a < b:
        a, b = b, a
    if a == 0.0:
        return 0.0
    t = b / a
    return a * (1.0 + t * t) ** 0.5


cdef inline double complex csin_(double complex z) nogil:
    return sin(z.real) * cosh(z.imag) + 1j * (cos(z.real) * sinh(z.imag))


cdef inline double complex ccos_(double complex z) nogil:
    return cos(z.real) * cosh(z.imag) - 1j * (sin(z.real) * sinh(z.imag))


cdef inline double complex cexpi_(double complex z) nogil:
    # exp(i z)
    cdef double m = exp(-z.imag)
    return m * cos(z.real) + 1j * (m * sin(z.real))


cdef void jh_one(int nmax, double complex z,
                 double complex[:] jout, double complex[:] hout) noexcept nogil:
    cdef int k, i, start
    cdef double az
    cdef double complex s, c, j0, j1, f_next, f_cur, f_prev, f0, f1, fref, scale, e, iz

    if z.real == 0.0 and z.imag == 0.0:
        jout[0] = 1.0
        for k in range(1, nmax + 1):
            jout[k] = 0.0
        for k in range(nmax + 1):
            hout[k] = NAN + 1j * NAN
        return

    s = csin_(z)
    c = ccos_(z)
    j0 = s / z
    j1 = s / (z * z) - c / z

    az = cabs_(z)
    start = nmax + (<int>ceil(az) if ceil(az) > 20 else 20) + <int>ceil(8.0 * cbrt(az))
    iz = 1.0 / z
    f_next = 0.0
    f_cur = 1e-300
    for k in range(start, 0, -1):
        f_prev = ((2 * k + 1) * iz) * f_cur - f_next
        f_next = f_cur
        f_cur = f_prev
        if k - 1 <= nmax:
            jout[k - 1] = f_cur
        if k <= nmax:
            jout[k] = f_next
        if fabs(f_cur.real) + fabs(f_cur.imag) > RESCALE_AT:
            f_cur = f_cur / RESCALE_AT
            f_next = f_next / RESCALE_AT
            for i in range(k - 1, nmax + 1):
                jout[i] = jout[i] / RESCALE_AT
    f0 = jout[0]
    f1 = jout[1] if nmax >= 1 else f_next
    # divide before multiplying: the unnormalized values can be far
    # below 1 while j_0 is huge (large Im z), so j0 / f0 may overflow
    if cabs_(f0) >= cabs_(f1) or az < 1.0:
        fref = f0
        scale = j0
    else:
        fref = f1
        scale = j1
    for k in range(nmax + 1):
        jout[k] = (jout[k] / fref) * scale
    jout[0] = j0
    if nmax >= 1 and az >= 1.0:
        jout[1] = j1

    e = cexpi_(z)
    hout[0] = -1j * e / z
    if nmax >= 1:
        hout[1] = -e * (z + 1j) / (z * z)
        for k in range(1, nmax):
            hout[k + 1] = ((2 * k + 1) * iz) * hout[k] - hout[k - 1]


def sph_jh_table(int nmax, z):
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
    cdef double complex[:] flat = np.ascontiguousarray(za.ravel())
    cdef Py_ssize_t npts = flat.shape[0], i
    j = np.empty((npts, nmax + 1), dtype=complex)
    h = np.empty((npts, nmax + 1), dtype=complex)
    cdef double complex[:, :] jv = j
    cdef double complex[:, :] hv = h
    with nogil:
        for i in range(npts):
            jh_one(nmax, flat[i], jv[i, :], hv[i, :])
    return j.reshape(za.shape + (nmax + 1,)), h.reshape(za.shape + (nmax + 1,))
