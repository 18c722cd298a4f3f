"""Spherical Bessel and Hankel functions of complex argument.

The orders ``0..nmax`` are produced together by recurrence: ``j_n`` by
Miller's downward algorithm (normalized against the closed forms of
``j_0``/``j_1``) and ``h_n^{(1)}`` by upward recurrence from its closed
forms. ``y_n`` is recovered as ``-i (h_n - j_n)``.

The recurrence runs in a compiled extension when it is importable and in
pure Python otherwise. Setting ``REGCLOAK_PURE_PYTHON=1`` forces the
fallback. ``BACKEND`` names the kernel actually in use.

Derivatives use ``f_n' = f_{n-1} - (n+1) f_n / z`` and the Riccati forms
are ``J_n(z) = j_n(z) + z j_n'(z)`` and ``H_n(z) = h_n(z) + z h_n'(z)``.
"""

from __future__ import annotations

import os

import numpy as np
from numpy.typing import ArrayLike

from . import _fallback

if os.environ.get("REGCLOAK_PURE_PYTHON") == "1":
    _kernel = _fallback
    BACKEND = "python"
else:
    try:
        from . import _kernels as _kernel  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:  # pragma: no cover - depends on the build
        _kernel = _fallback
        BACKEND = "python"

__all__ = [
    "BACKEND",
    "sph_jh_table",
    "sph_j",
    "sph_y",
    "sph_h1",
    "sph_j_prime",
    "sph_h1_prime",
    "riccati_J",
    "riccati_H",
    "wronskian_W",
    "BesselSet",
    "bessel_set",
    "cross_jj",
    "cross_hh",
]


def sph_jh_table(nmax: int, z: ArrayLike) -> tuple[np.ndarray, np.ndarray]:
    """Tabulate ``j_n(z)`` and ``h_n^{(1)}(z)`` for ``n = 0..nmax``.

    Returns arrays of shape ``np.shape(z) + (nmax + 1,)``.
    """
    if int(nmax) != nmax or nmax < 0:
        raise ValueError(f"nmax must be a non-negative integer, got {nmax!r}")
    return _kernel.sph_jh_table(int(nmax), z)


def _check_order(n: int) -> int:
    if int(n) != n or n < 0:
        raise ValueError(f"order must be a non-negative integer, got {n!r}")
    return int(n)


def _reject_origin(z: ArrayLike, what: str) -> None:
    if np.any(np.asarray(z) == 0):
        raise ValueError(f"{what} is singular at z = 0")


def _scalar_or_array(value: np.ndarray, z: ArrayLike):
    return complex(value) if np.ndim(z) == 0 else value


class BesselSet:
    """Values, derivatives and Riccati forms of ``j_n`` and ``h_n`` at one order.

    Attributes are arrays shaped like the argument: ``j``, ``h``, ``jp``,
    ``hp`` (derivatives), ``J`` and ``H`` (Riccati forms), plus the
    neighbouring orders ``j_next = j_{n+1}`` and ``h_prev = h_{n-1}``
    (``h_prev`` is ``None`` at ``n = 0``).
    """

    __slots__ = ("n", "z", "j", "h", "jp", "hp", "J", "H", "j_next", "h_prev")

    def __init__(self, n: int, z: ArrayLike):
        n = _check_order(n)
        zz = np.asarray(z, dtype=complex)
        jt, ht = sph_jh_table(n + 1, zz)
        self.n = n
        self.z = zz
        self.j = jt[..., n]
        self.h = ht[..., n]
        self.j_next = jt[..., n + 1]
        self.h_prev = ht[..., n - 1] if n > 0 else None
        # f_n' = -f_{n+1} + n f_n / z is equivalent; the n-1 form needs no
        # special case except at n = 0, where f_0' = -f_1.
        with np.errstate(divide="ignore", invalid="ignore"):
            if n == 0:
                self.jp = -jt[..., 1]
                self.hp = -ht[..., 1]
            else:
                self.jp = jt[..., n - 1] - (n + 1) * self.j / zz
                self.hp = ht[..., n - 1] - (n + 1) * self.h / zz
            if n == 0:
                self.J = self.j + zz * self.jp
                self.H = self.h + zz * self.hp
            else:
                # z f_{n-1} - n f_n, free of the 1/z division
                self.J = zz * jt[..., n - 1] - n * self.j
                self.H = zz * ht[..., n - 1] - n * self.h
        at_origin = zz == 0
        if np.any(at_origin):
            # exact limits: j_n'(0) is 1/3 for n = 1 and 0 otherwise
            self.jp = np.where(at_origin, 1.0 / 3.0 if n == 1 else 0.0, self.jp)


def cross_jj(a: BesselSet, b: BesselSet):
    """``J_n(a) j_n(b) - j_n(a) J_n(b)`` without the leading-order cancellation.

    Uses ``J_n(z) = (n+1) j_n(z) - z j_{n+1}(z)`` so that the ``(n+1)``
    terms drop out algebraically.
    """
    return b.z * a.j * b.j_next - a.z * b.j * a.j_next


def cross_hh(a: BesselSet, b: BesselSet):
    """``H_n(a) h_n(b) - h_n(a) H_n(b)`` without the leading-order cancellation.

    Uses ``H_n(z) = z h_{n-1}(z) - n h_n(z)``; requires ``n >= 1``.
    """
    return a.z * a.h_prev * b.h - b.z * a.h * b.h_prev


def bessel_set(n: int, z: ArrayLike) -> BesselSet:
    """Convenience constructor for :class:`BesselSet`."""
    return BesselSet(n, z)


def sph_j(n: int, z: ArrayLike):
    """Spherical Bessel function of the first kind ``j_n(z)``.

    Examples
    --------
    >>> round(sph_j(0, 1.0).real, 12)
    0.841470984808
    """
    return _scalar_or_array(BesselSet(n, z).j, z)


def sph_h1(n: int, z: ArrayLike):
    """Spherical Hankel function of the first kind ``h_n^{(1)}(z)``."""
    _reject_origin(z, "h_n^(1)")
    return _scalar_or_array(BesselSet(n, z).h, z)


def sph_y(n: int, z: ArrayLike):
    """Spherical Bessel function of the second kind ``y_n(z)``."""
    _reject_origin(z, "y_n")
    b = BesselSet(n, z)
    return _scalar_or_array(-1j * (b.h - b.j), z)


def sph_j_prime(n: int, z: ArrayLike):
    """Derivative ``j_n'(z)``."""
    return _scalar_or_array(BesselSet(n, z).jp, z)


def sph_h1_prime(n: int, z: ArrayLike):
    """Derivative ``h_n^{(1)}'(z)``."""
    _reject_origin(z, "h_n^(1)'")
    return _scalar_or_array(BesselSet(n, z).hp, z)


def riccati_J(n: int, z: ArrayLike):
    """``J_n(z) = j_n(z) + z j_n'(z)``, i.e. ``(z j_n(z))'``."""
    return _scalar_or_array(BesselSet(n, z).J, z)


def riccati_H(n: int, z: ArrayLike):
    """``H_n(z) = h_n(z) + z h_n'(z)``, i.e. ``(z h_n(z))'``."""
    _reject_origin(z, "H_n")
    return _scalar_or_array(BesselSet(n, z).H, z)


def wronskian_W(n: int, z: ArrayLike):
    """Wronskian ``j_n h_n' - h_n j_n'`` evaluated from the computed values.

    Analytically this equals ``i / z**2``; the difference is a cheap
    accuracy diagnostic.
    """
    _reject_origin(z, "the Wronskian")
    b = BesselSet(n, z)
    return _scalar_or_array(b.j * b.hp - b.h * b.jp, z)
