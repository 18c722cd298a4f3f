"""Radial blow-up maps, push-forward of material tensors, and cloak media.

A regularized cloak is built from a radial map that blows a small ball
``|y| < rho`` up onto the unit ball and stretches the shell ``rho < |y| < 2``
onto ``1 < |x| < 2``. The material in physical space is the push-forward of
the virtual (homogeneous) material.
"""

from __future__ import annotations

import cmath
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike

__all__ = [
    "RadialMap",
    "F_rho",
    "F_2rho",
    "G_rho",
    "push_forward",
    "transform_tensor",
    "cloak_ideal_tensor",
    "cloak_ideal_matrix",
    "InnerMedium",
    "LossyParams",
    "lossy_params",
    "principal_sqrt",
]


def principal_sqrt(w: complex) -> complex:
    """Principal square root with branch cut on the negative real axis.

    Exactly negative reals map to ``+i sqrt|w|`` regardless of the sign of
    a zero imaginary part.
    """
    w = complex(w)
    if w.imag == 0.0 and w.real < 0.0:
        return complex(0.0, np.sqrt(-w.real))
    return cmath.sqrt(w)


@dataclass(frozen=True)
class RadialMap:
    """Piecewise radial map ``x = F(y)``.

    The core ``|y| <= rho`` is scaled linearly, ``x = (core_radius / rho) y``.
    The shell ``rho < |y| < outer`` maps affinely in the radius,
    ``|x| = a + b |y|``. Outside ``outer`` the map is the identity.
    """

    rho: float
    a: float
    b: float
    core_radius: float
    outer: float = 2.0

    def __post_init__(self) -> None:
        if not (self.rho > 0):
            raise ValueError("rho must be positive")
        if not (self.rho < self.outer):
            raise ValueError("rho must be smaller than the outer radius")

    def radius(self, s: ArrayLike) -> np.ndarray:
        """Image radius ``|F(y)|`` as a function of ``s = |y|``."""
        s = np.asarray(s, dtype=float)
        return np.where(
            s <= self.rho,
            s * self.core_radius / self.rho,
            np.where(s < self.outer, self.a + self.b * s, s),
        )

    def inverse_radius(self, r: ArrayLike) -> np.ndarray:
        """Preimage radius ``|F^{-1}(x)|`` as a function of ``r = |x|``."""
        r = np.asarray(r, dtype=float)
        return np.where(
            r <= self.core_radius,
            r * self.rho / self.core_radius,
            np.where(r < self.outer, (r - self.a) / self.b, r),
        )

    def _check_domain(self, r: np.ndarray) -> None:
        if np.any(r > self.outer * (1.0 + 1e-12)):
            raise ValueError(f"point outside the map domain |y| <= {self.outer}")

    def __call__(self, y: ArrayLike) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        s = np.linalg.norm(y, axis=-1)
        self._check_domain(s)
        with np.errstate(invalid="ignore", divide="ignore"):
            scale = np.where(s > 0, self.radius(s) / np.where(s > 0, s, 1.0), self.core_radius / self.rho)
        return y * scale[..., None]

    def inverse(self, x: ArrayLike) -> np.ndarray:
        """Apply ``F^{-1}``."""
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        self._check_domain(r)
        with np.errstate(invalid="ignore", divide="ignore"):
            scale = np.where(
                r > 0, self.inverse_radius(r) / np.where(r > 0, r, 1.0), self.rho / self.core_radius
            )
        return x * scale[..., None]

    def jacobian(self, y: ArrayLike) -> np.ndarray:
        """Derivative matrix ``DF(y)`` of shape ``(..., 3, 3)``.

        In the shell ``DF = b yhat yhat^T + (|F(y)|/|y|)(I - yhat yhat^T)``.
        """
        y = np.asarray(y, dtype=float)
        s = np.linalg.norm(y, axis=-1)
        safe = np.where(s > 0, s, 1.0)
        yhat = y / safe[..., None]
        radial = np.where(s <= self.rho, self.core_radius / self.rho, np.where(s < self.outer, self.b, 1.0))
        tangential = np.where(s > 0, self.radius(s) / safe, self.core_radius / self.rho)
        P = yhat[..., :, None] * yhat[..., None, :]
        eye = np.broadcast_to(np.eye(3), P.shape)
        return radial[..., None, None] * P + tangential[..., None, None] * (eye - P)


def F_rho(rho: float) -> RadialMap:
    """Map blowing ``B_rho`` up to ``B_1`` and ``B_2 \\ B_rho`` onto ``B_2 \\ B_1``."""
    _check_rho(rho, 1.0)
    return RadialMap(rho=rho, a=2.0 * (1.0 - rho) / (2.0 - rho), b=1.0 / (2.0 - rho), core_radius=1.0)


def F_2rho(rho: float) -> RadialMap:
    """Map blowing ``B_{2 rho}`` up to ``B_1`` (used by the lossy scheme)."""
    _check_rho(rho, 0.5)
    return RadialMap(
        rho=2.0 * rho,
        a=(1.0 - 2.0 * rho) / (1.0 - rho),
        b=1.0 / (2.0 * (1.0 - rho)),
        core_radius=1.0,
    )


def G_rho(rho: float, R1: float, R2: float) -> RadialMap:
    """General map sending ``B_rho`` to ``B_{R1}`` and fixing ``|y| >= R2``.

    The core is scaled by ``R1 / rho`` so that the map is continuous across
    ``|y| = rho``.
    """
    if not (0 < R1 < R2):
        raise ValueError("need 0 < R1 < R2")
    _check_rho(rho, R1)
    return RadialMap(
        rho=rho,
        a=(R1 - rho) * R2 / (R2 - rho),
        b=(R2 - R1) / (R2 - rho),
        core_radius=R1,
        outer=R2,
    )


def _check_rho(rho: float, upper: float) -> None:
    if not (0.0 < rho < upper):
        raise ValueError(f"rho must lie in (0, {upper}), got {rho!r}")


def transform_tensor(M: ArrayLike, T: ArrayLike) -> np.ndarray:
    """``M T M^T / det M`` for Jacobian matrices ``M`` of shape ``(..., 3, 3)``.

    Raises ``ValueError`` when some ``det M <= 0``: the transformation rule
    only applies to orientation-preserving maps.

    >>> print(round(float(transform_tensor(2 * np.eye(3), np.eye(3))[0, 0]), 12))
    0.5
    """
    M = np.asarray(M, dtype=float)
    det = np.linalg.det(M)
    if np.any(det <= 0):
        raise ValueError("push-forward needs an orientation-preserving Jacobian (det > 0)")
    return M @ np.asarray(T) @ np.swapaxes(M, -1, -2) / np.asarray(det)[..., None, None]


def push_forward(F: RadialMap, T: ArrayLike, y: ArrayLike) -> np.ndarray:
    """Push-forward ``DF T DF^T / det DF`` of a tensor field at points ``y``.

    ``T`` is either a single ``(3, 3)`` matrix or one per point. The result
    is the tensor in physical space at ``x = F(y)``.
    """
    return transform_tensor(F.jacobian(y), T)


def cloak_ideal_tensor(r: float) -> tuple[float, float]:
    """Radial and tangential eigenvalues of the ideal (``rho = 0``) cloak.

    Returns ``(2 (r - 1)**2 / r**2, 2)`` for ``1 < r < 2``: the first value
    acts on the radial direction ``xhat xhat^T`` and the second on the
    tangential plane ``I - xhat xhat^T``.
    """
    if not (1.0 < r < 2.0):
        raise ValueError("the ideal cloak tensor is defined for 1 < r < 2")
    return 2.0 * (r - 1.0) ** 2 / r**2, 2.0


def cloak_ideal_matrix(x: ArrayLike) -> np.ndarray:
    """Full ``3 x 3`` ideal cloak tensor at a point ``x`` with ``1 < |x| < 2``."""
    x = np.asarray(x, dtype=float)
    r = float(np.linalg.norm(x))
    lam_r, lam_t = cloak_ideal_tensor(r)
    P = np.outer(x, x) / r**2
    return lam_r * P + lam_t * (np.eye(3) - P)


@dataclass(frozen=True)
class InnerMedium:
    """Homogeneous medium filling the cloaked region.

    ``k`` is ``sqrt(mu0) * sqrt(eps0)`` with principal roots. For values in
    the right half-plane this is the principal root of ``mu0 * eps0``; in
    general it is the branch the transmission relations are written in.
    """

    eps0: complex = 2.0
    mu0: complex = 2.0

    def __post_init__(self) -> None:
        if self.eps0 == 0 or self.mu0 == 0:
            raise ValueError("eps0 and mu0 must be nonzero")

    @property
    def sqrt_eps0(self) -> complex:
        return principal_sqrt(self.eps0)

    @property
    def sqrt_mu0(self) -> complex:
        return principal_sqrt(self.mu0)

    @property
    def k(self) -> complex:
        return self.sqrt_mu0 * self.sqrt_eps0


@dataclass(frozen=True)
class LossyParams:
    """Constants of the lossy layer ``1/2 < |x| < 1``.

    ``mu_tau = 2 rho``, ``eps_tau = 2 rho (1 + i tau)`` and ``k_tau`` is the
    principal square root of their product.
    """

    rho: float
    tau: float
    mu_tau: complex
    eps_tau: complex
    k_tau: complex


def lossy_params(rho: float, tau: float = 1.0) -> LossyParams:
    """Constants of the lossy layer for given ``rho`` and loss ``tau``."""
    if not (0.0 < rho < 0.5):
        raise ValueError(f"rho must lie in (0, 1/2), got {rho!r}")
    if not (tau > 0):
        raise ValueError("tau must be positive")
    mu = complex(2.0 * rho)
    eps = complex(2.0 * rho, 2.0 * rho * tau)
    return LossyParams(rho=rho, tau=tau, mu_tau=mu, eps_tau=eps, k_tau=principal_sqrt(mu * eps))
