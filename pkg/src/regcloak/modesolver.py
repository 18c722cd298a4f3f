"""Per-mode transmission systems of the spherical cloak and their solutions.

Every field is expanded in the wave functions ``M``, ``curl M`` (entire) and
``N``, ``curl N`` (radiating) of :mod:`regcloak.harmonics`. Modes never couple,
and for each degree ``n`` the unknowns split into two polarizations:

* electric (``A_n``): ``c, alpha, gamma`` (plus ``c~, gamma~`` in the lossy layer)
* magnetic (``B_n``): ``d, beta, eta`` (plus ``d~, eta~``)

The azimuthal index ``m`` only scales the right-hand side, so each
``(n, polarization)`` system is assembled once and solved for all ``m``.

Two solution paths are provided. ``method="closed"`` uses elimination
formulas (the factors ``t``, ``t'``, ``l``, ``r``, ``s``) and
``method="direct"`` solves the raw linear systems. They are independent
and are cross-checked in the test suite.

Coefficient arrays use the layout ``arr[n - 1, m + N]`` with shape
``(N, 2N + 1)``; entries with ``|m| > n`` are zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal

import mpmath
import numpy as np
from numpy.typing import ArrayLike

from .harmonics import vsh_table
from .media import InnerMedium, LossyParams, lossy_params
from .specfun import BesselSet, cross_hh, cross_jj

__all__ = [
    "Lossless",
    "Lossy",
    "CloakScenario",
    "Excitation",
    "ModeSolution",
    "Solution",
    "mode_array",
    "planewave_excitation",
    "free_space_solution",
    "source_coefficients",
    "t_factors",
    "tprime_factors",
    "lossy_factors",
    "det_A",
    "det_B",
    "system_matrices",
    "solve",
    "solve_lossless_passive",
    "solve_lossless_active",
    "solve_lossy_passive",
    "solve_lossy_active",
    "RESONANCE_THRESHOLD",
    "equilibrated_det",
    "ResonanceError",
]

RESONANCE_THRESHOLD = 1e-12
Method = Literal["closed", "direct"]


class ResonanceError(ArithmeticError):
    """Raised when a vanishing denominator makes a requested quantity undefined."""


# ---------------------------------------------------------------------------
# scenario description


@dataclass(frozen=True)
class Lossless:
    """Lossless regularized cloak with regularizer ``0 < rho < 1``."""

    rho: float

    def __post_init__(self) -> None:
        if not (0.0 < self.rho < 1.0):
            raise ValueError(f"lossless scheme needs 0 < rho < 1, got {self.rho!r}")


@dataclass(frozen=True)
class Lossy:
    """Lossy regularized cloak: regularizer ``0 < rho < 1/2`` and damping ``tau > 0``."""

    rho: float
    tau: float = 3.0

    def __post_init__(self) -> None:
        if not (0.0 < self.rho < 0.5):
            raise ValueError(f"lossy scheme needs 0 < rho < 1/2, got {self.rho!r}")
        if not (self.tau > 0.0):
            raise ValueError(f"lossy scheme needs tau > 0, got {self.tau!r}")

    @property
    def params(self) -> LossyParams:
        return lossy_params(self.rho, self.tau)


@dataclass(frozen=True)
class CloakScenario:
    """Full problem description: scheme, inner medium, frequency and truncation."""

    scheme: Lossless | Lossy
    inner: InnerMedium = field(default_factory=InnerMedium)
    omega: float = 5.0
    N: int = 15

    def __post_init__(self) -> None:
        if not (self.omega > 0):
            raise ValueError("omega must be positive")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError("N must be a positive integer")

    @property
    def rho(self) -> float:
        return self.scheme.rho

    @property
    def lossy(self) -> bool:
        return isinstance(self.scheme, Lossy)

    def with_rho(self, rho: float) -> "CloakScenario":
        return replace(self, scheme=replace(self.scheme, rho=rho))

    def with_omega(self, omega: float) -> "CloakScenario":
        return replace(self, omega=omega)


def mode_array(N: int) -> np.ndarray:
    """Zero coefficient array of shape ``(N, 2N + 1)``."""
    return np.zeros((N, 2 * N + 1), dtype=complex)


def _valid_mask(N: int) -> np.ndarray:
    n = np.arange(1, N + 1)[:, None]
    m = np.arange(-N, N + 1)[None, :]
    return np.abs(m) <= n


@dataclass
class Excitation:
    """Boundary data and optional internal source for all modes ``n <= N``.

    Attributes
    ----------
    f1, f2 : ndarray
        Coefficients of ``xhat x E`` on ``|x| = 2`` against
        ``sqrt(n(n+1)) U_n^m`` and ``sqrt(n(n+1)) V_n^m``.
    p, q : ndarray
        Radiating multipole coefficients of the internal source
        (``N`` and ``curl N`` at wavenumber ``k omega``). Zero when passive.
    a, b : ndarray or None
        Free-space (homogeneous ball) coefficients, filled in by
        :func:`planewave_excitation` or :func:`free_space_solution`.
    """

    f1: np.ndarray
    f2: np.ndarray
    p: np.ndarray | None = None
    q: np.ndarray | None = None
    a: np.ndarray | None = None
    b: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.f1 = np.asarray(self.f1, dtype=complex)
        self.f2 = np.asarray(self.f2, dtype=complex)
        N = self.f1.shape[0]
        if self.f1.shape != (N, 2 * N + 1) or self.f2.shape != self.f1.shape:
            raise ValueError("f1 and f2 must both have shape (N, 2N+1)")
        self.p = mode_array(N) if self.p is None else np.asarray(self.p, dtype=complex)
        self.q = mode_array(N) if self.q is None else np.asarray(self.q, dtype=complex)
        if self.p.shape != self.f1.shape or self.q.shape != self.f1.shape:
            raise ValueError("p and q must have the same shape as f1")
        mask = _valid_mask(N)
        for arr in (self.f1, self.f2, self.p, self.q):
            if np.any(arr[~mask] != 0):
                raise ValueError("coefficients with |m| > n must be zero")

    @property
    def N(self) -> int:
        return self.f1.shape[0]

    @property
    def has_source(self) -> bool:
        return bool(np.any(self.p != 0) or np.any(self.q != 0))

    def with_source(self, p: ArrayLike, q: ArrayLike) -> "Excitation":
        """Copy of this excitation with the given source coefficients."""
        return replace(self, p=np.asarray(p, dtype=complex), q=np.asarray(q, dtype=complex))

    def without_source(self) -> "Excitation":
        return replace(self, p=None, q=None)

    def truncated(self, N: int) -> "Excitation":
        """Restrict to degrees ``n <= N``."""
        if N > self.N:
            raise ValueError("cannot extend an excitation")

        def cut(x):
            return None if x is None else x[:N, self.N - N : self.N + N + 1].copy()

        return Excitation(cut(self.f1), cut(self.f2), cut(self.p), cut(self.q), cut(self.a), cut(self.b))


def source_coefficients(N: int, modes) -> tuple[np.ndarray, np.ndarray]:
    """Build ``(p, q)`` arrays from an iterable of ``(n, m, p, q)`` tuples."""
    p, q = mode_array(N), mode_array(N)
    for n, m, pv, qv in modes:
        if not (1 <= n <= N and abs(m) <= n):
            raise ValueError(f"source mode ({n}, {m}) outside the truncation")
        p[n - 1, m + N] = pv
        q[n - 1, m + N] = qv
    return p, q


def _direction(d: ArrayLike) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    if d.shape == (2,):
        th, ph = d
        return np.array([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)])
    if d.shape == (3,):
        nd = np.linalg.norm(d)
        if abs(nd - 1.0) > 1e-9:
            raise ValueError("direction vector must have unit length")
        return d / nd
    raise ValueError("direction must be (theta, phi) or a Cartesian 3-vector")


def planewave_excitation(omega: float, d: ArrayLike, P: ArrayLike, N: int) -> Excitation:
    """Boundary data of the plane wave ``E = exp(-i omega x.d) P`` on ``|x| = 2``.

    Parameters
    ----------
    omega : float
        Frequency.
    d : array_like
        Propagation direction, either ``(theta, phi)`` or a unit 3-vector.
    P : array_like
        Polarization, complex 3-vector with ``d . P = 0``.
    N : int
        Truncation degree.

    Returns
    -------
    Excitation
        With ``a`` and ``b`` (free-space coefficients) filled in.
    """
    dv = _direction(d)
    P = np.asarray(P, dtype=complex)
    if P.shape != (3,):
        raise ValueError("polarization must be a 3-vector")
    if abs(np.dot(dv, P)) > 1e-12:
        raise ValueError("polarization must be orthogonal to the direction (d . P = 0)")
    th = np.arctan2(np.hypot(dv[0], dv[1]), dv[2])
    ph = np.arctan2(dv[1], dv[0])
    a, b = mode_array(N), mode_array(N)
    f1, f2 = mode_array(N), mode_array(N)
    table = vsh_table(N, th, ph)
    for n in range(1, N + 1):
        bs = BesselSet(n, 2.0 * omega)
        s = np.sqrt(n * (n + 1.0))
        for m in range(-n, n + 1):
            _, u, v = table[n, m]
            a[n - 1, m + N] = -4.0 * np.pi / (s * 1j**n) * np.dot(np.conj(v), P)
            b[n - 1, m + N] = 4.0 * np.pi / (s * omega * 1j ** (n - 1)) * np.dot(np.conj(u), P)
        f1[n - 1] = a[n - 1] * bs.j
        f2[n - 1] = b[n - 1] * bs.J / 2.0
    return Excitation(f1=f1, f2=f2, a=a, b=b)


def free_space_solution(excitation: Excitation, omega: float) -> tuple[np.ndarray, np.ndarray]:
    """Coefficients ``(a, b)`` of the homogeneous-ball field with the same boundary data.

    ``a = f1 / j_n(2 omega)`` and ``b = 2 f2 / J_n(2 omega)``.

    Raises
    ------
    ResonanceError
        If ``j_n(2 omega)`` or ``J_n(2 omega)`` vanishes for a degree in use.
    """
    N = excitation.N
    a, b = mode_array(N), mode_array(N)
    for n in range(1, N + 1):
        bs = BesselSet(n, 2.0 * omega)
        if abs(bs.j) < 1e-14 or abs(bs.J) < 1e-14:
            raise ResonanceError(f"free-space resonance at omega={omega} for n={n}")
        a[n - 1] = excitation.f1[n - 1] / bs.j
        b[n - 1] = 2.0 * excitation.f2[n - 1] / bs.J
    return a, b


# ---------------------------------------------------------------------------
# Bessel data per degree


@dataclass(frozen=True)
class _LosslessData:
    b2: BesselSet  # argument 2 omega
    br: BesselSet  # argument omega rho
    bk: BesselSet  # argument k omega
    rho: float
    se: complex  # eps0^{-1/2}
    sm: complex  # mu0^{-1/2}
    k: complex


def _lossless_data(n: int, omega: float, rho: float, inner: InnerMedium) -> _LosslessData:
    k = inner.k
    return _LosslessData(
        b2=BesselSet(n, 2.0 * omega),
        br=BesselSet(n, omega * rho),
        bk=BesselSet(n, k * omega),
        rho=rho,
        se=1.0 / inner.sqrt_eps0,
        sm=1.0 / inner.sqrt_mu0,
        k=k,
    )


@dataclass(frozen=True)
class _LossyData:
    b2: BesselSet  # 2 omega
    br: BesselSet  # 2 omega rho
    bt: BesselSet  # k_tau omega
    bt2: BesselSet  # k_tau omega / 2
    bk2: BesselSet  # k omega / 2
    rho: float
    lp: LossyParams
    se0: complex
    sm0: complex
    set: complex  # eps_tau^{-1/2}
    smt: complex  # mu_tau^{-1/2}
    k: complex
    kt: complex
    mu0: complex


def _lossy_data(n: int, omega: float, rho: float, tau: float, inner: InnerMedium) -> _LossyData:
    lp = lossy_params(rho, tau)
    k = inner.k
    return _LossyData(
        b2=BesselSet(n, 2.0 * omega),
        br=BesselSet(n, 2.0 * omega * rho),
        bt=BesselSet(n, lp.k_tau * omega),
        bt2=BesselSet(n, lp.k_tau * omega / 2.0),
        bk2=BesselSet(n, k * omega / 2.0),
        rho=rho,
        lp=lp,
        se0=1.0 / inner.sqrt_eps0,
        sm0=1.0 / inner.sqrt_mu0,
        set=1.0 / np.sqrt(lp.eps_tau),
        smt=1.0 / np.sqrt(lp.mu_tau),
        k=k,
        kt=lp.k_tau,
        mu0=complex(inner.mu0),
    )


# ---------------------------------------------------------------------------
# closed-form factors


def _t_from(D: _LosslessData) -> tuple[complex, complex, complex, complex]:
    br, bk, rho, se, sm, k = D.br, D.bk, D.rho, D.se, D.sm, D.k
    den1 = sm * rho * br.h * bk.J - se * k * br.H * bk.j
    den3 = se * rho * br.h * bk.J - sm * k * br.H * bk.j
    t1 = (se * k * br.J * bk.j - sm * rho * br.j * bk.J) / den1
    t2 = (k * rho * br.J * br.h - k * rho * br.j * br.H) / den1
    t3 = (sm * k * br.J * bk.j - se * rho * br.j * bk.J) / den3
    t4 = (rho * br.J * br.h - rho * br.j * br.H) / den3
    return complex(t1), complex(t2), complex(t3), complex(t4)


def _tprime_from(D: _LosslessData) -> tuple[complex, complex, complex, complex]:
    br, bk, rho, se, sm, k = D.br, D.bk, D.rho, D.se, D.sm, D.k
    den1 = sm * rho * br.h * bk.J - se * k * br.H * bk.j
    den3 = se * rho * br.h * bk.J - sm * k * br.H * bk.j
    wk = bk.h * bk.J - bk.H * bk.j
    # Eliminating c and alpha from the source transmission relations gives
    # an extra factor eps0^{-1/2} mu0^{-1/2} = 1/k here; in t3' the analogous
    # factor eps0^{-1/2} mu0^{-1/2} k equals one.
    t1p = wk / (k * den1)
    t2p = (se * k * bk.h * br.H - sm * rho * bk.H * br.h) / den1
    t3p = wk / den3
    t4p = (sm * k * bk.h * br.H - se * rho * bk.H * br.h) / den3
    return complex(t1p), complex(t2p), complex(t3p), complex(t4p)


def t_factors(n: int, omega: float, rho: float, inner: InnerMedium) -> tuple[complex, ...]:
    """Ratios ``(t1, t2, t3, t4)`` with ``c = t1 gamma``, ``alpha = t2 gamma``,
    ``d = t3 eta`` and ``beta = t4 eta`` for the passive lossless cloak."""
    return _t_from(_lossless_data(n, omega, rho, inner))


def tprime_factors(n: int, omega: float, rho: float, inner: InnerMedium) -> tuple[complex, ...]:
    """Source ratios ``(t1', t2', t3', t4')``: ``c = t1 gamma + t1' p`` and so on."""
    return _tprime_from(_lossless_data(n, omega, rho, inner))


def _lossy_factors_from(D: _LossyData) -> dict[str, complex]:
    """Elimination factors for the lossy cloak.

    Electric polarization: ``c~ = l1 alpha + l1p p``, ``gamma~ = l2 alpha + l2p p``,
    then ``c = s1 gamma + s1p p`` and ``alpha = s2 gamma + s2p p``.
    Magnetic polarization: ``d~ = l3 beta + l3p q``, ``eta~ = l4 beta + l4p q``,
    then ``d = s3 eta + s3p q`` and ``beta = s4 eta + s4p q``.

    Combinations such as ``J(a) j(b) - j(a) J(b)`` that appear after
    substituting the ``r`` factors are evaluated with
    :func:`~regcloak.specfun.cross_jj` / :func:`~regcloak.specfun.cross_hh`;
    this is algebraically identical and avoids losing ``O(rho^2)`` digits.
    """
    bt, bt2, bk2, br = D.bt, D.bt2, D.bk2, D.br
    rho, mu_t, eps_t = D.rho, D.lp.mu_tau, D.lp.eps_tau
    sqe_t = np.sqrt(eps_t)
    sqm_t = np.sqrt(mu_t)
    ratio_e = sqe_t * D.se0  # eps_tau^{1/2} eps0^{-1/2}
    ratio_m = mu_t / D.mu0
    # mu_tau = 2 rho holds by construction; the simplifications below use it
    A_ = 2.0 * rho * sqe_t  # equals mu_tau^{1/2} k_tau

    # inner interface |x| = 1/2, electric polarization
    w2 = bt2.h * bt2.J - bt2.H * bt2.j
    l1 = ratio_e * (bk2.j * bt2.J - ratio_m * bk2.J * bt2.j) / w2
    l2 = ratio_e * (ratio_m * bk2.J * bt2.h - bk2.j * bt2.H) / w2
    l1p = ratio_e * (bk2.h * bt2.J - ratio_m * bk2.H * bt2.j) / w2
    l2p = ratio_e * (ratio_m * bk2.H * bt2.h - bk2.h * bt2.H) / w2
    r1 = l1 * bt.h + l2 * bt.j
    r2 = l1 * bt.H + l2 * bt.J
    r1p = l1p * bt.h + l2p * bt.j
    r2p = l1p * bt.H + l2p * bt.J

    xjj = cross_jj(br, bt)
    xhh = cross_hh(br, bt)
    # s1 = (mu_t J_r r1 - 2 rho j_r r2) / (2 rho h_r r2 - mu_t H_r r1)
    num_s1 = 2.0 * rho * (l1 * (br.J * bt.h - br.j * bt.H) + l2 * xjj)
    den_s = 2.0 * rho * (-l1 * xhh + l2 * (br.h * bt.J - br.H * bt.j))
    s1 = num_s1 / den_s
    s2 = 2.0 * rho * mu_t * sqe_t * (-br.j * br.H + br.J * br.h) / den_s
    det_s = sqe_t * den_s
    wt = bt.h * bt.J - bt.H * bt.j
    # l2 l1p - l1 l2p collapses to a product of same-argument Wronskian forms
    lcross = ratio_e**2 * ratio_m * (bk2.h * bk2.J - bk2.H * bk2.j) / w2
    s1p = lcross * wt / det_s
    s2p = A_ * (l1p * xhh + l2p * (br.H * bt.j - br.h * bt.J)) / det_s

    # inner interface, magnetic polarization
    ratio_e_inv = 1.0 / ratio_e  # eps0^{1/2} eps_tau^{-1/2}
    D2 = -w2
    l3 = (ratio_e * bk2.J * bt2.j - ratio_e_inv * bk2.j * bt2.J) / D2
    l4 = (ratio_e_inv * bk2.j * bt2.H - ratio_e * bk2.J * bt2.h) / D2
    l3p = (ratio_e * bk2.H * bt2.j - ratio_e_inv * bk2.h * bt2.J) / D2
    l4p = (ratio_e_inv * bk2.h * bt2.H - ratio_e * bk2.H * bt2.h) / D2
    r3 = l3 * bt.H + l4 * bt.J
    r4 = l3 * bt.h + l4 * bt.j
    r3p = l3p * bt.H + l4p * bt.J
    r4p = l3p * bt.h + l4p * bt.j
    a1, a2 = D.set * r3, D.smt * D.kt * r4
    a1p, a2p = D.set * r3p, D.smt * D.kt * r4p
    det_m = br.H * a2 - 2.0 * rho * br.h * a1
    s3 = (2.0 * rho * br.j * a1 - br.J * a2) / det_m
    s4 = 2.0 * rho * (br.H * br.j - br.J * br.h) / det_m
    # l3 l4p - l4 l3p reduces like its electric counterpart
    s3p = D.set * D.smt * D.kt * (-(bk2.h * bk2.J - bk2.H * bk2.j) / w2) * wt / det_m
    s4p = (2.0 * rho * br.h * a1p - br.H * a2p) / det_m

    names = "l1 l2 l1p l2p r1 r2 r1p r2p s1 s2 s1p s2p l3 l4 l3p l4p r3 r4 r3p r4p s3 s4 s3p s4p"
    vals = (l1, l2, l1p, l2p, r1, r2, r1p, r2p, s1, s2, s1p, s2p,
            l3, l4, l3p, l4p, r3, r4, r3p, r4p, s3, s4, s3p, s4p)
    return {k_: complex(v) for k_, v in zip(names.split(), vals)}


def _layer_from_outer(D: _LossyData, c, gamma, d, eta):
    """Layer coefficients from the exterior ones via the ``|x| = 1`` relations.

    Used for source-driven modes, where ``gamma~ = l2 alpha + l2p p`` would
    subtract two nearly equal terms.
    """
    br, bt, rho = D.br, D.bt, D.rho
    sqe_t = np.sqrt(D.lp.eps_tau)
    A_ = 2.0 * rho * sqe_t
    wt = bt.h * bt.J - bt.H * bt.j
    c_t = A_ * (c * (br.h * bt.J - br.H * bt.j) - gamma * cross_jj(br, bt)) / wt
    gamma_t = A_ * (c * cross_hh(br, bt) + gamma * (br.J * bt.h - br.j * bt.H)) / wt
    F1 = sqe_t * (br.H * d + br.J * eta)
    F2 = 2.0 * rho / sqe_t * (br.h * d + br.j * eta)
    d_t = (F2 * bt.J - F1 * bt.j) / wt
    eta_t = (F1 * bt.h - F2 * bt.H) / wt
    return c_t, gamma_t, d_t, eta_t


def lossy_factors(n: int, omega: float, rho: float, tau: float, inner: InnerMedium) -> dict[str, complex]:
    """Elimination factors of the lossy cloak (see :func:`_lossy_factors_from`)."""
    return _lossy_factors_from(_lossy_data(n, omega, rho, tau, inner))


# ---------------------------------------------------------------------------
# raw linear systems


def _lossless_rows(D: _LosslessData):
    """Rows of ``A_n`` and ``B_n`` and right-hand-side builders (lossless).

    Unknown order: ``(c, alpha, gamma)`` and ``(d, beta, eta)``. Entries are
    whatever scalar type the data carries, so the same assembly serves the
    double and the extended-precision paths.
    """
    b2, br, bk, rho, se, sm, k = D.b2, D.br, D.bk, D.rho, D.se, D.sm, D.k
    A = [
        [b2.h, 0, b2.j],
        [rho * br.h, -se * bk.j, rho * br.j],
        [k * br.H, -sm * bk.J, k * br.J],
    ]
    B = [
        [b2.H, 0, b2.J],
        [br.H, -se * bk.J, br.J],
        [rho * br.h, -sm * k * bk.j, rho * br.j],
    ]

    def rhsA(f1, p):
        return [f1, se * p * bk.h, sm * p * bk.H]

    def rhsB(f2, q):
        return [2 * f2, se * q * bk.H, sm * k * q * bk.h]

    return A, B, rhsA, rhsB


def _lossy_rows(D: _LossyData):
    """Rows of the 5x5 lossy systems and right-hand-side builders.

    Unknown order: ``(c, gamma, c~, gamma~, alpha)`` and ``(d, eta, d~, eta~, beta)``.
    """
    b2, br, bt, bt2, bk2 = D.b2, D.br, D.bt, D.bt2, D.bk2
    rho, se0, sm0, set_, smt, k, kt = D.rho, D.se0, D.sm0, D.set, D.smt, D.k, D.kt
    A = [
        [b2.h, b2.j, 0, 0, 0],
        [-2 * rho * br.h, -2 * rho * br.j, set_ * bt.h, set_ * bt.j, 0],
        [-kt * br.H, -kt * br.J, smt * bt.H, smt * bt.J, 0],
        [0, 0, set_ * bt2.h, set_ * bt2.j, -se0 * bk2.j],
        [0, 0, smt * k * bt2.H, smt * k * bt2.J, -sm0 * kt * bk2.J],
    ]
    B = [
        [b2.H, b2.J, 0, 0, 0],
        [-br.H, -br.J, set_ * bt.H, set_ * bt.J, 0],
        [-2 * rho * br.h, -2 * rho * br.j, smt * kt * bt.h, smt * kt * bt.j, 0],
        [0, 0, set_ * bt2.H, set_ * bt2.J, -se0 * bk2.J],
        [0, 0, smt * kt * bt2.h, smt * kt * bt2.j, -sm0 * k * bk2.j],
    ]

    def rhsA(f1, p):
        z = 0 * f1
        return [f1, z, z, se0 * p * bk2.h, sm0 * kt * p * bk2.H]

    def rhsB(f2, q):
        z = 0 * f2
        return [2 * f2, z, z, se0 * q * bk2.H, sm0 * k * q * bk2.h]

    return A, B, rhsA, rhsB


def _as_double(rows_fn, D):
    A, B, rhsA, rhsB = rows_fn(D)

    def wrap(builder):
        return lambda f, s: np.stack(np.broadcast_arrays(*builder(f, s))).astype(complex)

    return np.array(A, dtype=complex), np.array(B, dtype=complex), wrap(rhsA), wrap(rhsB)


def _lossless_systems(D: _LosslessData):
    """Double-precision matrices and stacked right-hand-side builders."""
    return _as_double(_lossless_rows, D)


def _lossy_systems(D: _LossyData):
    """Double-precision 5x5 matrices and stacked right-hand-side builders."""
    return _as_double(_lossy_rows, D)


# extended-precision data for the direct path


class _MpBessel:
    """Bessel data of order ``n >= 1`` at ``z`` in mpmath, mirroring :class:`BesselSet`."""

    __slots__ = ("z", "j", "h", "J", "H", "j_next", "h_prev")

    def __init__(self, n: int, z):
        z = mpmath.mpc(z)
        self.z = z
        c = mpmath.sqrt(mpmath.pi / (2 * z))
        half = mpmath.mpf(1) / 2
        jn = c * mpmath.besselj(n + half, z)
        jm = c * mpmath.besselj(n - half, z)
        hn = jn + 1j * c * mpmath.bessely(n + half, z)
        hm = jm + 1j * c * mpmath.bessely(n - half, z)
        self.j, self.h = jn, hn
        self.j_next = c * mpmath.besselj(n + 1 + half, z)
        self.h_prev = hm
        self.J = z * jm - n * jn
        self.H = z * hm - n * hn


def _mp_inner(inner: InnerMedium):
    se = mpmath.sqrt(mpmath.mpc(inner.eps0))
    sm = mpmath.sqrt(mpmath.mpc(inner.mu0))
    return se, sm, sm * se


def _lossless_data_mp(n: int, omega: float, rho: float, inner: InnerMedium) -> _LosslessData:
    om, r = mpmath.mpf(omega), mpmath.mpf(rho)
    se, sm, k = _mp_inner(inner)
    return _LosslessData(
        b2=_MpBessel(n, 2 * om), br=_MpBessel(n, om * r), bk=_MpBessel(n, k * om),
        rho=r, se=1 / se, sm=1 / sm, k=k,
    )


def _lossy_data_mp(n: int, omega: float, rho: float, tau: float, inner: InnerMedium) -> _LossyData:
    om, r, t = mpmath.mpf(omega), mpmath.mpf(rho), mpmath.mpf(tau)
    se, sm, k = _mp_inner(inner)
    mu_t = 2 * r
    eps_t = mpmath.mpc(2 * r, 2 * r * t)
    kt = mpmath.sqrt(mu_t * eps_t)
    return _LossyData(
        b2=_MpBessel(n, 2 * om), br=_MpBessel(n, 2 * om * r), bt=_MpBessel(n, kt * om),
        bt2=_MpBessel(n, kt * om / 2), bk2=_MpBessel(n, k * om / 2),
        rho=r, lp=lossy_params(rho, tau), se0=1 / se, sm0=1 / sm,
        set=1 / mpmath.sqrt(eps_t), smt=1 / mpmath.sqrt(mu_t), k=k, kt=kt, mu0=mpmath.mpc(inner.mu0),
    )


def system_matrices(n: int, scenario: CloakScenario):
    """Raw matrices ``(A_n, B_n)`` and right-hand-side builders for degree ``n``.

    The builders take the per-``m`` boundary data and source coefficients
    and return the stacked right-hand side (rows by columns of ``m``).
    """
    if scenario.lossy:
        D = _lossy_data(n, scenario.omega, scenario.rho, scenario.scheme.tau, scenario.inner)
        return _lossy_systems(D)
    D = _lossless_data(n, scenario.omega, scenario.rho, scenario.inner)
    return _lossless_systems(D)


def equilibrated_det(M: np.ndarray) -> float:
    """``|det M|`` after scaling rows, then columns, to unit max-abs entry.

    A row-only normalization reports tiny values for matrices that are
    merely badly scaled (the lossy systems mix ``h_n(2 omega rho)`` with
    O(1) entries); the two-sided version measures near-singularity.
    """
    A = np.abs(M)
    r = np.max(A, axis=1)
    c = np.max(A / r[:, None], axis=0)
    if np.any(r == 0) or np.any(c == 0):
        return 0.0
    R = M / r[:, None] / c[None, :]
    return float(abs(np.linalg.det(R)))


def _det_and_flag(M: np.ndarray) -> tuple[complex, bool]:
    det = complex(np.linalg.det(M))
    return det, bool(equilibrated_det(M) < RESONANCE_THRESHOLD)


def _scenario_for(n: int, omega: float, rho: float, inner: InnerMedium, tau: float | None) -> CloakScenario:
    scheme = Lossless(rho) if tau is None else Lossy(rho, tau)
    return CloakScenario(scheme=scheme, inner=inner, omega=omega, N=max(n, 1))


def det_A(n: int, omega: float, rho: float, inner: InnerMedium, tau: float | None = None) -> complex:
    """Determinant of the electric-polarization system (``tau`` given: lossy 5x5)."""
    A, _, _, _ = system_matrices(n, _scenario_for(n, omega, rho, inner, tau))
    return complex(np.linalg.det(A))


def det_B(n: int, omega: float, rho: float, inner: InnerMedium, tau: float | None = None) -> complex:
    """Determinant of the magnetic-polarization system (``tau`` given: lossy 5x5)."""
    _, B, _, _ = system_matrices(n, _scenario_for(n, omega, rho, inner, tau))
    return complex(np.linalg.det(B))


def _working_digits(*mats: np.ndarray) -> int:
    """Decimal digits needed to resolve the dynamic range of the matrices."""
    mag = np.concatenate([np.abs(M[M != 0]) for M in mats])
    mag = mag[np.isfinite(mag)]
    spread = float(np.log10(mag.max() / mag.min())) if mag.size else 0.0
    return 30 + int(np.ceil(2.0 * spread))


def _direct_solve(rows_fn, make_data, dps: int, f, src) -> tuple[np.ndarray, np.ndarray]:
    """Solve both polarizations of one degree for every ``m`` in extended precision.

    The systems are strongly graded (for instance ``c ~ rho^(2n+1)`` next to
    ``gamma ~ 1``) and source-driven modes make the solution a near
    cancellation of two large parts, so matrix entries, Bessel values and
    medium constants are all computed at ``dps`` digits (``make_data`` is
    called inside the precision context). ``f`` and ``src`` are pairs
    ``(f1, f2)`` and ``(p, q)`` of per-``m`` arrays.
    """
    outs = []
    with mpmath.workdps(dps):
        A, B, rhsA, rhsB = rows_fn(make_data())
        for M, builder, fv, sv in ((A, rhsA, f[0], src[0]), (B, rhsB, f[1], src[1])):
            try:
                # factor once for both unit right-hand sides; same guard bits as lu_solve
                with mpmath.extraprec(10):
                    F, perm = mpmath.mp.LU_decomp(mpmath.matrix(M))
                    LU = [
                        mpmath.mp.U_solve(F, mpmath.mp.L_solve(F, mpmath.matrix(builder(*unit)), perm))
                        for unit in ((mpmath.mpf(1), mpmath.mpf(0)), (mpmath.mpf(0), mpmath.mpf(1)))
                    ]
            except ZeroDivisionError:
                outs.append(np.full((len(M), fv.size), np.nan + 0j))
                continue
            X = np.empty((len(M), fv.size), dtype=complex)
            for col, (a, b) in enumerate(zip(fv, sv)):
                am, bm = mpmath.mpc(complex(a)), mpmath.mpc(complex(b))
                for i in range(len(M)):
                    X[i, col] = complex(LU[0][i] * am + LU[1][i] * bm)
            outs.append(X)
    return outs[0], outs[1]


# ---------------------------------------------------------------------------
# solutions


_COEFFS_LOSSLESS = ("gamma", "eta", "c", "d", "alpha", "beta")
_COEFFS_LOSSY = _COEFFS_LOSSLESS + ("gamma_t", "eta_t", "c_t", "d_t")


@dataclass
class ModeSolution:
    """All coefficients of one mode ``(n, m)``.

    Layer coefficients (``gamma_t`` and so on) are ``None`` for the
    lossless scheme. ``factors`` records the elimination factors of the
    degree when the closed-form path was used.
    """

    n: int
    m: int
    gamma: complex
    eta: complex
    c: complex
    d: complex
    alpha: complex
    beta: complex
    detA: complex
    detB: complex
    resonant: bool = False
    gamma_t: complex | None = None
    eta_t: complex | None = None
    c_t: complex | None = None
    d_t: complex | None = None
    factors: dict = field(default_factory=dict)


@dataclass
class Solution:
    """Coefficients of all modes ``n <= N`` in the ``(N, 2N+1)`` layout."""

    scenario: CloakScenario
    coeffs: dict[str, np.ndarray]
    detA: np.ndarray
    detB: np.ndarray
    resonantA: np.ndarray
    resonantB: np.ndarray
    factors: list[dict]
    method: str

    @property
    def N(self) -> int:
        return self.detA.shape[0]

    @property
    def resonant(self) -> bool:
        return bool(np.any(self.resonantA) or np.any(self.resonantB))

    def __getattr__(self, name: str):
        coeffs = self.__dict__.get("coeffs", {})
        if name in coeffs:
            return coeffs[name]
        raise AttributeError(name)

    def mode(self, n: int, m: int) -> ModeSolution:
        N = self.N
        if not (1 <= n <= N and abs(m) <= n):
            raise ValueError(f"mode ({n}, {m}) not in solution")
        get = {k: complex(v[n - 1, m + N]) for k, v in self.coeffs.items()}
        return ModeSolution(
            n=n,
            m=m,
            detA=complex(self.detA[n - 1]),
            detB=complex(self.detB[n - 1]),
            resonant=bool(self.resonantA[n - 1] or self.resonantB[n - 1]),
            factors=self.factors[n - 1],
            **get,
        )


def _solve_lossless_degree(n, scenario, f1, f2, p, q, method):
    D = _lossless_data(n, scenario.omega, scenario.rho, scenario.inner)
    A, B, rhsA, rhsB = _lossless_systems(D)
    detA, resA = _det_and_flag(A)
    detB, resB = _det_and_flag(B)
    out: dict[str, np.ndarray] = {}
    factors: dict = {}
    if method == "closed":
        t1, t2, t3, t4 = _t_from(D)
        t1p, t2p, t3p, t4p = _tprime_from(D)
        b2 = D.b2
        with np.errstate(all="ignore"):
            gamma = (f1 - p * t1p * b2.h) / (t1 * b2.h + b2.j)
            eta = (2.0 * f2 - t3p * q * b2.H) / (t3 * b2.H + b2.J)
        out["gamma"], out["eta"] = gamma, eta
        out["c"] = t1 * gamma + t1p * p
        out["alpha"] = t2 * gamma + t2p * p
        out["d"] = t3 * eta + t3p * q
        out["beta"] = t4 * eta + t4p * q
        factors = dict(t1=t1, t2=t2, t3=t3, t4=t4, t1p=t1p, t2p=t2p, t3p=t3p, t4p=t4p)
    else:
        def make():
            return _lossless_data_mp(n, scenario.omega, scenario.rho, scenario.inner)

        xa, xb = _direct_solve(_lossless_rows, make, _working_digits(A, B), (f1, f2), (p, q))
        out["c"], out["alpha"], out["gamma"] = xa
        out["d"], out["beta"], out["eta"] = xb
    return out, detA, detB, resA, resB, factors


def _solve_lossy_degree(n, scenario, f1, f2, p, q, method):
    D = _lossy_data(n, scenario.omega, scenario.rho, scenario.scheme.tau, scenario.inner)
    A, B, rhsA, rhsB = _lossy_systems(D)
    detA, resA = _det_and_flag(A)
    detB, resB = _det_and_flag(B)
    out: dict[str, np.ndarray] = {}
    factors: dict = {}
    if method == "closed":
        F = _lossy_factors_from(D)
        b2 = D.b2
        with np.errstate(all="ignore"):
            gamma = (f1 - F["s1p"] * p * b2.h) / (F["s1"] * b2.h + b2.j)
            eta = (2.0 * f2 - F["s3p"] * q * b2.H) / (F["s3"] * b2.H + b2.J)
        c = F["s1"] * gamma + F["s1p"] * p
        alpha = F["s2"] * gamma + F["s2p"] * p
        d = F["s3"] * eta + F["s3p"] * q
        beta = F["s4"] * eta + F["s4p"] * q
        out.update(gamma=gamma, eta=eta, c=c, d=d, alpha=alpha, beta=beta)
        c_t, gamma_t = F["l1"] * alpha, F["l2"] * alpha
        d_t, eta_t = F["l3"] * beta, F["l4"] * beta
        if np.any(p != 0) or np.any(q != 0):
            oc, og, od, oe = _layer_from_outer(D, c, gamma, d, eta)
            c_t = np.where(p != 0, oc, c_t)
            gamma_t = np.where(p != 0, og, gamma_t)
            d_t = np.where(q != 0, od, d_t)
            eta_t = np.where(q != 0, oe, eta_t)
        out.update(c_t=c_t, gamma_t=gamma_t, d_t=d_t, eta_t=eta_t)
        factors = F
    else:
        def make():
            return _lossy_data_mp(n, scenario.omega, scenario.rho, scenario.scheme.tau, scenario.inner)

        xa, xb = _direct_solve(_lossy_rows, make, _working_digits(A, B), (f1, f2), (p, q))
        out["c"], out["gamma"], out["c_t"], out["gamma_t"], out["alpha"] = xa
        out["d"], out["eta"], out["d_t"], out["eta_t"], out["beta"] = xb
    return out, detA, detB, resA, resB, factors


def solve(
    scenario: CloakScenario,
    excitation: Excitation,
    method: Method = "closed",
    degrees=None,
) -> Solution:
    """Solve every mode ``n <= N`` of a scenario.

    Parameters
    ----------
    scenario : CloakScenario
    excitation : Excitation
        Must have the same truncation ``N`` as the scenario.
    method : {"closed", "direct"}
        Elimination formulas or raw linear solves.
    degrees : iterable of int, optional
        Restrict the work to these degrees; other rows stay zero.

    Returns
    -------
    Solution
    """
    if excitation.N != scenario.N:
        raise ValueError(f"excitation truncation N={excitation.N} does not match scenario N={scenario.N}")
    if method not in ("closed", "direct"):
        raise ValueError(f"unknown method {method!r}")
    N = scenario.N
    names = _COEFFS_LOSSY if scenario.lossy else _COEFFS_LOSSLESS
    coeffs = {k: mode_array(N) for k in names}
    detA = np.zeros(N, dtype=complex)
    detB = np.zeros(N, dtype=complex)
    resA = np.zeros(N, dtype=bool)
    resB = np.zeros(N, dtype=bool)
    factors: list[dict] = [{} for _ in range(N)]
    worker = _solve_lossy_degree if scenario.lossy else _solve_lossless_degree
    for n in range(1, N + 1) if degrees is None else sorted(set(degrees)):
        if not 1 <= n <= N:
            raise ValueError(f"degree {n} outside 1..{N}")
        sl = slice(N - n, N + n + 1)
        out, dA, dB, rA, rB, fac = worker(
            n, scenario,
            excitation.f1[n - 1, sl], excitation.f2[n - 1, sl],
            excitation.p[n - 1, sl], excitation.q[n - 1, sl],
            method,
        )
        for k_, v in out.items():
            coeffs[k_][n - 1, sl] = v
        detA[n - 1], detB[n - 1], resA[n - 1], resB[n - 1] = dA, dB, rA, rB
        factors[n - 1] = fac
    return Solution(scenario, coeffs, detA, detB, resA, resB, factors, method)


def _single_mode(n, m, scenario, excitation, method, want_lossy, want_source):
    if scenario.lossy != want_lossy:
        raise ValueError("scenario scheme does not match this solver")
    if not want_source and excitation.has_source:
        raise ValueError("passive solver called with a nonzero source; use the active solver")
    if not (1 <= n <= excitation.N and abs(m) <= n):
        raise ValueError(f"invalid mode ({n}, {m})")
    N = excitation.N
    col = m + N
    args = [excitation.f1[n - 1, col : col + 1], excitation.f2[n - 1, col : col + 1]]
    if want_source:
        args += [excitation.p[n - 1, col : col + 1], excitation.q[n - 1, col : col + 1]]
    else:
        args += [np.zeros(1, dtype=complex), np.zeros(1, dtype=complex)]
    worker = _solve_lossy_degree if want_lossy else _solve_lossless_degree
    out, dA, dB, rA, rB, fac = worker(n, scenario, *args, method)
    return ModeSolution(
        n=n, m=m, detA=dA, detB=dB, resonant=rA or rB, factors=fac,
        **{k_: complex(v[0]) for k_, v in out.items()},
    )


def solve_lossless_passive(mode, scenario: CloakScenario, excitation: Excitation,
                           method: Method = "closed") -> ModeSolution:
    """Coefficients of one mode ``(n, m)`` for the passive lossless cloak."""
    return _single_mode(*mode, scenario, excitation, method, want_lossy=False, want_source=False)


def solve_lossless_active(mode, scenario: CloakScenario, excitation: Excitation,
                          method: Method = "closed") -> ModeSolution:
    """Coefficients of one mode for the lossless cloak with an internal source."""
    return _single_mode(*mode, scenario, excitation, method, want_lossy=False, want_source=True)


def solve_lossy_passive(mode, scenario: CloakScenario, excitation: Excitation,
                        method: Method = "closed") -> ModeSolution:
    """Coefficients of one mode for the passive lossy cloak."""
    return _single_mode(*mode, scenario, excitation, method, want_lossy=True, want_source=False)


def solve_lossy_active(mode, scenario: CloakScenario, excitation: Excitation,
                       method: Method = "closed") -> ModeSolution:
    """Coefficients of one mode for the lossy cloak with an internal source."""
    return _single_mode(*mode, scenario, excitation, method, want_lossy=True, want_source=True)


def residual(n: int, scenario: CloakScenario, excitation: Excitation, solution: Solution) -> float:
    """Largest normwise relative residual of the raw systems of degree ``n``.

    For each polarization and each ``m`` this is
    ``|M x - b| / (|M| |x| + |b|)`` in the infinity norm, with the rows of
    ``M`` first scaled to unit max-abs entry.
    """
    N = scenario.N
    sl = slice(N - n, N + n + 1)
    A, B, rhsA, rhsB = system_matrices(n, scenario)
    C = solution.coeffs
    if scenario.lossy:
        xa = np.stack([C["c"][n - 1, sl], C["gamma"][n - 1, sl], C["c_t"][n - 1, sl],
                       C["gamma_t"][n - 1, sl], C["alpha"][n - 1, sl]])
        xb = np.stack([C["d"][n - 1, sl], C["eta"][n - 1, sl], C["d_t"][n - 1, sl],
                       C["eta_t"][n - 1, sl], C["beta"][n - 1, sl]])
    else:
        xa = np.stack([C["c"][n - 1, sl], C["alpha"][n - 1, sl], C["gamma"][n - 1, sl]])
        xb = np.stack([C["d"][n - 1, sl], C["beta"][n - 1, sl], C["eta"][n - 1, sl]])
    worst = 0.0
    for M, x, b in ((A, xa, rhsA(excitation.f1[n - 1, sl], excitation.p[n - 1, sl])),
                    (B, xb, rhsB(excitation.f2[n - 1, sl], excitation.q[n - 1, sl]))):
        s = np.max(np.abs(M), axis=1)
        s = np.where(s > 0, s, 1.0)
        Ms, bs = M / s[:, None], b / s[:, None]
        r = np.max(np.abs(Ms @ x - bs), axis=0)
        scale = np.max(np.sum(np.abs(Ms), axis=1)) * np.max(np.abs(x), axis=0) + np.max(np.abs(bs), axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            rel = np.where(scale > 0, r / np.where(scale > 0, scale, 1.0), 0.0)
        worst = max(worst, float(np.max(rel)))
    return worst
