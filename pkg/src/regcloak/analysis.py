"""Measured quantities: boundary error, convergence rates, sweeps and field samples.

The central quantity is the deviation of the tangential magnetic trace on
``|x| = 2`` from the free-space trace,

    xhat x H_rho - xhat x H = sum_nm g1_nm U_n^m + g2_nm V_n^m,

measured in the ``H^{-1/2}(Div)`` norm through the mode-wise identity in
:func:`hdiv_norm`. Three evaluations of ``(g1, g2)`` are available:

``"stable"`` (default)
    Elimination formulas in which the nearly equal parts of the
    difference have been cancelled analytically, for example
    ``g2 = sqrt(n(n+1)) w(2 omega) (a t1 + t1' p) / (2 i omega (t1 h + j))``.
``"trace"``
    The literal difference of the two traces from solved coefficients.
    It loses all digits once ``g`` drops below roughly ``1e-16 |b|``,
    which happens for high degrees at small ``rho``.
``"det"``
    Determinant forms (lossless only), a third independent route.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Literal, Sequence

import numpy as np
from numpy.typing import ArrayLike
from scipy.optimize import minimize_scalar

from . import media
from .harmonics import iter_vsh, spherical_coords, sph_frame
from .media import InnerMedium
from .modesolver import (
    CloakScenario,
    Excitation,
    Solution,
    _det_and_flag,
    _lossless_data,
    _lossy_data,
    _lossy_factors_from,
    _t_from,
    _tprime_from,
    free_space_solution,
    mode_array,
    solve,
    system_matrices,
)
from .specfun import BesselSet, sph_jh_table

__all__ = [
    "BoundaryDeviation",
    "BoundaryError",
    "SweepRecord",
    "BustingResult",
    "boundary_deviation",
    "hdiv_norm",
    "boundary_error",
    "convergence_rate",
    "loglog_slope",
    "rho_sweep",
    "omega_sweep",
    "find_busting_mu0",
    "relative_det",
    "interface_cauchy_norm",
    "l2_field_deviation",
    "slice_points",
    "field_slice",
]

DeviationForm = Literal["stable", "trace", "det"]


# ---------------------------------------------------------------------------
# boundary deviation and its norm


@dataclass
class BoundaryDeviation:
    """Per-mode coefficients of the magnetic trace deviation on ``|x| = 2``.

    ``g1`` and ``g2`` use the ``(N, 2N+1)`` layout of the solver.
    ``resonantA`` / ``resonantB`` flag degrees whose systems are nearly
    singular; ``detA`` / ``detB`` hold the raw determinants.
    """

    g1: np.ndarray
    g2: np.ndarray
    detA: np.ndarray = field(default=None)  # type: ignore[assignment]
    detB: np.ndarray = field(default=None)  # type: ignore[assignment]
    resonantA: np.ndarray = field(default=None)  # type: ignore[assignment]
    resonantB: np.ndarray = field(default=None)  # type: ignore[assignment]

    @property
    def N(self) -> int:
        return self.g1.shape[0]

    @property
    def resonant(self) -> bool:
        flags = [x for x in (self.resonantA, self.resonantB) if x is not None]
        return bool(any(np.any(x) for x in flags))

    def restrict(self, degrees: Iterable[int]) -> "BoundaryDeviation":
        """Copy with every degree outside ``degrees`` zeroed."""
        keep = np.zeros(self.N, dtype=bool)
        for n in degrees:
            keep[n - 1] = True
        return BoundaryDeviation(
            np.where(keep[:, None], self.g1, 0),
            np.where(keep[:, None], self.g2, 0),
            self.detA, self.detB,
            None if self.resonantA is None else self.resonantA & keep,
            None if self.resonantB is None else self.resonantB & keep,
        )


def _free_space(excitation: Excitation, omega: float) -> tuple[np.ndarray, np.ndarray]:
    if excitation.a is not None and excitation.b is not None:
        return excitation.a, excitation.b
    return free_space_solution(excitation, omega)


def _elimination_factors(n: int, scenario: CloakScenario):
    """``(x1, x1p, x3, x3p)``: ``c = x1 gamma + x1p p`` and ``d = x3 eta + x3p q``."""
    if scenario.lossy:
        D = _lossy_data(n, scenario.omega, scenario.rho, scenario.scheme.tau, scenario.inner)
        F = _lossy_factors_from(D)
        return F["s1"], F["s1p"], F["s3"], F["s3p"]
    D = _lossless_data(n, scenario.omega, scenario.rho, scenario.inner)
    t1, _, t3, _ = _t_from(D)
    t1p, _, t3p, _ = _tprime_from(D)
    return t1, t1p, t3, t3p


def boundary_deviation(
    scenario: CloakScenario,
    excitation: Excitation,
    solution: Solution | None = None,
    form: DeviationForm = "stable",
    degrees: Iterable[int] | None = None,
) -> BoundaryDeviation:
    """Coefficients ``(g1, g2)`` of the trace deviation on ``|x| = 2``.

    Parameters
    ----------
    scenario, excitation
        Problem description; the truncations must agree.
    solution : Solution, optional
        Used by ``form="trace"``; solved on demand otherwise.
    form : {"stable", "trace", "det"}
        Evaluation route, see the module docstring.
    degrees : iterable of int, optional
        Only these degrees are evaluated; the rest stay zero.

    Returns
    -------
    BoundaryDeviation
    """
    if excitation.N != scenario.N:
        raise ValueError(f"excitation truncation N={excitation.N} does not match scenario N={scenario.N}")
    if form == "det" and scenario.lossy:
        raise ValueError("determinant forms exist for the lossless scheme only")
    if form not in ("stable", "trace", "det"):
        raise ValueError(f"unknown deviation form {form!r}")
    N, om = scenario.N, scenario.omega
    degs = range(1, N + 1) if degrees is None else sorted(set(degrees))
    a, b = _free_space(excitation, om)
    if form == "trace" and solution is None:
        solution = solve(scenario, excitation, degrees=degs)
    g1, g2 = mode_array(N), mode_array(N)
    detA = np.zeros(N, dtype=complex)
    detB = np.zeros(N, dtype=complex)
    resA = np.zeros(N, dtype=bool)
    resB = np.zeros(N, dtype=bool)
    for n in degs:
        sl = slice(N - n, N + n + 1)
        s = math.sqrt(n * (n + 1.0))
        b2 = BesselSet(n, 2.0 * om)
        A, B, _, _ = system_matrices(n, scenario)
        detA[n - 1], resA[n - 1] = _det_and_flag(A)
        detB[n - 1], resB[n - 1] = _det_and_flag(B)
        an, bn = a[n - 1, sl], b[n - 1, sl]
        p, q = excitation.p[n - 1, sl], excitation.q[n - 1, sl]
        if form == "trace":
            C = {k: v[n - 1, sl] for k, v in solution.coeffs.items()}
            g1[n - 1, sl] = om / 1j * s * (bn * b2.j - C["eta"] * b2.j - C["d"] * b2.h)
            g2[n - 1, sl] = s / (2j * om) * (an * b2.J - C["gamma"] * b2.J - C["c"] * b2.H)
        elif form == "stable":
            x1, x1p, x3, x3p = _elimination_factors(n, scenario)
            w2 = b2.h * b2.J - b2.H * b2.j  # equals -i / (2 omega)
            g1[n - 1, sl] = -(om * s / 1j) * w2 * (bn * x3 + x3p * q) / (x3 * b2.H + b2.J)
            g2[n - 1, sl] = s / (2j * om) * w2 * (an * x1 + x1p * p) / (x1 * b2.h + b2.j)
        else:
            g1[n - 1, sl], g2[n - 1, sl] = _g_det_form(n, scenario, an, bn, p, q, detA[n - 1], detB[n - 1])
    return BoundaryDeviation(g1, g2, detA, detB, resA, resB)


def _g_det_form(n, scenario, an, bn, p, q, dA, dB):
    """Determinant forms of ``(g1, g2)`` for the lossless scheme.

    The overall sign of ``g2`` follows the column order ``(c, alpha, gamma)``
    of ``A_n``; the source term carries ``mu0^{1/2} omega W_n(k omega)``.
    """
    om, rho, inner = scenario.omega, scenario.rho, scenario.inner
    s = math.sqrt(n * (n + 1.0))
    b2, br, bk = BesselSet(n, 2.0 * om), BesselSet(n, om * rho), BesselSet(n, inner.k * om)
    W2 = b2.j * b2.hp - b2.h * b2.jp
    Wk = bk.j * bk.hp - bk.h * bk.jp
    se, sm = inner.sqrt_eps0, inner.sqrt_mu0
    e0, mu0, k = inner.eps0, inner.mu0, inner.k
    g1 = -2j * s * om**2 * W2 / (se * dB) * (bn * (e0 * br.J * bk.j - rho * br.j * bk.J) - se * q * k * om * Wk)
    g2 = -1j * s * W2 / (sm * dA) * (an * (mu0 * br.J * bk.j - rho * br.j * bk.J) - sm * p * om * Wk)
    return g1, g2


def hdiv_norm(deviation: BoundaryDeviation | tuple[ArrayLike, ArrayLike]) -> float:
    """``H^{-1/2}(Div)`` norm of a tangential field from its coefficients.

    ``||lambda||^2 = sum sqrt(n(n+1)) |g1|^2 + |g2|^2 / sqrt(n(n+1))``.
    Accepts a :class:`BoundaryDeviation` or a pair ``(g1, g2)`` of
    ``(N, 2N+1)`` arrays. Terms are added in increasing ``(n, m)`` order.

    Examples
    --------
    >>> import numpy as np
    >>> g1 = np.zeros((1, 3)); g1[0, 1] = 1.0
    >>> round(hdiv_norm((g1, np.zeros((1, 3)))), 6)
    1.189207
    """
    if isinstance(deviation, BoundaryDeviation):
        g1, g2 = deviation.g1, deviation.g2
    else:
        g1, g2 = (np.asarray(x) for x in deviation)
    n = np.arange(1, g1.shape[0] + 1, dtype=float)[:, None]
    s = np.sqrt(n * (n + 1.0))
    a1, a2 = np.abs(g1), np.abs(g2)
    # factor out the largest entry so squaring neither underflows nor overflows
    scale = float(max(a1.max(initial=0.0), a2.max(initial=0.0)))
    if scale == 0.0 or not math.isfinite(scale):
        return scale
    terms = s * (a1 / scale) ** 2 + (a2 / scale) ** 2 / s
    return scale * math.sqrt(math.fsum(terms.ravel()))


@dataclass(frozen=True)
class BoundaryError:
    """``Er`` together with its resonance diagnostics.

    ``value`` is always the computed number, even when ``resonant`` is set.
    """

    value: float
    resonant: bool
    detA_abs: np.ndarray
    detB_abs: np.ndarray

    def __float__(self) -> float:
        return self.value


def boundary_error(
    scenario: CloakScenario,
    excitation: Excitation,
    form: DeviationForm = "stable",
    degrees: Iterable[int] | None = None,
) -> BoundaryError:
    """``Er = || xhat x H_rho - xhat x H ||`` over the requested degrees.

    A resonance does not raise: the nearly singular value is returned with
    ``resonant=True``.
    """
    dev = boundary_deviation(scenario, excitation, form=form, degrees=degrees)
    degs = list(range(1, scenario.N + 1)) if degrees is None else sorted(set(degrees))
    idx = np.array(degs) - 1
    return BoundaryError(
        value=hdiv_norm(dev),
        resonant=dev.resonant,
        detA_abs=np.abs(dev.detA[idx]),
        detB_abs=np.abs(dev.detB[idx]),
    )


# ---------------------------------------------------------------------------
# rates and sweeps


def convergence_rate(rho1: float, er1: float, rho2: float, er2: float) -> float:
    """Consecutive-pair rate ``ln(Er1 / Er2) / ln(rho1 / rho2)``.

    Examples
    --------
    >>> convergence_rate(0.2, 8.0, 0.1, 1.0)
    3.0
    """
    if rho1 == rho2:
        raise ValueError("the two rho values must differ")
    if rho1 <= 0 or rho2 <= 0:
        raise ValueError("rho values must be positive")
    if not (er1 > 0 and er2 > 0):
        raise ValueError("Er values must be positive")
    return math.log(er1 / er2) / math.log(rho1 / rho2)


def loglog_slope(x: ArrayLike, y: ArrayLike) -> float:
    """Least-squares slope of ``log|y|`` against ``log x``."""
    x = np.asarray(x, dtype=float)
    y = np.abs(np.asarray(y))
    if x.size < 2:
        raise ValueError("need at least two points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("log-log fit needs positive data")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


@dataclass(frozen=True)
class SweepRecord:
    """One row of a ``rho`` or ``omega`` sweep."""

    value: float
    Er: float
    rate: float | None
    resonant: bool
    detA_abs: tuple[float, ...] = ()
    detB_abs: tuple[float, ...] = ()


MapFn = Callable[..., Iterable]


def _er_task(args) -> BoundaryError:
    scenario, excitation, form, degrees = args
    return boundary_error(scenario, excitation, form=form, degrees=degrees)


def rho_sweep(
    template: CloakScenario,
    excitation: Excitation,
    rhos: Sequence[float],
    form: DeviationForm = "stable",
    map_fn: MapFn = map,
) -> list[SweepRecord]:
    """``Er`` at each ``rho`` plus the consecutive-pair rate.

    ``rhos`` must be positive and strictly decreasing; the first record has
    ``rate=None``. ``map_fn`` may be an executor's ordered ``map`` to spread
    the points over workers.
    """
    rhos = [float(r) for r in rhos]
    if not rhos:
        raise ValueError("empty rho list")
    if any(r <= 0 for r in rhos):
        raise ValueError("rho values must be positive")
    if any(r2 >= r1 for r1, r2 in zip(rhos, rhos[1:])):
        raise ValueError("rho values must be strictly decreasing")
    tasks = [(template.with_rho(r), excitation, form, None) for r in rhos]
    results = list(map_fn(_er_task, tasks))
    out = []
    for i, (r, res) in enumerate(zip(rhos, results)):
        rate = None
        if i > 0 and res.value > 0 and results[i - 1].value > 0:
            rate = convergence_rate(rhos[i - 1], results[i - 1].value, r, res.value)
        out.append(SweepRecord(r, res.value, rate, res.resonant,
                               tuple(res.detA_abs.tolist()), tuple(res.detB_abs.tolist())))
    return out


def tail_slope(records: Sequence[SweepRecord], count: int = 3) -> float:
    """Least-squares log-log slope over the ``count`` smallest swept values."""
    tail = sorted(records, key=lambda r: r.value)[:count]
    return loglog_slope([r.value for r in tail], [r.Er for r in tail])


def omega_sweep(
    template: CloakScenario,
    excitation_for: Callable[[float], Excitation],
    omegas: Sequence[float],
    degrees: Iterable[int] | None = None,
    form: DeviationForm = "stable",
    map_fn: MapFn = map,
) -> list[SweepRecord]:
    """``Er`` restricted to ``degrees`` at each frequency, with ``|det|`` diagnostics.

    ``excitation_for(omega)`` builds the boundary data (a plane wave changes
    with frequency). Resonant points are kept and flagged.
    """
    omegas = [float(w) for w in omegas]
    if any(w <= 0 for w in omegas):
        raise ValueError("frequencies must be positive")
    degs = None if degrees is None else sorted(set(degrees))
    tasks = [(template.with_omega(w), excitation_for(w), form, degs) for w in omegas]
    results = map_fn(_er_task, tasks)
    return [
        SweepRecord(w, res.value, None, res.resonant,
                    tuple(res.detA_abs.tolist()), tuple(res.detB_abs.tolist()))
        for w, res in zip(omegas, results)
    ]


# ---------------------------------------------------------------------------
# cloak-busting inclusions


def relative_det(M: np.ndarray) -> float:
    """``|det M|`` divided by the product of the row max-abs norms."""
    det = abs(complex(np.linalg.det(M)))
    return det / float(np.prod(np.max(np.abs(M), axis=1)))


@dataclass(frozen=True)
class BustingResult:
    """Inner medium that makes ``det A_n`` vanish.

    ``mu0`` is the exact complex root and ``eps0 = k**2 / mu0``.
    ``det_residual`` is :func:`relative_det` of ``A_n`` at that medium.
    ``mu0_real`` / ``det_residual_real`` describe the best real ``mu0``
    (with ``eps0 = k**2 / mu0``) found by a bounded scalar search around
    ``Re mu0``.
    """

    n: int
    omega: float
    k: complex
    rho: float
    mu0: complex
    eps0: complex
    imag_residual: float
    det_residual: float
    mu0_real: float | None
    det_residual_real: float | None


def find_busting_mu0(n: int, omega: float, k: complex, rho: float, refine_real: bool = True) -> BustingResult:
    """Inner medium of wavenumber ``k`` that makes the lossless system ``A_n`` singular.

    Solves ``mu0 j_n(k w) / J_n(k w) = rho [j_n(w rho) h_n(2w) - h_n(w rho) j_n(2w)]
    / [J_n(w rho) h_n(2w) - H_n(w rho) j_n(2w)]`` for ``mu0``.

    Raises
    ------
    ValueError
        If ``j_n(k omega) = 0``, where no finite ``mu0`` exists.
    """
    from .modesolver import Lossless

    bk = BesselSet(n, k * omega)
    if abs(bk.j) < 1e-300:
        raise ValueError(f"j_n(k omega) vanishes for n={n}, k={k}, omega={omega}")
    br, b2 = BesselSet(n, omega * rho), BesselSet(n, 2.0 * omega)
    rhs = rho * (br.j * b2.h - br.h * b2.j) / (br.J * b2.h - br.H * b2.j)
    mu0 = complex(rhs * bk.J / bk.j)
    eps0 = complex(k) ** 2 / mu0

    def rel_det(mu, eps):
        sc = CloakScenario(Lossless(rho), InnerMedium(eps0=eps, mu0=mu), omega, max(n, 1))
        A, _, _, _ = system_matrices(n, sc)
        return relative_det(A)

    det_res = rel_det(mu0, eps0)
    mu_real = det_real = None
    if refine_real and mu0.real != 0.0:
        lo, hi = sorted((0.5 * mu0.real, 2.0 * mu0.real))
        kk = complex(k) ** 2
        opt = minimize_scalar(lambda x: rel_det(complex(x), kk / x), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-14 * max(abs(lo), abs(hi))})
        mu_real, det_real = float(opt.x), float(opt.fun)
        # Bounded Brent stops near sqrt(machine eps) in x; Re mu0 itself is
        # often the better real candidate when Im mu0 is negligible.
        at_re = rel_det(complex(mu0.real), kk / mu0.real)
        if at_re < det_real:
            mu_real, det_real = mu0.real, at_re
    return BustingResult(n, omega, complex(k), rho, mu0, eps0, abs(mu0.imag) / abs(mu0), det_res, mu_real, det_real)


# ---------------------------------------------------------------------------
# hidden-boundary Cauchy data


def interface_cauchy_norm(
    scenario: CloakScenario,
    excitation: Excitation,
    solution: Solution | None = None,
    surface: Literal["interface", "core"] = "interface",
) -> tuple[float, float]:
    """Norms of ``nu x E`` and ``nu x H`` on an interior surface of the cloak.

    ``surface="interface"`` is the inner side of ``|x| = 1``: the cloaked
    region for the lossless scheme, the lossy layer for the lossy one.
    ``surface="core"`` is the inner side of ``|x| = 1/2`` (lossy only).
    Both traces are measured with :func:`hdiv_norm` applied to their
    ``U``/``V`` coefficients.
    """
    if solution is None:
        solution = solve(scenario, excitation)
    N, om = scenario.N, scenario.omega
    C = solution.coeffs
    inner = scenario.inner
    eu, ev, hu, hv = (mode_array(N) for _ in range(4))
    if scenario.lossy and surface == "interface":
        lp = scenario.scheme.params
        z, R = lp.k_tau * om, 1.0
        se, sm = 1 / np.sqrt(lp.eps_tau), 1 / np.sqrt(lp.mu_tau)
        coeffs = {"M": C["gamma_t"], "cM": C["eta_t"], "N": C["c_t"], "cN": C["d_t"]}
    elif surface == "interface" or (scenario.lossy and surface == "core"):
        R = 1.0 if not scenario.lossy else 0.5
        z = inner.k * om * R
        se, sm = 1 / inner.sqrt_eps0, 1 / inner.sqrt_mu0
        coeffs = {"M": C["alpha"], "cM": C["beta"], "N": excitation.p, "cN": excitation.q}
    else:
        raise ValueError("the core surface exists for the lossy scheme only")
    zeta = z / R  # wavenumber of the region
    for n in range(1, N + 1):
        s = math.sqrt(n * (n + 1.0))
        bz = BesselSet(n, z)
        sl = n - 1
        Mc, cMc, Nc, cNc = (coeffs[k][sl] for k in ("M", "cM", "N", "cN"))
        eu[sl] = se * s * (Mc * bz.j + Nc * bz.h)
        ev[sl] = se * s * (cMc * bz.J + cNc * bz.H) / R
        hu[sl] = sm / (1j * zeta) * s * zeta**2 * (cMc * bz.j + cNc * bz.h)
        hv[sl] = sm / (1j * zeta) * s * (Mc * bz.J + Nc * bz.H) / R
    return hdiv_norm((eu, ev)), hdiv_norm((hu, hv))


# ---------------------------------------------------------------------------
# L2 deviation of the exterior field


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)


def _gl_panel(f, a: float, b: float) -> float:
    x = 0.5 * (b - a) * _GL_NODES + 0.5 * (b + a)
    return 0.5 * (b - a) * float(np.dot(_GL_WEIGHTS, f(x)))


def _adaptive_gl(f, a: float, b: float, atol: float, rtol: float, panels: int = 8, max_depth: int = 40) -> float:
    """Adaptive bisection with 64-point Gauss-Legendre panels.

    The initial panels are geometrically graded from ``a`` so that the
    ``h_n(omega r)`` singularity just below ``a`` is resolved.
    """
    edges = a * (b / a) ** (np.arange(panels + 1) / panels) if a > 0 else np.linspace(a, b, panels + 1)
    stack = [(lo, hi, _gl_panel(f, lo, hi), 0) for lo, hi in zip(edges[:-1], edges[1:])]
    total = math.fsum(s[2] for s in stack)
    result = []
    while stack:
        lo, hi, whole, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        left, right = _gl_panel(f, lo, mid), _gl_panel(f, mid, hi)
        err = abs(left + right - whole)
        share = (hi - lo) / (b - a)
        if err <= max(atol * share, rtol * abs(total) * share) or depth >= max_depth:
            result.append(left + right)
        else:
            stack.append((lo, mid, left, depth + 1))
            stack.append((mid, hi, right, depth + 1))
    return math.fsum(result)


def l2_field_deviation(
    scenario: CloakScenario,
    excitation: Excitation,
    solution: Solution | None = None,
    atol: float = 1e-12,
    rtol: float = 1e-10,
) -> float:
    """``|| E_rho - E ||_{L^2}`` over the exterior region in virtual space.

    The region is ``rho < |y| < 2`` (lossless) or ``2 rho < |y| < 2``
    (lossy). By orthonormality of ``U``, ``V`` and ``Y xhat`` the integral
    splits into radial integrals per degree; the ``m`` sum is folded into
    the integrand before quadrature.
    """
    if solution is None:
        solution = solve(scenario, excitation)
    N, om = scenario.N, scenario.omega
    a, b = _free_space(excitation, om)
    C = solution.coeffs
    lower = 2.0 * scenario.rho if scenario.lossy else scenario.rho
    total = []
    for n in range(1, N + 1):
        A = C["gamma"][n - 1] - a[n - 1]
        Bc = C["eta"][n - 1] - b[n - 1]
        c, d = C["c"][n - 1], C["d"][n - 1]
        # sum_m |A j + c h|^2 = |j|^2 S_AA + 2 Re(j conj(h) S_Ac) + |h|^2 S_cc, and likewise
        SAA, Scc, SAc = np.vdot(A, A).real, np.vdot(c, c).real, np.vdot(c, A)
        SBB, Sdd, SBd = np.vdot(Bc, Bc).real, np.vdot(d, d).real, np.vdot(d, Bc)
        if SAA == Scc == SBB == Sdd == 0.0:
            continue
        nn = n * (n + 1.0)

        def integrand(r, n=n, nn=nn, SAA=SAA, Scc=Scc, SAc=SAc, SBB=SBB, Sdd=Sdd, SBd=SBd):
            bs = BesselSet(n, om * r)
            q1 = np.abs(bs.j) ** 2 * SAA + 2 * (bs.j * np.conj(bs.h) * SAc).real + np.abs(bs.h) ** 2 * Scc
            q2 = np.abs(bs.J) ** 2 * SBB + 2 * (bs.J * np.conj(bs.H) * SBd).real + np.abs(bs.H) ** 2 * Sdd
            q3 = np.abs(bs.j) ** 2 * SBB + 2 * (bs.j * np.conj(bs.h) * SBd).real + np.abs(bs.h) ** 2 * Sdd
            return nn * q1 * r**2 + nn * q2 + nn**2 * q3

        total.append(_adaptive_gl(integrand, lower, 2.0, atol, rtol))
    return math.sqrt(max(math.fsum(total), 0.0))


# ---------------------------------------------------------------------------
# field samples


def slice_points(axis: str, value: float, npts: int, half_width: float = 2.0) -> np.ndarray:
    """Square grid of ``npts x npts`` points on the plane ``axis = value``.

    Returns an array of shape ``(npts * npts, 3)``; the two free
    coordinates run over ``[-half_width, half_width]``.
    """
    ax = "xyz".index(axis)
    t = np.linspace(-half_width, half_width, npts)
    u, v = np.meshgrid(t, t, indexing="ij")
    pts = np.empty(u.shape + (3,))
    others = [i for i in range(3) if i != ax]
    pts[..., ax] = value
    pts[..., others[0]] = u
    pts[..., others[1]] = v
    return pts.reshape(-1, 3)


def _expansion(points: np.ndarray, zeta: complex, N: int, cM, ccM, cN, ccN) -> np.ndarray:
    """``sum cM M + ccM curl M + cN N + ccN curl N`` at ``points`` (no point at 0)."""
    r, theta, phi = spherical_coords(points)
    rhat = sph_frame(theta, phi)[0]
    out = np.zeros(points.shape, dtype=complex)
    active = [n for n in range(1, N + 1)
              if any(np.any(c[n - 1]) for c in (cM, ccM, cN, ccN))]
    if not active:
        return out
    jt, ht = sph_jh_table(max(active), zeta * r)
    for n, m, y, u, v in iter_vsh(max(active), theta, phi):
        col = m + N
        coefs = (cM[n - 1, col], ccM[n - 1, col], cN[n - 1, col], ccN[n - 1, col])
        if not any(coefs):
            continue
        j, h = jt[:, n], ht[:, n]
        J = zeta * r * jt[:, n - 1] - n * j
        H = zeta * r * ht[:, n - 1] - n * h
        s = math.sqrt(n * (n + 1.0))
        fV = -s * (coefs[0] * j + coefs[2] * h)
        fU = s / r * (coefs[1] * J + coefs[3] * H)
        fY = n * (n + 1.0) / r * (coefs[1] * j + coefs[3] * h) * y
        out += fV[:, None] * v + fU[:, None] * u + fY[:, None] * rhat
    return out


def field_slice(
    scenario: CloakScenario,
    excitation: Excitation,
    points: ArrayLike,
    solution: Solution | None = None,
    free_space: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Total physical electric field at ``points``.

    Parameters
    ----------
    points : array_like, shape (P, 3)
    free_space : bool
        Evaluate the homogeneous-ball field ``sum a M + b curl M`` instead.

    Returns
    -------
    field : ndarray, shape (P, 3)
        ``nan`` where the point is outside ``0 < |x| < 2`` or on an interface.
    valid : ndarray of bool, shape (P,)
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    N, om = scenario.N, scenario.omega
    r = np.linalg.norm(pts, axis=-1)
    valid = (r > 0) & (r < 2.0)
    out = np.full(pts.shape, np.nan + 0j)
    zero = mode_array(N)
    if free_space:
        a, b = _free_space(excitation, om)
        if np.any(valid):
            out[valid] = _expansion(pts[valid], om, N, a, b, zero, zero)
        return out, valid
    if solution is None:
        solution = solve(scenario, excitation)
    C = solution.coeffs
    inner = scenario.inner
    se0 = 1.0 / inner.sqrt_eps0
    if scenario.lossy:
        F = media.F_2rho(scenario.rho)
        core_r, layer = 0.5, True
    else:
        F = media.F_rho(scenario.rho)
        core_r, layer = 1.0, False
    shell = valid & (r > 1.0)
    core = valid & (r < core_r)
    if np.any(shell):
        x = pts[shell]
        y = F.inverse(x)
        Ey = _expansion(y, om, N, C["gamma"], C["eta"], C["c"], C["d"])
        M = F.jacobian(y)
        # E = M^T Etilde(F(y))  =>  Etilde = M^{-T} E
        out[shell] = np.linalg.solve(np.swapaxes(M, -1, -2), Ey[..., None])[..., 0]
    if np.any(core):
        out[core] = se0 * _expansion(pts[core], inner.k * om, N, C["alpha"], C["beta"], excitation.p, excitation.q)
    if layer:
        mid = valid & (r > 0.5) & (r < 1.0)
        if np.any(mid):
            lp = scenario.scheme.params
            out[mid] = _expansion(pts[mid], lp.k_tau * om, N, C["gamma_t"], C["eta_t"], C["c_t"], C["d_t"]) / np.sqrt(
                lp.eps_tau
            )
        on_iface = valid & ((r == 1.0) | (r == 0.5))
    else:
        on_iface = valid & (r == 1.0)
    valid = valid & ~on_iface
    out[on_iface] = np.nan
    return out, valid
