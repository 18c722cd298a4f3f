import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from regcloak.analysis import _expansion
from regcloak.harmonics import iter_modes, sph_frame, vsh_table
from regcloak.media import InnerMedium
from regcloak.modesolver import (
    CloakScenario,
    Excitation,
    Lossless,
    Lossy,
    ResonanceError,
    det_A,
    det_B,
    equilibrated_det,
    free_space_solution,
    mode_array,
    planewave_excitation,
    residual,
    solve,
    solve_lossless_active,
    solve_lossless_passive,
    solve_lossy_active,
    solve_lossy_passive,
    source_coefficients,
    system_matrices,
    t_factors,
    tprime_factors,
)
from regcloak.specfun import BesselSet

OMEGA = 5.0
D_DEFAULT = np.array([0.0, 1.0, 0.0])
P_DEFAULT = np.array([1.0, 0.0, 0.0], dtype=complex)


def plane(N=15, omega=OMEGA):
    return planewave_excitation(omega, D_DEFAULT, P_DEFAULT, N)


def with_random_source(ex, seed=3):
    rng = np.random.default_rng(seed)
    N = ex.N
    modes = [(n, m, complex(*rng.normal(size=2)), complex(*rng.normal(size=2))) for n, m in iter_modes(N)]
    return ex.with_source(*source_coefficients(N, modes))


def scenario(lossy=False, rho=0.01, N=15, eps0=2.0, mu0=2.0, omega=OMEGA, tau=3.0):
    scheme = Lossy(rho, tau) if lossy else Lossless(rho)
    return CloakScenario(scheme, InnerMedium(eps0, mu0), omega, N)


def max_rel(x, y):
    mask = np.abs(y) > 0
    return float(np.max(np.abs(x - y)[mask] / np.abs(y)[mask]))


# ---------------------------------------------------------------- excitation


def test_planewave_coefficients_definitional():
    ex = plane(N=10)
    for n in range(1, 11):
        assert np.array_equal(ex.a[n - 1] * BesselSet(n, 2 * OMEGA).j, ex.f1[n - 1])


def test_planewave_boundary_quadrature():
    N = 12
    d = np.array([0.0, 0.6, 0.8])
    P = np.array([1.0, 0.0, 0.0], dtype=complex)
    ex = planewave_excitation(OMEGA, d, P, N)
    L = 2 * N + 6
    x, wt = np.polynomial.legendre.leggauss(L)
    phi = np.linspace(0, 2 * np.pi, 2 * L, endpoint=False)
    TH, PH = np.meshgrid(np.arccos(x), phi, indexing="ij")
    W = np.outer(wt, np.full(phi.size, 2 * np.pi / phi.size))
    rhat = sph_frame(TH, PH)[0]
    trace = np.cross(rhat, np.exp(-1j * OMEGA * (2 * rhat @ d))[..., None] * P)
    table = vsh_table(N, TH, PH)
    for n, m in iter_modes(N):
        _, u, v = table[n, m]
        s = math.sqrt(n * (n + 1))
        g1 = np.sum(W * np.einsum("...k,...k", trace, u.conj())) / s
        g2 = np.sum(W * np.einsum("...k,...k", trace, v.conj())) / s
        scale = max(abs(ex.f1[n - 1, m + N]), abs(ex.f2[n - 1, m + N]), 1e-3)
        assert abs(g1 - ex.f1[n - 1, m + N]) < 1e-8 * scale
        assert abs(g2 - ex.f2[n - 1, m + N]) < 1e-8 * scale


def test_planewave_coefficient_frequency_scaling():
    omegas = np.geomspace(10, 1000, 5)
    amax = [np.max(np.abs(planewave_excitation(w, D_DEFAULT, P_DEFAULT, 3).a)) for w in omegas]
    bmax = [np.max(np.abs(planewave_excitation(w, D_DEFAULT, P_DEFAULT, 3).b)) for w in omegas]
    assert abs(np.polyfit(np.log(omegas), np.log(amax), 1)[0]) < 0.02
    assert abs(np.polyfit(np.log(omegas), np.log(bmax), 1)[0] + 1) < 0.02


def test_polarization_must_be_orthogonal():
    with pytest.raises(ValueError, match="orthogonal"):
        planewave_excitation(OMEGA, D_DEFAULT, [0, 1, 0], 3)


def test_direction_must_be_unit():
    with pytest.raises(ValueError, match="unit"):
        planewave_excitation(OMEGA, [0, 2, 0], [1, 0, 0], 3)


def test_angles_accepted_as_direction():
    a = planewave_excitation(OMEGA, (math.pi / 2, math.pi / 2), [1, 0, 0], 4)
    b = planewave_excitation(OMEGA, D_DEFAULT, [1, 0, 0], 4)
    assert np.allclose(a.f1, b.f1, atol=1e-14) and np.allclose(a.f2, b.f2, atol=1e-14)


def test_excitation_shape_validation():
    with pytest.raises(ValueError):
        Excitation(np.zeros((2, 4)), np.zeros((2, 4)))
    bad = mode_array(2)
    bad[0, 0] = 1.0  # (n, m) = (1, -2)
    with pytest.raises(ValueError):
        Excitation(bad, mode_array(2))
    with pytest.raises(ValueError):
        source_coefficients(2, [(3, 0, 1, 1)])


# ---------------------------------------------------------------- free space


def test_free_space_zero():
    a, b = free_space_solution(Excitation(mode_array(3), mode_array(3)), OMEGA)
    assert not a.any() and not b.any()


def test_free_space_example_value():
    f1 = mode_array(1)
    f1[0, 1] = 1.0
    a, _ = free_space_solution(Excitation(f1, mode_array(1)), 5.0)
    j1 = math.sin(10) / 100 - math.cos(10) / 10
    assert abs(a[0, 1] - 1 / j1) < 1e-12
    assert abs(a[0, 1] - 12.744) < 5e-4


def test_free_space_recovers_planewave_coefficients():
    ex = plane(N=8)
    a, b = free_space_solution(ex, OMEGA)
    assert np.allclose(a, ex.a, rtol=1e-13, atol=0)
    assert np.allclose(b, ex.b, rtol=1e-13, atol=0)


def test_free_space_resonance():
    zero = 4.493409457909064  # first positive zero of j_1
    f1 = mode_array(1)
    f1[0, 1] = 1.0
    with pytest.raises(ResonanceError):
        free_space_solution(Excitation(f1, mode_array(1)), zero / 2)


def test_free_space_magnetic_trace():
    N = 30
    ex = plane(N=N)
    rng = np.random.default_rng(0)
    X = rng.normal(size=(200, 3))
    X = 2 * X / np.linalg.norm(X, axis=1)[:, None]
    zero = mode_array(N)
    H = _expansion(X, OMEGA, N, ex.b * OMEGA**2, ex.a, zero, zero) / (1j * OMEGA)
    # curl of exp(-i w x.d) P divided by i w
    H_ref = -np.cross(D_DEFAULT, P_DEFAULT) * np.exp(-1j * OMEGA * (X @ D_DEFAULT))[:, None]
    xhat = X / 2
    assert np.max(np.abs(np.cross(xhat, H) - np.cross(xhat, H_ref))) < 1e-8


# ---------------------------------------------------------------- factors


def loglog(x, y):
    return np.polyfit(np.log(x), np.log(np.abs(y)), 1)[0]


@pytest.mark.parametrize("n", [1, 2, 3])
def test_t_factor_orders(n):
    rhos = np.geomspace(1e-4, 1e-2, 5)
    T = np.array([t_factors(n, OMEGA, r, InnerMedium(2, 2)) for r in rhos])
    assert abs(loglog(rhos, T[:, 0]) - (2 * n + 1)) < 0.02
    assert abs(loglog(rhos, T[:, 1]) - (n + 1)) < 0.02


@pytest.mark.parametrize("n", [1, 2, 3])
def test_tprime_factor_orders(n):
    rhos = np.geomspace(1e-4, 1e-2, 5)
    T = np.array([tprime_factors(n, OMEGA, r, InnerMedium(2, 2)) for r in rhos])
    assert abs(loglog(rhos, T[:, 0]) - (n + 1)) < 0.02
    assert abs(loglog(rhos, T[:, 1])) < 0.02


@pytest.mark.parametrize("z", [10.0, 3.0 + 0.5j, 0.05])
@pytest.mark.parametrize("n", [1, 4])
def test_wronskian_numerator_identity(n, z):
    b = BesselSet(n, z)
    assert abs(b.h * b.J - b.H * b.j - (-1j / z)) < 1e-12 * abs(1 / z)


# ---------------------------------------------------------------- solutions


@pytest.mark.parametrize("lossy", [False, True])
@pytest.mark.parametrize("source", [False, True])
def test_residuals(lossy, source):
    sc = scenario(lossy)
    ex = with_random_source(plane()) if source else plane()
    sol = solve(sc, ex)
    for n in range(1, 16):
        assert residual(n, sc, ex, sol) < 1e-10


@pytest.mark.parametrize("lossy", [False, True])
def test_zero_excitation_gives_zero(lossy):
    sc = scenario(lossy, N=5)
    zero = Excitation(mode_array(5), mode_array(5))
    for method in ("closed", "direct"):
        sol = solve(sc, zero, method)
        for v in sol.coeffs.values():
            assert not np.any(v)


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5])
def test_lossless_closed_matches_direct(n):
    sc = scenario(False)
    ex = plane()
    a = solve(sc, ex, "closed", degrees=[n])
    b = solve(sc, ex, "direct", degrees=[n])
    for k in a.coeffs:
        assert max_rel(a.coeffs[k][n - 1], b.coeffs[k][n - 1]) < 1e-10


def test_lossy_closed_matches_direct():
    sc = scenario(True)
    ex = plane()
    a = solve(sc, ex, "closed", degrees=[1])
    b = solve(sc, ex, "direct", degrees=[1])
    for k in a.coeffs:
        assert max_rel(a.coeffs[k][0], b.coeffs[k][0]) < 1e-9


@pytest.mark.parametrize("lossy", [False, True])
def test_active_without_source_matches_passive(lossy):
    sc = scenario(lossy)
    ex = plane()
    passive = (solve_lossy_passive if lossy else solve_lossless_passive)((2, 1), sc, ex)
    active = (solve_lossy_active if lossy else solve_lossless_active)((2, 1), sc, ex)
    for k in ("gamma", "eta", "c", "d", "alpha", "beta"):
        assert abs(getattr(active, k) - getattr(passive, k)) <= 1e-14 * abs(getattr(passive, k))


def test_single_mode_matches_full_solution():
    sc = scenario(False)
    ex = with_random_source(plane())
    sol = solve(sc, ex)
    ms = solve_lossless_active((3, -2), sc, ex)
    assert ms.c == sol.mode(3, -2).c
    assert ms.detA == sol.detA[2]


def test_solver_guards():
    ex = with_random_source(plane(N=3))
    with pytest.raises(ValueError, match="passive"):
        solve_lossless_passive((1, 0), scenario(False, N=3), ex)
    with pytest.raises(ValueError, match="scheme"):
        solve_lossy_passive((1, 0), scenario(False, N=3), ex.without_source())
    with pytest.raises(ValueError):
        solve(scenario(False, N=4), ex)
    with pytest.raises(ValueError):
        solve(scenario(False, N=3), ex, method="lu")
    with pytest.raises(ValueError):
        solve(scenario(False, N=3), ex, degrees=[4])


def test_scenario_validation():
    with pytest.raises(ValueError):
        Lossless(1.0)
    with pytest.raises(ValueError):
        Lossy(0.5)
    with pytest.raises(ValueError):
        Lossy(0.1, 0.0)
    with pytest.raises(ValueError):
        CloakScenario(Lossless(0.1), omega=0.0)
    with pytest.raises(ValueError):
        CloakScenario(Lossless(0.1), N=0)


@pytest.mark.parametrize("rho", [0.1, 0.01, 0.001])
def test_matched_core_is_transparent(rho):
    # eps0 = mu0 = rho in the physical core is the unit medium in virtual space
    sc = scenario(False, rho=rho, eps0=rho, mu0=rho, N=6)
    sol = solve(sc, plane(N=6))
    assert np.max(np.abs(sol.c)) < 1e-12
    assert np.max(np.abs(sol.d)) < 1e-12


def test_unit_core_is_not_transparent():
    # documented deviation: eps0 = mu0 = 1 still scatters at finite rho
    sol = solve(scenario(False, rho=0.1, eps0=1.0, mu0=1.0, N=3), plane(N=3))
    assert np.max(np.abs(sol.c)) > 1e-3


def test_unit_core_determinants_bounded_below():
    omegas = np.arange(1.0, 3.0, 1e-3)
    worst = min(
        min(equilibrated_det(M) for M in system_matrices(1, scenario(False, eps0=1.0, mu0=1.0, omega=w, N=1))[:2])
        for w in omegas
    )
    assert worst > 0.5


def test_determinant_helpers_match_matrices():
    inner = InnerMedium(2, 2)
    A, B, _, _ = system_matrices(2, scenario(False))
    assert det_A(2, OMEGA, 0.01, inner) == pytest.approx(np.linalg.det(A), rel=1e-12)
    assert det_B(2, OMEGA, 0.01, inner) == pytest.approx(np.linalg.det(B), rel=1e-12)
    A, _, _, _ = system_matrices(2, scenario(True))
    assert det_A(2, OMEGA, 0.01, inner, tau=3.0) == pytest.approx(np.linalg.det(A), rel=1e-12)


def test_resonance_flag_for_singular_matrix():
    M = np.array([[1.0, 2.0], [2.0, 4.0 + 1e-14]])
    assert equilibrated_det(M) < 1e-12
    assert equilibrated_det(np.diag([1e-30, 1e30])) == pytest.approx(1.0)


@settings(max_examples=15)
@given(
    c1=st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False),
    c2=st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False),
    lossy=st.booleans(),
)
def test_superposition(c1, c2, lossy):
    sc = scenario(lossy, N=4)
    e1 = plane(N=4)
    e2 = with_random_source(planewave_excitation(OMEGA, [1, 0, 0], [0, 0, 1], 4))
    combo = Excitation(c1 * e1.f1 + c2 * e2.f1, c1 * e1.f2 + c2 * e2.f2, c1 * e1.p + c2 * e2.p, c1 * e1.q + c2 * e2.q)
    s1, s2, s12 = solve(sc, e1), solve(sc, e2), solve(sc, combo)
    for k in s12.coeffs:
        expect = c1 * s1.coeffs[k] + c2 * s2.coeffs[k]
        scale = abs(c1) * np.max(np.abs(s1.coeffs[k])) + abs(c2) * np.max(np.abs(s2.coeffs[k])) + 1e-300
        assert np.max(np.abs(s12.coeffs[k] - expect)) <= 1e-12 * scale


def test_orders_within_degree_share_factors():
    sc = scenario(False, N=3)
    ex = plane(N=3)
    sol = solve(sc, ex)
    n = 2
    ratio = sol.c[n - 1, 3 - n : 3 + n + 1] / ex.f1[n - 1, 3 - n : 3 + n + 1]
    finite = np.isfinite(ratio)
    # c depends on f1 only through gamma, which is f1 over a degree-wide factor
    assert np.allclose(ratio[finite], ratio[finite][0], rtol=1e-13)
