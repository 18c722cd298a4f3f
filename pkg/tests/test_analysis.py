import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from regcloak.analysis import (
    BoundaryDeviation,
    boundary_deviation,
    boundary_error,
    convergence_rate,
    field_slice,
    find_busting_mu0,
    hdiv_norm,
    interface_cauchy_norm,
    l2_field_deviation,
    loglog_slope,
    omega_sweep,
    rho_sweep,
    slice_points,
    tail_slope,
)
from regcloak.media import InnerMedium
from regcloak.modesolver import (
    CloakScenario,
    Lossless,
    Lossy,
    det_A,
    mode_array,
    planewave_excitation,
    solve,
    source_coefficients,
    system_matrices,
)

D = (math.pi / 2, math.pi / 2)
P = [1, 0, 0]
TABLE_RHOS = [0.1, 0.05, 0.01, 0.005, 0.002, 0.001]


def plane(N=15, omega=5.0):
    return planewave_excitation(omega, D, P, N)


def table2_source(ex):
    return ex.with_source(*source_coefficients(ex.N, [(1, m, 5, 2) for m in (-1, 0, 1)]))


def scenario(lossy=False, rho=0.01, N=15, eps0=2.0, mu0=2.0, omega=5.0):
    scheme = Lossy(rho, 3.0) if lossy else Lossless(rho)
    return CloakScenario(scheme, InnerMedium(eps0, mu0), omega, N)


# ---------------------------------------------------------------- norm


def test_hdiv_zero():
    z = mode_array(3)
    assert hdiv_norm((z, z)) == 0.0


def test_hdiv_single_mode():
    g1, g2 = mode_array(1), mode_array(1)
    g1[0, 1] = 1.0
    assert hdiv_norm((g1, g2)) == pytest.approx(2**0.25, abs=1e-15)


def test_hdiv_second_component_weight():
    g1, g2 = mode_array(2), mode_array(2)
    g2[1, 2] = 1.0  # (n, m) = (2, 0)
    assert hdiv_norm((g1, g2)) == pytest.approx(6**-0.25, abs=1e-15)


@pytest.mark.parametrize("size", [1e-290, 1e200])
def test_hdiv_extreme_magnitudes(size):
    g1, g2 = mode_array(1), mode_array(1)
    g1[0, 1] = size
    assert hdiv_norm((g1, g2)) == pytest.approx(2**0.25 * size, rel=1e-15)


complex_entries = st.complex_numbers(max_magnitude=1e3, allow_nan=False, allow_infinity=False)


def deviation(values):
    N = 3
    g1, g2 = mode_array(N), mode_array(N)
    k = 0
    for n in range(1, N + 1):
        for m in range(-n, n + 1):
            g1[n - 1, m + N] = values[k]
            g2[n - 1, m + N] = values[k + 15]
            k += 1
    return g1, g2


vectors = st.lists(complex_entries, min_size=30, max_size=30)


@given(vectors, complex_entries)
def test_hdiv_homogeneous(vals, s):
    g1, g2 = deviation(vals)
    assert hdiv_norm((s * g1, s * g2)) == pytest.approx(abs(s) * hdiv_norm((g1, g2)), rel=1e-12, abs=1e-300)


@given(vectors, vectors)
def test_hdiv_triangle(u, v):
    a, b = deviation(u), deviation(v)
    total = hdiv_norm((a[0] + b[0], a[1] + b[1]))
    assert total <= hdiv_norm(a) + hdiv_norm(b) + 1e-9 * (1 + total)


@given(vectors)
def test_hdiv_definite(vals):
    g = deviation(vals)
    assert (hdiv_norm(g) == 0) == (not np.any(g[0]) and not np.any(g[1]))


# ---------------------------------------------------------------- rates


def test_rate_examples():
    assert convergence_rate(0.1, 0.1810, 0.05, 0.0139) == pytest.approx(3.703, abs=5e-4)
    assert convergence_rate(0.05, 0.0139, 0.01, 8.42e-05) == pytest.approx(3.173, abs=5e-4)
    assert convergence_rate(0.004, 2.0, 0.002, 0.25) == pytest.approx(3.0, abs=1e-14)


@pytest.mark.parametrize("args", [(0.1, 1.0, 0.1, 0.5), (0.1, 0.0, 0.05, 1.0), (0.1, 1.0, 0.05, -1.0)])
def test_rate_rejects_bad_input(args):
    with pytest.raises(ValueError):
        convergence_rate(*args)


def test_loglog_slope():
    x = np.geomspace(1e-3, 1, 6)
    assert loglog_slope(x, 3 * x**2.5) == pytest.approx(2.5, abs=1e-12)
    with pytest.raises(ValueError):
        loglog_slope([1.0], [1.0])


# ---------------------------------------------------------------- deviation forms


@pytest.mark.parametrize("source", [False, True])
def test_stable_and_closed_forms_agree(source):
    ex = table2_source(plane()) if source else plane()
    for rho in TABLE_RHOS:
        sc = scenario(rho=rho)
        a = boundary_error(sc, ex, form="stable").value
        b = boundary_error(sc, ex, form="det").value
        assert abs(a - b) <= 1e-12 * a


@pytest.mark.parametrize("source", [False, True], ids=["passive", "active"])
def test_trace_difference_matches_closed_form(source):
    # the raw trace difference subtracts O(1) coefficients; at the smallest
    # rho the passive case loses digits to that cancellation
    ex = table2_source(plane()) if source else plane()
    for rho in TABLE_RHOS:
        sc = scenario(rho=rho)
        a = boundary_error(sc, ex, form="det").value
        b = boundary_error(sc, ex, form="trace").value
        assert abs(a - b) <= 1e-10 * a, rho


def test_lossy_stable_matches_trace():
    ex = plane()
    for rho in (0.1, 0.01):
        sc = scenario(lossy=True, rho=rho)
        a = boundary_error(sc, ex, form="stable").value
        b = boundary_error(sc, ex, form="trace").value
        assert abs(a - b) <= 1e-9 * a


def test_det_form_rejected_for_lossy():
    with pytest.raises(ValueError):
        boundary_deviation(scenario(lossy=True), plane(), form="det")


def test_truncation_mismatch():
    with pytest.raises(ValueError):
        boundary_deviation(scenario(N=5), plane(N=4))


def test_matched_core_has_no_deviation():
    rho = 0.05
    dev = boundary_deviation(scenario(rho=rho, eps0=rho, mu0=rho, N=6), plane(N=6))
    assert np.max(np.abs(dev.g1)) < 1e-12 and np.max(np.abs(dev.g2)) < 1e-12


def test_restrict_keeps_selected_degrees():
    dev = boundary_deviation(scenario(N=4), plane(N=4))
    sub = dev.restrict([2])
    assert isinstance(sub, BoundaryDeviation)
    assert np.array_equal(sub.g1[1], dev.g1[1]) and not sub.g1[0].any()


def unit_mode(N, n, source=False):
    from regcloak.modesolver import Excitation

    f = mode_array(N)
    f[n - 1, N] = 1.0
    ex = Excitation(f.copy(), f.copy())
    return ex.with_source(f.copy(), f.copy()) if source else ex


@pytest.mark.parametrize("n", [1, 2])
def test_passive_deviation_rho_order(n):
    rhos = np.geomspace(1e-3, 1e-2, 4)
    vals = [abs(boundary_deviation(scenario(rho=r, N=n, omega=0.05), unit_mode(n, n)).g1[n - 1, n]) for r in rhos]
    assert abs(loglog_slope(rhos, vals) - (2 * n + 1)) < 0.05


@pytest.mark.parametrize("n", [1, 2])
def test_active_deviation_rho_order(n):
    rhos = np.geomspace(1e-4, 1e-2, 5)
    vals = [abs(boundary_deviation(scenario(rho=r, N=n, omega=0.05), unit_mode(n, n, True)).g1[n - 1, n]) for r in rhos]
    assert abs(loglog_slope(rhos, vals) - (n + 1)) < 0.05


# ---------------------------------------------------------------- sweeps


def test_rho_sweep_layout():
    recs = rho_sweep(scenario(N=5), plane(N=5), [0.1, 0.05, 0.01])
    assert [r.value for r in recs] == [0.1, 0.05, 0.01]
    assert recs[0].rate is None and recs[1].rate is not None
    assert recs[1].rate == pytest.approx(convergence_rate(0.1, recs[0].Er, 0.05, recs[1].Er))
    assert len(recs[0].detA_abs) == 5
    assert tail_slope(recs, 2) == pytest.approx(recs[2].rate)


@pytest.mark.parametrize("rhos", [[0.1, 0.1], [0.01, 0.1], [0.1, -0.01], []])
def test_rho_sweep_validation(rhos):
    with pytest.raises(ValueError):
        rho_sweep(scenario(N=2), plane(N=2), rhos)


def test_omega_sweep_rejects_nonpositive():
    with pytest.raises(ValueError):
        omega_sweep(scenario(N=2), lambda w: plane(2, w), [1.0, 0.0])


def test_lossy_sweep_never_resonant():
    omegas = np.arange(1.0, 3.0, 0.01)
    recs = omega_sweep(scenario(lossy=True, N=1), lambda w: plane(1, w), omegas, degrees=[1])
    assert not any(r.resonant for r in recs)
    assert min(min(r.detA_abs + r.detB_abs) for r in recs) > 1e-3


def test_low_frequency_trend():
    omegas = np.linspace(0.05, 1.0, 12)
    recs = omega_sweep(scenario(), lambda w: plane(15, w), omegas)
    er = [r.Er for r in recs]
    assert all(b >= a for a, b in zip(er, er[1:]))


def test_sweeps_accept_executor_map():
    from concurrent.futures import ThreadPoolExecutor

    sc, ex = scenario(N=4), plane(N=4)
    serial = rho_sweep(sc, ex, [0.1, 0.01])
    with ThreadPoolExecutor(2) as pool:
        threaded = rho_sweep(sc, ex, [0.1, 0.01], map_fn=pool.map)
    assert serial == threaded


# ---------------------------------------------------------------- busting


@pytest.mark.parametrize("n, omega, rho", [(1, 5.0, 0.1), (2, 14.0, 0.01), (1, 14.0, 0.001)])
def test_busting_round_trip(n, omega, rho):
    res = find_busting_mu0(n, omega, 1.0, rho)
    assert res.det_residual < 1e-9
    assert res.eps0 == pytest.approx(1.0 / res.mu0)
    inner = InnerMedium(eps0=res.eps0, mu0=res.mu0)
    A, _, _, _ = system_matrices(n, CloakScenario(Lossless(rho), inner, omega, n))
    assert abs(det_A(n, omega, rho, inner)) <= 1e-9 * np.prod(np.max(np.abs(A), axis=1))


def test_busting_trend():
    rhos = [0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001]
    mus = [abs(find_busting_mu0(1, 14.0, 1.0, r, refine_real=False).mu0) for r in rhos]
    assert all(b < a for a, b in zip(mus, mus[1:]))
    assert mus[-1] < 0.25
    assert 1 / mus[-1] > 4


@pytest.mark.parametrize("n", [1, 2])
def test_busting_slope_is_linear(n):
    # leading order: mu0 ~ -(rho / n) J_n(k w) / j_n(k w)
    rhos = np.geomspace(1e-4, 1e-3, 4)
    mus = [find_busting_mu0(n, 14.0, 1.0, r, refine_real=False).mu0 for r in rhos]
    assert abs(loglog_slope(rhos, mus) - 1) < 0.05
    from regcloak.specfun import BesselSet

    b = BesselSet(n, 14.0)
    lead = -(rhos[0] / n) * b.J / b.j
    assert abs(mus[0] / lead - 1) < 0.05


def test_busting_real_refinement_not_worse():
    res = find_busting_mu0(1, 14.0, 1.0, 0.01)
    assert res.mu0_real is not None
    assert res.det_residual_real < 1e-9


def test_busting_inadmissible_pair():
    # j_1 vanishes at 4.4934...
    with pytest.raises(ValueError):
        find_busting_mu0(1, 4.493409457909064, 1.0, 0.01)


# ---------------------------------------------------------------- hidden boundary and L2


def test_cauchy_norms_are_finite_and_positive():
    e, h = interface_cauchy_norm(scenario(N=5), plane(N=5))
    assert e > 0 and h > 0


def test_cauchy_core_surface_for_lossy():
    sc, ex = scenario(lossy=True, N=5), plane(N=5)
    e1, h1 = interface_cauchy_norm(sc, ex, surface="interface")
    e2, h2 = interface_cauchy_norm(sc, ex, surface="core")
    assert (e1, h1) != (e2, h2)


def test_l2_transparency():
    rho = 0.05
    val = l2_field_deviation(scenario(rho=rho, eps0=rho, mu0=rho, N=5), plane(N=5))
    assert val < 1e-10


def test_l2_positive_for_cloak():
    assert l2_field_deviation(scenario(N=5), plane(N=5)) > 0


# ---------------------------------------------------------------- field slices


def test_slice_points_layout():
    pts = slice_points("y", 0.5, 5, 1.0)
    assert pts.shape == (25, 3)
    assert np.all(pts[:, 1] == 0.5)
    assert pts[:, 0].min() == -1.0 and pts[:, 2].max() == 1.0


def test_slice_marks_invalid_points():
    pts = np.array([[0, 0, 0], [0, 0, 2.5], [0, 0, 1.0], [0.3, 0.2, 0.1]])
    E, valid = field_slice(scenario(N=3), plane(N=3), pts)
    assert valid.tolist() == [False, False, False, True]
    assert np.all(np.isnan(E[:3])) and np.all(np.isfinite(E[3]))


def test_free_space_slice_recovers_plane_wave():
    pts = slice_points("x", 0.0, 41, 1.9)
    r = np.linalg.norm(pts, axis=1)
    pts = pts[(r > 0) & (r < 1.9)]
    d = np.array([0.0, 1.0, 0.0])
    exact = np.exp(-1j * 5.0 * (pts @ d))[:, None] * np.array(P)
    E15, _ = field_slice(scenario(N=15), plane(15), pts, free_space=True)
    E40, _ = field_slice(scenario(N=40), plane(40), pts, free_space=True)
    # the N=40 expansion is the plane wave to rounding level
    assert np.max(np.abs(E40 - exact)) < 1e-10
    # the N=15 error is exactly its truncation tail
    assert np.max(np.abs((E15 - exact) - (E15 - E40))) < 1e-8


def tangential_jump(sc, ex, radius, npts=40, offset=1e-12):
    rng = np.random.default_rng(7)
    dirs = rng.normal(size=(npts, 3))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    inside, _ = field_slice(sc, ex, dirs * (radius - offset))
    outside, _ = field_slice(sc, ex, dirs * (radius + offset))
    jump = np.cross(dirs, inside - outside)
    scale = np.max(np.abs(np.cross(dirs, outside)))
    return np.max(np.abs(jump)), scale


@pytest.mark.parametrize("source", [False, True])
def test_tangential_continuity_lossless(source):
    ex = table2_source(plane(8)) if source else plane(8)
    jump, scale = tangential_jump(scenario(N=8), ex, 1.0)
    assert jump < 1e-8 * max(scale, 1.0)


@pytest.mark.parametrize("radius", [1.0, 0.5])
def test_tangential_continuity_lossy(radius):
    jump, scale = tangential_jump(scenario(lossy=True, N=8), plane(8), radius)
    assert jump < 1e-8 * max(scale, 1.0)


def test_shell_trace_matches_boundary_data():
    rng = np.random.default_rng(11)
    dirs = rng.normal(size=(40, 3))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    pts = dirs * (2 - 1e-12)
    for lossy in (False, True):
        sc, ex = scenario(lossy=lossy, N=10), plane(10)
        E, _ = field_slice(sc, ex, pts)
        E0, _ = field_slice(sc, ex, pts, free_space=True)
        assert np.max(np.abs(np.cross(dirs, E - E0))) < 1e-9


def test_slice_reuses_given_solution():
    sc, ex = scenario(N=4), plane(4)
    pts = slice_points("z", 0.3, 7, 1.5)
    a, _ = field_slice(sc, ex, pts)
    b, _ = field_slice(sc, ex, pts, solution=solve(sc, ex))
    assert np.array_equal(np.isnan(a), np.isnan(b))
    assert np.allclose(a[~np.isnan(a)], b[~np.isnan(b)], rtol=0, atol=0)
