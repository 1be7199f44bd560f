import numpy as np
import pytest
import sympy as sp_
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy.integrate import solve_ivp
from scipy.optimize import brentq, newton

from oseen_stab.channel import ChannelFlow, eval_base_flow
from oseen_stab.errors import DegeneratePairing, NeutralEigenvalue
from oseen_stab.spectral import build_grid
from oseen_stab.spectrum import (
    Eigenpair,
    _eig,
    assemble_adjoint,
    assemble_orr_sommerfeld,
    biorthonormalize,
    check_resolution,
    compute_spectrum,
    count_unstable,
    instability_sweep,
    select_configuration,
    semisimple_report,
    solve_spectrum,
    unique_continuation_check,
    wall_curvature_margin,
)


# ---------------------------------------------------------------- oracles

def _stokes_det(s, m):
    """Clamped-wall determinant for v = c1 cosh(m y) + c2 sinh(m y) + c3 cos(s y) + c4 sin(s y)."""
    rows = []
    for y in (0.0, 1.0):
        rows.append([np.cosh(m * y), np.sinh(m * y), np.cos(s * y), np.sin(s * y)])
        rows.append([m * np.sinh(m * y), m * np.cosh(m * y), -s * np.sin(s * y), s * np.cos(s * y)])
    return np.linalg.det(np.array(rows))


def stokes_smallest(m, nu):
    """Smallest Stokes eigenvalue nu (s^2 + m^2) from the first root s > 0 of the determinant."""
    s = np.linspace(0.5, 20.0, 4000)
    d = np.array([_stokes_det(x, m) for x in s])
    i = int(np.flatnonzero(np.sign(d[:-1]) != np.sign(d[1:]))[0])
    r = brentq(_stokes_det, s[i], s[i + 1], args=(m,), xtol=1e-15, rtol=1e-15)
    return nu * (r * r + m * m)


def _shoot(lam, nu, a, m, n_seg=100):
    """Centre-line parity determinant of the even Orr--Sommerfeld mode.

    Two clamped solutions are integrated from y = 0 to 1/2 and re-orthonormalized
    after every segment; an eigenvalue makes v' and v''' dependent at y = 1/2.
    """
    C = -a / (2 * nu)

    def rhs(y, Y):
        v, v1, v2, v3 = Y
        U = C * (y * y - y)
        v4 = ((2 * nu * m * m + 1j * m * U - lam) * v2
              - (m * (nu * m**3 + 1j * m * m * U + 2j * C) - lam * m * m) * v) / nu
        return [v1, v2, v3, v4]

    Z = np.array([[0, 0], [0, 0], [1, 0], [0, 1]], complex)
    ys = np.linspace(0.0, 0.5, n_seg + 1)
    for y0, y1 in zip(ys[:-1], ys[1:]):
        cols = [solve_ivp(rhs, (y0, y1), Z[:, k], method="DOP853", rtol=1e-12, atol=1e-14).y[:, -1]
                for k in range(2)]
        Z, _ = np.linalg.qr(np.array(cols).T)
    return np.linalg.det(Z[[1, 3], :])


def _poly_on_grid(expr, y, grid):
    f = sp_.lambdify(y, expr, "numpy")
    return np.asarray(f(grid.nodes), dtype=complex) * np.ones(grid.M + 1)


# ---------------------------------------------------------------- assembly

def test_stokes_limit_reduces_to_biharmonic():
    g = build_grid(32)
    flow = ChannelFlow(nu=0.7, a=0.0)
    for m in (1, 2, 3):
        P = assemble_orr_sommerfeld(flow, g, m)
        I = np.eye(g.n_clamped)
        ref = -0.7 * g.C4 + 2 * 0.7 * m * m * g.C2 - 0.7 * m**4 * I
        assert np.abs(P.A - ref).max() <= 1e-14 * np.abs(ref).max()


@pytest.mark.parametrize("m", [1, 2, 3])
def test_negative_wavenumber_is_conjugate(m):
    g = build_grid(24)
    flow = ChannelFlow(nu=0.01, a=1.0)
    assert np.abs(np.conj(assemble_orr_sommerfeld(flow, g, -m).A)
                  - assemble_orr_sommerfeld(flow, g, m).A).max() <= 1e-12


def test_zero_wavenumber_rejected():
    g = build_grid(16)
    with pytest.raises(ValueError):
        assemble_orr_sommerfeld(ChannelFlow(nu=1.0, a=1.0), g, 0)
    with pytest.raises(ValueError):
        assemble_adjoint(ChannelFlow(nu=1.0, a=1.0), g, 0)


def test_operator_against_symbolic_differentiation():
    g = build_grid(32)
    nu, a, m = 0.01, 1.3, 2
    flow = ChannelFlow(nu=nu, a=a)
    y = sp_.symbols("y")
    C = -a / (2 * nu)
    U = C * (y**2 - y)
    q = y**2 * (1 - y) ** 2 * (1 + 2 * y - 3 * y**2 + y**3)
    Aq = (-nu * sp_.diff(q, y, 4) + (2 * nu * m**2 + sp_.I * m * U) * sp_.diff(q, y, 2)
          - m * (nu * m**3 + sp_.I * m**2 * U + sp_.I * sp_.diff(U, y, 2)) * q)
    exact = _poly_on_grid(sp_.expand(Aq), y, g)[g.interior]
    P = assemble_orr_sommerfeld(flow, g, m)
    got = P.A @ g.restrict(_poly_on_grid(q, y, g))
    assert np.abs(got - exact).max() <= 1e-8 * np.abs(exact).max()
    Bq = _poly_on_grid(sp_.diff(q, y, 2) - m**2 * q, y, g)[g.interior]
    assert_allclose(P.B @ g.restrict(_poly_on_grid(q, y, g)), Bq, atol=1e-10 * np.abs(Bq).max())


def _full_operators(flow, grid, m):
    """Direct and adjoint operators on all nodes, built from the full-grid matrices."""
    nu = flow.nu
    U, Up, Upp = eval_base_flow(flow, grid.nodes)
    I = np.eye(grid.M + 1)
    B = grid.D2 - m * m * I
    A = (-nu * grid.D4 + (2 * nu * m * m + 1j * m * U)[:, None] * grid.D2
         - np.diag(m * (nu * m**3 + 1j * m * m * U + 1j * Upp)))
    As = (-nu * (grid.D4 - 2 * m * m * grid.D2 + m**4 * I) - (1j * m * U)[:, None] * B
          - (2j * m * Up)[:, None] * grid.D1)
    return A, As


@given(st.integers(0, 2**31 - 1), st.sampled_from([1, 2, 3]))
@settings(max_examples=25, deadline=None)
def test_adjoint_identity_on_clamped_polynomials(seed, m):
    rng = np.random.default_rng(seed)
    g = build_grid(32)
    flow = ChannelFlow(nu=0.02, a=1.0)
    yv = g.nodes
    bump = yv**2 * (1 - yv) ** 2
    v = bump * np.polyval(rng.normal(size=4) + 1j * rng.normal(size=4), yv)
    w = bump * np.polyval(rng.normal(size=4) + 1j * rng.normal(size=4), yv)
    A, As = _full_operators(flow, g, m)
    lhs = g.quad_weights @ ((A @ v) * w.conj())
    rhs = g.quad_weights @ (v * (As @ w).conj())
    assert abs(lhs - rhs) <= 1e-8 * (abs(lhs) + abs(rhs))
    # the assembled clamped pencils are the interior rows of the full operators
    Pd, Pa = assemble_orr_sommerfeld(flow, g, m), assemble_adjoint(flow, g, m)
    S = g.interior
    assert_allclose(Pd.A @ g.restrict(v), (A @ v)[S], atol=1e-9 * np.abs(A @ v).max())
    assert_allclose(Pa.A @ g.restrict(w), (As @ w)[S], atol=1e-9 * np.abs(As @ w).max())


def test_stokes_adjoint_equals_direct():
    g = build_grid(32)
    flow = ChannelFlow(nu=1.0, a=0.0)
    for m in (1, 2):
        d, a = assemble_orr_sommerfeld(flow, g, m), assemble_adjoint(flow, g, m)
        assert np.abs(d.A - a.A).max() <= 1e-12 * np.abs(d.A).max()


def test_adjoint_eigenvalues_are_conjugates():
    g, gc = build_grid(48), build_grid(72)
    flow = ChannelFlow(nu=0.01, a=1.0)
    for m in (1, 2):
        d = solve_spectrum(assemble_orr_sommerfeld(flow, g, m), 12, check=assemble_orr_sommerfeld(flow, gc, m))
        a = solve_spectrum(assemble_adjoint(flow, g, m), 20, check=assemble_adjoint(flow, gc, m))
        adj = np.array([np.conj(p.value) for p in a])
        for p in d:
            assert np.min(np.abs(adj - p.value)) <= 1e-8 * (1 + abs(p.value))


# ---------------------------------------------------------------- eigenvalues

def test_stokes_unit_viscosity_is_real_and_positive():
    g, gc = build_grid(32), build_grid(48)
    flow = ChannelFlow(nu=1.0, a=0.0)
    pairs = solve_spectrum(assemble_orr_sommerfeld(flow, g, 1), 30, check=assemble_orr_sommerfeld(flow, gc, 1))
    lam = np.array([p.value for p in pairs])
    assert len(lam) >= 5
    assert np.all(np.abs(lam.imag) <= 1e-8) and np.all(lam.real > 0)


@pytest.mark.parametrize("m", [1, 2, 3])
def test_stokes_smallest_matches_characteristic_root(m):
    g = build_grid(32)
    lam, _ = _eig(assemble_orr_sommerfeld(ChannelFlow(nu=1.0, a=0.0), g, m))
    ref = stokes_smallest(m, 1.0)
    assert abs(lam[0] - ref) <= 1e-8 * ref


def test_poiseuille_benchmark_two_resolutions_and_shooting():
    # half-height Reynolds number 10^4 with unit half-height wavenumber
    nu, a, m = 0.0025, 1.0, 2
    flow = ChannelFlow.from_truncation(nu, a, 3)
    l64 = _eig(assemble_orr_sommerfeld(flow, build_grid(64), m))[0][0]
    l96 = _eig(assemble_orr_sommerfeld(flow, build_grid(96), m))[0][0]
    assert abs(l64 - l96) <= 1e-8 * abs(l96)
    shot = newton(lambda z: _shoot(z, nu, a, m), complex(l96.real * 0.99, l96.imag * 1.001), tol=1e-12)
    assert abs(shot - l96) <= 1e-6 * abs(l96)
    # classical complex phase speed c = 0.23752649 + 0.00373967 i; modes go as exp(i m (x - U_max c t))
    c, u_max = complex(0.23752649, 0.00373967), a / (8 * nu)
    ref = complex(-m * u_max * c.imag, m * u_max * c.real)
    assert abs(l96 - ref) <= 1e-6 * abs(ref)


def test_solve_spectrum_residual_and_no_slip():
    g, gc = build_grid(64), build_grid(96)
    flow = ChannelFlow(nu=0.003, a=1.0)
    for kind, asm in (("direct", assemble_orr_sommerfeld), ("adjoint", assemble_adjoint)):
        for p in solve_spectrum(asm(flow, g, 2), 25, check=asm(flow, gc, 2)):
            assert p.kind == kind and p.residual <= 1e-8
            dv = g.D1 @ p.v
            assert max(abs(p.v[0]), abs(p.v[-1]), abs(dv[0]), abs(dv[-1])) <= 1e-10


# ---------------------------------------------------------------- counting and semisimplicity

def test_count_unstable_examples():
    assert count_unstable([-0.1, 0.2, 1.0], 1e-6) == 1
    assert count_unstable([0.1, 0.2], 1e-6) == 0
    with pytest.raises(NeutralEigenvalue):
        count_unstable([1e-9, 0.5], 1e-6)
    with pytest.raises(ValueError):
        count_unstable([0.5, -0.5])


@given(st.lists(st.floats(-5, 5).filter(lambda x: abs(x) > 1e-6), min_size=1, max_size=12))
def test_count_unstable_counts_negative_parts(re):
    re = sorted(re)
    assert count_unstable(np.array(re) + 1j, 1e-7) == sum(x < 0 for x in re)


def test_semisimple_separated_and_conjugate_pair():
    rng = np.random.default_rng(0)
    r = semisimple_report([-1 + 2j, -1 - 2j, -0.5], rng.normal(size=(3, 6)))
    assert r.passed and all(c[1] == c[2] == 1 for c in r.clusters)
    assert len(r.clusters) == 3


def test_semisimple_detects_jordan_block():
    J = np.array([[2.0, 1.0], [0.0, 2.0]])
    lam, V = np.linalg.eig(J)
    r = semisimple_report(lam, V.T)
    assert not r.passed
    assert r.clusters[0][1:] == (2, 1)


def test_semisimple_accepts_full_rank_repeat():
    lam, V = np.linalg.eig(np.diag([3.0, 3.0, 1.0]))
    assert semisimple_report(lam, V.T).passed


# ---------------------------------------------------------------- biorthonormalization

def _clamped(rng, g, deg=4):
    y = g.nodes
    return (y**2 * (1 - y) ** 2 * np.polyval(rng.normal(size=deg) + 1j * rng.normal(size=deg), y)).astype(complex)


def test_repeated_eigenvalue_block_inversion(rng):
    g = build_grid(24)
    flow = ChannelFlow(nu=1.0, a=1.0, wavenumbers=(-1, 1))
    direct = [Eigenpair(1, "direct", -1.0 + 0.5j, _clamped(rng, g), 0.0, g) for _ in range(2)]
    adjoint = [Eigenpair(1, "adjoint", -1.0 - 0.5j, _clamped(rng, g), 0.0, g) for _ in range(2)]
    out = biorthonormalize(direct, adjoint, flow)
    assert out.N == 2
    assert np.abs(out.gram - np.eye(2)).max() <= 1e-12


def test_degenerate_pairing_raises(rng):
    g = build_grid(24)
    flow = ChannelFlow(nu=1.0, a=1.0, wavenumbers=(-1, 1))
    v = _clamped(rng, g)
    w0 = _clamped(rng, g)
    d1 = lambda f: 1j * (g.D1 @ f)  # noqa: E731
    pair = lambda f, h: g.quad_weights @ (d1(f) * d1(h).conj() + f * h.conj())  # noqa: E731
    w = w0 - (pair(w0, v) / pair(v, v)) * v  # energy-orthogonal to v
    with pytest.raises(DegeneratePairing):
        biorthonormalize([Eigenpair(1, "direct", -1.0, v, 0.0, g)],
                         [Eigenpair(1, "adjoint", -1.0, w, 0.0, g)], flow)


# ---------------------------------------------------------------- full spectrum at the acceptance point

def test_acceptance_spectrum_invariants(acc):
    sp = acc.spectrum
    g = sp.grid
    assert sp.N >= 2
    assert np.abs(sp.gram - np.eye(sp.N)).max() <= 1e-8
    assert sp.orthogonality_defect <= 1e-8
    re = sp.lambdas.real
    assert np.all(re[: sp.N] < -sp.margin) and np.all(re[sp.N:] > sp.margin)
    assert np.all(np.diff(re) >= 0)
    for md in sp.modes:
        assert md.residual <= 1e-8 and md.residual_star <= 1e-8
        v, u, vs = md.v, md.u, md.v_star
        assert max(abs(v[0]), abs(v[-1]), abs(u[0]), abs(u[-1])) <= 1e-10
        wd = md.wall_data
        assert max(abs(wd[6]), abs(wd[7])) <= 1e-10 * max(1.0, np.abs(g.D1 @ vs).max())


def test_conjugation_symmetry(acc):
    sp = acc.spectrum
    for mm in sp.flow.positive_wavenumbers:
        pos = np.sort_complex(np.array([md.lam for md in sp.modes if md.m == mm]))
        neg = np.sort_complex(np.array([np.conj(md.lam) for md in sp.modes if md.m == -mm]))
        assert pos.shape == neg.shape
        assert np.abs(pos - neg).max() <= 1e-8


def test_two_resolutions_on_simulated_modes(acc):
    """Modes carried by the simulations (Re lambda <= 10) are stable between M and 3M/2."""
    sp = acc.spectrum
    fine = build_grid(144)
    ref = {m: _eig(assemble_orr_sommerfeld(sp.flow, fine, m))[0] for m in sp.flow.positive_wavenumbers}
    for md in sp.modes:
        if md.lam.real > 10.0:
            continue
        lam = md.lam if md.m > 0 else np.conj(md.lam)
        assert np.min(np.abs(ref[abs(md.m)] - lam)) <= 1e-8 * (1 + abs(lam))


def test_unique_continuation(acc):
    sp = acc.spectrum
    rep = unique_continuation_check(sp)
    assert rep["passed"] and len(rep["modes"]) == sp.N
    assert unique_continuation_check(sp, floor=0.0)["passed"]
    g = sp.grid
    assert wall_curvature_margin(g, 1, np.zeros(g.M + 1)) == 0.0


def test_stokes_spectrum_has_no_unstable_modes():
    sp = compute_spectrum(ChannelFlow.from_truncation(0.01, 0.0, 2), build_grid(32), n_keep=10)
    assert sp.N == 0 and sp.gram.shape == (0, 0)
    assert np.all(np.abs(sp.lambdas.imag) <= 1e-8) and np.all(sp.lambdas.real > 0)
    assert unique_continuation_check(sp)["passed"]


def test_neutral_margin_raises():
    with pytest.raises(NeutralEigenvalue):
        compute_spectrum(ChannelFlow.from_truncation(0.0028, 1.0, 3), build_grid(64), margin=1.0)


def test_resolution_check_reports_every_wavenumber():
    flow = ChannelFlow.from_truncation(0.01, 1.0, 2)
    coarse, fine = check_resolution(flow, 32), check_resolution(flow, 64)
    assert set(coarse) == set(fine) == {1, 2}
    assert max(coarse.values()) > 1e-3  # under-resolved
    assert max(fine.values()) < 1e-9


def test_instability_sweep_selects_resolved_point():
    pts = instability_sweep([0.0036, 0.0028, 0.002], M=96)
    by_nu = {p.nu: p for p in pts}
    assert by_nu[0.0036].N == 0 and not by_nu[0.0036].accepted
    assert by_nu[0.0028].accepted and by_nu[0.0028].N == 2
    assert not by_nu[0.002].accepted  # under-resolved at this degree
    assert select_configuration(pts).nu == 0.0028
    assert select_configuration(pts[:1]) is None
