from types import SimpleNamespace

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy import stats

from oseen_stab.channel import ChannelFlow
from oseen_stab.controller import GainParameters
from oseen_stab.errors import FitUndefined
from oseen_stab.simulate import (
    ClosedLoopModel,
    exp_convolution,
    fit_decay_rate,
    modal_initial_condition,
    retained_stable,
    sample_times,
    simulate_linear,
    simulate_open_loop,
)
from oseen_stab.spectral import build_grid
from oseen_stab.spectrum import compute_spectrum


def _quad(lam, kappa, t):
    with mpmath.workdps(30):
        lam, kappa = mpmath.mpc(lam), mpmath.mpc(kappa)
        f = lambda s: mpmath.exp(-lam * (t - s) - kappa * s)  # noqa: E731
        return complex(mpmath.quad(f, mpmath.linspace(0, t, 9)))


@pytest.mark.parametrize(
    "lam,kappa",
    [(1.0, 2.0), (2.0, 1.0), (0.5 + 3j, 0.24 + 22j), (30.0, 0.2), (1.0 + 1j, 1.0 + 1j), (1.0, 1.0 + 1e-13)],
)
def test_exp_convolution_against_quadrature(lam, kappa):
    for t in (0.0, 0.3, 2.0, 7.5):
        ref = _quad(lam, kappa, t)
        assert abs(exp_convolution(lam, kappa, t) - ref) <= 1e-11 * max(abs(ref), 1e-300) + 1e-15


def test_resonant_branch_closed_form():
    t = np.linspace(0, 5, 11)
    assert_allclose(exp_convolution(0.7, 0.7, t), t * np.exp(-0.7 * t), rtol=1e-15)


def test_single_mode_synthetic_closed_form():
    g = GainParameters.from_values([-1.0], 1.0, 3.0, 3.0)
    K = np.diag(np.array(g.mu) * np.array(g.lambdas))
    kap, V = np.linalg.eig(K)
    model = SimpleNamespace(kappa=kap, V=V, Vinv=np.linalg.inv(V), stable=[])
    t = sample_times(3.0, 0.1)
    z0 = np.array([0.3 - 0.4j])
    zeta, zs = ClosedLoopModel.evaluate(model, z0, np.zeros(0), t)
    assert_allclose(zeta[:, 0], z0[0] * np.exp(-2 * t), rtol=1e-12, atol=0)
    assert zs.shape == (len(t), 0)


def test_sample_times():
    t = sample_times(1.0, 0.1)
    assert t[0] == 0 and len(t) == 11 and np.all(np.diff(t) > 0)
    assert t[-1] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        sample_times(0.0, 0.1)


# ------------------------------------------------------- decay fit


def test_fit_single_exponential():
    t = np.linspace(0, 10, 1001)
    assert fit_decay_rate((t, np.exp(-2 * t))) == pytest.approx(2.0, abs=1e-6)


def test_fit_constant():
    t = np.linspace(0, 10, 1001)
    assert fit_decay_rate((t, np.full_like(t, 3.0))) == pytest.approx(0.0, abs=1e-9)


def test_fit_two_rate_signal():
    t = np.linspace(0, 10, 1001)
    n = np.exp(-t) + np.exp(-5 * t)
    sel = t >= 5.0
    ref = -stats.linregress(t[sel], np.log(n[sel])).slope
    g = fit_decay_rate((t, n), window=0.5)
    assert g == pytest.approx(ref, abs=1e-12)
    assert abs(g - 1.0) <= 1e-3


@pytest.mark.parametrize("bad", [0.0, -1.0, np.nan])
def test_fit_undefined(bad):
    t = np.linspace(0, 1, 11)
    n = np.ones_like(t)
    n[-1] = bad
    with pytest.raises(FitUndefined):
        fit_decay_rate((t, n))


def test_fit_rejects_bad_window():
    t = np.linspace(0, 1, 11)
    with pytest.raises(ValueError):
        fit_decay_rate((t, np.ones_like(t)), window=0.0)


# ------------------------------------------------------- open loop


def test_stokes_open_loop_amplitudes_decay_monotonically():
    flow = ChannelFlow.from_truncation(0.05, 0.0, 2)
    sp = compute_spectrum(flow, build_grid(32), n_keep=6)
    y0 = modal_initial_condition(sp, seed=3, n_modes=len(sp.modes))
    tr = simulate_open_loop(sp, y0, 2.0, 0.05, stable=range(len(sp.modes)))
    amp = np.abs(tr.z_stable)
    assert sp.N == 0
    assert np.all(np.diff(amp, axis=0) <= 0)
    assert np.all(np.diff(tr.state_norm) < 0)


def test_open_loop_single_unstable_mode(acc):
    sp = acc.spectrum
    T = 10.0
    tr = simulate_open_loop(sp, sp.field(0), T, 0.1)
    assert tr.ratio() >= 0.5 * np.exp(-sp.lambdas[0].real * T)


def test_open_loop_zero_data(acc):
    sp = acc.spectrum
    tr = simulate_open_loop(sp, 0.0 * sp.field(0), 1.0, 0.1)
    assert np.all(tr.state_norm == 0) and tr.gamma_fit is None


# ------------------------------------------------------- closed loop


def test_stable_initial_data_needs_no_control(acc):
    sp = acc.spectrum
    law, lifted = acc.law()
    s = sp.N + 2
    tr = simulate_linear(sp, law, lifted, sp.field(s), 2.0, 0.05)
    assert np.abs(tr.z_unstable).max() <= 1e-8
    assert tr.control_norm.max() <= 1e-8 * law.gains.eta
    j = retained_stable(sp).index(s)
    assert_allclose(tr.z_stable[:, j], np.exp(-sp.lambdas[s] * tr.times), rtol=1e-7, atol=1e-9)


def test_unstable_amplitudes_equal_closed_form_for_any_dt(acc):
    sp = acc.spectrum
    law, lifted = acc.law()
    y0 = modal_initial_condition(sp, seed=1)
    model = ClosedLoopModel(sp, law, lifted)
    rho = np.diag(law.closed_loop)
    zeta0, _ = model.initial_coordinates(y0)
    for dt in (0.1, 0.037, 0.01):
        tr = simulate_linear(sp, law, lifted, y0, 2.0, dt, model=model)
        exact = zeta0[None, :] * np.exp(-np.outer(tr.times, rho))
        assert np.abs(tr.z_unstable - exact).max() <= 1e-12 * np.abs(zeta0).max()


def test_stable_part_is_independent_of_dt(acc):
    sp = acc.spectrum
    law, lifted = acc.law()
    y0 = modal_initial_condition(sp, seed=2)
    model = ClosedLoopModel(sp, law, lifted)
    coarse = simulate_linear(sp, law, lifted, y0, 2.0, 0.02, model=model)
    fine = simulate_linear(sp, law, lifted, y0, 2.0, 0.01, model=model)
    dev = np.abs(fine.z_stable[::2] - coarse.z_stable).max()
    assert dev <= 1e-12 * np.abs(coarse.z_stable).max()


def test_closed_loop_acceptance_run(acc):
    sp = acc.spectrum
    law, lifted = acc.law()
    cfg = acc.cfg
    y0 = modal_initial_condition(sp, seed=cfg.seed)
    tr = simulate_linear(sp, law, lifted, y0, cfg.T, cfg.dt)
    assert tr.checks["modal_bound"]
    assert tr.checks["yform_mismatch"] <= 1e-8
    gap = min(m.lam.real for m in sp.stable)
    assert tr.gamma_fit >= 0.9 * min(law.gains.gamma0, gap)
    assert tr.ratio() <= 1e-3
    op = simulate_open_loop(sp, y0, cfg.T, cfg.dt)
    assert op.ratio() >= 10.0


@pytest.mark.parametrize("variant", ["real", "restricted"])
def test_closed_loop_variants_decay(acc, variant):
    sp = acc.spectrum
    law, lifted = acc.law(variant)
    y0 = modal_initial_condition(sp, seed=0)
    # the one-wall law has a longer transient; fit over the acceptance horizon
    tr = simulate_linear(sp, law, lifted, y0, acc.cfg.T, 0.05)
    assert tr.checks["yform_mismatch"] <= 1e-8
    assert tr.gamma_fit >= 0.9 * law.gains.gamma0


def test_mismatched_shift_rejected(acc):
    law, lifted = acc.law()
    bad = SimpleNamespace(k_shift=lifted.k_shift + 1.0, fields=lifted.fields, alpha_field=lifted.alpha_field)
    with pytest.raises(ValueError):
        ClosedLoopModel(acc.spectrum, law, bad)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=10, deadline=None)
def test_modal_initial_condition_is_real_and_unit(seed):
    flow = ChannelFlow.from_truncation(0.05, 1.0, 2)
    sp = compute_spectrum(flow, build_grid(32), n_keep=6)
    Y = modal_initial_condition(sp, seed=seed, n_modes=6)
    assert Y.norm() == pytest.approx(1.0, abs=1e-12)
    M = Y.conj_mirror()
    assert np.abs(M.v - Y.v).max() <= 1e-12
