"""
Finite-dimensional Galerkin surrogate of the nonlinear closed loop.

The state is kept in the retained eigenbasis: the unstable coordinates zeta
of z = Y - D u and a set of leading stable amplitudes.  The convection term
(Y . grad) Y is projected on the retained adjoint modes through a precomputed
quadratic tensor.  Products that land on the zero mode or outside the retained
wavenumbers are dropped.
"""

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .channel import gram
from .simulate import Trajectory, fit_decay_rate, sample_times

__all__ = [
    "convective_term",
    "energy_transfer",
    "quadratic_tensor",
    "GalerkinModel",
    "leading_stable",
    "simulate_nonlinear_galerkin",
    "stability_radius",
    "richardson_ratio",
]


def _arrays(fields):
    g = fields[0].grid
    U = np.stack([f.u for f in fields])
    V = np.stack([f.v for f in fields])
    return U, V, U @ g.D1.T, V @ g.D1.T


def _triads(wavenumbers):
    ws = list(wavenumbers)
    return [(ws.index(p + q), ws.index(p), ws.index(q), q) for p in ws for q in ws if p + q in ws]


def convective_term(f, g):
    """Modes of (f . grad) g at the retained wavenumbers, as arrays (N_x, N_y)."""
    Uf, Vf, _, _ = _arrays([f])
    _, _, dUg, dVg = _arrays([g])
    Ug, Vg = g.u, g.v
    Nx = np.zeros_like(Ug)
    Ny = np.zeros_like(Vg)
    for m, p, q, qv in _triads(f.wavenumbers):
        Nx[m] += Uf[0, p] * (1j * qv) * Ug[q] + Vf[0, p] * dUg[0, q]
        Ny[m] += Uf[0, p] * (1j * qv) * Vg[q] + Vf[0, p] * dVg[0, q]
    return Nx, Ny


def energy_transfer(f, g=None):
    """<(f . grad) g, g> summed over the retained wavenumbers (g defaults to f).

    Zero for divergence-free f vanishing on the walls, up to quadrature error.
    """
    g = f if g is None else g
    Nx, Ny = convective_term(f, g)
    w = f.grid.quad_weights
    return complex(np.sum((Nx * g.u.conj() + Ny * g.v.conj()) @ w))


def quadratic_tensor(fields, stars):
    """T[n, a, b] = <(f_a . grad) f_b, star_n>."""
    w = fields[0].grid.quad_weights
    U, V, dU, dV = _arrays(fields)
    Us, Vs, _, _ = _arrays(stars)
    T = np.zeros((len(stars), len(fields), len(fields)), complex)
    for m, p, q, qv in _triads(fields[0].wavenumbers):
        su = Us[:, m].conj() * w
        sv = Vs[:, m].conj() * w
        T += np.einsum("ay,by,ny->nab", U[:, p], 1j * qv * U[:, q], su)
        T += np.einsum("ay,by,ny->nab", V[:, p], dU[:, q], su)
        T += np.einsum("ay,by,ny->nab", U[:, p], 1j * qv * V[:, q], sv)
        T += np.einsum("ay,by,ny->nab", V[:, p], dV[:, q], sv)
    return T


def leading_stable(spectrum, count):
    """The first ``count`` stable modes by Re lambda, closed under m -> -m (count rounded down to even)."""
    out = []
    for j in range(spectrum.N, len(spectrum.modes)):
        if len(out) + 2 > count:
            break
        if j in out:
            continue
        out += [j, spectrum.mirror_index(j)]
    return sorted(set(out))


@dataclass(eq=False)
class GalerkinModel:
    """Modal ODE  zeta' = -K zeta - M N_u,  z_s' = -lambda_s z_s - eta G zeta' - N_s."""

    spectrum: object
    law: object
    lifted: object
    stable: list

    def __post_init__(self):
        sp, law = self.spectrum, self.law
        self.N = law.N
        self.eta = law.gains.eta
        self.lam_s = sp.lambdas[self.stable]
        self.fields = list(law.basis) + sp.fields(self.stable)
        stars = list(law.basis_star) + sp.adjoint_fields(self.stable)
        self.G = gram(list(self.lifted.fields), stars[self.N:]).T
        self.P = gram(list(self.lifted.fields), law.basis_star).T
        self.gram = gram(self.fields, self.fields)
        self.T = quadratic_tensor(self.fields, stars)
        self.K = law.closed_loop
        self.M = law.gain_matrix

    @property
    def n_modes(self):
        return self.N + len(self.stable)

    def state_coefficients(self, x):
        """Coefficients of Y on ``self.fields`` from (zeta, z_s); x may be (n,) or (n, n_t)."""
        N = self.N
        zeta, zs = x[:N], x[N:]
        omega = zeta + self.eta * (self.P @ zeta)
        Ys = zs + self.eta * (self.G @ zeta)
        return np.concatenate([omega, Ys])

    def initial_state(self, y0):
        omega = self.law.measure(y0)
        zeta0 = self.M @ omega
        Ys = gram([y0], self.spectrum.adjoint_fields(self.stable))[0] if self.stable else np.zeros(0)
        return np.concatenate([zeta0, Ys - self.eta * (self.G @ zeta0)])

    def norm(self, x):
        c = self.state_coefficients(x)
        return np.sqrt(np.maximum(np.einsum("a...,ab,b...->...", c.conj(), self.gram.T, c).real, 0.0))

    def rhs(self, t, x, nonlinear=True):
        N = self.N
        zeta, zs = x[:N], x[N:]
        if nonlinear:
            c = self.state_coefficients(x)
            Nl = np.einsum("nab,a,b->n", self.T, c, c)
        else:
            Nl = np.zeros(self.n_modes, complex)
        dzeta = -self.K @ zeta - self.M @ Nl[:N]
        dzs = -self.lam_s * zs - self.eta * (self.G @ dzeta) - Nl[N:]
        return np.concatenate([dzeta, dzs])


def simulate_nonlinear_galerkin(spectrum, law, lifted, y0, T, dt, n_modes=None, model=None,
                                nonlinear=True, rtol=1e-10, blowup=1e6):
    """Integrate the Galerkin surrogate with an adaptive 8th-order Runge--Kutta method.

    The run stops with outcome ``diverged`` once the state norm exceeds
    ``blowup`` times its initial value.
    """
    if model is None:
        if n_modes is None:
            raise ValueError("give n_modes or a prebuilt model")
        model = GalerkinModel(spectrum, law, lifted, leading_stable(spectrum, n_modes - law.N))
    t = sample_times(T, dt)
    x0 = model.initial_state(y0)
    n0 = float(model.norm(x0))
    if n0 == 0.0:
        z = np.zeros((len(t), model.n_modes), complex)
        return Trajectory(t, z[:, : model.N], z[:, model.N:], np.zeros(len(t)), np.zeros(len(t)),
                          "galerkin", law.gains.gamma0, outcome="decayed")

    def blow(tt, x, *_):
        return model.norm(x) - blowup * n0

    blow.terminal = True
    sol = solve_ivp(model.rhs, (0.0, t[-1]), x0, method="DOP853", t_eval=t, rtol=rtol,
                    atol=1e-14 * n0, events=blow, args=(nonlinear,))
    X = sol.y
    ts = sol.t
    norm = model.norm(X)
    zeta = X[: model.N].T
    ctrl = np.linalg.norm(law.gains.eta * zeta, axis=1)
    traj = Trajectory(ts, zeta, X[model.N:].T, norm, ctrl, "galerkin", law.gains.gamma0)
    if sol.status == 1:
        traj.outcome = "diverged"
    elif sol.status < 0:
        traj.outcome = "failed"
        traj.checks["message"] = sol.message
    else:
        traj.gamma_fit = fit_decay_rate(traj) if np.all(norm > 0) else np.inf
        ok = traj.gamma_fit >= 0.8 * law.gains.gamma0
        traj.outcome = "decayed" if ok else "not_decayed"
    return traj


def _decays(model, shape, amp, T, dt):
    tr = simulate_nonlinear_galerkin(None, model.law, model.lifted, amp * shape, T, dt, model=model)
    return tr.outcome == "decayed", tr


def stability_radius(model, shape, T, dt, start=1e-3, steps=14, max_amp=1e8):
    """Bisect the initial amplitude separating decaying from non-decaying runs.

    ``shape`` is a unit-norm initial field.  Returns a dict with the largest
    amplitude found to decay (``rho``), the smallest failing one, and whether
    the run at 10 * rho fails.
    """
    lo, hi = 0.0, None
    a = start
    while a <= max_amp:
        ok, _ = _decays(model, shape, a, T, dt)
        if ok:
            lo = a
            a *= 10.0
        else:
            hi = a
            break
    if hi is None:
        return {"rho": lo, "fail_amplitude": None, "fails_at_10rho": False, "bracket": (lo, None)}
    if lo == 0.0:
        a = hi
        while lo == 0.0 and a > 1e-12:
            a /= 10.0
            ok, _ = _decays(model, shape, a, T, dt)
            if ok:
                lo = a
            else:
                hi = a
    for _ in range(steps):
        mid = np.sqrt(lo * hi)
        ok, _ = _decays(model, shape, mid, T, dt)
        if ok:
            lo = mid
        else:
            hi = mid
    ok10, tr10 = _decays(model, shape, 10.0 * lo, T, dt)
    return {"rho": float(lo), "fail_amplitude": float(hi), "fails_at_10rho": not ok10,
            "outcome_at_10rho": tr10.outcome, "bracket": (float(lo), float(hi))}


def richardson_ratio(model, shape, eps, T, dt):
    """Deviation of the nonlinear run from the linear one at 2 eps over that at eps."""
    devs = []
    for a in (eps, 2 * eps):
        tn = simulate_nonlinear_galerkin(None, model.law, model.lifted, a * shape, T, dt, model=model)
        tl = simulate_nonlinear_galerkin(None, model.law, model.lifted, a * shape, T, dt, model=model,
                                         nonlinear=False)
        Xn = np.concatenate([tn.z_unstable.T, tn.z_stable.T])
        Xl = np.concatenate([tl.z_unstable.T, tl.z_stable.T])
        devs.append(float(np.max(model.norm(Xn - Xl))))
    return devs[1] / devs[0], devs
