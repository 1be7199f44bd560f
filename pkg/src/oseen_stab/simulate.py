"""
Open- and closed-loop linear dynamics in modal coordinates.

Writing the state as Y = z + D u with the boundary control u, the unstable
coordinates of z obey zeta' = -K zeta and are evaluated in closed form.  Each
retained stable amplitude obeys

    z_s' + lambda_s z_s = eta * sum_j G_sj (K zeta)_j,   G_sj = <D(phi_j + alpha n), phi*_s>,

whose forcing is a sum of exponentials, so it is also integrated exactly.
"""

from dataclasses import dataclass, field

import numpy as np

from .channel import combine, gram
from .errors import FitUndefined

__all__ = [
    "Trajectory",
    "ClosedLoopModel",
    "phi1",
    "exp_convolution",
    "simulate_linear",
    "simulate_open_loop",
    "fit_decay_rate",
    "sample_times",
    "modal_initial_condition",
    "retained_stable",
]


@dataclass(eq=False)
class Trajectory:
    """Sampled modal amplitudes and reconstructed norms.

    ``z_unstable`` holds the unstable coordinates (zeta for the closed loop,
    eigen-coordinates for the open loop); ``z_stable`` the retained stable ones.
    """

    times: np.ndarray
    z_unstable: np.ndarray
    z_stable: np.ndarray
    state_norm: np.ndarray
    control_norm: np.ndarray
    label: str = "closed"
    gamma0: float = None
    gamma_fit: float = None
    checks: dict = field(default_factory=dict)
    outcome: str = "completed"

    def ratio(self):
        return float(self.state_norm[-1] / self.state_norm[0])


def sample_times(T, dt):
    if not (T > 0 and dt > 0):
        raise ValueError("T and dt must be positive")
    n = int(round(T / dt))
    if abs(n * dt - T) > 1e-9 * T:
        n = int(np.floor(T / dt))
    return dt * np.arange(n + 1)


def phi1(x):
    """(1 - exp(-x)) / x, continuous at x = 0."""
    x = np.asarray(x, dtype=complex)
    small = np.abs(x) < 1e-300
    xs = np.where(small, 1.0, x)
    return np.where(small, 1.0, -np.expm1(-xs) / xs)


def exp_convolution(lam, kappa, t):
    """int_0^t exp(-lam (t - s)) exp(-kappa s) ds, stable for either ordering of rates.

    At lam == kappa this is the resonant value t exp(-kappa t).
    """
    lam = np.asarray(lam, dtype=complex)
    kappa = np.asarray(kappa, dtype=complex)
    t = np.asarray(t, dtype=float)
    x = (lam - kappa) * t
    faster = x.real >= 0
    a = t * np.exp(-kappa * t) * phi1(np.where(faster, x, 0))
    # when kappa decays faster, expand around exp(-lam t) instead
    b = t * np.exp(-lam * t) * phi1(np.where(faster, 0, -x))
    return np.where(faster, a, b)


class ClosedLoopModel:
    """Precomputed data for closed-loop simulation with a given law.

    Parameters
    ----------
    spectrum : Spectrum
    law : FeedbackLaw
    lifted : LiftedDirections
        Lifts of the control directions with the law's shift.
    stable : sequence of int, optional
        Indices into ``spectrum.modes`` of the retained stable modes.
    stable_cutoff : float
        Without ``stable``, keep the stable modes with Re lambda <= stable_cutoff.
    """

    def __init__(self, spectrum, law, lifted, stable=None, stable_cutoff=10.0):
        if abs(lifted.k_shift - law.gains.k_shift) > 1e-14 * max(1.0, law.gains.k_shift):
            raise ValueError("lifted fields and law use different shifts")
        self.spectrum, self.law, self.lifted = spectrum, law, lifted
        N = law.N
        self.N = N
        self.stable = retained_stable(spectrum, stable_cutoff) if stable is None else list(stable)
        self.lam_s = spectrum.lambdas[self.stable]
        stab_fields = spectrum.fields(self.stable)
        self.stab_stars = spectrum.adjoint_fields(self.stable)
        self.fields = list(law.basis) + stab_fields
        self.G = gram(list(lifted.fields), self.stab_stars).T  # G[s, j]
        self.P = gram(list(lifted.fields), law.basis_star).T  # P[l, j] = <D(phi_j + alpha n), basis*_l>
        self.gram = gram(self.fields, self.fields)
        self.cross = gram(self.fields, law.basis_star)
        self.eta = law.gains.eta
        kap, V = np.linalg.eig(law.closed_loop)
        self.kappa, self.V, self.Vinv = kap, V, np.linalg.inv(V)
        an = law.alpha_boundary()
        self.bvec = np.stack(
            [np.concatenate([(law.trace_field(j) + an).u.ravel(), (law.trace_field(j) + an).v.ravel()])
             for j in range(N)], axis=1)

    def initial_coordinates(self, y0):
        """zeta(0) = M omega(0) and z_s(0) = <y0, phi*_s> - eta G zeta(0)."""
        omega = self.law.measure(y0)
        zeta0 = self.law.gain_matrix @ omega
        Ys = gram([y0], self.stab_stars)[0] if self.stable else np.zeros(0, complex)
        zs0 = Ys - self.eta * (self.G @ zeta0)
        return zeta0, zs0

    def evaluate(self, zeta0, zs0, t):
        """zeta(t) and z_s(t) at sample times t (closed form)."""
        t = np.asarray(t, dtype=float)
        r = self.Vinv @ zeta0
        E = np.exp(-np.outer(t, self.kappa))  # (n_t, N)
        zeta = (E * r) @ self.V.T
        if not self.stable:
            return zeta, np.zeros((len(t), 0), complex)
        h = self.eta * (self.G @ (self.V * (self.kappa * r)))  # (S, N)
        conv = exp_convolution(self.lam_s[None, :, None], self.kappa[None, None, :], t[:, None, None])
        zs = np.exp(-np.outer(t, self.lam_s)) * zs0 + np.einsum("tsq,sq->ts", conv, h)
        return zeta, zs

    def coefficients(self, zeta, zs):
        """Expansion of Y = z + D u over the retained modes ``self.fields``.

        The lifted fields enter through their pairings with the unstable and
        stable adjoint modes, so Y is the state projected on the retained span.
        """
        omega = zeta + self.eta * zeta @ self.P.T
        Ys = zs + self.eta * zeta @ self.G.T
        return np.concatenate([omega, Ys], axis=-1)

    def norms(self, c):
        return np.sqrt(np.maximum(np.einsum("ta,ab,tb->t", c.conj(), self.gram.T, c).real, 0.0))

    def control_norms(self, zeta):
        b = (self.eta * zeta) @ self.bvec.T
        return np.sqrt(np.sum(np.abs(b) ** 2, axis=1))

    def yform_mismatch(self, c, zeta):
        """Largest gap between eta M <Y, basis*> and eta zeta, relative to max |eta zeta|."""
        omega = c @ self.cross  # omega_l = sum_a c_a <f_a, star_l>
        cy = self.eta * omega @ self.law.gain_matrix.T
        cz = self.eta * zeta
        scale = max(np.abs(cz).max(), 1e-300)
        return float(np.abs(cy - cz).max() / scale)


def retained_stable(spectrum, cutoff=10.0):
    """Indices of stable modes with Re lambda <= cutoff (closed under the m -> -m pairing)."""
    return [j for j in range(spectrum.N, len(spectrum.modes)) if spectrum.modes[j].lam.real <= cutoff]


def simulate_linear(spectrum, law, lifted, y0, T, dt, stable=None, model=None, stable_cutoff=10.0):
    """Closed-loop linear trajectory sampled every ``dt`` up to ``T``.

    ``y0`` should lie in the span of the retained modes; the part outside it
    is dropped by the biorthogonal expansion.
    """
    model = model or ClosedLoopModel(spectrum, law, lifted, stable, stable_cutoff)
    t = sample_times(T, dt)
    zeta0, zs0 = model.initial_coordinates(y0)
    zeta, zs = model.evaluate(zeta0, zs0, t)
    c = model.coefficients(zeta, zs)
    norm = model.norms(c)
    gamma0 = law.gains.gamma0
    bound = np.exp(-gamma0 * t)[:, None] * np.abs(zeta0)[None, :] * (1 + 1e-9)
    checks = {"yform_mismatch": model.yform_mismatch(c, zeta)}
    if law.variant != "real":
        checks["modal_bound"] = bool(np.all(np.abs(zeta) <= bound + 1e-300))
    traj = Trajectory(t, zeta, zs, norm, model.control_norms(zeta), "closed", gamma0, checks=checks)
    if np.all(norm > 0):
        traj.gamma_fit = fit_decay_rate(traj)
    return traj


def simulate_open_loop(spectrum, y0, T, dt, stable=None, stable_cutoff=10.0):
    """Uncontrolled trajectory: every modal amplitude evolves as exp(-lambda t)."""
    N = spectrum.N
    idx = list(range(N)) + (retained_stable(spectrum, stable_cutoff) if stable is None else list(stable))
    fields = spectrum.fields(idx)
    c0 = spectrum.project(y0, idx)
    lam = spectrum.lambdas[idx]
    t = sample_times(T, dt)
    c = np.exp(-np.outer(t, lam)) * c0
    G = gram(fields, fields)
    norm = np.sqrt(np.maximum(np.einsum("ta,ab,tb->t", c.conj(), G.T, c).real, 0.0))
    traj = Trajectory(t, c[:, :N], c[:, N:], norm, np.zeros_like(t), "open")
    if np.all(norm > 0):
        traj.gamma_fit = fit_decay_rate(traj)
    return traj


def fit_decay_rate(traj, window=0.5):
    """Negated least-squares slope of log(state_norm) over the last ``window`` of the samples.

    ``traj`` is a Trajectory or a (times, norms) pair.
    """
    if isinstance(traj, tuple):
        t, n = (np.asarray(a, dtype=float) for a in traj)
    else:
        t, n = traj.times, traj.state_norm
    if not 0 < window <= 1:
        raise ValueError("window must lie in (0, 1]")
    t0 = t[0] + (1 - window) * (t[-1] - t[0])
    sel = t >= t0 - 1e-12 * max(1.0, abs(t[-1]))
    if sel.sum() < 2:
        raise FitUndefined("fewer than two samples in the fit window")
    if np.any(~(n[sel] > 0)):
        raise FitUndefined("non-positive norm in the fit window")
    slope = np.polyfit(t[sel], np.log(n[sel]), 1)[0]
    return float(-slope)


def modal_initial_condition(spectrum, seed=0, n_modes=None, stable_cutoff=10.0):
    """Real, unit-norm random combination of the unstable and leading stable modes.

    Uses the first ``n_modes`` modes, or all modes with Re lambda <= stable_cutoff.

    Coefficients of the modes at -m are the conjugates of those at m, so the
    field is real; the selection is closed under that pairing.
    """
    rng = np.random.default_rng(seed)
    n = spectrum.N + len(retained_stable(spectrum, stable_cutoff)) if n_modes is None else int(n_modes)
    idx = _conjugate_closed(spectrum, range(n))
    coef = {}
    for j in idx:
        if j in coef:
            continue
        z = complex(rng.normal(), rng.normal())
        coef[j] = z
        coef[spectrum.mirror_index(j)] = np.conj(z)
    idx = sorted(coef)
    Y = combine([coef[j] for j in idx], spectrum.fields(idx))
    return (1.0 / Y.norm()) * Y


def _conjugate_closed(spectrum, idx):
    out = []
    for j in idx:
        if j not in out:
            out.append(j)
            out.append(spectrum.mirror_index(j))
    return out
