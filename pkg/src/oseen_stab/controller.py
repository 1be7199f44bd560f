"""
Oblique boundary feedback built from adjoint boundary traces.

The law acts on the unstable part of the state only.  With adjoint eigenmodes
phi*_i, the wall traces t_i of their normal derivatives are tangential; the
control directions phi_j = sum_i X_ij t_i with X the inverse trace Gram matrix
are dual to them on the boundary.  The applied boundary velocity is

    u = eta * sum_j c_j (phi_j + alpha n),   c = M omega,  omega_j = <Y, phi*_j>,

with M = (Lambda + k - nu eta)^{-1} (Lambda + k) and Lambda the operator
restricted to the unstable span (diagonal for the complex law).  The
unstable amplitudes then decay as exp(-K t) with K = M Lambda.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .channel import WALL_SIGN, BoundaryField, combine, gram
from .errors import HypothesisFailure, IndependenceFailure, InfeasibleGains, NoControl

__all__ = [
    "GainParameters",
    "AlphaProfile",
    "FeedbackLaw",
    "ControlValue",
    "stabilization_lhs",
    "closed_loop_rates",
    "eta_interval",
    "select_gains",
    "adjoint_traces",
    "trace_gram",
    "gram_matrix",
    "trace_combinations",
    "build_feedback",
    "evaluate_control",
    "obliqueness_report",
    "real_feedback",
    "restrict_support",
]


def stabilization_lhs(lam, k, eta, nu):
    """(|k + lam|^2 - eta k nu) Re lam - eta nu Re(lam^2); must be positive."""
    lam = np.asarray(lam, dtype=complex)
    return (np.abs(k + lam) ** 2 - eta * k * nu) * lam.real - eta * nu * (lam * lam).real


def closed_loop_rates(lam, k, eta, nu):
    """rho = lam (k + lam) / (k + lam - nu eta)."""
    lam = np.asarray(lam, dtype=complex)
    return lam * (k + lam) / (k + lam - nu * eta)


def eta_interval(lam, k, nu, theta=0.5):
    """Interval of eta with Re rho(eta) >= theta |Re lam|, or None.

    With x = nu eta, lam = a + i b and c = a (k + a) - b^2 the condition reads
    theta |a| ((k + a - x)^2 + b^2) + c x - a |k + lam|^2 <= 0.
    """
    a, b = lam.real, lam.imag
    c = a * (k + a) - b * b
    p = theta * abs(a)
    # p x^2 + (c - 2 p (k + a)) x + p ((k + a)^2 + b^2) - a |k + lam|^2 <= 0
    B = c - 2 * p * (k + a)
    C0 = p * ((k + a) ** 2 + b * b) - a * abs(k + lam) ** 2
    if p == 0:
        # linear condition c x <= a |k + lam|^2 (a < 0): a half-line when c < 0
        if c >= 0:
            return None
        return max(a * abs(k + lam) ** 2 / c, 0.0) / nu, np.inf
    disc = B * B - 4 * p * C0
    if disc < 0:
        return None
    r = np.sqrt(disc)
    lo, hi = (-B - r) / (2 * p), (-B + r) / (2 * p)
    lo = max(lo, 0.0)
    if hi <= lo:
        return None
    return lo / nu, hi / nu


@dataclass(frozen=True)
class GainParameters:
    k_shift: float
    eta: float
    mu: tuple
    lambdas: tuple
    nu: float
    theta: float = 0.5

    @classmethod
    def from_values(cls, lambdas, nu, k_shift, eta, theta=0.5):
        lam = np.asarray(lambdas, dtype=complex)
        mu = (k_shift + lam) / (k_shift + lam - nu * eta)
        return cls(float(k_shift), float(eta), tuple(complex(z) for z in mu),
                   tuple(complex(z) for z in lam), float(nu), theta)

    @property
    def lhs(self):
        return stabilization_lhs(np.array(self.lambdas), self.k_shift, self.eta, self.nu)

    @property
    def rates(self):
        return closed_loop_rates(np.array(self.lambdas), self.k_shift, self.eta, self.nu)

    @property
    def gamma0(self):
        r = self.rates
        return float(r.real.min()) if r.size else np.inf

    @property
    def pole_distance(self):
        lam = np.array(self.lambdas)
        return np.abs(self.k_shift + lam - self.nu * self.eta)

    def certificate(self):
        lam = np.array(self.lambdas)
        ok_lhs = bool(np.all(self.lhs > 0))
        ok_pole = bool(np.all(self.pole_distance >= 1e-8 * (self.k_shift + 1)))
        ok_rate = bool(np.all(self.rates.real > 0))
        return {
            "lhs": [float(x) for x in self.lhs],
            "rates": [[float(z.real), float(z.imag)] for z in self.rates],
            "pole_distance": [float(x) for x in self.pole_distance],
            "lhs_positive": ok_lhs,
            "pole_separated": ok_pole,
            "rates_positive": ok_rate,
            "passed": ok_lhs and ok_pole and ok_rate and bool(np.all(lam.real < 0)),
        }


def select_gains(unstable_lambdas, nu, theta=0.5, max_doublings=16):
    """Shift k and gain eta making every unstable closed-loop rate positive.

    k runs over 2^p * max(1, max |lam|), p = 0..max_doublings.  For each k the
    eta-intervals where Re rho_j >= theta |Re lam_j| are intersected and the
    midpoint is taken; the stabilization inequality and the pole separation
    |k + lam - nu eta| >= 1e-8 (k + 1) are then checked.
    """
    lam = np.asarray(unstable_lambdas, dtype=complex)
    if lam.size == 0:
        raise ValueError("no unstable eigenvalues: no feedback needed")
    if np.any(lam.real >= 0):
        raise ValueError("select_gains expects eigenvalues with Re < 0")
    base = max(1.0, float(np.abs(lam).max()))
    blocking = []
    for p in range(max_doublings + 1):
        k = base * 2.0**p
        ivs = [eta_interval(z, k, nu, theta) for z in lam]
        if any(iv is None for iv in ivs):
            blocking.append((k, [j for j, iv in enumerate(ivs) if iv is None]))
            continue
        lo = max(iv[0] for iv in ivs)
        hi = min(iv[1] for iv in ivs)
        if not hi > lo:
            blocking.append((k, ivs))
            continue
        eta = 0.5 * (lo + hi)
        g = GainParameters.from_values(lam, nu, k, eta, theta)
        if g.certificate()["passed"]:
            return g
        blocking.append((k, ivs))
    raise InfeasibleGains(f"no admissible (k, eta) for {len(lam)} unstable eigenvalues", blocking)


@dataclass(frozen=True)
class AlphaProfile:
    """Oblique weight alpha on the walls.

    ``wall-sign``: alpha = alpha0 * H with H = -1 at y = 0 and +1 at y = 1.
    ``cosine``: alpha = alpha0 * cos(x) on ``wall`` only, zero on the other.
    """

    kind: str = "wall-sign"
    alpha0: float = 1.0
    wall: int = None

    def values(self, x):
        """alpha on both walls at points x, shape (2, len(x))."""
        x = np.asarray(x, dtype=float)
        out = np.zeros((2, x.size))
        if self.kind == "wall-sign":
            out[0], out[1] = -self.alpha0, self.alpha0
        elif self.kind == "cosine":
            out[self.wall] = self.alpha0 * np.cos(x)
        else:
            raise ValueError(f"unknown alpha profile {self.kind!r}")
        return out

    def coefficients(self, wavenumbers):
        """Fourier coefficients per wall, shape (2, len(wavenumbers))."""
        c = np.zeros((2, len(wavenumbers)), complex)
        ws = list(wavenumbers)
        if self.kind == "wall-sign":
            c[0, ws.index(0)] = -self.alpha0
            c[1, ws.index(0)] = self.alpha0
        else:
            c[self.wall, ws.index(1)] = c[self.wall, ws.index(-1)] = 0.5 * self.alpha0
        return c

    def circulation(self):
        """Integral of alpha over the active boundary (the zero-mode content times 2 pi)."""
        c = self.coefficients((-1, 0, 1))
        walls = (0, 1) if self.kind == "wall-sign" else (self.wall,)
        return float(2 * np.pi * sum(c[w, 1].real for w in walls))

    def to_dict(self):
        return {"kind": self.kind, "alpha0": self.alpha0, "wall": self.wall}


def adjoint_traces(spectrum, bwavenumbers):
    """Tangential normal-derivative traces of the unstable adjoint modes.

    Returns t with t[i, w, b] the streamwise component of d(phi*_i)/dn at wall w
    and wavenumber bwavenumbers[b]; the wall-normal component is v*' = 0.
    """
    t = np.zeros((spectrum.N, 2, len(bwavenumbers)), complex)
    for i, md in enumerate(spectrum.unstable):
        wd = md.wall_data
        b = list(bwavenumbers).index(md.m)
        t[i, 0, b] = WALL_SIGN[0] * wd[4]
        t[i, 1, b] = WALL_SIGN[1] * wd[5]
    return t


def trace_gram(traces, walls=(0, 1)):
    """F[i, j] = sum over walls and modes of conj(t_i) t_j, and its condition number."""
    T = np.asarray(traces)[:, list(walls), :].reshape(len(traces), -1)
    F = T.conj() @ T.T
    cond = float(np.linalg.cond(F)) if F.size else 1.0
    return F, cond


def gram_matrix(spectrum, walls=(0, 1), max_cond=1e12):
    """Trace Gram matrix of the unstable adjoint modes and cond(F).

    Raises IndependenceFailure if cond(F) exceeds ``max_cond``.
    """
    bw = _bwavenumbers(spectrum.flow)
    F, cond = trace_gram(adjoint_traces(spectrum, bw), walls)
    if not np.isfinite(cond) or cond > max_cond:
        raise IndependenceFailure(f"trace Gram matrix is numerically singular (cond = {cond:.3e})")
    return F, cond


def trace_combinations(traces, walls=(0, 1), max_cond=1e12):
    """F, X = F^{-1} and the dual combinations phi_j = sum_i X_ij t_i restricted to ``walls``."""
    t = np.array(traces, dtype=complex)
    mask = np.zeros(2, bool)
    mask[list(walls)] = True
    t[:, ~mask, :] = 0.0
    F, cond = trace_gram(t, walls)
    if not np.isfinite(cond) or cond > max_cond:
        raise IndependenceFailure(f"trace Gram matrix is numerically singular (cond = {cond:.3e})")
    X = np.linalg.inv(F)
    phi = np.einsum("iwb,ij->jwb", t, X)
    return F, X, cond, phi


def _bwavenumbers(flow):
    M_x = max(flow.wavenumbers)
    return tuple(range(-M_x, M_x + 1))


@dataclass(frozen=True, eq=False)
class FeedbackLaw:
    """Boundary feedback law.

    Attributes
    ----------
    variant : str
        ``complex``, ``real`` or ``restricted``.
    gains : GainParameters
    F, X : ndarray
        Trace Gram matrix and the combination coefficients of the traces.
    cond : float
        Condition number of F.
    phi : ndarray, shape (N, 2, n_b)
        Tangential boundary profiles of the control directions.
    star_traces : ndarray, shape (N, 2, n_b)
        Traces of the measuring adjoint basis.
    basis, basis_star : list of ModeField
        Unstable basis and its biorthogonal dual used to measure the state.
    Lam, gain_matrix, closed_loop : ndarray
        Operator on the unstable span in ``basis``, M and K = M Lambda.
    alpha : AlphaProfile
    bwavenumbers : tuple
        Boundary wavenumbers, the zero mode included.
    """

    variant: str
    gains: GainParameters
    F: np.ndarray
    X: np.ndarray
    cond: float
    phi: np.ndarray
    star_traces: np.ndarray
    basis: list
    basis_star: list
    Lam: np.ndarray
    gain_matrix: np.ndarray
    closed_loop: np.ndarray
    alpha: AlphaProfile
    bwavenumbers: tuple
    wall: int = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def N(self):
        return len(self.basis)

    def trace_field(self, j):
        """phi_j as a BoundaryField (tangential)."""
        return BoundaryField(self.bwavenumbers, u=self.phi[j])

    def alpha_boundary(self):
        """alpha n as a BoundaryField (normal)."""
        c = self.alpha.coefficients(self.bwavenumbers)
        return BoundaryField(self.bwavenumbers, v=c * WALL_SIGN[:, None])

    def measure(self, Y):
        return gram([Y], self.basis_star)[0]

    def coefficients(self, omega):
        """Multipliers c of (phi_j + alpha n), including eta."""
        return self.gains.eta * (self.gain_matrix @ np.asarray(omega, dtype=complex))

    def boundary(self, c):
        c = np.asarray(c, dtype=complex)
        u = np.einsum("j,jwb->wb", c, self.phi)
        an = self.alpha_boundary()
        return BoundaryField(self.bwavenumbers, u=u, v=c.sum() * an.v)

    def delta_pairing(self):
        """P[j, i] = boundary integral of phi_j . conj(d phi*_i / dn); should be the identity."""
        return np.einsum("jwb,iwb->ji", self.phi, self.star_traces.conj())

    def to_dict(self):
        g = self.gains
        return {
            "variant": self.variant,
            "wall": self.wall,
            "k_shift": g.k_shift,
            "eta": g.eta,
            "theta": g.theta,
            "lambdas": _cplx(g.lambdas),
            "mu": _cplx(g.mu),
            "gamma0": g.gamma0,
            "F": _cplx(self.F),
            "X": _cplx(self.X),
            "cond_F": self.cond,
            "Lambda": _cplx(self.Lam),
            "gain_matrix": _cplx(self.gain_matrix),
            "alpha": self.alpha.to_dict(),
            "boundary_wavenumbers": list(self.bwavenumbers),
            "trace_profiles": _cplx(self.phi),
            "certificate": g.certificate(),
            "diagnostics": {k: _jsonable(v) for k, v in self.diagnostics.items()},
        }


def _cplx(a):
    a = np.asarray(a, dtype=complex)
    return np.stack([a.real, a.imag], axis=-1).tolist()


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return _cplx(v) if np.iscomplexobj(v) else v.tolist()
    return v


def _require_hypotheses(spectrum):
    if spectrum.N == 0:
        raise ValueError("the spectrum has no unstable modes: no feedback needed")
    if not spectrum.semisimple.passed:
        raise HypothesisFailure("unstable eigenvalues are not semisimple")


def build_feedback(spectrum, gains, alpha0=1.0, max_cond=1e12):
    """Complex feedback law on both walls with alpha = alpha0 * H."""
    _require_hypotheses(spectrum)
    bw = _bwavenumbers(spectrum.flow)
    t = adjoint_traces(spectrum, bw)
    F, X, cond, phi = trace_combinations(t, (0, 1), max_cond)
    lam = spectrum.lambdas[: spectrum.N]
    if not np.allclose(lam, gains.lambdas, rtol=1e-12, atol=0):
        raise ValueError("gains were selected for different eigenvalues")
    mu = np.array(gains.mu)
    return FeedbackLaw(
        variant="complex", gains=gains, F=F, X=X, cond=cond, phi=phi, star_traces=t,
        basis=spectrum.fields(range(spectrum.N)),
        basis_star=spectrum.adjoint_fields(range(spectrum.N)),
        Lam=np.diag(lam), gain_matrix=np.diag(mu), closed_loop=np.diag(mu * lam),
        alpha=AlphaProfile("wall-sign", float(alpha0)), bwavenumbers=bw,
    )


@dataclass(frozen=True)
class ControlValue:
    boundary: BoundaryField
    amplitudes: np.ndarray  # <P_N Y, basis_star_j>
    scalar: complex  # common multiplier of alpha n


def evaluate_control(law, state):
    omega = law.measure(state)
    c = law.coefficients(omega)
    return ControlValue(law.boundary(c), omega, complex(c.sum()))


def obliqueness_report(law, state, alphas=None, n_x=128):
    """Normal component and |cos| of the angle between u and n along both walls.

    With ``alphas`` the report is repeated for each alpha0 in the ladder and
    ``monotone`` tells whether the minimum |cos| strictly increases.
    """
    x = 2 * np.pi * np.arange(n_x) / n_x

    def one(lw):
        cv = evaluate_control(lw, state)
        ut, v = cv.boundary.synthesize(x)
        un = v * WALL_SIGN[:, None]
        mag = np.sqrt(np.abs(ut) ** 2 + np.abs(un) ** 2)
        active = (0, 1) if lw.alpha.kind == "wall-sign" else (lw.wall,)
        mag_a = mag[list(active)]
        if np.all(mag_a == 0):
            raise NoControl("control output is zero; angles are undefined")
        cos = np.where(mag > 0, np.abs(un) / np.where(mag > 0, mag, 1), 0.0)
        alpha = lw.alpha.values(x)
        expected = cv.scalar * alpha
        scale = max(np.abs(expected).max(), np.abs(un).max(), 1e-300)
        return {
            "alpha0": lw.alpha.alpha0,
            "x": x,
            "normal": un,
            "cos": cos,
            "min_cos": float(cos[list(active)].min()),
            "scalar": cv.scalar,
            "normal_mismatch": float(np.abs(un - expected).max() / scale),
        }

    if alphas is None:
        return one(law)
    rows = [one(replace(law, alpha=replace(law.alpha, alpha0=float(a)))) for a in alphas]
    mins = [r["min_cos"] for r in rows]
    return {"ladder": rows, "min_cos": mins, "monotone": bool(np.all(np.diff(mins) > 0))}


def _real_basis(spectrum, tol=1e-8):
    """Orthonormalized real and imaginary parts of the unstable modes (Gram--Schmidt)."""
    cands = []
    for j in range(spectrum.N):
        f = spectrum.field(j)
        g = f.conj_mirror()
        cands += [0.5 * (f + g), (-0.5j) * (f - g)]
    basis = []
    for c in cands:
        r = c
        for b in basis:
            r = r - complex(gram([r], [b])[0, 0]).real * b
        n = r.norm()
        if n > tol * max(c.norm(), 1e-300):
            basis.append((1.0 / n) * r)
    if len(basis) != spectrum.N:
        raise IndependenceFailure(f"real basis has {len(basis)} fields, expected {spectrum.N}")
    return basis


def real_feedback(spectrum, gains, alpha0=1.0, max_cond=1e12, lifter=None):
    """Real-valued law on the orthonormalized real basis of the unstable span.

    The boundary combinations g_j are fixed through lifted pairings
    <D chi_i, psi*_l> of the dual-basis traces chi_i so that
    <D g_j, psi*_l> = -nu ((Lambda + k)^{-1})_{lj}; ``lifter`` is a
    DirichletSolver with the gains' shift (built if omitted).
    """
    from .lift import DirichletSolver

    _require_hypotheses(spectrum)
    flow, grid = spectrum.flow, spectrum.grid
    N, nu, k = spectrum.N, flow.nu, gains.k_shift
    psi = _real_basis(spectrum)
    stars = spectrum.adjoint_fields(range(N))
    R = gram(psi, stars).T  # psi_l = sum_j R[j, l] phi_j
    Rinv = np.linalg.inv(R)
    lam = spectrum.lambdas[:N]
    Lam_c = Rinv @ np.diag(lam) @ R
    Q = Rinv.conj().T  # psi*_l = sum_i Q[i, l] phi*_i
    psi_star = [combine(Q[:, l], stars) for l in range(N)]
    bw = _bwavenumbers(flow)
    t = adjoint_traces(spectrum, bw)
    chi = np.einsum("iwb,il->lwb", t, Q)

    lifter = lifter or DirichletSolver(flow, grid, k)
    if abs(lifter.k_shift - k) > 1e-14 * max(1.0, k):
        raise ValueError("lifter shift differs from the gains' shift")
    Dchi = [lifter.lift(BoundaryField(bw, u=chi[i])) for i in range(N)]
    P = gram(Dchi, psi_star).T  # P[l, i] = <D chi_i, psi*_l>
    Lam = Lam_c.real
    target = -nu * np.linalg.inv(Lam + k * np.eye(N))
    if np.linalg.cond(P) > max_cond:
        raise IndependenceFailure("real lifted-pairing matrix is singular")
    alpha_star = np.linalg.solve(P, target)
    g = np.einsum("iwb,ij->jwb", chi, alpha_star)
    Fr, cond = trace_gram(chi)
    if cond > max_cond:
        raise IndependenceFailure(f"real trace Gram matrix is singular (cond = {cond:.3e})")
    I = np.eye(N)
    M = np.linalg.solve(Lam + (k - nu * gains.eta) * I, Lam + k * I)
    diag = {
        "imag_Lambda": float(np.abs(Lam_c.imag).max()),
        "imag_coefficients": float(np.abs(alpha_star.imag).max()),
        "lift_vs_trace_gram": float(np.abs(alpha_star - np.linalg.inv(Fr)).max() / np.abs(alpha_star).max()),
        "basis_gram_defect": float(np.abs(gram(psi, psi) - I).max()),
        "dual_defect": float(np.abs(gram(psi, psi_star) - I).max()),
    }
    return FeedbackLaw(
        variant="real", gains=gains, F=Fr.real, X=alpha_star.real, cond=cond, phi=g,
        star_traces=chi, basis=psi, basis_star=psi_star, Lam=Lam, gain_matrix=M.real,
        closed_loop=(M @ Lam).real, alpha=AlphaProfile("wall-sign", float(alpha0)),
        bwavenumbers=bw, diagnostics=diag,
    )


def restrict_support(law, wall, max_cond=1e12):
    """Law acting on one wall only, with alpha = alpha0 * cos(x) on that wall."""
    if wall not in (0, 1):
        raise ValueError("wall must be 0 (y = 0) or 1 (y = 1)")
    F, X, cond, phi = trace_combinations(law.star_traces, (wall,), max_cond)
    return replace(
        law, variant="restricted", F=F, X=X, cond=cond, phi=phi, wall=wall,
        alpha=AlphaProfile("cosine", law.alpha.alpha0, wall),
    )
