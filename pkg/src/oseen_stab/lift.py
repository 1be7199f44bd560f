"""
Lifting of boundary velocity data into the channel.

For boundary data g the lifted field w solves the shifted steady problem
-nu Lap w + (U . grad) w + (w . grad) U + k w + grad p = 0, div w = 0, w = g on
the walls.  Per wavenumber m this is the fourth-order two-point problem
(A_m + k B_m) v = 0 for the wall-normal mode, with v and v' = -i m u prescribed
at both walls.  The solution is written as a cubic Hermite polynomial matching
the boundary values plus a clamped correction.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .channel import ModeField, eval_base_flow, gram
from .errors import ShiftTooSmall
from .spectrum import assemble_orr_sommerfeld

__all__ = [
    "LiftedField",
    "DirichletSolver",
    "DualityReport",
    "solve_dirichlet_mode",
    "lift_control_directions",
    "verify_duality",
]


@dataclass(frozen=True, eq=False)
class LiftedField:
    """Lifted mode m: nodal ``v_lift``, ``u_lift`` and the imposed (u0, u1, v0, v1)."""

    m: int
    k_shift: float
    v_lift: np.ndarray
    u_lift: np.ndarray
    boundary_data: tuple
    residual: float


def _hermite(y):
    """Cubic Hermite basis (h00, h01, h10, h11) and its first two derivatives at y."""
    h = np.array([2 * y**3 - 3 * y**2 + 1, -2 * y**3 + 3 * y**2, y**3 - 2 * y**2 + y, y**3 - y**2])
    d1 = np.array([6 * y**2 - 6 * y, -6 * y**2 + 6 * y, 3 * y**2 - 4 * y + 1, 3 * y**2 - 2 * y])
    d2 = np.array([12 * y - 6, -12 * y + 6, 6 * y - 4, 6 * y - 2])
    return h, d1, d2


class DirichletSolver:
    """Factorized shifted operators for every retained wavenumber at a fixed shift k."""

    def __init__(self, flow, grid, k_shift, singular_tol=1e-12):
        self.flow = flow
        self.grid = grid
        self.k_shift = float(k_shift)
        self._lu = {}
        self._ops = {}
        U, _, Upp = eval_base_flow(flow, grid.nodes)
        self._U, self._Upp = U, Upp
        self._singular_tol = singular_tol

    def _factor(self, m):
        if m not in self._lu:
            P = assemble_orr_sommerfeld(self.flow, self.grid, m)
            Ak = P.A + self.k_shift * P.B
            # conditioning relative to B: singular iff -k is an eigenvalue of the pencil
            s = np.linalg.svd(np.linalg.solve(P.B, Ak), compute_uv=False)
            if s[-1] <= self._singular_tol * s[0]:
                raise ShiftTooSmall(
                    f"shifted operator is singular at m={m}, k={self.k_shift}; use a larger shift"
                )
            self._lu[m] = sla.lu_factor(Ak)
            self._ops[m] = Ak
        return self._lu[m]

    def _hermite_part(self, m, data):
        u0, u1, v0, v1 = data
        coef = np.array([v0, v1, -1j * m * u0, -1j * m * u1], dtype=complex)
        y = self.grid.nodes
        h, d1, d2 = _hermite(y)
        return coef @ h, coef @ d1, coef @ d2

    def solve(self, m, boundary_data):
        """Lift the boundary values (u0, u1, v0, v1) of wavenumber m."""
        m = int(m)
        if m == 0:
            raise ValueError("the zero mode is not lifted")
        lu = self._factor(m)
        g = self.grid
        nu, k = self.flow.nu, self.k_shift
        q, _, q2 = self._hermite_part(m, boundary_data)
        S = g.interior
        U, Upp = self._U[S], self._Upp[S]
        # (A_m + k B_m) q at the clamped nodes; q'''' = 0 for a cubic
        rhs = (2 * nu * m * m + 1j * m * U + k) * q2[S] - (
            m * (nu * m**3 + 1j * m * m * U + 1j * Upp) + k * m * m
        ) * q[S]
        c = sla.lu_solve(lu, -rhs)
        v = q + g.expand(c)
        res = np.linalg.norm(self._ops[m] @ c + rhs) / max(np.linalg.norm(rhs), 1e-300)
        u = 1j * (g.D1 @ v) / m
        return LiftedField(m, k, v, u, tuple(complex(b) for b in boundary_data), float(res))

    def lift(self, boundary):
        """Lift a BoundaryField; the zero mode and unretained wavenumbers are dropped."""
        ws = self.flow.wavenumbers
        V = np.zeros((len(ws), self.grid.M + 1), complex)
        for i, m in enumerate(ws):
            if m not in boundary.wavenumbers:
                continue
            b = boundary.wavenumbers.index(m)
            data = (boundary.u[0, b], boundary.u[1, b], boundary.v[0, b], boundary.v[1, b])
            if not any(data):
                continue
            V[i] = self.solve(m, data).v_lift
        return ModeField(self.grid, ws, V)


def solve_dirichlet_mode(flow, grid, m, k_shift, boundary_data):
    """Lift boundary values (u0, u1, v0, v1) of wavenumber ``m`` with shift ``k_shift``."""
    return DirichletSolver(flow, grid, k_shift).solve(m, boundary_data)


@dataclass(frozen=True, eq=False)
class LiftedDirections:
    """Lifted control directions D(phi_j + alpha n) and the lift of alpha n alone."""

    k_shift: float
    fields: list
    alpha_field: object


def lift_control_directions(law, flow, grid):
    solver = DirichletSolver(flow, grid, law.gains.k_shift)
    an = law.alpha_boundary()
    fields = [solver.lift(law.trace_field(j) + an) for j in range(law.N)]
    return LiftedDirections(law.gains.k_shift, fields, solver.lift(an))


@dataclass(frozen=True)
class DualityReport:
    pairing: np.ndarray
    expected: np.ndarray
    residual: np.ndarray
    max_residual: float
    alpha_pairing: np.ndarray


def verify_duality(spectrum, law, lifted):
    """Pairings <D(phi_j + alpha n), phi*_i> against -nu ((Lambda + k)^{-1})_{ij}.

    The residual is scaled row-wise by nu / |lambda_i + k|, with lambda_i the
    unstable eigenvalues (for the real variant, by the smallest |lambda + k|).
    """
    if abs(lifted.k_shift - law.gains.k_shift) > 1e-14 * max(1.0, law.gains.k_shift):
        raise ValueError("lifted fields were computed with a different shift")
    nu, k = spectrum.flow.nu, law.gains.k_shift
    P = gram(lifted.fields, law.basis_star).T
    E = -nu * np.linalg.inv(law.Lam + k * np.eye(law.N))
    if law.variant == "real":
        scale = np.full(law.N, nu / np.min(np.abs(spectrum.lambdas[: law.N] + k)))
    else:
        scale = nu / np.abs(np.diag(law.Lam) + k)
    R = np.abs(P - E) / scale[:, None]
    A = gram([lifted.alpha_field], law.basis_star)[0]
    return DualityReport(P, E, R, float(R.max()) if R.size else 0.0, A)
