"""
Periodic channel: base flow, Fourier-mode bookkeeping and the energy inner product.

Fields are stored per retained wavenumber m as nodal values of the wall-normal
velocity mode v_m(y).  The streamwise mode follows from incompressibility,
i m u_m + v_m' = 0, i.e. u_m = i v_m' / m.  The uniform 2 pi factor of the
x-integral is dropped from every inner product.
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ChannelFlow",
    "ModeField",
    "eval_base_flow",
    "inner_product",
    "gram",
    "combine",
    "velocity_from_v",
    "BoundaryField",
    "WALL_SIGN",
]


@dataclass(frozen=True)
class ChannelFlow:
    """Viscosity, base-flow strength and retained wavenumbers.

    The base flow is U(y) = C (y^2 - y) with C = -a / (2 nu); ``a = 0`` is the
    Stokes limit.
    """

    nu: float
    a: float
    wavenumbers: tuple = (-3, -2, -1, 1, 2, 3)

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError(f"nu must be positive, got {self.nu}")
        if not self.a >= 0:
            raise ValueError(f"a must be non-negative, got {self.a}")
        ms = tuple(int(m) for m in self.wavenumbers)
        if 0 in ms:
            raise ValueError("the zero mode is not part of the state space")
        if set(ms) != {-m for m in ms}:
            raise ValueError("wavenumbers must be closed under negation")
        if len(set(ms)) != len(ms):
            raise ValueError("duplicate wavenumbers")
        object.__setattr__(self, "wavenumbers", tuple(sorted(ms)))

    @classmethod
    def from_truncation(cls, nu, a, M_x=3):
        if M_x < 1:
            raise ValueError("need at least one wavenumber pair")
        ms = tuple(range(-M_x, 0)) + tuple(range(1, M_x + 1))
        return cls(nu=float(nu), a=float(a), wavenumbers=ms)

    @property
    def C(self):
        return -self.a / (2.0 * self.nu)

    @property
    def positive_wavenumbers(self):
        return tuple(m for m in self.wavenumbers if m > 0)

    @property
    def centerline_velocity(self):
        return self.a / (8.0 * self.nu)

    @property
    def reynolds(self):
        """Centerline velocity times half-height over nu."""
        return self.centerline_velocity * 0.5 / self.nu

    def index(self, m):
        return self.wavenumbers.index(int(m))


def eval_base_flow(flow, y):
    """Return U, U', U'' at ``y`` (scalar or array in [0, 1])."""
    y = np.asarray(y, dtype=float)
    if np.any(y < 0.0) or np.any(y > 1.0) or np.any(~np.isfinite(y)):
        raise ValueError("y must lie in [0, 1]")
    C = flow.C
    return C * (y * y - y), C * (2 * y - 1), 2 * C * np.ones_like(y)


def velocity_from_v(grid, wavenumbers, v):
    """Streamwise modes u_m = i v_m' / m for an array of shape (..., n_m, M+1)."""
    ms = np.asarray(wavenumbers, dtype=float)
    return 1j * (v @ grid.D1.T) / ms[:, None]


class ModeField:
    """Two-component velocity field held as Fourier modes in x.

    Parameters
    ----------
    grid : SpectralGrid
    wavenumbers : sequence of int
    v : array_like, shape (len(wavenumbers), M+1)
        Nodal values of the wall-normal velocity per wavenumber.
    u : array_like, optional
        Streamwise modes; computed from ``v`` by incompressibility if omitted.
    """

    def __init__(self, grid, wavenumbers, v, u=None):
        self.grid = grid
        self.wavenumbers = tuple(int(m) for m in wavenumbers)
        v = np.array(v, dtype=complex)
        if v.shape != (len(self.wavenumbers), grid.M + 1):
            raise ValueError(f"v has shape {v.shape}, expected {(len(self.wavenumbers), grid.M + 1)}")
        self.v = v
        self.u = velocity_from_v(grid, self.wavenumbers, v) if u is None else np.array(u, dtype=complex)

    @classmethod
    def zeros(cls, grid, wavenumbers):
        return cls(grid, wavenumbers, np.zeros((len(wavenumbers), grid.M + 1)))

    @classmethod
    def single_mode(cls, grid, wavenumbers, m, v):
        f = cls.zeros(grid, wavenumbers)
        V = f.v.copy()
        V[list(f.wavenumbers).index(int(m))] = v
        return cls(grid, wavenumbers, V)

    def _check(self, other):
        if other.grid is not self.grid and other.grid.M != self.grid.M:
            raise ValueError("fields live on different grids")
        if other.wavenumbers != self.wavenumbers:
            raise ValueError("fields have different wavenumber sets")

    def __add__(self, other):
        self._check(other)
        return ModeField(self.grid, self.wavenumbers, self.v + other.v, self.u + other.u)

    def __sub__(self, other):
        self._check(other)
        return ModeField(self.grid, self.wavenumbers, self.v - other.v, self.u - other.u)

    def __mul__(self, c):
        return ModeField(self.grid, self.wavenumbers, c * self.v, c * self.u)

    __rmul__ = __mul__

    def conj_mirror(self):
        """The field with mode m replaced by conj(mode -m); fixed points are real fields."""
        idx = [self.wavenumbers.index(-m) for m in self.wavenumbers]
        return ModeField(self.grid, self.wavenumbers, self.v[idx].conj(), self.u[idx].conj())

    def mode(self, m):
        return self.v[self.wavenumbers.index(int(m))]

    def norm(self):
        return float(np.sqrt(max(inner_product(self, self).real, 0.0)))


def inner_product(f, g):
    """Energy inner product sum_m int_0^1 (u_f conj(u_g) + v_f conj(v_g)) dy."""
    f._check(g)
    w = f.grid.quad_weights
    return complex(np.sum((f.u * g.u.conj() + f.v * g.v.conj()) @ w))


def combine(coeffs, fields):
    """sum_i coeffs[i] * fields[i]."""
    f0 = fields[0]
    V = np.einsum("i,imy->my", np.asarray(coeffs, dtype=complex), np.stack([f.v for f in fields]))
    U = np.einsum("i,imy->my", np.asarray(coeffs, dtype=complex), np.stack([f.u for f in fields]))
    return ModeField(f0.grid, f0.wavenumbers, V, U)


def gram(fs, gs):
    """Matrix of inner products G[i, j] = <fs[i], gs[j]>."""
    if not fs or not gs:
        return np.zeros((len(fs), len(gs)), dtype=complex)
    for f in list(fs) + list(gs):
        fs[0]._check(f)
    w = fs[0].grid.quad_weights
    Uf = np.stack([f.u for f in fs])
    Vf = np.stack([f.v for f in fs])
    Ug = np.stack([g.u for g in gs])
    Vg = np.stack([g.v for g in gs])
    return np.einsum("amy,bmy,y->ab", Uf, Ug.conj(), w) + np.einsum("amy,bmy,y->ab", Vf, Vg.conj(), w)


class BoundaryField:
    """Velocity data on the two walls, per Fourier wavenumber (the zero mode included).

    ``u[w, i]`` and ``v[w, i]`` are the streamwise and wall-normal coefficients of
    ``wavenumbers[i]`` at wall ``w`` (0 for y = 0, 1 for y = 1).
    """

    def __init__(self, wavenumbers, u=None, v=None):
        self.wavenumbers = tuple(int(m) for m in wavenumbers)
        n = len(self.wavenumbers)
        self.u = np.zeros((2, n), complex) if u is None else np.array(u, dtype=complex)
        self.v = np.zeros((2, n), complex) if v is None else np.array(v, dtype=complex)
        if self.u.shape != (2, n) or self.v.shape != (2, n):
            raise ValueError("boundary arrays must have shape (2, n_wavenumbers)")

    @classmethod
    def for_flow(cls, flow):
        M_x = max(flow.wavenumbers)
        return cls(range(-M_x, M_x + 1))

    def __add__(self, other):
        if other.wavenumbers != self.wavenumbers:
            raise ValueError("different wavenumber sets")
        return BoundaryField(self.wavenumbers, self.u + other.u, self.v + other.v)

    def __mul__(self, c):
        return BoundaryField(self.wavenumbers, c * self.u, c * self.v)

    __rmul__ = __mul__

    def norm(self):
        """Root of sum over walls and modes of |u|^2 + |v|^2 (2 pi dropped)."""
        return float(np.sqrt(np.sum(np.abs(self.u) ** 2 + np.abs(self.v) ** 2)))

    def synthesize(self, x):
        """Physical values (u, v) at points ``x``, shape (2, len(x)) each."""
        E = np.exp(1j * np.outer(self.wavenumbers, np.asarray(x, dtype=float)))
        return self.u @ E, self.v @ E

    def normal_component(self, x):
        """u . n with the outward normal n = (0, -1) at y = 0 and (0, 1) at y = 1."""
        _, v = self.synthesize(x)
        return v * np.array([-1.0, 1.0])[:, None]


WALL_SIGN = np.array([-1.0, 1.0])  # outward normal is (0, WALL_SIGN[w]) at wall w
