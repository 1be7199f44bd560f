"""
Chebyshev collocation on the wall-normal interval [0, 1].

Nodes are the Chebyshev--Gauss--Lobatto points mapped affinely onto [0, 1]
and ordered increasingly.  Besides the full-grid differentiation matrices the
grid carries a *clamped* representation: the polynomials of degree <= M with
v = v' = 0 at both walls are written v = (1 - x^2)^2 p(x) and parametrised
by their values at the interior nodes 2..M-2 (M - 3 unknowns).  Derivatives
of such functions are assembled from the derivatives of p by the product
rule, which avoids forming fourth derivatives as powers of D1.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import toeplitz

__all__ = [
    "SpectralGrid",
    "ClampedPencil",
    "build_grid",
    "chebdif",
    "poldif",
    "clenshaw_curtis",
    "clamp_fourth_order",
]


def chebdif(N, M):
    """Chebyshev differentiation matrices on N Gauss--Lobatto points.

    Weideman & Reddy's construction: trigonometric node differences, the
    flipping trick and the negative-sum diagonal.  Higher orders come from
    the recursion, not from matrix powers.

    Parameters
    ----------
    N : int
        Number of points, x_j = cos(pi j / (N - 1)), decreasing from 1 to -1.
    M : int
        Highest derivative order.

    Returns
    -------
    x : ndarray, shape (N,)
    DM : list of ndarray
        ``DM[l-1]`` is the l-th derivative matrix on [-1, 1].
    """
    n1 = N // 2
    n2 = N - n1
    k = np.arange(N)
    th = k * np.pi / (N - 1)
    x = np.sin(np.pi * np.arange(N - 1, -N, -2) / (2.0 * (N - 1)))
    T = np.tile(th / 2, (N, 1))
    DX = 2 * np.sin(T + T.T) * np.sin(T - T.T)
    DX = np.vstack([DX[:n1, :], -np.flipud(np.fliplr(DX[:n2, :]))])
    DX[k, k] = 1.0
    C = toeplitz((-1.0) ** k)
    C[0, :] *= 2
    C[-1, :] *= 2
    C[:, 0] /= 2
    C[:, -1] /= 2
    Z = 1.0 / DX
    Z[k, k] = 0.0
    D = np.eye(N)
    DM = []
    for ell in range(1, M + 1):
        D = ell * Z * (C * np.tile(np.diag(D), (N, 1)).T - D)
        D[k, k] = -D.sum(axis=1)
        DM.append(D)
    return x, DM


def poldif(x, M):
    """Differentiation matrices for polynomial interpolation on arbitrary nodes.

    Welfert's recursion as packaged by Weideman & Reddy (no weight function).
    """
    x = np.asarray(x, dtype=float)
    N = len(x)
    idx = np.arange(N)
    DX = x[:, None] - x[None, :]
    DX[idx, idx] = 1.0
    c = np.prod(DX, axis=1)
    C = c[:, None] / c[None, :]
    Z = 1.0 / DX
    Z[idx, idx] = 0.0
    # column j holds 1/(x_j - x_i), i != j
    X = np.array([np.delete(Z[j, :], j) for j in range(N)]).T
    Y = np.ones((N - 1, N))
    D = np.eye(N)
    DM = []
    for ell in range(1, M + 1):
        Y = np.cumsum(np.vstack([np.zeros((1, N)), ell * Y[: N - 1, :] * X]), axis=0)
        D = ell * Z * (C * np.tile(np.diag(D), (N, 1)).T - D)
        D[idx, idx] = Y[N - 1, :]
        DM.append(D)
    return DM


def clenshaw_curtis(M):
    """Clenshaw--Curtis weights for the nodes cos(pi j / M), j = 0..M, on [-1, 1]."""
    theta = np.pi * np.arange(M + 1) / M
    w = np.zeros(M + 1)
    inner = np.arange(1, M)
    v = np.ones(M - 1)
    if M % 2 == 0:
        w[0] = w[M] = 1.0 / (M**2 - 1)
        for k in range(1, M // 2):
            v -= 2 * np.cos(2 * k * theta[inner]) / (4 * k**2 - 1)
        v -= np.cos(M * theta[inner]) / (M**2 - 1)
    else:
        w[0] = w[M] = 1.0 / M**2
        for k in range(1, (M - 1) // 2 + 1):
            v -= 2 * np.cos(2 * k * theta[inner]) / (4 * k**2 - 1)
    w[inner] = 2 * v / M
    return w


def _barycentric_matrix(nodes, targets):
    """Rows evaluate the interpolant through ``nodes`` at ``targets``."""
    nodes = np.asarray(nodes, dtype=float)
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    # scale to keep the products representable
    w = 1.0 / np.prod(diff * 2.0, axis=1)
    L = np.empty((len(targets), len(nodes)))
    for r, t in enumerate(targets):
        d = t - nodes
        hit = np.flatnonzero(d == 0)
        if hit.size:
            L[r] = 0.0
            L[r, hit[0]] = 1.0
        else:
            q = w / d
            L[r] = q / q.sum()
    return L


@dataclass(frozen=True, eq=False)
class SpectralGrid:
    """Chebyshev--Lobatto grid on [0, 1] with its operators.

    Attributes
    ----------
    M : int
        Polynomial degree; there are M + 1 nodes.
    nodes : ndarray
        Increasing nodes, ``nodes[0] == 0`` and ``nodes[M] == 1``.
    D1, D2, D4 : ndarray
        Full-grid differentiation matrices in y.
    quad_weights : ndarray
        Clenshaw--Curtis weights for integrals over [0, 1].
    interior : ndarray
        Indices of the clamped unknowns (2..M-2).
    lift : ndarray, shape (M+1, M-3)
        Maps clamped unknowns to full nodal values.
    C1, C2, C4 : ndarray, shape (M-3, M-3)
        Exact derivatives of clamped polynomials, evaluated at ``interior``.
    """

    M: int
    nodes: np.ndarray
    D1: np.ndarray
    D2: np.ndarray
    D4: np.ndarray
    quad_weights: np.ndarray
    interior: np.ndarray
    lift: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    C4: np.ndarray

    @property
    def n_clamped(self):
        return self.M - 3

    def integrate(self, f):
        return self.quad_weights @ f

    def restrict(self, v):
        """Full nodal values -> clamped unknowns (exact for clamped polynomials)."""
        return np.asarray(v)[..., self.interior]

    def expand(self, c):
        """Clamped unknowns -> full nodal values."""
        return np.asarray(c) @ self.lift.T


def build_grid(M):
    """Build the collocation grid of degree ``M`` on [0, 1].

    Raises
    ------
    ValueError
        If ``M < 8`` or ``M`` is odd.
    """
    if int(M) != M:
        raise ValueError(f"M must be an integer, got {M!r}")
    M = int(M)
    if M < 8:
        raise ValueError(f"M = {M} is too coarse for a fourth-order problem (need M >= 8)")
    if M % 2:
        raise ValueError(f"M must be even, got {M}")

    x, DM = chebdif(M + 1, 4)
    # y = (1 - x) / 2 runs 0 -> 1 as x runs 1 -> -1, so d/dy = -2 d/dx
    y = (1.0 - x) / 2.0
    y[0], y[-1] = 0.0, 1.0
    D1 = -2.0 * DM[0]
    D2 = 4.0 * DM[1]
    D4 = 16.0 * DM[3]
    w = clenshaw_curtis(M) / 2.0

    interior = np.arange(2, M - 1)
    xs = x[interior]
    P = poldif(xs, 4)
    P.insert(0, np.eye(len(xs)))
    g = [(1 - xs**2) ** 2, -4 * xs + 4 * xs**3, -4 + 12 * xs**2, 24 * xs, 24 * np.ones_like(xs)]
    binom = {1: (1, 1), 2: (1, 2, 1), 4: (1, 4, 6, 4, 1)}
    inv_g = 1.0 / g[0]
    Cx = {}
    for q, coef in binom.items():
        # (g p)^(q) = sum_r C(q, r) g^(q-r) p^(r), with p = v / g
        acc = np.zeros((len(xs), len(xs)))
        for r, b in enumerate(coef):
            acc += b * g[q - r][:, None] * P[r]
        Cx[q] = acc * inv_g[None, :]

    lift = np.zeros((M + 1, M - 3))
    lift[interior, np.arange(M - 3)] = 1.0
    edge = np.array([1, M - 1])
    Lb = _barycentric_matrix(xs, x[edge])
    lift[edge, :] = (1 - x[edge] ** 2)[:, None] ** 2 * Lb * inv_g[None, :]

    arrays = dict(
        nodes=y, D1=D1, D2=D2, D4=D4, quad_weights=w, interior=interior, lift=lift,
        C1=-2.0 * Cx[1], C2=4.0 * Cx[2], C4=16.0 * Cx[4],
    )
    for a in arrays.values():
        a.setflags(write=False)
    return SpectralGrid(M=M, **arrays)


class ClampedPencil(NamedTuple):
    A: np.ndarray
    B: np.ndarray
    lift: np.ndarray


def clamp_fourth_order(grid, A, B):
    """Restrict full-grid operators to functions with v = v' = 0 at both walls.

    Rows are collocated at the clamped unknowns' nodes and columns are
    composed with the lift, so the reduced pencil acts on ``M - 3`` unknowns.
    """
    A = np.asarray(A)
    B = np.asarray(B)
    n = grid.M + 1
    if A.shape != (n, n) or B.shape != (n, n):
        raise ValueError(f"operators must be {n}x{n}")
    S = grid.interior
    lift = grid.lift
    # the lift is singular only if the interpolation nodes coincide
    assert np.linalg.matrix_rank(lift) == grid.M - 3
    return ClampedPencil(A[S, :] @ lift, B[S, :] @ lift, lift)
