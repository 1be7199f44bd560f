"""
Direct and adjoint Orr--Sommerfeld eigenproblems of the channel.

The linearised dynamics are dY/dt + A Y = 0, so a mode grows when Re lambda < 0.
Per wavenumber m the wall-normal velocity mode satisfies A_m v = lambda B_m v
with B_m = D^2 - m^2 and clamped conditions v = v' = 0 at both walls.  The
adjoint pencil is taken with respect to the energy inner product; its
eigenvalues are the conjugates of the direct ones.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .channel import ModeField, eval_base_flow, gram
from .errors import (
    DegeneratePairing,
    EigenSolverError,
    HypothesisFailure,
    NeutralEigenvalue,
)
from .spectral import build_grid

__all__ = [
    "ModePencil",
    "Eigenpair",
    "EigenMode",
    "Spectrum",
    "SemisimpleReport",
    "assemble_orr_sommerfeld",
    "assemble_adjoint",
    "solve_spectrum",
    "count_unstable",
    "semisimple_report",
    "check_semisimple",
    "biorthonormalize",
    "unique_continuation_check",
    "wall_curvature_margin",
    "compute_spectrum",
    "check_resolution",
    "SweepPoint",
    "instability_sweep",
    "select_configuration",
]


@dataclass(frozen=True, eq=False)
class ModePencil:
    m: int
    A: np.ndarray
    B: np.ndarray
    kind: str
    grid: object


def _coefficients(flow, grid):
    U, Up, Upp = eval_base_flow(flow, grid.nodes)
    S = grid.interior
    return U[S], Up[S], Upp[S]


def assemble_orr_sommerfeld(flow, grid, m):
    """Direct pencil: -nu v'''' + (2 nu m^2 + i m U) v'' - m (nu m^3 + i m^2 U + i U'') v."""
    m = int(m)
    if m == 0:
        raise ValueError("wavenumber must be nonzero")
    nu = flow.nu
    U, _, Upp = _coefficients(flow, grid)
    n = grid.n_clamped
    I = np.eye(n)
    A = (
        -nu * grid.C4
        + (2 * nu * m * m + 1j * m * U)[:, None] * grid.C2
        - np.diag(m * (nu * m**3 + 1j * m * m * U + 1j * Upp))
    )
    B = grid.C2 - m * m * I
    return ModePencil(m, A, B.astype(complex), "direct", grid)


def assemble_adjoint(flow, grid, m):
    """Adjoint pencil: -nu (D^2 - m^2) W - i m U W - 2 i m U' w' with W = w'' - m^2 w."""
    m = int(m)
    if m == 0:
        raise ValueError("wavenumber must be nonzero")
    nu = flow.nu
    U, Up, _ = _coefficients(flow, grid)
    n = grid.n_clamped
    I = np.eye(n)
    B = grid.C2 - m * m * I
    A = (
        -nu * (grid.C4 - 2 * m * m * grid.C2 + m**4 * I)
        - (1j * m * U)[:, None] * B
        - (2j * m * Up)[:, None] * grid.C1
    )
    return ModePencil(m, A, B.astype(complex), "adjoint", grid)


def _mode_norm(grid, m, v):
    u = 1j * (grid.D1 @ v) / m
    return float(np.sqrt(grid.quad_weights @ (np.abs(u) ** 2 + np.abs(v) ** 2)))


def _normalize_phase(v):
    i = int(np.argmax(np.abs(v)))
    return v * (abs(v[i]) / v[i]) if v[i] != 0 else v


@dataclass(frozen=True, eq=False)
class Eigenpair:
    """One eigenpair of a single pencil; ``v`` are full nodal values with unit energy norm."""

    m: int
    kind: str
    value: complex
    v: np.ndarray
    residual: float
    grid: object = None


def _eig(pencil):
    try:
        lu = sla.lu_factor(pencil.B, check_finite=True)
    except (sla.LinAlgError, ValueError) as exc:
        raise EigenSolverError(f"factorization of B failed for m={pencil.m}: {exc}") from exc
    if np.min(np.abs(np.diag(lu[0]))) == 0.0:
        raise EigenSolverError(f"B is singular for m={pencil.m}")
    S = sla.lu_solve(lu, pencil.A)
    try:
        lam, V = sla.eig(S)
    except sla.LinAlgError as exc:
        raise EigenSolverError(f"eigensolver did not converge for m={pencil.m}: {exc}") from exc
    ok = np.isfinite(lam)
    lam, V = lam[ok], V[:, ok]
    order = np.lexsort((lam.imag, lam.real))
    return lam[order], V[:, order]


def solve_spectrum(pencil, n_keep, check=None, filter_tol=1e-6, residual_tol=1e-8):
    """Eigenpairs of smallest real part for ``pencil``.

    Parameters
    ----------
    pencil : ModePencil
    n_keep : int
        Maximum number of eigenpairs returned.
    check : ModePencil, optional
        The same operator on a finer grid.  Eigenvalues that move by more than
        ``filter_tol * (1 + |lambda|)`` are discarded as discretization artefacts.
    residual_tol : float
        Bound on the backward error ||A v - lambda B v|| / ((||A|| + |lambda| ||B||) ||v||).

    Returns
    -------
    list of Eigenpair, sorted by (Re, Im).
    """
    lam, V = _eig(pencil)
    if check is not None:
        ref, _ = _eig(check)
        keep = [j for j, z in enumerate(lam) if np.min(np.abs(ref - z)) < filter_tol * (1 + abs(z))]
        lam, V = lam[keep], V[:, keep]
    grid = pencil.grid
    nA = np.linalg.norm(pencil.A, 2)
    nB = np.linalg.norm(pencil.B, 2)
    out = []
    for j in range(len(lam)):
        if len(out) >= n_keep:
            break
        c = V[:, j]
        r = np.linalg.norm(pencil.A @ c - lam[j] * (pencil.B @ c))
        res = r / ((nA + abs(lam[j]) * nB) * np.linalg.norm(c))
        if res > residual_tol:
            continue
        v = grid.expand(c)
        v = _normalize_phase(v / _mode_norm(grid, pencil.m, v))
        out.append(Eigenpair(pencil.m, pencil.kind, complex(lam[j]), v, float(res), grid))
    return out


@dataclass(frozen=True, eq=False)
class EigenMode:
    """A direct eigenmode together with its adjoint partner.

    ``lam`` is the eigenvalue of the direct operator; the adjoint eigenvalue is
    its conjugate.
    """

    m: int
    lam: complex
    v: np.ndarray
    v_star: np.ndarray
    grid: object
    residual: float = 0.0
    residual_star: float = 0.0

    @property
    def u(self):
        return 1j * (self.grid.D1 @ self.v) / self.m

    @property
    def u_star(self):
        return 1j * (self.grid.D1 @ self.v_star) / self.m

    @property
    def wall_data(self):
        """(v''(0), v''(1), u'(0), u'(1), u*'(0), u*'(1), v*'(0), v*'(1))."""
        g = self.grid
        d2 = g.D2 @ self.v
        d2s = g.D2 @ self.v_star
        d1s = g.D1 @ self.v_star
        up = 1j * d2 / self.m
        ups = 1j * d2s / self.m
        return (d2[0], d2[-1], up[0], up[-1], ups[0], ups[-1], d1s[0], d1s[-1])

    def field(self, wavenumbers):
        return ModeField.single_mode(self.grid, wavenumbers, self.m, self.v)

    def adjoint_field(self, wavenumbers):
        return ModeField.single_mode(self.grid, wavenumbers, self.m, self.v_star)


@dataclass(frozen=True)
class SemisimpleReport:
    passed: bool
    clusters: tuple  # (indices, algebraic, geometric) per cluster


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Paired, biorthonormal eigenmodes sorted by (Re lambda, Im lambda).

    ``modes[:N]`` are the unstable modes (Re lambda < -margin).
    """

    flow: object
    grid: object
    modes: tuple
    N: int
    margin: float
    gram: np.ndarray
    semisimple: SemisimpleReport
    orthogonality_defect: float = 0.0
    truncation: dict = field(default_factory=dict)

    @property
    def unstable(self):
        return self.modes[: self.N]

    @property
    def stable(self):
        return self.modes[self.N:]

    @property
    def lambdas(self):
        return np.array([md.lam for md in self.modes])

    @property
    def wavenumbers(self):
        return self.flow.wavenumbers

    def field(self, j):
        return self.modes[j].field(self.wavenumbers)

    def adjoint_field(self, j):
        return self.modes[j].adjoint_field(self.wavenumbers)

    def fields(self, idx=None):
        idx = range(len(self.modes)) if idx is None else idx
        return [self.field(j) for j in idx]

    def adjoint_fields(self, idx=None):
        idx = range(len(self.modes)) if idx is None else idx
        return [self.adjoint_field(j) for j in idx]

    def project(self, Y, idx=None):
        """Biorthogonal coefficients <Y, phi*_j>."""
        return gram([Y], self.adjoint_fields(idx))[0]

    def mirror_index(self, j):
        """Index of the mode at -m with conjugate eigenvalue."""
        md = self.modes[j]
        best = None
        for i, other in enumerate(self.modes):
            if other.m == -md.m:
                d = abs(other.lam - np.conj(md.lam))
                if best is None or d < best[0]:
                    best = (d, i)
        return best[1]


def count_unstable(spectrum, margin=1e-8):
    """Number of eigenvalues with Re lambda < -margin.

    Accepts a Spectrum or a sequence of eigenvalues sorted by real part.
    Raises NeutralEigenvalue if any |Re lambda| <= margin.
    """
    lams = spectrum.lambdas if isinstance(spectrum, Spectrum) else np.asarray(spectrum, dtype=complex)
    re = lams.real
    if np.any(np.diff(re) < 0):
        raise ValueError("eigenvalues must be sorted by real part")
    neutral = np.flatnonzero(np.abs(re) <= margin)
    if neutral.size:
        raise NeutralEigenvalue(
            f"eigenvalue {lams[neutral[0]]} is within margin {margin} of the imaginary axis"
        )
    N = int(np.sum(re < -margin))
    assert np.all(re[N:] > margin)
    return N


def _clusters(lams, cluster_tol):
    """Greedy single-linkage clusters with tolerance cluster_tol * (1 + |lambda|)."""
    n = len(lams)
    label = list(range(n))

    def find(i):
        while label[i] != i:
            i = label[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if abs(lams[i] - lams[j]) <= cluster_tol * (1 + max(abs(lams[i]), abs(lams[j]))):
                label[find(j)] = find(i)
    groups = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return [groups[k] for k in sorted(groups)]


def semisimple_report(lambdas, vectors, cluster_tol=1e-6, rank_tol=1e-6):
    """Compare algebraic and geometric multiplicity per eigenvalue cluster.

    ``vectors[i]`` is the (flattened) eigenvector of ``lambdas[i]``.  The
    geometric multiplicity is the numerical rank of the normalized stack.
    """
    lambdas = np.asarray(lambdas, dtype=complex)
    out = []
    passed = True
    for idx in _clusters(lambdas, cluster_tol):
        Vc = np.stack([np.ravel(vectors[i]) for i in idx], axis=1).astype(complex)
        Vc = Vc / np.linalg.norm(Vc, axis=0)
        s = np.linalg.svd(Vc, compute_uv=False)
        rank = int(np.sum(s > rank_tol * s[0]))
        out.append((tuple(idx), len(idx), rank))
        passed &= rank == len(idx)
    return SemisimpleReport(bool(passed), tuple(out))


def check_semisimple(spectrum, cluster_tol=1e-6):
    """Semisimplicity report for the unstable modes of ``spectrum``."""
    vecs = [spectrum.field(j).v for j in range(spectrum.N)]
    return semisimple_report(spectrum.lambdas[: spectrum.N], vecs, cluster_tol)


def _pair_modes(direct, adjoint, match_tol):
    """Match direct eigenvalue lambda with the adjoint eigenvalue closest to conj(lambda)."""
    pairs = []
    used = set()
    for d in direct:
        best = None
        for i, w in enumerate(adjoint):
            if i in used or w.m != d.m:
                continue
            dist = abs(d.value - np.conj(w.value))
            if best is None or dist < best[0]:
                best = (dist, i)
        if best is not None and best[0] <= match_tol * (1 + abs(d.value)):
            used.add(best[1])
            pairs.append((d, adjoint[best[1]]))
    return pairs


def _pairing(grid, m, v, w):
    u = 1j * (grid.D1 @ v) / m
    us = 1j * (grid.D1 @ w) / m
    return complex(grid.quad_weights @ (u * us.conj() + v * w.conj()))


def biorthonormalize(direct, adjoint, flow, margin=1e-8, cluster_tol=1e-6, match_tol=1e-6):
    """Pair direct and adjoint eigenpairs and rescale adjoints so <phi_j, phi*_k> = delta_jk.

    Eigenvalues closer than ``cluster_tol`` are treated as one cluster and the
    adjoint block is rescaled by the conjugate inverse of its pairing matrix.

    Returns
    -------
    Spectrum
    """
    if not direct:
        raise ValueError("no direct eigenpairs")
    grid = None
    pairs = _pair_modes(direct, adjoint, match_tol)
    modes = []
    defect = 0.0
    by_m = {}
    for d, w in pairs:
        by_m.setdefault(d.m, []).append((d, w))
    for m, plist in sorted(by_m.items()):
        grid_m = None
        lams = np.array([d.value for d, _ in plist])
        for idx in _clusters(lams, cluster_tol):
            ds = [plist[i][0] for i in idx]
            ws = [plist[i][1] for i in idx]
            grid_m = grid_m or ds[0].grid
            G = np.array([[_pairing(grid_m, m, d.v, w.v) for w in ws] for d in ds])
            scale = np.array([[_mode_norm(grid_m, m, d.v) * _mode_norm(grid_m, m, w.v) for w in ws] for d in ds])
            s = np.linalg.svd(G / scale, compute_uv=False)
            if s[-1] < 1e-10:
                raise DegeneratePairing(
                    f"direct/adjoint pairing at m={m}, lambda={ds[0].value:.6g} is {s[-1]:.2e}"
                )
            C = np.conj(np.linalg.inv(G))
            W = np.stack([w.v for w in ws], axis=1) @ C
            for r, d in enumerate(ds):
                modes.append(
                    EigenMode(d.m, d.value, d.v, W[:, r], grid_m, d.residual, ws[r].residual)
                )
        # pre-normalization orthogonality of distinct eigenvalues
        for i, (d, _) in enumerate(plist):
            for j, (_, w) in enumerate(plist):
                if abs(d.value - np.conj(w.value)) > cluster_tol * (1 + abs(d.value)):
                    p = abs(_pairing(grid_m, m, d.v, w.v)) / (
                        _mode_norm(grid_m, m, d.v) * _mode_norm(grid_m, m, w.v)
                    )
                    if d.value.real < 0 or w.value.real < 0:
                        defect = max(defect, p)
        grid = grid_m
    modes.sort(key=lambda md: (md.lam.real, md.lam.imag))
    lams = np.array([md.lam for md in modes])
    N = count_unstable(lams, margin)
    sp = Spectrum(
        flow=flow, grid=grid, modes=tuple(modes), N=N, margin=margin,
        gram=np.eye(0), semisimple=SemisimpleReport(True, ()), orthogonality_defect=defect,
    )
    G = gram(sp.fields(range(N)), sp.adjoint_fields(range(N)))
    object.__setattr__(sp, "gram", G)
    return sp


def wall_curvature_margin(grid, m, v):
    """(|v''(0)| + |v''(1)|) / ||v||, with the energy norm; 0 for the zero vector."""
    v = np.asarray(v, dtype=complex)
    nrm = _mode_norm(grid, m, v)
    if nrm == 0.0:
        return 0.0
    d2 = grid.D2 @ v
    return float((abs(d2[0]) + abs(d2[-1])) / nrm)


def unique_continuation_check(spectrum, floor=1e-6):
    """Wall-curvature margins of the unstable direct and adjoint modes.

    Returns a dict with per-mode margins and ``passed``.
    """
    rows = []
    for md in spectrum.unstable:
        dm = wall_curvature_margin(spectrum.grid, md.m, md.v)
        am = wall_curvature_margin(spectrum.grid, md.m, md.v_star)
        rows.append({"m": md.m, "lambda": md.lam, "direct": dm, "adjoint": am})
    passed = all(r["direct"] >= floor and r["adjoint"] >= floor for r in rows)
    return {"floor": floor, "modes": rows, "passed": passed}


def _fine_size(M):
    Mf = (3 * M) // 2
    return Mf + (Mf % 2)


def _mirror(p):
    return Eigenpair(-p.m, p.kind, complex(np.conj(p.value)), p.v.conj(), p.residual, p.grid)


def compute_spectrum(flow, grid, n_keep=40, margin=1e-8, cluster_tol=1e-6, filter_tol=1e-6, check_grid=None):
    """Filtered, paired and biorthonormalized spectrum over all retained wavenumbers.

    Modes at -m are the conjugates of those at m (the base flow is real).  Raises
    HypothesisFailure if an unstable cluster is defective.
    """
    check_grid = check_grid or build_grid(_fine_size(grid.M))
    direct, adjoint = [], []
    truncation = {}
    for m in flow.positive_wavenumbers:
        d = solve_spectrum(
            assemble_orr_sommerfeld(flow, grid, m), n_keep,
            check=assemble_orr_sommerfeld(flow, check_grid, m), filter_tol=filter_tol,
        )
        w = solve_spectrum(
            assemble_adjoint(flow, grid, m), n_keep + 10,
            check=assemble_adjoint(flow, check_grid, m), filter_tol=filter_tol,
        )
        if not d:
            raise EigenSolverError(f"no resolved eigenvalues at m={m}")
        truncation[m] = float(d[-1].value.real)
        direct += d + [_mirror(p) for p in d]
        adjoint += w + [_mirror(p) for p in w]
    sp = biorthonormalize(direct, adjoint, flow, margin, cluster_tol, filter_tol)
    report = check_semisimple(sp, cluster_tol)
    object.__setattr__(sp, "semisimple", report)
    object.__setattr__(sp, "truncation", truncation)
    if not report.passed:
        raise HypothesisFailure(f"unstable eigenvalues are not semisimple: {report.clusters}")
    return sp


def check_resolution(flow, M, n_compare=20, factor=1.5):
    """Largest relative change of the n_compare least-stable eigenvalues per
    positive wavenumber between degree M and the next even degree >= factor*M.

    No spurious-mode filtering is applied.
    """
    g1 = build_grid(M)
    M2 = int(np.ceil(factor * M))
    g2 = build_grid(M2 + (M2 % 2))
    worst = {}
    for m in flow.positive_wavenumbers:
        l1, _ = _eig(assemble_orr_sommerfeld(flow, g1, m))
        l2, _ = _eig(assemble_orr_sommerfeld(flow, g2, m))
        l1 = l1[:n_compare]
        d = [np.min(np.abs(l2 - z)) / abs(z) for z in l1]
        worst[m] = float(max(d))
    return worst



@dataclass(frozen=True)
class SweepPoint:
    """Unstable eigenvalues of one (nu, a) pair, with resolution checks.

    ``resolution_change`` compares the unstable eigenvalues at degrees M and
    M_check, ``adjoint_change`` the conjugated adjoint ones at degree M, and
    ``spectrum_change`` the least-stable part of the spectrum (as in
    check_resolution).
    """

    nu: float
    a: float
    M: int
    M_check: int
    unstable: tuple
    N: int
    resolution_change: float
    adjoint_change: float
    spectrum_change: float
    accepted: bool

    @property
    def growth(self):
        return max((-z.real for z in self.unstable), default=0.0)


def _unstable_positive(flow, grid, kind="direct"):
    asm = assemble_orr_sommerfeld if kind == "direct" else assemble_adjoint
    out = []
    for m in flow.positive_wavenumbers:
        lam, _ = _eig(asm(flow, grid, m))
        out += [(m, z) for z in lam if z.real < 0]
    return out


def _matched_change(ref, other):
    worst = 0.0
    for m, z in ref:
        cand = [w for mm, w in other if mm == m]
        worst = max(worst, min((abs(w - z) / abs(z) for w in cand), default=np.inf))
    return float(worst)


def instability_sweep(nus, a_values=(1.0,), M=96, M_x=3, tol=1e-8, min_unstable=2, n_compare=20):
    """Scan (nu, a) for resolved configurations with at least ``min_unstable`` growing modes.

    Counts include the mirrored modes at -m.  A point is accepted when all three
    relative changes reported on SweepPoint are at most ``tol``.
    """
    from .channel import ChannelFlow

    M_check = _fine_size(M)
    g1, g2 = build_grid(M), build_grid(M_check)
    points = []
    for a in a_values:
        for nu in nus:
            flow = ChannelFlow.from_truncation(nu, a, M_x)
            u1 = _unstable_positive(flow, g1)
            u2 = _unstable_positive(flow, g2)
            ua = [(m, np.conj(z)) for m, z in _unstable_positive(flow, g1, "adjoint")]
            change = max(_matched_change(u1, u2), _matched_change(u2, u1))
            adj = max(_matched_change(u1, ua), _matched_change(ua, u1))
            N = 2 * len(u1)
            full = max(check_resolution(flow, M, n_compare).values()) if N >= min_unstable else np.inf
            ok = N >= min_unstable and max(change, adj, full) <= tol
            points.append(SweepPoint(float(nu), float(a), M, M_check, tuple(complex(z) for _, z in u1),
                                     N, change, adj, float(full), bool(ok)))
    return points


def select_configuration(points):
    """The accepted sweep point with the fastest growing mode, or None."""
    ok = [p for p in points if p.accepted]
    return max(ok, key=lambda p: p.growth) if ok else None
