"""Cell problems, the effective matrix form, limit problems and recovery sequences."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .energy import LoadSpec
from .material import MaterialLaw, QuadForm
from .mesh import CellMesh, Grid, MacroMesh, assemble_quadratic, solve_spd
from .optim import lbfgs
from .twoscale import TwoScaleLimit

log = logging.getLogger(__name__)

_I = np.eye(2)
_BASIS = [np.outer(_I[i], _I[j]) for i in range(2) for j in range(2)]


class ConsistencyError(RuntimeError):
    pass


class CellProblem:
    """Periodic corrector problem ``min_psi int_{Y1} Q(F + grad psi)`` on a cell mesh.

    Only nodes touching the matrix carry unknowns; one of them is pinned and the
    solution is then filled into the inclusion harmonically and shifted to mean zero.
    """

    def __init__(self, Q1: QuadForm, cell: CellMesh):
        self.Q1, self.cell = Q1, cell
        self.weights = cell.area * ~cell.soft
        A = assemble_quadratic(cell, Q1, region=~cell.soft)
        P = cell.periodic_projection
        self.P = P
        self.Ap = (P.T @ A @ P).tocsr()
        active = np.unique(cell.periodic[cell.stiff_nodes])
        dofs = (2 * active[:, None] + np.arange(2)).ravel()
        self.pinned = dofs[:2]
        self.free = dofs[2:]
        n = self.Ap.shape[0]
        self.constrained = np.setdiff1d(np.arange(n), self.free)
        self._Cs = 0.5 * (Q1.matrix + Q1.matrix.T)

    def solve(self, F) -> tuple[np.ndarray, float]:
        cell = self.cell
        F = np.asarray(F, dtype=float)
        stress = np.broadcast_to((self._Cs @ F.ravel()).reshape(2, 2), (cell.n_elements, 2, 2))
        c = self.P.T @ cell.divergence_transpose(self.weights[:, None, None] * stress)
        psi_p = solve_spd(2 * self.Ap, -c, self.constrained)
        psi = (self.P @ psi_p).reshape(cell.n_nodes, 2)
        if np.any(cell.soft_interior):
            psi[cell.soft_interior] = cell.soft_laplace_extension @ psi[cell.soft_boundary]
        mean = (cell.scalar_mass @ psi).sum(axis=0)  # cell has unit area
        psi -= mean
        value = float(self.weights @ self.Q1(F + cell.gradients(psi)))
        return psi, value


def cell_problem(Q1: QuadForm, F, cell: CellMesh) -> tuple[np.ndarray, float]:
    return CellProblem(Q1, cell).solve(F)


@dataclass
class EffectiveForm:
    form: QuadForm
    correctors: np.ndarray  # (2, 2, n_cell_nodes, 2)
    cell: CellMesh
    linearity_defect: float = 0.0

    def __call__(self, G):
        return self.form(G)


def effective_form(Q1: QuadForm, cell: CellMesh, linearity_tol: float = 1e-8) -> EffectiveForm:
    """Effective tensor from basis correctors, reconstructed by polarization."""
    prob = CellProblem(Q1, cell)
    psis, vals = [], []
    for E in _BASIS:
        p, v = prob.solve(E)
        psis.append(p)
        vals.append(v)
    C = np.zeros((4, 4))
    worst = 0.0
    for a in range(4):
        C[a, a] = 2 * vals[a]
        for b in range(a + 1, 4):
            p, v = prob.solve(_BASIS[a] + _BASIS[b])
            scale = max(np.max(np.abs(psis[a])) + np.max(np.abs(psis[b])), 1.0)
            worst = max(worst, float(np.max(np.abs(p - psis[a] - psis[b]))) / scale)
            C[a, b] = C[b, a] = v - vals[a] - vals[b]
    if worst > linearity_tol:
        raise ConsistencyError(f"corrector linearity violated: {worst:.3e}")
    return EffectiveForm(QuadForm(C), np.array(psis).reshape(2, 2, cell.n_nodes, 2), cell, worst)


def gauss_rule(omega, nq: int):
    t, w = np.polynomial.legendre.leggauss(nq)
    L1, L2 = omega
    x1, w1 = 0.5 * L1 * (t + 1), 0.5 * L1 * w
    x2, w2 = 0.5 * L2 * (t + 1), 0.5 * L2 * w
    X1, X2 = np.meshgrid(x1, x2, indexing="ij")
    return np.stack([X1.ravel(), X2.ravel()], 1), np.outer(w1, w2).ravel()


@dataclass
class LimitLoads:
    """Limit loads ``l1(x)`` and ``l0(x, y)`` (the latter vanishing off the inclusion)."""

    l1: Callable
    l0: Callable
    kappa: float
    soft_zero: bool = False
    nq: int = 16

    def quadrature(self, omega):
        return gauss_rule(omega, self.nq)


def limit_loads(load: LoadSpec, cell: CellMesh, omega, gamma: float, nq: int = 16) -> LimitLoads:
    """Limits of ``eps^gamma l_eps / lambda_eps`` and ``eps chi0 l_eps / lambda_eps``."""
    chi = cell.soft.astype(float)
    yb, ay = cell.barycenters, cell.area

    def soft_part(x):
        h = load.soft(np.repeat(x, len(yb), axis=0), np.tile(yb, (len(x), 1)), omega)
        return None if h is None else h.reshape(len(x), len(yb), 2)

    xq, wq = gauss_rule(omega, nq)
    f = load.macro(xq, omega)
    h = soft_part(xq)
    hh = 0.0 if h is None else h
    full = f[:, None, :] + chi[None, :, None] * hh
    A = np.sqrt(np.einsum("q,t,qti,qti->", wq, ay, full, full))
    soft_full = f[:, None, :] + hh
    B = np.sqrt(np.einsum("q,t,qti,qti->", wq, ay * chi, soft_full, soft_full))
    if load.regime == "finite-strain":
        kappa, use1, use0 = A, True, False
    else:
        use1, use0 = gamma <= 1, gamma >= 1
        kappa = use1 * A + use0 * B
    if kappa == 0:
        raise ValueError("limit loads vanish")

    def l1(x):
        x = np.atleast_2d(x)
        if not use1:
            return np.zeros((len(x), 2))
        out = load.macro(x, omega)
        hx = soft_part(x)
        if hx is not None:
            out = out + np.einsum("t,xti->xi", ay * chi, hx)
        return out / kappa

    def l0(x, y):
        x = np.atleast_2d(x)
        y = np.atleast_2d(y)
        if not use0:
            return np.zeros((len(x), len(y), 2))
        inside = cell.inclusion.contains(y).astype(float) if cell.inclusion is not None else np.zeros(len(y))
        out = np.repeat(load.macro(x, omega)[:, None, :], len(y), axis=1)
        if load.soft_profile != "none":
            hx = load.soft(np.repeat(x, len(y), axis=0), np.tile(y, (len(x), 1)), omega).reshape(len(x), len(y), 2)
            out = out + hx
        return out * inside[None, :, None] / kappa

    return LimitLoads(l1, l0, float(kappa), soft_zero=not use0, nq=nq)


class SoftCellProblem:
    """Zero-trace inclusion problems ``min int_{Y0} W(I + grad g) - l . g`` per macro point."""

    def __init__(self, cell: CellMesh, Q0: QuadForm, law: MaterialLaw | None = None):
        self.cell, self.Q0, self.law = cell, Q0, law
        self.nodes = np.flatnonzero(cell.soft_interior)
        self.dofs = (2 * self.nodes[:, None] + np.arange(2)).ravel()
        S = 2 * assemble_quadratic(cell, Q0, region=cell.soft).toarray()[np.ix_(self.dofs, self.dofs)]
        self.S = S
        self._cho = sla.cho_factor(S) if S.size else None

    def rhs(self, l0_values) -> np.ndarray:
        """Load vectors for ``l0`` values at cell barycenters, shape (k, nt, 2) -> (k, ndof)."""
        out = np.empty((l0_values.shape[0], self.dofs.size))
        for k, lv in enumerate(l0_values):
            out[k] = self.cell.load_vector(lv, elements=self.cell.soft).ravel()[self.dofs]
        return out

    def embed(self, coeffs) -> np.ndarray:
        coeffs = np.atleast_2d(coeffs)
        out = np.zeros((coeffs.shape[0], self.cell.n_nodes * 2))
        out[:, self.dofs] = coeffs
        return out.reshape(-1, self.cell.n_nodes, 2)

    def solve_quadratic(self, b) -> tuple[np.ndarray, np.ndarray]:
        """Minimizers and minimum values of ``g.S g / 2 - b.g`` for each row of ``b``."""
        b = np.atleast_2d(b)
        if self._cho is None:
            return np.zeros_like(b), np.zeros(len(b))
        g = sla.cho_solve(self._cho, b.T).T
        return g, -0.5 * np.einsum("ki,ki->k", b, g)

    def _fun_grad(self, b):
        cell, law = self.cell, self.law
        soft = cell.soft
        w = cell.area[soft]

        def fg(x):
            full = np.zeros(cell.n_dofs)
            full[self.dofs] = x
            F = _I + cell.gradients(full)[soft]
            val = float(w @ law.evaluate(F) - b @ x)
            stress = np.zeros((cell.n_elements, 2, 2))
            stress[soft] = w[:, None, None] * law.gradient(F)
            return val, cell.divergence_transpose(stress)[self.dofs] - b

        return fg

    def solve_nonlinear(self, b, multistart: int = 5, seed: int = 0, scale: float | None = None,
                        gtol: float = 1e-10, maxiter: int = 2000):
        """Best-of-multistart minimizer; returns (g, value, spread, converged)."""
        if self.law is None:
            raise ValueError("no soft law supplied")
        if self._cho is None or not np.any(b):
            return np.zeros_like(b), 0.0, 0.0, True
        scale = 0.1 * np.sqrt(self.cell.soft_volume) if scale is None else scale
        rng = np.random.default_rng(seed)
        fg = self._fun_grad(b)
        precond = lambda v: sla.cho_solve(self._cho, v)
        g_lin, _ = self.solve_quadratic(b)
        best, values, ok = None, [], False
        for k in range(multistart):
            x0 = g_lin[0].copy() if k == 0 else g_lin[0] + scale * rng.normal(size=b.size)
            res = lbfgs(fg, x0, precond=precond, gtol=gtol * (1 + np.linalg.norm(b)), maxiter=maxiter)
            values.append(res.fun)
            ok = ok or res.converged
            if best is None or res.fun < best.fun:
                best = res
        return best.x, best.fun, float(max(values) - min(values)), ok


@dataclass
class LimitSolution:
    limit: TwoScaleLimit
    m0: float
    parts: dict
    grid: Grid
    g1: np.ndarray
    residual: float = 0.0
    spread: float = 0.0
    converged: bool = True
    soft_cells: Callable | None = field(default=None, repr=False)

    @property
    def energy(self) -> float:
        return self.parts["soft_energy"] + self.parts["stiff_energy"]


def macro_grid(omega, h: float, origin=(0.0, 0.0)) -> Grid:
    n1, n2 = round(omega[0] / h), round(omega[1] / h)
    if not (np.isclose(n1 * h, omega[0]) and np.isclose(n2 * h, omega[1])):
        raise ValueError("macro mesh size must divide the domain")
    return Grid(n1, n2, h, origin)


def _macro_solve(eff: EffectiveForm, loads: LimitLoads, grid: Grid, gamma_boundary: str):
    K = 2 * assemble_quadratic(grid, eff.form)
    b = grid.load_vector(loads.l1(grid.barycenters)).ravel()
    gn = grid.boundary_nodes(gamma_boundary)
    cons = np.concatenate([2 * gn, 2 * gn + 1])
    g1 = solve_spd(K, b, cons)
    free = np.setdiff1d(np.arange(grid.n_dofs), cons)
    r = (K @ g1 - b)[free]
    res = float(np.linalg.norm(r) / max(np.linalg.norm(b), 1e-300))
    stiff_energy = 0.5 * float(g1 @ (K @ g1))
    return g1.reshape(-1, 2), stiff_energy, float(b @ g1), res


def limit_small_solve(eff: EffectiveForm, Q0: QuadForm, loads: LimitLoads, grid: Grid, cell: CellMesh | None = None,
                      gamma_boundary: str = "full-boundary") -> LimitSolution:
    """Minimize the small-load limit energy: a macro problem plus independent cell problems."""
    cell = eff.cell if cell is None else cell
    g1, stiff_e, stiff_l, res = _macro_solve(eff, loads, grid, gamma_boundary)
    soft = SoftCellProblem(cell, Q0)
    xq, wq = loads.quadrature((grid.n1 * grid.h, grid.n2 * grid.h))
    if loads.soft_zero:
        soft_e = soft_l = 0.0
    else:
        b = soft.rhs(loads.l0(xq, cell.barycenters))
        g, vals = soft.solve_quadratic(b)
        work = np.einsum("ki,ki->k", b, g)
        soft_e, soft_l = float(wq @ (0.5 * work)), float(wq @ work)

    def g0(x):
        x = np.atleast_2d(x)
        if loads.soft_zero:
            return np.zeros((len(x), cell.n_nodes, 2))
        coeffs, _ = soft.solve_quadratic(soft.rhs(loads.l0(x, cell.barycenters)))
        return soft.embed(coeffs)

    limit = TwoScaleLimit.from_grid(cell, grid, g1, g0=g0, psi_basis=eff.correctors)
    parts = {"soft_energy": soft_e, "stiff_energy": stiff_e, "soft_load": soft_l, "stiff_load": stiff_l}
    m0 = (stiff_e - stiff_l) + (soft_e - soft_l)
    return LimitSolution(limit, m0, parts, grid, g1, res)


def limit_large_solve(eff: EffectiveForm, W0: MaterialLaw, loads: LimitLoads, grid: Grid, cell: CellMesh | None = None,
                      multistart: int = 5, seed: int = 0, gamma_boundary: str = "full-boundary") -> LimitSolution:
    """Finite-load limit: same macro problem, nonlinear inclusion problems solved with multistart."""
    cell = eff.cell if cell is None else cell
    g1, stiff_e, stiff_l, res = _macro_solve(eff, loads, grid, gamma_boundary)
    soft = SoftCellProblem(cell, W0.quad_form, W0)
    xq, wq = loads.quadrature((grid.n1 * grid.h, grid.n2 * grid.h))
    soft_e = soft_l = spread = 0.0
    converged = True
    cache: dict = {}

    def solve_at(b, key):
        if key not in cache:
            cache[key] = soft.solve_nonlinear(b, multistart=multistart, seed=seed)
        return cache[key]

    if not loads.soft_zero:
        B = soft.rhs(loads.l0(xq, cell.barycenters))
        for q in range(len(xq)):
            g, val, spr, ok = solve_at(B[q], B[q].tobytes())
            work = float(B[q] @ g)
            soft_e += wq[q] * (val + work)
            soft_l += wq[q] * work
            spread += wq[q] * spr
            converged &= ok

    def g0(x):
        x = np.atleast_2d(x)
        if loads.soft_zero:
            return np.zeros((len(x), cell.n_nodes, 2))
        B = soft.rhs(loads.l0(x, cell.barycenters))
        return soft.embed(np.array([solve_at(b, b.tobytes())[0] for b in B]))

    limit = TwoScaleLimit.from_grid(cell, grid, g1, g0=g0, psi_basis=eff.correctors)
    parts = {"soft_energy": soft_e, "stiff_energy": stiff_e, "soft_load": soft_l, "stiff_load": stiff_l}
    m0 = (stiff_e - stiff_l) + (soft_e - soft_l)
    return LimitSolution(limit, m0, parts, grid, g1, res, spread, converged)


def limit_energy(limit: TwoScaleLimit, eff: EffectiveForm, soft_density: Callable, omega, nq: int = 24) -> float:
    """``int_Omega (int_Y0 soft_density(I + grad_y g0) + Q_hom(grad g1)) dx`` by Gauss quadrature in x.

    ``soft_density`` acts on deformation gradients, e.g. a law's ``evaluate`` or
    ``lambda F: Q0(F - I)`` for the quadratic soft part.
    """
    cell = limit.cell
    xq, wq = gauss_rule(omega, nq)
    soft = cell.soft
    total = float(wq @ eff.form(limit.g1_grad(xq)))
    if limit.g0 is not None:
        for x, w in zip(xq, wq):
            G = cell.gradients(limit.g0_at(x[None])[0])[soft]
            total += w * float(cell.area[soft] @ soft_density(_I + G))
    return total


def recovery_sequence(limit: TwoScaleLimit, mesh: MacroMesh, lam: float = 1.0, tol: float = 1e-12) -> np.ndarray:
    """Nodal ``lam * (eps g0(x_cell, y) + eps^gamma (g1(x) + eps eta(x) psi(x, y)))``.

    ``g0`` is frozen at cell barycenters and lives on interior cells only; the
    corrector is switched off outside the closure of the interior cells.
    """
    limit.check()
    geom, cell, m = mesh.geom, mesh.cell, mesh.m
    if cell.m != limit.cell.m:
        raise ValueError("cell resolution of the limit does not match the mesh")
    eps, gamma = geom.eps, geom.gamma
    nodes = mesh.nodes
    g1 = limit.g1(nodes)
    if np.max(np.abs(g1[mesh.gamma_nodes]), initial=0.0) > tol:
        raise ValueError("g1 must vanish on the clamped boundary")
    li, lj = mesh.node_ij[:, 0] % m, mesh.node_ij[:, 1] % m
    local = cell.node_index(li, lj)
    if limit.psi_basis is None:
        psi = np.zeros((mesh.n_nodes, 2))
    else:
        psi = np.einsum("kij,ijkc->kc", limit.g1_grad(nodes), limit.psi_basis[:, :, local])
    n1, n2 = geom.n_cells
    ci, cj = mesh.node_ij[:, 0], mesh.node_ij[:, 1]
    eta = ((ci >= m) & (ci <= (n1 - 1) * m) & (cj >= m) & (cj <= (n2 - 1) * m)).astype(float)
    phi = eps ** gamma * (g1 + eps * eta[:, None] * psi)
    inner = mesh.cell_is_interior
    if limit.g0 is not None and np.any(inner):
        xb = (mesh.cells[inner] + 0.5) * eps
        g0 = limit.g0_at(xb)[:, cell.soft_interior]
        phi[mesh.cell_nodes[inner][:, cell.soft_interior]] += eps * g0
    phi[mesh.gamma_nodes] = 0.0
    return lam * phi
