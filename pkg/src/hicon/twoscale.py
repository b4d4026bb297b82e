"""Periodic unfolding on lattice-aligned meshes and two-scale distances."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .mesh import CellMesh, Grid, MacroMesh


class UnfoldingError(ValueError):
    pass


@dataclass
class UnfoldedField:
    """Cellwise re-indexing ``values[c, k]`` of a field on the cell ``cells[c]``.

    ``kind`` is ``"nodal"`` (k runs over cell-grid nodes) or ``"element"``.
    """

    values: np.ndarray
    cells: np.ndarray
    cell: CellMesh
    eps: float
    kind: str

    def norm_sq(self) -> float:
        v = self.values.reshape(self.values.shape[0], self.values.shape[1], -1)
        if self.kind == "element":
            return float(self.eps ** 2 * np.einsum("t,ctk,ctk->", self.cell.area, v, v))
        M = self.cell.scalar_mass
        return float(self.eps ** 2 * sum(np.einsum("nk,nk->", vc, M @ vc) for vc in v))

    def norm(self) -> float:
        return float(np.sqrt(self.norm_sq()))

    def integrate(self, fn: Callable) -> float:
        """``sum_xi eps^2 sum_Ty |Ty| fn(value)`` for element data."""
        if self.kind != "element":
            raise UnfoldingError("integrals of densities need element data")
        return float(self.eps ** 2 * np.einsum("t,ct->", self.cell.area, fn(self.values)))

    def __mul__(self, other: "UnfoldedField") -> "UnfoldedField":
        if other.kind != self.kind:
            raise UnfoldingError("cannot multiply nodal and element data")
        return UnfoldedField(self.values * other.values, self.cells, self.cell, self.eps, self.kind)


def unfold(mesh: MacroMesh, data, kind: str = "nodal") -> UnfoldedField:
    """Exact unfolding of nodal values (n_nodes, ...) or element values (n_elements, ...)."""
    data = np.asarray(data, dtype=float)
    if not isinstance(mesh, MacroMesh):
        raise UnfoldingError("unfolding needs a lattice-aligned macro mesh")
    if kind == "nodal":
        if data.shape[0] != mesh.n_nodes:
            raise UnfoldingError("nodal data has the wrong length")
        vals = data[mesh.cell_nodes]
    elif kind == "element":
        if data.shape[0] != mesh.n_elements:
            raise UnfoldingError("element data has the wrong length")
        vals = data[mesh.cell_elements]
    else:
        raise ValueError(f"unknown kind {kind!r}")
    return UnfoldedField(vals, mesh.cells, mesh.cell, mesh.eps, kind)


@dataclass
class TwoScaleLimit:
    """Candidate limit triple ``(g0, g1, psi)``.

    ``g0(x)`` returns cell fields ``(k, cell.n_nodes, 2)`` for macro points ``x``
    (None means zero).  ``g1`` and ``g1_grad`` evaluate the macro field and its
    gradient.  ``psi_basis[i, j]`` is the periodic corrector for ``e_i (x) e_j``
    on the cell grid; ``psi(x) = sum_ij grad g1(x)_ij psi_basis[i, j]``.
    """

    cell: CellMesh
    g1: Callable
    g1_grad: Callable
    g0: Callable | None = None
    psi_basis: np.ndarray | None = None

    def psi(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.psi_basis is None:
            return np.zeros((len(x), self.cell.n_nodes, 2))
        return np.einsum("kij,ijnc->knc", self.g1_grad(x), self.psi_basis)

    def g0_at(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.g0 is None:
            return np.zeros((len(x), self.cell.n_nodes, 2))
        return np.asarray(self.g0(x), dtype=float)

    def check(self, tol: float = 1e-12):
        """Zero trace of ``g0`` off the inclusion interior and periodicity of ``psi``."""
        c = self.cell
        probe = np.array([[0.5, 0.5], [0.25, 0.75]])
        g0 = self.g0_at(probe)
        if np.max(np.abs(g0[:, ~c.soft_interior]), initial=0.0) > tol:
            raise ValueError("g0 must vanish outside the inclusion interior")
        if self.psi_basis is not None:
            flat = self.psi_basis.reshape(4, c.n_nodes, 2)
            rep = flat[:, np.unique(c.periodic, return_index=True)[1]]
            if np.max(np.abs(flat - rep[:, c.periodic]), initial=0.0) > tol:
                raise ValueError("corrector is not periodic")

    @classmethod
    def zero(cls, cell: CellMesh) -> "TwoScaleLimit":
        return cls(cell, lambda x: np.zeros((len(np.atleast_2d(x)), 2)),
                   lambda x: np.zeros((len(np.atleast_2d(x)), 2, 2)))

    @classmethod
    def from_grid(cls, cell: CellMesh, grid: Grid, g1_nodal, g0=None, psi_basis=None) -> "TwoScaleLimit":
        """Limit whose macro part is a P1 field on ``grid`` (gradient recovered at nodes)."""
        g1_nodal = np.asarray(g1_nodal, dtype=float).reshape(grid.n_nodes, 2)
        rec = grid.recovered_gradient(g1_nodal)
        return cls(cell, lambda x: grid.interpolate(g1_nodal, x),
                   lambda x: grid.interpolate(rec, x), g0, psi_basis)


def _cell_barycenters(mesh: MacroMesh) -> np.ndarray:
    return (mesh.cells + 0.5) * mesh.eps


def two_scale_distance(splitting, mesh: MacroMesh, limit: TwoScaleLimit) -> tuple[float, float, float]:
    """``(d0, d1, dpsi)`` between an epsilon-splitting and a limit triple.

    Limit fields are frozen at each cell barycenter in ``x``.
    """
    if limit.cell.m != mesh.m:
        raise UnfoldingError("cell resolution of the limit does not match the mesh")
    eps = mesh.eps
    cell = limit.cell
    xb = _cell_barycenters(mesh)

    eg0 = unfold(mesh, eps * mesh.gradients(splitting.g0), "element").values
    target0 = np.stack([cell.gradients(f) for f in limit.g0_at(xb)])
    d0 = UnfoldedField(eg0 - target0, mesh.cells, cell, eps, "element").norm()

    diff1 = np.asarray(splitting.g1, float).reshape(mesh.n_nodes, 2) - limit.g1(mesh.nodes)
    d1 = float(np.sqrt(mesh.l2_norm_sq(diff1)))

    G1 = unfold(mesh, mesh.gradients(splitting.g1), "element").values
    targetp = limit.g1_grad(xb)[:, None] + np.stack([cell.gradients(p) for p in limit.psi(xb)])
    dpsi = UnfoldedField(G1 - targetp, mesh.cells, cell, eps, "element").norm()
    return d0, d1, dpsi


# smooth test fields for the weak load check
def _battery(x):
    s1, s2 = np.sin(np.pi * x[:, 0]), np.sin(np.pi * x[:, 1])
    return [np.stack([s1 * s2, 0 * s1], 1), np.stack([0 * s1, s1 * s2], 1),
            np.stack([x[:, 0] * s2, x[:, 1] * s1], 1), np.stack([np.cos(np.pi * x[:, 1]), np.ones(len(x))], 1),
            np.stack([np.sin(2 * np.pi * x[:, 0]) * s2, np.sin(3 * np.pi * x[:, 1])], 1)]


def load_limit_check(loads_eps: np.ndarray, lam: float, limit_loads, mesh: MacroMesh, pairs=()) -> dict:
    """Residuals of the rescaled loads against their limits.

    ``loads_eps`` are the values of ``l_eps`` at element barycenters.  ``pairs``
    is an iterable of ``(splitting, (g0_cells, g1_nodal_limit))`` for the
    load-functional comparison, with ``g0_cells`` sampled per cell barycenter.
    """
    eps, gamma = mesh.eps, mesh.geom.gamma
    l0_eps = (eps / lam) * mesh.soft[:, None] * loads_eps
    l1_eps = (eps ** gamma / lam) * loads_eps
    xb = _cell_barycenters(mesh)
    y_b = mesh.cell.barycenters
    U = unfold(mesh, l0_eps, "element").values
    target = limit_loads.l0(xb, y_b)
    strong = UnfoldedField(U - target, mesh.cells, mesh.cell, eps, "element").norm()

    xq, wq = limit_loads.quadrature(mesh.geom.omega)
    weak = []
    for w_eps, w_q in zip(_battery(mesh.barycenters / np.asarray(mesh.geom.omega)),
                          _battery(xq / np.asarray(mesh.geom.omega))):
        a = float(np.einsum("e,ei,ei->", mesh.area, l1_eps, w_eps))
        b = float(np.einsum("q,qi,qi->", wq, limit_loads.l1(xq), w_q))
        weak.append(abs(a - b))

    functional = []
    for s, (g0_lim, g1_lim) in pairs:
        L_eps = float(np.einsum("e,ei,ei->", mesh.area, l0_eps, _element_mean(mesh, s.g0))
                      + np.einsum("e,ei,ei->", mesh.area, l1_eps, _element_mean(mesh, s.g1)))
        g0_el = np.stack([_element_mean(mesh.cell, f) for f in g0_lim])
        L0 = float(eps ** 2 * np.einsum("t,cti,cti->", mesh.cell.area, target, g0_el)
                   + np.einsum("e,ei,ei->", mesh.area, limit_loads.l1(mesh.barycenters), _element_mean(mesh, g1_lim)))
        functional.append(abs(L_eps - L0))
    return {"strong": strong, "weak": weak, "functional": functional}


def _element_mean(grid, nodal):
    return np.asarray(nodal, float).reshape(grid.n_nodes, -1)[grid.elements].mean(axis=1)
