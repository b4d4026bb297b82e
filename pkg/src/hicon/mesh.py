"""Structured P1 finite elements on rectangles and on the periodicity cell.

Every quad of an ``n1 x n2`` grid is split into two triangles, alternating the
diagonal in a checkerboard, so gradients are elementwise constant and all
energy integrals of P1 fields are exact sums over elements.

Degrees of freedom are node-major: component ``c`` of node ``k`` lives at
``2 * k + c``.  Gradients are stored as ``(n_elements, 2, 2)`` arrays with
``grad[e, i, j] = d phi_i / d x_j``.
"""
from __future__ import annotations

import logging
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import CompositeGeometry

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    def __init__(self, message, residual=float("nan")):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


class Grid:
    """P1 triangulation of ``[0, n1*h] x [0, n2*h]``."""

    def __init__(self, n1: int, n2: int, h: float, origin=(0.0, 0.0)):
        self.n1, self.n2, self.h = int(n1), int(n2), float(h)
        i, j = np.meshgrid(np.arange(n1 + 1), np.arange(n2 + 1), indexing="xy")
        self.node_ij = np.stack([i.ravel(), j.ravel()], axis=1)
        self.nodes = np.asarray(origin, dtype=float) + h * self.node_ij

        qi, qj = np.meshgrid(np.arange(n1), np.arange(n2), indexing="xy")
        qi, qj = qi.ravel(), qj.ravel()
        v00 = self.node_index(qi, qj)
        v10 = self.node_index(qi + 1, qj)
        v11 = self.node_index(qi + 1, qj + 1)
        v01 = self.node_index(qi, qj + 1)
        # alternate the split diagonal by quad parity so that the pattern keeps
        # the symmetries of the square whenever the side counts are even
        flip = (qi + qj) % 2 == 1
        tri = np.empty((2 * qi.size, 3), dtype=np.int64)
        tri[0::2] = np.where(flip[:, None], np.stack([v00, v10, v01], 1), np.stack([v00, v10, v11], 1))
        tri[1::2] = np.where(flip[:, None], np.stack([v10, v11, v01], 1), np.stack([v00, v11, v01], 1))
        self.elements = tri
        self.quad_flipped = flip
        self.element_quad = np.repeat(np.stack([qi, qj], axis=1), 2, axis=0)
        self.element_type = np.tile([0, 1], qi.size)

        p = self.nodes[tri]
        edges = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # columns are edges
        self.area = 0.5 * np.abs(np.linalg.det(edges))
        inv = np.linalg.inv(edges)  # rows: gradients of barycentric coords 1, 2
        dN = np.empty((tri.shape[0], 3, 2))
        dN[:, 1:] = inv
        dN[:, 0] = -inv.sum(axis=1)
        self.dN = dN
        self.barycenters = p.mean(axis=1)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def n_dofs(self) -> int:
        return 2 * self.n_nodes

    def node_index(self, i, j):
        return np.asarray(j) * (self.n1 + 1) + np.asarray(i)

    @cached_property
    def B(self) -> np.ndarray:
        """Elementwise strain-displacement maps, shape (ne, 4, 6)."""
        B = np.zeros((self.n_elements, 4, 6))
        for a in range(3):
            for i in range(2):
                for j in range(2):
                    B[:, 2 * i + j, 2 * a + i] = self.dN[:, a, j]
        return B

    @cached_property
    def element_dofs(self) -> np.ndarray:
        return (2 * self.elements[:, :, None] + np.arange(2)).reshape(-1, 6)

    @cached_property
    def gradient_operator(self) -> sp.csr_matrix:
        """Sparse map from the flat dof vector to flattened element gradients."""
        ne = self.n_elements
        rows = np.repeat(4 * np.arange(ne)[:, None] + np.arange(4), 6, axis=1).reshape(ne, 4, 6)
        cols = np.broadcast_to(self.element_dofs[:, None, :], (ne, 4, 6))
        G = sp.coo_matrix((self.B.ravel(), (rows.ravel(), cols.ravel())), shape=(4 * ne, self.n_dofs))
        G = G.tocsr()
        G.eliminate_zeros()
        return G

    def gradients(self, values: np.ndarray) -> np.ndarray:
        """Constant P1 gradient on each triangle, shape (ne, 2, 2)."""
        values = np.asarray(values, dtype=float).reshape(self.n_nodes, 2)
        return (self.gradient_operator @ values.ravel()).reshape(-1, 2, 2)

    def scalar_gradients(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        return np.einsum("ea,eaj->ej", values[self.elements], self.dN)

    def divergence_transpose(self, stress: np.ndarray) -> np.ndarray:
        """Adjoint of :meth:`gradients`: nodal forces ``sum_T (d grad/d dof)^T stress_T``."""
        return self.gradient_operator.T @ np.asarray(stress, dtype=float).reshape(-1)

    @cached_property
    def scalar_mass(self) -> sp.csr_matrix:
        local = (np.full((3, 3), 1.0) + np.eye(3)) / 12.0
        data = self.area[:, None, None] * local
        rows = np.repeat(self.elements[:, :, None], 3, axis=2)
        cols = np.repeat(self.elements[:, None, :], 3, axis=1)
        return sp.coo_matrix((data.ravel(), (rows.ravel(), cols.ravel())),
                             shape=(self.n_nodes, self.n_nodes)).tocsr()

    def l2_norm_sq(self, values: np.ndarray, elements=None) -> float:
        """Exact squared L2 norm of a P1 field (scalar or vector nodal values)."""
        v = np.asarray(values, dtype=float).reshape(self.n_nodes, -1)
        if elements is None:
            return float(np.einsum("nc,nc->", v, self.scalar_mass @ v))
        local = (np.full((3, 3), 1.0) + np.eye(3)) / 12.0
        ve = v[self.elements[elements]]
        return float(np.einsum("e,eac,ab,ebc->", self.area[elements], ve, local, ve))

    def grad_l2_norm_sq(self, values: np.ndarray, elements=None) -> float:
        g = self.gradients(values)
        w = self.area if elements is None else self.area * elements
        return float(np.einsum("e,eij,eij->", w, g, g))

    def load_vector(self, load_at_barycenters: np.ndarray, elements=None) -> np.ndarray:
        """Barycenter quadrature of ``int l . phi``; returns nodal forces (n_nodes, 2)."""
        l = np.asarray(load_at_barycenters, dtype=float).reshape(self.n_elements, 2)
        w = self.area / 3.0
        if elements is not None:
            w = w * elements
        out = np.zeros((self.n_nodes, 2))
        for a in range(3):
            np.add.at(out, self.elements[:, a], w[:, None] * l)
        return out

    def locate(self, points: np.ndarray):
        """Element index and barycentric weights of each point (points on the closure)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        s = pts / self.h
        qi = np.clip(np.floor(s[:, 0]).astype(int), 0, self.n1 - 1)
        qj = np.clip(np.floor(s[:, 1]).astype(int), 0, self.n2 - 1)
        lx, ly = s[:, 0] - qi, s[:, 1] - qj
        flip = (qi + qj) % 2 == 1
        second = np.where(flip, lx + ly > 1, ly > lx)
        elem = 2 * (qj * self.n1 + qi) + second.astype(int)
        w = np.empty((pts.shape[0], 3))
        cases = [
            (~flip & ~second, np.stack([1 - lx, lx - ly, ly], 1)),      # (v00, v10, v11)
            (~flip & second, np.stack([1 - ly, lx, ly - lx], 1)),       # (v00, v11, v01)
            (flip & ~second, np.stack([1 - lx - ly, lx, ly], 1)),       # (v00, v10, v01)
            (flip & second, np.stack([1 - ly, lx + ly - 1, 1 - lx], 1)),  # (v10, v11, v01)
        ]
        for mask, weights in cases:
            w[mask] = weights[mask]
        return elem, w

    def interpolate(self, values: np.ndarray, points: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        elem, w = self.locate(points)
        return np.einsum("pa,pa...->p...", w, values[self.elements[elem]])

    def recovered_gradient(self, values: np.ndarray) -> np.ndarray:
        """Area-weighted nodal average of element gradients, shape (n_nodes, 2, 2)."""
        g = self.gradients(values)
        acc = np.zeros((self.n_nodes, 2, 2))
        wsum = np.zeros(self.n_nodes)
        for a in range(3):
            np.add.at(acc, self.elements[:, a], self.area[:, None, None] * g)
            np.add.at(wsum, self.elements[:, a], self.area)
        return acc / wsum[:, None, None]

    def boundary_nodes(self, selector: str = "full-boundary") -> np.ndarray:
        i, j = self.node_ij[:, 0], self.node_ij[:, 1]
        if selector == "left-edge":
            mask = i == 0
        elif selector == "full-boundary":
            mask = (i == 0) | (j == 0) | (i == self.n1) | (j == self.n2)
        else:
            raise ValueError(f"unknown boundary selector {selector!r}")
        return np.flatnonzero(mask)


class CellMesh(Grid):
    """Unit cell ``Y = [0, 1)^2`` at resolution ``1/m`` with soft/stiff element tags.

    Nodes on ``y = 1`` duplicate those on ``y = 0``; ``periodic`` maps every node to
    its representative in ``{0..m-1}^2``.
    """

    def __init__(self, resolution: int, inclusion=None):
        m = int(resolution)
        super().__init__(m, m, 1.0 / m)
        self.m = m
        self.inclusion = inclusion
        if inclusion is None:
            self.soft = np.zeros(self.n_elements, dtype=bool)
        else:
            self.soft = inclusion.contains(self.barycenters)
        i, j = self.node_ij[:, 0] % m, self.node_ij[:, 1] % m
        self.periodic = j * m + i
        self.n_periodic = m * m

        touches_soft = np.zeros(self.n_nodes, dtype=bool)
        touches_stiff = np.zeros(self.n_nodes, dtype=bool)
        for a in range(3):
            touches_soft[self.elements[self.soft, a]] = True
            touches_stiff[self.elements[~self.soft, a]] = True
        self.soft_interior = touches_soft & ~touches_stiff
        self.soft_boundary = touches_soft & touches_stiff
        self.stiff_nodes = touches_stiff

    @property
    def soft_volume(self) -> float:
        return float(self.area[self.soft].sum())

    @property
    def stiff_volume(self) -> float:
        return float(self.area[~self.soft].sum())

    @cached_property
    def periodic_projection(self) -> sp.csr_matrix:
        """Map from periodic nodal vector-valued dofs to full-grid dofs."""
        rows = np.arange(self.n_dofs)
        cols = 2 * self.periodic[rows // 2] + rows % 2
        return sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(self.n_dofs, 2 * self.n_periodic))

    @cached_property
    def soft_laplace_extension(self) -> np.ndarray:
        """Dense operator giving discrete-harmonic interior values on Y0 from its trace.

        Returns ``H`` with ``u[soft_interior] = H @ u[soft_boundary]`` (scalar fields).
        """
        interior = np.flatnonzero(self.soft_interior)
        boundary = np.flatnonzero(self.soft_boundary)
        L = scalar_laplacian(self, self.soft).toarray()
        A_II = L[np.ix_(interior, interior)]
        A_IB = L[np.ix_(interior, boundary)]
        if interior.size == 0:
            return np.zeros((0, boundary.size))
        return -np.linalg.solve(A_II, A_IB)


class MacroMesh(Grid):
    """Grid on the macroscopic domain aligned with the epsilon-lattice (``h = eps / m``)."""

    def __init__(self, geom: CompositeGeometry, m: int = 8):
        if m < 4 or m % 2:
            raise ValueError("need an even number (>= 4) of elements per cell side")
        n1, n2 = geom.n_cells
        super().__init__(n1 * m, n2 * m, geom.eps / m)
        self.geom, self.m = geom, int(m)
        self.cell = CellMesh(m, geom.inclusion)

        qi, qj = self.element_quad[:, 0], self.element_quad[:, 1]
        self.element_cell = np.stack([qi // m, qj // m], axis=1)
        self.element_local = 2 * ((qj % m) * m + qi % m) + self.element_type
        interior = geom.is_interior_cell(self.element_cell)
        self.soft = interior & self.cell.soft[self.element_local]

        self.gamma_nodes = self.boundary_nodes(geom.gamma_boundary)
        # per interior cell, global indices of its (m+1)^2 cell-grid nodes
        cells = np.array([(a, b) for a in range(n1) for b in range(n2)], dtype=int).reshape(-1, 2)
        self.cells = cells
        self.cell_is_interior = geom.is_interior_cell(cells)
        li, lj = self.cell.node_ij[:, 0], self.cell.node_ij[:, 1]
        self.cell_nodes = self.node_index(cells[:, :1] * m + li[None, :], cells[:, 1:] * m + lj[None, :])
        qidx = (cells[:, 1:] * m + (self.cell.element_quad[:, 1])[None, :]) * self.n1 \
            + cells[:, :1] * m + self.cell.element_quad[:, 0][None, :]
        self.cell_elements = 2 * qidx + self.cell.element_type[None, :]

        inner = self.cell_nodes[self.cell_is_interior]
        self.inclusion_interior_nodes = np.unique(inner[:, self.cell.soft_interior])
        self.inclusion_boundary_nodes = np.unique(inner[:, self.cell.soft_boundary])

    @property
    def eps(self) -> float:
        return self.geom.eps

    def node_tags(self) -> np.ndarray:
        tags = np.full(self.n_nodes, "stiff", dtype=object)
        tags[self.inclusion_boundary_nodes] = "inclusion_boundary"
        tags[self.inclusion_interior_nodes] = "inclusion_interior"
        tags[self.gamma_nodes] = "on_gamma"
        return tags

    def constrained_dofs(self) -> np.ndarray:
        return np.sort(np.concatenate([2 * self.gamma_nodes, 2 * self.gamma_nodes + 1]))


def scalar_laplacian(grid: Grid, elements=None) -> sp.csr_matrix:
    """Stiffness of ``int |grad u|^2`` for scalar P1 fields over the selected elements."""
    w = grid.area if elements is None else grid.area * elements
    data = w[:, None, None] * np.einsum("eaj,ebj->eab", grid.dN, grid.dN)
    rows = np.repeat(grid.elements[:, :, None], 3, axis=2)
    cols = np.repeat(grid.elements[:, None, :], 3, axis=1)
    return sp.coo_matrix((data.ravel(), (rows.ravel(), cols.ravel())),
                         shape=(grid.n_nodes, grid.n_nodes)).tocsr()


def assemble_quadratic(grid: Grid, form, region=None, weights=None) -> sp.csr_matrix:
    """Symmetric ``A`` with ``phi^T A phi = sum_T w_T |T| Q(grad phi|_T)``.

    ``region`` is a boolean element mask (None selects all elements); ``weights``
    an optional per-element factor.  An empty region yields the zero operator.
    """
    C4 = np.asarray(form.matrix, dtype=float)
    w = grid.area.copy()
    if weights is not None:
        w = w * np.broadcast_to(weights, w.shape)
    if region is not None:
        w = w * np.asarray(region, dtype=bool)
    B = grid.B
    K = 0.5 * w[:, None, None] * np.einsum("eki,kl,elj->eij", B, C4, B)
    dofs = grid.element_dofs
    rows = np.repeat(dofs[:, :, None], 6, axis=2)
    cols = np.repeat(dofs[:, None, :], 6, axis=1)
    A = sp.coo_matrix((K.ravel(), (rows.ravel(), cols.ravel())), shape=(grid.n_dofs, grid.n_dofs)).tocsr()
    A.sum_duplicates()
    return A


def free_dofs(n_dofs: int, constrained) -> np.ndarray:
    mask = np.ones(n_dofs, dtype=bool)
    if constrained is not None:
        mask[np.asarray(constrained, dtype=int)] = False
    return np.flatnonzero(mask)


def solve_spd(A, b, constraints=None, tol: float = 1e-10, maxiter: int = 20000) -> np.ndarray:
    """Jacobi-preconditioned CG on the unconstrained block; constrained entries are zero."""
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float).ravel()
    x = np.zeros_like(b)
    free = free_dofs(b.size, constraints)
    bf = b[free]
    nb = np.linalg.norm(bf)
    if nb == 0.0:
        return x
    Aff = A[free][:, free]
    d = Aff.diagonal()
    d[d == 0] = 1.0
    M = spla.LinearOperator(Aff.shape, matvec=lambda v: v / d, dtype=float)
    xf, info = spla.cg(Aff, bf, rtol=tol, atol=0.0, maxiter=maxiter, M=M)
    res = np.linalg.norm(Aff @ xf - bf) / nb
    if info != 0 or res > 10 * tol:
        raise SolverError(f"PCG did not converge (info={info})", res)
    x[free] = xf
    return x
