"""Splitting of displacements into inclusion and matrix parts, with the
uniform-estimate diagnostics built on top of it.

A clamped displacement ``phi`` is written as ``eps * g0 + eps**gamma * g1``
where ``g1`` is the discrete-harmonic fill-in of ``phi`` restricted to the
matrix and ``g0`` is supported strictly inside the inclusions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .material import dist_squared, nearest_rotation
from .mesh import MacroMesh, scalar_laplacian


class SplittingError(ValueError):
    pass


def _as_nodal(mesh, values):
    return np.asarray(values, dtype=float).reshape(mesh.n_nodes, -1)


def harmonic_extension(mesh: MacroMesh, values) -> np.ndarray:
    """Replace inclusion-interior values by the componentwise discrete-harmonic fill-in.

    Values at inclusion-interior nodes are ignored (they may be NaN); every other
    node must carry finite data.
    """
    v = _as_nodal(mesh, values).copy()
    given = np.ones(mesh.n_nodes, dtype=bool)
    given[mesh.inclusion_interior_nodes] = False
    if not np.all(np.isfinite(v[given])):
        raise SplittingError("extension needs finite data on every matrix and inclusion-boundary node")
    cell = mesh.cell
    nodes = mesh.cell_nodes[mesh.cell_is_interior]
    inner, bnd = nodes[:, cell.soft_interior], nodes[:, cell.soft_boundary]
    v[inner] = np.einsum("ib,cbk->cik", cell.soft_laplace_extension, v[bnd])
    return v


@dataclass
class Splitting:
    g0: np.ndarray
    g1: np.ndarray
    eps: float
    gamma: float

    def reconstruct(self) -> np.ndarray:
        return self.eps * self.g0 + self.eps ** self.gamma * self.g1


def split(phi, mesh: MacroMesh, check_clamp: bool = True) -> Splitting:
    v = _as_nodal(mesh, phi)
    if check_clamp and np.any(v[mesh.gamma_nodes] != 0):
        raise SplittingError("phi must vanish on the clamped boundary")
    eps, gamma = mesh.geom.eps, mesh.geom.gamma
    ext = harmonic_extension(mesh, v)
    g1 = eps ** (-gamma) * ext
    g0 = np.zeros_like(v)
    idx = mesh.inclusion_interior_nodes
    g0[idx] = (v[idx] - eps ** gamma * g1[idx]) / eps
    return Splitting(g0, g1, eps, gamma)


def inclusion_laplace_residual(mesh: MacroMesh, g1) -> float:
    """Max residual of the inclusion Laplacian applied to ``g1`` at interior nodes."""
    L = scalar_laplacian(mesh, mesh.soft)
    r = L @ _as_nodal(mesh, g1)
    return float(np.max(np.abs(r[mesh.inclusion_interior_nodes]), initial=0.0))


def extension_constants(mesh: MacroMesh, values) -> dict:
    """Measured constants in the L2, gradient and symmetric-gradient extension bounds."""
    ext = harmonic_extension(mesh, values)
    g = _as_nodal(mesh, values).copy()
    g[mesh.inclusion_interior_nodes] = 0.0
    stiff = ~mesh.soft
    grad_e, grad_g = mesh.gradients(ext), mesh.gradients(g)

    def sym_sq(G, w):
        S = 0.5 * (G + np.swapaxes(G, 1, 2))
        return float(np.einsum("e,eij,eij->", w, S, S))

    w_all, w_stiff = mesh.area, mesh.area * stiff
    out = {}
    num, den = mesh.l2_norm_sq(ext), mesh.l2_norm_sq(g, elements=stiff)
    out["l2"] = np.sqrt(num / den) if den > 0 else np.nan
    num, den = float(np.einsum("e,eij,eij->", w_all, grad_e, grad_e)), float(np.einsum("e,eij,eij->", w_stiff, grad_g, grad_g))
    out["grad"] = np.sqrt(num / den) if den > 0 else np.nan
    num, den = sym_sq(grad_e, w_all), sym_sq(grad_g, w_stiff)
    out["sym_grad"] = np.sqrt(num / den) if den > 0 else np.nan
    return out


def apriori_ratio(phi, model) -> float:
    """``(|g0|^2 + |eps grad g0|^2 + |g1|_H1^2) / Lambda_eps(phi)`` for the splitting of ``phi``."""
    mesh = model.mesh
    elastic = model.report(phi).elastic
    if elastic <= 0:
        raise SplittingError("ratio undefined for zero elastic energy")
    s = split(phi, mesh)
    eps = mesh.geom.eps
    num = (mesh.l2_norm_sq(s.g0) + eps ** 2 * mesh.grad_l2_norm_sq(s.g0)
           + mesh.l2_norm_sq(s.g1) + mesh.grad_l2_norm_sq(s.g1))
    return num / elastic


def high_contrast_poincare_ratio(u, mesh: MacroMesh) -> float:
    """``|u|_L2 / (|grad u|_matrix + eps |grad u|_inclusions)``."""
    v = _as_nodal(mesh, u)
    if np.any(v[mesh.gamma_nodes] != 0):
        raise SplittingError("u must vanish on the clamped boundary")
    den = np.sqrt(mesh.grad_l2_norm_sq(v, ~mesh.soft)) + mesh.geom.eps * np.sqrt(mesh.grad_l2_norm_sq(v, mesh.soft))
    if den == 0:
        raise SplittingError("denominator vanishes")
    return float(np.sqrt(mesh.l2_norm_sq(v)) / den)


@dataclass
class RigidityReport:
    best_rotation: np.ndarray
    ratio_full: float
    ratio_bc: float
    exactly_rigid: bool = False


def rigidity_report(v, mesh, region: str = "stiff", bc_mode: str = "free") -> RigidityReport:
    """Compare ``|grad v - R|^2`` with ``|dist(grad v, SO2)|^2`` over a region.

    ``v`` holds nodal deformation values.  ``R`` is the projection of the region
    average of ``grad v``; ``ratio_bc`` uses ``R = I`` (clamped to the identity),
    and is only computed when ``bc_mode = "identity-on-Gamma"``.
    """
    if region == "stiff":
        mask = ~mesh.soft
    elif region == "all":
        mask = np.ones(mesh.n_elements, dtype=bool)
    else:
        raise ValueError(f"unknown region {region!r}")
    if bc_mode not in ("free", "identity-on-Gamma"):
        raise ValueError(f"unknown bc_mode {bc_mode!r}")
    w = mesh.area * mask
    if w.sum() == 0:
        raise SplittingError("region has zero measure")
    F = mesh.gradients(v)
    R = nearest_rotation(np.einsum("e,eij->ij", w, F) / w.sum())
    den = float(w @ dist_squared(F))
    diff = F - R
    full = float(np.einsum("e,eij,eij->", w, diff, diff))
    diff_i = F - np.eye(2)
    bc = float(np.einsum("e,eij,eij->", w, diff_i, diff_i))
    if den <= 1e-28 * w.sum():
        return RigidityReport(R, np.nan, np.nan, exactly_rigid=True)
    return RigidityReport(R, full / den, bc / den if bc_mode == "identity-on-Gamma" else np.nan)
