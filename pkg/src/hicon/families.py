"""Fixed test fields and limit triples used by the sweeps and the acceptance suite."""
from __future__ import annotations

import numpy as np

from .mesh import CellMesh, MacroMesh
from .twoscale import TwoScaleLimit


def inclusion_bump(cell: CellMesh) -> np.ndarray:
    """Nonnegative scalar bump on the cell grid, zero off the inclusion interior."""
    y = cell.nodes - 0.5
    inc = cell.inclusion
    r = inc.half_width_or_radius
    if inc.kind == "centered-square":
        b = np.clip(1 - (y[:, 0] / r) ** 2, 0, None) * np.clip(1 - (y[:, 1] / r) ** 2, 0, None)
    else:
        b = np.clip(1 - (y ** 2).sum(axis=1) / r ** 2, 0, None)
    return b * cell.soft_interior


def _s(x):
    # exact zeros on the boundary, where sin(pi) would leave roundoff
    inside = np.all((x > 0) & (x < 1), axis=1)
    return np.where(inside, np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1]), 0.0)


def _grad_s(x):
    return np.pi * np.stack([np.cos(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1]),
                             np.sin(np.pi * x[:, 0]) * np.cos(np.pi * x[:, 1])], axis=1)


def centered_profile(x):
    """``sin^2`` hump supported in ``[1/4, 3/4]^2``, which interior cells cover for every eps <= 1/4."""
    def p(t):
        return np.where((t > 0.25) & (t < 0.75), np.sin(2 * np.pi * (t - 0.25)) ** 2, 0.0)
    return p(x[:, 0]) * p(x[:, 1])


def sine_limit(cell: CellMesh, psi_basis=None, g0_amplitude: float = 0.5, g1_amplitude: float = 0.05) -> TwoScaleLimit:
    """Analytic triple on the unit square.

    ``g1 = a1 s(x) (1, -1/2)`` with ``s = sin(pi x1) sin(pi x2)`` and
    ``g0 = a0 c(x) bump(y) (1, 1/2)`` with the centered profile ``c``; the
    corrector comes from ``psi_basis``.  With ``a0 = 1/2`` the inclusion strains
    are of order one, so the nonlinear soft energy is exercised.
    """
    d1 = g1_amplitude * np.array([1.0, -0.5])
    d0 = g0_amplitude * np.array([1.0, 0.5])
    bump = inclusion_bump(cell)

    def g1(x):
        x = np.atleast_2d(x)
        return _s(x)[:, None] * d1

    def g1_grad(x):
        x = np.atleast_2d(x)
        return d1[None, :, None] * _grad_s(x)[:, None, :]

    def g0(x):
        x = np.atleast_2d(x)
        return centered_profile(x)[:, None, None] * bump[None, :, None] * d0

    return TwoScaleLimit(cell, g1, g1_grad, g0 if g0_amplitude else None, psi_basis)


def macro_sine_field(mesh: MacroMesh, amplitude: float = 1.0) -> np.ndarray:
    x = mesh.nodes / np.asarray(mesh.geom.omega)
    return amplitude * _s(x)[:, None] * np.array([1.0, 0.5])


def inclusion_bump_field(mesh: MacroMesh, amplitude: float = 1.0) -> np.ndarray:
    """``amplitude * eps * bump({x/eps}) (1, 1/2)`` in every interior inclusion."""
    out = np.zeros((mesh.n_nodes, 2))
    bump = inclusion_bump(mesh.cell)
    nodes = mesh.cell_nodes[mesh.cell_is_interior]
    out[nodes] = mesh.eps * amplitude * bump[None, :, None] * np.array([1.0, 0.5])
    return out


def oscillating_inclusion_field(mesh: MacroMesh, amplitude: float = 1.0) -> np.ndarray:
    """Inclusion bumps modulated by ``sin(pi x1 / (2 eps))``: oscillation at scale 2 eps."""
    x1 = mesh.nodes[:, 0]
    return inclusion_bump_field(mesh, amplitude) * np.sin(np.pi * x1 / (2 * mesh.eps))[:, None]
