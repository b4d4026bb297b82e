"""Reference geometry of the composite: domain, clamped boundary, lattice, inclusions."""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np


class GeometryError(ValueError):
    pass


SOFT = "soft"
STIFF = "stiff"

# compact containment is checked against this margin
_CONTAINMENT_TOL = 1e-12


@dataclass(frozen=True)
class InclusionShape:
    kind: str = "centered-square"
    half_width_or_radius: float = 0.25

    def __post_init__(self):
        if self.kind not in ("centered-square", "centered-disk"):
            raise GeometryError(f"unknown inclusion kind {self.kind!r}")
        r = self.half_width_or_radius
        if not (0.0 < r < 0.5 - _CONTAINMENT_TOL):
            raise GeometryError("inclusion must be compactly contained in the unit cell")

    def contains(self, y: np.ndarray) -> np.ndarray:
        """Membership of cell coordinates ``y`` (shape (..., 2)) in the open set Y0."""
        y = np.asarray(y, dtype=float)
        d = y - 0.5
        r = self.half_width_or_radius
        if self.kind == "centered-square":
            return np.all(np.abs(d) < r, axis=-1)
        return np.sum(d * d, axis=-1) < r * r

    @property
    def volume(self) -> float:
        r = self.half_width_or_radius
        if self.kind == "centered-square":
            return (2 * r) ** 2
        return np.pi * r * r


@dataclass(frozen=True)
class CompositeGeometry:
    """Rectangle ``[0, L1] x [0, L2]`` tiled by cells of size ``epsilon``.

    Cells whose closure touches the outer boundary carry no inclusion.
    """

    epsilon: Fraction = Fraction(1, 4)
    gamma_exponent: float = 0.5
    inclusion: InclusionShape = field(default_factory=InclusionShape)
    omega: tuple[float, float] = (1.0, 1.0)
    gamma_boundary: str = "full-boundary"
    dim: int = 2

    def __post_init__(self):
        eps = Fraction(self.epsilon)
        object.__setattr__(self, "epsilon", eps)
        if eps <= 0 or eps.numerator != 1:
            raise GeometryError("epsilon must be of the form 1/n")
        if self.dim != 2:
            raise GeometryError("only d = 2 is implemented")
        if not self.gamma_exponent > 0:
            raise GeometryError("contrast exponent gamma must be positive")
        if self.gamma_boundary not in ("full-boundary", "left-edge"):
            raise GeometryError(f"unknown boundary selector {self.gamma_boundary!r}")
        for length in self.omega:
            n = Fraction(length).limit_denominator(10**6) / eps
            if n.denominator != 1 or n <= 0:
                raise GeometryError("epsilon must divide the side lengths of omega")

    @property
    def eps(self) -> float:
        return float(self.epsilon)

    @property
    def gamma(self) -> float:
        return float(self.gamma_exponent)

    @property
    def n_cells(self) -> tuple[int, int]:
        return tuple(int(round(L / self.eps)) for L in self.omega)

    def is_interior_cell(self, xi) -> np.ndarray:
        xi = np.asarray(xi)
        n1, n2 = self.n_cells
        return (xi[..., 0] >= 1) & (xi[..., 0] <= n1 - 2) & (xi[..., 1] >= 1) & (xi[..., 1] <= n2 - 2)

    def soft_volume(self) -> float:
        return len(interior_cells(self)) * self.eps**2 * self.inclusion.volume


def interior_cells(geom: CompositeGeometry) -> list[tuple[int, int]]:
    """Lattice indices of cells with closure inside the open domain, lexicographic."""
    n1, n2 = geom.n_cells
    return [(i, j) for i in range(1, n1 - 1) for j in range(1, n2 - 1)]


def classify_points(geom: CompositeGeometry, x) -> np.ndarray:
    """Vectorized soft indicator chi0 for points of shape (..., 2)."""
    x = np.asarray(x, dtype=float)
    L = np.asarray(geom.omega)
    tol = 1e-12
    if np.any(x < -tol) or np.any(x > L + tol):
        raise GeometryError("point outside the closure of omega")
    s = x / geom.eps
    xi = np.floor(s).astype(int)
    y = s - xi
    return geom.is_interior_cell(xi) & geom.inclusion.contains(y)


def classify_point(geom: CompositeGeometry, x) -> str:
    return SOFT if bool(classify_points(geom, np.asarray(x, dtype=float))) else STIFF
