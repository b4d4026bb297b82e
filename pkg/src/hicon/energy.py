"""High-contrast energies at fixed period and their minimization.

The elastic energy is ``int W0(I + grad phi)`` over the inclusions plus
``eps^(-2 gamma) int W1(I + grad phi)`` over the matrix, the total energy
subtracts the load work, and everything is reported also in the rescaled form
``lambda_eps^(-2) (elastic - load)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse.linalg as spla

from .material import MaterialLaw
from .mesh import MacroMesh, assemble_quadratic, free_dofs, solve_spd
from .optim import lbfgs

log = logging.getLogger(__name__)

_I = np.eye(2)
REGIMES = ("small-strain", "finite-strain")


class PreconditionError(ValueError):
    pass


class EvaluationError(FloatingPointError):
    def __init__(self, element: int):
        super().__init__(f"stored energy is not finite on element {element}")
        self.element = element


def _sin_sin(x):
    return np.stack([np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1]), np.zeros(len(x))], axis=1)


def _sin_sin_mixed(x):
    s = np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])
    return np.stack([s, np.sin(2 * np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])], axis=1)


def _constant(x):
    return np.tile([1.0, 0.0], (len(x), 1))


PROFILES: dict[str, Callable] = {"sin-sin": _sin_sin, "sin-sin-mixed": _sin_sin_mixed, "constant": _constant}
SOFT_PROFILES: dict[str, Callable | None] = {
    "none": None,
    "uniform": lambda x, y: np.tile([1.0, 0.0], (len(x), 1)),
}


@dataclass(frozen=True)
class LoadSpec:
    """Load preset: ``l_eps = s(eps) * (f(x) + chi0 * h(x, {x/eps}))``.

    ``s = 1`` for the small-strain preset and ``s = eps^(-gamma)`` for the
    finite-strain one.  Profiles are evaluated on the unit square scaled to Omega.
    """

    regime: str = "small-strain"
    profile: str = "sin-sin"
    amplitude: float = 1.0
    soft_profile: str = "none"

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"unknown load regime {self.regime!r}")
        if self.profile not in PROFILES:
            raise ValueError(f"unknown load profile {self.profile!r}; known: {sorted(PROFILES)}")
        if self.soft_profile not in SOFT_PROFILES:
            raise ValueError(f"unknown soft profile {self.soft_profile!r}")

    def macro(self, x, omega=(1.0, 1.0)) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.amplitude * PROFILES[self.profile](x / np.asarray(omega))

    def soft(self, x, y, omega=(1.0, 1.0)) -> np.ndarray | None:
        h = SOFT_PROFILES[self.soft_profile]
        if h is None:
            return None
        return self.amplitude * h(np.atleast_2d(x) / np.asarray(omega), np.atleast_2d(y))

    def scale(self, geom) -> float:
        if self.regime == "small-strain":
            return 1.0
        if geom.gamma >= 1:
            raise PreconditionError("the finite-strain preset requires gamma < 1")
        return geom.eps ** (-geom.gamma)

    def realize(self, mesh: MacroMesh) -> np.ndarray:
        """Values of ``l_eps`` at element barycenters, shape (ne, 2)."""
        geom = mesh.geom
        xb = mesh.barycenters
        vals = self.macro(xb, geom.omega)
        if self.soft_profile != "none":
            y = xb / geom.eps - mesh.element_cell
            h = self.soft(xb, y, geom.omega)
            vals = vals + mesh.soft[:, None] * h
        return self.scale(geom) * vals


def lambda_eps(load: LoadSpec, mesh: MacroMesh, values: np.ndarray | None = None) -> float:
    """``eps^gamma ||l||_Omega + eps ||l||_{soft}`` with barycenter L2 norms."""
    l = load.realize(mesh) if values is None else values
    sq = np.einsum("ei,ei->e", l, l) * mesh.area
    full, soft = np.sqrt(sq.sum()), np.sqrt(sq[mesh.soft].sum())
    if full == 0.0:
        raise PreconditionError("loads must be nonzero in L2")
    g = mesh.geom
    return float(g.eps ** g.gamma * full + g.eps * soft)


@dataclass
class EnergyReport:
    elastic_soft: float
    elastic_stiff: float
    load: float
    lambda_eps: float

    @property
    def elastic(self) -> float:
        return self.elastic_soft + self.elastic_stiff

    @property
    def total(self) -> float:
        return self.elastic - self.load

    @property
    def scaled_total(self) -> float:
        return self.total / self.lambda_eps ** 2


@dataclass
class Trace:
    energies: list
    iterations: int
    converged: bool
    message: str
    grad_norm: float
    start_values: list = field(default_factory=list)

    @property
    def spread(self) -> float:
        return float(max(self.start_values) - min(self.start_values)) if self.start_values else 0.0


class EnergyModel:
    """Energy, gradient and linearization of the high-contrast problem on one mesh."""

    def __init__(self, mesh: MacroMesh, W0: MaterialLaw, W1: MaterialLaw, load: LoadSpec | None = None):
        self.mesh, self.W0, self.W1, self.load = mesh, W0, W1, load
        geom = mesh.geom
        self.contrast = geom.eps ** (-2 * geom.gamma)
        self.weights = np.where(mesh.soft, 1.0, self.contrast) * mesh.area
        if load is None:
            self.load_values = np.zeros((mesh.n_elements, 2))
            self.lam = 1.0
        else:
            self.load_values = load.realize(mesh)
            self.lam = lambda_eps(load, mesh, self.load_values)
        self.b = mesh.load_vector(self.load_values).ravel()
        self.constrained = mesh.constrained_dofs()
        self.free = free_dofs(mesh.n_dofs, self.constrained)

    def _densities(self, phi):
        F = _I + self.mesh.gradients(phi)
        soft = self.mesh.soft
        W = np.empty(self.mesh.n_elements)
        W[soft] = self.W0.evaluate(F[soft])
        W[~soft] = self.W1.evaluate(F[~soft])
        bad = np.flatnonzero(~np.isfinite(W))
        if bad.size:
            raise EvaluationError(int(bad[0]))
        return F, W

    def check_clamp(self, phi, tol: float = 1e-14):
        v = np.asarray(phi, dtype=float).ravel()[self.constrained]
        if v.size and np.max(np.abs(v)) > tol:
            raise PreconditionError("displacement must vanish on the clamped boundary")

    def report(self, phi) -> EnergyReport:
        self.check_clamp(phi)
        _, W = self._densities(phi)
        soft = self.mesh.soft
        return EnergyReport(
            elastic_soft=float(np.sum(self.mesh.area[soft] * W[soft])),
            elastic_stiff=float(self.contrast * np.sum(self.mesh.area[~soft] * W[~soft])),
            load=float(self.b @ np.asarray(phi, dtype=float).ravel()),
            lambda_eps=self.lam,
        )

    def total_and_grad(self, phi) -> tuple[float, np.ndarray]:
        F, W = self._densities(phi)
        soft = self.mesh.soft
        P = np.empty_like(F)
        P[soft] = self.W0.gradient(F[soft])
        P[~soft] = self.W1.gradient(F[~soft])
        phi = np.asarray(phi, dtype=float).ravel()
        val = float(self.weights @ W - self.b @ phi)
        grad = self.mesh.divergence_transpose(self.weights[:, None, None] * P) - self.b
        return val, grad

    def linear_operator(self):
        """``A`` with ``phi^T A phi`` the quadratic part of the energy at ``phi = 0``."""
        m = self.mesh
        return (assemble_quadratic(m, self.W0.quad_form, region=m.soft)
                + assemble_quadratic(m, self.W1.quad_form, region=~m.soft, weights=self.contrast))

    def linearized_solution(self) -> tuple[np.ndarray, float]:
        """Minimizer of ``phi^T A phi - b . phi`` and its value ``-b.phi/2``."""
        A = self.linear_operator()
        phi = solve_spd(2 * A, self.b, self.constrained)
        return phi, -0.5 * float(self.b @ phi)

    def preconditioner(self):
        K = (2 * self.linear_operator()).tocsc()[self.free][:, self.free]
        return spla.factorized(K.tocsc())


def smooth_perturbation(mesh: MacroMesh, rng: np.random.Generator, modes: int = 3) -> np.ndarray:
    """Random combination of low sine modes vanishing on the whole boundary."""
    x = mesh.nodes / np.asarray(mesh.geom.omega)
    out = np.zeros((mesh.n_nodes, 2))
    for k in range(1, modes + 1):
        for l in range(1, modes + 1):
            c = rng.normal(size=2) / (k * l)
            out += np.outer(np.sin(k * np.pi * x[:, 0]) * np.sin(l * np.pi * x[:, 1]), c)
    return out.ravel()


def minimize_total(load: LoadSpec, laws, geom=None, init=None, *, mesh: MacroMesh | None = None, m: int = 8,
                   tol: float = 1e-8, maxiter: int = 5000, multistart: int | None = None, seed: int = 0,
                   perturbation: float = 0.1, model: EnergyModel | None = None):
    """Minimize ``Lambda_eps(phi) - int l_eps . phi`` over clamped P1 fields.

    Returns ``(phi, report, trace)``.  In the finite-strain regime the default is
    three starts: ``init`` itself and two copies perturbed by seeded smooth fields
    of size ``perturbation * lambda_eps``.  The best result is returned, so the
    result never ends above the value at ``init``.
    """
    if model is None:
        mesh = mesh if mesh is not None else MacroMesh(geom, m)
        model = EnergyModel(mesh, laws[0], laws[1], load)
    mesh = model.mesh
    x0 = np.zeros(mesh.n_dofs) if init is None else np.asarray(init, dtype=float).ravel().copy()
    model.check_clamp(x0)
    if multistart is None:
        multistart = 3 if load is not None and load.regime == "finite-strain" else 1
    free = model.free
    solve = model.preconditioner()
    gtol = tol * (1.0 + float(np.linalg.norm(model.b)))

    def fg(xf):
        full = np.zeros(mesh.n_dofs)
        full[free] = xf
        val, grad = model.total_and_grad(full)
        return val, grad[free]

    rng = np.random.default_rng(seed)
    best = None
    values = []
    for k in range(multistart):
        start = x0.copy()
        if k > 0:
            start += perturbation * model.lam * smooth_perturbation(mesh, rng)
            start[model.constrained] = 0.0
        res = lbfgs(fg, start[free], precond=solve, gtol=gtol, maxiter=maxiter)
        values.append(res.fun / model.lam ** 2)
        log.debug("start %d: %s after %d iterations, f=%.17g", k, res.message, res.iterations, res.fun)
        if best is None or res.fun < best.fun:
            best = res
    phi = np.zeros(mesh.n_dofs)
    phi[free] = best.x
    report = model.report(phi)
    trace = Trace([v / model.lam ** 2 for v in best.trace], best.iterations, best.converged, best.message,
                  best.grad_norm, values if multistart > 1 else [])
    return phi, report, trace
