"""Invariant suites behind ``hicon check``: fast, seeded, and independent of the sweep."""
from __future__ import annotations

import numpy as np

from .homogenize import effective_form
from .material import verify_class_membership
from .mesh import CellMesh, MacroMesh, scalar_laplacian
from .splitting import harmonic_extension, split
from .twoscale import unfold


def _random_field(mesh, rng, clamp=True):
    v = rng.normal(size=(mesh.n_nodes, 2))
    if clamp:
        v[mesh.gamma_nodes] = 0.0
    return v


def run_checks(cfg, seed: int | None = None) -> list[tuple[str, bool, str]]:
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    out = []
    W0, W1 = cfg.laws
    for label, law in (("W0", W0), ("W1", W1)):
        rep = verify_class_membership(law, 1000, seed)
        out.append((f"material {label} ({law.name}) class membership", rep.passed,
                    "all properties hold" if rep.passed else "failed: " + ", ".join(rep.failures())))

    cell = CellMesh(cfg.m, cfg.inclusion)
    eff = effective_form(W1.quad_form, cell)
    skew = np.array([[0.0, 1.0], [-1.0, 0.0]])
    val = float(abs(eff(skew)))
    out.append(("effective form annihilates skew matrices", val <= 1e-12, f"|Q_hom(skew)| = {val:.2e}"))
    F = rng.normal(size=(50, 2, 2))
    margin = float(np.min(cell.stiff_volume * W1.quad_form(F) - eff(F)))
    out.append(("effective form below |Y1| Q1", margin >= -1e-12, f"min margin {margin:.3e}"))
    mineig = eff.form.sym_min_eigenvalue()
    out.append(("effective form definite on symmetric matrices", mineig > 0, f"min eigenvalue {mineig:.4e}"))
    R = np.array([[0.0, -1.0], [1.0, 0.0]])
    sym = float(np.max(np.abs(eff.form.rotated(R).matrix - eff.form.matrix)))
    out.append(("effective tensor invariant under quarter turns", sym <= 1e-6, f"max deviation {sym:.2e}"))

    for eps in (cfg.eps_list[0], cfg.eps_list[-1]):
        mesh = MacroMesh(cfg.geometry(eps), cfg.m)
        u = _random_field(mesh, rng, clamp=False)
        iso = abs(unfold(mesh, u).norm() - np.sqrt(mesh.l2_norm_sq(u)))
        G = mesh.gradients(u)
        q = W1.quad_form
        direct = float(mesh.area @ q(G))
        ident = abs(unfold(mesh, G, "element").integrate(q) - direct) / max(1.0, direct)
        ok = iso <= 1e-12 * max(1.0, np.sqrt(mesh.l2_norm_sq(u))) and ident <= 1e-12
        out.append((f"unfolding isometry and integral identity (eps={eps})", ok, f"{iso:.1e}, relative {ident:.1e}"))

        phi, psi = _random_field(mesh, rng), _random_field(mesh, rng)
        s = split(phi, mesh)
        recon = float(np.max(np.abs(s.reconstruct() - phi)))
        a, b = rng.normal(size=2)
        sab, sp_ = split(a * phi + b * psi, mesh), split(psi, mesh)
        lin = float(max(np.max(np.abs(sab.g0 - a * s.g0 - b * sp_.g0)), np.max(np.abs(sab.g1 - a * s.g1 - b * sp_.g1))))
        s2 = split(s.reconstruct(), mesh)
        idem = float(max(np.max(np.abs(s2.g0 - s.g0)), np.max(np.abs(s2.g1 - s.g1))))
        ok = recon <= 1e-12 * max(1, np.abs(phi).max()) and lin <= 1e-10 and idem <= 1e-10
        out.append((f"splitting reconstruction, linearity, idempotence (eps={eps})", ok,
                    f"{recon:.1e}, {lin:.1e}, {idem:.1e}"))

    mesh = MacroMesh(cfg.geometry(cfg.eps_list[0]), cfg.m)
    ok, worst = dirichlet_competitor_test(mesh, rng)
    out.append(("harmonic extension beats 20 competitors on every inclusion", ok, f"smallest gain {worst:.3e}"))
    return out


def dirichlet_competitor_test(mesh: MacroMesh, rng, competitors: int = 20) -> tuple[bool, float]:
    """Compare inclusion Dirichlet energies of the extension against perturbed fields with the same trace."""
    g = _random_field(mesh, rng)
    ext = harmonic_extension(mesh, g)
    L = scalar_laplacian(mesh, mesh.soft)
    cell = mesh.cell
    worst = np.inf
    for nodes in mesh.cell_nodes[mesh.cell_is_interior]:
        inner = nodes[cell.soft_interior]
        # energy restricted to this inclusion: only its nodes are perturbed
        base = ext.copy()
        e0 = float(np.einsum("nc,nc->", base, L @ base))
        for _ in range(competitors):
            trial = base.copy()
            trial[inner] += rng.normal(size=(inner.size, 2))
            worst = min(worst, float(np.einsum("nc,nc->", trial, L @ trial)) - e0)
    return bool(worst >= -1e-12), float(worst)
