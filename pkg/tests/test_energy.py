from fractions import Fraction

import numpy as np
import pytest

from hicon.energy import (EnergyModel, EvaluationError, LoadSpec, PreconditionError, lambda_eps, minimize_total)
from hicon.families import inclusion_bump_field
from hicon.material import CustomLaw, DistSquaredLaw, QuadForm, dist_squared

from conftest import SWEEP, make_mesh, random_clamped

LAWS = (DistSquaredLaw(), DistSquaredLaw())


def test_lambda_from_prescribed_norms(mesh8):
    # |l| chosen so that ||l||_Omega = 1 and ||l||_soft = 0.4
    soft_area = mesh8.area[mesh8.soft].sum()
    a = np.sqrt(0.16 / soft_area)
    b = np.sqrt(0.84 / (1 - soft_area))
    vals = np.zeros((mesh8.n_elements, 2))
    vals[:, 0] = np.where(mesh8.soft, a, b)
    lam = lambda_eps(LoadSpec(), mesh8, vals)
    assert lam == pytest.approx(np.sqrt(1 / 8) + 0.4 / 8, rel=1e-12)
    assert lam == pytest.approx(0.4036, abs=1e-4)


def test_zero_load_rejected(mesh8):
    with pytest.raises(PreconditionError):
        lambda_eps(LoadSpec(amplitude=0.0), mesh8)


def test_finite_strain_constant_load_lambda():
    mesh = make_mesh(Fraction(1, 16), gamma=0.5)
    load = LoadSpec("finite-strain", "constant")
    expected = 1 + (1 / 16) ** 0.5 * np.sqrt(mesh.geom.soft_volume())
    assert lambda_eps(load, mesh) == pytest.approx(expected, rel=1e-12)


def test_finite_strain_needs_gamma_below_one():
    with pytest.raises(PreconditionError):
        LoadSpec("finite-strain").realize(make_mesh(Fraction(1, 4), gamma=1.0))


def test_small_strain_lambda_vanishes_along_sweep():
    lams = [lambda_eps(LoadSpec(), make_mesh(e)) for e in SWEEP]
    assert lams[0] > lams[1] > lams[2]


def test_unknown_profile_rejected():
    with pytest.raises(ValueError):
        LoadSpec(profile="gaussian")


def test_zero_field_has_zero_energy(mesh8):
    rep = EnergyModel(mesh8, *LAWS, LoadSpec()).report(np.zeros((mesh8.n_nodes, 2)))
    assert rep.elastic == 0.0 and rep.total == 0.0


def test_bump_energy_is_soft_only(mesh8):
    phi = inclusion_bump_field(mesh8, 1.0)
    rep = EnergyModel(mesh8, *LAWS, LoadSpec()).report(phi)
    assert rep.elastic_stiff == 0.0
    F = np.eye(2) + mesh8.gradients(phi)
    oracle = sum(mesh8.area[e] * float(dist_squared(F[e])) for e in range(mesh8.n_elements) if mesh8.soft[e])
    assert rep.elastic_soft == pytest.approx(oracle, rel=1e-12)
    assert rep.elastic_soft > 0


def test_rotation_field_violates_clamp(mesh8):
    a = 0.2
    R = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
    phi = mesh8.nodes @ (R - np.eye(2)).T
    with pytest.raises(PreconditionError):
        EnergyModel(mesh8, *LAWS).report(phi)
    left = make_mesh(Fraction(1, 8), gamma_boundary="left-edge")
    with pytest.raises(PreconditionError):
        EnergyModel(left, *LAWS).report(left.nodes @ (R - np.eye(2)).T)


def test_nan_density_reports_element(mesh4):
    bad = CustomLaw("nan", 1.0, QuadForm.sym_squared(), fn=lambda F: np.full(np.shape(F)[:-2], np.nan))
    with pytest.raises(EvaluationError) as info:
        EnergyModel(mesh4, bad, DistSquaredLaw()).report(np.zeros((mesh4.n_nodes, 2)))
    assert mesh4.soft[info.value.element]


def test_energy_lower_bound_by_distance(mesh8, rng):
    model = EnergyModel(mesh8, *LAWS)
    for _ in range(5):
        phi = 0.3 * random_clamped(mesh8, rng)
        rep = model.report(phi)
        d2 = dist_squared(np.eye(2) + mesh8.gradients(phi))
        bound = np.sum(mesh8.area * d2 * np.where(mesh8.soft, 1.0, model.contrast))
        assert rep.elastic >= bound - 1e-12 * bound
        assert rep.elastic_soft >= 0 and rep.elastic_stiff >= 0


def test_gradient_matches_finite_differences(mesh4, rng):
    model = EnergyModel(mesh4, *LAWS, LoadSpec())
    phi = 0.05 * random_clamped(mesh4, rng).ravel()
    _, g = model.total_and_grad(phi)
    d = random_clamped(mesh4, rng).ravel()
    t = 1e-6
    fd = (model.total_and_grad(phi + t * d)[0] - model.total_and_grad(phi - t * d)[0]) / (2 * t)
    assert g @ d == pytest.approx(fd, rel=1e-6)


def test_zero_load_minimizer_is_zero(mesh4):
    model = EnergyModel(mesh4, *LAWS)
    phi, rep, trace = minimize_total(None, LAWS, model=model)
    assert np.all(phi == 0) and rep.total == 0.0


def test_minimizer_stationary_with_monotone_trace():
    mesh = make_mesh(Fraction(1, 8))
    phi, rep, trace = minimize_total(LoadSpec(), LAWS, mesh=mesh)
    assert trace.converged
    assert np.all(np.diff(trace.energies) <= 1e-15 * max(1, abs(trace.energies[0])))
    assert rep.scaled_total <= 0.0
    assert np.all(phi.reshape(-1, 2)[mesh.gamma_nodes] == 0)


def test_tiny_load_matches_linearized_solve():
    mesh = make_mesh(Fraction(1, 8))
    model = EnergyModel(mesh, *LAWS, LoadSpec(amplitude=1e-3))
    phi, rep, _ = minimize_total(model.load, LAWS, model=model)
    _, lin = model.linearized_solution()
    assert abs(rep.total - lin) <= 1e-3 * abs(lin)


def test_finite_strain_scaled_total_nonpositive():
    mesh = make_mesh(Fraction(1, 4), gamma=0.5)
    phi, rep, trace = minimize_total(LoadSpec("finite-strain"), LAWS, mesh=mesh)
    assert rep.scaled_total <= 0.0
    assert len(trace.start_values) == 3
    assert rep.scaled_total == pytest.approx(min(trace.start_values), abs=1e-14)


def test_minimizer_is_deterministic():
    mesh = make_mesh(Fraction(1, 4), gamma=0.5)
    a = minimize_total(LoadSpec("finite-strain"), LAWS, mesh=mesh, seed=7)[0]
    b = minimize_total(LoadSpec("finite-strain"), LAWS, mesh=mesh, seed=7)[0]
    assert np.array_equal(a, b)


def test_minimizer_scales_like_lambda():
    ratios, energy = [], []
    for eps in SWEEP:
        mesh = make_mesh(eps)
        phi, rep, _ = minimize_total(LoadSpec(), LAWS, mesh=mesh)
        h1 = np.sqrt(mesh.l2_norm_sq(phi.reshape(-1, 2)) + mesh.grad_l2_norm_sq(phi.reshape(-1, 2)))
        ratios.append(h1 / rep.lambda_eps)
        energy.append(rep.elastic / rep.lambda_eps ** 2)
    assert max(ratios) / min(ratios) < 3
    assert max(energy) / min(energy) < 3
