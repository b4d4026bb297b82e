import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hicon.material import (CustomLaw, DistSquaredLaw, QuadForm, SoftLaw, StVenantLaw, builtin_dist_squared_law,
                            dist_squared, dist_to_rotations, law_from_name, nearest_rotation, verify_class_membership)

I = np.eye(2)
matrices = arrays(np.float64, (2, 2), elements=st.floats(-3, 3))


def rot(a):
    return np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])


def brute_force_dist(F, n=1_000_000):
    a = np.linspace(0, 2 * np.pi, n, endpoint=False)
    c, s = np.cos(a), np.sin(a)
    d2 = (F[0, 0] - c) ** 2 + (F[0, 1] + s) ** 2 + (F[1, 0] - s) ** 2 + (F[1, 1] - c) ** 2
    k = np.argmin(d2)
    return np.sqrt(d2[k]), a[k]


def test_reflection_distance_matches_angle_grid():
    d, R = dist_to_rotations(np.diag([1.0, -1.0]))
    ref, _ = brute_force_dist(np.diag([1.0, -1.0]))
    assert d == pytest.approx(2.0, abs=1e-12)
    assert ref == pytest.approx(2.0, abs=1e-9)
    assert np.allclose(R.T @ R, I) and np.linalg.det(R) == pytest.approx(1.0)
    assert np.sum((np.diag([1.0, -1.0]) - R) ** 2) == pytest.approx(4.0)


def test_dilation_distance():
    d, R = dist_to_rotations(2 * I)
    assert d == pytest.approx(np.sqrt(2), abs=1e-14)
    assert np.allclose(R, I)


def test_random_matrices_match_angle_grid(rng):
    for F in rng.uniform(-2, 2, size=(5, 2, 2)):
        d, R = dist_to_rotations(F)
        ref, _ = brute_force_dist(F, 200_000)
        assert d == pytest.approx(ref, abs=1e-8)
        assert np.sqrt(np.sum((F - R) ** 2)) == pytest.approx(d, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(matrices, st.floats(0, 2 * np.pi))
def test_distance_left_invariant_and_closed_form_agrees(F, a):
    d, R = dist_to_rotations(F)
    d_rot, _ = dist_to_rotations(rot(a) @ F)
    assert d_rot == pytest.approx(d, abs=1e-9)
    assert dist_squared(F) == pytest.approx(d ** 2, abs=1e-9)
    assert dist_squared(F) == pytest.approx(np.sum((F - nearest_rotation(F)) ** 2), abs=1e-9)


def test_rotation_projection_of_zero_is_identity():
    assert np.array_equal(nearest_rotation(np.zeros((2, 2))), I)


@pytest.mark.parametrize("t", [1e-2, 1e-3])
def test_simple_shear_expansion(t):
    # Q(e1 x e2) = |sym(e1 x e2)|^2 = 1/2
    law = builtin_dist_squared_law()
    E = np.array([[0.0, 1.0], [0.0, 0.0]])
    assert law.quad_form(E) == pytest.approx(0.5)
    d, _ = dist_to_rotations(I + t * E)
    assert abs(d ** 2 / t ** 2 - 0.5) <= 0.1 * t
    assert abs(law(I + t * E) / t ** 2 - 0.5) <= 0.1 * t


def test_identity_and_rotations_are_zero():
    law = builtin_dist_squared_law()
    assert law(I) == 0.0
    R = np.array([rot(a) for a in np.linspace(0, 6, 50)])
    assert np.max(np.abs(law(R))) <= 1e-13


def test_frame_indifference_thirty_degrees(rng):
    law = DistSquaredLaw()
    F = rng.normal(size=(100, 2, 2))
    assert np.max(np.abs(law(rot(np.pi / 6) @ F) - law(F))) <= 1e-12


@pytest.mark.parametrize("law", [DistSquaredLaw(), StVenantLaw()], ids=lambda l: l.name)
def test_shipped_laws_pass_membership(law):
    rep = verify_class_membership(law, 1000, 0)
    assert rep.passed, str(rep)


def test_non_frame_indifferent_law_fails():
    law = CustomLaw("bad", 1.0, QuadForm(np.einsum("ik,jl->ijkl", I, I) * 2), fn=lambda F: np.sum((F - I) ** 2, axis=(-1, -2)))
    rep = verify_class_membership(law, 200, 1)
    assert "frame_indifference" in rep.failures()


def test_zero_law_fails_non_degeneracy():
    law = CustomLaw("zero", 1.0, QuadForm.sym_squared(), fn=lambda F: np.zeros(np.shape(F)[:-2]))
    rep = verify_class_membership(law, 200, 1)
    assert "non_degeneracy" in rep.failures()


def test_membership_needs_enough_samples():
    with pytest.raises(ValueError):
        verify_class_membership(DistSquaredLaw(), 50)


@pytest.mark.parametrize("law", [DistSquaredLaw(), StVenantLaw()], ids=lambda l: l.name)
def test_quad_form_ignores_skew_part(law, rng):
    G = rng.normal(size=(100, 2, 2))
    S = 0.5 * (G + np.swapaxes(G, 1, 2))
    assert np.allclose(law.quad_form(G), law.quad_form(S), atol=1e-13)


@pytest.mark.parametrize("law", [DistSquaredLaw(), StVenantLaw()], ids=lambda l: l.name)
def test_gradient_against_central_differences(law, rng):
    F = rng.uniform(-2, 2, size=(40, 2, 2))
    F = F[np.abs(np.linalg.det(F)) > 0.1]
    E = rng.normal(size=F.shape)
    exact = np.einsum("nij,nij->n", law.gradient(F), E)
    errs = []
    for t in (1e-3, 1e-4):
        fd = (law(F + t * E) - law(F - t * E)) / (2 * t)
        errs.append(np.max(np.abs(fd - exact)))
        assert errs[-1] <= 50 * t ** 2 + 1e-8


def test_gradient_on_branch_cut_is_finite():
    G = DistSquaredLaw().gradient(np.diag([1.0, -1.0]))
    assert np.all(np.isfinite(G))


def test_st_venant_theta_is_admissible_and_one_eighth_is_not():
    # both laws are isotropic, so scanning signed singular values covers all F;
    # the worst case is diag(s, -s) with s near 0.64
    s1, s2 = np.meshgrid(np.linspace(0, 3, 601), np.linspace(0, 3, 601))
    worst = np.inf
    for sign in (1.0, -1.0):
        F = np.zeros(s1.shape + (2, 2))
        F[..., 0, 0], F[..., 1, 1] = s1, sign * s2
        d2 = dist_squared(F)
        keep = d2 > 1e-6
        worst = min(worst, float(np.min(StVenantLaw()(F)[keep] / d2[keep])))
    assert StVenantLaw().theta <= worst < 0.125


def test_soft_law_bounds_hold_for_dist_squared():
    res = SoftLaw(DistSquaredLaw()).check_bounds()
    assert all(ok for ok, _ in res.values()), res


def test_soft_law_upper_growth_fails_for_quartic_law():
    res = SoftLaw(StVenantLaw(), Theta=1.0).check_bounds()
    assert not res["upper_growth"][0]


def test_law_lookup():
    assert isinstance(law_from_name("dist-squared"), DistSquaredLaw)
    assert isinstance(law_from_name("st-venant"), StVenantLaw)
    with pytest.raises(ValueError):
        law_from_name("neo-hookean")


def test_isotropic_form_values():
    Q = QuadForm.isotropic(2.0, 3.0)
    F = np.array([[1.0, 2.0], [0.5, -1.0]])
    S = 0.5 * (F + F.T)
    assert Q(F) == pytest.approx(0.5 * (2.0 * np.trace(F) ** 2 + 2 * 3.0 * np.sum(S * S)))
    assert Q.major_asymmetry() == 0.0
    R = rot(0.3)
    assert np.allclose(Q.rotated(R).matrix, Q.matrix)
