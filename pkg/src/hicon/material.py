"""Stored-energy densities, their quadratic forms at the identity, and class checks.

All densities act on batches of 2x2 deformation gradients, shape ``(..., 2, 2)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

_I = np.eye(2)


def _rotation(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


class QuadForm:
    """Rank-4 tensor ``C`` with ``Q(G) = 1/2 sum C_ijkl G_ij G_kl``."""

    def __init__(self, tensor):
        C = np.asarray(tensor, dtype=float).reshape(2, 2, 2, 2)
        self.tensor = C

    @classmethod
    def isotropic(cls, lam: float, mu: float) -> "QuadForm":
        d = _I
        C = lam * np.einsum("ij,kl->ijkl", d, d) + mu * (np.einsum("ik,jl->ijkl", d, d) + np.einsum("il,jk->ijkl", d, d))
        return cls(C)

    @classmethod
    def sym_squared(cls) -> "QuadForm":
        """``Q(G) = |sym G|^2``."""
        return cls.isotropic(0.0, 1.0)

    @property
    def matrix(self) -> np.ndarray:
        return self.tensor.reshape(4, 4)

    def __call__(self, G) -> np.ndarray:
        G = np.asarray(G, dtype=float)
        return 0.5 * np.einsum("...ij,ijkl,...kl->...", G, self.tensor, G)

    def bilinear(self, E, F) -> np.ndarray:
        return 0.5 * np.einsum("...ij,ijkl,...kl->...", np.asarray(E, float), self.tensor, np.asarray(F, float))

    def stress(self, G) -> np.ndarray:
        """Derivative ``DQ(G) = C : G`` (symmetrized over the major pair)."""
        Cs = 0.5 * (self.matrix + self.matrix.T)
        G = np.asarray(G, dtype=float)
        return (G.reshape(*G.shape[:-2], 4) @ Cs.T).reshape(G.shape)

    def major_asymmetry(self) -> float:
        M = self.matrix
        return float(np.max(np.abs(M - M.T)))

    def sym_min_eigenvalue(self) -> float:
        """Smallest eigenvalue of ``Q`` on symmetric matrices (orthonormal basis)."""
        r = 1 / np.sqrt(2)
        basis = [np.array([[1.0, 0], [0, 0]]), np.array([[0, 0], [0, 1.0]]), np.array([[0, r], [r, 0]])]
        M = np.array([[2 * self.bilinear(a, b) for b in basis] for a in basis])
        return float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])

    def rotated(self, R) -> "QuadForm":
        """Tensor of ``G -> Q(R^T G R)``."""
        R = np.asarray(R, dtype=float)
        return QuadForm(np.einsum("ai,bj,ck,dl,ijkl->abcd", R, R, R, R, self.tensor))

    def __repr__(self):
        return f"QuadForm({np.array2string(self.matrix, precision=6)})"


def nearest_rotation(M) -> np.ndarray:
    """Projection of 2x2 matrices onto SO(2); ``M = 0`` resolves to the identity."""
    M = np.asarray(M, dtype=float)
    p = M[..., 0, 0] + M[..., 1, 1]
    q = M[..., 1, 0] - M[..., 0, 1]
    r = np.hypot(p, q)
    safe = np.where(r > 0, r, 1.0)
    c = np.where(r > 0, p / safe, 1.0)
    s = np.where(r > 0, q / safe, 0.0)
    n = np.hypot(c, s)  # hypot rounds badly on subnormal input
    c, s = c / n, s / n
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


def dist_to_rotations(F):
    """Distance of ``F`` to SO(2) and a nearest rotation, via singular values."""
    F = np.asarray(F, dtype=float)
    U, sig, Vt = np.linalg.svd(F)
    det = np.linalg.det(F)
    flip = det < 0
    s2 = np.where(flip, -1.0, 1.0)
    d2 = (sig[..., 0] - 1) ** 2 + (sig[..., 1] - s2) ** 2
    D = np.zeros(F.shape)
    D[..., 0, 0] = 1.0
    D[..., 1, 1] = np.linalg.det(U) * np.linalg.det(Vt)
    R = U @ D @ Vt
    # for det F = 0 or repeated singular values with flip, the SVD branch is arbitrary:
    # fall back to the closed form so that ties resolve deterministically
    tie = np.isclose(sig[..., 0] + s2 * sig[..., 1], 0.0, atol=1e-14)
    if np.any(tie):
        R = np.where(tie[..., None, None], nearest_rotation(F), R)
    return np.sqrt(d2), R


def dist_squared(F) -> np.ndarray:
    """``|F - R(F)|^2`` with the closed-form projection; equals ``|F|^2 + 2 - 2 |(tr F, F21 - F12)|``
    but avoids the cancellation of that expression near SO(2)."""
    F = np.asarray(F, dtype=float)
    D = F - nearest_rotation(F)
    return np.einsum("...ij,...ij->...", D, D)


def central_difference_gradient(fn: Callable, F, t: float = 1e-6) -> np.ndarray:
    F = np.asarray(F, dtype=float)
    out = np.empty(F.shape)
    for i in range(2):
        for j in range(2):
            E = np.zeros((2, 2))
            E[i, j] = t
            out[..., i, j] = (fn(F + E) - fn(F - E)) / (2 * t)
    return out


@dataclass(frozen=True)
class MaterialLaw:
    """A frame-indifferent density with ``W(I) = 0``.

    Subclasses supply ``evaluate`` and ``gradient`` for batches of matrices.
    """

    name: str
    theta: float
    quad_form: QuadForm = field(repr=False)
    kind: str = "custom"

    def evaluate(self, F) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, F) -> np.ndarray:
        return central_difference_gradient(self.evaluate, F)

    def __call__(self, F):
        return self.evaluate(F)


@dataclass(frozen=True)
class DistSquaredLaw(MaterialLaw):
    name: str = "dist2"
    theta: float = 1.0
    quad_form: QuadForm = field(default_factory=QuadForm.sym_squared, repr=False)
    kind: str = "dist-squared"

    def evaluate(self, F):
        return dist_squared(F)

    def gradient(self, F):
        F = np.asarray(F, dtype=float)
        G = 2.0 * (F - nearest_rotation(F))
        r = np.hypot(F[..., 0, 0] + F[..., 1, 1], F[..., 1, 0] - F[..., 0, 1])
        branch = r < 1e-12
        if np.any(branch):
            G[branch] = central_difference_gradient(self.evaluate, F[branch])
        return G


@dataclass(frozen=True)
class StVenantLaw(MaterialLaw):
    """``1/4 |F^T F - I|^2 + (min(det F, 0))^2``.

    The bare Green-strain energy vanishes on reflections, so a compression
    penalty on inverted elements is added to keep the law non-degenerate.
    """

    name: str = "st-venant"
    theta: float = 0.1
    quad_form: QuadForm = field(default_factory=QuadForm.sym_squared, repr=False)
    kind: str = "st-venant"

    def evaluate(self, F):
        F = np.asarray(F, dtype=float)
        E = np.swapaxes(F, -1, -2) @ F - _I
        det = np.linalg.det(F)
        return 0.25 * np.einsum("...ij,...ij->...", E, E) + np.minimum(det, 0.0) ** 2

    def gradient(self, F):
        F = np.asarray(F, dtype=float)
        E = np.swapaxes(F, -1, -2) @ F - _I
        det = np.linalg.det(F)
        cof = np.empty(F.shape)
        cof[..., 0, 0] = F[..., 1, 1]
        cof[..., 0, 1] = -F[..., 1, 0]
        cof[..., 1, 0] = -F[..., 0, 1]
        cof[..., 1, 1] = F[..., 0, 0]
        return F @ E + 2.0 * np.minimum(det, 0.0)[..., None, None] * cof


@dataclass(frozen=True)
class CustomLaw(MaterialLaw):
    """Law from user callables; the gradient defaults to central differences."""

    fn: Callable = field(default=None, repr=False)
    grad_fn: Callable | None = field(default=None, repr=False)

    def evaluate(self, F):
        return np.asarray(self.fn(np.asarray(F, dtype=float)), dtype=float)

    def gradient(self, F):
        if self.grad_fn is not None:
            return np.asarray(self.grad_fn(np.asarray(F, dtype=float)), dtype=float)
        return central_difference_gradient(self.evaluate, F)


def builtin_dist_squared_law() -> DistSquaredLaw:
    return DistSquaredLaw()


def law_from_name(name: str) -> MaterialLaw:
    laws = {"dist2": DistSquaredLaw, "dist-squared": DistSquaredLaw, "st-venant": StVenantLaw}
    try:
        return laws[name]()
    except KeyError:
        raise ValueError(f"unknown material law {name!r}; known: {sorted(laws)}") from None


@dataclass(frozen=True)
class SoftLaw:
    """Soft-phase law with growth constant ``Theta`` for the finite-strain regime."""

    law: MaterialLaw
    Theta: float = 4.0

    def check_bounds(self, samples: int = 500, seed: int = 0, radius: float = 10.0) -> dict:
        rng = np.random.default_rng(seed)
        F = _ball_samples(rng, samples, radius)
        G = _ball_samples(rng, samples, radius)
        W = self.law.evaluate(F)
        nF, nG = _frob(F), _frob(G)
        lower = W - self.law.theta * dist_squared(F)
        upper = self.Theta * (1 + nF ** 2) - W
        lip = self.Theta * (1 + nF + nG) * nG - np.abs(self.law.evaluate(F + G) - W)
        margins = {"lower_growth": lower.min(), "upper_growth": upper.min(), "lipschitz": lip.min()}
        return {k: (bool(v >= -1e-12), float(v)) for k, v in margins.items()}


def _frob(F):
    return np.sqrt(np.einsum("...ij,...ij->...", F, F))


def _ball_samples(rng, n, radius):
    F = rng.normal(size=(n, 2, 2))
    F /= _frob(F)[:, None, None]
    return F * radius * rng.uniform(0, 1, size=(n, 1, 1))


@dataclass
class MembershipReport:
    results: dict

    @property
    def passed(self) -> bool:
        return all(ok for ok, _ in self.results.values())

    def failures(self) -> list[str]:
        return [k for k, (ok, _) in self.results.items() if not ok]

    def __str__(self):
        return "\n".join(f"{k:>22}: {'pass' if ok else 'FAIL'} (margin {m:.3e})" for k, (ok, m) in self.results.items())


def verify_class_membership(law: MaterialLaw, samples: int = 1000, seed: int = 0) -> MembershipReport:
    """Sample-based check of the class properties; margins are worst cases (>= 0 is a pass)."""
    if samples < 100:
        raise ValueError("need at least 100 samples")
    rng = np.random.default_rng(seed)
    F = rng.uniform(-2, 2, size=(samples, 2, 2))
    R = _rotation(rng.uniform(0, 2 * np.pi, size=samples))
    W = law.evaluate(F)
    res = {}

    w_id = float(abs(law.evaluate(_I)))
    res["identity_zero"] = (w_id <= 1e-14, 1e-14 - w_id)
    res["nonnegative"] = (bool(W.min() >= 0), float(W.min()))

    scale = np.maximum(np.abs(W), 1.0)
    frame = np.max(np.abs(law.evaluate(R @ F) - W) / scale)
    res["frame_indifference"] = (frame <= 1e-10, 1e-10 - float(frame))

    # include 2I and reflections, where degenerate candidates tend to fail
    extra = np.array([2 * _I, np.diag([1.0, -1.0]), np.zeros((2, 2)), np.diag([0.64, -0.64])])
    Fn = np.concatenate([F, extra])
    nd = law.evaluate(Fn) - law.theta * dist_squared(Fn)
    res["non_degeneracy"] = (bool(nd.min() >= -1e-12), float(nd.min()))

    G = rng.normal(size=(min(samples, 200), 2, 2))
    Q = law.quad_form(G)
    worst = 0.0
    for t in (1e-2, 1e-3):
        err = np.abs(law.evaluate(_I + t * G) / t ** 2 - Q) / (1 + _frob(G) ** 3)
        worst = max(worst, float(err.max() / t))
    # |W(I+tG)/t^2 - Q(G)| <= c t with c bounded by a cubic-growth constant
    res["quadratic_expansion"] = (worst <= 10.0, 10.0 - worst)

    skew = G - np.swapaxes(G, -1, -2)
    sk = float(np.max(np.abs(law.quad_form(skew))))
    res["quad_form_skew_null"] = (sk <= 1e-12, 1e-12 - sk)
    mineig = law.quad_form.sym_min_eigenvalue()
    res["quad_form_sym_definite"] = (mineig > 0, mineig)
    return MembershipReport(res)
