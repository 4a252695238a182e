"""Sine eigenbasis of the Dirichlet Laplacian on [0, 1] and friends.

Fields are stored as coefficient vectors in the L2-normalised basis
``f_k(x) = sqrt(2) sin(k pi x)``.  The H^1_0-normalised basis
``e_k = f_k / sqrt(1 + (k pi)^2)`` is available through explicit
conversions; all H-norm diagnostics go through it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

SQRT2 = np.sqrt(2.0)


class DomainError(ValueError):
    """Argument outside the domain of an operation."""


class SupportError(ValueError):
    """Mollifier support not contained in (0, 1)."""


def _sine_functions(k: np.ndarray, x: np.ndarray) -> np.ndarray:
    return SQRT2 * np.sin(np.pi * np.outer(k, x))


@dataclass(frozen=True)
class SpectralBasis:
    """Truncated eigenbasis of a diagonal operator ``A e_k = -lambda_k e_k``.

    By default ``lambda_k = diffusivity * (k pi)^2`` with sine eigenfunctions.
    Any strictly increasing positive sequence can be passed through
    ``eigenvalues`` together with an L2-normalised ``eigenfunction(k, x)``
    evaluator that is bounded uniformly in k.
    """

    K: int = 64
    diffusivity: float = 1.0
    eigenvalues: np.ndarray | None = None
    eigenfunction: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    modes: np.ndarray = field(init=False, repr=False)
    h_weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("mode count must be positive")
        modes = np.arange(1, self.K + 1)
        if self.eigenvalues is None:
            if self.diffusivity <= 0:
                raise ValueError("diffusivity must be positive")
            lam = self.diffusivity * (np.pi * modes) ** 2
        else:
            lam = np.asarray(self.eigenvalues, dtype=float)
            if lam.shape != (self.K,):
                raise ValueError("need exactly K eigenvalues")
        if lam[0] <= 0 or np.any(np.diff(lam) <= 0):
            raise ValueError("eigenvalues must be positive and strictly increasing")
        lam = lam.copy()
        lam.flags.writeable = False
        hw = 1.0 + (np.pi * modes) ** 2
        hw.flags.writeable = False
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "h_weights", hw)

    @property
    def is_sine(self) -> bool:
        return self.eigenfunction is None

    def functions(self, x) -> np.ndarray:
        """Matrix ``F[k-1, j] = f_k(x_j)``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.eigenfunction is None:
            return _sine_functions(self.modes, x)
        return np.asarray(self.eigenfunction(self.modes, x), dtype=float).reshape(self.K, x.size)

    def e_functions(self, x) -> np.ndarray:
        return self.functions(x) / np.sqrt(self.h_weights)[:, None]

    def to_e(self, coeffs: np.ndarray) -> np.ndarray:
        """f-basis coefficients -> e-basis coefficients (H inner products)."""
        return np.asarray(coeffs) * np.sqrt(self.h_weights)

    def from_e(self, coeffs: np.ndarray) -> np.ndarray:
        return np.asarray(coeffs) / np.sqrt(self.h_weights)

    def inverse_eigen_sum(self) -> float:
        """``sum_{k>=1} 1/lambda_k`` (exact for the sine family, else truncated)."""
        if self.eigenfunction is None and np.allclose(
            self.eigenvalues, self.diffusivity * (np.pi * self.modes) ** 2, rtol=1e-14
        ):
            return 1.0 / (6.0 * self.diffusivity)
        return float(np.sum(1.0 / self.eigenvalues))

    def inverse_eigen_tail(self) -> float:
        """Upper bound on ``sum_{k>K} 1/lambda_k`` for the sine family."""
        # sum_{k>K} 1/k^2 <= 1/K
        return 1.0 / (self.diffusivity * np.pi**2 * self.K)


@dataclass(frozen=True)
class SpectralField:
    coefficients: np.ndarray
    basis: SpectralBasis

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float)
        if c.shape != (self.basis.K,):
            raise ValueError(f"expected {self.basis.K} coefficients, got shape {c.shape}")
        object.__setattr__(self, "coefficients", c)

    def __call__(self, x):
        return eval_field(self, x)

    def l2_norm(self) -> float:
        return float(np.linalg.norm(self.coefficients))

    def h_norm(self) -> float:
        return float(np.linalg.norm(self.basis.to_e(self.coefficients)))

    @classmethod
    def zeros(cls, basis: SpectralBasis) -> "SpectralField":
        return cls(np.zeros(basis.K), basis)

    @classmethod
    def from_function(cls, fn, basis: SpectralBasis, nodes: int = 4096) -> "SpectralField":
        """Project ``fn`` onto the basis with Gauss-Legendre quadrature."""
        x, w = np.polynomial.legendre.leggauss(nodes)
        x = 0.5 * (x + 1.0)
        w = 0.5 * w
        coeffs = basis.functions(x) @ (w * fn(x))
        return cls(coeffs, basis)


def eval_field(u: SpectralField, x):
    """Evaluate ``sum_k c_k f_k(x)``; ``x`` may be scalar or array in [0, 1]."""
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0.0) or np.any(xa > 1.0):
        raise DomainError(f"x must lie in [0, 1], got {x!r}")
    vals = u.coefficients @ u.basis.functions(xa.ravel())
    if xa.ndim == 0:
        return float(vals[0])
    return vals.reshape(xa.shape)


class DiracPairing(NamedTuple):
    value: float
    convention: str


def dirac_pairing(x: float, k: int, basis: SpectralBasis | None = None, convention: str = "e") -> DiracPairing:
    """Pairing of the point evaluation at ``x`` with basis function ``k``.

    ``convention="e"`` gives ``<delta_x, e_k> = (1 + (k pi)^2) e_k(x)``;
    ``convention="f"`` gives ``f_k(x)``.
    """
    if not 0.0 < x < 1.0:
        raise DomainError("x must lie in (0, 1)")
    basis = basis or SpectralBasis(K=max(k, 1))
    if not 1 <= k <= basis.K:
        raise DomainError(f"mode index {k} outside 1..{basis.K}")
    fk = float(basis.functions([x])[k - 1, 0])
    if convention == "f":
        return DiracPairing(fk, "f")
    if convention == "e":
        return DiracPairing(float(np.sqrt(basis.h_weights[k - 1])) * fk, "e")
    raise ValueError(f"unknown convention {convention!r}")


def dirac_vector(basis: SpectralBasis, x) -> np.ndarray:
    """Columns ``(f_k(x_i))_k`` for each point: the f-basis pairing of delta_x."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x <= 0.0) or np.any(x >= 1.0):
        raise DomainError("Dirac points must lie in (0, 1)")
    return basis.functions(x)


def semigroup_apply(u: SpectralField, t: float) -> SpectralField:
    if t < 0:
        raise DomainError("semigroup time must be nonnegative")
    return SpectralField(np.exp(-u.basis.eigenvalues * t) * u.coefficients, u.basis)


# -- mollifier -----------------------------------------------------------

def bump(x):
    """``M(x) = exp(-1/(1-x^2))`` on (-1, 1), zero elsewhere."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - x[inside] ** 2))
    return out


def _gauss_panels(a: float, b: float, panels: int, order: int = 20):
    g, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    x = (mid[:, None] + half[:, None] * g[None, :]).ravel()
    wt = (half[:, None] * w[None, :]).ravel()
    return x, wt


def _adaptive_gauss(integrand, a: float, b: float, tol: float = 1e-12, max_panels: int = 4096):
    panels = 4
    x, w = _gauss_panels(a, b, panels)
    prev = integrand(x) @ w
    while panels < max_panels:
        panels *= 2
        x, w = _gauss_panels(a, b, panels)
        cur = integrand(x) @ w
        if np.max(np.abs(cur - prev)) <= tol:
            return cur
        prev = cur
    raise RuntimeError("mollifier quadrature did not reach tolerance")


_BUMP_MASS: float | None = None


def bump_mass() -> float:
    """``int_{-1}^{1} M(x) dx``."""
    global _BUMP_MASS
    if _BUMP_MASS is None:
        _BUMP_MASS = float(_adaptive_gauss(bump, -1.0, 1.0))
    return _BUMP_MASS


def mollifier_pairings(z: float, kappa: float, basis: SpectralBasis, normalized: bool = True) -> np.ndarray:
    """``((phi_z, f_k)_{L2})_{k<=K}`` to absolute tolerance 1e-12.

    With ``normalized=True`` the bump is divided by its mass so that
    ``phi_z`` tends to the Dirac mass at ``z`` as ``kappa -> 0``.
    """
    if kappa <= 0 or z - kappa <= 0.0 or z + kappa >= 1.0:
        raise SupportError(f"support [{z - kappa}, {z + kappa}] not inside (0, 1)")
    scale = 1.0 / kappa
    if normalized:
        scale /= bump_mass()

    def integrand(x):
        return basis.functions(x) * (scale * bump((x - z) / kappa))[None, :]

    return _adaptive_gauss(integrand, z - kappa, z + kappa)


@dataclass(frozen=True)
class Mollifier:
    z: float
    kappa: float
    basis: SpectralBasis
    normalized: bool = True
    pairings: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        p = mollifier_pairings(self.z, self.kappa, self.basis, self.normalized)
        p.flags.writeable = False
        object.__setattr__(self, "pairings", p)

    def __call__(self, x):
        scale = 1.0 / self.kappa
        if self.normalized:
            scale /= bump_mass()
        return scale * bump((np.asarray(x, dtype=float) - self.z) / self.kappa)

    def mass(self) -> float:
        return float(_adaptive_gauss(self, self.z - self.kappa, self.z + self.kappa))


def mollifier_matrix(basis: SpectralBasis, positions, kappa: float, normalized: bool = True) -> np.ndarray:
    """Columns of mollifier pairings, one per position (shape ``(K, N)``)."""
    positions = np.atleast_1d(np.asarray(positions, dtype=float))
    cols = [mollifier_pairings(z, kappa, basis, normalized) for z in positions]
    if not cols:
        return np.zeros((basis.K, 0))
    return np.stack(cols, axis=1)
