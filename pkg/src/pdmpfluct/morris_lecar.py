"""Spatially extended stochastic Morris-Lecar cable.

Two-state potassium (fast) and calcium (slow) channel populations on a
fibre of length ``length`` mapped onto [0, 1].  Only the diffusion
coefficient is rescaled, ``a / (2 R C length^2)``; currents and the
stimulus keep their unit-domain form.

The potassium gate uses the classical Morris-Lecar split
``alpha = lam cosh(x/2) (1 + tanh x) / 2``, ``beta = lam cosh(x/2) (1 - tanh x) / 2``
with ``x = (v - v3) / v4``.  The gate parameters are configurable
defaults, not fitted values.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .fluctuation import DiffusionOperator
from .kinetics import V_RANGE, ChannelModel, RateForm, two_state_model
from .spectral import SpectralBasis
from .system import DEFAULT_KAPPA, CableSystem, Population, regular_positions


@dataclass(frozen=True)
class MLParameters:
    C: float = 1.0
    c_K: float = 32.0
    v_K: float = -70.0
    c_Ca: float = 0.0
    v_Ca: float = 0.0
    a: float = 1.0
    R: float = 0.5
    N_K: int = 50
    N_Ca: int = 0
    length: float = 0.5
    T: float = 2.4
    stimulus: float = 300.0
    stimulus_end: float = 0.1
    # potassium gate
    v3: float = -20.0
    v4: float = 30.0
    lam: float = 1.0
    # calcium gate (unused while c_Ca = 0)
    ca_v1: float = -1.2
    ca_v2: float = 18.0
    ca_lam: float = 1.0
    rate_floor: float = 1e-4
    v_min: float = V_RANGE[0]
    v_max: float = V_RANGE[1]

    def __post_init__(self):
        if self.c_K < 0 or self.c_Ca < 0:
            raise ValueError("conductances must be nonnegative")
        if self.N_K < 1 or self.N_Ca < 0:
            raise ValueError("need N_K >= 1 and N_Ca >= 0")
        if not 0 < self.stimulus_end <= 1:
            raise ValueError("stimulus support must lie inside the fibre")
        if self.C <= 0 or self.R <= 0 or self.a <= 0 or self.length <= 0:
            raise ValueError("C, R, a and length must be positive")

    @property
    def diffusivity(self) -> float:
        return self.a / (2.0 * self.R * self.C * self.length**2)

    def as_dict(self) -> dict:
        return asdict(self)


def potassium_rates(p: MLParameters) -> tuple[RateForm, RateForm]:
    rng = (p.v_min, p.v_max)
    alpha = RateForm("ml_open", (p.v3, p.v4, p.lam), floor=p.rate_floor, v_range=rng)
    beta = RateForm("ml_close", (p.v3, p.v4, p.lam), floor=p.rate_floor, v_range=rng)
    return alpha, beta


def calcium_rates(p: MLParameters) -> tuple[RateForm, RateForm]:
    rng = (p.v_min, p.v_max)
    alpha = RateForm("ml_open", (p.ca_v1, p.ca_v2, p.ca_lam), floor=p.rate_floor, v_range=rng)
    beta = RateForm("ml_close", (p.ca_v1, p.ca_v2, p.ca_lam), floor=p.rate_floor, v_range=rng)
    return alpha, beta


def potassium_model(p: MLParameters) -> ChannelModel:
    alpha, beta = potassium_rates(p)
    return two_state_model(alpha, beta, p.c_K, p.v_K, fast=True, name="K", v_range=(p.v_min, p.v_max))


def calcium_model(p: MLParameters) -> ChannelModel:
    alpha, beta = calcium_rates(p)
    return two_state_model(alpha, beta, p.c_Ca, p.v_Ca, fast=False, name="Ca", v_range=(p.v_min, p.v_max))


def stimulus_coeffs(basis: SpectralBasis, amplitude: float, end: float) -> np.ndarray:
    """f-basis coefficients of ``amplitude * 1_[0, end]``."""
    kpi = np.pi * basis.modes
    return amplitude * np.sqrt(2.0) * (1.0 - np.cos(kpi * end)) / kpi


def ml_system(p: MLParameters | None = None, K: int = 64, pointlike: bool = True, kappa: float = DEFAULT_KAPPA) -> CableSystem:
    p = p or MLParameters()
    basis = SpectralBasis(K=K, diffusivity=p.diffusivity)
    pops = [Population(potassium_model(p), regular_positions(p.N_K), 1.0 / (p.C * p.N_K))]
    if p.N_Ca > 0:
        pops.append(Population(calcium_model(p), regular_positions(p.N_Ca), 1.0 / (p.C * p.N_Ca)))
    stim = stimulus_coeffs(basis, p.stimulus / p.C, p.stimulus_end)
    return CableSystem(basis, tuple(pops), stim, None, pointlike, kappa)


def ml_model(p: MLParameters | None = None, K: int = 64) -> tuple[ChannelModel, CableSystem]:
    p = p or MLParameters()
    return potassium_model(p), ml_system(p, K)


# -- closed forms -----------------------------------------------------------


def open_probability(p: MLParameters, y):
    alpha, beta = potassium_rates(p)
    a, b = alpha(y), beta(y)
    return a / (a + b)


def ml_phi_closed_form(p: MLParameters, y, r) -> np.ndarray:
    """Per-channel corrector value at state ``r`` (0 closed, 1 open):
    ``c_K (v_K - y) / (C (alpha + beta)) * (1_{r=1} - alpha / (alpha + beta))``.
    The spatial factor ``delta_{z_i} / N_K`` is left out."""
    alpha, beta = potassium_rates(p)
    y = np.asarray(y, dtype=float)
    a, b = alpha(y), beta(y)
    return p.c_K / p.C * (p.v_K - y) / (a + b) * ((np.asarray(r) == 1) - a / (a + b))


def ml_variance_closed_form(p: MLParameters, y):
    """``c_K^2 (v_K - y)^2 alpha beta / (alpha + beta)^3 / C^2``."""
    alpha, beta = potassium_rates(p)
    y = np.asarray(y, dtype=float)
    a, b = alpha(y), beta(y)
    return (p.c_K / p.C) ** 2 * (p.v_K - y) ** 2 * a * b / (a + b) ** 3


def ml_diffusion_closed_form(p: MLParameters, system: CableSystem, coeffs: np.ndarray) -> DiffusionOperator:
    """Potassium diffusion operator assembled directly from the closed form
    ``(1/N^2) sum_i c^2 (v - u(z_i))^2 alpha beta/(alpha+beta)^3 <delta_i, .><delta_i, .>``.
    ``c`` carries exactly this matrix, ``a`` twice it."""
    w = system.pairings[0]
    y = coeffs @ w
    s = ml_variance_closed_form(p, y)
    c = (w * (s / p.N_K**2)[None, :]) @ w.T
    factor = w * (np.sqrt(2.0 * s) / p.N_K)[None, :]
    return DiffusionOperator(2.0 * c, factor, s)


def gate_factor_sup(p: MLParameters, step: float = 0.01) -> float:
    """``sup_y alpha beta / (alpha + beta)^3`` over the operating range."""
    alpha, beta = potassium_rates(p)
    y = np.arange(p.v_min, p.v_max + step, step)
    a, b = alpha(y), beta(y)
    return float(np.max(a * b / (a + b) ** 3))


def ml_trace_bound(p: MLParameters, basis: SpectralBasis, sup_h_norm: float) -> float:
    """``(c_K/C)^2 (|v_K| + sup||u||_H)^2 sup(alpha beta/(alpha+beta)^3) sum_k 2/lambda_k``.

    For unit diffusivity the series equals 1/3.
    """
    return (p.c_K / p.C) ** 2 * (abs(p.v_K) + sup_h_norm) ** 2 * gate_factor_sup(p) * 2.0 * basis.inverse_eigen_sum()
