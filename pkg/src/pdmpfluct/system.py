"""Cable system description shared by the simulators."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kinetics import ChannelModel
from .spectral import SpectralBasis, dirac_vector, mollifier_matrix


# half-width keeping mollifiers of neighbouring sites i/51 disjoint and inside (0, 1)
DEFAULT_KAPPA = 0.009


def regular_positions(n: int) -> np.ndarray:
    """Channel sites ``z_i = i / (n + 1)``, ``i = 1..n``."""
    return np.arange(1, n + 1) / (n + 1.0)


@dataclass(frozen=True)
class Population:
    """``n`` identical channels; ``weight`` multiplies their summed current."""

    model: ChannelModel
    positions: np.ndarray
    weight: float
    initial_state: int = 0

    def __post_init__(self):
        z = np.atleast_1d(np.asarray(self.positions, dtype=float))
        if np.any(z <= 0) or np.any(z >= 1):
            raise ValueError("channel positions must lie in (0, 1)")
        object.__setattr__(self, "positions", z)

    @property
    def n(self) -> int:
        return self.positions.size


@dataclass(frozen=True)
class CableSystem:
    """Linear cable ``du/dt = A u + sum_pop weight * currents + stimulus``.

    ``stimulus`` holds f-basis coefficients of the constant source.  With
    ``pointlike=False`` channels couple through mollifiers of width ``kappa``.
    """

    basis: SpectralBasis
    populations: tuple[Population, ...] = ()
    stimulus: np.ndarray | None = None
    u0: np.ndarray | None = None
    pointlike: bool = True
    kappa: float = DEFAULT_KAPPA
    pairings: tuple[np.ndarray, ...] = field(init=False, repr=False)

    def __post_init__(self):
        K = self.basis.K
        stim = np.zeros(K) if self.stimulus is None else np.asarray(self.stimulus, dtype=float)
        u0 = np.zeros(K) if self.u0 is None else np.asarray(self.u0, dtype=float)
        if stim.shape != (K,) or u0.shape != (K,):
            raise ValueError("stimulus and u0 need K coefficients")
        pairs = []
        for pop in self.populations:
            if pop.n == 0:
                pairs.append(np.zeros((K, 0)))
            elif self.pointlike:
                pairs.append(np.ascontiguousarray(dirac_vector(self.basis, pop.positions)))
            else:
                pairs.append(np.ascontiguousarray(mollifier_matrix(self.basis, pop.positions, self.kappa)))
        object.__setattr__(self, "populations", tuple(self.populations))
        object.__setattr__(self, "stimulus", stim)
        object.__setattr__(self, "u0", u0)
        object.__setattr__(self, "pairings", tuple(pairs))

    @property
    def n_channels(self) -> int:
        return sum(p.n for p in self.populations)

    def replace(self, **changes) -> "CableSystem":
        kw = dict(
            basis=self.basis,
            populations=self.populations,
            stimulus=self.stimulus,
            u0=self.u0,
            pointlike=self.pointlike,
            kappa=self.kappa,
        )
        kw.update(changes)
        return CableSystem(**kw)

    def local_voltages(self, coeffs: np.ndarray) -> list[np.ndarray]:
        """``u(z_i)`` (pointlike) or ``(u, phi_{z_i})`` per population."""
        return [coeffs @ w for w in self.pairings]

    def initial_states(self) -> list[np.ndarray]:
        return [np.full(p.n, p.initial_state, dtype=np.int64) for p in self.populations]

    def initial_classes(self) -> list[np.ndarray]:
        return [np.full(p.n, p.model.classes[p.initial_state], dtype=np.int64) for p in self.populations]

    def a_priori_bound(self) -> float:
        """Run-level constant for ``sup_t ||u_t||_H``.

        Every mode obeys ``|c_k(t)| <= max(|c_k(0)|, G_k / lambda_k)`` where
        ``G_k`` bounds the k-th forcing coefficient, assuming the local
        voltage stays within ``U = max|v| + sup|u0| + sup`` of the stimulus
        response.
        """
        lam = self.basis.eigenvalues
        fmax = np.sqrt(2.0) if self.basis.is_sine else float(np.max(np.abs(self.basis.functions(np.linspace(0, 1, 257)))))
        vmax = max((float(np.max(np.abs(p.model.reversals))) for p in self.populations), default=0.0)
        u0sup = float(np.sum(np.abs(self.u0))) * fmax
        stim_sup = float(np.sum(np.abs(self.stimulus) / lam)) * fmax
        U = vmax + u0sup + stim_sup
        G = np.abs(self.stimulus).copy()
        for pop, w in zip(self.populations, self.pairings):
            cmax = float(np.max(pop.model.conductances))
            G += abs(pop.weight) * cmax * (vmax + U) * np.sum(np.abs(w), axis=1)
        mode_bound = np.maximum(np.abs(self.u0), G / lam)
        return float(np.sqrt(np.sum(self.basis.h_weights * mode_bound**2)))
