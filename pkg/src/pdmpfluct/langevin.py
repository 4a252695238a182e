"""Langevin approximation: averaged dynamics plus ``sqrt(eps)`` channel noise.

Channels couple to the cable through mollifiers.  The reaction is the
class-averaged current, the noise is ``sqrt(eps) M dW`` with ``M`` the
factored ``K x N`` diffusion operator (``M M^T = a``), and the aggregated
classes still switch by thinning.  Integration is exponential
Euler-Maruyama with the exact Ornstein-Uhlenbeck variance per mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fluctuation import class_statistics
from .kinetics import class_stationary
from .pdmp import SNAP, BlowUpError, HybridState, Trajectory, _phi1, output_grid, reduced_terms, run_reduced
from .seeding import NOISE_LANE, check_seed, replica_streams, stream
from .spectral import SupportError
from .system import DEFAULT_KAPPA, CableSystem


@dataclass(frozen=True)
class LangevinConfig:
    eps: float
    h: float = 1e-4
    kappa: float = DEFAULT_KAPPA
    K: int = 64
    T: float = 2.4
    seed: int = 0
    output_dt: float = 0.01

    def __post_init__(self):
        # eps = 0 is accepted as the degenerate averaged run
        if not 0 <= self.eps <= 1:
            raise ValueError("eps must lie in [0, 1]")
        if self.h <= 0 or self.T <= 0 or self.output_dt <= 0:
            raise ValueError("h, T and output_dt must be positive")
        if self.kappa <= 0:
            raise ValueError("mollifier width must be positive")
        if self.K < 1:
            raise ValueError("need at least one mode")
        object.__setattr__(self, "seed", check_seed(self.seed))


def mollified(system: CableSystem, kappa: float) -> CableSystem:
    """Copy of ``system`` with channels coupled through width-``kappa`` mollifiers."""
    for pop in system.populations:
        z = pop.positions
        if pop.n and (np.min(z) - kappa <= 0 or np.max(z) + kappa >= 1):
            raise SupportError(f"mollifier support of width {kappa} leaves (0, 1)")
    return system.replace(pointlike=False, kappa=kappa)


def _require_mollified(system: CableSystem):
    if system.pointlike:
        raise ValueError("Langevin dynamics need a mollified system; see mollified()")


def mollified_reaction(coeffs: np.ndarray, classes, system: CableSystem) -> np.ndarray:
    """f-basis coefficients of the class-averaged reaction plus stimulus."""
    _require_mollified(system)
    return reduced_terms(system, classes, np.asarray(coeffs, dtype=float), False).drift


def em_step(system: CableSystem, state: HybridState, h: float, eps: float, rng: np.random.Generator) -> HybridState:
    """One exponential Euler-Maruyama step; ``state.states`` holds class labels.

    With ``eps == 0`` no random numbers are drawn.
    """
    if h <= 0:
        raise ValueError("step must be positive")
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    _require_mollified(system)
    lam = system.basis.eigenvalues
    terms = reduced_terms(system, state.states, state.coeffs, eps > 0)
    c = np.exp(-lam * h) * state.coeffs + _phi1(lam, h) * terms.drift
    if eps > 0:
        eta = rng.standard_normal(terms.factor.shape[1])
        c = c + math.sqrt(eps) * (terms.factor @ eta) * np.sqrt(-np.expm1(-2 * lam * h) / (2 * lam))
    return HybridState(state.t + h, c, [s.copy() for s in state.states])


def simulate_langevin(
    config: LangevinConfig,
    system: CableSystem,
    rng: np.random.Generator | None = None,
    noise_rng: np.random.Generator | None = None,
    replica: int = 0,
) -> Trajectory:
    """One Langevin path.  ``system`` is mollified with ``config.kappa`` if
    it is pointlike.  Streams default to replica ``replica`` of ``config.seed``."""
    if system.basis.K != config.K:
        raise ValueError(f"system has {system.basis.K} modes, config asks for {config.K}")
    if system.pointlike or system.kappa != config.kappa:
        system = mollified(system, config.kappa)
    jr, nr = replica_streams(config.seed, replica)
    rng = jr if rng is None else rng
    noise_rng = nr if noise_rng is None else noise_rng
    return run_reduced(
        system,
        config.T,
        rng,
        output_dt=config.output_dt,
        h_max=config.h,
        eps=config.eps,
        noise_rng=noise_rng,
        seed=(config.seed, replica),
    )


def switching_free(system: CableSystem) -> bool:
    """True when every channel model has a single class, so the averaged
    and Langevin dynamics have no jumps."""
    return all(p.model.n_classes == 1 for p in system.populations)


def langevin_ensemble(
    config: LangevinConfig,
    system: CableSystem,
    replicas: int,
    first_replica: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Coefficient paths of ``replicas`` Langevin runs advanced together.

    Only for switching-free systems.  Replica ``r`` draws its noise from the
    same stream as ``simulate_langevin(..., replica=first_replica + r)`` and
    takes the same steps, so the two agree up to rounding.  Returns
    ``(times, coeffs)`` with ``coeffs`` of shape ``(replicas, n_out, K)``.
    """
    if not switching_free(system):
        raise ValueError("batched ensemble needs a system without class switching")
    if replicas < 1:
        raise ValueError("need at least one replica")
    if system.basis.K != config.K:
        raise ValueError(f"system has {system.basis.K} modes, config asks for {config.K}")
    if system.pointlike or system.kappa != config.kappa:
        system = mollified(system, config.kappa)
    lam = system.basis.eigenvalues
    times = output_grid(config.T, config.output_dt)
    noise = [stream(config.seed, first_replica + r, NOISE_LANE) for r in range(replicas)]
    with_noise = config.eps > 0
    root = math.sqrt(config.eps)
    bound = system.a_priori_bound()
    hw = system.basis.h_weights

    c = np.tile(system.u0, (replicas, 1))
    out = np.zeros((replicas, times.size, system.basis.K))
    out[:, 0] = c

    def terms(c):
        g = np.tile(system.stimulus, (replicas, 1))
        cols = []
        for pop, w in zip(system.populations, system.pairings):
            y = c @ w
            if with_noise:
                _, mean, _, _, s = class_statistics(pop.model, y, 0, two_state_shortcut=True)
                cols.append((pop.weight * np.sqrt(2.0 * s), w))
            else:
                members = pop.model.members(0)
                mu = class_stationary(pop.model, y, 0)
                mean = np.sum(mu * pop.model.conductances[members] * (pop.model.reversals[members] - y[..., None]), axis=-1)
            g += (pop.weight * mean) @ w.T
        return g, cols

    t = 0.0
    io = 1
    cache_h = None
    decay = phi1 = ou = None
    drift, cols = terms(c)
    while io < times.size:
        target = times[io]
        t_next = target if t + config.h >= target - SNAP * config.h else t + config.h
        h = t_next - t
        if h > 0:
            if h != cache_h:
                cache_h = h
                decay = np.exp(-lam * h)
                phi1 = _phi1(lam, h)
                ou = np.sqrt(-np.expm1(-2 * lam * h) / (2 * lam))
            c = decay * c + phi1 * drift
            if with_noise:
                n_total = sum(w.shape[1] for _, w in cols)
                eta = np.stack([g.standard_normal(n_total) for g in noise])
                inc = np.zeros_like(c)
                start = 0
                for amp, w in cols:
                    n = w.shape[1]
                    inc += (amp * eta[:, start:start + n]) @ w.T
                    start += n
                c = c + root * inc * ou
        t = t_next
        if t == target:
            out[:, io] = c
            nrm = np.sqrt(np.sum(hw * c**2, axis=1))
            if np.any(nrm > 10 * bound):
                raise BlowUpError(f"||u||_H exceeded 10x the a-priori bound {bound:.4g} at t={t:.6g}")
            io += 1
        drift, cols = terms(c)
    return times, out
