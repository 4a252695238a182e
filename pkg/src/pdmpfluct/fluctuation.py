"""Poisson equation, Green-Kubo variances and the CLT diffusion operator.

For a channel with fast generator ``B`` at frozen voltage, centred current
``d`` and quasi-stationary law ``mu``, the corrector ``phi`` solves
``B phi = -d`` with ``mu . phi = 0``.  Channels are conditionally
independent, so the diffusion operator is a sum of rank-one spatial terms
``weight^2 * s_i * w_i w_i^T`` with ``s_i = sum mu d phi``.

Two matrices are exposed: ``c`` is the operator with that normalisation,
and ``a = 2 * c`` is the covariance rate of the Gaussian fluctuation
(standard generator ``1/2 Tr D^2 psi a``).  Noise is always generated from
``a``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .kinetics import GeneratorMatrix, IrreducibilityError, QuasiStationary, stationary_vector
from .system import CableSystem


class ConsistencyError(ArithmeticError):
    """A quantity that is nonnegative by construction came out negative."""


class ConditioningError(ArithmeticError):
    """Spectral gap too small to integrate the semigroup reliably."""


def _arrays(gen, d, mu):
    q = gen.matrix if isinstance(gen, GeneratorMatrix) else np.asarray(gen, dtype=float)
    m = mu.probs if isinstance(mu, QuasiStationary) else np.asarray(mu, dtype=float)
    return q, np.asarray(d, dtype=float), m


def center(d, mu) -> np.ndarray:
    """Subtract the mu-mean so that ``mu . d = 0``."""
    d = np.asarray(d, dtype=float)
    mu = mu.probs if isinstance(mu, QuasiStationary) else np.asarray(mu, dtype=float)
    return d - np.sum(mu * d, axis=-1, keepdims=True)


def solve_phi_linear(gen, d, mu) -> np.ndarray:
    """``phi = -(mu^T mu + B^T B)^{-1} B^T d`` (batched over leading axes)."""
    q, d, m = _arrays(gen, d, mu)
    d = center(d, m)
    qt = np.swapaxes(q, -1, -2)
    a = m[..., :, None] * m[..., None, :] + qt @ q
    rhs = -(qt @ d[..., None])
    try:
        phi = np.linalg.solve(a, rhs)
        # one step of iterative refinement on the normal equations
        phi = phi + np.linalg.solve(a, rhs - a @ phi)
    except np.linalg.LinAlgError as exc:
        raise IrreducibilityError("augmented Poisson system is singular") from exc
    return phi[..., 0]


def solve_phi_integral(gen, d, mu=None, method: str = "eig", gap_tol: float = 1e-10) -> np.ndarray:
    """``phi = int_0^inf exp(B s) d ds`` for centred ``d``.

    ``method="eig"`` integrates mode by mode on the complement of the null
    space; ``method="quadrature"`` integrates the semigroup to a horizon set
    by the spectral gap (block matrix exponential) and reports the tail.
    """
    q = gen.matrix if isinstance(gen, GeneratorMatrix) else np.asarray(gen, dtype=float)
    d = np.asarray(d, dtype=float)
    if mu is None:
        mu = stationary_vector(q)
    d = center(d, mu)
    if not np.any(d):
        return np.zeros_like(d)
    vals, vecs = np.linalg.eig(q)
    zero = int(np.argmin(np.abs(vals)))
    nonzero = np.ones(vals.size, dtype=bool)
    nonzero[zero] = False
    gap = float(np.min(-vals[nonzero].real)) if vals.size > 1 else np.inf
    if gap < gap_tol:
        raise ConditioningError(f"spectral gap {gap:.3e} below {gap_tol}")
    if method == "eig" and np.linalg.cond(vecs) < 1e8:
        coef = np.linalg.solve(vecs, d.astype(complex))
        coef[zero] = 0.0
        coef[nonzero] = coef[nonzero] / (-vals[nonzero])
        return (vecs @ coef).real
    phi, _ = _integral_quadrature(q, d, gap)
    return phi


def _integral_quadrature(q: np.ndarray, d: np.ndarray, gap: float, tail_tol: float = 1e-16):
    m = q.shape[0]
    horizon = -math.log(tail_tol) / gap
    block = np.zeros((m + 1, m + 1))
    block[:m, :m] = q
    block[:m, m] = d
    # the (0..m, m) column of expm(horizon * block) is int_0^horizon exp(q s) d ds
    col = scipy.linalg.expm(horizon * block)[:m, m]
    tail = float(np.max(np.abs(d))) * tail_tol / gap
    return col, tail


def channel_variance(mu, d, phi, tol: float = 1e-12):
    """``s = sum_xi mu(xi) d(xi) phi(xi)``, nonnegative by Green-Kubo."""
    mu = mu.probs if isinstance(mu, QuasiStationary) else np.asarray(mu, dtype=float)
    s = np.sum(mu * center(d, mu) * np.asarray(phi, dtype=float), axis=-1)
    if np.any(s < -tol):
        raise ConsistencyError(f"negative channel variance {np.min(s):.3e}")
    return np.maximum(s, 0.0)


# -- per-class batched helpers ------------------------------------------


def class_statistics(model, y: np.ndarray, j: int, two_state_shortcut: bool = False):
    """Quasi-stationary law, centred current, corrector and variance for
    every voltage in ``y`` with channels sitting in class ``j``.

    With ``two_state_shortcut`` a two-state class uses the exact solution
    ``phi = d / (alpha + beta)`` (a centred vector is an eigenvector of the
    generator) instead of the linear solve.
    """
    y = np.asarray(y, dtype=float)
    members = model.members(j)
    q = model.rate_matrix(y)[..., members[:, None], members[None, :]].copy()
    idx = np.arange(members.size)
    q[..., idx, idx] = 0.0
    q[..., idx, idx] = -q.sum(axis=-1)
    mu = stationary_vector(q, check_rank=False)
    current = model.conductances[members] * (model.reversals[members] - y[..., None])
    mean = np.sum(mu * current, axis=-1)
    d = current - mean[..., None]
    if members.size == 1:
        phi = np.zeros_like(d)
    elif members.size == 2 and two_state_shortcut:
        phi = d / (q[..., 0, 1] + q[..., 1, 0])[..., None]
    else:
        phi = solve_phi_linear(q, d, mu)
    s = channel_variance(mu, d, phi)
    return mu, mean, d, phi, s


def channel_variances(system: CableSystem, coeffs: np.ndarray, classes) -> list[np.ndarray]:
    """Per-channel Green-Kubo variances ``s_i`` for every population."""
    out = []
    for pop, ys, cls in zip(system.populations, system.local_voltages(coeffs), classes):
        s = np.zeros(pop.n)
        for j in np.unique(cls):
            mask = cls == j
            s[mask] = class_statistics(pop.model, ys[mask], int(j))[4]
        out.append(s)
    return out


@dataclass(frozen=True)
class DiffusionOperator:
    a: np.ndarray
    factor: np.ndarray
    variances: np.ndarray

    @property
    def c(self) -> np.ndarray:
        return 0.5 * self.a

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.a)


def _factor_from_variances(system: CableSystem, variances) -> np.ndarray:
    cols = []
    for pop, w, s in zip(system.populations, system.pairings, variances):
        cols.append(w * (pop.weight * np.sqrt(2.0 * s))[None, :])
    if not cols:
        return np.zeros((system.basis.K, 0))
    return np.concatenate(cols, axis=1)


def diffusion_matrix(system: CableSystem, coeffs: np.ndarray, classes=None) -> DiffusionOperator:
    """``a = 2 sum_pop weight^2 sum_i s_i w_i w_i^T`` and its factor."""
    if classes is None:
        classes = system.initial_classes()
    s = channel_variances(system, np.asarray(coeffs, dtype=float), classes)
    m = _factor_from_variances(system, s)
    a = m @ m.T
    a = 0.5 * (a + a.T)
    return DiffusionOperator(a, m, np.concatenate(s) if s else np.zeros(0))


def psd_repair(a: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Clip eigenvalues in ``[-tol, 0)`` to zero; more negative is an error."""
    vals, vecs = np.linalg.eigh(0.5 * (a + a.T))
    if vals.min() < -tol:
        raise ConsistencyError(f"diffusion matrix has eigenvalue {vals.min():.3e}")
    vals = np.clip(vals, 0.0, None)
    return (vecs * vals) @ vecs.T


def noise_factor(op: DiffusionOperator) -> np.ndarray:
    """K x N factor with ``M M^T = a``; columns ``sqrt(2 s_i) weight w_i``."""
    return op.factor


def c_diagonal(system: CableSystem, coeffs: np.ndarray, classes=None) -> tuple[np.ndarray, float]:
    """Diagonal of ``c`` (the operator without the factor 2) in the f-basis, and a bound
    on every diagonal entry including modes beyond ``K``:
    ``sup_k ||f_k||_inf^2 * sum_i weight^2 s_i``."""
    if classes is None:
        classes = system.initial_classes()
    s = channel_variances(system, coeffs, classes)
    diag = np.zeros(system.basis.K)
    total = 0.0
    for pop, w, si in zip(system.populations, system.pairings, s):
        diag += (w**2) @ (pop.weight**2 * si)
        total += float(np.sum(pop.weight**2 * si))
    if system.basis.is_sine:
        fsup = 2.0
    else:
        fsup = float(np.max(system.basis.functions(np.linspace(0.0, 1.0, 1025)) ** 2))
    return diag, fsup * total


# -- trace of Q_t ---------------------------------------------------------


@dataclass(frozen=True)
class TraceSeries:
    times: np.ndarray
    trace: np.ndarray
    tail_bound: np.ndarray


def trace_q(times: np.ndarray, diag: np.ndarray, eigenvalues: np.ndarray, sup_diag=None, tail_sum=None) -> TraceSeries:
    """``Tr Q_t = sum_k int_0^t exp(-2 lambda_k (t-s)) C_kk(s) ds`` on a grid.

    ``C_kk`` is interpolated linearly between grid points and the
    exponential kernel is integrated exactly, so constant diagonals are
    reproduced to rounding.  ``sup_diag[n]`` bounds ``C_kk(t_n)`` for every
    mode (including k > K); with ``tail_sum = sum_{k>K} 1/lambda_k`` the
    truncation remainder is bounded by ``max sup_diag * tail_sum / 2``.
    """
    times = np.asarray(times, dtype=float)
    diag = np.asarray(diag, dtype=float)
    mu = 2.0 * np.asarray(eigenvalues, dtype=float)
    per_mode = np.zeros(mu.size)
    trace = np.zeros(times.size)
    for n in range(1, times.size):
        dt = times[n] - times[n - 1]
        x = mu * dt
        decay = np.exp(-x)
        a1 = -np.expm1(-x) / mu
        # int_0^dt exp(-mu (dt - s)) s/dt ds
        a2 = a1 - (-np.expm1(-x) - x * decay) / (mu * x)
        per_mode = decay * per_mode + diag[n - 1] * a1 + (diag[n] - diag[n - 1]) * a2
        trace[n] = per_mode.sum()
    if sup_diag is None or tail_sum is None:
        tail = np.zeros(times.size)
    else:
        running = np.maximum.accumulate(np.asarray(sup_diag, dtype=float))
        tail = 0.5 * running * tail_sum
    return TraceSeries(times, trace, tail)


def constant_trace(c: float, t: float, eigenvalues: np.ndarray) -> float:
    lam = np.asarray(eigenvalues, dtype=float)
    return float(np.sum(c * (-np.expm1(-2 * lam * t)) / (2 * lam)))


# -- frozen-voltage Green-Kubo simulation ---------------------------------


def additive_functional(
    q: np.ndarray,
    d: np.ndarray,
    t: float,
    eps: float,
    replicas: int,
    rng: np.random.Generator,
    mu: np.ndarray | None = None,
) -> np.ndarray:
    """Samples of ``eps^{-1/2} int_0^t d(r_s) ds`` for the chain with
    generator ``q / eps``, started from ``mu`` (vectorised over replicas)."""
    q = np.asarray(q, dtype=float)
    d = np.asarray(d, dtype=float)
    m = q.shape[0]
    if mu is None:
        mu = stationary_vector(q)
    state = rng.choice(m, size=replicas, p=mu)
    exit_rate = -np.diag(q) / eps
    jump = np.where(np.eye(m, dtype=bool), 0.0, q)
    rowsum = jump.sum(axis=1, keepdims=True)
    cum = np.cumsum(np.divide(jump, rowsum, out=np.zeros_like(jump), where=rowsum > 0), axis=1)
    clock = np.zeros(replicas)
    acc = np.zeros(replicas)
    active = np.ones(replicas, dtype=bool)
    while active.any():
        idx = np.flatnonzero(active)
        st = state[idx]
        rate = exit_rate[st]
        hold = np.full(idx.size, np.inf)
        live = rate > 0
        hold[live] = rng.standard_exponential(live.sum()) / rate[live]
        remaining = t - clock[idx]
        done = hold >= remaining
        stay = np.minimum(hold, remaining)
        acc[idx] += d[st] * stay
        clock[idx] += stay
        moving = ~done
        if moving.any():
            u = rng.random(moving.sum())
            rows = cum[st[moving]]
            state[idx[moving]] = np.minimum((u[:, None] > rows).sum(axis=1), m - 1)
        active[idx[done]] = False
    return acc / np.sqrt(eps)
