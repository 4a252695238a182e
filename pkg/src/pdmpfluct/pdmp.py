"""Exact simulation of the slow-fast PDMP and of its averaged limit.

The voltage is a truncated sine series advanced by exponential Euler
between jumps; channel jump times are sampled by thinning.  The full
two-timescale process runs in a compiled kernel (see ``_kernel``); the
averaged process shares a numpy engine with the Langevin simulator.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from . import _kernel
from .fluctuation import class_statistics
from .kinetics import class_stationary
from .spectral import SpectralField
from ._kernel import SNAP
from .system import CableSystem


class MajorantError(RuntimeError):
    """A true jump rate exceeded the thinning majorant."""


class BlowUpError(RuntimeError):
    """``||u||_H`` exceeded ten times the a-priori bound."""


@dataclass
class HybridState:
    t: float
    coeffs: np.ndarray
    states: list[np.ndarray]

    def field(self, system: CableSystem) -> SpectralField:
        return SpectralField(self.coeffs, system.basis)

    def copy(self) -> "HybridState":
        return HybridState(self.t, self.coeffs.copy(), [s.copy() for s in self.states])


@dataclass
class Trajectory:
    times: np.ndarray
    coeffs: np.ndarray
    fractions: np.ndarray
    fraction_labels: list[str]
    njumps: np.ndarray
    jumps: np.ndarray
    seed: tuple = ()
    h_norm_max: float = 0.0
    h_norm_bound: float = math.inf
    noise_energy: np.ndarray | None = None
    final_states: list[np.ndarray] = field(default_factory=list)

    def values(self, system: CableSystem, x) -> np.ndarray:
        """``u(t_n, x_j)`` for every output time and probe."""
        return self.coeffs @ system.basis.functions(np.asarray(x, dtype=float))

    def l2_norms(self) -> np.ndarray:
        return np.linalg.norm(self.coeffs, axis=1)

    def h_norms(self, system: CableSystem) -> np.ndarray:
        return np.sqrt(self.coeffs**2 @ system.basis.h_weights)

    def to_csv(self, path, system: CableSystem, probes) -> None:
        probes = np.asarray(probes, dtype=float)
        vals = self.values(system, probes)
        header = ["t"] + [f"u@{x:g}" for x in probes] + self.fraction_labels + ["njumps_cum"]
        if self.noise_energy is not None:
            header.append("noise_energy")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for n, t in enumerate(self.times):
                row = [repr(float(t))] + [repr(float(v)) for v in vals[n]]
                row += [repr(float(f)) for f in self.fractions[n]]
                row.append(str(int(self.njumps[n])))
                if self.noise_energy is not None:
                    row.append(repr(float(self.noise_energy[n])))
                w.writerow(row)


JUMP_DTYPE = np.dtype([("t", float), ("population", np.int64), ("channel", np.int64), ("source", np.int64), ("target", np.int64)])


def sup_l2_distance(a: Trajectory, b: Trajectory) -> float:
    """``sup_n ||u_a(t_n) - u_b(t_n)||_{L2}`` on a shared output grid."""
    if a.times.shape != b.times.shape or not np.allclose(a.times, b.times):
        raise ValueError("trajectories live on different output grids")
    return float(np.max(np.linalg.norm(a.coeffs - b.coeffs, axis=1)))


def output_grid(T: float, dt: float) -> np.ndarray:
    n = int(round(T / dt))
    if not math.isclose(n * dt, T, rel_tol=1e-9):
        raise ValueError("horizon must be a multiple of the output step")
    return np.linspace(0.0, T, n + 1)


# -- reaction terms -------------------------------------------------------


def reaction_coeffs(system: CableSystem, states, coeffs: np.ndarray) -> np.ndarray:
    """f-basis coefficients of ``sum_pop weight sum_i c(v - u(z_i)) w_i`` plus the stimulus."""
    g = system.stimulus.copy()
    for pop, w, y, st in zip(system.populations, system.pairings, system.local_voltages(coeffs), states):
        amp = pop.weight * pop.model.conductances[st] * (pop.model.reversals[st] - y)
        g += w @ amp
    return g


def averaged_reaction(system: CableSystem, classes, coeffs: np.ndarray) -> np.ndarray:
    """Reaction with each channel's current averaged over its class's quasi-stationary law."""
    g = system.stimulus.copy()
    for pop, w, y, cls in zip(system.populations, system.pairings, system.local_voltages(coeffs), classes):
        amp = np.zeros(pop.n)
        for j in np.unique(cls):
            mask = cls == j
            members = pop.model.members(int(j))
            mu = class_stationary(pop.model, y[mask], int(j))
            c = pop.model.conductances[members]
            v = pop.model.reversals[members]
            amp[mask] = pop.weight * np.sum(mu * c * (v - y[mask, None]), axis=-1)
        g += w @ amp
    return g


def _phi1(lam: np.ndarray, h: float) -> np.ndarray:
    return -np.expm1(-lam * h) / lam


def expeuler(lam: np.ndarray, coeffs: np.ndarray, g: np.ndarray, h: float) -> np.ndarray:
    return np.exp(-lam * h) * coeffs + _phi1(lam, h) * g


def flow_step(system: CableSystem, state: HybridState, h: float) -> HybridState:
    """One exponential-Euler step with the channel configuration held fixed."""
    if h <= 0:
        raise ValueError("step must be positive")
    g = reaction_coeffs(system, state.states, state.coeffs)
    c = expeuler(system.basis.eigenvalues, state.coeffs, g, h)
    return HybridState(state.t + h, c, [s.copy() for s in state.states])


# -- single jump (reference implementation) -------------------------------


class Jump(NamedTuple):
    t: float
    population: int
    channel: int
    target: int


def _pair_rates(system: CableSystem, states, coeffs, eps: float):
    """True rates and majorants for every (population, channel, target)."""
    rows = []
    for p, (pop, y, st) in enumerate(zip(system.populations, system.local_voltages(coeffs), states)):
        model = pop.model
        for (a, b), form in model.rates.items():
            on = st == a
            if not on.any():
                continue
            scale = 1.0 / eps if model.is_fast(a, b) else 1.0
            idx = np.flatnonzero(on)
            rows.append((p, idx, b, form(y[idx]) * scale, model.alpha_max * scale))
    return rows


def next_jump(
    system: CableSystem,
    state: HybridState,
    eps: float,
    rng: np.random.Generator,
    horizon: float,
    h_max: float = 1e-4,
    frozen: bool = False,
) -> tuple[Jump | None, HybridState, float]:
    """Flow to the next channel transition by thinning.

    Candidates come from a Poisson clock at rate ``Lambda*`` (sum of the
    per-pair majorants ``alpha_max`` or ``alpha_max / eps``); a candidate is
    accepted with probability (true total rate) / ``Lambda*`` and the
    transition is then drawn proportionally to the individual rates.
    Returns ``(jump or None, state at jump or horizon, acceptance ratio of
    the last candidate)``.
    """
    st = state.copy()
    rows = _pair_rates(system, st.states, st.coeffs, eps)
    bound = float(sum(r[4] * r[1].size for r in rows))
    ratio = 0.0
    while True:
        gap = rng.standard_exponential() / bound if bound > 0 else math.inf
        t_c = st.t + gap
        stop = min(t_c, horizon)
        while st.t < stop and not frozen:
            h = min(h_max, stop - st.t)
            st = flow_step(system, st, h)
            if stop - st.t < 1e-15:
                st.t = stop
        st.t = stop
        if t_c > horizon:
            return None, st, ratio
        rows = _pair_rates(system, st.states, st.coeffs, eps)
        true = np.concatenate([r[3] for r in rows])
        if np.any(true > np.concatenate([np.full(r[1].size, r[4]) for r in rows]) * (1 + 1e-12)):
            raise MajorantError("true rate above alpha_max")
        total = float(true.sum())
        ratio = total / bound
        if not 0.0 <= ratio <= 1.0:
            raise MajorantError(f"acceptance ratio {ratio}")
        if rng.random() * bound < total:
            k = int(np.searchsorted(np.cumsum(true), rng.random() * total, side="right"))
            k = min(k, true.size - 1)
            for p, idx, b, vals, _ in rows:
                if k < idx.size:
                    ch = int(idx[k])
                    st.states[p][ch] = b
                    return Jump(st.t, p, ch, b), st, ratio
                k -= idx.size


# -- full PDMP --------------------------------------------------------------


def _flatten(system: CableSystem, eps: float):
    pops = system.populations
    M = max(len(pops), 1)
    S = max((p.model.n_states for p in pops), default=1)
    codes = -np.ones((M, S, S), dtype=np.int64)
    params = np.zeros((M, S, S, 6))
    fast = np.zeros((M, S, S), dtype=np.bool_)
    cond = np.zeros((M, S))
    rev = np.zeros((M, S))
    amax = np.ones(M)
    for m, pop in enumerate(pops):
        model = pop.model
        n = model.n_states
        cond[m, :n] = model.conductances
        rev[m, :n] = model.reversals
        amax[m] = model.alpha_max
        for (a, b), form in model.rates.items():
            codes[m, a, b] = form.code
            params[m, a, b] = form.params
            fast[m, a, b] = model.is_fast(a, b)
    K = system.basis.K
    W = np.ascontiguousarray(np.concatenate(system.pairings, axis=1)) if pops else np.zeros((K, 0))
    weight = np.concatenate([np.full(p.n, p.weight) for p in pops]) if pops else np.zeros(0)
    chan_model = np.concatenate([np.full(p.n, m, dtype=np.int64) for m, p in enumerate(pops)]) if pops else np.zeros(0, np.int64)
    states0 = np.concatenate(system.initial_states()) if pops else np.zeros(0, np.int64)
    return codes, params, fast, cond, rev, amax, W, weight, chan_model, states0.astype(np.int64)


def fraction_labels(system: CableSystem) -> list[str]:
    return [f"frac_{p.model.name}_{s}" for p in system.populations for s in p.model.states]


def simulate_pdmp(
    system: CableSystem,
    eps: float,
    T: float,
    rng: np.random.Generator,
    output_dt: float = 0.01,
    h_max: float = 1e-4,
    frozen: bool = False,
    seed: tuple = (),
) -> Trajectory:
    """Sample the two-timescale PDMP on ``[0, T]``.

    Intra-class rates are divided by ``eps``.  With ``frozen=True`` the
    voltage is held at ``u0`` (no diffusion, no reaction).
    """
    if eps <= 0 or T <= 0:
        raise ValueError("need eps > 0 and T > 0")
    times = output_grid(T, output_dt)
    codes, params, fast, cond, rev, amax, W, weight, chan_model, states0 = _flatten(system, eps)
    bound = system.a_priori_bound()
    res = _kernel.pdmp_kernel(
        rng,
        np.ascontiguousarray(system.basis.eigenvalues),
        np.ascontiguousarray(system.basis.h_weights),
        system.u0.copy(),
        system.stimulus.copy(),
        W,
        weight,
        chan_model,
        cond,
        rev,
        codes,
        params,
        fast,
        amax,
        states0,
        float(eps),
        float(h_max),
        times,
        bool(frozen),
        10.0 * bound,
    )
    out_c, counts, njumps, lt, li, lf, lto, hmax, status, t_stop = res
    if status == _kernel.MAJORANT_VIOLATED:
        raise MajorantError(f"jump rate above alpha_max at t={t_stop:.6g}")
    if status == _kernel.BLOW_UP:
        raise BlowUpError(f"||u||_H exceeded 10x the a-priori bound {bound:.4g} at t={t_stop:.6g}")
    fr, pop_of = [], []
    for m, pop in enumerate(system.populations):
        n = max(pop.n, 1)
        fr.append(counts[:, m, : pop.model.n_states] / n)
        pop_of.append(np.full(pop.n, m))
    fractions = np.concatenate(fr, axis=1) if fr else np.zeros((times.size, 0))
    offsets = np.cumsum([0] + [p.n for p in system.populations])
    pop_idx = np.searchsorted(offsets, li, side="right") - 1
    jumps = np.zeros(lt.size, dtype=JUMP_DTYPE)
    jumps["t"] = lt
    jumps["population"] = pop_idx
    jumps["channel"] = li - offsets[pop_idx] if lt.size else li
    jumps["source"] = lf
    jumps["target"] = lto
    final = []
    for m, pop in enumerate(system.populations):
        st = system.initial_states()[m].copy()
        sel = jumps[jumps["population"] == m]
        st[sel["channel"]] = sel["target"]
        final.append(st)
    return Trajectory(times, out_c, fractions, fraction_labels(system), njumps, jumps, seed, hmax, bound, final_states=final)


# -- averaged process (shared with the Langevin engine) ---------------------


def _class_exit_bounds(model) -> np.ndarray:
    """Per class ``j``: ``sum_{k != j} alpha_max * max_{zeta in E_j} #{xi in E_k : alpha_{zeta,xi} != 0}``."""
    l = model.n_classes
    out = np.zeros(l)
    for j in range(l):
        for k in range(l):
            if k == j:
                continue
            best = 0
            for a in model.members(j):
                cnt = sum(1 for b in model.members(k) if (int(a), int(b)) in model.rates)
                best = max(best, cnt)
            out[j] += best * model.alpha_max
    return out


def _averaged_pair_rates(system: CableSystem, classes, coeffs):
    rows = []
    for p, (pop, y, cls) in enumerate(zip(system.populations, system.local_voltages(coeffs), classes)):
        model = pop.model
        l = model.n_classes
        if l == 1:
            continue
        for j in np.unique(cls):
            j = int(j)
            idx = np.flatnonzero(cls == j)
            members = model.members(j)
            mu = class_stationary(model, y[idx], j)
            q = model.rate_matrix(y[idx])
            for k in range(l):
                if k == j:
                    continue
                rate = np.einsum("na,nab->n", mu, q[:, members[:, None], model.members(k)[None, :]])
                rows.append((p, idx, k, rate))
    return rows


class ReducedTerms(NamedTuple):
    drift: np.ndarray
    factor: np.ndarray | None
    mean_fractions: np.ndarray


def reduced_terms(system: CableSystem, classes, coeffs: np.ndarray, with_noise: bool) -> ReducedTerms:
    """Averaged drift, optional noise factor ``M`` (``M M^T = a``), and
    expected state occupancies, all at the frozen configuration."""
    g = system.stimulus.copy()
    cols = []
    fracs = []
    for pop, w, y, cls in zip(system.populations, system.pairings, system.local_voltages(coeffs), classes):
        model = pop.model
        amp = np.zeros(pop.n)
        s = np.zeros(pop.n)
        occ = np.zeros(model.n_states)
        if model.n_classes == 1:
            groups = ((0, slice(None)),)
        else:
            groups = tuple((int(j), cls == j) for j in np.unique(cls))
        for j, mask in groups:
            members = model.members(j)
            if with_noise:
                mu, mean, _, _, sj = class_statistics(model, y[mask], j)
                s[mask] = sj
            else:
                mu = class_stationary(model, y[mask], j)
                mean = np.sum(mu * model.conductances[members] * (model.reversals[members] - y[mask, None]), axis=-1)
            amp[mask] = pop.weight * mean
            occ[members] += mu.sum(axis=0)
        g += w @ amp
        fracs.append(occ / max(pop.n, 1))
        if with_noise:
            cols.append(w * (pop.weight * np.sqrt(2.0 * s))[None, :])
    factor = None
    if with_noise:
        factor = np.concatenate(cols, axis=1) if cols else np.zeros((system.basis.K, 0))
    mean_fractions = np.concatenate(fracs) if fracs else np.zeros(0)
    return ReducedTerms(g, factor, mean_fractions)


def run_reduced(
    system: CableSystem,
    T: float,
    rng: np.random.Generator,
    output_dt: float = 0.01,
    h_max: float = 1e-4,
    eps: float = 0.0,
    noise_rng: np.random.Generator | None = None,
    seed: tuple = (),
    step_hook: Callable | None = None,
) -> Trajectory:
    """Averaged PDMP, optionally with Langevin noise ``sqrt(eps) B dW``.

    Steps are ``min(h_max, next candidate, next output time)``; class jumps
    use thinning with the per-class majorant from ``_class_exit_bounds``.
    With ``eps == 0`` no noise is drawn and the run is the averaged PDMP.
    ``step_hook(t, h, coeffs, classes)`` is called after every flow step
    with the state at ``t + h`` (classes before any jump at that time).
    """
    lam = system.basis.eigenvalues
    times = output_grid(T, output_dt)
    c = system.u0.copy()
    classes = system.initial_classes()
    exit_bounds = [_class_exit_bounds(p.model) for p in system.populations]
    bound = system.a_priori_bound()
    with_noise = eps > 0
    if with_noise and noise_rng is None:
        raise ValueError("noise stream required for eps > 0")

    def majorant():
        return float(sum(b[cls].sum() for b, cls in zip(exit_bounds, classes)))

    n_out = times.size
    out_c = np.zeros((n_out, system.basis.K))
    labels = fraction_labels(system)
    out_f = np.zeros((n_out, len(labels)))
    out_j = np.zeros(n_out, dtype=np.int64)
    energy = np.zeros(n_out) if with_noise else None
    jumps = []
    terms = reduced_terms(system, classes, c, with_noise)
    out_c[0] = c
    out_f[0] = terms.mean_fractions
    hmax_norm = float(np.sqrt(np.sum(system.basis.h_weights * c**2)))

    t = 0.0
    total = majorant()
    tc = t + rng.standard_exponential() / total if total > 0 else math.inf
    cache_h = None
    decay = phi1 = ou = None
    interval_energy = 0.0
    io = 1
    while io < n_out:
        target = times[io]
        t_next = min(target, tc, t + h_max)
        if t + h_max >= target - SNAP * h_max and tc > target:
            t_next = target
        h = t_next - t
        if h > 0:
            if h != cache_h:
                cache_h = h
                decay = np.exp(-lam * h)
                phi1 = _phi1(lam, h)
                ou = np.sqrt(-np.expm1(-2 * lam * h) / (2 * lam))
            c = decay * c + phi1 * terms.drift
            if with_noise:
                eta = noise_rng.standard_normal(terms.factor.shape[1])
                inc = math.sqrt(eps) * (terms.factor @ eta) * ou
                c = c + inc
                interval_energy += float(inc @ inc)
            if step_hook is not None:
                step_hook(t, h, c, classes)
        t = t_next
        if t == tc:
            rows = _averaged_pair_rates(system, classes, c)
            true = np.concatenate([r[3] for r in rows]) if rows else np.zeros(0)
            tot = float(true.sum())
            if tot > total * (1 + 1e-12):
                raise MajorantError("averaged rate above its majorant")
            if rng.random() * total < tot:
                k = min(int(np.searchsorted(np.cumsum(true), rng.random() * tot, side="right")), true.size - 1)
                for p, idx, target_class, _ in rows:
                    if k < idx.size:
                        ch = int(idx[k])
                        jumps.append((t, p, ch, int(classes[p][ch]), target_class))
                        classes[p][ch] = target_class
                        break
                    k -= idx.size
                total = majorant()
            tc = t + rng.standard_exponential() / total if total > 0 else math.inf
        if t == target:
            out_c[io] = c
            out_j[io] = len(jumps)
            nrm = float(np.sqrt(np.sum(system.basis.h_weights * c**2)))
            hmax_norm = max(hmax_norm, nrm)
            if nrm > 10 * bound:
                raise BlowUpError(f"||u||_H exceeded 10x the a-priori bound {bound:.4g} at t={t:.6g}")
        terms = reduced_terms(system, classes, c, with_noise)
        if t == target:
            out_f[io] = terms.mean_fractions
            if with_noise:
                energy[io] = energy[io - 1] + interval_energy
                interval_energy = 0.0
            io += 1
    jarr = np.array(jumps, dtype=JUMP_DTYPE) if jumps else np.zeros(0, dtype=JUMP_DTYPE)
    return Trajectory(times, out_c, out_f, labels, out_j, jarr, seed, hmax_norm, bound, energy, [k.copy() for k in classes])


def simulate_averaged(
    system: CableSystem,
    T: float,
    rng: np.random.Generator,
    output_dt: float = 0.01,
    h_max: float = 1e-4,
    seed: tuple = (),
) -> Trajectory:
    """The eps -> 0 limit: averaged reaction and averaged class-switching rates."""
    return run_reduced(system, T, rng, output_dt, h_max, eps=0.0, seed=seed)
