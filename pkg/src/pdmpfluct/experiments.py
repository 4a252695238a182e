"""Experiment drivers behind the command-line interface.

Every driver takes an ``ExperimentConfig``, writes its files under
``config.out_dir`` and returns a small report.  Random streams come from
``seeding``: the jump stream of replica ``r`` is shared by all eps values
(common random numbers), so sweeps compare paired paths.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .config import ConfigError, ExperimentConfig
from .fluctuation import (
    additive_functional,
    c_diagonal,
    center,
    class_statistics,
    diffusion_matrix,
    solve_phi_integral,
    solve_phi_linear,
    TraceSeries,
    trace_q,
)
from .kinetics import random_generator, stationary_vector
from .langevin import LangevinConfig, simulate_langevin
from .morris_lecar import ml_diffusion_closed_form, ml_phi_closed_form, ml_system, ml_trace_bound, ml_variance_closed_form
from .pdmp import Trajectory, run_reduced, simulate_averaged, simulate_pdmp, sup_l2_distance
from .seeding import CLT_LANE, JUMP_LANE, PHI_LANE, REFERENCE_LANE, stream
from .system import CableSystem


class InvariantBreach(ArithmeticError):
    """A numerical check failed; carries the offending instances."""

    def __init__(self, message: str, offenders=()):
        super().__init__(message)
        self.offenders = list(offenders)


def _fmt(x) -> str:
    return repr(float(x))


def _outdir(cfg: ExperimentConfig) -> str:
    os.makedirs(cfg.out_dir, exist_ok=True)
    return cfg.out_dir


def _pool_map(fn, tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, tasks))


def build_system(cfg: ExperimentConfig) -> CableSystem:
    return ml_system(cfg.params, K=cfg.K, pointlike=True, kappa=cfg.kappa)


def eps_label(eps: float) -> str:
    return "averaged" if eps == 0 else f"eps{eps:g}"


def reference_run(cfg: ExperimentConfig, system: CableSystem, replica: int = 0) -> Trajectory:
    """Averaged (eps -> 0) trajectory of one replica."""
    return simulate_averaged(system, cfg.T, stream(cfg.seed, replica, REFERENCE_LANE), cfg.output_dt, cfg.h_max, seed=(cfg.seed, replica))


def classes_at(system: CableSystem, traj: Trajectory) -> list[list[np.ndarray]]:
    """Channel classes at every output time, replayed from the jump log."""
    cls = system.initial_classes()
    out = []
    jumps = traj.jumps
    k = 0
    for t in traj.times:
        while k < jumps.size and jumps["t"][k] <= t:
            cls[jumps["population"][k]][jumps["channel"][k]] = jumps["target"][k]
            k += 1
        out.append([c.copy() for c in cls])
    return out


# -- simulate ---------------------------------------------------------------


@dataclass
class SimulateReport:
    files: list[str]
    trajectories: dict = field(default_factory=dict)


def _simulate_task(args):
    cfg, eps, r = args
    system = build_system(cfg)
    if cfg.engine == "langevin":
        lc = LangevinConfig(eps, cfg.h, cfg.kappa, cfg.K, cfg.T, cfg.seed, cfg.output_dt)
        tr = simulate_langevin(lc, system, replica=r)
        if tr.noise_energy is None:
            tr.noise_energy = np.zeros(tr.times.size)
        return tr
    rng = stream(cfg.seed, r, JUMP_LANE)
    if eps == 0:
        return simulate_averaged(system, cfg.T, rng, cfg.output_dt, cfg.h_max, seed=(cfg.seed, r))
    return simulate_pdmp(system, eps, cfg.T, rng, cfg.output_dt, cfg.h_max, seed=(cfg.seed, r))


def run_simulate(cfg: ExperimentConfig) -> SimulateReport:
    """One trajectory CSV per (eps, replica): ``traj_<eps>_r<replica>.csv``."""
    out = _outdir(cfg)
    system = build_system(cfg)
    tasks = [(cfg, eps, r) for eps in cfg.epsilons for r in range(cfg.replicas)]
    results = _pool_map(_simulate_task, tasks, cfg.workers)
    report = SimulateReport([])
    for (_, eps, r), tr in sorted(zip(tasks, results), key=lambda x: (-x[0][1], x[0][2])):
        path = os.path.join(out, f"traj_{cfg.engine}_{eps_label(eps)}_r{r:03d}.csv")
        tr.to_csv(path, system, cfg.probes)
        report.files.append(path)
        report.trajectories[eps, r] = tr
    return report


# -- eps sweep ----------------------------------------------------------------


@dataclass
class SweepReport:
    path: str
    epsilons: np.ndarray
    mean_sup_err: np.ndarray
    stderr: np.ndarray
    replicas: int
    errors: np.ndarray  # (n_eps, replicas)


def _sweep_task(args):
    cfg, eps, r, ref = args
    system = build_system(cfg)
    if ref is None:
        ref = reference_run(cfg, system, r)
    tr = simulate_pdmp(system, eps, cfg.T, stream(cfg.seed, r, JUMP_LANE), cfg.output_dt, cfg.h_max, seed=(cfg.seed, r))
    return sup_l2_distance(tr, ref)


def run_epsilon_sweep(cfg: ExperimentConfig) -> SweepReport:
    """Mean over replicas of ``sup_t ||u^eps_t - u_t||_L2`` for every eps > 0.

    ``sweep.csv``: ``epsilon, mean_sup_err, stderr, replicas``, rows by
    decreasing eps.
    """
    out = _outdir(cfg)
    system = build_system(cfg)
    eps_list = sorted(set(cfg.stochastic_epsilons), reverse=True)
    if not eps_list:
        raise ConfigError("sweep needs at least one eps > 0", key="epsilons")
    # a switching-free averaged process is deterministic: one shared reference
    shared = None
    if all(p.model.n_classes == 1 for p in system.populations):
        shared = reference_run(cfg, system, 0)
    tasks = [(cfg, eps, r, shared) for eps in eps_list for r in range(cfg.replicas)]
    errs = np.array(_pool_map(_sweep_task, tasks, cfg.workers)).reshape(len(eps_list), cfg.replicas)
    mean = errs.mean(axis=1)
    se = errs.std(axis=1, ddof=1) / math.sqrt(cfg.replicas) if cfg.replicas > 1 else np.zeros(len(eps_list))
    path = os.path.join(out, "sweep.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epsilon", "mean_sup_err", "stderr", "replicas"])
        for e, m, s in zip(eps_list, mean, se):
            w.writerow([_fmt(e), _fmt(m), _fmt(s), cfg.replicas])
    return SweepReport(path, np.array(eps_list), mean, se, cfg.replicas, errs)


# -- frozen-voltage CLT check --------------------------------------------------


@dataclass
class CltReport:
    path: str
    rows: list


def frozen_voltages(cfg: ExperimentConfig, system: CableSystem):
    """Averaged state at the output time nearest ``clt_freeze_time``."""
    ref = reference_run(cfg, system, 0)
    n = int(np.argmin(np.abs(ref.times - cfg.clt_freeze_time)))
    classes = classes_at(system, ref)[n]
    return ref.coeffs[n], classes


def variance_ci(sample_var: float, n: int, level: float = 0.95) -> tuple[float, float]:
    """Chi-square confidence interval for a variance from ``n`` samples."""
    a = (1 - level) / 2
    return (n - 1) * sample_var / stats.chi2.ppf(1 - a, n - 1), (n - 1) * sample_var / stats.chi2.ppf(a, n - 1)


def run_clt_check(cfg: ExperimentConfig) -> CltReport:
    """Per channel at the frozen voltage: empirical variance of
    ``eps^{-1/2} int_0^t d(r_s) ds`` against ``2 s_i t``.

    ``clt.csv``: ``channel, t, empirical_var, predicted_var, ratio, ci_low,
    ci_high``; the interval is a 95% chi-square interval for the ratio.
    """
    out = _outdir(cfg)
    system = build_system(cfg)
    coeffs, classes = frozen_voltages(cfg, system)
    pop = system.populations[0]
    y = system.local_voltages(coeffs)[0]
    channels = range(pop.n) if cfg.clt_channels is None else cfg.clt_channels
    rows = []
    for i in channels:
        if not 0 <= i < pop.n:
            raise ConfigError(f"clt channel {i} outside 0..{pop.n - 1}", key="clt_channels")
        j = int(classes[0][i])
        members = pop.model.members(j)
        mu, _, d, _, s = class_statistics(pop.model, np.array([y[i]]), j)
        q = pop.model.rate_matrix(y[i])[np.ix_(members, members)]
        q[np.diag_indices_from(q)] = 0.0
        q[np.diag_indices_from(q)] = -q.sum(axis=1)
        for ti, t in enumerate(cfg.clt_times):
            rng = stream(cfg.seed, i * len(cfg.clt_times) + ti, CLT_LANE)
            x = additive_functional(q, d[0], t, cfg.clt_eps, cfg.clt_replicas, rng, mu=mu[0])
            emp = float(np.var(x, ddof=1))
            pred = 2.0 * float(s[0]) * t
            lo, hi = variance_ci(emp, cfg.clt_replicas)
            ratio = emp / pred if pred > 0 else math.nan
            rows.append((i, t, emp, pred, ratio, lo / pred if pred > 0 else math.nan, hi / pred if pred > 0 else math.nan))
    rows.sort(key=lambda r: (r[0], r[1]))
    path = os.path.join(out, "clt.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["channel", "t", "empirical_var", "predicted_var", "ratio", "ci_low", "ci_high"])
        for r in rows:
            w.writerow([r[0]] + [_fmt(v) for v in r[1:]])
    return CltReport(path, rows)


# -- trace of Q_t ----------------------------------------------------------


@dataclass
class TraceReport:
    csv_path: str
    svg_path: str
    times: np.ndarray
    trace: np.ndarray
    tail_bound: np.ndarray
    bound: float


def averaged_trace(cfg: ExperimentConfig, system: CableSystem, replica: int = 0):
    """Averaged trajectory and ``Tr Q_t`` at its output times.

    The diagonal of the operator is sampled after every solver step, so the
    quadrature grid is the step grid and does not depend on ``output_dt``.
    """
    times = [0.0]
    d0, s0 = c_diagonal(system, system.u0, system.initial_classes())
    diags, sups = [d0], [s0]

    def hook(t, h, c, classes):
        d, sp = c_diagonal(system, c, classes)
        times.append(t + h)
        diags.append(d)
        sups.append(sp)

    rng = stream(cfg.seed, replica, REFERENCE_LANE)
    traj = run_reduced(system, cfg.T, rng, cfg.output_dt, cfg.h_max, seed=(cfg.seed, replica), step_hook=hook)
    fine = trace_q(np.array(times), np.array(diags), system.basis.eigenvalues, np.array(sups), system.basis.inverse_eigen_tail())
    # output times are step ends: pick the last node at each of them
    idx = np.searchsorted(fine.times, traj.times, side="right") - 1
    series = TraceSeries(traj.times, fine.trace[idx], fine.tail_bound[idx])
    return traj, series, fine


def run_trace_series(cfg: ExperimentConfig) -> TraceReport:
    """``trace.csv`` (``t, trace, tail_bound, paper_bound``) and ``trace.svg``."""
    out = _outdir(cfg)
    system = build_system(cfg)
    ref, series, _ = averaged_trace(cfg, system)
    bound = ml_trace_bound(cfg.params, system.basis, float(np.max(ref.h_norms(system))))
    csv_path = os.path.join(out, "trace.csv")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "trace", "tail_bound", "paper_bound"])
        for t, tr, tb in zip(series.times, series.trace, series.tail_bound):
            w.writerow([_fmt(t), _fmt(tr), _fmt(tb), _fmt(bound)])
    svg_path = os.path.join(out, "trace.svg")
    with open(svg_path, "w") as fh:
        fh.write(line_plot_svg(series.times, series.trace + series.tail_bound, "t", "Tr Q_t"))
    report = TraceReport(csv_path, svg_path, series.times, series.trace, series.tail_bound, bound)
    over = np.flatnonzero(series.trace + series.tail_bound > bound)
    if over.size:
        raise InvariantBreach(f"trace exceeds its bound {bound:.6g} at t={series.times[over[0]]:.6g}")
    return report


def line_plot_svg(x, y, xlabel: str, ylabel: str, width: int = 640, height: int = 400) -> str:
    """Minimal SVG line plot with labelled axis ranges."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    left, right, top, bottom = 70, 20, 20, 50
    pw, ph = width - left - right, height - top - bottom
    x0, x1 = float(x.min()), float(x.max())
    y0, y1 = float(min(y.min(), 0.0)), float(y.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    px = left + (x - x0) / (x1 - x0) * pw
    py = top + ph - (y - y0) / (y1 - y0) * ph
    pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py))
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">\n'
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>\n'
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>\n'
        f'<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{pts}"/>\n'
        f'<text x="{left}" y="{height - 15}" font-size="12">{x0:.4g}</text>\n'
        f'<text x="{width - right}" y="{height - 15}" font-size="12" text-anchor="end">{x1:.4g}</text>\n'
        f'<text x="{left + pw / 2}" y="{height - 10}" font-size="13" text-anchor="middle">{xlabel}</text>\n'
        f'<text x="{left - 5}" y="{top + ph}" font-size="12" text-anchor="end">{y0:.4g}</text>\n'
        f'<text x="{left - 5}" y="{top + 12}" font-size="12" text-anchor="end">{y1:.4g}</text>\n'
        f'<text x="15" y="{top + ph / 2}" font-size="13" transform="rotate(-90 15 {top + ph / 2})" text-anchor="middle">{ylabel}</text>\n'
        "</svg>\n"
    )


# -- corrector cross-validation ------------------------------------------


@dataclass
class PhiReport:
    path: str
    rows: list
    failures: list


def _rel(a, b) -> float:
    scale = max(float(np.max(np.abs(b))), 1e-300)
    return float(np.max(np.abs(a - b))) / scale if np.any(a != b) else 0.0


def phi_instance(master: int, i: int, max_states: int):
    """Random irreducible generator and current vector for instance ``i``.
    Every tenth instance has a constant current (centred ``d = 0``)."""
    rng = stream(master, i, PHI_LANE)
    m = int(rng.integers(2, max_states + 1))
    q = random_generator(rng, m)
    d = rng.normal(size=m) if i % 10 != 9 else np.full(m, rng.normal())
    return q, d


def check_phi_instance(q, d):
    """(relative discrepancy, Fredholm residual, orthogonality) for one instance."""
    mu = stationary_vector(q)
    # a constant current centres to exactly zero
    dc = np.zeros_like(d) if np.all(d == d[0]) else center(d, mu)
    lin = solve_phi_linear(q, dc, mu)
    integ = solve_phi_integral(q, dc, mu)
    rel = _rel(lin, integ)
    residual = float(np.max(np.abs(q @ lin + dc)))
    orth = abs(float(mu @ lin))
    return rel, residual, orth


def ml_instance(cfg: ExperimentConfig, system: CableSystem, i: int):
    """Random cable state for closed-form checks: smooth random field plus
    random open/closed channels."""
    rng = stream(cfg.seed, 10_000 + i, PHI_LANE)
    K = system.basis.K
    coeffs = rng.normal(scale=40.0, size=K) / system.basis.modes
    states = rng.integers(0, 2, size=system.populations[0].n)
    return coeffs, states


def check_ml_instance(cfg: ExperimentConfig, system: CableSystem, coeffs, states):
    """Closed forms against the generic machinery: (phi, variance, operator)
    relative discrepancies."""
    p = cfg.params
    pop = system.populations[0]
    y = system.local_voltages(coeffs)[0]
    mu, _, d, phi, s = class_statistics(pop.model, y, 0)
    phi_generic = phi[np.arange(pop.n), states] / p.C
    phi_closed = ml_phi_closed_form(p, y, states)
    s_closed = ml_variance_closed_form(p, y)
    op = diffusion_matrix(system, coeffs)
    closed = ml_diffusion_closed_form(p, system, coeffs)
    return _rel(phi_generic, phi_closed), _rel(s / p.C**2, s_closed), _rel(op.c, closed.c)


def run_phi_check(cfg: ExperimentConfig) -> PhiReport:
    """Cross-validate the two corrector representations on random generators
    and the two-state closed forms on random cable states.

    ``phi_check.csv``: ``instance, seed, kind, states, discrepancy, residual,
    orthogonality, passed``.  Raises ``InvariantBreach`` listing failing
    instance seeds.
    """
    out = _outdir(cfg)
    rows, failures = [], []
    for i in range(cfg.phi_instances):
        q, d = phi_instance(cfg.seed, i, cfg.phi_max_states)
        rel, res, orth = check_phi_instance(q, d)
        ok = rel <= cfg.phi_tolerance and res <= cfg.phi_residual_tolerance and orth <= cfg.phi_residual_tolerance
        kind = "degenerate" if i % 10 == 9 else "random"
        rows.append((i, f"{cfg.seed}:{i}", kind, q.shape[0], rel, res, orth, ok))
        if not ok:
            failures.append(f"{cfg.seed}:{i}")
    system = build_system(cfg)
    for i in range(cfg.phi_instances):
        coeffs, states = ml_instance(cfg, system, i)
        r_phi, r_s, r_c = check_ml_instance(cfg, system, coeffs, states)
        worst = max(r_phi, r_s, r_c)
        ok = worst <= cfg.phi_tolerance
        rows.append((cfg.phi_instances + i, f"{cfg.seed}:{10_000 + i}", "closed_form", 2, worst, 0.0, 0.0, ok))
        if not ok:
            failures.append(f"{cfg.seed}:{10_000 + i}")
    path = os.path.join(out, "phi_check.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance", "seed", "kind", "states", "discrepancy", "residual", "orthogonality", "passed"])
        for r in rows:
            w.writerow([r[0], r[1], r[2], r[3], _fmt(r[4]), _fmt(r[5]), _fmt(r[6]), int(r[7])])
    report = PhiReport(path, rows, failures)
    if failures:
        raise InvariantBreach(f"{len(failures)} corrector checks failed: {', '.join(failures)}", failures)
    return report


# -- spikes ----------------------------------------------------------------


def count_spikes(v: np.ndarray, threshold: float = 0.0, reset: float = -20.0) -> int:
    """Upward threshold crossings, re-armed only after falling below ``reset``.
    A trace that starts at or above threshold has not crossed it."""
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        return 0
    armed = v[0] < threshold
    n = 0
    for x in v[1:]:
        if armed and x >= threshold:
            n += 1
            armed = False
        elif not armed and x < reset:
            armed = True
    return n
