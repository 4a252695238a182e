"""Acceptance criteria 1-10, each at its stated tolerance.

Every test prints one ``CRITERION n: PASS|FAIL ...`` line.  Criterion 10
is reported but non-blocking: a failure there is recorded as xfail.
"""

import filecmp
import os
import time

import numpy as np
import pytest
from scipy import stats

from conftest import cable
from pdmpfluct import cli, experiments
from pdmpfluct.config import default_config
from pdmpfluct.fluctuation import constant_trace, diffusion_matrix, trace_q
from pdmpfluct.kinetics import ChannelModel, RateForm
from pdmpfluct.langevin import LangevinConfig, langevin_ensemble, mollified
from pdmpfluct.morris_lecar import MLParameters, ml_system, ml_trace_bound, open_probability, potassium_rates
from pdmpfluct.pdmp import simulate_pdmp
from pdmpfluct.seeding import JUMP_LANE, stream

SEED = 20240601


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return emit


def symmetric_channel(rate, alpha_max):
    return ChannelModel(
        ("closed", "open"),
        (0, 0),
        np.array([0.0, 1.0]),
        np.zeros(2),
        {(0, 1): RateForm.constant(rate), (1, 0): RateForm.constant(rate)},
        alpha_max=alpha_max,
    )


def test_criterion_1_phi_representations(report):
    t0 = time.perf_counter()
    rel, res, orth, sizes = [], [], [], set()
    for i in range(100):
        q, d = experiments.phi_instance(SEED, i, 6)
        sizes.add(q.shape[0])
        r, s, o = experiments.check_phi_instance(q, d)
        rel.append(r)
        res.append(s)
        orth.append(o)
    elapsed = time.perf_counter() - t0
    ok = max(rel) <= 1e-9 and max(res) <= 1e-12 and max(orth) <= 1e-12 and elapsed < 10
    report(1, ok, f"max rel {max(rel):.2e} (<=1e-9), max |B phi + d| {max(res):.2e}, max |mu phi| {max(orth):.2e} (<=1e-12), sizes {sorted(sizes)}, {elapsed:.2f} s")
    assert ok


def test_criterion_2_closed_forms(report):
    t0 = time.perf_counter()
    cfg = default_config()
    system = experiments.build_system(cfg)
    worst = np.zeros(3)
    for i in range(100):
        coeffs, states = experiments.ml_instance(cfg, system, i)
        worst = np.maximum(worst, experiments.check_ml_instance(cfg, system, coeffs, states))
    elapsed = time.perf_counter() - t0
    ok = worst.max() <= 1e-12 and elapsed < 10
    report(2, ok, f"max rel discrepancy phi {worst[0]:.2e}, s_i {worst[1]:.2e}, C {worst[2]:.2e} (<=1e-12), {elapsed:.2f} s")
    assert ok


def test_criterion_3_positivity(report):
    cfg = default_config()
    system = experiments.build_system(cfg)
    traces, mins, rel_mins, factor_mins = [], [], [], []
    for i in range(100):
        coeffs, _ = experiments.ml_instance(cfg, system, i)
        op = diffusion_matrix(system, coeffs)
        traces.append(np.trace(op.c))
        ev = np.linalg.eigvalsh(op.a)
        mins.append(ev.min())
        rel_mins.append(ev.min() / np.abs(ev).max())
        sv = np.linalg.svd(op.factor, compute_uv=False)
        factor_mins.append(sv.min() ** 2)
    n_bad = int(np.sum(np.array(mins) < -1e-12))
    ok = min(traces) >= 0 and n_bad == 0
    report(
        3,
        ok,
        f"min Tr C {min(traces):.3e} (>=0), min eig(a) {min(mins):.2e} (>=-1e-12), {n_bad}/100 states below; "
        f"diagnostics: min eig/||a|| {min(rel_mins):.1e}, min sigma(M)^2 {min(factor_mins):.1e}",
    )
    assert ok


def test_criterion_4_green_kubo(report, tmp_path):
    t0 = time.perf_counter()
    cfg = default_config().replace(out_dir=str(tmp_path), clt_times=(1.0,))
    rep = experiments.run_clt_check(cfg)
    elapsed = time.perf_counter() - t0
    ratios = np.array([r[4] for r in rep.rows])
    ok = cfg.clt_eps == 1e-3 and cfg.clt_replicas == 10_000 and np.all((ratios >= 0.9) & (ratios <= 1.1)) and elapsed < 300
    report(4, ok, f"ratios {np.round(ratios, 4).tolist()} in [0.9, 1.1] at eps=1e-3, 1e4 replicas, t=1, channels {list(cfg.clt_channels)}, {elapsed:.1f} s")
    assert ok


def test_criterion_5_trace_bound(report):
    cfg = default_config()
    system = experiments.build_system(cfg)
    ref, series, _ = experiments.averaged_trace(cfg, system)
    bound = ml_trace_bound(cfg.params, system.basis, float(np.max(ref.h_norms(system))))
    total = series.trace + series.tail_bound
    below = bool(np.all(total <= bound))
    # constant operator: quadrature against the closed form
    lam = system.basis.eigenvalues
    times = np.linspace(0.0, 2.4, 241)
    c = 3.7
    q = trace_q(times, np.full((times.size, lam.size), c), lam)
    closed = np.array([constant_trace(c, t, lam) for t in times])
    err = float(np.max(np.abs(q.trace - closed)))
    ok = below and err <= 1e-10
    report(5, ok, f"max (Tr Q + tail) {total.max():.4g} <= bound {bound:.4g} at all {total.size} output points: {below}; constant-C quadrature error {err:.1e} (<=1e-10)")
    assert ok


def test_criterion_6_averaging_trend(report, tmp_path):
    t0 = time.perf_counter()
    cfg = default_config().replace(epsilons=(1.0, 0.1, 0.01, 0.001), replicas=100, out_dir=str(tmp_path))
    rep = experiments.run_epsilon_sweep(cfg)
    elapsed = time.perf_counter() - t0
    m, se = rep.mean_sup_err, rep.stderr
    ratio = m[0] / m[-1]
    # nonincreasing up to one standard error (the larger of the neighbours')
    steps = [m[i + 1] <= m[i] + max(se[i], se[i + 1]) for i in range(len(m) - 1)]
    ok = ratio >= 3 and all(steps) and elapsed < 1800
    pairs = ", ".join(f"{e:g}: {a:.4g}+-{b:.2g}" for e, a, b in zip(rep.epsilons, m, se))
    report(6, ok, f"mean sup L2 error {pairs}; ratio eps=1 / eps=1e-3 {ratio:.2f} (>=3); monotone {all(steps)}; {elapsed:.0f} s")
    assert ok


def test_criterion_7_langevin_rate(report):
    t0 = time.perf_counter()
    system = mollified(ml_system(K=64), 0.009)
    det = langevin_ensemble(LangevinConfig(eps=0.0, K=64, T=2.4, seed=SEED), system, 1)[1][0]
    eps_grid = np.array([1e-1, 1e-2, 1e-3])
    means, ses = [], []
    for eps in eps_grid:
        _, paths = langevin_ensemble(LangevinConfig(eps=eps, K=64, T=2.4, seed=SEED), system, 100)
        sup2 = np.max(np.sum((paths - det) ** 2, axis=2), axis=1)
        means.append(sup2.mean())
        ses.append(sup2.std(ddof=1) / 10)
    slope = np.polyfit(np.log(eps_grid), np.log(means), 1)[0]
    elapsed = time.perf_counter() - t0
    ok = abs(slope - 1) <= 0.3 and elapsed < 1800
    pairs = ", ".join(f"{e:g}: {a:.4g}+-{b:.2g}" for e, a, b in zip(eps_grid, means, ses))
    report(7, ok, f"E sup ||u - u_lang||^2 {pairs}; log-log slope {slope:.3f} (1 +- 0.3); {elapsed:.0f} s")
    assert ok


def test_criterion_8_jump_engine(report):
    rng = lambda r: stream(SEED, r, JUMP_LANE)
    # Poisson counts: 1e4 independent constant-rate channels in one frozen run
    rate, T, n = 1.5, 2.0, 10_000
    sys_ = cable([symmetric_channel(rate, 2.0)], [n], K=4)
    tr = simulate_pdmp(sys_, 1.0, T, rng(0), output_dt=T, h_max=T, frozen=True)
    counts = np.bincount(tr.jumps["channel"], minlength=n)
    kmax = 9
    observed = np.bincount(np.minimum(counts, kmax), minlength=kmax + 1)
    probs = stats.poisson.pmf(np.arange(kmax), rate * T)
    probs = np.append(probs, 1 - probs.sum())
    p_chi = stats.chisquare(observed, probs * n).pvalue
    # exponential waiting times: 1e5 consecutive jumps of one channel
    one = cable([symmetric_channel(rate, 2.0)], [1], K=4)
    long = simulate_pdmp(one, 1.0, 1e5 / rate * 1.02, rng(1), output_dt=1e5 / rate * 1.02, h_max=10.0, frozen=True)
    waits = np.diff(np.concatenate([[0.0], long.jumps["t"]]))[:100_000]
    p_ks = stats.kstest(waits, "expon", args=(0, 1 / rate)).pvalue
    # frozen voltage-dependent occupancy against the quasi-stationary law
    p = MLParameters()
    u0 = np.zeros(16)
    u0[0] = -40.0
    ml = ml_system(p, K=16).replace(u0=u0)
    Tocc = 100.0
    occ_tr = simulate_pdmp(ml, 1.0, Tocc, rng(2), output_dt=Tocc, frozen=True)
    y = ml.local_voltages(u0)[0]
    mu1 = open_probability(p, y)
    al, be = potassium_rates(p)
    time_open = 0.0
    for ch in range(p.N_K):
        sel = occ_tr.jumps[occ_tr.jumps["channel"] == ch]
        t_prev, s = 0.0, 0
        for t, tgt in zip(sel["t"], sel["target"]):
            time_open += (t - t_prev) * s
            t_prev, s = t, tgt
        time_open += (Tocc - t_prev) * s
    occ = time_open / (p.N_K * Tocc)
    se = np.sqrt(np.sum(2 * mu1 * (1 - mu1) / ((al(y) + be(y)) * Tocc))) / p.N_K
    z = abs(occ - mu1.mean()) / se
    ok = p_chi > 0.01 and p_ks > 0.01 and waits.size == 100_000 and z <= 3
    report(8, ok, f"Poisson chi-square p={p_chi:.3f} (1e4 samples), exponential KS p={p_ks:.3f} (1e5 samples), occupancy {occ:.4f} vs mu {mu1.mean():.4f}, |z|={z:.2f} (<=3)")
    assert ok


REPLAY = """\
[run]
epsilons = averaged, 0.1, 0.01
replicas = 2
T = 0.5
seed = {seed}
[clt]
replicas = 1000
freeze_time = 0.5
[phi]
instances = 20
"""


def test_criterion_9_deterministic_replay(report, tmp_path):
    results = []
    for engine in ("pdmp", "langevin"):
        path = tmp_path / f"{engine}.cfg"
        path.write_text(REPLAY.format(seed=SEED).replace("replicas = 2", f"replicas = 2\nengine = {engine}"))
        commands = ["simulate", "sweep", "clt", "trace", "phi-check"] if engine == "pdmp" else ["simulate"]
        for command in commands:
            a, b = tmp_path / engine / command / "a", tmp_path / engine / command / "b"
            codes = [cli.main([command, "--config", str(path), "--out", str(d)]) for d in (a, b)]
            names = sorted(os.listdir(a))
            _, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
            results.append((f"{engine}:{command}", codes == [0, 0] and names == sorted(os.listdir(b)) and not mismatch and not errors, len(names)))
    ok = all(r[1] for r in results)
    report(9, ok, "; ".join(f"{name} {'identical' if good else 'DIFFERENT'} ({n} files)" for name, good, n in results))
    assert ok


def test_criterion_10_spiking_smoke(report):
    """Non-blocking: reported, recorded as xfail when it does not hold."""
    cfg = default_config()
    system = experiments.build_system(cfg)
    probes = [0.05, 0.25, 0.5, 0.75]
    ref = experiments.reference_run(cfg, system)
    v_avg = ref.values(system, probes)
    avg_spikes = experiments.count_spikes(v_avg[:, 0])
    counts = []
    for eps in cfg.stochastic_epsilons:
        tr = simulate_pdmp(system, eps, cfg.T, stream(cfg.seed, 0, JUMP_LANE), cfg.output_dt, cfg.h_max)
        counts.append(experiments.count_spikes(tr.values(system, probes)[:, 0]))
    sustained = avg_spikes >= 1
    monotone = all(b >= a for a, b in zip(counts, counts[1:]))
    ok = sustained and monotone
    report(
        10,
        ok,
        f"(non-blocking) averaged u(0.05) range [{v_avg[:, 0].min():.2f}, {v_avg[:, 0].max():.2f}], spikes {avg_spikes}; "
        f"spike counts over eps {list(cfg.stochastic_epsilons)}: {counts}; suprathreshold {sustained}, nondecreasing {monotone}",
    )
    if not ok:
        pytest.xfail("qualitative spiking check does not hold with the default rate forms (non-blocking)")
