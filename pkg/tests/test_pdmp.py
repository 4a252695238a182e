import numpy as np
import pytest
from scipy import stats
from scipy.integrate import solve_ivp

from conftest import cable
from pdmpfluct.kinetics import ChannelModel, RateForm, constant_model, two_state_model
from pdmpfluct.morris_lecar import MLParameters, ml_system, open_probability, potassium_rates
from pdmpfluct.pdmp import (
    BlowUpError,
    HybridState,
    MajorantError,
    averaged_reaction,
    flow_step,
    next_jump,
    output_grid,
    reaction_coeffs,
    simulate_averaged,
    simulate_pdmp,
    sup_l2_distance,
)
from pdmpfluct.spectral import SpectralBasis
from pdmpfluct.system import CableSystem, Population

SQRT2 = np.sqrt(2.0)


def symmetric_channel(rate, alpha_max=None, fast=True):
    """Two states, constant rate both ways; jumps form a Poisson process."""
    kw = {} if alpha_max is None else {"alpha_max": alpha_max}
    return ChannelModel(
        ("closed", "open"),
        (0, 0) if fast else (0, 1),
        np.array([0.0, 1.0]),
        np.zeros(2),
        {(0, 1): RateForm.constant(rate), (1, 0): RateForm.constant(rate)},
        **kw,
    )


def occupancy_from_log(jumps, n_channels, initial, T):
    """Time-averaged fraction of channels in state 1 over [0, T]."""
    time_open = 0.0
    for ch in range(n_channels):
        sel = jumps[jumps["channel"] == ch]
        t_prev, s = 0.0, initial
        for t, tgt in zip(sel["t"], sel["target"]):
            time_open += (t - t_prev) * s
            t_prev, s = t, tgt
        time_open += (T - t_prev) * s
    return time_open / (n_channels * T)


# -- reaction --------------------------------------------------------------


def test_reaction_all_closed_is_stimulus():
    stim = np.linspace(1, 2, 16)
    sys_ = cable([two_state_model(1.0, 1.0, 5.0, -70.0)], [7], stimulus=stim)
    g = reaction_coeffs(sys_, sys_.initial_states(), np.ones(16))
    np.testing.assert_array_equal(g, stim)


def test_reaction_single_open_channel_closed_form():
    c, v, N = 3.0, 50.0, 4
    sys_ = cable([two_state_model(1.0, 1.0, c, v)], [1], weights=[1.0 / N], positions=[np.array([0.5])])
    g = reaction_coeffs(sys_, [np.array([1])], np.zeros(16))
    k = np.arange(1, 17)
    np.testing.assert_allclose(g, c * v / N * SQRT2 * np.sin(k * np.pi / 2), atol=1e-13)
    assert np.all(np.abs(g[1::2]) < 1e-13)


def test_reaction_mollified_tends_to_pointlike():
    model = two_state_model(1.0, 1.0, 2.0, -30.0)
    point = cable([model], [5], K=8)
    moll = point.replace(pointlike=False, kappa=1e-3)
    u = np.array([3.0, -1.0, 0.5, 0.2, 0.0, 0.1, 0.0, 0.02])
    st = [np.array([1, 0, 1, 1, 0])]
    gp = reaction_coeffs(point, st, u)
    gm = reaction_coeffs(moll, st, u)
    np.testing.assert_allclose(gm, gp, rtol=1e-3, atol=1e-3 * np.abs(gp).max())


# -- flow ------------------------------------------------------------------


def test_flow_zero_reaction_is_semigroup():
    sys_ = cable([], [], K=8)
    c0 = np.linspace(1, -1, 8)
    st = flow_step(sys_, HybridState(0.0, c0, []), 0.01)
    np.testing.assert_array_equal(st.coeffs, np.exp(-sys_.basis.eigenvalues * 0.01) * c0)
    assert st.t == 0.01
    with pytest.raises(ValueError):
        flow_step(sys_, HybridState(0.0, c0, []), 0.0)


def test_flow_long_step_reaches_fixed_point():
    stim = np.linspace(5, 1, 8)
    sys_ = cable([], [], K=8, stimulus=stim)
    st = flow_step(sys_, HybridState(0.0, np.ones(8), []), 1e6)
    np.testing.assert_allclose(st.coeffs, stim / sys_.basis.eigenvalues, rtol=1e-15)


def _flow_error(sys_, states, h, T=1.0):
    """sup over a 0.01 grid of the max-mode error against a tight RK oracle."""
    lam = sys_.basis.eigenvalues

    def rhs(t, c):
        return -lam * c + reaction_coeffs(sys_, states, c)

    n_grid = int(round(T / 0.01))
    sol = solve_ivp(rhs, (0, T), sys_.u0, method="DOP853", rtol=1e-13, atol=1e-13, t_eval=np.linspace(0, T, n_grid + 1))
    st = HybridState(0.0, sys_.u0.copy(), states)
    every = int(round(0.01 / h))
    err = 0.0
    for n in range(1, n_grid * every + 1):
        st = flow_step(sys_, st, h)
        if n % every == 0:
            err = max(err, np.max(np.abs(st.coeffs - sol.y[:, n // every])))
    return err


def test_flow_matches_adaptive_rk_oracle():
    p = MLParameters()
    sys_ = ml_system(p, K=16)
    states = [np.random.default_rng(0).integers(0, 2, p.N_K)]
    assert _flow_error(sys_, states, 1e-4) <= 1e-6


def test_flow_first_order_convergence():
    p = MLParameters()
    sys_ = ml_system(p, K=16)
    states = [np.random.default_rng(0).integers(0, 2, p.N_K)]
    e1 = _flow_error(sys_, states, 1e-4, T=0.1)
    e2 = _flow_error(sys_, states, 5e-5, T=0.1)
    assert e1 / e2 == pytest.approx(2.0, rel=0.02)


# -- single jump reference --------------------------------------------------


def test_next_jump_no_rates_returns_sentinel():
    model = ChannelModel(("a", "b"), (0, 0), np.zeros(2), np.zeros(2), {})
    sys_ = cable([model], [3], K=4)
    st = HybridState(0.0, np.zeros(4), sys_.initial_states())
    jump, end, _ = next_jump(sys_, st, 1.0, np.random.default_rng(0), horizon=0.5)
    assert jump is None
    assert end.t == 0.5


def test_next_jump_exponential_waiting_times():
    rate = 2.5
    # majorant above the true rate so thinning actually rejects
    sys_ = cable([symmetric_channel(rate, alpha_max=4.0)], [1], K=4)
    rng = np.random.default_rng(1)
    st = HybridState(0.0, np.zeros(4), sys_.initial_states())
    waits = np.empty(100_000)
    for n in range(waits.size):
        t0 = st.t
        jump, st, ratio = next_jump(sys_, st, 1.0, rng, horizon=np.inf, frozen=True)
        assert 0.0 <= ratio <= 1.0
        waits[n] = jump.t - t0
    assert stats.kstest(waits, "expon", args=(0, 1 / rate)).pvalue > 0.01


def test_next_jump_majorant_violation():
    bad = symmetric_channel(3.0, alpha_max=1.0)
    sys_ = cable([bad], [1], K=4)
    st = HybridState(0.0, np.zeros(4), sys_.initial_states())
    with pytest.raises(MajorantError):
        next_jump(sys_, st, 1.0, np.random.default_rng(0), horizon=100.0, frozen=True)
    with pytest.raises(MajorantError):
        simulate_pdmp(sys_, 1.0, 10.0, np.random.default_rng(0), output_dt=1.0, frozen=True)


def test_engine_agrees_with_reference_first_jump():
    # voltage-dependent rates along a moving voltage: first-jump law of the
    # compiled engine versus the step-by-step reference
    p = MLParameters(N_K=3, lam=5.0)
    sys_ = ml_system(p, K=8)
    eps = 1.0
    rng = np.random.default_rng(2)
    ref = []
    for _ in range(1500):
        st = HybridState(0.0, sys_.u0.copy(), sys_.initial_states())
        jump, _, _ = next_jump(sys_, st, eps, rng, horizon=1.0)
        ref.append(1.0 if jump is None else jump.t)
    eng = []
    for r in range(1500):
        tr = simulate_pdmp(sys_, eps, 1.0, np.random.default_rng([3, r]), output_dt=1.0)
        eng.append(tr.jumps["t"][0] if tr.jumps.size else 1.0)
    assert stats.ks_2samp(ref, eng).pvalue > 0.01


# -- full PDMP --------------------------------------------------------------


def test_no_channels_matches_ode_solution():
    stim = 10.0 * np.exp(-np.arange(16) / 3.0)
    sys_ = cable([], [], K=16, stimulus=stim)
    tr = simulate_pdmp(sys_, 0.1, 1.0, np.random.default_rng(0), output_dt=0.05)
    lam = sys_.basis.eigenvalues
    exact = stim / lam * (1 - np.exp(-np.outer(tr.times, lam)))
    np.testing.assert_allclose(tr.coeffs, exact, atol=1e-6)
    assert tr.jumps.size == 0


def test_frozen_occupancy_matches_quasi_stationary():
    a, b = 3.0, 1.0
    model = two_state_model(a, b, 1.0, 0.0)
    n, T = 50, 200.0
    sys_ = cable([model], [n], K=4)
    tr = simulate_pdmp(sys_, 1.0, T, np.random.default_rng(4), output_dt=T, frozen=True)
    occ = occupancy_from_log(tr.jumps, n, 0, T)
    mu1 = a / (a + b)
    # variance of a two-state time average over a long window
    se = np.sqrt(2 * mu1 * (1 - mu1) / ((a + b) * T) / n)
    assert abs(occ - mu1) <= 3 * se


def test_frozen_voltage_dependent_occupancy(ml):
    p, _ = ml
    u0 = np.zeros(16)
    u0[0] = -40.0
    sys_ = ml_system(p, K=16).replace(u0=u0)
    T = 100.0
    tr = simulate_pdmp(sys_, 1.0, T, np.random.default_rng(5), output_dt=T, frozen=True)
    y = sys_.local_voltages(u0)[0]
    mu1 = open_probability(p, y)
    al, be = potassium_rates(p)
    rate = al(y) + be(y)
    occ = occupancy_from_log(tr.jumps, p.N_K, 0, T)
    se = np.sqrt(np.sum(2 * mu1 * (1 - mu1) / (rate * T))) / p.N_K
    assert abs(occ - mu1.mean()) <= 3 * se


def test_jump_count_scales_inverse_eps(ml):
    p, sys_ = ml
    counts = {}
    for eps in (1e-2, 1e-3):
        counts[eps] = sum(
            simulate_pdmp(sys_, eps, 0.2, np.random.default_rng([6, r]), output_dt=0.2).jumps.size for r in range(20)
        )
    assert 8 <= counts[1e-3] / counts[1e-2] <= 12


def test_poisson_jump_counts():
    rate, T = 1.5, 2.0
    sys_ = cable([symmetric_channel(rate, alpha_max=2.0)], [1], K=4)
    counts = np.array(
        [simulate_pdmp(sys_, 1.0, T, np.random.default_rng([7, r]), output_dt=T, h_max=0.5, frozen=True).jumps.size for r in range(4000)]
    )
    mean = rate * T
    kmax = 8
    observed = np.bincount(np.minimum(counts, kmax), minlength=kmax + 1)
    probs = stats.poisson.pmf(np.arange(kmax), mean)
    probs = np.append(probs, 1 - probs.sum())
    assert stats.chisquare(observed, probs * counts.size).pvalue > 0.01


def test_slow_transitions_not_scaled():
    sys_ = cable([symmetric_channel(1.0, fast=False)], [20], K=4)
    a = simulate_pdmp(sys_, 1e-3, 5.0, np.random.default_rng(8), output_dt=5.0, frozen=True).jumps.size
    assert 50 < a < 150


def test_replay_is_deterministic(ml):
    _, sys_ = ml
    a = simulate_pdmp(sys_, 0.01, 0.3, np.random.default_rng(9))
    b = simulate_pdmp(sys_, 0.01, 0.3, np.random.default_rng(9))
    np.testing.assert_array_equal(a.coeffs, b.coeffs)
    np.testing.assert_array_equal(a.jumps, b.jumps)
    assert np.all(np.diff(a.jumps["t"]) > 0)
    np.testing.assert_array_equal(a.njumps[-1], a.jumps.size)


def test_h_norm_stays_below_a_priori_bound(ml):
    _, sys_ = ml
    tr = simulate_pdmp(sys_, 0.1, 2.4, np.random.default_rng(10))
    assert tr.h_norm_max <= tr.h_norm_bound
    assert tr.h_norms(sys_).max() == pytest.approx(tr.h_norm_max)


def test_blow_up_monitor(monkeypatch, ml):
    _, sys_ = ml
    monkeypatch.setattr(CableSystem, "a_priori_bound", lambda self: 0.1)
    with pytest.raises(BlowUpError):
        simulate_pdmp(sys_, 0.1, 0.5, np.random.default_rng(0))
    with pytest.raises(BlowUpError):
        simulate_averaged(sys_, 0.5, np.random.default_rng(0))


def test_fractions_count_channels(ml):
    p, sys_ = ml
    tr = simulate_pdmp(sys_, 0.05, 0.5, np.random.default_rng(11), output_dt=0.1)
    np.testing.assert_allclose(tr.fractions.sum(axis=1), 1.0)
    assert tr.fraction_labels == ["frac_K_closed", "frac_K_open"]
    np.testing.assert_allclose(tr.fractions[-1, 1], np.mean(tr.final_states[0] == 1))


def test_output_grid():
    np.testing.assert_allclose(output_grid(1.0, 0.25), [0, 0.25, 0.5, 0.75, 1.0])
    with pytest.raises(ValueError):
        output_grid(1.0, 0.3)


# -- averaged process -------------------------------------------------------


def test_averaged_single_class_is_deterministic(ml):
    _, sys_ = ml
    a = simulate_averaged(sys_, 0.5, np.random.default_rng(0))
    b = simulate_averaged(sys_, 0.5, np.random.default_rng(1))
    assert a.jumps.size == 0
    np.testing.assert_array_equal(a.coeffs, b.coeffs)


def test_averaged_reaction_two_state_closed_form(ml):
    p, sys_ = ml
    rng = np.random.default_rng(12)
    c = rng.normal(0, 5, sys_.basis.K)
    g = averaged_reaction(sys_, sys_.initial_classes(), c)
    y = sys_.local_voltages(c)[0]
    amp = p.c_K / p.C / p.N_K * open_probability(p, y) * (p.v_K - y)
    np.testing.assert_allclose(g, sys_.stimulus + sys_.pairings[0] @ amp, rtol=1e-13, atol=1e-10)


def test_averaged_class_switching_is_poisson():
    # singleton classes with equal constant rates: switch counts are Poisson
    rate, T = 1.2, 2.0
    sys_ = cable([symmetric_channel(rate, alpha_max=2.0, fast=False)], [1], K=4)
    counts = np.array([simulate_averaged(sys_, T, np.random.default_rng([13, r]), output_dt=T, h_max=0.5).jumps.size for r in range(3000)])
    kmax = 8
    observed = np.bincount(np.minimum(counts, kmax), minlength=kmax + 1)
    probs = stats.poisson.pmf(np.arange(kmax), rate * T)
    probs = np.append(probs, 1 - probs.sum())
    assert stats.chisquare(observed, probs * counts.size).pvalue > 0.01


def test_averaged_two_class_occupancy_mixed_model():
    # fast pair inside class 0, slow exit to a third state
    q = np.array([[0.0, 4.0, 0.5], [2.0, 0.0, 1.0], [1.5, 0.0, 0.0]])
    model = constant_model(q, [0, 0, 1], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0])
    sys_ = cable([model], [40], K=4)
    T = 50.0
    tr = simulate_averaged(sys_, T, np.random.default_rng(14), output_dt=0.5, h_max=0.05)
    mu0 = np.array([2.0, 4.0]) / 6.0
    out_rate = mu0 @ np.array([0.5, 1.0])
    p_class1 = out_rate / (out_rate + 1.5)
    frac_class1 = tr.fractions[20:, 2].mean()
    assert frac_class1 == pytest.approx(p_class1, abs=0.05)


def test_galerkin_truncation_converged():
    a = simulate_averaged(ml_system(K=32), 2.4, np.random.default_rng(0))
    b = simulate_averaged(ml_system(K=64), 2.4, np.random.default_rng(0))
    assert abs(a.l2_norms().max() - b.l2_norms().max()) < 1e-4


def test_sup_l2_distance(ml):
    _, sys_ = ml
    a = simulate_averaged(sys_, 0.2, np.random.default_rng(0))
    assert sup_l2_distance(a, a) == 0.0
    b = simulate_averaged(sys_, 0.4, np.random.default_rng(0))
    with pytest.raises(ValueError):
        sup_l2_distance(a, b)
