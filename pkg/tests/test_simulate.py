"""Path simulation: thinning, poissonized drift, filtered jumps, estimators."""

import math

import numpy as np
import pytest
from scipy import stats

import jumpsmooth as js


def _thin_model(rate_fn=None, amp=0.01, trunc=(2.0,), window=(-6.0, 6.0), b=None):
    h = js.JumpAmplitude(((js.constant(amp), js.ExpDecay(1.0, 1.0)),))
    q = js.JumpMeasureSpec((0.0, np.inf), js.constant(1.0), trunc)
    return js.CoefficientSet(
        b=b if b is not None else js.constant(0.0),
        gamma=rate_fn if rate_fn is not None else js.constant(1.0),
        h=h, eta=js.ExpDecay(max(amp, 0.05), 1.0), q=q, k=2, y_window=window,
    )


def _drift_model(b, gamma=0.0):
    h = js.JumpAmplitude(((js.constant(0.1), js.ExpDecay(1.0, 1.0)),))
    q = js.JumpMeasureSpec((0.0, np.inf), js.constant(1.0), (2.0,))
    return js.CoefficientSet(
        b=b, gamma=js.constant(gamma), h=h, eta=js.ExpDecay(0.1, 1.0), q=q,
        k=2, y_window=(-6.0, 6.0),
    )


# ---------------------------------------------------------------------------
# determinism
# ---------------------------------------------------------------------------


def test_exact_trajectory_deterministic_under_seed():
    m = _thin_model(js.FunctionSum(js.constant(0.6), js.Sinusoidal(0.3, 1.0)), amp=0.2)
    a = js.simulate_exact(m, 0.4, 3.0, 1, js.RngSpec(77).generator())
    b = js.simulate_exact(m, 0.4, 3.0, 1, js.RngSpec(77).generator())
    assert np.array_equal(a.times, b.times)
    assert np.array_equal(a.states, b.states)
    assert a.events == b.events
    c = js.simulate_exact(m, 0.4, 3.0, 1, js.RngSpec(77, stream=1).generator())
    assert not np.array_equal(a.times, c.times)


def test_trajectory_bookkeeping():
    m = _thin_model(amp=0.3)
    tr = js.simulate_exact(m, 0.0, 4.0, 1, js.RngSpec(5).generator())
    assert np.all(np.diff(tr.times) >= 0)
    assert tr.terminal == tr.states[-1]
    kinds = {e.kind for e in tr.events}
    assert kinds <= {"jump", "reject", "skip"}
    assert tr.count("jump") + tr.count("reject") + tr.count("skip") == len(tr.events)
    # acceptance ratio near gamma/ubar = 1/1.05
    total = tr.count("jump") + tr.count("reject")
    if total >= 5:
        assert tr.count("jump") >= 1


def test_batch_thread_count_does_not_change_results(wobble_model):
    base = js.simulate_batch(wobble_model, 0.2, 1.5, 1, js.RngSpec(11), 3001, threads=1)
    four = js.simulate_batch(wobble_model, 0.2, 1.5, 1, js.RngSpec(11), 3001, threads=4)
    assert np.array_equal(base["terminal"], four["terminal"])
    assert np.array_equal(base["jumps"], four["jumps"])
    assert base["runs"] == 3001


def test_batch_accepts_per_run_initial_states(wobble_model):
    x0 = np.linspace(-1, 1, 500)
    out = js.simulate_batch(wobble_model, x0, 0.0, 1, js.RngSpec(1), 500)
    # t_end = 0: terminal states equal initial states
    assert np.allclose(out["terminal"], x0, atol=1e-12)


# ---------------------------------------------------------------------------
# jump-count laws
# ---------------------------------------------------------------------------


def test_jump_count_poisson_chisquare():
    # constant rate 1 and tiny displacement: counts are Poisson(q(G) t)
    m = _thin_model(amp=0.01, trunc=(2.0,))
    out = js.simulate_batch(m, 0.0, 1.5, 1, js.RngSpec(42), 20000)
    lam = 2.0 * 1.5
    counts = np.bincount(out["jumps"], minlength=16)[:16]
    pmf = stats.poisson.pmf(np.arange(16), lam)
    pmf[-1] = 1.0 - pmf[:-1].sum()
    keep = pmf * 20000 >= 5
    chi2, pval = stats.chisquare(
        np.concatenate([counts[keep], [counts[~keep].sum()]]),
        np.concatenate([pmf[keep] * 20000, [pmf[~keep].sum() * 20000]]),
    )
    assert pval > 0.01


def test_thinning_matches_discretized_chain():
    # state-dependent rate bounded by 0.9; compare jump-count laws against a
    # brute-force time-discretized chain
    rate = js.FunctionSum(js.constant(0.5), js.Sinusoidal(0.4, 1.0))
    m = _thin_model(rate, amp=0.3, trunc=(1.0,))
    runs, t_end, dt = 100_000, 0.25, 1e-4
    out = js.simulate_batch(m, 0.3, t_end, 1, js.RngSpec(7), runs)
    thinned = np.bincount(out["jumps"], minlength=8)[:8] / runs

    rng = np.random.default_rng(123456)
    x = np.full(runs, 0.3)
    njump = np.zeros(runs, dtype=np.int64)
    steps = int(round(t_end / dt))
    for _ in range(steps):
        gam = 0.5 + 0.4 * np.sin(x)
        fire = rng.random(runs) < gam * dt
        if np.any(fire):
            z = rng.random(fire.sum())  # marks uniform on (0, 1]
            x[fire] += 0.3 * np.exp(-z)
            njump[fire] += 1
    chain = np.bincount(njump, minlength=8)[:8] / runs
    tv = 0.5 * np.abs(thinned - chain).sum()
    assert tv <= 0.01


def test_rate_bound_breach_is_detected():
    rate = js.FunctionSum(
        js.constant(0.1), js.FunctionProduct(js.Affine(0.0, 1.0), js.Affine(0.0, 1.0))
    )  # 0.1 + y^2, audited only on (-1, 1)
    m = _thin_model(rate, amp=0.0, trunc=(4.0,), window=(-1.0, 1.0))
    with pytest.raises(js.ContractError, match="bound"):
        js.simulate_exact(m, 3.0, 5.0, 1, js.RngSpec(3).generator())


def test_truncation_coupling_shares_jump_times():
    # constant rate: acceptance does not depend on the state, so the narrow
    # run's jumps are exactly the wide run's jumps with marks in the narrow
    # window, under a shared candidate stream
    m = _thin_model(js.constant(0.8), amp=0.2, trunc=(1.0, 3.0))
    wide = js.simulate_exact(m, 0.0, 6.0, 2, js.RngSpec(21).generator(), couple_top=2)
    narrow = js.simulate_exact(m, 0.0, 6.0, 1, js.RngSpec(21).generator(), couple_top=2)
    wide_jumps = [(e.time, e.mark) for e in wide.events if e.kind == "jump"]
    narrow_jumps = [(e.time, e.mark) for e in narrow.events if e.kind == "jump"]
    expected = [(t, z) for (t, z) in wide_jumps if z <= 1.0]
    assert narrow_jumps == expected
    skips = {e.mark for e in narrow.events if e.kind == "skip"}
    assert all(z > 1.0 for z in skips)


def test_coupling_window_must_contain_active():
    m = _thin_model(js.constant(0.8), amp=0.2, trunc=(1.0, 3.0))
    with pytest.raises(js.ContractError):
        js.simulate_exact(m, 0.0, 1.0, 2, js.RngSpec(1).generator(), couple_top=1)


def test_mark_sampler_restricted_exponential():
    spec = js.JumpMeasureSpec((0.0, np.inf), js.ExpDecay(1.0, 1.0), (2.0,))
    sampler = js.MarkSampler(spec, (0.0, 2.0))
    assert sampler.mass == pytest.approx(1.0 - math.exp(-2.0), rel=1e-6)
    draws = sampler.sample(js.RngSpec(9).generator(), 100_000)
    assert np.all((draws >= 0.0) & (draws <= 2.0))
    cdf = lambda z: (1.0 - np.exp(-z)) / (1.0 - math.exp(-2.0))
    _, pval = stats.kstest(draws, cdf)
    assert pval > 0.01


# ---------------------------------------------------------------------------
# degenerate rates and drift surrogates
# ---------------------------------------------------------------------------


def test_zero_rate_exact_is_pure_flow():
    m = _drift_model(js.Affine(0.0, -1.0))
    tr = js.simulate_exact(m, 2.0, 1.0, 1, js.RngSpec(4).generator())
    assert tr.events == ()
    assert tr.terminal == pytest.approx(2.0 * math.exp(-1.0), rel=1e-9)
    out = js.simulate_batch(m, 2.0, 1.0, 1, js.RngSpec(4), 64)
    assert np.allclose(out["terminal"], 2.0 * math.exp(-1.0), rtol=1e-9)
    assert out["candidate_rate"] == 0.0


def test_poissonized_kick_moments():
    # gamma = 0: X_t = x0 + beta N_t / i with N_t Poisson(i t)
    m = _drift_model(js.constant(0.8))
    i, t, runs = 10, 2.0, 20000
    out = js.simulate_batch(m, 0.0, t, 1, js.RngSpec(31), runs, i=i)
    mean, var = out["terminal"].mean(), out["terminal"].var()
    want_mean = 0.8 * t
    want_var = 0.8**2 * t / i
    assert abs(mean - want_mean) <= 4.0 * math.sqrt(want_var / runs)
    assert abs(var - want_var) <= 0.1 * want_var


def test_poissonized_single_path_matches_kick_grid():
    m = _drift_model(js.constant(1.0))
    tr = js.simulate_poissonized(m, 0.0, 1.0, 8, 1, js.RngSpec(12).generator())
    kicks = tr.count("drift")
    assert tr.terminal == pytest.approx(kicks * 1.0 / 8.0, abs=1e-12)


def test_poissonized_index_floor(wobble_model):
    # sup|b'| = 0.2: i0 = 1, so i = 0 is invalid through the batch entry
    with pytest.raises(js.ContractError):
        js.simulate_batch(wobble_model, 0.0, 1.0, 1, js.RngSpec(1), 8, i=0)


def test_drift_blow_up_raises():
    m = _drift_model(js.FunctionProduct(js.Affine(0.0, 1.0), js.Affine(0.0, 1.0)))
    with pytest.raises(js.BlowUpError):
        js.simulate_exact(m, 2.0, 2.0, 1, js.RngSpec(2).generator())
    with pytest.raises(js.BlowUpError):
        js.simulate_batch(m, 2.0, 2.0, 1, js.RngSpec(2), 16)


# ---------------------------------------------------------------------------
# filtered jumps
# ---------------------------------------------------------------------------


def test_sample_tau_n_record_invariants(exp_unit_model):
    kd = js.make_kernels(exp_unit_model, (2, 3), theta=4.2)
    rng = js.RngSpec(100).generator()
    seen = 0
    for _ in range(40):
        rec = js.sample_tau_n(exp_unit_model, kd, 0.0, 2, 50.0, 1, rng)
        if rec is None:
            continue
        seen += 1
        assert 0.0 < rec.tau <= 50.0
        assert rec.post == pytest.approx(
            rec.pre + float(exp_unit_model.h.value(rec.pre, rec.mark)), abs=1e-12
        )
        # kept marks lie where the cutoff is positive: w = z in (1, n+3)
        assert 1.0 < rec.mark < 5.0
    assert seen >= 35  # filtered rate 3 over half a century of horizon


def test_sample_tau_n_rejects_foreign_kernels(exp_unit_model, wobble_model):
    kd_other = js.make_kernels(wobble_model, (2,), theta=14.0)
    with pytest.raises(js.ContractError):
        js.sample_tau_n(exp_unit_model, kd_other, 0.0, 2, 1.0, 1, js.RngSpec(1).generator())


def test_sample_tau_n_rejects_undeclared_index(exp_unit_model):
    kd = js.make_kernels(exp_unit_model, (2,), theta=4.2)
    with pytest.raises(js.ContractError):
        js.sample_tau_n(exp_unit_model, kd, 0.0, 5, 1.0, 1, js.RngSpec(1).generator())


def test_filtered_rate_clipped_by_truncation():
    h = js.JumpAmplitude(((js.constant(1.0), js.ExpDecay(1.0, 1.0)),))
    q = js.JumpMeasureSpec((0.0, np.inf), js.constant(1.0), (2.0, 12.0))
    m = js.CoefficientSet(
        b=js.constant(0.0), gamma=js.constant(1.0), h=h,
        eta=js.ExpDecay(1.0, 1.0), q=q, k=2, y_window=(-3.0, 3.0),
    )
    kd = js.make_kernels(m, (2,), theta=4.2)
    with pytest.raises(js.ContractError, match="clips"):
        js.sample_tau_n(m, kd, 0.0, 2, 1.0, 1, js.RngSpec(1).generator())
    rec = js.sample_tau_n(m, kd, 0.0, 2, 50.0, 2, js.RngSpec(1).generator())
    assert rec is None or rec.tau > 0.0


def test_filtered_survival_rate(exp_unit_model):
    # the n-th filtered kernel fires at rate mass(n) = n + 1
    n, t_end, runs = 2, 1.0, 20000
    kd = js.make_kernels(exp_unit_model, (n,), theta=4.2)
    out = js.simulate_batch(
        exp_unit_model, 0.0, t_end, 1, js.RngSpec(55), runs, kernels=kd, filter_n=n
    )
    surv = float(np.mean(out["tau"] > 0.5))
    want = math.exp(-3.0 * 0.5)
    sigma = math.sqrt(want * (1.0 - want) / runs)
    assert abs(surv - want) <= 4.0 * sigma


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------


def test_estimate_density_normal_l1():
    rng = js.RngSpec(60).generator()
    s = rng.normal(0.0, 1.0, 100_000)
    dens = js.estimate_density(s, (-5.0, 5.0), size=1024)
    assert dens.mass() == pytest.approx(1.0, abs=1e-10)
    ref = stats.norm.pdf(dens.grid)
    l1 = np.trapezoid(np.abs(dens.values[0] - ref), dens.grid)
    assert l1 <= 0.02


def test_estimate_density_derivative_row():
    rng = js.RngSpec(61).generator()
    s = rng.normal(0.0, 1.0, 200_000)
    dens = js.estimate_density(s, (-5.0, 5.0), size=1024, order=1)
    total_var = np.trapezoid(np.abs(dens.values[1]), dens.grid)
    assert total_var == pytest.approx(2.0 / math.sqrt(2.0 * math.pi), rel=0.05)


def test_estimate_density_atom_becomes_bump():
    s = np.full(500, 1.294)
    dens = js.estimate_density(s, (0.0, 2.0), size=512)
    assert dens.mass() == pytest.approx(1.0, abs=1e-10)
    assert abs(dens.grid[np.argmax(dens.values[0])] - 1.294) < 0.02


def test_estimate_density_guards():
    rng = js.RngSpec(62).generator()
    with pytest.raises(js.ContractError):
        js.estimate_density(rng.normal(size=50), (-3.0, 3.0))
    with pytest.raises(js.WindowTooSmallError):
        js.estimate_density(rng.normal(size=1000), (10.0, 12.0))
    with pytest.raises(js.ContractError):
        js.estimate_density(rng.normal(size=1000), (-3.0, 3.0), bandwidth=-0.1)
    with pytest.raises(js.ContractError):
        js.estimate_density(rng.normal(size=1000), (-3.0, 3.0), order=5)


def test_histogram_density_mass():
    rng = js.RngSpec(63).generator()
    s = rng.normal(0.0, 1.0, 50_000)
    hist = js.histogram_density(s, (-6.0, 6.0), bins=80)
    assert hist.mass() == pytest.approx(1.0, abs=2e-3)


def test_empirical_cf_point_mass_and_zero_frequency():
    s = np.full(1000, 0.7)
    cf = js.empirical_cf(s, np.array([0.0, 1.0, 5.0]))
    assert cf.values[0] == pytest.approx(1.0 + 0.0j, abs=0)
    assert np.allclose(cf.magnitude(), 1.0, atol=1e-12)
    assert cf.values[1] == pytest.approx(np.exp(1j * 0.7), abs=1e-12)


def test_empirical_cf_exponential_law():
    rng = js.RngSpec(64).generator()
    s = rng.exponential(1.0, 200_000)
    cf = js.empirical_cf(s, np.array([1.0]))
    # exp(1): |cf(1)| = 1/sqrt(2)
    assert abs(cf.magnitude()[0] - 1.0 / math.sqrt(2.0)) <= 3.0 * cf.stderr


def test_empirical_cf_symmetric_grid_conjugate():
    rng = js.RngSpec(65).generator()
    s = rng.normal(size=5000)
    xi = np.linspace(-3, 3, 13)
    cf = js.empirical_cf(s, xi)
    assert np.allclose(cf.values, np.conj(cf.values[::-1]), atol=1e-12)
    with pytest.raises(js.ContractError):
        js.empirical_cf(s, np.array([[1.0, 2.0]]))
