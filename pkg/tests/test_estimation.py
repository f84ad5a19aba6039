import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cellfree_ris.channel import make_drop
from cellfree_ris.config import dbm_to_watt, kmh_to_ms, default_profile, small_profile
from cellfree_ris.estimation import (EstimationError, PilotPlan, assign_pilots, benchmark_mmse,
                                     estimation_statistics, hermitian_inverse, make_pilot_plan,
                                     nmse, pilot_noise_cov, pilot_power_control, realize,
                                     two_phase_statistics)
from cellfree_ris.harness import build_drop


def _diag_delta(traces):
    """(M, K, 1, 1) covariances with the given traces."""
    t = np.asarray(traces, dtype=float)
    return t[:, :, None, None]


def _tr(a):
    return np.real(np.trace(a, axis1=-2, axis2=-1))


# ------------------------------------------------------------------ pilots

def test_identical_users_share_power_equally():
    p = pilot_power_control(_diag_delta(np.ones((3, 5))), 0.2)
    assert np.allclose(p, 0.2)


def test_power_follows_trace_ratio():
    p = pilot_power_control(_diag_delta([[3.0, 1.0]]), 1.0)
    assert np.allclose(p, [1.5, 0.5])


@given(st.integers(0, 2 ** 31), st.floats(1e-4, 10))
def test_pilot_budget_preserved(seed, p_p):
    t = np.random.default_rng(seed).lognormal(0, 3, size=(6, 9))
    p = pilot_power_control(_diag_delta(t), p_p)
    assert p.sum() == pytest.approx(9 * p_p, rel=1e-12)


def test_few_users_get_orthogonal_pilots():
    t = np.random.default_rng(0).uniform(size=(4, 5))
    pilot, _ = assign_pilots(_diag_delta(t), np.ones(5), tau_p=5)
    assert pilot.tolist() == [0, 1, 2, 3, 4]


def test_extra_user_matches_brute_force():
    rng = np.random.default_rng(17)
    tau_p = 4
    t = rng.lognormal(0, 2, size=(6, tau_p + 1))
    powers = rng.uniform(0.5, 2, size=tau_p + 1)
    pilot, prime = assign_pilots(_diag_delta(t), powers, tau_p)
    k = tau_p
    m = int(np.argmax(t[:, k]))
    costs = [powers[k] * t[m, i] for i in range(tau_p)]  # every pilot holds one user
    assert prime[k] == m
    assert pilot[k] == int(np.argmin(costs))


def test_tie_goes_to_lowest_pilot():
    t = np.ones((2, 3))
    pilot, _ = assign_pilots(_diag_delta(t), np.ones(3), tau_p=2)
    assert pilot.tolist() == [0, 1, 0]


def test_sequential_assignment_brute_force():
    # every later user picks the cheapest pilot given earlier choices
    rng = np.random.default_rng(5)
    tau_p, K = 3, 8
    t = rng.lognormal(0, 2, size=(5, K))
    powers = rng.uniform(0.5, 2, size=K)
    pilot, prime = assign_pilots(_diag_delta(t), powers, tau_p)
    for k in range(tau_p, K):
        load = [sum(powers[k] * t[prime[k], i] for i in range(k) if pilot[i] == s)
                for s in range(tau_p)]
        assert pilot[k] == int(np.argmin(load))


def test_plan_invariants_on_many_drops():
    cfg = default_profile()
    for d in range(1000):
        drop = build_drop(cfg, 77, d)
        plan = make_pilot_plan(drop)
        for power, same in ((plan.power_d, plan.coset_d), (plan.power_c, plan.coset_c)):
            assert power.sum() == pytest.approx(cfg.K * cfg.p_p, rel=1e-12)
            assert np.all(np.diag(same)) and np.array_equal(same, same.T)


# ------------------------------------------------------------------ statistics

def _clean_drop(**changes):
    """Singleton cosets, static users, negligible noise, no EMI."""
    # cascaded covariances are ~1e-30 W, so the noise must sit far below them
    cfg = small_profile(tau_p=4, sigma2=1e-60, rho_sir_dB=math.inf, **changes)
    return build_drop(cfg, 3, 0)


def test_perfect_estimation_limit():
    drop = _clean_drop()
    est = estimation_statistics(drop)
    assert np.allclose(est.Q_d, drop.corr.Delta_d, rtol=1e-9, atol=0)
    assert np.allclose(est.Q_c, drop.corr.Delta_c, rtol=1e-9, atol=0)
    assert nmse(drop, est) == pytest.approx(0.0, abs=1e-9)


def test_no_estimation_gives_unit_nmse(small_drop):
    est = estimation_statistics(small_drop)
    zero = dataclasses.replace(est, Q_d=np.zeros_like(est.Q_d), Q_c=np.zeros_like(est.Q_c))
    assert nmse(small_drop, zero) == 1.0


def test_benchmark_without_ris_equals_direct_only_two_phase():
    cfg = small_profile(J=0)
    drop = build_drop(cfg, 8, 0)
    bench = estimation_statistics(drop, "benchmark")
    K = drop.K
    plan = PilotPlan(np.full(K, cfg.p_p), np.zeros(K), bench.pilot_d, np.arange(K) % cfg.tau_p,
                     np.zeros(K, int), np.zeros(K, int))
    two = two_phase_statistics(drop, plan)
    assert nmse(drop, two) == pytest.approx(nmse(drop, bench), abs=1e-10)


def test_stronger_emi_shrinks_cascaded_estimate():
    # thermal noise lowered so that EMI is visible in double precision
    base = build_drop(small_profile(sigma2=1e-60), 4, 0)
    strong = make_drop(base.cfg.replace(rho_sir_dB=0.0), base.topo)
    weak = make_drop(base.cfg.replace(rho_sir_dB=20.0), base.topo)
    q_strong = _tr(estimation_statistics(strong).Q_c).sum()
    q_weak = _tr(estimation_statistics(weak).Q_c).sum()
    assert q_strong < q_weak


def test_nmse_floor_at_high_pilot_power():
    drop = build_drop(default_profile(), 5, 1)
    values = []
    for p_dbm in (0, 20, 60, 100, 140, 180):
        d = make_drop(drop.cfg.replace(p_p=dbm_to_watt(p_dbm)), drop.topo)
        values.append([nmse(d, estimation_statistics(d, s)) for s in ("two_phase", "benchmark")])
    v = np.array(values)
    assert np.all(np.diff(v, axis=0) <= 1e-12)
    # saturates at a strictly positive floor (pilot contamination)
    assert np.all(v[-1] > 0.05)
    assert np.all(np.abs(v[-1] - v[-2]) < 1e-6)


@settings(max_examples=15)
@given(st.integers(0, 10_000), st.sampled_from(["two_phase", "benchmark"]))
def test_error_covariance_is_psd(seed, scheme):
    drop = build_drop(default_profile(velocity=kmh_to_ms(120)), seed, 0)
    est = estimation_statistics(drop, scheme)
    err = drop.corr.Delta - est.Q_d - est.Q_c
    w = np.linalg.eigvalsh(err)
    scale = np.linalg.eigvalsh(drop.corr.Delta).max(axis=-1, keepdims=True)
    assert np.all(w >= -1e-9 * scale)
    for Q in (est.Q_d, est.Q_c):
        assert np.allclose(Q, np.conj(np.swapaxes(Q, -1, -2)))
    assert 0.0 <= nmse(drop, est) <= 1.0


def test_nmse_grows_with_velocity():
    for d in range(5):
        base = build_drop(default_profile(), 31, d)
        for scheme in ("two_phase", "benchmark"):
            vals = [nmse(dd, estimation_statistics(dd, scheme))
                    for dd in (make_drop(base.cfg.replace(velocity=kmh_to_ms(v)), base.topo)
                               for v in (0, 60, 120))]
            assert vals[0] <= vals[1] <= vals[2]


def test_reference_instants():
    drop = build_drop(default_profile(), 0, 0)
    two, bench = estimation_statistics(drop), estimation_statistics(drop, "benchmark")
    assert two.lam == 17 and bench.lam == 9
    assert np.all((two.pilot_instant_d >= 1) & (two.pilot_instant_d <= 8))
    assert np.array_equal(two.pilot_instant_c, two.pilot_c + 9)
    with pytest.raises(ValueError):
        estimation_statistics(drop, "oracle")


def test_condition_guard():
    with pytest.raises(EstimationError):
        hermitian_inverse(np.array([[1.0, 1.0], [1.0, 1.0]]))
    inv = hermitian_inverse(np.array([[2.0, 0.5], [0.5, 1.0]]))
    assert np.allclose(inv @ np.array([[2.0, 0.5], [0.5, 1.0]]), np.eye(2))


# ------------------------------------------------------------------ realizations

@pytest.mark.parametrize("scheme", ["two_phase", "benchmark"])
def test_estimate_moments_and_orthogonality(scheme):
    cfg = small_profile(velocity=kmh_to_ms(60))
    drop = build_drop(cfg, 21, 0)
    est = estimation_statistics(drop, scheme)
    rng = np.random.default_rng(0)
    m, k = 0, 1
    gh, err = [], []
    for _ in range(20):
        r = realize(drop, est, rng, 5000)
        gh.append(r.ghat[:, m, k])
        err.append(r.state.total()[:, m, k] - r.ghat[:, m, k])
    gh, err = np.concatenate(gh), np.concatenate(err)
    T = gh.shape[0]
    for x, y, target in ((gh, gh, est.Q[m, k]), (gh, err, np.zeros((2, 2)))):
        prod = x[:, :, None] * y[:, None, :].conj()
        se = prod.std(axis=0) / np.sqrt(T)
        assert np.all(np.abs(prod.mean(axis=0) - target) <= 3 * se)


def test_noise_free_estimates_plus_noise_covariance():
    drop = build_drop(small_profile(), 21, 0)
    est = estimation_statistics(drop)
    rng = np.random.default_rng(1)
    gh = np.concatenate([realize(drop, est, rng, 5000, noise=False).ghat for _ in range(10)])
    S = np.einsum("tmka,tmkb->mkab", gh, gh.conj()) / gh.shape[0]
    total = _tr(S + pilot_noise_cov(est, drop.cfg.sigma2))
    assert np.allclose(total, est.q_traces(), rtol=0.05)


def test_benchmark_helper():
    drop = build_drop(small_profile(), 2, 0)
    est, closed, mc = benchmark_mmse(drop, np.random.default_rng(0), 2000)
    assert est.scheme == "benchmark"
    assert mc == pytest.approx(closed, rel=0.05)
    assert benchmark_mmse(drop)[2] is None
