import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from cellfree_ris.channel import make_drop, temporal_corr
from cellfree_ris.config import kmh_to_ms, default_profile, small_profile
from cellfree_ris.downlink import (build_downlink_terms, downlink_components, downlink_monte_carlo,
                                   downlink_power_control, downlink_se, downlink_se_mc,
                                   downlink_sinr_closed, per_ap_power)
from cellfree_ris.estimation import estimation_statistics
from cellfree_ris.harness import build_drop
from cellfree_ris.topology import Topology


def _tr(a):
    return np.real(np.trace(a, axis1=-2, axis2=-1))


@settings(max_examples=20)
@given(st.integers(0, 10_000), st.floats(0, 1), st.sampled_from(["two_phase", "benchmark"]))
def test_per_ap_budget_met_with_equality(seed, alpha, scheme):
    drop = build_drop(default_profile(), seed, 0)
    est = estimation_statistics(drop, scheme)
    eta = downlink_power_control(drop, est, alpha)
    assert np.all(eta >= 0)
    assert np.allclose(per_ap_power(drop, est, eta), 1.0, rtol=1e-12)


def test_alpha_zero_ignores_own_statistics(default_drop):
    est = estimation_statistics(default_drop)
    eta = downlink_power_control(default_drop, est, 0.0)
    assert np.allclose(eta, eta[:, :1], rtol=1e-12)


def test_identical_users_get_equal_power():
    cfg = small_profile(tau_p=4)
    topo = build_drop(cfg, 2, 0).topo
    same = Topology(topo.ap_pos, np.repeat(topo.user_pos[:1], 4, axis=0), topo.ris_pos,
                    np.repeat(topo.beta_d[:, :1], 4, axis=1), topo.beta_c_ap_ris,
                    np.repeat(topo.beta_c_user_ris[:1], 4, axis=0))
    drop = make_drop(cfg, same)
    eta = downlink_power_control(drop, estimation_statistics(drop), 1.0)
    assert np.allclose(eta, eta[:, :1], rtol=1e-12)


def test_ris_free_reduction_matches_direct_oracle():
    # no RIS, no contamination: SINR = p_d rho^2 (sum_m sqrt(eta) trQ)^2 /
    # (p_d sum_k' sum_m eta_mk' tr(Q_mk' Delta_mk) + sigma2)
    cfg = small_profile(J=0, tau_p=4, velocity=kmh_to_ms(60))
    drop = build_drop(cfg, 12, 0)
    est = estimation_statistics(drop)
    terms = build_downlink_terms(drop, est)
    Q, D, eta = est.Q, drop.corr.Delta, terms.eta
    M, K = eta.shape
    inst = np.arange(est.lam, cfg.tau_c + 1)
    ref = np.zeros((K, inst.size))
    for k in range(K):
        rho = temporal_corr(cfg.velocities[k], cfg.f_c, cfg.T_s, inst - est.lam)[0]
        gain = sum(math.sqrt(eta[m, k]) * np.trace(Q[m, k]).real for m in range(M))
        ui = sum(eta[m, j] * np.trace(Q[m, j] @ D[m, k]).real for m in range(M) for j in range(K))
        ref[k] = cfg.p_d * rho ** 2 * gain ** 2 / (cfg.p_d * ui + cfg.sigma2)
    assert np.allclose(downlink_sinr_closed(terms), ref, rtol=1e-10)
    assert np.all(terms.emi_power == 0)


def test_emi_off_has_no_emi_power(small_drop):
    drop = make_drop(small_drop.cfg.replace(rho_sir_dB=math.inf), small_drop.topo)
    assert np.all(build_downlink_terms(drop, estimation_statistics(drop)).emi_power == 0)


def test_user_emi_independent_of_ap_count(small_drop):
    # replicating every AP leaves the per-AP averages, hence the EMI field, unchanged
    t = small_drop.topo
    doubled = Topology(np.vstack([t.ap_pos, t.ap_pos]), t.user_pos, t.ris_pos,
                       np.vstack([t.beta_d, t.beta_d]),
                       np.vstack([t.beta_c_ap_ris, t.beta_c_ap_ris]), t.beta_c_user_ris)
    big = make_drop(small_drop.cfg.replace(M=2 * t.M), doubled)
    a = build_downlink_terms(small_drop, estimation_statistics(small_drop)).emi_power
    b = build_downlink_terms(big, estimation_statistics(big)).emi_power
    assert np.allclose(a, b, rtol=1e-12) and np.all(a > 0)


def test_sinr_non_increasing_in_velocity():
    base = build_drop(default_profile(), 14, 0)
    s = []
    for v in (0, 60, 120):
        d = make_drop(base.cfg.replace(velocity=kmh_to_ms(v)), base.topo)
        s.append(downlink_sinr_closed(build_downlink_terms(d, estimation_statistics(d))))
    assert np.all(s[1] <= s[0] * (1 + 1e-12)) and np.all(s[2] <= s[1] * (1 + 1e-12))


def test_components_consistent(default_drop):
    terms = build_downlink_terms(default_drop, estimation_statistics(default_drop))
    c = downlink_components(terms)
    sinr = c["ds"] / (c["ui"] - c["ds"] + c["emi"] + terms.sigma2)
    assert np.allclose(sinr, downlink_sinr_closed(terms), rtol=1e-12)
    assert np.all(c["ui"] >= c["ds"] * (1 - 1e-12))


def test_se_nonnegative(default_drop):
    se = downlink_se(build_downlink_terms(default_drop, estimation_statistics(default_drop)))
    assert se.shape == (20,) and np.all(np.isfinite(se)) and np.all(se >= 0)


def test_monte_carlo_se_agrees(small_drop):
    est = estimation_statistics(small_drop)
    terms = build_downlink_terms(small_drop, est)
    mom = downlink_monte_carlo(small_drop, est, terms, np.random.default_rng(21), 10_000)
    se_mc, se = downlink_se_mc(terms, mom), downlink_se(terms)
    assert np.all(np.abs(se_mc / se - 1) <= 0.03)
