"""Downlink conjugate beamforming: fractional power control, closed-form SINR and MC oracle.

AP ``m`` transmits ``sqrt(p_d) sum_k' sqrt(eta_mk') conj(ghat_mk'[lam]) q_k'``;
user ``k`` decodes from channel statistics only (UatF).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import Drop, draw_innovation, temporal_corr
from .estimation import EstimationResult, conditional_estimate, pilot_noise_cov, realize
from .uplink import ControlVariateMean, data_instants, spectral_efficiency


def _tr(a):
    return np.real(np.trace(a, axis1=-2, axis2=-1))


def downlink_power_control(drop: Drop, est: EstimationResult, alpha: float | None = None) -> np.ndarray:
    """Fractional coefficients ``eta_mk`` (M, K) meeting every per-AP budget with equality."""
    if alpha is None:
        alpha = drop.cfg.alpha_dl
    s = drop.corr.delta_traces().sum(axis=0) ** (-alpha)  # (K,)
    q = est.q_traces()  # (M, K)
    return s[None, :] / (q @ s)[:, None]


@dataclass(frozen=True)
class DownlinkTerms:
    """Drop-level closed-form ingredients.

    ``eta`` (M, K); ``ds_gain`` (K,) ``sum_m sqrt(eta_mk) tr(Q_mk)``;
    ``ui_static`` (K,) the aging-independent interference sum;
    ``ui_coset`` (K,) the coset part that scales with the user's own ``rho_k^2``;
    ``emi_power`` (K,) EMI received at each user; ``rho`` (K, I).
    """

    eta: np.ndarray
    ds_gain: np.ndarray
    ui_static: np.ndarray
    ui_coset: np.ndarray
    emi_power: np.ndarray
    p_d: float
    sigma2: float
    instants: np.ndarray
    rho: np.ndarray
    rho_bar: np.ndarray
    tau_c: int
    alpha: float

    def ui_power(self) -> np.ndarray:
        """``sum_k' E|sum_m sqrt(eta_mk') g_mk^T[n] conj(ghat_mk')|^2``, shape (K, I)."""
        return self.ui_static[:, None] + self.rho ** 2 * self.ui_coset[:, None]


def build_downlink_terms(drop: Drop, est: EstimationResult, alpha: float | None = None,
                         eta: np.ndarray | None = None) -> DownlinkTerms:
    cfg, corr = drop.cfg, drop.corr
    if alpha is None:
        alpha = cfg.alpha_dl
    if eta is None:
        eta = downlink_power_control(drop, est, alpha)
    se = np.sqrt(eta)
    ds_gain = np.sum(se * est.q_traces(), axis=0)
    # tr(Q_mk' Delta_mk): [m, k', k]
    t = np.real(np.einsum("mjab,mkba->mjk", est.Q, corr.Delta))
    ui_static = np.einsum("mj,mjk->k", eta, t)
    # coset traces tr(Qbar_mk'k) indexed [m, k', k]
    qd, qc = est.qbar_traces("d"), est.qbar_traces("c")
    sd = np.einsum("mj,mjk->jk", se, qd)
    sc = np.einsum("mj,mjk->jk", se, qc)
    both = est.same_d & est.same_c
    # off-diagonal AP pairs only: full product minus the m = n part
    h = 2 * np.real(sd * np.conj(sc)) - 2 * np.einsum("mj,mjk->jk", eta, np.real(qd * np.conj(qc)))
    ui_coset = (np.sum(np.where(both, h, 0.0), axis=0)
                + np.sum(np.abs(sd) ** 2, axis=0) + np.sum(np.abs(sc) ** 2, axis=0))
    inst = data_instants(cfg, est)
    rho, rho_bar = temporal_corr(cfg.velocities[:, None], cfg.f_c, cfg.T_s,
                                 (inst - est.lam)[None, :])
    return DownlinkTerms(eta, ds_gain, ui_static, ui_coset, drop.emi_user.copy(), cfg.p_d,
                         cfg.sigma2, inst, rho, rho_bar, cfg.tau_c, float(alpha))


def downlink_sinr_closed(terms: DownlinkTerms) -> np.ndarray:
    """Closed-form SINR per user and data instant, shape (K, I)."""
    num = terms.p_d * terms.rho ** 2 * terms.ds_gain[:, None] ** 2
    den = terms.p_d * terms.ui_power() - num + terms.emi_power[:, None] + terms.sigma2
    return np.maximum(num / den, 0.0)


def downlink_se(terms: DownlinkTerms) -> np.ndarray:
    """Per-user downlink SE (bit/s/Hz), shape (K,)."""
    return spectral_efficiency(downlink_sinr_closed(terms), terms.tau_c)


def per_ap_power(drop: Drop, est: EstimationResult, eta: np.ndarray) -> np.ndarray:
    """Normalized per-AP transmit power ``sum_k eta_mk tr(Q_mk)``, shape (M,)."""
    return np.sum(eta * est.q_traces(), axis=1)


# ---------------------------------------------------------------- Monte Carlo

@dataclass
class DownlinkMoments:
    """Sample moments of ``Y_kk' = sum_m sqrt(eta_mk') g_mk^T ghat_mk'^*``.

    ``Y`` uses the channel at ``lam`` and ``Z`` the aging innovation, so the
    effective gain at instant ``n`` is ``rho_k Y + rho_bar_k Z``. Second
    moments are summed over ``k'``; ``mean_y`` is the desired-gain mean;
    ``emi_*`` are the EMI powers at the user for the three aging parts.
    """

    yy: np.ndarray
    zz: np.ndarray
    yz: np.ndarray
    mean_y: np.ndarray
    emi_yy: np.ndarray
    emi_zz: np.ndarray
    emi_yz: np.ndarray
    trials: int


def _conditional_power(drop: Drop, gh: np.ndarray, g_mj: np.ndarray, theta: np.ndarray,
                       eta: np.ndarray) -> np.ndarray:
    """``E[|Y_kk'|^2 | ghat, g_mj]`` for a user channel independent of ``ghat_k'``, (T, K, K')."""
    corr = drop.corr
    direct = np.real(np.einsum("mq,tmqa,mkab,tmqb->tkq", eta, np.conj(gh), corr.Delta_d, gh))
    if drop.J == 0:
        return direct
    s = np.einsum("mq,tmqa,tmral,rl->tqrl", np.sqrt(eta), np.conj(gh), g_mj, theta)
    cov = drop.topo.beta_c_user_ris * corr.area  # (K, J)
    casc = np.real(np.einsum("kr,tqrl,rlp,tqrp->tkq", cov, s, corr.R_ris, np.conj(s)))
    return direct + casc


def downlink_monte_carlo(drop: Drop, est: EstimationResult, terms: DownlinkTerms,
                         rng: np.random.Generator, trials: int, batch: int = 500) -> DownlinkMoments:
    """Accumulate downlink moments over ``trials`` realizations.

    Channel estimates, RIS-AP channels and pilot-sharing users are drawn.
    Averaged in closed form, given the drawn estimates: thermal pilot
    noise, the channels of users outside the coset (independent of the
    estimate they multiply) and the aging innovation. The desired-gain
    mean uses the conditional estimate with per-AP ``|g_mk|^2`` control
    variates.
    """
    cfg, corr = drop.cfg, drop.corr
    K = drop.K
    se = np.sqrt(terms.eta)
    nz = pilot_noise_cov(est, cfg.sigma2)
    C = corr.area * drop.sigma_j2[:, None, None] * corr.R_ris
    coset = est.same_d | est.same_c  # [k, k']
    yy = np.zeros(K)
    zz = np.zeros(K)
    ey = np.zeros(K)
    cv = ControlVariateMean(_tr(corr.Delta).T)
    cv_emi = ControlVariateMean(drop.topo.beta_c_user_ris * corr.area * drop.cfg.L)
    done = 0
    while done < trials:
        T = min(batch, trials - done)
        r = realize(drop, est, rng, T, noise=False)
        g = r.state.total()
        gh = r.ghat
        cond = _conditional_power(drop, gh, r.state.g_mj, r.state.theta, terms.eta)
        noise_part = np.real(np.einsum("mj,tmka,mjab,tmkb->tkj", terms.eta, np.conj(g), nz, g))
        Y = np.einsum("mj,tmka,tmja->tkj", se, g, np.conj(gh))
        yy += np.sum(np.where(coset[None], np.abs(Y) ** 2, cond) + noise_part, axis=(0, 2))
        # the innovation is independent of every estimate
        e_d, e_kj = draw_innovation(drop, rng, T)
        e = e_d + np.einsum("tmjal,jl,tkjl->tmka", r.state.g_mj, r.state.theta, e_kj)
        zz += np.sum(cond, axis=(0, 2))
        zz += np.real(np.einsum("mj,tmka,mjab,tmkb->k", terms.eta, np.conj(e), nz, e))
        gc = conditional_estimate(drop, est, r.state)
        cv.add(np.einsum("tmka,tmka->tkm", g, np.conj(gc)),
               np.sum(np.abs(g) ** 2, axis=-1).transpose(0, 2, 1))
        if drop.J:
            a = r.state.theta[None, None] * r.state.g_kj
            cv_emi.add(np.real(np.einsum("tkjl,jlp,tkjp->tkj", a, C, np.conj(a))),
                       np.sum(np.abs(r.state.g_kj) ** 2, axis=-1))
        done += T
    mean_y = np.sum(se.T * np.real(cv.estimate()), axis=1)
    if drop.J:
        ey = np.sum(cv_emi.estimate(), axis=1)
    return DownlinkMoments(yy / trials, zz / trials, np.zeros(K), mean_y,
                           ey, ey.copy(), np.zeros(K), trials)


def downlink_components_mc(terms: DownlinkTerms, mom: DownlinkMoments) -> dict[str, np.ndarray]:
    """Sample desired, interference and EMI powers, each (K, I)."""
    r, rb = terms.rho, terms.rho_bar
    ds = terms.p_d * r ** 2 * mom.mean_y[:, None] ** 2
    ui = terms.p_d * (r ** 2 * mom.yy[:, None] + rb ** 2 * mom.zz[:, None]
                      + 2 * r * rb * mom.yz[:, None])
    emi = r ** 2 * mom.emi_yy[:, None] + rb ** 2 * mom.emi_zz[:, None] + 2 * r * rb * mom.emi_yz[:, None]
    return {"ds": ds, "ui": ui, "emi": emi}


def downlink_components(terms: DownlinkTerms) -> dict[str, np.ndarray]:
    """Closed-form counterparts of :func:`downlink_components_mc`."""
    ds = terms.p_d * terms.rho ** 2 * terms.ds_gain[:, None] ** 2
    ui = terms.p_d * terms.ui_power()
    emi = np.broadcast_to(terms.emi_power[:, None], ds.shape)
    return {"ds": ds, "ui": ui, "emi": emi}


def downlink_sinr_mc(terms: DownlinkTerms, mom: DownlinkMoments) -> np.ndarray:
    c = downlink_components_mc(terms, mom)
    return np.maximum(c["ds"] / (c["ui"] - c["ds"] + c["emi"] + terms.sigma2), 0.0)


def downlink_se_mc(terms: DownlinkTerms, mom: DownlinkMoments) -> np.ndarray:
    return spectral_efficiency(downlink_sinr_mc(terms, mom), terms.tau_c)


DOWNLINK_CSV_HEADER = ("drop_id", "user", "alpha", "velocity_kmh", "se_closed", "se_mc")
