"""Uplink data phase: LSFD/MF combining, closed-form UatF SINR and its Monte-Carlo oracle.

Every AP applies local MR with its estimate ``ghat_mk[lam]``; the CPU
combines the per-AP statistics with weights ``a_k[n]``. All closed-form terms
are quadratic forms in ``a_k[n]`` built from traces of the estimation
statistics, so one :class:`UplinkTerms` per drop serves every instant and
both receivers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import Drop, draw_innovation, temporal_corr
from .estimation import EstimationResult, conditional_estimate, pilot_noise_cov, realize

RECEIVERS = ("lsfd", "mf")


def _tr(a):
    return np.real(np.trace(a, axis1=-2, axis2=-1))


def uplink_power_control(drop: Drop) -> np.ndarray:
    """Fractional coefficients ``eta_k`` proportional to ``sum_m tr(Delta_mk)``; they sum to K."""
    per_user = drop.corr.delta_traces().sum(axis=0)
    return per_user.size * per_user / per_user.sum()


def data_instants(cfg, est: EstimationResult) -> np.ndarray:
    """Data instants ``lam..tau_c`` (inclusive) of a scheme."""
    return np.arange(est.lam, cfg.tau_c + 1)


@dataclass(frozen=True)
class UplinkTerms:
    """Drop-level closed-form ingredients (index order user ``k``, user ``k'``, AP ``m``).

    ``b`` (K, M); ``upsilon`` (K, K', M); ``omega_d``, ``omega_c`` (K, K', M)
    with zeros outside the cosets; ``H`` (K, K', M, M) hollow; ``gamma`` and
    ``noise`` (K, M) diagonals of Gamma_k and Lambda_k. ``rho``/``rho_bar``
    are (K, I) aging factors at the data instants ``instants``.
    """

    b: np.ndarray
    upsilon: np.ndarray
    omega_d: np.ndarray
    omega_c: np.ndarray
    H: np.ndarray
    gamma: np.ndarray
    noise: np.ndarray
    same_d: np.ndarray
    same_c: np.ndarray
    eta: np.ndarray
    p_u: float
    instants: np.ndarray
    rho: np.ndarray
    rho_bar: np.ndarray
    tau_c: int

    @property
    def K(self) -> int:
        return self.b.shape[0]

    @property
    def M(self) -> int:
        return self.b.shape[1]

    def contamination(self) -> np.ndarray:
        """Coset part ``C_kk'`` (K, K', M, M) that scales with ``rho_k'^2``."""
        both = (self.same_d & self.same_c)[:, :, None, None]
        C = np.where(both, self.H, 0.0)
        C = C + self.omega_d[..., :, None] * np.conj(self.omega_d[..., None, :])
        C = C + self.omega_c[..., :, None] * np.conj(self.omega_c[..., None, :])
        return C

    def interference_matrices(self) -> np.ndarray:
        """``sum_k' E|UI_kk'|^2`` as Hermitian forms in ``a_k[n]``, shape (I, K, M, M)."""
        base = np.einsum("j,kjm->km", self.eta, self.upsilon)
        scale = self.eta[:, None] * self.rho ** 2  # (K', I)
        ui = np.einsum("ji,kjab->ikab", scale, self.contamination())
        idx = np.arange(self.M)
        ui[:, :, idx, idx] += base[None]
        return self.p_u * ui

    def denominator_matrices(self) -> np.ndarray:
        """Interference plus EMI plus noise forms, shape (I, K, M, M)."""
        D = self.interference_matrices()
        idx = np.arange(self.M)
        D[:, :, idx, idx] += (self.gamma + self.noise)[None]
        return D


def build_uplink_terms(drop: Drop, est: EstimationResult, eta: np.ndarray | None = None) -> UplinkTerms:
    """Closed-form uplink terms of one drop; ``eta=None`` selects fractional power control."""
    cfg, corr = drop.cfg, drop.corr
    if eta is None:
        eta = uplink_power_control(drop)
    Q = est.Q
    b = _tr(Q).T
    upsilon = np.real(np.einsum("mkab,mjba->kjm", Q, corr.Delta))
    omega_d = np.transpose(est.qbar_traces("d"), (1, 2, 0))
    omega_c = np.transpose(est.qbar_traces("c"), (1, 2, 0))
    H = (omega_d[..., :, None] * np.conj(omega_c[..., None, :])
         + omega_c[..., :, None] * np.conj(omega_d[..., None, :]))
    idx = np.arange(drop.M)
    H[..., idx, idx] = 0.0
    gamma = np.real(np.einsum("mab,mkba->km", drop.emi_cov_ap, Q))
    noise = cfg.sigma2 * b
    inst = data_instants(cfg, est)
    rho, rho_bar = temporal_corr(cfg.velocities[:, None], cfg.f_c, cfg.T_s,
                                 (inst - est.lam)[None, :])
    return UplinkTerms(b, upsilon, omega_d, omega_c, H, gamma, noise, est.same_d, est.same_c,
                       np.asarray(eta, dtype=float), cfg.p_u, inst, rho, rho_bar, cfg.tau_c)


def lsfd_weights(terms: UplinkTerms, D: np.ndarray | None = None) -> np.ndarray:
    """SINR-maximizing weights ``a_k[n] = D_k[n]^{-1} b_k``, shape (I, K, M)."""
    if D is None:
        D = terms.denominator_matrices()
    rhs = np.broadcast_to(terms.b.astype(D.dtype), D.shape[:-1])
    return np.linalg.solve(D, rhs[..., None])[..., 0]


def mf_weights(terms: UplinkTerms) -> np.ndarray:
    I = terms.instants.size
    return np.full((I, terms.K, terms.M), 1.0 / terms.M)


def quad(a: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Real part of ``a^H A a`` over the trailing axes."""
    return np.real(np.einsum("...m,...mn,...n->...", np.conj(a), A, a))


def uplink_components(terms: UplinkTerms, a: np.ndarray) -> dict[str, np.ndarray]:
    """Desired, total-interference, EMI and noise powers for weights ``a`` (I, K, M).

    Every entry has shape (I, K). ``ui`` is ``sum_k' E|UI_kk'|^2`` which
    includes the user's own term.
    """
    ds = terms.p_u * terms.eta[None, :] * terms.rho.T ** 2 * np.abs(
        np.einsum("ikm,km->ik", np.conj(a), terms.b)) ** 2
    ui = quad(a, terms.interference_matrices())
    emi = np.real(np.einsum("ikm,km->ik", np.abs(a) ** 2, terms.gamma))
    ns = np.real(np.einsum("ikm,km->ik", np.abs(a) ** 2, terms.noise))
    return {"ds": ds, "ui": ui, "emi": emi, "ns": ns}


def sinr_from_components(c: dict[str, np.ndarray]) -> np.ndarray:
    return c["ds"] / (c["ui"] - c["ds"] + c["emi"] + c["ns"])


def uplink_sinr_closed(terms: UplinkTerms, receiver: str = "lsfd") -> np.ndarray:
    """Closed-form SINR per user and data instant, shape (K, I)."""
    if receiver == "lsfd":
        D = terms.denominator_matrices()
        a = lsfd_weights(terms, D)
        # with a = D^{-1} b: SINR = c s / (1 - c s), s = b^H D^{-1} b
        s = np.real(np.einsum("km,ikm->ik", np.conj(terms.b), a))
        c = terms.p_u * terms.eta[None, :] * terms.rho.T ** 2
        sinr = c * s / (1.0 - c * s)
    elif receiver == "mf":
        sinr = sinr_from_components(uplink_components(terms, mf_weights(terms)))
    else:
        raise ValueError(f"unknown receiver {receiver!r}")
    return np.maximum(sinr, 0.0).T


def spectral_efficiency(sinr: np.ndarray, tau_c: int) -> np.ndarray:
    """``(1/tau_c) sum_n log2(1 + SINR[n])`` over the last axis."""
    return np.log2(1.0 + sinr).sum(axis=-1) / tau_c


def uplink_se(terms: UplinkTerms, receiver: str = "lsfd") -> np.ndarray:
    """Per-user uplink SE (bit/s/Hz), shape (K,)."""
    return spectral_efficiency(uplink_sinr_closed(terms, receiver), terms.tau_c)


# ---------------------------------------------------------------- Monte Carlo

class ControlVariateMean:
    """Running control-variate estimate of ``E[X]`` using ``Y`` with known mean.

    ``X`` may be complex; the regression coefficient is fitted per entry.
    """

    def __init__(self, y_mean: np.ndarray):
        self.y_mean = np.asarray(y_mean, dtype=float)
        self.n = 0
        self.sx = self.sy = self.sxy = self.syy = 0.0

    def add(self, x: np.ndarray, y: np.ndarray) -> None:
        self.n += x.shape[0]
        self.sx = self.sx + x.sum(axis=0)
        self.sy = self.sy + y.sum(axis=0)
        self.sxy = self.sxy + (x * y).sum(axis=0)
        self.syy = self.syy + (y * y).sum(axis=0)

    def estimate(self) -> np.ndarray:
        mx, my = self.sx / self.n, self.sy / self.n
        var_y = self.syy / self.n - my ** 2
        cov = self.sxy / self.n - mx * my
        coef = np.divide(cov, var_y, out=np.zeros_like(cov), where=var_y > 0)
        return mx - coef * (my - self.y_mean)


@dataclass
class UplinkMoments:
    """Sample moments of the per-AP MR outputs.

    With ``u_m[k,k'] = ghat_mk^H g_mk'[lam]`` and ``v_m[k,k'] = ghat_mk^H e_mk'``
    (aging innovation): ``S_uu``, ``S_vv``, ``S_uv`` are (K, K', M, M) second
    moments ``E[x_m conj(x_n)]``; ``mean_u`` (K, M) is the sample mean of
    ``u_m[k,k]`` computed with ``E[ghat_mk | g_mk]`` in place of the estimate
    and ``|g_mk|^2`` as control variate (same expectation, smaller variance); ``G_emi`` (K, M, M) and ``noise`` (K, M) are the data-phase
    EMI and thermal noise forms. Thermal pilot noise is averaged analytically;
    channels, innovations and EMI are drawn.
    """

    S_uu: np.ndarray
    S_vv: np.ndarray
    S_uv: np.ndarray
    mean_u: np.ndarray
    G_emi: np.ndarray
    noise: np.ndarray
    trials: int
    cross_mean: np.ndarray | None = None
    cross_sem: np.ndarray | None = None

    def interference_quad(self, a: np.ndarray, rho: np.ndarray, rho_bar: np.ndarray) -> np.ndarray:
        """``a_k^H E[x_kk' x_kk'^H] a_k`` at aging ``rho``, ``rho_bar`` (K', I) -> (I, K, K')."""
        ac = np.conj(a)
        q_uu = np.real(np.einsum("ikm,kjmn,ikn->ikj", ac, self.S_uu, a))
        q_vv = np.real(np.einsum("ikm,kjmn,ikn->ikj", ac, self.S_vv, a))
        q_uv = 2 * np.real(np.einsum("ikm,kjmn,ikn->ikj", ac, self.S_uv, a))
        r2, rb2, rrb = (rho ** 2).T, (rho_bar ** 2).T, (rho * rho_bar).T
        return r2[:, None, :] * q_uu + rb2[:, None, :] * q_vv + rrb[:, None, :] * q_uv


def uplink_monte_carlo(drop: Drop, est: EstimationResult, rng: np.random.Generator,
                       trials: int, batch: int = 500, a_check: np.ndarray | None = None,
                       rho_check: np.ndarray | None = None) -> UplinkMoments:
    """Accumulate uplink MR moments over ``trials`` channel realizations.

    ``a_check`` (K, M) with ``rho_check`` (rho, rho_bar) per user additionally
    records the per-trial cross term that separates ``E|UI_kk|^2 - |DS|^2``
    from ``E|BU|^2 + E|CA|^2`` (zero in expectation).
    """
    cfg, corr = drop.cfg, drop.corr
    M, K = drop.M, drop.K
    nz = pilot_noise_cov(est, cfg.sigma2)
    C = corr.area * drop.sigma_j2[:, None, None] * corr.R_ris  # (J, L, L)
    S_uu = np.zeros((K, K, M, M), complex)
    S_vv = np.zeros_like(S_uu)
    S_uv = np.zeros_like(S_uu)
    cv = ControlVariateMean(_tr(corr.Delta).T)
    G = np.zeros((K, M, M), complex)
    nsum = np.zeros((K, M))
    cross = []
    done = 0
    while done < trials:
        T = min(batch, trials - done)
        r = realize(drop, est, rng, T, noise=False)
        g = r.state.total()
        e_d, e_kj = draw_innovation(drop, rng, T)
        e = e_d + np.einsum("tmjal,jl,tkjl->tmka", r.state.g_mj, r.state.theta, e_kj)
        gh = r.ghat
        u = np.einsum("tmka,tmja->tkjm", np.conj(gh), g)
        v = np.einsum("tmka,tmja->tkjm", np.conj(gh), e)
        S_uu += np.einsum("tkjm,tkjn->kjmn", u, np.conj(u))
        S_vv += np.einsum("tkjm,tkjn->kjmn", v, np.conj(v))
        S_uv += np.einsum("tkjm,tkjn->kjmn", u, np.conj(v))
        # analytic pilot-noise part: same AP only, x^H Sigma x
        idx = np.arange(M)
        S_uu[:, :, idx, idx] += np.real(np.einsum("tmja,mkab,tmjb->kjm", np.conj(g), nz, g))
        S_vv[:, :, idx, idx] += np.real(np.einsum("tmja,mkab,tmjb->kjm", np.conj(e), nz, e))
        S_uv[:, :, idx, idx] += np.einsum("tmja,mkab,tmjb->kjm", np.conj(e), nz, g)
        # desired-signal mean via the conditional estimate (lower variance)
        gc = conditional_estimate(drop, est, r.state)
        cv.add(np.einsum("tmka,tmka->tkm", np.conj(gc), g), np.sum(np.abs(g) ** 2, axis=-1).transpose(0, 2, 1))
        if drop.J:
            h = np.einsum("tmka,tmjal,jl->tmkjl", np.conj(gh), r.state.g_mj, r.state.theta)
            G += np.einsum("tmkjl,jlp,tnkjp->kmn", h, C, np.conj(h))
            gCg = np.einsum("tmjal,jl,jlp,jp,tmjbp->tmjab", r.state.g_mj, r.state.theta, C,
                            np.conj(r.state.theta), np.conj(r.state.g_mj))
            G[:, idx, idx] += np.real(np.einsum("mkab,tmjba->km", nz, gCg))
        nsum += np.sum(np.abs(gh) ** 2, axis=(0, 3)).T + T * _tr(nz).T
        if a_check is not None:
            rho_k, rbar_k = rho_check
            xl = np.einsum("km,tkm->tk", np.conj(a_check), np.einsum("tkkm->tkm", u))
            xe = np.einsum("km,tkm->tk", np.conj(a_check), np.einsum("tkkm->tkm", v))
            cross.append(2 * rho_k * rbar_k * np.real(xl * np.conj(xe)))
        done += T
    mom = UplinkMoments(S_uu / trials, S_vv / trials, S_uv / trials, cv.estimate(),
                        G / trials, cfg.sigma2 * nsum / trials, trials)
    if cross:
        c = np.concatenate(cross, axis=0)
        mom.cross_mean = c.mean(axis=0)
        mom.cross_sem = c.std(axis=0, ddof=1) / np.sqrt(trials)
    return mom


def uplink_components_mc(terms: UplinkTerms, mom: UplinkMoments, a: np.ndarray) -> dict[str, np.ndarray]:
    """Sample counterparts of :func:`uplink_components`, shape (I, K) each."""
    ui = terms.p_u * np.einsum("j,ikj->ik", terms.eta,
                               mom.interference_quad(a, terms.rho, terms.rho_bar))
    ds = terms.p_u * terms.eta[None, :] * terms.rho.T ** 2 * np.abs(
        np.einsum("ikm,km->ik", np.conj(a), mom.mean_u)) ** 2
    emi = quad(a, mom.G_emi[None])
    ns = np.real(np.einsum("ikm,km->ik", np.abs(a) ** 2, mom.noise))
    return {"ds": ds, "ui": ui, "emi": emi, "ns": ns}


def uplink_sinr_mc(terms: UplinkTerms, mom: UplinkMoments, receiver: str = "lsfd") -> np.ndarray:
    """UatF SINR from sample moments using the closed-form receiver weights, (K, I)."""
    a = lsfd_weights(terms) if receiver == "lsfd" else mf_weights(terms)
    return np.maximum(sinr_from_components(uplink_components_mc(terms, mom, a)), 0.0).T


def uplink_se_mc(terms: UplinkTerms, mom: UplinkMoments, receiver: str = "lsfd") -> np.ndarray:
    return spectral_efficiency(uplink_sinr_mc(terms, mom, receiver), terms.tau_c)


UPLINK_CSV_HEADER = ("drop_id", "user", "receiver", "power_control", "velocity_kmh",
                     "se_closed", "se_mc")
