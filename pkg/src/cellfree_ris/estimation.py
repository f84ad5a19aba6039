"""Uplink pilot power control, pilot assignment and MMSE channel estimation.

Two schemes are provided:

* ``two_phase``: a RIS-OFF sub-phase estimates the direct channels at
  instants ``1..tau_p``, then a RIS-ON sub-phase estimates the aggregate
  cascaded channel at instants ``tau_p+1..2tau_p`` after the direct
  contribution has been removed. Estimates refer to ``lam = 2 tau_p + 1``.
* ``benchmark``: single-phase MMSE of the aggregate channel with equal pilot
  power, estimates referring to ``tau_p + 1``.

Both produce an :class:`EstimationResult`. The benchmark fills the
direct-channel slots with its joint statistics and leaves the cascaded
slots at zero, so downstream SE code handles both uniformly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelState, Drop, age_fresh, crandn, draw_emi, draw_state, temporal_corr

COND_LIMIT = 1e12


class EstimationError(np.linalg.LinAlgError):
    pass


def hermitian_inverse(a: np.ndarray) -> np.ndarray:
    """Inverse of a stack of Hermitian positive-definite matrices with a condition guard."""
    cond = np.linalg.cond(a)
    if np.any(~np.isfinite(cond)) or np.any(cond > COND_LIMIT):
        raise EstimationError(f"ill-conditioned MMSE system (cond={np.max(cond):.3e})")
    eye = np.broadcast_to(np.eye(a.shape[-1]), a.shape)
    inv = np.linalg.solve(a, eye)
    return 0.5 * (inv + np.conj(np.swapaxes(inv, -1, -2)))


def _tr(a):
    return np.real(np.trace(a, axis1=-2, axis2=-1))


# ---------------------------------------------------------------- pilots

def pilot_power_control(delta_x: np.ndarray, p_p: float) -> np.ndarray:
    """Fractional pilot powers proportional to each user's summed covariance trace.

    ``delta_x`` is (M, K, N, N); the powers sum to ``K * p_p``.
    """
    per_user = _tr(delta_x).sum(axis=0)
    K = per_user.size
    return per_user / per_user.sum() * K * p_p


def prime_aps(delta_x: np.ndarray) -> np.ndarray:
    """Index of the AP with the largest covariance trace for every user."""
    return np.argmax(_tr(delta_x), axis=0)


def assign_pilots(delta_x: np.ndarray, powers: np.ndarray, tau_p: int):
    """Greedy pilot assignment at each user's prime AP.

    The first ``tau_p`` users take pilots ``0..tau_p-1``; every later user
    joins the pilot whose current users add the least interference at its
    prime AP. Ties go to the lowest pilot index. Returns ``(pilot, prime)``.
    """
    tr = _tr(delta_x)
    K = tr.shape[1]
    prime = np.argmax(tr, axis=0)
    pilot = np.empty(K, dtype=int)
    members: list[list[int]] = [[] for _ in range(tau_p)]
    for k in range(K):
        if k < tau_p:
            t = k
        else:
            load = [powers[k] * tr[prime[k], S].sum() for S in members]
            t = int(np.argmin(load))
        pilot[k] = t
        members[t].append(k)
    return pilot, prime


def coset_matrix(pilot: np.ndarray) -> np.ndarray:
    """``same[k, k']`` is True when the two users share a pilot."""
    return pilot[:, None] == pilot[None, :]


@dataclass(frozen=True)
class PilotPlan:
    """Pilot powers (W), pilot indices (0-based) and prime APs of both sub-phases."""

    power_d: np.ndarray
    power_c: np.ndarray
    pilot_d: np.ndarray
    pilot_c: np.ndarray
    prime_d: np.ndarray
    prime_c: np.ndarray

    @property
    def coset_d(self) -> np.ndarray:
        return coset_matrix(self.pilot_d)

    @property
    def coset_c(self) -> np.ndarray:
        return coset_matrix(self.pilot_c)


def make_pilot_plan(drop: Drop) -> PilotPlan:
    cfg, corr = drop.cfg, drop.corr
    p_d = pilot_power_control(corr.Delta_d, cfg.p_p)
    pil_d, prime_d = assign_pilots(corr.Delta_d, p_d, cfg.tau_p)
    if drop.J:
        p_c = pilot_power_control(corr.Delta_c, cfg.p_p)
        pil_c, prime_c = assign_pilots(corr.Delta_c, p_c, cfg.tau_p)
    else:
        p_c = np.zeros(drop.K)
        pil_c, prime_c = np.arange(drop.K) % cfg.tau_p, np.zeros(drop.K, dtype=int)
    return PilotPlan(p_d, p_c, pil_d, pil_c, prime_d, prime_c)


# ---------------------------------------------------------------- statistics

@dataclass(frozen=True)
class EstimationResult:
    """Drop-level estimate statistics.

    ``R_hat_x``, ``Psi_x``, ``Q_x`` are (M, K, N, N) for ``x`` in ``d``/``c``;
    ``same_x`` are (K, K) coset masks; ``pilot_instant_x`` are the absolute
    (1-based) pilot instants; ``lam`` is the reference instant of the
    estimates. ``power_x`` are the pilot powers used in each sub-phase.
    """

    scheme: str
    lam: int
    R_hat_d: np.ndarray
    Psi_d: np.ndarray
    Q_d: np.ndarray
    R_hat_c: np.ndarray
    Psi_c: np.ndarray
    Q_c: np.ndarray
    same_d: np.ndarray
    same_c: np.ndarray
    pilot_d: np.ndarray
    pilot_c: np.ndarray
    pilot_instant_d: np.ndarray
    pilot_instant_c: np.ndarray
    power_d: np.ndarray
    power_c: np.ndarray
    plan: PilotPlan | None = None

    @property
    def n_phases(self) -> int:
        return 2 if self.scheme == "two_phase" else 1

    @property
    def Q(self) -> np.ndarray:
        return self.Q_d + self.Q_c

    def q_traces(self) -> np.ndarray:
        """``tr(Q_d + Q_c)`` per (m, k), shape (M, K)."""
        return _tr(self.Q)

    def qbar_traces(self, part: str) -> np.ndarray:
        """``tr(R_mk' (R_mk Psi_mk)^H)`` for coset pairs, zero elsewhere; (M, K, K')."""
        R = self.R_hat_d if part == "d" else self.R_hat_c
        Psi = self.Psi_d if part == "d" else self.Psi_c
        same = self.same_d if part == "d" else self.same_c
        # tr(R_mk' Psi_mk R_mk) with Psi, R Hermitian
        t = np.einsum("mjab,mkbc,mkca->mkj", R, Psi, R)
        return np.real(t) * same[None, :, :]


def mmse_statistics(target: np.ndarray, powers: np.ndarray, same: np.ndarray,
                    extra_cov: np.ndarray, sigma2: float, rho_pilot: np.ndarray):
    """LMMSE statistics for estimates from a pilot-projected signal.

    ``target`` (M, K, N, N) is the covariance of each user's channel part being
    estimated; users sharing a pilot superimpose with powers ``powers``.
    ``extra_cov`` (M, N, N) is any additional interference covariance (EMI).
    Returns ``R_hat``, ``Psi``, ``Q`` with ``Q = R_hat (R_hat Psi)^H``.
    """
    M, K, N, _ = target.shape
    load = np.einsum("kj,j,mjab->mkab", same.astype(float), powers, target)
    cov_y = load + extra_cov[:, None] + sigma2 * np.eye(N)
    Psi = hermitian_inverse(cov_y)
    R_hat = (np.sqrt(powers) * rho_pilot)[None, :, None, None] * target
    Q = R_hat @ np.conj(np.swapaxes(R_hat @ Psi, -1, -2))
    Q = 0.5 * (Q + np.conj(np.swapaxes(Q, -1, -2)))
    return R_hat, Psi, Q


def two_phase_statistics(drop: Drop, plan: PilotPlan | None = None) -> EstimationResult:
    """Statistics of the two-phase estimator (direct then cascaded sub-phase)."""
    cfg, corr = drop.cfg, drop.corr
    plan = plan or make_pilot_plan(drop)
    lam = cfg.lam
    inst_d = plan.pilot_d + 1
    inst_c = plan.pilot_c + 1 + cfg.tau_p
    v = cfg.velocities
    rho_d, _ = temporal_corr(v, cfg.f_c, cfg.T_s, lam - inst_d)
    rho_c, _ = temporal_corr(v, cfg.f_c, cfg.T_s, lam - inst_c)
    M, N = drop.M, cfg.N
    Rd, Psid, Qd = mmse_statistics(corr.Delta_d, plan.power_d, plan.coset_d,
                                   np.zeros((M, N, N)), cfg.sigma2, rho_d)
    if drop.J:
        Rc, Psic, Qc = mmse_statistics(corr.Delta_c, plan.power_c, plan.coset_c,
                                       drop.emi_cov_ap, cfg.sigma2, rho_c)
    else:
        Rc = Psic = Qc = np.zeros_like(Qd)
    return EstimationResult("two_phase", lam, Rd, Psid, Qd, Rc, Psic, Qc,
                            plan.coset_d, plan.coset_c, plan.pilot_d, plan.pilot_c,
                            inst_d, inst_c, plan.power_d, plan.power_c, plan)


def benchmark_statistics(drop: Drop) -> EstimationResult:
    """Single-phase MMSE of the aggregate channel with equal pilot powers.

    Pilots follow the same greedy assignment, run on the aggregate covariance.
    """
    cfg, corr = drop.cfg, drop.corr
    K = drop.K
    powers = np.full(K, cfg.p_p)
    pilot, _ = assign_pilots(corr.Delta, powers, cfg.tau_p)
    lam = cfg.tau_p + 1
    inst = pilot + 1
    rho, _ = temporal_corr(cfg.velocities, cfg.f_c, cfg.T_s, lam - inst)
    same = coset_matrix(pilot)
    R, Psi, Q = mmse_statistics(corr.Delta, powers, same, drop.emi_cov_ap, cfg.sigma2, rho)
    zeros = np.zeros_like(Q)
    eye = np.eye(K, dtype=bool)
    return EstimationResult("benchmark", lam, R, Psi, Q, zeros, zeros, zeros, same, eye,
                            pilot, np.arange(K), inst, inst, powers, np.zeros(K))


def estimation_statistics(drop: Drop, scheme: str = "two_phase") -> EstimationResult:
    if scheme == "two_phase":
        return two_phase_statistics(drop)
    if scheme == "benchmark":
        return benchmark_statistics(drop)
    raise ValueError(f"unknown estimation scheme {scheme!r}")


def nmse(drop: Drop, est: EstimationResult) -> float:
    """Closed-form normalized MSE over all (AP, user) pairs."""
    delta = drop.corr.Delta
    return float(_tr(delta - est.Q_d - est.Q_c).sum() / _tr(delta).sum())


# ---------------------------------------------------------------- realizations

@dataclass
class Realization:
    """Per-trial channels at the reference instant and their estimates (T, M, K, N)."""

    state: ChannelState
    ghat_d: np.ndarray
    ghat_c: np.ndarray

    @property
    def ghat(self) -> np.ndarray:
        return self.ghat_d + self.ghat_c


def _project(weights: np.ndarray, y: np.ndarray, pilot: np.ndarray) -> np.ndarray:
    """``weights[m,k] @ y[:, m, pilot[k]]`` for every trial."""
    return np.einsum("mkab,tmkb->tmka", weights, y[:, :, pilot, :])


def _superimpose(x: np.ndarray, powers: np.ndarray, pilot: np.ndarray, tau_p: int):
    """Sum ``sqrt(p_k) x[:, :, k]`` over the users of each pilot -> (T, M, tau_p, N)."""
    onehot = np.zeros((pilot.size, tau_p))
    onehot[np.arange(pilot.size), pilot] = np.sqrt(powers)
    return np.einsum("tmka,kp->tmpa", x, onehot)


def _noise(rng, sigma2, shape):
    return np.sqrt(sigma2) * crandn(rng, shape)


def estimate_direct(drop: Drop, est: EstimationResult, state: ChannelState,
                    rng: np.random.Generator, noise: bool = True) -> np.ndarray:
    """Realized direct-channel estimates from the RIS-OFF sub-phase.

    With ``noise=False`` the thermal pilot noise is left out; its
    contribution is then available in closed form from :func:`pilot_noise_cov`.
    """
    cfg = drop.cfg
    pilots = age_fresh(drop, state, est.lam - est.pilot_instant_d, rng)
    y = _superimpose(pilots.g_d, est.power_d, est.pilot_d, cfg.tau_p)
    if noise:
        y = y + _noise(rng, cfg.sigma2, y.shape)
    return _project(est.R_hat_d @ est.Psi_d, y, est.pilot_d)


def _emi_at_aps(drop: Drop, state: ChannelState, rng, T):
    """``sum_j g_mj Theta_j N_j[t]`` for every pilot slot, (T, M, tau_p, N)."""
    emi = draw_emi(drop.corr, drop.sigma_j2, rng, size=(T, drop.cfg.tau_p))
    return np.einsum("tmjal,jl,tpjl->tmpa", state.g_mj, state.theta, emi)


def estimate_cascaded(drop: Drop, est: EstimationResult, state: ChannelState,
                      rng: np.random.Generator, noise: bool = True) -> np.ndarray:
    """Realized aggregate cascaded estimates from the RIS-ON sub-phase.

    The direct contribution is assumed removed exactly before projection.
    """
    cfg = drop.cfg
    T, M, K, N = state.g_d.shape
    if drop.J == 0:
        return np.zeros((T, M, K, N), dtype=complex)
    pilots = age_fresh(drop, state, est.lam - est.pilot_instant_c, rng)
    y = _superimpose(pilots.cascaded(), est.power_c, est.pilot_c, cfg.tau_p)
    y = y + _emi_at_aps(drop, state, rng, T)
    if noise:
        y = y + _noise(rng, cfg.sigma2, y.shape)
    return _project(est.R_hat_c @ est.Psi_c, y, est.pilot_c)


def estimate_benchmark(drop: Drop, est: EstimationResult, state: ChannelState,
                       rng: np.random.Generator, noise: bool = True) -> np.ndarray:
    """Realized single-phase estimates of the aggregate channel."""
    cfg = drop.cfg
    T = state.g_d.shape[0]
    pilots = age_fresh(drop, state, est.lam - est.pilot_instant_d, rng)
    y = _superimpose(pilots.total(), est.power_d, est.pilot_d, cfg.tau_p)
    if drop.J:
        y = y + _emi_at_aps(drop, state, rng, T)
    if noise:
        y = y + _noise(rng, cfg.sigma2, y.shape)
    return _project(est.R_hat_d @ est.Psi_d, y, est.pilot_d)


def pilot_noise_cov(est: EstimationResult, sigma2: float) -> np.ndarray:
    """Covariance (M, K, N, N) the thermal pilot noise adds to each estimate."""
    out = np.zeros_like(est.Q_d)
    for R, Psi in ((est.R_hat_d, est.Psi_d), (est.R_hat_c, est.Psi_c)):
        W = R @ Psi
        out = out + sigma2 * W @ np.conj(np.swapaxes(W, -1, -2))
    return out


def conditional_estimate(drop: Drop, est: EstimationResult, state: ChannelState) -> np.ndarray:
    """``E[ghat_mk | g_mk[lam]]``: the estimate averaged over everything else.

    Coset users, aging innovations, EMI and noise are independent of the
    user's own channel and have zero mean, leaving
    ``sqrt(p_k) rho_k[lam - t_k] W_mk g_mk[lam]`` per sub-phase. Shape (T, M, K, N).
    """
    cfg = drop.cfg
    v = cfg.velocities
    rho_d, _ = temporal_corr(v, cfg.f_c, cfg.T_s, est.lam - est.pilot_instant_d)
    c_d = np.sqrt(est.power_d) * rho_d
    if est.scheme == "two_phase":
        rho_c, _ = temporal_corr(v, cfg.f_c, cfg.T_s, est.lam - est.pilot_instant_c)
        c_c = np.sqrt(est.power_c) * rho_c
        parts = ((est.R_hat_d @ est.Psi_d, c_d, state.g_d),
                 (est.R_hat_c @ est.Psi_c, c_c, state.cascaded()))
    else:
        parts = ((est.R_hat_d @ est.Psi_d, c_d, state.total()),)
    out = 0
    for W, c, g in parts:
        out = out + c[None, None, :, None] * np.einsum("mkab,tmkb->tmka", W, g)
    return out


def realize(drop: Drop, est: EstimationResult, rng: np.random.Generator,
            trials: int, noise: bool = True) -> Realization:
    """Draw channels at the reference instant and run the estimator on them."""
    state = draw_state(drop, rng, trials)
    if est.scheme == "two_phase":
        gd = estimate_direct(drop, est, state, rng, noise)
        gc = estimate_cascaded(drop, est, state, rng, noise)
    else:
        gd = estimate_benchmark(drop, est, state, rng, noise)
        gc = np.zeros_like(gd)
    return Realization(state, gd, gc)


def benchmark_mmse(drop: Drop, rng: np.random.Generator | None = None, trials: int = 0):
    """Benchmark statistics, closed-form NMSE and (optionally) a Monte-Carlo NMSE."""
    est = benchmark_statistics(drop)
    mc = nmse_monte_carlo(drop, est, rng, trials) if trials else None
    return est, nmse(drop, est), mc


def nmse_monte_carlo(drop: Drop, est: EstimationResult, rng: np.random.Generator,
                     trials: int, batch: int = 500) -> float:
    """Empirical ``sum |g - ghat|^2 / sum |g|^2`` at the reference instant."""
    err = power = 0.0
    done = 0
    while done < trials:
        n = min(batch, trials - done)
        r = realize(drop, est, rng, n)
        g = r.state.total()
        err += float(np.sum(np.abs(g - r.ghat) ** 2))
        power += float(np.sum(np.abs(g) ** 2))
        done += n
    return err / power


ESTIMATION_CSV_HEADER = ("p_p_dBm", "velocity_kmh", "scheme", "nmse_closed_form", "nmse_monte_carlo")
