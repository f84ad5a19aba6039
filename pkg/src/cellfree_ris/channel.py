"""Small-scale fading draws, channel aging and EMI.

Arrays carry a leading trial axis ``T`` so that Monte-Carlo oracles can
vectorize over independent realizations. Complex Gaussians are built from
pairs of unit normals scaled by ``1/sqrt(2)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import j0

from .config import SPEED_OF_LIGHT, SystemConfig
from .correlation import CorrelationSet, build_correlation
from .topology import Topology, draw_topology


def crandn(rng: np.random.Generator, shape) -> np.ndarray:
    """Samples of CN(0, 1)."""
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return (re + 1j * im) * np.sqrt(0.5)


def temporal_corr(v, f_c: float, T_s: float, lag):
    """Jakes temporal correlation ``J0(2 pi f_D T_s lag)`` and ``sqrt(1 - rho^2)``.

    ``v`` and ``lag`` broadcast against each other; negative lags are allowed
    (the correlation is even in the lag).
    """
    f_d = np.asarray(v, dtype=float) * f_c / SPEED_OF_LIGHT
    rho = j0(2.0 * np.pi * f_d * T_s * np.asarray(lag, dtype=float))
    rho_bar = np.sqrt(np.clip(1.0 - rho ** 2, 0.0, None))
    return rho, rho_bar


def rho_table(cfg: SystemConfig, lags) -> tuple[np.ndarray, np.ndarray]:
    """Correlation per user and lag, both of shape (K, len(lags))."""
    lags = np.atleast_1d(np.asarray(lags))
    return temporal_corr(cfg.velocities[:, None], cfg.f_c, cfg.T_s, lags[None, :])


def emi_power(topo: Topology, cfg: SystemConfig) -> np.ndarray:
    """EMI power sigma_j^2 per RIS, shape (J,); zeros when EMI is disabled."""
    if not cfg.emi_enabled or topo.J == 0:
        return np.zeros(topo.J)
    num = cfg.p_u * cfg.p_d * topo.beta_c_ap_ris.sum(axis=0) * topo.beta_c_user_ris.sum(axis=0)
    return np.sqrt(num / (topo.M * topo.K * cfg.rho_linear ** 2))


def draw_emi(corr: CorrelationSet, sigma_j2: np.ndarray, rng: np.random.Generator,
             size=()) -> np.ndarray:
    """EMI vectors ``n_j ~ CN(0, A sigma_j^2 R_j)``, shape ``size + (J, L)``."""
    size = tuple(np.atleast_1d(size)) if size != () else ()
    J, L = corr.R_ris.shape[:2]
    z = crandn(rng, size + (J, L))
    scale = np.sqrt(corr.area * np.asarray(sigma_j2, dtype=float))
    return scale[:, None] * np.einsum("jab,...jb->...ja", corr.R_ris_sqrt, z)


@dataclass(frozen=True)
class Drop:
    """Everything static within one drop: config, geometry, correlations, EMI power."""

    cfg: SystemConfig
    topo: Topology
    corr: CorrelationSet
    sigma_j2: np.ndarray
    emi_cov_ap: np.ndarray = field(repr=False)
    emi_user: np.ndarray = field(repr=False)

    @property
    def M(self) -> int:
        return self.topo.M

    @property
    def K(self) -> int:
        return self.topo.K

    @property
    def J(self) -> int:
        return self.topo.J


def make_drop(cfg: SystemConfig, topo: Topology, corr: CorrelationSet | None = None) -> Drop:
    """Bundle a topology with its correlations and EMI statistics.

    ``emi_cov_ap[m] = sum_j beta_mj sigma_j^2 tr(T_j) R_mj,r`` is the EMI
    covariance seen at AP ``m``; ``emi_user[k] = sum_j beta_kj sigma_j^2 tr(T_j)``
    is the downlink EMI power at user ``k``.
    """
    if corr is None:
        corr = build_correlation(topo, cfg)
    s2 = emi_power(topo, cfg)
    w = topo.beta_c_ap_ris * (s2 * corr.trT)[None, :]
    emi_cov_ap = np.einsum("mj,mjab->mab", w, corr.R_ap_ris) if topo.J else np.zeros(
        (topo.M, cfg.N, cfg.N))
    emi_user = topo.beta_c_user_ris @ (s2 * corr.trT) if topo.J else np.zeros(topo.K)
    return Drop(cfg, topo, corr, s2, emi_cov_ap, emi_user)


def draw_drop(cfg: SystemConfig, rng: np.random.Generator) -> Drop:
    return make_drop(cfg, draw_topology(cfg, rng))


@dataclass
class ChannelState:
    """Channel realizations at one instant.

    ``g_d`` (T, M, K, N) direct channels, ``g_mj`` (T, M, J, N, L) static
    RIS-AP channels, ``g_kj`` (T, K, J, L) user-RIS channels.
    """

    g_d: np.ndarray
    g_mj: np.ndarray
    g_kj: np.ndarray
    theta: np.ndarray

    def cascaded_per_ris(self) -> np.ndarray:
        """``g_mj Theta_j g_kj``, shape (T, M, K, J, N)."""
        return np.einsum("tmjal,jl,tkjl->tmkja", self.g_mj, self.theta, self.g_kj)

    def cascaded(self) -> np.ndarray:
        """Aggregate cascaded channel summed over RISs, shape (T, M, K, N)."""
        return np.einsum("tmjal,jl,tkjl->tmka", self.g_mj, self.theta, self.g_kj)

    def total(self) -> np.ndarray:
        return self.g_d + self.cascaded()


def draw_state(drop: Drop, rng: np.random.Generator, trials: int) -> ChannelState:
    """Stationary channel state: direct, RIS-AP (Kronecker) and user-RIS parts."""
    topo, corr = drop.topo, drop.corr
    M, K, J, N, L = topo.M, topo.K, topo.J, drop.cfg.N, drop.cfg.L
    v_d = crandn(rng, (trials, M, K, N))
    g_d = np.sqrt(topo.beta_d)[None, :, :, None] * np.einsum(
        "mkab,tmkb->tmka", corr.R_ap_user_sqrt, v_d)
    V = crandn(rng, (trials, M, J, N, L))
    # R_t^{1/2} = sqrt(A) R_j^{1/2}
    g_mj = (np.sqrt(topo.beta_c_ap_ris * corr.area)[None, :, :, None, None]
            * np.einsum("mjab,tmjbc,jcl->tmjal", corr.R_ap_ris_sqrt, V, corr.R_ris_sqrt))
    v_kj = crandn(rng, (trials, K, J, L))
    g_kj = (np.sqrt(topo.beta_c_user_ris * corr.area)[None, :, :, None]
            * np.einsum("jab,tkjb->tkja", corr.R_ris_sqrt, v_kj))
    return ChannelState(g_d, g_mj, g_kj, corr.theta)


def draw_innovation(drop: Drop, rng: np.random.Generator, trials: int):
    """Fresh aging innovations ``e_d`` (T, M, K, N) and ``e_kj`` (T, K, J, L).

    They share the covariances of ``g_d`` and ``g_kj``; the cascaded innovation
    is ``g_mj Theta_j e_kj``.
    """
    topo, corr = drop.topo, drop.corr
    M, K, J, N, L = topo.M, topo.K, topo.J, drop.cfg.N, drop.cfg.L
    e_d = np.sqrt(topo.beta_d)[None, :, :, None] * np.einsum(
        "mkab,tmkb->tmka", corr.R_ap_user_sqrt, crandn(rng, (trials, M, K, N)))
    e_kj = np.sqrt(topo.beta_c_user_ris * corr.area)[None, :, :, None] * np.einsum(
        "jab,tkjb->tkja", corr.R_ris_sqrt, crandn(rng, (trials, K, J, L)))
    return e_d, e_kj


def age(state: ChannelState, rho: np.ndarray, rho_bar: np.ndarray, e_d, e_kj) -> ChannelState:
    """Evolve a state by per-user correlation ``rho`` (K,) with given innovations."""
    g_d = rho[None, None, :, None] * state.g_d + rho_bar[None, None, :, None] * e_d
    g_kj = rho[None, :, None, None] * state.g_kj + rho_bar[None, :, None, None] * e_kj
    return ChannelState(g_d, state.g_mj, g_kj, state.theta)


def age_fresh(drop: Drop, state: ChannelState, lag_per_user, rng: np.random.Generator):
    """Channel at per-user lag from ``state`` with freshly drawn innovations."""
    cfg = drop.cfg
    rho, rho_bar = temporal_corr(cfg.velocities, cfg.f_c, cfg.T_s, lag_per_user)
    e_d, e_kj = draw_innovation(drop, rng, state.g_d.shape[0])
    return age(state, rho, rho_bar, e_d, e_kj)


@dataclass
class ChannelBlock:
    """Channel realizations over a list of instants of one resource block.

    ``instants`` (I,) are absolute indices; every instant is tied to the
    initial state at instant 0. Shapes: ``g_d`` (T, I, M, K, N); ``g_c``
    (T, I, M, K, J, N); ``g_mj`` (T, M, J, N, L); ``g_kj`` (T, I, K, J, L);
    ``emi`` (T, I, J, L); ``rho_temporal`` (K, I); ``sigma_j2`` (J,).
    """

    instants: np.ndarray
    g_d: np.ndarray
    g_c: np.ndarray
    g_mj: np.ndarray
    g_kj: np.ndarray
    emi: np.ndarray
    rho_temporal: np.ndarray
    sigma_j2: np.ndarray

    @property
    def g(self) -> np.ndarray:
        """Aggregate channel ``g_d + sum_j g_c``, shape (T, I, M, K, N)."""
        return self.g_d + self.g_c.sum(axis=-2)


def draw_block(drop: Drop, rng: np.random.Generator, instants=None,
               trials: int = 1) -> ChannelBlock:
    """Draw a resource block: the state at instant 0 plus aged copies.

    ``g[n] = rho[n] g[0] + rho_bar[n] e[n]`` with independent innovations per
    instant; ``g_mj`` stays fixed over the block.
    """
    cfg = drop.cfg
    if instants is None:
        instants = np.arange(cfg.tau_c + 1)
    instants = np.atleast_1d(np.asarray(instants, dtype=int))
    state = draw_state(drop, rng, trials)
    rho, rho_bar = rho_table(cfg, instants)
    g_d, g_c, g_kj, emi = [], [], [], []
    for i, n in enumerate(instants):
        if n == 0:
            s = state
        else:
            e_d, e_kj = draw_innovation(drop, rng, trials)
            s = age(state, rho[:, i], rho_bar[:, i], e_d, e_kj)
        g_d.append(s.g_d)
        g_c.append(s.cascaded_per_ris())
        g_kj.append(s.g_kj)
        emi.append(draw_emi(drop.corr, drop.sigma_j2, rng, size=(trials,)))
    return ChannelBlock(instants, np.stack(g_d, 1), np.stack(g_c, 1), state.g_mj,
                        np.stack(g_kj, 1), np.stack(emi, 1), rho, drop.sigma_j2)
