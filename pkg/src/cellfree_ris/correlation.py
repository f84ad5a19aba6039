"""Spatial correlation matrices and the static covariance algebra of a drop."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SystemConfig
from .topology import Topology

NEG_EIG_TOL = 1e-10


def psd_sqrtm(a: np.ndarray, tol: float = NEG_EIG_TOL) -> np.ndarray:
    """Hermitian square root of a PSD matrix (or a stack of them).

    Eigenvalues in ``[-tol * scale, 0)`` are clamped to zero, where ``scale``
    is ``max(1, largest eigenvalue)``; anything more negative raises
    ``np.linalg.LinAlgError``.
    """
    a = np.asarray(a)
    h = 0.5 * (a + np.conj(np.swapaxes(a, -1, -2)))
    w, v = np.linalg.eigh(h)
    scale = np.maximum(1.0, np.max(np.abs(w), axis=-1, keepdims=True))
    if np.any(w < -tol * scale):
        raise np.linalg.LinAlgError(f"matrix is not PSD (min eigenvalue {w.min():.3e})")
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)[..., None, :]) @ np.conj(np.swapaxes(v, -1, -2))


def ris_element_positions(L_h: int, L_v: int, d_H: float, d_V: float) -> np.ndarray:
    y = np.arange(L_h * L_v)
    return np.column_stack([np.zeros(y.size), (y % L_h) * d_H, (y // L_h) * d_V])


def ris_sinc_correlation(L_h: int, L_v: int, d_H: float, d_V: float,
                         wavelength: float) -> np.ndarray:
    """Isotropic-scattering RIS correlation ``sinc(2 |u_n - u_m| / wavelength)``.

    ``np.sinc`` is the normalized sinc, ``sin(pi x) / (pi x)``.
    """
    if L_h * L_v < 1 or d_H <= 0 or d_V <= 0:
        raise ValueError("need at least one element and positive spacings")
    u = ris_element_positions(L_h, L_v, d_H, d_V)
    dist = np.linalg.norm(u[:, None, :] - u[None, :, :], axis=-1)
    return np.sinc(2.0 * dist / wavelength)


def ap_exponential_correlation(N: int, r: float) -> np.ndarray:
    """Exponential model ``[R]_{a,b} = r^|a-b|``."""
    if not 0.0 <= r < 1.0:
        raise ValueError("correlation coefficient must lie in [0, 1)")
    idx = np.arange(N)
    return r ** np.abs(idx[:, None] - idx[None, :]).astype(float)


def build_T_j(R_j: np.ndarray, theta_diag: np.ndarray, area: float):
    """Return ``A^2 R^{1/2} Theta R Theta^H R^{1/2}`` and its (real) trace."""
    s = psd_sqrtm(R_j)
    rot = theta_diag[:, None] * R_j * np.conj(theta_diag)[None, :]
    T = area ** 2 * (s @ rot @ s)
    T = 0.5 * (T + T.conj().T)
    return T, float(np.real(np.trace(T)))


@dataclass(frozen=True)
class CorrelationSet:
    """Correlation matrices and covariances of one drop.

    Shapes: ``R_ris`` (J, L, L); ``theta`` (J, L) reflection coefficients;
    ``R_ap_user`` (M, K, N, N); ``R_ap_ris`` (M, J, N, N); ``T`` (J, L, L);
    ``trT`` (J,); ``Delta_d``, ``Delta_c``, ``Delta`` (M, K, N, N).
    """

    R_ris: np.ndarray
    R_ris_sqrt: np.ndarray
    area: float
    theta: np.ndarray
    R_ap_user: np.ndarray
    R_ap_user_sqrt: np.ndarray
    R_ap_ris: np.ndarray
    R_ap_ris_sqrt: np.ndarray
    T: np.ndarray
    trT: np.ndarray
    Delta_d: np.ndarray
    Delta_c: np.ndarray

    @property
    def Delta(self) -> np.ndarray:
        return self.Delta_d + self.Delta_c

    def delta_traces(self, part: str = "all") -> np.ndarray:
        """Real traces of Delta (``all``), Delta_d (``d``) or Delta_c (``c``), shape (M, K)."""
        mat = {"all": self.Delta, "d": self.Delta_d, "c": self.Delta_c}[part]
        return np.real(np.trace(mat, axis1=-2, axis2=-1))


def build_covariances(topo: Topology, R_ap_user, R_ap_ris, trT):
    """Direct, cascaded and aggregate channel covariances, each (M, K, N, N)."""
    delta_d = topo.beta_d[:, :, None, None] * R_ap_user
    # sum_j beta_mj beta_kj trT_j R_mj,r
    w = topo.beta_c_ap_ris[:, None, :] * topo.beta_c_user_ris[None, :, :] * trT[None, None, :]
    delta_c = np.einsum("mkj,mjab->mkab", w, R_ap_ris)
    return delta_d + delta_c, delta_d, delta_c


def build_correlation(topo: Topology, cfg: SystemConfig,
                      phases: np.ndarray | None = None) -> CorrelationSet:
    """Assemble every correlation matrix of a drop.

    ``phases`` optionally overrides the common phase shift per element, shape (J, L).
    """
    M, K, J, N, L = topo.M, topo.K, topo.J, cfg.N, cfg.L
    R_j = ris_sinc_correlation(cfg.L_h, cfg.L_v, cfg.element_width, cfg.element_height,
                               cfg.wavelength)
    R_ris = np.broadcast_to(R_j, (J, L, L)).copy()
    if phases is None:
        phases = np.full((J, L), cfg.theta_fixed)
    theta = cfg.ris_amplitude * np.exp(1j * np.asarray(phases, dtype=float))
    area = cfg.element_area
    T = np.zeros((J, L, L), dtype=complex)
    trT = np.zeros(J)
    for j in range(J):
        T[j], trT[j] = build_T_j(R_ris[j], theta[j], area)

    R_ap = ap_exponential_correlation(N, cfg.ap_corr_r)
    R_ap_sqrt = psd_sqrtm(R_ap)
    R_ap_user = np.broadcast_to(R_ap, (M, K, N, N)).copy()
    R_ap_ris = np.broadcast_to(R_ap, (M, J, N, N)).copy()
    _, delta_d, delta_c = build_covariances(topo, R_ap_user, R_ap_ris, trT)
    return CorrelationSet(
        R_ris=R_ris,
        R_ris_sqrt=psd_sqrtm(R_ris) if J else R_ris.copy(),
        area=area,
        theta=theta,
        R_ap_user=R_ap_user,
        R_ap_user_sqrt=np.broadcast_to(R_ap_sqrt, (M, K, N, N)).copy(),
        R_ap_ris=R_ap_ris,
        R_ap_ris_sqrt=np.broadcast_to(R_ap_sqrt, (M, J, N, N)).copy(),
        T=T,
        trT=trT,
        Delta_d=delta_d,
        Delta_c=delta_c,
    )
