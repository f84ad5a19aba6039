"""Power consumption model and total energy efficiency."""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

GBPS = 1e9


@dataclass(frozen=True)
class PowerModel:
    """Hardware power parameters in SI units.

    ``P_COD``, ``P_DEC`` and ``P_bh`` are in Watt per bit/s (the usual
    W/(Gbit/s) figures divided by 1e9); ``L_AP`` is in flops per Watt.
    Per-AP or per-user values may be arrays; scalars apply to all.
    """

    L_AP: float = 12.8e9
    theta_ap: float | np.ndarray = 0.39
    theta_user: float | np.ndarray = 0.3
    P_FIX: float = 18.0
    P_ap_circuit: float | np.ndarray = 1.0
    P_user_circuit: float | np.ndarray = 0.1
    P_COD: float = 0.1 / GBPS
    P_DEC: float = 0.1 / GBPS
    P_bh: float | np.ndarray = 0.25 / GBPS

    def __post_init__(self):
        for f in fields(self):
            v = np.asarray(getattr(self, f.name), dtype=float)
            if np.any(~(v > 0)):
                raise ValueError(f"{f.name} must be positive")
        for name in ("theta_ap", "theta_user"):
            if np.any(np.asarray(getattr(self, name)) > 1):
                raise ValueError(f"{name} must not exceed 1")

    def per_ap(self, name: str, M: int) -> np.ndarray:
        return np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (M,))

    def per_user(self, name: str, K: int) -> np.ndarray:
        return np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (K,))


@dataclass(frozen=True)
class EEReport:
    """Power budget (W) of one configuration and its energy efficiency (bit/J)."""

    se_sum: float
    p_pilot: float
    p_ul: float
    p_dl: float
    p_fix: float
    p_tc: float
    p_ce: float
    p_cd: float
    p_bh: float
    p_lp: float
    p_total: float
    ee: float
    components: dict = field(default_factory=dict, repr=False)

    @property
    def p_cp(self) -> float:
        return self.p_fix + self.p_tc + self.p_ce + self.p_cd + self.p_bh + self.p_lp


def sum_se(se_ul, se_dl) -> float:
    """Sum SE ``0.5 * sum_k (SE_ul + SE_dl)``."""
    return 0.5 * float(np.sum(se_ul) + np.sum(se_dl))


def total_power(pm: PowerModel, cfg, se_sum: float, pilot_powers, eta_ul, eta_dl, q_traces,
                n_phases: int = 2) -> EEReport:
    """Total consumed power and EE for one drop.

    ``pilot_powers`` is a list of per-user pilot power arrays (one per
    estimation sub-phase); ``eta_ul`` (K,), ``eta_dl`` (M, K) and
    ``q_traces`` ``tr(Q_d + Q_c)`` (M, K). ``n_phases = 1`` describes a
    single-phase estimator occupying ``tau_p`` instants.
    """
    M, K, N = cfg.M, cfg.K, cfg.N
    B, tau_p, tau_c = cfg.B, cfg.tau_p, cfg.tau_c
    th_u = pm.per_user("theta_user", K)
    th_m = pm.per_ap("theta_ap", M)
    p_pilot = float(sum(np.sum(np.asarray(p) / th_u) for p in pilot_powers))
    p_ul = float(np.sum(cfg.p_u * np.asarray(eta_ul) / th_u))
    p_dl = float(np.sum(cfg.p_d / th_m[:, None] * eta_dl * q_traces))
    est_len = n_phases * tau_p
    pilot_coef = 2 * est_len / (2 * tau_c)
    data_coef = (tau_c - est_len) / (2 * tau_c)

    p_tc = float(np.sum(N * pm.per_ap("P_ap_circuit", M)) + np.sum(pm.per_user("P_user_circuit", K)))
    p_ce = 2 * n_phases * M * B / (2 * tau_c) * 2 * tau_p * N * K / pm.L_AP
    p_cd = B * se_sum * (pm.P_COD + pm.P_DEC)
    p_bh = float(np.sum(B * se_sum * pm.per_ap("P_bh", M)))
    p_lp = M * B * (1 - est_len / tau_c) * 2 * N * K / pm.L_AP + M * 2 * 3 * B * N * K / (2 * tau_c * pm.L_AP)
    p_total = (pilot_coef * p_pilot + data_coef * p_ul + data_coef * p_dl
               + pm.P_FIX + p_tc + p_ce + p_cd + p_bh + p_lp)
    ee = B * se_sum / p_total
    return EEReport(se_sum, p_pilot, p_ul, p_dl, pm.P_FIX, p_tc, p_ce, p_cd, p_bh, p_lp,
                    p_total, ee)


ENERGY_CSV_HEADER = ("M", "N", "K", "J", "L", "velocity", "rho_dB", "se_sum", "p_total", "ee")


def ee_sweep(base, M_values, drops: int = 1, seed: int = 0, scheme: str = "two_phase",
             power_model: PowerModel | None = None):
    """Mean EE over ``drops`` drops for every ``M``; returns ``(M_values, ee (len(M),), argmax M)``.

    Drop ``d`` uses the same seed substream at every ``M``.
    """
    from .harness import build_drop
    from .pipeline import evaluate_drop

    M_values = [int(m) for m in M_values]
    ee = np.array([
        np.mean([evaluate_drop(build_drop(base.replace(M=m), seed, d), scheme,
                               power_model=power_model).energy.ee for d in range(drops)])
        for m in M_values])
    return M_values, ee, M_values[int(np.argmax(ee))]
