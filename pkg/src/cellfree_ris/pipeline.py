"""Closed-form (and optional Monte-Carlo) evaluation of one drop."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import Drop
from .downlink import (build_downlink_terms, downlink_monte_carlo, downlink_se, downlink_se_mc)
from .energy import EEReport, PowerModel, sum_se, total_power
from .estimation import EstimationResult, estimation_statistics, nmse, nmse_monte_carlo
from .uplink import (build_uplink_terms, uplink_monte_carlo, uplink_se, uplink_se_mc)


@dataclass
class DropResult:
    """Metrics of one drop; per-user arrays have shape (K,). MC fields are None unless requested."""

    scheme: str
    nmse: float
    se_ul: np.ndarray
    se_dl: np.ndarray
    se_sum: float
    energy: EEReport
    nmse_mc: float | None = None
    se_ul_mc: np.ndarray | None = None
    se_dl_mc: np.ndarray | None = None
    extra: dict = field(default_factory=dict)


def evaluate_drop(drop: Drop, scheme: str = "two_phase", receiver: str = "lsfd",
                  power_control: bool = True, alpha: float | None = None,
                  power_model: PowerModel | None = None, mc_trials: int = 0,
                  rng: np.random.Generator | None = None,
                  est: EstimationResult | None = None) -> DropResult:
    """Run estimation, uplink, downlink and energy evaluation on ``drop``."""
    est = est or estimation_statistics(drop, scheme)
    eta_ul = None if power_control else np.ones(drop.K)
    ul = build_uplink_terms(drop, est, eta_ul)
    dl = build_downlink_terms(drop, est, alpha)
    se_u = uplink_se(ul, receiver)
    se_d = downlink_se(dl)
    s = sum_se(se_u, se_d)
    pilots = [est.power_d, est.power_c] if est.scheme == "two_phase" else [est.power_d]
    rep = total_power(power_model or PowerModel(), drop.cfg, s, pilots, ul.eta, dl.eta,
                      est.q_traces(), n_phases=est.n_phases)
    res = DropResult(est.scheme, nmse(drop, est), se_u, se_d, s, rep)
    if mc_trials:
        if rng is None:
            raise ValueError("Monte-Carlo evaluation needs an rng")
        res.nmse_mc = nmse_monte_carlo(drop, est, rng, mc_trials)
        res.se_ul_mc = uplink_se_mc(ul, uplink_monte_carlo(drop, est, rng, mc_trials), receiver)
        res.se_dl_mc = downlink_se_mc(dl, downlink_monte_carlo(drop, est, dl, rng, mc_trials))
    return res
