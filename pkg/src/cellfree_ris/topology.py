"""Network geometry and large-scale fading for one drop."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .config import SystemConfig


def hata_intercept_db(f_c: float, h_ap: float, h_user: float) -> float:
    """Hata-COST231 intercept ``L`` (dB) of the three-slope model, ``f_c`` in Hz."""
    f = f_c / 1e6
    lf = math.log10(f)
    return (46.3 + 33.9 * lf - 13.82 * math.log10(h_ap)
            - (1.1 * lf - 0.7) * h_user + (1.56 * lf - 0.8))


def path_loss_db(d_3d, intercept_db: float, d0: float = 10.0, d1: float = 50.0):
    """Three-slope path gain in dB (negative numbers).

    Distances are in meters; the slopes are 35 dB/decade beyond ``d1``,
    20 dB/decade on ``(d0, d1]`` and flat below ``d0``.
    """
    d = np.asarray(d_3d, dtype=float)
    if np.any(~(d > 0)):
        raise ValueError("distance must be strictly positive")
    dk, d0k, d1k = d / 1e3, d0 / 1e3, d1 / 1e3
    far = -intercept_db - 35.0 * np.log10(np.maximum(dk, d1k))
    mid = -intercept_db - 15.0 * np.log10(d1k) - 20.0 * np.log10(np.clip(dk, d0k, d1k))
    return np.where(dk > d1k, far, mid)


def path_loss(d_3d, intercept_db: float, d0: float = 10.0, d1: float = 50.0):
    """Linear three-slope path gain for 3-D distance ``d_3d`` (m)."""
    return 10.0 ** (path_loss_db(d_3d, intercept_db, d0, d1) / 10.0)


@dataclass(frozen=True)
class Topology:
    """Positions (meters, columns x, y, height) and linear large-scale gains.

    ``beta_d`` is (M, K), ``beta_c_ap_ris`` is (M, J), ``beta_c_user_ris`` is (K, J).
    """

    ap_pos: np.ndarray
    user_pos: np.ndarray
    ris_pos: np.ndarray
    beta_d: np.ndarray
    beta_c_ap_ris: np.ndarray
    beta_c_user_ris: np.ndarray

    @property
    def M(self) -> int:
        return self.ap_pos.shape[0]

    @property
    def K(self) -> int:
        return self.user_pos.shape[0]

    @property
    def J(self) -> int:
        return self.ris_pos.shape[0]

    def without_ris(self) -> "Topology":
        """Same APs and users with every RIS removed."""
        return Topology(self.ap_pos, self.user_pos, self.ris_pos[:0],
                        self.beta_d, self.beta_c_ap_ris[:, :0], self.beta_c_user_ris[:, :0])

    def to_json(self) -> str:
        raw = {k: getattr(self, k).ravel().tolist() for k in self.__dataclass_fields__}
        raw["shape"] = [self.M, self.K, self.J]
        return json.dumps(raw, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Topology":
        raw = json.loads(text)
        M, K, J = raw["shape"]
        shapes = {"ap_pos": (M, 3), "user_pos": (K, 3), "ris_pos": (J, 3),
                  "beta_d": (M, K), "beta_c_ap_ris": (M, J), "beta_c_user_ris": (K, J)}
        return cls(**{k: np.asarray(raw[k], dtype=float).reshape(s) for k, s in shapes.items()})


def _distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)


def _uniform_positions(rng, count, low_km, high_km, height):
    xy = rng.uniform(low_km * 1e3, high_km * 1e3, size=(count, 2))
    return np.column_stack([xy, np.full(count, height)])


def large_scale_gain(d_3d, cfg: SystemConfig, rng: np.random.Generator | None):
    """Path gain times log-normal shadowing (applied only beyond ``d1``)."""
    intercept = cfg.pl_intercept_dB
    if intercept is None:
        intercept = hata_intercept_db(cfg.f_c, cfg.h_ap, cfg.h_user)
    pl_db = path_loss_db(d_3d, intercept, cfg.d0, cfg.d1)
    if rng is not None and cfg.sigma_sh_dB > 0:
        z = rng.standard_normal(np.shape(d_3d))
        pl_db = pl_db + np.where(np.asarray(d_3d) > cfg.d1, cfg.sigma_sh_dB * z, 0.0)
    return 10.0 ** (pl_db / 10.0)


def draw_topology(cfg: SystemConfig, rng: np.random.Generator) -> Topology:
    """Drop APs in [-D/2, 0]^2 and users/RISs in [0, D/2]^2, then draw every beta."""
    half = cfg.D_km / 2
    ap = _uniform_positions(rng, cfg.M, -half, 0.0, cfg.h_ap)
    users = _uniform_positions(rng, cfg.K, 0.0, half, cfg.h_user)
    ris = _uniform_positions(rng, cfg.J, 0.0, half, cfg.h_ris)
    beta_d = large_scale_gain(_distances(ap, users), cfg, rng)
    beta_mj = large_scale_gain(_distances(ap, ris), cfg, rng)
    beta_kj = large_scale_gain(_distances(users, ris), cfg, rng)
    return Topology(ap, users, ris, beta_d, beta_mj.reshape(cfg.M, cfg.J),
                    beta_kj.reshape(cfg.K, cfg.J))
