"""System parameters and the key/value configuration file format.

A configuration file is an INI-style text file with a ``[system]`` section
(and, for the CLI, an ``[experiment]`` section). Power-like quantities may be
given either in Watts (``p_u = 0.1``) or logarithmically (``p_u_dBm = 20``);
they are converted to linear units once, at parse time.

Example::

    [system]
    M = 20
    N = 2
    K = 20
    J = 2
    L_h = 4
    L_v = 4
    p_p_dBm = 20
    rho_dB = 20                # alias of rho_sir_dB; inf or off disables EMI
    velocity_kmh = 120
"""

from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

SPEED_OF_LIGHT = 3e8


class ConfigError(ValueError):
    """Raised for schema violations; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def dbm_to_watt(x: float) -> float:
    return 10.0 ** ((x - 30.0) / 10.0)


def watt_to_dbm(x: float) -> float:
    return 10.0 * math.log10(x) + 30.0


def db_to_linear(x: float) -> float:
    return 10.0 ** (x / 10.0)


def kmh_to_ms(v: float) -> float:
    return v / 3.6


@dataclass(frozen=True)
class SystemConfig:
    """Every scalar parameter of one simulated system.

    Powers are stored in Watts, distances in meters (``D_km`` excepted),
    velocities in m/s. ``velocity`` is either a scalar shared by all users
    or a length-K tuple. ``rho_sir_dB = inf`` switches EMI off.
    ``pl_intercept_dB = None`` selects the Hata-COST231 intercept computed
    from ``f_c`` and the AP/user heights.
    """

    M: int = 20
    N: int = 2
    K: int = 20
    J: int = 2
    L_h: int = 4
    L_v: int = 4
    D_km: float = 1.5
    tau_p: int = 8
    tau_c: int = 200
    T_s: float = 1e-5
    f_c: float = 1.9e9
    B: float = 20e6
    p_u: float = 0.1
    p_d: float = dbm_to_watt(23.0)
    p_p: float = 0.1
    sigma2: float = dbm_to_watt(-91.0)
    rho_sir_dB: float = 20.0
    velocity: float | tuple[float, ...] = 0.0
    d_V: float | None = None
    d_H: float | None = None
    theta_fixed: float = math.pi / 4
    ris_amplitude: float = 1.0
    alpha_dl: float = 0.5
    ap_corr_r: float = 0.5
    sigma_sh_dB: float = 8.0
    d0: float = 10.0
    d1: float = 50.0
    pl_intercept_dB: float | None = None
    h_ap: float = 15.0
    h_ris: float = 30.0
    h_user: float = 1.65
    rng_seed: int = 0
    extras: Mapping[str, Any] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        for name in ("M", "N", "K", "L_h", "L_v", "tau_p", "tau_c"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"system.{name}", "must be >= 1")
        if self.J < 0:
            raise ConfigError("system.J", "must be >= 0")
        if self.tau_c <= 2 * self.tau_p:
            raise ConfigError("system.tau_c", "must exceed 2*tau_p (empty data phase)")
        for name in ("p_u", "p_d", "p_p", "B", "f_c", "T_s", "D_km", "sigma2"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"system.{name}", "must be strictly positive")
        if not 0.0 <= self.alpha_dl <= 1.0:
            raise ConfigError("system.alpha_dl", "must lie in [0, 1]")
        if not 0.0 <= self.ap_corr_r < 1.0:
            raise ConfigError("system.ap_corr_r", "must lie in [0, 1)")
        if not 0.0 <= self.ris_amplitude <= 1.0:
            raise ConfigError("system.ris_amplitude", "must lie in [0, 1]")
        if not 0 < self.d0 < self.d1:
            raise ConfigError("system.d0", "need 0 < d0 < d1")
        if self.sigma_sh_dB < 0:
            raise ConfigError("system.sigma_sh_dB", "must be >= 0")
        v = np.atleast_1d(np.asarray(self.velocity, dtype=float))
        if v.size not in (1, self.K):
            raise ConfigError("system.velocity", f"expected 1 or K={self.K} values, got {v.size}")
        if np.any(v < 0):
            raise ConfigError("system.velocity", "must be >= 0")

    @property
    def L(self) -> int:
        return self.L_h * self.L_v

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.f_c

    @property
    def element_height(self) -> float:
        return self.wavelength / 2 if self.d_V is None else self.d_V

    @property
    def element_width(self) -> float:
        return self.wavelength / 2 if self.d_H is None else self.d_H

    @property
    def element_area(self) -> float:
        return self.element_height * self.element_width

    @property
    def velocities(self) -> np.ndarray:
        """Per-user speeds (m/s), shape (K,)."""
        v = np.atleast_1d(np.asarray(self.velocity, dtype=float))
        return np.broadcast_to(v, (self.K,)).copy()

    @property
    def rho_linear(self) -> float:
        return db_to_linear(self.rho_sir_dB)

    @property
    def emi_enabled(self) -> bool:
        return math.isfinite(self.rho_sir_dB)

    @property
    def lam(self) -> int:
        """Reference instant of the two-phase estimates (1-based)."""
        return 2 * self.tau_p + 1

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)


# key -> (field, converter); "_dBm" keys convert to Watts
_LOG_POWER_KEYS = {"p_u_dbm": "p_u", "p_d_dbm": "p_d", "p_p_dbm": "p_p", "sigma2_dbm": "sigma2"}
_INT_FIELDS = {"M", "N", "K", "J", "L_h", "L_v", "tau_p", "tau_c", "rng_seed"}
_OPTIONAL_FLOAT = {"d_V", "d_H", "pl_intercept_dB"}


def _parse_float(path: str, text: str) -> float:
    t = text.strip().lower()
    if t in ("inf", "+inf", "infinity", "off", "none"):
        return math.inf
    try:
        return float(t)
    except ValueError as exc:
        raise ConfigError(path, f"not a number: {text!r}") from exc


def system_config_from_mapping(values: Mapping[str, str]) -> SystemConfig:
    """Build a :class:`SystemConfig` from raw string key/value pairs."""
    names = {f.name: f for f in dataclasses.fields(SystemConfig) if f.name != "extras"}
    lower = {n.lower(): n for n in names}
    kwargs: dict[str, Any] = {}
    for key, raw in values.items():
        path = f"system.{key}"
        k = key.strip().lower()
        if k in _LOG_POWER_KEYS:
            kwargs[_LOG_POWER_KEYS[k]] = dbm_to_watt(_parse_float(path, raw))
        elif k in ("velocity_kmh", "velocity_ms"):
            parts = [p for p in raw.replace(",", " ").split() if p]
            if not parts:
                raise ConfigError(path, "empty velocity list")
            vals = tuple(_parse_float(path, p) for p in parts)
            if k == "velocity_kmh":
                vals = tuple(kmh_to_ms(v) for v in vals)
            kwargs["velocity"] = vals[0] if len(vals) == 1 else vals
        elif k == "rho_db":
            kwargs["rho_sir_dB"] = _parse_float(path, raw)
        elif k in ("l",):
            raise ConfigError(path, "give L_h and L_v instead of L")
        elif k in lower:
            name = lower[k]
            if name in _INT_FIELDS:
                try:
                    kwargs[name] = int(raw)
                except ValueError as exc:
                    raise ConfigError(path, f"not an integer: {raw!r}") from exc
            elif name in _OPTIONAL_FLOAT and raw.strip().lower() in ("", "none", "default"):
                kwargs[name] = None
            else:
                kwargs[name] = _parse_float(path, raw)
        else:
            raise ConfigError(path, "unknown key")
    return SystemConfig(**kwargs)


def read_config_file(path: str) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep case: M vs m
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    return parser


def load_system_config(path: str) -> SystemConfig:
    parser = read_config_file(path)
    if not parser.has_section("system"):
        raise ConfigError("system", "missing [system] section")
    return system_config_from_mapping(dict(parser.items("system")))


def default_profile(**changes) -> SystemConfig:
    """The default desk-scale working point (M=20, N=2, K=20, J=2, L=16)."""
    return SystemConfig().replace(**changes)


def small_profile(**changes) -> SystemConfig:
    """Small configuration used by the Monte-Carlo oracle checks.

    ``tau_p = 2`` keeps pilot contamination present with K = 4.
    """
    base = SystemConfig(M=4, N=2, K=4, J=1, L_h=2, L_v=2, tau_p=2)
    return base.replace(**changes)
