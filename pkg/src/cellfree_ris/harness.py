"""Experiment orchestration: sweeps over drops, CSV output and the run manifest.

Experiment file keys (``[experiment]`` section, next to ``[system]``)::

    sweep = velocity            # pilot_power | velocity | M | N | J | L | rho_dB | time_instant
    values = 0, 60, 120         # dBm, km/h, counts, dB (inf = EMI off) or 1-based instants
    drops = 20
    mc_trials = 10000
    monte_carlo = false         # also run the Monte-Carlo oracles per drop
    outputs = nmse, se_ul, se_dl, se_sum, ee
    receiver = lsfd             # lsfd | mf
    power_control = fractional  # fractional | none (uplink)
    scheme = two_phase          # two_phase | benchmark
    seed = 1
    percentiles = 5, 50, 95
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import os
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy

from . import __version__
from .channel import Drop, make_drop, temporal_corr
from .config import (ConfigError, SystemConfig, dbm_to_watt, kmh_to_ms, system_config_from_mapping,
                     watt_to_dbm)
from .correlation import build_correlation
from .downlink import DOWNLINK_CSV_HEADER, build_downlink_terms, downlink_sinr_closed
from .energy import ENERGY_CSV_HEADER
from .estimation import ESTIMATION_CSV_HEADER, estimation_statistics
from .pipeline import evaluate_drop
from .topology import draw_topology
from .uplink import RECEIVERS, UPLINK_CSV_HEADER, build_uplink_terms, uplink_sinr_closed

SWEEPS = ("pilot_power", "velocity", "M", "N", "J", "L", "rho_dB", "time_instant")
METRICS = ("nmse", "se_ul", "se_dl", "se_sum", "ee", "per_instant_se")
SCHEMES = ("two_phase", "benchmark")
POWER_CONTROLS = ("fractional", "none")
_INTEGER_SWEEPS = ("M", "N", "J", "L", "time_instant")


class ExperimentError(RuntimeError):
    """A drop failed numerically; the message carries its replay seed."""


@dataclass(frozen=True)
class ExperimentSpec:
    """One sweep experiment. ``values`` use the units of the sweep variable."""

    base: SystemConfig
    sweep: str
    values: tuple
    drops: int = 1
    mc_trials: int = 10_000
    monte_carlo: bool = False
    outputs: tuple = ("nmse", "se_ul", "se_dl", "se_sum", "ee")
    receiver: str = "lsfd"
    power_control: str = "fractional"
    scheme: str = "two_phase"
    seed: int = 0
    percentiles: tuple = (5.0, 50.0, 95.0)

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        object.__setattr__(self, "percentiles", tuple(float(p) for p in self.percentiles))
        if self.sweep not in SWEEPS:
            raise ConfigError("experiment.sweep", f"must be one of {', '.join(SWEEPS)}")
        if not self.values:
            raise ConfigError("experiment.values", "empty value list")
        for i, v in enumerate(self.values):
            if isinstance(v, bool) or not isinstance(v, (int, float, np.integer, np.floating)):
                raise ConfigError(f"experiment.values[{i}]", f"not a number: {v!r}")
            if math.isnan(v) or (math.isinf(v) and self.sweep != "rho_dB"):
                raise ConfigError(f"experiment.values[{i}]", "not finite")
            if self.sweep in _INTEGER_SWEEPS and (v != int(v) or v < (0 if self.sweep == "J" else 1)):
                raise ConfigError(f"experiment.values[{i}]", "needs a positive integer")
            if self.sweep == "velocity" and v < 0:
                raise ConfigError(f"experiment.values[{i}]", "negative velocity")
        if self.drops < 1:
            raise ConfigError("experiment.drops", "must be at least 1")
        if self.mc_trials < 1:
            raise ConfigError("experiment.mc_trials", "must be at least 1")
        if not self.outputs:
            raise ConfigError("experiment.outputs", "empty metric list")
        for i, m in enumerate(self.outputs):
            if m not in METRICS:
                raise ConfigError(f"experiment.outputs[{i}]", f"unknown metric {m!r}")
        if (self.sweep == "time_instant") != ("per_instant_se" in self.outputs):
            raise ConfigError("experiment.outputs", "per_instant_se pairs with sweep = time_instant")
        if self.receiver not in RECEIVERS:
            raise ConfigError("experiment.receiver", f"must be one of {', '.join(RECEIVERS)}")
        if self.power_control not in POWER_CONTROLS:
            raise ConfigError("experiment.power_control", f"must be one of {', '.join(POWER_CONTROLS)}")
        if self.scheme not in SCHEMES:
            raise ConfigError("experiment.scheme", f"must be one of {', '.join(SCHEMES)}")
        for i, p in enumerate(self.percentiles):
            if not 0 <= p <= 100:
                raise ConfigError(f"experiment.percentiles[{i}]", "outside [0, 100]")

    def config_for(self, value) -> SystemConfig:
        """System configuration at one sweep point."""
        cfg = self.base
        if self.sweep == "pilot_power":
            return cfg.replace(p_p=dbm_to_watt(value))
        if self.sweep == "velocity":
            return cfg.replace(velocity=kmh_to_ms(value))
        if self.sweep in ("M", "N", "J"):
            return cfg.replace(**{self.sweep: int(value)})
        if self.sweep == "L":
            return cfg.replace(**dict(zip(("L_h", "L_v"), ris_shape(int(value)))))
        if self.sweep == "rho_dB":
            return cfg.replace(rho_sir_dB=float(value))
        # time_instant: the trace runs up to the largest requested instant
        return cfg.replace(tau_c=max(cfg.tau_c, int(max(self.values))))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["base"] = {k: _jsonable(v) for k, v in d["base"].items()}
        d["values"] = [_jsonable(v) for v in self.values]
        return d

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, default=repr)
        return hashlib.sha256(text.encode()).hexdigest()


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    if isinstance(v, np.generic):
        return v.item()
    return v


def ris_shape(L: int) -> tuple[int, int]:
    """Square ``(r, r)`` arrangement when ``L = r^2``, else a single row ``(L, 1)``."""
    r = math.isqrt(L)
    return (r, r) if r * r == L else (L, 1)


def drop_seed(seed: int, drop: int, stream: int) -> np.random.SeedSequence:
    """Seed of one substream of one drop; stream 0 draws geometry, 1 the Monte-Carlo trials."""
    return np.random.SeedSequence(seed, spawn_key=(drop, stream))


def build_drop(cfg: SystemConfig, seed: int, drop: int) -> Drop:
    topo = draw_topology(cfg, np.random.default_rng(drop_seed(seed, drop, 0)))
    return make_drop(cfg, topo, build_correlation(topo, cfg))


# --------------------------------------------------------------------- per drop

def per_instant_se(drop: Drop, instants: Sequence[int], receiver: str = "lsfd",
                   power_control: bool = True) -> dict[str, dict[str, np.ndarray]]:
    """Sum SE traces ``sum_k log2(1 + SINR_k[n])`` of both estimation schemes.

    Instants are 1-based; instants before a scheme's first data instant
    carry no data and report 0. Returns ``{scheme: {"ul": (I,), "dl": (I,)}}``.
    """
    n = np.asarray(instants, dtype=int)
    if n.size and (n.min() < 1 or n.max() > drop.cfg.tau_c):
        raise ValueError("instants must lie in [1, tau_c]")
    out = {}
    for scheme in SCHEMES:
        est = estimation_statistics(drop, scheme)
        eta = None if power_control else np.ones(drop.K)
        ul = build_uplink_terms(drop, est, eta)
        dl = build_downlink_terms(drop, est)
        s_ul = np.log2(1 + uplink_sinr_closed(ul, receiver)).sum(axis=0)
        s_dl = np.log2(1 + downlink_sinr_closed(dl)).sum(axis=0)
        idx = n - ul.instants[0]
        ok = idx >= 0
        tr = {}
        for key, s in (("ul", s_ul), ("dl", s_dl)):
            t = np.zeros(n.shape)
            t[ok] = s[idx[ok]]
            tr[key] = t
        out[scheme] = tr
    return out


def aging_profile(cfg: SystemConfig, instants: Sequence[int], lam: int) -> np.ndarray:
    """``rho_k[n - lam]`` for every user, shape (K, I)."""
    lag = np.asarray(instants, dtype=float) - lam
    return temporal_corr(cfg.velocities[:, None], cfg.f_c, cfg.T_s, lag[None, :])[0]


def _columns(spec: ExperimentSpec) -> list[str]:
    if spec.sweep == "time_instant":
        return [f"{s}_se_{x}" for s in SCHEMES for x in ("ul", "dl")]
    cols = []
    for m in spec.outputs:
        cols.append(m)
        if m == "ee":
            cols.append("p_total")
        if spec.monte_carlo and m in ("nmse", "se_ul", "se_dl"):
            cols.append(m + "_mc")
    return cols


def _evaluate_point(args) -> tuple[dict[str, float], dict[str, np.ndarray]]:
    """Metrics of one (sweep value, drop). Returns scalar row values and per-user arrays."""
    spec, value, drop_id = args
    cfg = spec.config_for(value)
    try:
        drop = build_drop(cfg, spec.seed, drop_id)
        if spec.sweep == "time_instant":
            tr = per_instant_se(drop, [int(value)], spec.receiver, spec.power_control == "fractional")
            row = {f"{s}_se_{x}": float(tr[s][x][0]) for s in SCHEMES for x in ("ul", "dl")}
            return row, {}, {}
        rng = np.random.default_rng(drop_seed(spec.seed, drop_id, 1))
        r = evaluate_drop(drop, spec.scheme, spec.receiver, spec.power_control == "fractional",
                          mc_trials=spec.mc_trials if spec.monte_carlo else 0, rng=rng)
    except (np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
        raise ExperimentError(
            f"{spec.sweep}={value!r} drop {drop_id} failed (replay: seed={spec.seed}, "
            f"spawn_key=({drop_id}, 0)): {exc}") from exc
    row = {"nmse": r.nmse, "se_ul": float(np.mean(r.se_ul)), "se_dl": float(np.mean(r.se_dl)),
           "se_sum": r.se_sum, "ee": r.energy.ee, "p_total": r.energy.p_total}
    users = {"se_ul": r.se_ul, "se_dl": r.se_dl}
    if spec.monte_carlo:
        row.update(nmse_mc=r.nmse_mc, se_ul_mc=float(np.mean(r.se_ul_mc)),
                   se_dl_mc=float(np.mean(r.se_dl_mc)))
        users.update(se_ul_mc=r.se_ul_mc, se_dl_mc=r.se_dl_mc)
    return row, users, _module_rows(spec, cfg, value, drop_id, r)


def _velocity_kmh(cfg: SystemConfig) -> float:
    v = cfg.velocities
    return float(v[0] * 3.6) if np.all(v == v[0]) else float(np.mean(v) * 3.6)


def _opt(x) -> str:
    return "" if x is None else _fmt(x)


def _module_rows(spec: ExperimentSpec, cfg: SystemConfig, value, drop_id: int, r) -> dict:
    """Rows of the per-module tables, each prefixed with the sweep value."""
    v, kmh = _fmt(value), _fmt(_velocity_kmh(cfg))
    pc = spec.power_control
    K = cfg.K
    ul_mc = r.se_ul_mc if r.se_ul_mc is not None else [None] * K
    dl_mc = r.se_dl_mc if r.se_dl_mc is not None else [None] * K
    return {
        "estimation": [[v, _fmt(watt_to_dbm(cfg.p_p)), kmh, r.scheme, _fmt(r.nmse), _opt(r.nmse_mc)]],
        "uplink": [[v, str(drop_id), str(k), spec.receiver, pc, kmh, _fmt(r.se_ul[k]), _opt(ul_mc[k])]
                   for k in range(K)],
        "downlink": [[v, str(drop_id), str(k), _fmt(cfg.alpha_dl), kmh, _fmt(r.se_dl[k]), _opt(dl_mc[k])]
                     for k in range(K)],
        "energy": [[v, str(cfg.M), str(cfg.N), str(cfg.K), str(cfg.J), str(cfg.L), kmh,
                    _fmt(cfg.rho_sir_dB), _fmt(r.se_sum), _fmt(r.energy.p_total), _fmt(r.energy.ee)]],
    }


MODULE_HEADERS = {
    "estimation": ESTIMATION_CSV_HEADER,
    "uplink": UPLINK_CSV_HEADER,
    "downlink": DOWNLINK_CSV_HEADER,
    "energy": ENERGY_CSV_HEADER,
}


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x) -> str:
    return repr(float(x))


@dataclass
class ExperimentResult:
    """Rows of one experiment; ``header`` is fixed by the experiment type."""

    header: list[str]
    rows: list[list[str]]
    per_user: dict = field(default_factory=dict)
    modules: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        return _csv_text(self.header, self.rows)

    def module_csv(self, name: str) -> str:
        return _csv_text(["sweep_value", *MODULE_HEADERS[name]], self.modules[name])

    def column(self, name: str, kind: str = "drop") -> np.ndarray:
        i = self.header.index(name)
        return np.array([float(r[i]) for r in self.rows if r[0] == kind])


def run_experiment(spec: ExperimentSpec, threads: int = 1) -> ExperimentResult:
    """Evaluate every (sweep value, drop) and append per-value aggregates.

    Row kinds: ``drop`` (one per sweep value and drop; SE columns are
    per-user means), ``mean`` and ``pXX`` percentiles. SE percentiles are
    taken over drops x users, other metrics over drops; linear interpolation.
    """
    cols = _columns(spec)
    header = ["kind", spec.sweep, "drop"] + cols
    tasks = [(spec, v, d) for v in spec.values for d in range(spec.drops)]
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_evaluate_point, tasks))
    else:
        results = [_evaluate_point(t) for t in tasks]
    rows = []
    per_user = {}
    modules: dict[str, list] = {}
    for (_, v, d), (row, users, mods) in zip(tasks, results):
        rows.append(["drop", _fmt(v), str(d)] + [_fmt(row[c]) for c in cols])
        per_user[(v, d)] = users
        for name, mrows in mods.items():
            modules.setdefault(name, []).extend(mrows)
    for v in spec.values:
        drop_rows = [row for (_, vv, _), (row, _, _) in zip(tasks, results) if vv == v]
        pooled = {c: np.array([r[c] for r in drop_rows]) for c in cols}
        for c in cols:
            if c in ("se_ul", "se_dl", "se_ul_mc", "se_dl_mc"):
                pooled_users = [per_user[(v, d)][c] for d in range(spec.drops)]
                pooled[c + "@users"] = np.concatenate(pooled_users)
        rows.append(["mean", _fmt(v), "all"] + [_fmt(np.mean(pooled[c])) for c in cols])
        for p in spec.percentiles:
            vals = [np.percentile(pooled.get(c + "@users", pooled[c]), p, method="linear")
                    for c in cols]
            rows.append([f"p{p:g}", _fmt(v), "all"] + [_fmt(x) for x in vals])
    return ExperimentResult(header, rows, per_user, modules)


def manifest(spec: ExperimentSpec, csv_name: str) -> dict:
    return {
        "config_hash": spec.digest(),
        "seed": spec.seed,
        "csv": csv_name,
        "spec": spec.to_dict(),
        "versions": {
            "cellfree_ris": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }


def write_experiment(spec: ExperimentSpec, out_dir: str, threads: int = 1,
                     name: str = "experiment") -> tuple[str, str]:
    """Run ``spec`` and write ``<name>.csv`` plus ``<name>.manifest.json`` into ``out_dir``.

    Sweeps other than ``time_instant`` also write the per-module tables
    ``<name>.{estimation,uplink,downlink,energy}.csv``. Nothing is written
    if any drop fails.
    """
    result = run_experiment(spec, threads)
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{name}.csv")
    man_path = os.path.join(out_dir, f"{name}.manifest.json")
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(result.to_csv())
    for mod in result.modules:
        with open(os.path.join(out_dir, f"{name}.{mod}.csv"), "w", encoding="utf-8", newline="") as fh:
            fh.write(result.module_csv(mod))
    with open(man_path, "w", encoding="utf-8") as fh:
        json.dump(manifest(spec, os.path.basename(csv_path)), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return csv_path, man_path


# ------------------------------------------------------------------ config file

def _split(text: str) -> list[str]:
    return [t for t in text.replace(",", " ").split() if t]


def _int(path: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(path, f"not an integer: {raw!r}") from exc


def _num(path: str, raw: str) -> float:
    t = raw.strip().lower()
    if t in ("inf", "+inf", "off"):
        return math.inf
    try:
        return float(t)
    except ValueError as exc:
        raise ConfigError(path, f"not a number: {raw!r}") from exc


_BOOL = {"true": True, "yes": True, "1": True, "on": True,
         "false": False, "no": False, "0": False, "off": False}


def experiment_from_mapping(system: Mapping[str, str], experiment: Mapping[str, str],
                            **overrides) -> ExperimentSpec:
    """Build an :class:`ExperimentSpec` from raw ``[system]`` and ``[experiment]`` pairs.

    ``overrides`` (``drops``, ``mc_trials``, ``seed``) replace file values when not None.
    """
    base = system_config_from_mapping(system)
    kw: dict = {}
    for key, raw in experiment.items():
        path = f"experiment.{key}"
        k = key.strip().lower()
        if k == "sweep":
            kw["sweep"] = raw.strip()
        elif k == "values":
            kw["values"] = tuple(_num(f"{path}[{i}]", t) for i, t in enumerate(_split(raw)))
        elif k in ("drops", "mc_trials", "seed"):
            kw[k] = _int(path, raw.strip())
        elif k == "monte_carlo":
            if raw.strip().lower() not in _BOOL:
                raise ConfigError(path, f"not a boolean: {raw!r}")
            kw[k] = _BOOL[raw.strip().lower()]
        elif k == "outputs":
            kw[k] = tuple(_split(raw))
        elif k in ("receiver", "power_control", "scheme"):
            kw[k] = raw.strip().lower()
        elif k == "percentiles":
            kw[k] = tuple(_num(f"{path}[{i}]", t) for i, t in enumerate(_split(raw)))
        else:
            raise ConfigError(path, "unknown key")
    for k in ("sweep", "values"):
        if k not in kw:
            raise ConfigError(f"experiment.{k}", "missing")
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentSpec(base=base, **kw)


def load_experiment(path: str, **overrides) -> ExperimentSpec:
    from .config import read_config_file

    parser = read_config_file(path)
    if not parser.has_section("experiment"):
        raise ConfigError("experiment", "missing [experiment] section")
    system = dict(parser.items("system")) if parser.has_section("system") else {}
    return experiment_from_mapping(system, dict(parser.items("experiment")), **overrides)

