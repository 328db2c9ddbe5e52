"""YAML experiment configuration with a closed schema.

Unknown keys are errors.  Every field, its unit and default::

    model:                       # natural units, hbar = k_B = 1
      mass: 1.0                  # M
      bare_freq: 0.0             # omega_0, 1/time
      coupling_freq: 1.0         # omega, 1/time
      spin_count: 8              # N, integer >= 1
      spin_gap: 100.0            # B, energy
      beta: 0.01                 # 1/energy
    bath:
      kind: constant             # constant | ohmic
      gamma: 10.0                # 1/time, constant kind
      ohmic_coupling: 0.0        # J(E) = ohmic_coupling * E, ohmic kind
    initial:
      alpha: 1.0                 # coherent amplitude; number or [re, im]
    numerics:
      fock_dim: 30               # Fock cutoff d
      ref_freq: null             # basis frequency; null -> omega_eff
      tol: 1.0e-8                # integrator rel. and abs. tolerance
      t_end: 60.0                # time
      t_end_per_spin: null       # if set, t_end = t_end_per_spin * N (sweeps)
      sample_dt: 0.05            # time
      convergence_check: false   # rerun at fock_dim + 10 and compare
    analysis:
      slope_window: null         # impurity-slope window (time); overrides the rule
      slope_window_rule: fitted_period  # fitted_period | omega_eff_period
    thermo:
      force: 0.0                 # constant force f for the linear response
      x: 0.0                     # position for the entropic profile / Gibbs state
    sweep:
      axis: N                    # N | omega
      values: [2, 3, 4]          # spin counts or coupling frequencies
      bare_freq_rule: fixed      # fixed | complement (omega_0 = sqrt(total - omega^2))
      total_freq_sq: 1.0         # used by the complement rule
    glass:
      material_file: null        # path to a material YAML; null -> packaged silica
      material: null             # inline material mapping (overrides material_file)
      freq_min: 1.0e5            # rad/s
      freq_max: 1.0e10           # rad/s
      temp_min: 0.01             # K
      temp_max: 1.0              # K
      n_freq: 50
      n_temp: 50
      epsrel: 1.0e-8
"""

from __future__ import annotations

import copy
from pathlib import Path

import yaml

from .dynamics import BathSpectrum
from .statespace import QcsbParams

CONFIG_SCHEMA = "qcsb-config/1"

_NUM = (int, float)

SCHEMA = {
    "model": {
        "mass": (_NUM, 1.0),
        "bare_freq": (_NUM, 0.0),
        "coupling_freq": (_NUM, 1.0),
        "spin_count": (int, 8),
        "spin_gap": (_NUM, 100.0),
        "beta": (_NUM, 0.01),
    },
    "bath": {
        "kind": (str, "constant"),
        "gamma": (_NUM, 10.0),
        "ohmic_coupling": (_NUM, 0.0),
    },
    "initial": {"alpha": ((int, float, list), 1.0)},
    "numerics": {
        "fock_dim": (int, 30),
        "ref_freq": ((int, float, type(None)), None),
        "tol": (_NUM, 1e-8),
        "t_end": (_NUM, 60.0),
        "t_end_per_spin": ((int, float, type(None)), None),
        "sample_dt": (_NUM, 0.05),
        "convergence_check": (bool, False),
    },
    "analysis": {
        "slope_window": ((int, float, type(None)), None),
        "slope_window_rule": (str, "fitted_period"),
    },
    "thermo": {"force": (_NUM, 0.0), "x": (_NUM, 0.0)},
    "sweep": {
        "axis": (str, "N"),
        "values": (list, []),
        "bare_freq_rule": (str, "fixed"),
        "total_freq_sq": (_NUM, 1.0),
    },
    "glass": {
        "material_file": ((str, type(None)), None),
        "material": ((dict, type(None)), None),
        "freq_min": (_NUM, 1e5),
        "freq_max": (_NUM, 1e10),
        "temp_min": (_NUM, 0.01),
        "temp_max": (_NUM, 1.0),
        "n_freq": (int, 50),
        "n_temp": (int, 50),
        "epsrel": (_NUM, 1e-8),
    },
}


class ConfigError(ValueError):
    pass


def _check_type(path, value, types):
    if isinstance(value, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
        raise ConfigError(f"{path}: expected {types}, got boolean {value!r}")
    if not isinstance(value, types):
        names = types.__name__ if isinstance(types, type) else "/".join(t.__name__ for t in types)
        raise ConfigError(f"{path}: expected {names}, got {type(value).__name__} {value!r}")


def _coerce_number(value, types):
    # PyYAML reads "1e5" (no decimal point) as a string
    tys = types if isinstance(types, tuple) else (types,)
    if isinstance(value, str) and float in tys:
        try:
            return float(value)
        except ValueError:
            return value
    return value


def normalize(raw: dict) -> dict:
    """Fill defaults and reject unknown sections, keys and wrong types."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    raw = dict(raw)
    version = raw.pop("schema", CONFIG_SCHEMA)
    if version != CONFIG_SCHEMA:
        raise ConfigError(f"schema: expected {CONFIG_SCHEMA!r}, got {version!r}")
    unknown = set(raw) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    cfg = {}
    for section, fields in SCHEMA.items():
        given = raw.get(section) or {}
        if not isinstance(given, dict):
            raise ConfigError(f"{section}: expected a mapping")
        bad = set(given) - set(fields)
        if bad:
            raise ConfigError(f"{section}: unknown key(s): {', '.join(sorted(bad))}")
        out = {}
        for key, (types, default) in fields.items():
            if key in given:
                value = _coerce_number(given[key], types)
                _check_type(f"{section}.{key}", value, types)
                out[key] = copy.deepcopy(value)
            else:
                out[key] = copy.deepcopy(default)
        cfg[section] = out
    _semantic_checks(cfg)
    return cfg


def _semantic_checks(cfg):
    n = cfg["numerics"]
    for key in ("tol", "t_end", "sample_dt"):
        if not n[key] > 0:
            raise ConfigError(f"numerics.{key}: must be positive, got {n[key]}")
    if n["fock_dim"] < 2:
        raise ConfigError(f"numerics.fock_dim: must be >= 2, got {n['fock_dim']}")
    if cfg["bath"]["kind"] not in ("constant", "ohmic"):
        raise ConfigError(f"bath.kind: must be 'constant' or 'ohmic', got {cfg['bath']['kind']!r}")
    alpha = cfg["initial"]["alpha"]
    if isinstance(alpha, list) and (len(alpha) != 2 or not all(isinstance(a, _NUM) for a in alpha)):
        raise ConfigError("initial.alpha: list form must be [re, im]")
    if cfg["analysis"]["slope_window_rule"] not in ("fitted_period", "omega_eff_period"):
        raise ConfigError("analysis.slope_window_rule: must be 'fitted_period' or 'omega_eff_period'")
    s = cfg["sweep"]
    if s["axis"] not in ("N", "omega"):
        raise ConfigError(f"sweep.axis: must be 'N' or 'omega', got {s['axis']!r}")
    if s["bare_freq_rule"] not in ("fixed", "complement"):
        raise ConfigError("sweep.bare_freq_rule: must be 'fixed' or 'complement'")
    try:
        model_params(cfg)
        bath_spectrum(cfg)
    except ValueError as exc:
        raise ConfigError(f"model/bath: {exc}") from None


def load(path) -> dict:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    cfg = normalize(raw)
    cfg["_path"] = str(Path(path))
    return cfg


def model_params(cfg, **overrides) -> QcsbParams:
    m = dict(cfg["model"])
    m.update(overrides)
    return QcsbParams(
        mass=float(m["mass"]),
        bare_freq=float(m["bare_freq"]),
        coupling_freq=float(m["coupling_freq"]),
        spin_count=m["spin_count"],
        spin_gap=float(m["spin_gap"]),
        beta=float(m["beta"]),
    )


def bath_spectrum(cfg) -> BathSpectrum:
    b = cfg["bath"]
    if b["kind"] == "constant":
        return BathSpectrum("constant", gamma_const=float(b["gamma"]))
    return BathSpectrum("ohmic", ohmic_coupling=float(b["ohmic_coupling"]))


def alpha(cfg) -> complex:
    a = cfg["initial"]["alpha"]
    return complex(a[0], a[1]) if isinstance(a, list) else complex(a)


def public(cfg) -> dict:
    """Config echo for output files (no private keys)."""
    return {k: v for k, v in cfg.items() if not k.startswith("_")}
