"""Device and experiment configuration files (YAML with unit suffixes).

Numbers may be plain (canonical unit) or strings such as ``"140 MHz"``.
Canonical units: circuit energies GHz, couplings MHz, times ns, T1 us,
fluxonium flux radians (``"0.5 Phi0"`` is accepted), coupler flux in flux
quanta.

Schema::

    device:
      fluxonium_1: {e_c, e_l, e_j, phi_ext}      # phi_ext optional (pi)
      fluxonium_2: {e_c, e_l, e_j, phi_ext}
      coupler: {e_c, e_j_total, flux_fraction}   # flux_fraction optional (0.13)
      couplings: {g_12, g_1c, g_2c}              # required
      truncation: {fluxonium_levels, transmon_levels, fluxonium_basis_size, charge_cutoff}
    drive: {eta_c, eta_f1}
    noise: {coupler_t1: {"00": ..., "01": ..., "10": ..., "11": ...}}
    experiments: {<subcommand>: {...options...}}
"""

from __future__ import annotations

import copy
import math
import re
from pathlib import Path

import yaml

from .circuit import CouplingParams, FluxoniumParams, TransmonParams, TruncationSpec
from .dynamics import NoiseModel

_UNITS = {
    "energy": {"ghz": 1.0, "mhz": 1e-3, "khz": 1e-6, "hz": 1e-9},
    "coupling": {"mhz": 1.0, "ghz": 1e3, "khz": 1e-3, "hz": 1e-6},
    "time": {"ns": 1.0, "us": 1e3, "µs": 1e3, "ms": 1e6, "s": 1e9, "ps": 1e-3},
    "t1": {"us": 1.0, "µs": 1.0, "ns": 1e-3, "ms": 1e3, "s": 1e6},
    "phase": {"rad": 1.0, "phi0": 2 * math.pi, "deg": math.pi / 180},
    "flux": {"phi0": 1.0},
    "none": {},
}
_QUANTITY = re.compile(r"^\s*([-+0-9.eE]+)\s*([A-Za-zµ0-9]*)\s*$")

EXPERIMENTS = ("spectrum", "zz-sweep", "rabi", "pulse", "evolve", "calibrate", "fidelity-sweep")

DEFAULTS = {
    "device": {
        "fluxonium_1": {"phi_ext": math.pi},
        "fluxonium_2": {"phi_ext": math.pi},
        "coupler": {"flux_fraction": 0.13},
        "truncation": {"fluxonium_levels": 4, "transmon_levels": 3, "fluxonium_basis_size": 100,
                       "charge_cutoff": 30},
    },
    "drive": {"eta_c": 0.6, "eta_f1": 0.028},
    "noise": {"coupler_t1": {"00": 0.54, "01": 1.55, "10": 1.05, "11": 1.19}},
    "experiments": {
        "spectrum": {"flux_fractions": [0.0, 0.13]},
        "zz-sweep": {"g12_range": [0.0, 50.0], "gic_range": [0.0, 300.0], "resolution": [20, 20],
                     "asymmetry": 1.0},
        "rabi": {"amplitude": 0.05, "t_max": 400.0, "resonant": True, "frame": "rotating"},
        "pulse": {"kind": "fast_drag", "t_g": 32.0, "sample_rate": 10.0},
        "evolve": {"kind": "cosine", "t_g": 68.0, "f_d": None, "area": None, "optimize": True, "frame": "lab",
                   "dt": None},
        "calibrate": {"kind": "cosine", "t_g": 68.0, "frame": "lab", "dt": None, "phase_noise_deg": 0.0},
        "fidelity-sweep": {"kinds": ["cosine", "drag", "fast_drag"],
                           "t_g": [40.0, 48.0, 56.0, 64.0, 68.0, 80.0, 100.0, 120.0],
                           "eta_c": [0.2, 0.6, 1.0], "frame": "lab", "dt": None},
    },
}

_FIELDS = {
    ("device", "fluxonium_1"): {"e_c": "energy", "e_l": "energy", "e_j": "energy", "phi_ext": "phase"},
    ("device", "fluxonium_2"): {"e_c": "energy", "e_l": "energy", "e_j": "energy", "phi_ext": "phase"},
    ("device", "coupler"): {"e_c": "energy", "e_j_total": "energy", "flux_fraction": "flux"},
    ("device", "couplings"): {"g_12": "coupling", "g_1c": "coupling", "g_2c": "coupling"},
    ("device", "truncation"): {k: "count" for k in DEFAULTS["device"]["truncation"]},
    ("drive",): {"eta_c": "none", "eta_f1": "none"},
}
_REQUIRED = {
    ("device", "fluxonium_1"): ("e_c", "e_l", "e_j"),
    ("device", "fluxonium_2"): ("e_c", "e_l", "e_j"),
    ("device", "coupler"): ("e_c", "e_j_total"),
    ("device", "couplings"): ("g_12", "g_1c", "g_2c"),
}
_EXPERIMENT_UNITS = {"t_g": "time", "t_max": "time", "dt": "time", "f_d": "energy",
                     "g12_range": "coupling", "gic_range": "coupling"}


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


def parse_quantity(value, kind: str, path: str = "value"):
    """Number in the canonical unit of ``kind``; strings may carry a unit suffix."""
    if value is None:
        return None
    if isinstance(value, bool):
        raise ConfigError(path, "expected a number")
    if isinstance(value, (int, float)):
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(path, f"expected a number or quantity string, got {type(value).__name__}")
    m = _QUANTITY.match(value)
    if not m:
        raise ConfigError(path, f"cannot parse quantity {value!r}")
    number, unit = float(m.group(1)), m.group(2).lower()
    if not unit:
        return number
    table = _UNITS.get(kind, {})
    if unit not in table:
        raise ConfigError(path, f"unit {m.group(2)!r} not valid here; expected one of {sorted(table) or ['none']}")
    return number * table[unit]


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _get(tree, keys):
    node = tree
    for k in keys:
        if not isinstance(node, dict) or k not in node:
            return None
        node = node[k]
    return node


def validate_config(source) -> dict:
    """Normalized config dict from a path, YAML text mapping or dict.

    Defaults are materialized and every quantity converted to its canonical
    unit. Errors name the offending field path.
    """
    if isinstance(source, (str, Path)) and not (isinstance(source, str) and "\n" in source):
        path = Path(source)
        if not path.is_file():
            raise ConfigError(str(path), "file not found")
        try:
            raw = yaml.safe_load(path.read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(str(path), f"invalid YAML: {exc}") from exc
    elif isinstance(source, str):
        raw = yaml.safe_load(source)
    else:
        raw = source
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "expected a mapping")
    unknown = set(raw) - {"device", "drive", "noise", "experiments"}
    if unknown:
        raise ConfigError("<root>", f"unknown sections {sorted(unknown)}")
    if not isinstance(raw.get("device"), dict):
        raise ConfigError("device", "missing device block")
    if raw["device"].get("couplings") is None:
        raise ConfigError("device.couplings", "coupling block is required (g_12, g_1c, g_2c in MHz)")
    cfg = _merge(DEFAULTS, raw)

    for keys, required in _REQUIRED.items():
        block = _get(cfg, keys)
        where = ".".join(keys)
        if not isinstance(block, dict):
            raise ConfigError(where, "missing block")
        for name in required:
            if block.get(name) is None:
                raise ConfigError(f"{where}.{name}", "required field missing")
    for keys, fields in _FIELDS.items():
        block = _get(cfg, keys)
        where = ".".join(keys)
        extra = set(block) - set(fields)
        if extra:
            raise ConfigError(where, f"unknown fields {sorted(extra)}")
        for name, kind in fields.items():
            p = f"{where}.{name}"
            if kind == "count":
                v = block[name]
                if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                    raise ConfigError(p, "expected a positive integer")
            else:
                block[name] = parse_quantity(block[name], kind, p)
    t1 = cfg["noise"].get("coupler_t1")
    if not isinstance(t1, dict) or set(map(str, t1)) != {"00", "01", "10", "11"}:
        raise ConfigError("noise.coupler_t1", "expected keys 00, 01, 10, 11")
    cfg["noise"]["coupler_t1"] = {str(k): parse_quantity(v, "t1", f"noise.coupler_t1.{k}") for k, v in t1.items()}
    for k, v in cfg["noise"]["coupler_t1"].items():
        if not v > 0:
            raise ConfigError(f"noise.coupler_t1.{k}", "T1 must be positive")
    exps = cfg["experiments"]
    bad = set(exps) - set(EXPERIMENTS)
    if bad:
        raise ConfigError("experiments", f"unknown experiment kinds {sorted(bad)}; valid: {list(EXPERIMENTS)}")
    for name, opts in exps.items():
        if not isinstance(opts, dict):
            raise ConfigError(f"experiments.{name}", "expected a mapping")
        for key, kind in _EXPERIMENT_UNITS.items():
            if key in opts and opts[key] is not None:
                p = f"experiments.{name}.{key}"
                if isinstance(opts[key], list):
                    opts[key] = [parse_quantity(v, kind, p) for v in opts[key]]
                else:
                    opts[key] = parse_quantity(opts[key], kind, p)
    try:
        build_params(cfg)
    except ValueError as exc:
        raise ConfigError("device", str(exc)) from exc
    return cfg


def emit_config(cfg: dict) -> str:
    """YAML text of a normalized config (canonical units, plain numbers)."""
    return yaml.safe_dump(cfg, sort_keys=True)


def build_params(cfg: dict) -> dict:
    """Keyword arguments for :func:`ftfsim.circuit.build_composite`."""
    d = cfg["device"]
    return {
        "f1": FluxoniumParams(**d["fluxonium_1"]),
        "f2": FluxoniumParams(**d["fluxonium_2"]),
        "c": TransmonParams(**d["coupler"]),
        "g": CouplingParams(**d["couplings"]),
        "trunc": TruncationSpec(**d["truncation"]),
    }


def noise_model(cfg: dict) -> NoiseModel:
    t1 = cfg["noise"]["coupler_t1"]
    return NoiseModel({(int(k[0]), int(k[1])): v for k, v in t1.items()})


DEVICE_YAML = """\
device:
  fluxonium_1: {e_c: 0.8805 GHz, e_l: 0.5008 GHz, e_j: 4.9928 GHz, phi_ext: 0.5 Phi0}
  fluxonium_2: {e_c: 0.8829 GHz, e_l: 0.4921 GHz, e_j: 4.3350 GHz, phi_ext: 0.5 Phi0}
  coupler: {e_c: 0.1861 GHz, e_j_total: 16.87 GHz, flux_fraction: 0.13}
  couplings: {g_12: 14 MHz, g_1c: 180 MHz, g_2c: 180 MHz}
"""
