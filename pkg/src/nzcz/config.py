"""Run configuration: JSON schema, loading and resolution into model objects."""
from __future__ import annotations

import copy
import hashlib
import json
import os
from pathlib import Path

import jsonschema
import numpy as np

from . import distortion
from .device import DeviceParams, default_device, device_from_dict
from .dynamics import TIERS, NoiseModel
from .pulses import SHAPES, PulseSpec

CONFIG_ENV = "NZCZ_CONFIG"
SEARCH_PATH_ENV = "NZCZ_CONFIG_PATH"

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NUM_LIST = {"type": "array", "items": _NUM, "minItems": 1}
_RANGE = {
    "oneOf": [
        _NUM_LIST,
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["start", "stop"],
            "properties": {"start": _NUM, "stop": _NUM, "step": _POS, "num": {"type": "integer", "minimum": 1}},
        },
    ]
}


def _block(props: dict, required=()) -> dict:
    return {"type": "object", "additionalProperties": False, "properties": props, "required": list(required)}


_QUBIT_H = _block({
    "freq_sweetspot_GHz": _POS, "freq_operating_GHz": _POS, "anharmonicity_MHz": _NUM, "T1_us": _POS,
    "T2_star_operating_us": _POS, "T2_echo_operating_us": _POS,
}, ["freq_sweetspot_GHz", "freq_operating_GHz", "anharmonicity_MHz", "T1_us",
    "T2_star_operating_us", "T2_echo_operating_us"])
_QUBIT_M = _block({
    "freq_GHz": _POS, "freq_sweetspot_GHz": _POS, "anharmonicity_MHz": _NUM, "T1_us": _POS,
    "T2_star_us": _POS, "T2_echo_us": _POS,
}, ["freq_GHz", "anharmonicity_MHz", "T1_us", "T2_star_us", "T2_echo_us"])
DEVICE_SCHEMA = _block({
    "q_H": _QUBIT_H,
    "q_M": _QUBIT_M,
    "q_H_dephasing": _block({
        "echo_intercept_per_us": {"type": "number", "minimum": 0}, "echo_slope_uPhi0": {"type": "number", "minimum": 0},
        "star_intercept_per_us": {"type": "number", "minimum": 0}, "star_slope_uPhi0": {"type": "number", "minimum": 0},
    }),
    "J1_crossing_MHz": _POS,
    "bus_freq_GHz": _POS,
    "sigma_flux_uPhi0": {"type": "number", "minimum": 0},
}, ["q_H", "q_M", "J1_crossing_MHz", "bus_freq_GHz"])

_PULSE = _block({
    "theta_f_deg": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 180},
    "lambda_2": _NUM,
    "t_2q_ns": _POS,
    "t_1q_ns": {"type": "number", "minimum": 0},
    "shape": {"enum": list(SHAPES)},
    "sampling_rate_GSps": _POS,
    "buffer_ns": {"type": "number", "minimum": 0},
    "amp_H": _NUM,
    "amp_M": _NUM,
}, ["t_2q_ns"])

_KERNEL = {
    "oneOf": [
        _block({"synthetic": {"enum": ["residual", "raw_line", "ideal"]}}, ["synthetic"]),
        _block({"step_response_csv": {"type": "string"}}, ["step_response_csv"]),
    ]
}

_NOISE = _block({
    "tier": {"enum": list(TIERS)},
    "sigma_flux_uPhi0": {"type": "number", "minimum": 0},
    "n_quadrature": {"type": "integer", "minimum": 1},
    "kernel": _KERNEL,
})

_EXPERIMENTS = {
    "landscape": _block({"theta_f_deg": _RANGE, "lambda_2": _RANGE, "estimator": {"enum": ["exact", "cond_osc"]}},
                        ["theta_f_deg", "lambda_2"]),
    "optimize": _block({
        "theta_f_deg_bounds": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
        "lambda_2_bounds": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
        "grid_step": {"type": "array", "items": _POS, "minItems": 2, "maxItems": 2},
        "calibrate": {"type": "boolean"},
        "refine": {"type": "boolean"},
    }),
    "sensitivity": _block({"offsets_mPhi0": _RANGE}, ["offsets_mPhi0"]),
    "history": _block({
        "t_sep_ns": _RANGE,
        "line": {"enum": ["raw_line", "residual"]},
    }, ["t_sep_ns"]),
    "ramz": _block({
        "kind": {"enum": ["ramz", "echoz", "both"]},
        "detunings_MHz": _RANGE,
        "durations_us": _RANGE,
        "sigma_uPhi0": {"type": "number", "minimum": 0},
        "shots": {"type": "integer", "minimum": 1},
        "fit_sigma": {"type": "boolean"},
    }, ["detunings_MHz", "durations_us"]),
    "rb": _block({
        "lengths": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 4},
        "n_seeds": {"type": "integer", "minimum": 1},
        "interleaved": {"type": "boolean"},
        "bootstrap": {"type": "integer", "minimum": 0},
        "depolarizing_p": {"type": "number", "minimum": 0, "maximum": 1},
    }),
    "mz": _block({
        "alpha": _NUM, "phi_half": _NUM, "phi_tilde": _RANGE,
        "convention": {"enum": ["literal", "su2", "auto"]},
    }),
    "ablation": _block({
        "tiers": {"type": "array", "items": {"enum": list(TIERS)}, "minItems": 1},
        "recalibrate_distorted": {"type": "boolean"},
    }),
    "buffer": _block({"buffers_ns": _RANGE}, ["buffers_ns"]),
}

RUN_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "nzcz run configuration",
    **_block({
        "device": {"oneOf": [{"type": "string"}, DEVICE_SCHEMA]},
        "pulse": _PULSE,
        "noise": _NOISE,
        "dt_ns": _POS,
        "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
        "output": {"type": "string"},
        **_EXPERIMENTS,
    }),
}


class ConfigError(ValueError):
    pass


def validate(cfg: dict, schema: dict = RUN_SCHEMA) -> None:
    try:
        jsonschema.validate(cfg, schema)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from exc


def find_config(name: str | None) -> Path | None:
    """Resolve a config path; relative names are also searched in $NZCZ_CONFIG_PATH."""
    if name is None:
        name = os.environ.get(CONFIG_ENV)
        if not name:
            return None
    p = Path(name)
    if p.is_absolute() or p.exists():
        return p
    for d in os.environ.get(SEARCH_PATH_ENV, "").split(os.pathsep):
        if d and (Path(d) / name).exists():
            return Path(d) / name
    raise FileNotFoundError(f"config {name!r} not found (searched cwd and ${SEARCH_PATH_ENV})")


def load_config(path: str | Path | None) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    validate(cfg)
    cfg = copy.deepcopy(cfg)
    cfg.setdefault("_base", str(Path(path).resolve().parent))
    return cfg


def config_hash(cfg: dict) -> str:
    clean = {k: v for k, v in cfg.items() if not k.startswith("_")}
    return hashlib.sha256(json.dumps(clean, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _path(cfg: dict, p: str) -> Path:
    q = Path(p)
    return q if q.is_absolute() else Path(cfg.get("_base", ".")) / q


def resolve_device(cfg: dict) -> DeviceParams:
    dev = cfg.get("device")
    if dev is None:
        return default_device()
    if isinstance(dev, str):
        with open(_path(cfg, dev)) as fh:
            dev = json.load(fh)
        validate(dev, DEVICE_SCHEMA)
    return device_from_dict(dev)


def resolve_range(spec) -> np.ndarray:
    if isinstance(spec, list):
        return np.asarray(spec, dtype=float)
    if "num" in spec:
        return np.linspace(spec["start"], spec["stop"], spec["num"])
    step = spec.get("step")
    if step is None:
        raise ConfigError("range needs 'step' or 'num'")
    n = int(np.floor((spec["stop"] - spec["start"]) / step + 1e-9)) + 1
    return spec["start"] + step * np.arange(max(n, 0))


DEFAULT_PULSE = {"theta_f_deg": 100.6891, "lambda_2": 0.37520, "t_2q_ns": 28.0, "t_1q_ns": 12.0, "shape": "net_zero"}


def resolve_pulse(cfg: dict) -> tuple[PulseSpec, float | None, float | None]:
    d = {**DEFAULT_PULSE, **cfg.get("pulse", {})}
    amp_h, amp_m = d.pop("amp_H", None), d.pop("amp_M", None)
    return PulseSpec.from_dict(d), amp_h, amp_m


def resolve_kernel(cfg: dict, dt: float = 1e-9) -> tuple[distortion.ImpulseResponse | None, str]:
    k = cfg.get("noise", {}).get("kernel", {"synthetic": "residual"})
    if "synthetic" in k:
        kind = k["synthetic"]
        if kind == "residual":
            return distortion.synthetic_residual(dt), "synthetic_residual"
        if kind == "raw_line":
            return distortion.synthetic_raw_line(dt), "synthetic_raw_line"
        return distortion.ImpulseResponse.delta(dt), "ideal"
    path = _path(cfg, k["step_response_csv"])
    h = distortion.load_step_response(path, dt)
    return h, f"step_response:{Path(path).name}"


def resolve_noise(cfg: dict, tier: str | None = None) -> NoiseModel:
    n = cfg.get("noise", {})
    kernel, kid = resolve_kernel(cfg)
    kw = {"kernel": kernel, "kernel_id": kid, "n_quadrature": n.get("n_quadrature", 7)}
    if "sigma_flux_uPhi0" in n:
        kw["sigma_flux"] = n["sigma_flux_uPhi0"] * 1e-6
    return NoiseModel.from_tier(tier or n.get("tier", "A"), **kw)
