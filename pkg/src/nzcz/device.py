"""Static description of the fluxed/static transmon pair and its flux arc.

All quantities are stored in SI units with angular frequencies (rad/s) and
seconds. The JSON config format uses GHz/MHz/us and is converted at the
boundary by :func:`load_device` / :func:`device_to_dict`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

TWO_PI = 2 * np.pi
GHZ = TWO_PI * 1e9
MHZ = TWO_PI * 1e6
US = 1e-6

# single flux well only
FLUX_LIMIT = 0.5


class DomainError(ValueError):
    """Flux or frequency outside the single-well range of the flux arc."""


class ModelValidityError(ValueError):
    """Parameters break an assumption of the effective model."""


@dataclass(frozen=True)
class DephasingModel:
    """Pure-dephasing rate linear in the absolute flux sensitivity.

    rate(Phi) = intercept + slope * |d omega / d Phi|, with ``slope`` in
    units of Phi_0 (rate per angular sensitivity), so it reads as an
    effective flux-noise amplitude.
    """

    intercept: float  # 1/s
    slope: float  # Phi_0

    def rate(self, sensitivity):
        return self.intercept + self.slope * np.abs(sensitivity)


@dataclass(frozen=True)
class DeviceParams:
    omega_sweetspot_H: float
    omega_operating_H: float
    omega_M: float
    eta_H: float
    eta_M: float
    j1_at_crossing: float  # Hz, cyclic
    omega_bus: float
    t1_H: float
    t1_M: float
    t2_star_M: float
    t2_echo_M: float
    dephasing_echo_H: DephasingModel
    dephasing_star_H: DephasingModel
    sigma_flux: float = 55e-6
    # q_M sits at its sweetspot; its arc is only used by phase-correction pulses
    omega_sweetspot_M: float | None = None

    def __post_init__(self):
        if self.omega_sweetspot_M is None:
            object.__setattr__(self, "omega_sweetspot_M", self.omega_M)
        if not (self.eta_H < 0 and self.eta_M < 0):
            raise ValueError("anharmonicities must be negative")
        if self.omega_operating_H > self.omega_sweetspot_H:
            raise ValueError("q_H must be operated at or below its sweetspot")
        times = [self.t1_H, self.t1_M, self.t2_star_M, self.t2_echo_M]
        if min(times) <= 0:
            raise ValueError("coherence times must be strictly positive")
        if self.t2_echo_M < self.t2_star_M:
            raise ValueError("t2_echo_M must not be shorter than t2_star_M")
        if self.sigma_flux < 0:
            raise ValueError("sigma_flux must be non-negative")
        if self.dephasing_star_H.intercept < self.dephasing_echo_H.intercept or (
            self.dephasing_star_H.slope < self.dephasing_echo_H.slope
        ):
            raise ValueError("Ramsey dephasing must be at least as fast as echo dephasing")

    def with_(self, **changes) -> "DeviceParams":
        return replace(self, **changes)

    # -- derived quantities ------------------------------------------------

    @cached_property
    def flux_operating(self) -> float:
        """Positive-branch flux of the q_H operating point."""
        return flux_from_frequency(self, self.omega_operating_H, "positive")

    @cached_property
    def flux_crossing(self) -> float:
        """Positive-branch flux where |11> and |02> are degenerate."""
        return flux_from_frequency(self, self.omega_M - self.eta_H, "positive")

    @cached_property
    def g_product(self) -> float:
        """g_H * g_M (rad^2/s^2) reproducing J1 at the avoided crossing."""
        w_h = self.omega_M - self.eta_H
        d_m = self.omega_bus - self.omega_M
        d_h = self.omega_bus - w_h
        return 2 * TWO_PI * self.j1_at_crossing / (1 / d_m + 1 / d_h)

    @property
    def g_H(self) -> float:
        return float(np.sqrt(self.g_product))

    @property
    def g_M(self) -> float:
        return float(np.sqrt(self.g_product))

    @property
    def j2_at_crossing(self) -> float:
        """Angular J2 = sqrt(2) J1 at the crossing, used for pulse design."""
        return np.sqrt(2) * TWO_PI * self.j1_at_crossing

    def t_phi_echo_H(self, flux):
        return 1.0 / self.dephasing_echo_H.rate(flux_sensitivity(self, flux))

    def t2_echo_H(self, flux):
        return 1.0 / (1 / (2 * self.t1_H) + self.dephasing_echo_H.rate(flux_sensitivity(self, flux)))

    def t2_star_H(self, flux):
        return 1.0 / (1 / (2 * self.t1_H) + self.dephasing_star_H.rate(flux_sensitivity(self, flux)))


def _check_flux(flux):
    flux = np.asarray(flux, dtype=float)
    if not np.all(np.isfinite(flux)) or np.any(np.abs(flux) >= FLUX_LIMIT):
        raise DomainError(f"flux must be finite with |flux| < {FLUX_LIMIT} Phi_0")
    return flux


def arc_frequency(omega0, eta, flux):
    """Transmon flux arc for a qubit with sweetspot frequency ``omega0``."""
    flux = _check_flux(flux)
    return (omega0 - eta) * np.sqrt(np.abs(np.cos(np.pi * flux))) + eta


def arc_sensitivity(omega0, eta, flux):
    flux = _check_flux(flux)
    c = np.cos(np.pi * flux)
    return -(omega0 - eta) * np.pi * np.sin(np.pi * flux) / (2 * np.sqrt(c))


def arc_flux(omega0, eta, omega, branch="positive"):
    omega = np.asarray(omega, dtype=float)
    if np.any(omega > omega0 * (1 + 1e-15)) or np.any(omega <= eta):
        raise DomainError("target frequency outside the reachable flux arc")
    ratio = np.clip((omega - eta) / (omega0 - eta), 0.0, 1.0)
    flux = np.arccos(ratio**2) / np.pi
    if branch == "negative":
        return -flux
    if branch != "positive":
        raise ValueError("branch must be 'positive' or 'negative'")
    return flux


def qubit_frequency(params: DeviceParams, flux):
    """Angular frequency of q_H at ``flux`` (units of Phi_0)."""
    return arc_frequency(params.omega_sweetspot_H, params.eta_H, flux)


def flux_from_frequency(params: DeviceParams, target_omega, branch="positive"):
    """Invert the q_H flux arc on the requested branch."""
    return arc_flux(params.omega_sweetspot_H, params.eta_H, target_omega, branch)


def flux_sensitivity(params: DeviceParams, flux):
    """Analytic d omega_H / d Phi in rad/s per Phi_0."""
    return arc_sensitivity(params.omega_sweetspot_H, params.eta_H, flux)


def qubit_frequency_M(params: DeviceParams, flux):
    return arc_frequency(params.omega_sweetspot_M, params.eta_M, flux)


def coupling_j1(params: DeviceParams, flux, omega_m=None):
    """Bus-mediated exchange J1(Phi) in rad/s."""
    omega_m = params.omega_M if omega_m is None else omega_m
    d_m = params.omega_bus - omega_m
    d_h = params.omega_bus - qubit_frequency(params, flux)
    if np.any(d_m <= 0) or np.any(d_h <= 0):
        raise ModelValidityError("bus resonator must lie above both qubits")
    return params.g_product / 2 * (1 / d_m + 1 / d_h)


def coupling_j2(params: DeviceParams, flux, omega_m=None):
    return np.sqrt(2) * coupling_j1(params, flux, omega_m)


def bare_detuning(params: DeviceParams, flux):
    """epsilon = omega_|02> - omega_|11> = omega_H + eta_H - omega_M."""
    return qubit_frequency(params, flux) + params.eta_H - params.omega_M


def bisect_flux(params: DeviceParams, target_omega, branch="positive", xtol=1e-15):
    """Bisection inversion of the flux arc; independent of :func:`flux_from_frequency`."""
    sign = 1.0 if branch == "positive" else -1.0

    def f(phi):
        return float(qubit_frequency(params, sign * phi)) - target_omega

    return sign * brentq(f, 0.0, FLUX_LIMIT - 1e-9, xtol=xtol, rtol=4 * np.finfo(float).eps)


# -- config I/O -------------------------------------------------------------

_TABLE_S1 = {
    "q_H": {
        "freq_sweetspot_GHz": 6.91,
        "freq_operating_GHz": 6.87,
        "anharmonicity_MHz": -331.0,
        "T1_us": 19.2,
        "T2_star_operating_us": 3.2,
        "T2_echo_operating_us": 14.7,
    },
    "q_M": {
        "freq_GHz": 5.79,
        "anharmonicity_MHz": -300.0,
        "T1_us": 15.2,
        "T2_star_us": 14.8,
        "T2_echo_us": 19.4,
    },
    "J1_crossing_MHz": 14.3,
    "bus_freq_GHz": 8.5,
    "sigma_flux_uPhi0": 55.0,
}


def table_s1_config() -> dict:
    """Device config mirroring the measured device table."""
    return json.loads(json.dumps(_TABLE_S1))


def _pure_rate(t2, t1):
    rate = 1 / t2 - 1 / (2 * t1)
    if rate <= 0:
        raise ModelValidityError("T2 >= 2 T1 leaves no pure dephasing")
    return rate


def _linear_model(rate_sweetspot, rate_operating, sensitivity_operating):
    slope = (rate_operating - rate_sweetspot) / abs(sensitivity_operating)
    return DephasingModel(rate_sweetspot, max(slope, 0.0))


def device_from_dict(cfg: dict) -> DeviceParams:
    h, m = cfg["q_H"], cfg["q_M"]
    omega0 = h["freq_sweetspot_GHz"] * GHZ
    eta_h = h["anharmonicity_MHz"] * MHZ
    omega_op = h["freq_operating_GHz"] * GHZ
    t1_h = h["T1_us"] * US
    t1_m = m["T1_us"] * US
    flux_op = float(arc_flux(omega0, eta_h, omega_op))
    sens_op = float(arc_sensitivity(omega0, eta_h, flux_op))

    # Intercepts default to q_M's sweetspot pure-dephasing rates; q_H's own
    # sweetspot rates are not part of the table.
    echo_m = _pure_rate(m["T2_echo_us"] * US, t1_m)
    star_m = _pure_rate(m["T2_star_us"] * US, t1_m)
    deph = cfg.get("q_H_dephasing", {})
    if "echo_intercept_per_us" in deph:
        echo = DephasingModel(deph["echo_intercept_per_us"] / US, deph["echo_slope_uPhi0"] * 1e-6)
    else:
        echo = _linear_model(echo_m, _pure_rate(h["T2_echo_operating_us"] * US, t1_h), sens_op)
    if "star_intercept_per_us" in deph:
        star = DephasingModel(deph["star_intercept_per_us"] / US, deph["star_slope_uPhi0"] * 1e-6)
    else:
        star = _linear_model(star_m, _pure_rate(h["T2_star_operating_us"] * US, t1_h), sens_op)

    return DeviceParams(
        omega_sweetspot_H=omega0,
        omega_operating_H=omega_op,
        omega_M=m["freq_GHz"] * GHZ,
        eta_H=eta_h,
        eta_M=m["anharmonicity_MHz"] * MHZ,
        j1_at_crossing=cfg["J1_crossing_MHz"] * 1e6,
        omega_bus=cfg["bus_freq_GHz"] * GHZ,
        t1_H=t1_h,
        t1_M=t1_m,
        t2_star_M=m["T2_star_us"] * US,
        t2_echo_M=m["T2_echo_us"] * US,
        dephasing_echo_H=echo,
        dephasing_star_H=star,
        sigma_flux=cfg.get("sigma_flux_uPhi0", 55.0) * 1e-6,
        omega_sweetspot_M=m.get("freq_sweetspot_GHz", m["freq_GHz"]) * GHZ,
    )


def device_to_dict(p: DeviceParams) -> dict:
    return {
        "q_H": {
            "freq_sweetspot_GHz": p.omega_sweetspot_H / GHZ,
            "freq_operating_GHz": p.omega_operating_H / GHZ,
            "anharmonicity_MHz": p.eta_H / MHZ,
            "T1_us": p.t1_H / US,
            "T2_star_operating_us": float(p.t2_star_H(p.flux_operating)) / US,
            "T2_echo_operating_us": float(p.t2_echo_H(p.flux_operating)) / US,
        },
        "q_M": {
            "freq_GHz": p.omega_M / GHZ,
            "freq_sweetspot_GHz": p.omega_sweetspot_M / GHZ,
            "anharmonicity_MHz": p.eta_M / MHZ,
            "T1_us": p.t1_M / US,
            "T2_star_us": p.t2_star_M / US,
            "T2_echo_us": p.t2_echo_M / US,
        },
        "q_H_dephasing": {
            "echo_intercept_per_us": p.dephasing_echo_H.intercept * US,
            "echo_slope_uPhi0": p.dephasing_echo_H.slope * 1e6,
            "star_intercept_per_us": p.dephasing_star_H.intercept * US,
            "star_slope_uPhi0": p.dephasing_star_H.slope * 1e6,
        },
        "J1_crossing_MHz": p.j1_at_crossing / 1e6,
        "bus_freq_GHz": p.omega_bus / GHZ,
        "sigma_flux_uPhi0": p.sigma_flux * 1e6,
    }


def default_device() -> DeviceParams:
    return device_from_dict(table_s1_config())


def load_device(path: str | Path) -> DeviceParams:
    with open(path) as fh:
        return device_from_dict(json.load(fh))
