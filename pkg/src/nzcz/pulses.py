"""Martinis-Geller fast-adiabatic flux pulses, unipolar and Net-Zero.

A pulse is specified by the midpoint mixing angle ``theta_f``, the second
harmonic coefficient ``lambda_2`` and the strong-pulse duration ``t_2q``.
The angle trajectory is defined in proper time and mapped to real time, then
converted theta -> epsilon -> omega_H -> flux.

Flux samples are absolute (units of Phi_0, sweetspot at 0). Net-Zero pulses
run the first half on the positive branch of the flux arc and the second
half on the negative branch, so their samples integrate to zero.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .device import DeviceParams, DomainError, FLUX_LIMIT, flux_from_frequency

SHAPES = ("unipolar", "net_zero")


class ParametrizationError(ValueError):
    pass


@dataclass(frozen=True)
class PulseSpec:
    theta_f: float
    lambda_2: float
    t_2q: float
    t_1q: float = 0.0
    shape: str = "net_zero"
    sampling_rate: float = 1e9
    # idle time at the sweetspot inserted between the two NZ halves
    buffer: float = 0.0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"shape must be one of {SHAPES}")
        if self.t_2q <= 0 or self.t_1q < 0 or self.buffer < 0:
            raise ValueError("durations must be positive")
        if not 0 < self.theta_f < np.pi:
            raise ValueError("theta_f must lie in (0, pi)")
        if self.sampling_rate * self.t_2q < 20 - 1e-9:
            raise ValueError("need at least 20 samples across the strong pulse")

    @property
    def t_cz(self) -> float:
        return self.t_2q + self.buffer + self.t_1q

    def to_dict(self) -> dict:
        return {
            "theta_f_deg": float(np.rad2deg(self.theta_f)),
            "lambda_2": self.lambda_2,
            "t_2q_ns": round(self.t_2q * 1e9, 9),
            "t_1q_ns": round(self.t_1q * 1e9, 9),
            "shape": self.shape,
            "sampling_rate_GSps": self.sampling_rate / 1e9,
            "buffer_ns": round(self.buffer * 1e9, 9),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PulseSpec":
        return cls(
            theta_f=np.deg2rad(d["theta_f_deg"]),
            lambda_2=d.get("lambda_2", 0.0),
            t_2q=d["t_2q_ns"] / 1e9,
            t_1q=d.get("t_1q_ns", 0.0) / 1e9,
            shape=d.get("shape", "net_zero"),
            sampling_rate=d.get("sampling_rate_GSps", 1.0) * 1e9,
            buffer=d.get("buffer_ns", 0.0) / 1e9,
        )


@dataclass(frozen=True)
class Waveform:
    """Sampled flux trajectory, zero-order-hold samples at ``t0 + k dt``.

    ``rest`` is the flux the qubit is left at after the last sample; it sets
    the right boundary for interpolation onto a finer simulation grid.
    """

    samples: np.ndarray
    dt: float
    t0: float = 0.0
    rest: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        if s.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if np.any(np.abs(s) >= FLUX_LIMIT):
            raise DomainError("waveform leaves the single flux well")

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) * self.dt

    @property
    def sampling_rate(self) -> float:
        return 1.0 / self.dt

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.samples))

    def area(self) -> float:
        return float(np.sum(self.samples) * self.dt)

    def replace_samples(self, samples, rest=None) -> "Waveform":
        return Waveform(samples, self.dt, self.t0, self.rest if rest is None else rest, dict(self.meta))

    def concat(self, other: "Waveform") -> "Waveform":
        if not np.isclose(self.dt, other.dt, rtol=1e-12, atol=0):
            raise ValueError("cannot concatenate waveforms with different dt")
        return Waveform(np.concatenate([self.samples, other.samples]), self.dt, self.t0, other.rest)

    def interpolate(self, dt_sim: float, nodes=None) -> np.ndarray:
        """Flux at points of a ``dt_sim`` grid spanning the waveform.

        Samples are joined linearly; the segment after the last sample ramps
        to ``rest``. Without ``nodes`` the flux is taken at step midpoints,
        shape (n_steps,). ``nodes`` gives fractional positions inside each
        step and the result has shape (n_steps, len(nodes)).
        """
        n_steps = int(round(self.duration / dt_sim))
        if not np.isclose(n_steps * dt_sim, self.duration, rtol=1e-9, atol=1e-15):
            raise ValueError("waveform duration is not a multiple of the simulation step")
        knots_t = np.arange(len(self.samples) + 1) * self.dt
        knots_y = np.append(self.samples, self.rest)
        if nodes is not None:
            c = np.asarray(nodes, dtype=float)
            t = (np.arange(n_steps)[:, None] + c[None, :]) * dt_sim
            return np.interp(t, knots_t, knots_y)
        if np.isclose(dt_sim, self.dt, rtol=1e-12, atol=0):
            return np.asarray(self.samples, dtype=float).copy()
        t_mid = (np.arange(n_steps) + 0.5) * dt_sim
        return np.interp(t_mid, knots_t, knots_y)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_ns", "flux_phi0"])
            for t, v in zip(self.times, self.samples):
                w.writerow([f"{t * 1e9:.6f}", repr(float(v))])

    def to_binary(self, path: str | Path) -> None:
        """Raw little-endian float64 samples, no header."""
        np.asarray(self.samples, dtype="<f8").tofile(path)

    @classmethod
    def from_binary(cls, path: str | Path, dt: float, rest: float = 0.0) -> "Waveform":
        return cls(np.fromfile(path, dtype="<f8"), dt, rest=rest)


def theta_of(epsilon, j2):
    """Mixing angle on the (0, pi) branch; pi/2 at zero detuning."""
    if np.any(np.asarray(j2) <= 0):
        raise ValueError("j2 must be positive")
    return np.arctan2(2 * np.asarray(j2), np.asarray(epsilon))


def epsilon_of(theta, j2):
    return 2 * j2 * np.cos(theta) / np.sin(theta)


def theta_waveform(spec: PulseSpec, theta_i: float, duration: float | None = None) -> Callable:
    """Truncated (N=2) cosine series for theta in proper time.

    ``duration`` is the proper-time period; it defaults to ``spec.t_2q``.
    """
    period = spec.t_2q if duration is None else duration
    if not theta_i < spec.theta_f:
        raise ParametrizationError("theta_f must exceed the idle angle theta_i")
    lam1 = (spec.theta_f - theta_i) / 2
    lam2 = spec.lambda_2

    def theta(tau):
        x = 2 * np.pi * np.asarray(tau, dtype=float) / period
        return theta_i + lam1 * (1 - np.cos(x)) + lam2 * (1 - np.cos(2 * x))

    return theta


def proper_time_map(theta_fn: Callable, t_2q: float, n_steps: int, oversample: int = 10):
    """Invert t(tau) = int_0^tau sin(theta) on a uniform real-time grid.

    Returns ``(t, tau)`` with ``t`` uniform on [0, t(t_2q)] and ``n_steps``
    points.
    """
    n_fine = max(oversample * n_steps, 20001)
    tau_fine = np.linspace(0.0, t_2q, n_fine)
    s = np.sin(theta_fn(tau_fine))
    if np.any(s <= 0):
        raise ParametrizationError("sin(theta) must stay positive along the pulse")
    t_fine = cumulative_trapezoid(s, tau_fine, initial=0.0)
    t = np.linspace(0.0, t_fine[-1], n_steps)
    return t, np.interp(t, t_fine, tau_fine)


def theta_i_of(params: DeviceParams) -> float:
    from .device import bare_detuning

    return float(theta_of(bare_detuning(params, params.flux_operating), params.j2_at_crossing))


def _half_flux(spec: PulseSpec, params: DeviceParams, duration: float, theta_i: float) -> np.ndarray:
    """Positive-branch flux samples of one unipolar segment lasting ``duration``."""
    n = int(round(duration * spec.sampling_rate))
    if not np.isclose(n / spec.sampling_rate, duration, rtol=1e-9, atol=0):
        raise ValueError("segment duration must be an integer number of samples")
    if n % 2:
        raise ValueError("segments need an even sample count to place a sample at the midpoint")
    unit = theta_waveform(spec, theta_i, duration=1.0)
    u = np.linspace(0.0, 1.0, 20001)
    mean_sin = np.trapezoid(np.sin(unit(u)), u)
    period = duration / mean_sin
    theta_fn = theta_waveform(spec, theta_i, duration=period)
    # grid on [0, duration] with n + 1 points, last one is the closing edge
    t, tau = proper_time_map(theta_fn, period, n + 1, oversample=40)
    tau[n // 2] = period / 2
    tau[0] = 0.0
    theta = theta_fn(tau[:n])
    eps = epsilon_of(theta, params.j2_at_crossing)
    omega_h = eps + params.omega_M - params.eta_H
    omega_h = np.minimum(omega_h, params.omega_sweetspot_H)
    return flux_from_frequency(params, omega_h, "positive")


def build_waveform(spec: PulseSpec, params: DeviceParams) -> Waveform:
    """Strong flux pulse (without the phase-correction segment)."""
    theta_i = theta_i_of(params)
    if spec.theta_f <= theta_i:
        raise ParametrizationError("theta_f below the idle angle")
    dt = 1.0 / spec.sampling_rate
    if spec.shape == "unipolar":
        samples = _half_flux(spec, params, spec.t_2q, theta_i)
        rest = params.flux_operating
    else:
        half = _half_flux(spec, params, spec.t_2q / 2, theta_i)
        n_buf = int(round(spec.buffer * spec.sampling_rate))
        if not np.isclose(n_buf / spec.sampling_rate, spec.buffer, rtol=1e-9, atol=1e-15):
            raise ValueError("buffer must be an integer number of samples")
        samples = np.concatenate([half, np.zeros(n_buf), -half])
        rest = -params.flux_operating
    meta = {"shape": spec.shape, "theta_i": theta_i}
    return Waveform(samples, dt, 0.0, rest, meta)


def build_phase_correction(t_1q: float, amplitude: float, shape: str = "bipolar_square",
                           sampling_rate: float = 1e9, idle_flux: float = 0.0, start_sign: int = 1) -> Waveform:
    """Zero-average soft-square correction pulse of duration ``t_1q``.

    The first half sits at ``start_sign * (idle_flux + amplitude)`` and the
    second at the mirror flux, with half-amplitude edge samples. ``idle_flux``
    is the positive-branch idle flux of the pulsed qubit, so zero amplitude
    leaves its frequency unchanged; with ``idle_flux = 0`` and zero
    amplitude the waveform is identically zero.
    """
    if shape != "bipolar_square":
        raise ValueError("only 'bipolar_square' correction pulses are implemented")
    if start_sign not in (1, -1):
        raise ValueError("start_sign must be +1 or -1")
    n = int(round(t_1q * sampling_rate))
    if n == 0:
        return Waveform(np.zeros(0), 1.0 / sampling_rate, rest=start_sign * idle_flux)
    if n % 2:
        raise ValueError("correction pulse needs an even number of samples")
    half = np.full(n // 2, idle_flux + amplitude)
    if n // 2 >= 3:
        half[0] = half[-1] = idle_flux + amplitude / 2
    samples = start_sign * np.concatenate([half, -half])
    return Waveform(samples, 1.0 / sampling_rate, rest=-start_sign * idle_flux)


def idle_waveform(duration: float, flux: float, sampling_rate: float = 1e9) -> Waveform:
    n = int(round(duration * sampling_rate))
    if not np.isclose(n / sampling_rate, duration, rtol=1e-9, atol=1e-15):
        raise ValueError("idle duration must be an integer number of samples")
    return Waveform(np.full(n, flux), 1.0 / sampling_rate, rest=flux)
