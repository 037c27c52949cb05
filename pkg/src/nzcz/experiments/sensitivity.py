"""Static flux-offset sensitivity and pulse-history dependence."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import distortion
from ..device import DeviceParams
from ..dynamics import NoiseModel, idle_frame, propagate
from ..metrics import acquired_phase, conditional_phase, wrap
from ..pulses import PulseSpec, Waveform
from .gate import gate_waveforms


@dataclass(frozen=True)
class OffsetScan:
    offsets: np.ndarray  # Phi_0
    phi_2q_deg: np.ndarray
    coefficients: np.ndarray  # quadratic fit [c2, c1, c0] in deg / Phi_0^k

    @property
    def linear(self) -> float:
        return float(self.coefficients[1])

    @property
    def quadratic(self) -> float:
        return float(self.coefficients[0])


def dc_offset_sensitivity(params: DeviceParams, spec: PulseSpec, offsets, noise: NoiseModel | None = None,
                          amp_H: float | None = None, amp_M: float | None = None,
                          dt: float = 0.1e-9) -> OffsetScan:
    """Conditional phase versus a static flux offset on q_H, with a quadratic fit."""
    offsets = np.asarray(offsets, dtype=float)
    if not np.allclose(np.sort(offsets), np.sort(-offsets), atol=1e-15):
        raise ValueError("offsets must be symmetric around zero")
    noise = noise or NoiseModel.from_tier("A")
    frame = idle_frame(params)
    g = gate_waveforms(params, spec, amp_H, amp_M)
    phis = []
    for d in offsets:
        p = propagate(params, g.flux_H, noise, dt=dt, waveform_M=g.flux_M, delta_phi=float(d), frame=frame)
        phis.append(conditional_phase(p, positive=True))
    phis = np.rad2deg(np.unwrap(phis))
    coef = np.polyfit(offsets, phis, 2)
    return OffsetScan(offsets, phis, coef)


# -- history dependence ------------------------------------------------------------

@dataclass(frozen=True)
class HistoryResult:
    t_sep: np.ndarray
    phi_01_deg: np.ndarray  # single-qubit phase of q_H during the second gate
    reference_deg: float  # same gate without a preceding pulse
    label: str = ""

    @property
    def spread_deg(self) -> float:
        return float(np.ptp(self.phi_01_deg))

    @property
    def deviation_deg(self) -> np.ndarray:
        return np.rad2deg(wrap(np.deg2rad(self.phi_01_deg - self.reference_deg)))


def _gate(params, spec):
    # NZ gates return to +Phi_op through a zero-amplitude correction segment,
    # unipolar gates idle at +Phi_op, so the line always settles at the same flux.
    amp = 0.0 if spec.shape == "net_zero" else None
    return gate_waveforms(params, spec, amp_H=amp).flux_H


def second_gate_phase(params: DeviceParams, gate: Waveform, prefix: Waveform | None,
                      kernel: distortion.ImpulseResponse, dt: float = 0.1e-9, frame=None,
                      predistortion: distortion.ImpulseResponse | None = None) -> float:
    """phi_01 of ``gate`` after ``prefix``, with the whole record sent through ``kernel``."""
    full = gate if prefix is None else prefix.concat(gate)
    if predistortion is not None:
        full = distortion.convolve(full, predistortion, baseline=params.flux_operating)
    out = distortion.convolve(full, kernel, baseline=params.flux_operating)
    window = Waveform(np.clip(out.samples[len(full) - len(gate):], -0.499, 0.499), gate.dt, rest=gate.rest)
    p = propagate(params, window, NoiseModel.from_tier("A"), dt=dt, frame=frame)
    return acquired_phase(p, 0, 1)


def history_dependence(params: DeviceParams, spec: PulseSpec, t_seps, kernel: distortion.ImpulseResponse,
                       predistortion: distortion.ImpulseResponse | None = None, dt: float = 0.1e-9,
                       label: str = "") -> HistoryResult:
    """Second-gate single-qubit phase versus separation from an identical earlier gate.

    ``kernel`` is the line response the samples see. Pass the raw line for an
    uncorrected scenario, or the residual response (or the raw line plus a
    ``predistortion`` filter) for corrected ones.
    """
    frame = idle_frame(params)
    gate = _gate(params, spec)
    ref = second_gate_phase(params, gate, None, kernel, dt, frame, predistortion)
    phis = []
    for ts in np.asarray(t_seps, dtype=float):
        n = int(round(ts * spec.sampling_rate))
        idle = Waveform(np.full(n, params.flux_operating), gate.dt, rest=params.flux_operating)
        prefix = gate.concat(idle)
        phis.append(second_gate_phase(params, gate, prefix, kernel, dt, frame, predistortion))
    phis = np.rad2deg(np.unwrap([ref] + phis))
    return HistoryResult(np.asarray(t_seps, dtype=float), phis[1:], float(phis[0]), label)


@dataclass(frozen=True)
class SurgeryResult:
    cutoff: float  # Hz
    factor: float
    delta_phi_01: float  # rad
    delta_phi_10: float
    delta_phi_2q: float

    @property
    def max_abs(self) -> float:
        return float(max(abs(self.delta_phi_01), abs(self.delta_phi_10), abs(self.delta_phi_2q)))


def kernel_surgery_invariance(params: DeviceParams, spec: PulseSpec, kernel: distortion.ImpulseResponse,
                              cutoff: float | None = None, factors=(0.0, 2.0),
                              dt: float = 0.1e-9) -> list[SurgeryResult]:
    """Gate phase changes when the kernel's deviation from an ideal line is rescaled below ``cutoff``.

    The default cutoff is 1/T_CZ.
    """
    cutoff = cutoff if cutoff is not None else 1.0 / (spec.t_2q + spec.t_1q)
    frame = idle_frame(params)
    gate = _gate(params, spec)

    def phases(k):
        out = distortion.convolve(gate, k, baseline=params.flux_operating)
        p = propagate(params, out, NoiseModel.from_tier("A"), dt=dt, frame=frame)
        return np.array([acquired_phase(p, 0, 1), acquired_phase(p, 1, 0), conditional_phase(p)])

    ref = phases(kernel)
    out = []
    for fac in factors:
        k2 = distortion.kernel_surgery(kernel, cutoff, factor=fac, about_identity=True)
        d = wrap(phases(k2) - ref)
        out.append(SurgeryResult(cutoff, float(fac), *map(float, d)))
    return out
