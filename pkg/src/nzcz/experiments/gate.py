"""Assembling, optimizing and phase-calibrating a full CZ gate window."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, minimize

from ..device import DeviceParams
from ..dynamics import Frame, NoiseModel, Superoperator, idle_frame, propagate
from ..metrics import GateMetrics, acquired_phase, gate_metrics, wrap
from ..pulses import ParametrizationError, PulseSpec, Waveform, build_phase_correction, build_waveform


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class GateWaveforms:
    flux_H: Waveform
    flux_M: Waveform | None
    spec: PulseSpec


def gate_waveforms(params: DeviceParams, spec: PulseSpec, amp_H: float | None = None,
                   amp_M: float | None = None) -> GateWaveforms:
    """Strong pulse followed by the T_1Q segment.

    With both amplitudes ``None`` the T_1Q segment is plain idling at the
    strong pulse's rest flux. Otherwise q_H gets a bipolar correction pulse
    that continues on the branch the strong pulse ended on (so an NZ gate
    returns to +Phi_op), and q_M gets a bipolar pulse on its own arc.
    """
    strong = build_waveform(spec, params)
    n1 = int(round(spec.t_1q * spec.sampling_rate))
    if amp_H is None and amp_M is None:
        idle = Waveform(np.full(n1, strong.rest), strong.dt, rest=strong.rest)
        return GateWaveforms(strong.concat(idle), None, spec)
    sign = 1 if strong.rest >= 0 else -1
    corr = build_phase_correction(spec.t_1q, amp_H or 0.0, sampling_rate=spec.sampling_rate,
                                  idle_flux=params.flux_operating, start_sign=sign)
    wf_h = strong.concat(corr)
    wf_m = None
    if amp_M:
        pulse_m = build_phase_correction(spec.t_1q, amp_M, sampling_rate=spec.sampling_rate)
        wf_m = Waveform(np.zeros(len(strong)), strong.dt, rest=0.0).concat(pulse_m)
    return GateWaveforms(wf_h, wf_m, spec)


def simulate_gate(params: DeviceParams, spec: PulseSpec, noise: NoiseModel | None = None,
                  amp_H: float | None = None, amp_M: float | None = None, dt: float = 0.1e-9,
                  frame: Frame | None = None, **kw) -> Superoperator:
    g = gate_waveforms(params, spec, amp_H, amp_M)
    return propagate(params, g.flux_H, noise, dt=dt, waveform_M=g.flux_M, frame=frame, **kw)


# -- optimization ------------------------------------------------------------------

@dataclass(frozen=True)
class OptimizationResult:
    spec: PulseSpec
    metrics: GateMetrics
    cost: float
    grid: list = field(default_factory=list, repr=False)  # (theta_f_deg, lambda_2, cost, phi_2q_deg, l1)
    n_evaluations: int = 0


def phase_penalty(phi_2q: float, target: float = np.pi, tolerance_deg: float = 0.5, weight: float = 1e-2) -> float:
    """Zero within ``tolerance_deg`` of the target, quadratic (per deg^2) beyond."""
    dev = abs(np.rad2deg(wrap(phi_2q - target)))
    return weight * max(0.0, dev - tolerance_deg) ** 2


def optimize_pulse(params: DeviceParams, t_2q: float, noise: NoiseModel | None = None,
                   bounds=((80.0, 130.0), (0.0, 0.6)), t_1q: float = 0.0, shape: str = "net_zero",
                   grid_step=(0.5, 0.01), refine: bool = True, dt: float = 0.1e-9,
                   sampling_rate: float = 1e9, max_iter: int = 200) -> OptimizationResult:
    """Grid search over (theta_f [deg], lambda_2) then Nelder-Mead on the phase-corrected infidelity."""
    noise = noise or NoiseModel.from_tier("A")
    frame = idle_frame(params)
    count = [0]

    def evaluate(th_deg, l2):
        spec = PulseSpec(np.deg2rad(th_deg), l2, t_2q, t_1q, shape, sampling_rate)
        count[0] += 1
        m = gate_metrics(simulate_gate(params, spec, noise, dt=dt, frame=frame))
        return spec, m, m.infidelity_pc + phase_penalty(m.phi_2q)

    (t_lo, t_hi), (l_lo, l_hi) = bounds
    thetas = np.arange(t_lo, t_hi + 1e-9, grid_step[0])
    lams = np.arange(l_lo, l_hi + 1e-9, grid_step[1])
    grid, best = [], None
    for th in thetas:
        for l2 in lams:
            try:
                spec, m, c = evaluate(float(th), float(l2))
            except (ParametrizationError, ValueError):
                grid.append((float(th), float(l2), np.nan, np.nan, np.nan))
                continue
            grid.append((float(th), float(l2), c, m.phi_2q_deg, m.leakage_l1))
            if best is None or c < best[2]:
                best = (spec, m, c)
    if best is None:
        raise CalibrationError("no valid grid point")

    if refine:
        cache = {}

        def f(x):
            th, l2 = float(np.clip(x[0], t_lo, t_hi)), float(np.clip(x[1], l_lo, l_hi))
            key = (round(th, 10), round(l2, 12))
            if key not in cache:
                try:
                    cache[key] = evaluate(th, l2)
                except (ParametrizationError, ValueError):
                    cache[key] = (None, None, 1e3)
            return cache[key][2]

        x0 = [np.rad2deg(best[0].theta_f), best[0].lambda_2]
        simplex = [x0, [x0[0] + grid_step[0], x0[1]], [x0[0], x0[1] + grid_step[1]]]
        minimize(f, x0, method="Nelder-Mead",
                 options={"initial_simplex": simplex, "xatol": 1e-3, "fatol": 1e-7, "maxiter": max_iter})
        for spec, m, c in cache.values():
            if spec is not None and c < best[2]:
                best = (spec, m, c)
    return OptimizationResult(best[0], best[1], best[2], grid, count[0])


# -- single-qubit phase calibration ----------------------------------------------------

@dataclass(frozen=True)
class PhaseCalibration:
    amp_H: float
    amp_M: float
    before: GateMetrics
    after: GateMetrics
    spec: PulseSpec

    @property
    def delta_phi_2q(self) -> float:
        return float(wrap(self.after.phi_2q - self.before.phi_2q))

    @property
    def delta_l1(self) -> float:
        return self.after.leakage_l1 - self.before.leakage_l1


def _solve_phase(fun, lo: float, hi: float, n_grid: int = 41, prefer: float = 0.0) -> float:
    """Amplitude in [lo, hi] where the wrapped phase ``fun`` hits 0 mod 2 pi, closest to ``prefer``."""
    xs = np.linspace(lo, hi, n_grid)
    ys = np.unwrap([fun(x) for x in xs])
    roots = []
    for i in range(len(xs) - 1):
        y0, y1 = ys[i], ys[i + 1]
        for k in range(int(np.ceil(min(y0, y1) / (2 * np.pi))), int(np.floor(max(y0, y1) / (2 * np.pi))) + 1):
            target = 2 * np.pi * k

            def g(x, y0=y0, target=target):
                # continuous continuation of the phase from the left bracket end
                return y0 + wrap(fun(x) - y0) - target

            if g(xs[i]) == 0:
                roots.append(xs[i])
            elif g(xs[i]) * g(xs[i + 1]) < 0:
                roots.append(brentq(g, xs[i], xs[i + 1], xtol=1e-13))
    if not roots:
        raise CalibrationError("phase-correction root search found no zero crossing")
    roots = np.array(roots)
    return float(roots[np.argmin(np.abs(roots - prefer))])


def calibrate_single_qubit_phases(params: DeviceParams, spec: PulseSpec, noise: NoiseModel | None = None,
                                  max_amp_H: float = 0.04, max_amp_M: float = 0.12, iterations: int = 4,
                                  dt: float = 0.1e-9, check: bool = True) -> PhaseCalibration:
    """Find correction amplitudes nulling phi_01 (q_H) and phi_10 (q_M) modulo 2 pi."""
    noise = noise or NoiseModel.from_tier("A")
    frame = idle_frame(params)
    if spec.t_1q <= 0:
        raise CalibrationError("phase calibration needs a T_1Q segment")

    def sim(a_h, a_m):
        return simulate_gate(params, spec, noise, a_h, a_m, dt=dt, frame=frame)

    before = gate_metrics(sim(0.0, 0.0))
    a_h, a_m = 0.0, 0.0
    tol = np.deg2rad(1e-3)
    for _ in range(iterations):
        p0 = sim(a_h, a_m)
        if abs(acquired_phase(p0, 0, 1)) < tol and abs(acquired_phase(p0, 1, 0)) < tol:
            break
        if abs(acquired_phase(p0, 0, 1)) >= tol:
            a_h = _solve_phase(lambda x: acquired_phase(sim(x, a_m), 0, 1),
                               -0.9 * params.flux_operating, max_amp_H, prefer=a_h)
        p1 = sim(a_h, a_m)
        if abs(acquired_phase(p1, 1, 0)) >= tol:
            a_m = _solve_phase(lambda x: acquired_phase(sim(a_h, x), 1, 0), 0.0, max_amp_M, prefer=a_m)
    after = gate_metrics(sim(a_h, a_m))
    if check and (abs(np.rad2deg(after.phi_01)) > 0.5 or abs(np.rad2deg(after.phi_10)) > 0.5):
        raise CalibrationError("single-qubit phase calibration did not converge")
    return PhaseCalibration(a_h, a_m, before, after, spec)


@dataclass(frozen=True)
class CalibratedGate:
    spec: PulseSpec
    amp_H: float
    amp_M: float
    metrics: GateMetrics  # under the calibration noise model
    calibration_noise: str = "A"

    def simulate(self, params: DeviceParams, noise: NoiseModel | None = None, dt: float = 0.1e-9,
                 frame: Frame | None = None) -> Superoperator:
        return simulate_gate(params, self.spec, noise, self.amp_H, self.amp_M, dt=dt, frame=frame)


def calibrated_gate(params: DeviceParams, t_2q: float, t_1q: float, noise: NoiseModel | None = None,
                    bounds=((80.0, 130.0), (0.0, 0.6)), grid_step=(2.0, 0.05), shape: str = "net_zero",
                    dt: float = 0.1e-9, sampling_rate: float = 1e9) -> CalibratedGate:
    """Optimize the strong pulse, then null the single-qubit phases, under one noise model."""
    noise = noise or NoiseModel.from_tier("A")
    opt = optimize_pulse(params, t_2q, noise, bounds, t_1q, shape, grid_step, dt=dt, sampling_rate=sampling_rate)
    cal = calibrate_single_qubit_phases(params, opt.spec, noise, dt=dt)
    label = noise.tier + ("+distortions" if noise.distortions and noise.tier != "E" else "")
    return CalibratedGate(opt.spec, cal.amp_H, cal.amp_M, cal.after, label)
