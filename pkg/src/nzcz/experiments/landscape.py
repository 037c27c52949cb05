"""Parameter landscapes over (theta_f, lambda_2), buffer sweeps and fringe detection."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import curve_fit
from scipy.signal import find_peaks

from ..device import DeviceParams
from ..dynamics import NoiseModel, idle_frame
from ..interferometer import fringe_period
from ..metrics import gate_metrics
from ..pulses import PulseSpec
from .gate import simulate_gate
from .oscillation import conditional_oscillation

COLUMNS = ("theta_f_deg", "lambda_2", "phi_2q_deg", "leakage_l1", "infidelity_pc", "error")


@dataclass(frozen=True)
class LandscapeResult:
    theta_f_deg: np.ndarray
    lambda_2: np.ndarray
    phi_2q_deg: np.ndarray  # shape (n_lambda, n_theta)
    leakage_l1: np.ndarray
    infidelity: np.ndarray
    errors: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def rows(self):
        for j, l2 in enumerate(self.lambda_2):
            for i, th in enumerate(self.theta_f_deg):
                yield (float(th), float(l2), float(self.phi_2q_deg[j, i]), float(self.leakage_l1[j, i]),
                       float(self.infidelity[j, i]), self.errors.get((j, i), ""))

    def unwrapped_phase(self) -> np.ndarray:
        """Conditional phase unwrapped along theta_f for each lambda_2 row."""
        ph = np.deg2rad(self.phi_2q_deg)
        out = np.full_like(ph, np.nan)
        for j, row in enumerate(ph):
            ok = np.isfinite(row)
            if ok.any():
                out[j, ok] = np.unwrap(row[ok])
        return np.rad2deg(out)


def _point(args):
    params, spec, noise, t_1q_idle, estimator, dt = args
    try:
        p = simulate_gate(params, spec, noise, dt=dt)
        m = gate_metrics(p)
        l1 = m.leakage_l1
        if estimator == "cond_osc":
            l1 = conditional_oscillation(p).leakage_estimate
        return m.phi_2q_deg, l1, m.infidelity_pc, ""
    except Exception as exc:  # recorded per point, scan continues
        return np.nan, np.nan, np.nan, f"{type(exc).__name__}: {exc}"


def landscape_scan(params: DeviceParams, theta_f_deg, lambda_2, t_2q: float, t_1q: float = 0.0,
                   noise: NoiseModel | None = None, estimator: str = "exact", shape: str = "net_zero",
                   sampling_rate: float = 1e9, buffer: float = 0.0, dt: float = 0.1e-9,
                   jobs: int | None = 1) -> LandscapeResult:
    if estimator not in ("exact", "cond_osc"):
        raise ValueError("estimator must be 'exact' or 'cond_osc'")
    noise = noise or NoiseModel.from_tier("A")
    th = np.asarray(theta_f_deg, dtype=float)
    lam = np.asarray(lambda_2, dtype=float)
    tasks, keys, errors = [], [], {}
    for j, l2 in enumerate(lam):
        for i, t in enumerate(th):
            try:
                spec = PulseSpec(np.deg2rad(t), float(l2), t_2q, t_1q, shape, sampling_rate, buffer)
            except ValueError as exc:
                errors[(j, i)] = f"{type(exc).__name__}: {exc}"
                continue
            tasks.append((params, spec, noise, 0.0, estimator, dt))
            keys.append((j, i))
    jobs = jobs or os.cpu_count() or 1
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_point, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        idle_frame(params)
        results = [_point(t) for t in tasks]
    shape2 = (len(lam), len(th))
    phi, l1, eps = (np.full(shape2, np.nan) for _ in range(3))
    for (j, i), (a, b, c, err) in zip(keys, results):
        phi[j, i], l1[j, i], eps[j, i] = a, b, c
        if err:
            errors[(j, i)] = err
    meta = {"t_2q_ns": t_2q * 1e9, "t_1q_ns": t_1q * 1e9, "tier": noise.tier, "shape": shape,
            "estimator": estimator, "kernel": noise.kernel_id if noise.distortions else "none",
            "buffer_ns": buffer * 1e9}
    return LandscapeResult(th, lam, phi, l1, eps, errors, meta)


# -- fringe detection ------------------------------------------------------------

def leakage_minima(l1_row: np.ndarray, prominence_decades: float = 1.0) -> np.ndarray:
    """Indices of local minima of log10(L1) with at least the given prominence."""
    y = -np.log10(np.clip(np.asarray(l1_row, dtype=float), 1e-12, None))
    y = np.where(np.isfinite(y), y, np.nanmin(y))
    peaks, _ = find_peaks(y, prominence=prominence_decades)
    return peaks


def count_fringe_rows(result: LandscapeResult, prominence_decades: float = 1.0,
                      min_theta_deg: float | None = None) -> int:
    """Rows (fixed lambda_2) showing an isolated low-leakage dip along theta_f.

    Only dips at theta_f above ``min_theta_deg`` count, so the broad
    adiabatic low-leakage region at small angles is not mistaken for a
    fringe.
    """
    n = 0
    for row in result.leakage_l1:
        idx = leakage_minima(row, prominence_decades)
        if min_theta_deg is not None:
            idx = idx[result.theta_f_deg[idx] >= min_theta_deg]
        n += int(len(idx) > 0)
    return n


def exclusive_low_leakage(result: LandscapeResult, reference: LandscapeResult, low: float = 10 ** -3.5,
                          high: float = 1e-2) -> np.ndarray:
    """Mask of grid points where ``result`` barely leaks (L1 < low) while ``reference`` clearly does (L1 > high).

    With the full Net-Zero landscape as ``result`` and the half pulse as
    ``reference`` the mask marks the interference fringe; swapping the two
    must give an empty mask, since a leak-free half pulse cannot give a
    leaky composite.
    """
    if not (np.array_equal(result.theta_f_deg, reference.theta_f_deg)
            and np.array_equal(result.lambda_2, reference.lambda_2)):
        raise ValueError("landscapes must share the same grid")
    a, b = result.leakage_l1, reference.leakage_l1
    return np.isfinite(a) & np.isfinite(b) & (a < low) & (b > high)


def fringe_rows(mask: np.ndarray) -> int:
    """Number of lambda_2 rows the mask touches."""
    return int(np.any(mask, axis=1).sum())


# -- buffer sweep ------------------------------------------------------------------

@dataclass(frozen=True)
class BufferSweepResult:
    buffers: np.ndarray
    leakage_l1: np.ndarray
    phi_2q_deg: np.ndarray
    minima: np.ndarray  # buffer values of local leakage minima
    period: float  # fitted fringe period (s)
    period_error: float
    expected_period: float


def _cosine(t, a, b, period, phase):
    return a + b * np.cos(2 * np.pi * t / period + phase)


def fit_period(t: np.ndarray, y: np.ndarray, guess: float) -> tuple[float, float]:
    a0, b0 = float(np.mean(y)), float(np.ptp(y) / 2)
    best = None
    for ph in np.linspace(0, 2 * np.pi, 8, endpoint=False):
        try:
            popt, pcov = curve_fit(_cosine, t, y, p0=[a0, b0, guess, ph], maxfev=20000)
        except RuntimeError:
            continue
        res = np.sum((_cosine(t, *popt) - y) ** 2)
        if best is None or res < best[0]:
            best = (res, popt, pcov)
    if best is None:
        raise RuntimeError("fringe period fit failed")
    _, popt, pcov = best
    return abs(float(popt[2])), float(np.sqrt(abs(pcov[2, 2])))


def buffer_sweep(params: DeviceParams, spec: PulseSpec, buffers, noise: NoiseModel | None = None,
                 dt: float = 0.1e-9) -> BufferSweepResult:
    """Insert sweetspot idling between the NZ halves and track leakage.

    The sampling rate is raised to the simulation rate so that sub-ns
    buffers are representable.
    """
    if spec.shape != "net_zero":
        raise ValueError("buffer sweeps need a Net-Zero pulse")
    noise = noise or NoiseModel.from_tier("A")
    buffers = np.asarray(buffers, dtype=float)
    if np.any(buffers < 0):
        raise ValueError("buffers must be non-negative")
    frame = idle_frame(params)
    rate = 1.0 / dt
    l1, phi = [], []
    for b in buffers:
        s = PulseSpec(spec.theta_f, spec.lambda_2, spec.t_2q, spec.t_1q, "net_zero", rate, float(b))
        m = gate_metrics(simulate_gate(params, s, noise, dt=dt, frame=frame))
        l1.append(m.leakage_l1)
        phi.append(m.phi_2q_deg)
    l1 = np.array(l1)
    expected = fringe_period(params)
    if len(buffers) >= 5:
        period, err = fit_period(buffers, l1, expected)
    else:
        period, err = np.nan, np.nan  # too few points to fit a cosine
    y = -l1
    idx, _ = find_peaks(y)
    return BufferSweepResult(buffers, l1, np.array(phi), buffers[idx], period, err, expected)
