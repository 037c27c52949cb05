"""Linear time-invariant model of the flux-control line.

Impulse responses are stored as discrete taps: ``taps[k]`` is the response
integrated over ``[k dt, (k+1) dt)``, so ``sum(taps)`` is the DC gain and the
step response is ``cumsum(taps)``. An ideal line is a single unit tap.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .pulses import Waveform


class DistortionError(ValueError):
    pass


@dataclass(frozen=True)
class ImpulseResponse:
    taps: np.ndarray
    dt: float
    label: str = field(default="", compare=False)

    def __post_init__(self):
        t = np.asarray(self.taps, dtype=float)
        if t.ndim != 1 or len(t) == 0:
            raise DistortionError("kernel must be a non-empty 1-D array")
        t.setflags(write=False)
        object.__setattr__(self, "taps", t)

    @property
    def normalization(self) -> float:
        """DC gain."""
        return float(np.sum(self.taps))

    @property
    def kernel(self) -> np.ndarray:
        """Continuous-time impulse response h(t) in 1/s."""
        return self.taps / self.dt

    @classmethod
    def delta(cls, dt: float, length: int = 1) -> "ImpulseResponse":
        taps = np.zeros(length)
        taps[0] = 1.0
        return cls(taps, dt, "ideal")

    def to_csv(self, path: str | Path) -> None:
        _write_csv(path, self.dt * np.arange(len(self.taps)), self.kernel, "impulse_per_ns", scale=1e-9)


@dataclass(frozen=True)
class StepResponse:
    samples: np.ndarray
    dt: float

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(len(self.samples))

    def settled_band(self, after: float) -> tuple[float, float]:
        s = self.samples[self.times >= after]
        return float(s.min()), float(s.max())

    def to_csv(self, path: str | Path) -> None:
        _write_csv(path, self.times, self.samples, "amplitude")


def _write_csv(path, t, y, name, scale=1.0):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_ns", name])
        for ti, yi in zip(t, y):
            w.writerow([f"{ti * 1e9:.6f}", repr(float(yi * scale))])


def _check_dt(waveform_dt, kernel_dt, resample):
    if np.isclose(waveform_dt, kernel_dt, rtol=1e-9, atol=0):
        return False
    if not resample:
        raise DistortionError(
            f"sample period mismatch ({waveform_dt:g} s vs {kernel_dt:g} s); pass resample=True"
        )
    return True


def resample_kernel(h: ImpulseResponse, dt: float) -> ImpulseResponse:
    """Resample through the step response, which preserves the DC gain."""
    s = np.cumsum(h.taps)
    t_old = h.dt * np.arange(1, len(s) + 1)
    n_new = int(np.ceil(t_old[-1] / dt))
    t_new = dt * np.arange(1, n_new + 1)
    s_new = np.interp(t_new, np.concatenate([[0.0], t_old]), np.concatenate([[0.0], s]))
    return ImpulseResponse(np.diff(s_new, prepend=0.0), dt, h.label)


def convolve(waveform: Waveform, h: ImpulseResponse, resample: bool = False,
             baseline: float = 0.0) -> Waveform:
    """Causal convolution, output truncated to the input length.

    The input is taken to sit at ``baseline`` before and after the
    waveform; the response to the baseline itself is not distorted.
    """
    if _check_dt(waveform.dt, h.dt, resample):
        h = resample_kernel(h, waveform.dt)
    x = np.asarray(waveform.samples) - baseline
    n = len(x)
    taps = h.taps[:n] if len(h.taps) > n else h.taps
    if n * len(taps) > 2_000_000:
        y = signal.fftconvolve(x, taps)[:n]
    else:
        y = np.convolve(x, taps)[:n]
    return waveform.replace_samples(y + baseline)


def step_response(h: ImpulseResponse) -> StepResponse:
    return StepResponse(np.cumsum(h.taps), h.dt)


def compose(h1: ImpulseResponse, h2: ImpulseResponse, length: int | None = None) -> ImpulseResponse:
    if not np.isclose(h1.dt, h2.dt, rtol=1e-9, atol=0):
        raise DistortionError("kernels must share the same dt")
    n = length or (len(h1.taps) + len(h2.taps) - 1)
    taps = signal.fftconvolve(h1.taps, h2.taps)[:n] if n > 64 else np.convolve(h1.taps, h2.taps)[:n]
    return ImpulseResponse(taps, h1.dt, f"{h1.label}*{h2.label}")


# -- kernel synthesis ---------------------------------------------------------

def exponential_kernel(tau: float, dt: float, length: int, gain: float = 1.0) -> ImpulseResponse:
    """Bin-integrated (gain/tau) exp(-t/tau): a single-pole low-pass."""
    a = np.exp(-dt / tau)
    taps = gain * (1 - a) * a ** np.arange(length)
    return ImpulseResponse(taps, dt, f"lowpass({tau:g})")


def settling_kernel(components, dt: float, length: int, gain: float = 1.0) -> ImpulseResponse:
    """Line whose step response is gain * (1 + sum_i A_i exp(-t / tau_i)).

    ``components`` is an iterable of ``(A_i, tau_i)``. Taps are differences
    of the step response at bin edges, with the first tap carrying the
    instantaneous jump.
    """
    edges = dt * np.arange(1, length + 1)
    s = np.full(length, 1.0)
    for amp, tau in components:
        s = s + amp * np.exp(-edges / tau)
    s *= gain
    return ImpulseResponse(np.diff(s, prepend=0.0), dt, "settling")


# Default synthetic residual: amplitudes <= 1.5 %, time constants 1 ns .. 10 us.
RESIDUAL_COMPONENTS = ((-0.012, 2e-9), (0.008, 40e-9), (-0.005, 700e-9), (0.004, 8e-6))


def synthetic_residual(dt: float, horizon: float = 50e-6, components=RESIDUAL_COMPONENTS) -> ImpulseResponse:
    """Stand-in for the residual response measured after predistortion."""
    for amp, tau in components:
        if abs(amp) > 0.015 or not 1e-9 <= tau <= 10e-6:
            raise DistortionError("synthetic residual components must keep |A| <= 1.5% and 1 ns <= tau <= 10 us")
    h = settling_kernel(components, dt, int(round(horizon / dt)))
    return ImpulseResponse(h.taps, dt, "synthetic_residual")


# Raw line used for uncorrected pulses: a low-pass, a bias-tee-like droop and
# slow settling tails.
RAW_LINE_COMPONENTS = ((-0.35, 1.5e-9), (0.06, 30e-9), (-0.08, 400e-9), (0.05, 3e-6))


def synthetic_raw_line(dt: float, horizon: float = 50e-6, components=RAW_LINE_COMPONENTS) -> ImpulseResponse:
    h = settling_kernel(components, dt, int(round(horizon / dt)))
    return ImpulseResponse(h.taps, dt, "synthetic_raw_line")


# -- inversion ----------------------------------------------------------------

@dataclass(frozen=True)
class InverseFilterResult:
    filter: ImpulseResponse
    residual_deviation: float  # max |s(t) - 1| of filter*h after ``settle``


def inverse_filter(h: ImpulseResponse, regularization: float = 1e-10, n_taps: int | None = None,
                   horizon: int | None = None, settle: float | None = None) -> InverseFilterResult:
    """Regularized frequency-domain inverse truncated to a causal FIR.

    ``horizon`` is the FFT length in samples (defaults to 4x the kernel),
    ``n_taps`` the retained FIR length. The achievable residual of the
    combined response is reported instead of raising when the inversion is
    ill-conditioned.
    """
    dc = h.normalization
    if abs(dc) < 1e-12:
        raise DistortionError("kernel with zero DC gain cannot be inverted")
    n = horizon or 4 * len(h.taps)
    n = int(2 ** np.ceil(np.log2(max(n, 8))))
    H = np.fft.rfft(h.taps, n)
    Hinv = np.conj(H) / (np.abs(H) ** 2 + regularization)
    g = np.fft.irfft(Hinv, n)
    n_taps = n_taps or len(h.taps)
    g = g[:n_taps]
    # restore the exact DC gain lost to truncation
    g[-1] += 1.0 / dc - g.sum() if n_taps > 1 else 0.0
    inv = ImpulseResponse(g, h.dt, f"inverse({h.label})")
    combined = compose(inv, h, length=min(len(inv.taps) + len(h.taps) - 1, n))
    s = np.cumsum(combined.taps)
    start = int(np.ceil((settle or 0.0) / h.dt))
    dev = float(np.max(np.abs(s[start:] - 1.0))) if start < len(s) else 0.0
    return InverseFilterResult(inv, dev)


def exponential_iir_correction(amplitude: float, tau: float, dt: float):
    """First-order IIR (b, a) inverting a step response 1 + A exp(-t/tau).

    The line is modelled in discrete time as
    H(z) = 1 + A (1 - p) / (1 - p z^-1) with p = exp(-dt/tau).
    """
    p = np.exp(-dt / tau)
    k = 1 + amplitude * (1 - p)
    # H(z) = (k - (p + A(1-p) - A(1-p)) z^-1 ...) -> written out:
    # H(z) = (1 - p z^-1 + A (1 - p)) / (1 - p z^-1)
    b = np.array([1.0, -p])
    a = np.array([k, -p])
    return b, a


def exponential_line(amplitude: float, tau: float, dt: float, length: int) -> ImpulseResponse:
    """Impulse response of H(z) = 1 + A (1 - p) / (1 - p z^-1)."""
    p = np.exp(-dt / tau)
    taps = amplitude * (1 - p) * p ** np.arange(length)
    taps[0] += 1.0
    return ImpulseResponse(taps, dt, f"overshoot({amplitude:g},{tau:g})")


def apply_iir(waveform: Waveform, b, a, baseline: float = 0.0) -> Waveform:
    x = np.asarray(waveform.samples) - baseline
    return waveform.replace_samples(signal.lfilter(b, a, x) + baseline)


def iir_impulse(b, a, dt: float, length: int) -> ImpulseResponse:
    x = np.zeros(length)
    x[0] = 1.0
    return ImpulseResponse(signal.lfilter(b, a, x), dt, "iir")


# -- measured data --------------------------------------------------------------

def load_step_response(path: str | Path, dt: float | None = None) -> ImpulseResponse:
    """Read a ``t_ns,amplitude`` step-response CSV and differentiate it.

    The line is assumed to rest at 0 before t = 0. If ``dt`` is given the step
    response is linearly resampled to that period first.
    """
    t, s = [], []
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if header is None:
            raise DistortionError("empty step-response file")
        for row in rows:
            if not row:
                continue
            try:
                t.append(float(row[0]) * 1e-9)
                s.append(float(row[1]))
            except (ValueError, IndexError) as exc:
                raise DistortionError(f"malformed row {row!r}") from exc
    t, s = np.asarray(t), np.asarray(s)
    if len(t) < 2:
        raise DistortionError("need at least two samples")
    if not np.all(np.isfinite(t)) or not np.all(np.isfinite(s)):
        raise DistortionError("step response contains NaN or inf")
    if np.any(np.diff(t) <= 0):
        raise DistortionError("time column must be strictly increasing")
    native_dt = float(np.median(np.diff(t)))
    dt = dt or native_dt
    if t[0] < -1e-15:
        keep = t >= -1e-15
        t, s = t[keep], s[keep]
    # samples at t = k dt are the step response over the bin ending at (k+1) dt
    n = int(np.floor((t[-1] + 1e-15) / dt)) + 1
    grid = dt * np.arange(n)
    s_grid = np.interp(grid, t, s)
    return ImpulseResponse(np.diff(s_grid, prepend=0.0), dt, str(Path(path).name))


def write_step_response(path: str | Path, s: StepResponse) -> None:
    s.to_csv(path)


def kernel_surgery(h: ImpulseResponse, cutoff: float, factor: complex = 0.0, additive: np.ndarray | None = None,
                   n_fft: int | None = None, about_identity: bool = False) -> ImpulseResponse:
    """Modify the kernel spectrum strictly below ``cutoff`` (Hz).

    Bins with |f| < cutoff are multiplied by ``factor`` (DC bin included),
    keeping the spectrum Hermitian so the kernel stays real. With
    ``about_identity`` only the deviation H - 1 from an ideal line is scaled.
    The result is not causal in general; it is used as a what-if kernel.
    """
    n = n_fft or len(h.taps)
    H = np.fft.rfft(h.taps, n)
    f = np.fft.rfftfreq(n, h.dt)
    sel = f < cutoff
    H = H.copy()
    if about_identity:
        H[sel] = 1 + (H[sel] - 1) * factor
    else:
        H[sel] = H[sel] * factor
    if additive is not None:
        H[sel] += additive[: sel.sum()]
    return ImpulseResponse(np.fft.irfft(H, n), h.dt, f"surgery({h.label})")
