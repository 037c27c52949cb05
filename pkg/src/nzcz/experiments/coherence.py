"""Ram-Z and Echo-Z coherence decays of q_H, and sigma estimation from Ram-Z data."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import brentq, curve_fit, minimize_scalar

from ..device import DeviceParams, GHZ, arc_flux, flux_sensitivity, qubit_frequency
from ..dynamics import gauss_hermite, liouvillian, qutrit_dephasing, qutrit_relaxation
from .oscillation import FitError

KINDS = ("ramz", "echoz")


def detuning_flux(params: DeviceParams, detuning: float) -> float:
    """Positive-branch flux where q_H sits ``detuning`` (Hz, cyclic) below its sweetspot."""
    omega = params.omega_sweetspot_H - 2 * np.pi * detuning
    return float(arc_flux(params.omega_sweetspot_H, params.eta_H, omega))


def _qutrit_liouvillian(params: DeviceParams, flux: float, relaxation: bool, dephasing: bool) -> np.ndarray:
    w = float(qubit_frequency(params, flux))
    h = np.diag([0.0, w, 2 * w + params.eta_H]).astype(complex)
    ops = []
    if relaxation:
        ops += qutrit_relaxation(params.t1_H)
    if dephasing:
        ops += qutrit_dephasing(float(params.t_phi_echo_H(flux)))
    return liouvillian(h, ops)


def _evolver(lv: np.ndarray):
    vals, vecs = np.linalg.eig(lv)
    inv = np.linalg.inv(vecs)

    def at(ts):
        ts = np.atleast_1d(ts)
        return np.einsum("ij,tj,jk->tik", vecs, np.exp(np.outer(ts, vals)), inv)

    return at


_PLUS = np.zeros((3, 3), dtype=complex)
_PLUS[:2, :2] = 0.5
_RHO0 = _PLUS.reshape(-1, order="F")
_I01 = 0 + 3 * 1  # column stacking: rho_ab sits at a + 3 b


def coherence_curve(params: DeviceParams, flux: float, durations, kind: str = "ramz", sigma: float = 0.0,
                    n_points: int = 61, relaxation: bool = True, dephasing: bool = True) -> np.ndarray:
    """2 |rho_01| after the flux pulse(s), averaged over a Gaussian static offset.

    Ram-Z holds ``flux`` for the full duration; Echo-Z holds +flux and then
    -flux for half the duration each.
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    durations = np.asarray(durations, dtype=float)
    nodes, weights = gauss_hermite(sigma, n_points) if sigma > 0 else (np.zeros(1), np.ones(1))
    acc = np.zeros(len(durations), dtype=complex)
    for d, w in zip(nodes, weights):
        fwd = _evolver(_qutrit_liouvillian(params, flux + d, relaxation, dephasing))
        if kind == "ramz":
            vec = fwd(durations) @ _RHO0
        else:
            back = _evolver(_qutrit_liouvillian(params, -flux + d, relaxation, dephasing))
            vec = np.einsum("tij,tjk,k->ti", back(durations / 2), fwd(durations / 2), _RHO0)
        acc += w * vec[:, _I01]
    return 2 * np.abs(acc)


def _decay(t, a, tau):
    return a * np.exp(-t / tau)


def fit_decay(t, y) -> tuple[float, float, float]:
    """Exponential fit a exp(-t/T); returns (T, stderr(T), a)."""
    t, y = np.asarray(t, dtype=float), np.asarray(y, dtype=float)
    if np.ptp(y) < 1e-3 * max(np.max(np.abs(y)), 1e-12):
        raise FitError("decay curve is flat")
    y_pos = np.clip(y, 1e-6, None)
    slope = np.polyfit(t, np.log(y_pos), 1, w=np.sqrt(y_pos))[0]
    tau0 = -1 / slope if slope < 0 else t[-1]
    try:
        popt, pcov = curve_fit(_decay, t, y, p0=[1.0, tau0], bounds=([0, 1e-12], [2, np.inf]), maxfev=20000)
    except (RuntimeError, ValueError) as exc:
        raise FitError(f"decay fit failed: {exc}") from exc
    err = float(np.sqrt(pcov[1, 1])) if np.isfinite(pcov[1, 1]) else np.inf
    return float(popt[1]), err, float(popt[0])


@dataclass(frozen=True)
class CoherenceData:
    kind: str
    detunings: np.ndarray  # Hz, cyclic, below sweetspot
    durations: np.ndarray  # s
    coherence: np.ndarray  # (n_detuning, n_duration)
    sigma: float | None = None  # flux noise used to generate (None for ingested data)
    times: np.ndarray | None = None  # fitted decay times
    time_errors: np.ndarray | None = None
    fit_errors: tuple = ()

    @property
    def rates(self) -> np.ndarray:
        return 1.0 / self.times

    def rows(self):
        for i, det in enumerate(self.detunings):
            for j, t in enumerate(self.durations):
                yield self.kind, float(det), float(t), float(self.coherence[i, j])

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kind", "detuning_hz", "duration_ns", "coherence"])
            for kind, det, t, c in self.rows():
                w.writerow([kind, f"{det:.9g}", f"{t * 1e9:.6f}", f"{c:.12g}"])


def _fitted(data: CoherenceData) -> CoherenceData:
    times, errs, bad = [], [], []
    for i, row in enumerate(data.coherence):
        try:
            tau, err, _ = fit_decay(data.durations, row)
        except FitError as exc:
            tau, err = np.nan, np.nan
            bad.append((float(data.detunings[i]), str(exc)))
        times.append(tau)
        errs.append(err)
    return CoherenceData(data.kind, data.detunings, data.durations, data.coherence, data.sigma,
                         np.array(times), np.array(errs), tuple(bad))


def load_coherence_csv(path: str | Path, kind: str = "ramz") -> CoherenceData:
    rows = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            if r.get("kind", kind) == kind:
                rows.append((float(r["detuning_hz"]), float(r["duration_ns"]) * 1e-9, float(r["coherence"])))
    if not rows:
        raise ValueError(f"no {kind} rows in {path}")
    dets = np.unique([r[0] for r in rows])
    durs = np.unique([r[1] for r in rows])
    grid = np.full((len(dets), len(durs)), np.nan)
    for d, t, c in rows:
        grid[np.searchsorted(dets, d), np.searchsorted(durs, t)] = c
    if np.isnan(grid).any():
        raise ValueError("coherence data must be a full detuning x duration grid")
    return _fitted(CoherenceData(kind, dets, durs, grid))


def ramz_echoz(params: DeviceParams, detunings, durations, kind: str = "ramz", sigma: float | None = None,
               shots: int | None = None, seed: int | None = 0, n_points: int = 61) -> CoherenceData:
    """Simulated decays with Markovian noise plus a static offset, fitted per detuning.

    With ``shots`` the curves carry Gaussian readout noise of width 1/sqrt(shots).
    """
    sigma = params.sigma_flux if sigma is None else sigma
    dets = np.atleast_1d(np.asarray(detunings, dtype=float))
    durs = np.asarray(durations, dtype=float)
    curves = np.array([coherence_curve(params, detuning_flux(params, d), durs, kind, sigma, n_points)
                       for d in dets])
    if shots:
        rng = np.random.default_rng(seed)
        curves = curves + rng.normal(0.0, 1 / np.sqrt(shots), curves.shape)
    return _fitted(CoherenceData(kind, dets, durs, curves, sigma))


def fit_sigma(data: CoherenceData, params: DeviceParams, bounds=(0.0, 500e-6), n_points: int = 61) -> float:
    """Static flux-noise width whose simulated Ram-Z decay rates best match ``data``."""
    if data.kind != "ramz":
        raise ValueError("sigma is identifiable from Ram-Z data only")
    if data.times is None or np.isnan(data.times).any():
        raise FitError("data has unfitted detunings")
    sens = np.array([abs(float(flux_sensitivity(params, detuning_flux(params, d)))) for d in data.detunings])
    if np.all(sens * bounds[1] * np.max(data.durations) < 1e-3):
        raise FitError("data is insensitive to static flux offsets (sweetspot only)")
    rates = 1.0 / data.times

    def model_rates(sigma):
        sim = ramz_echoz(params, data.detunings, data.durations, "ramz", sigma, n_points=n_points)
        return 1.0 / sim.times

    def cost(sigma):
        return float(np.sum(((model_rates(sigma) - rates) / rates) ** 2))

    grid = np.linspace(*bounds, 11)
    costs = np.array([cost(s) for s in grid])
    if np.ptp(costs) < 1e-9 * max(costs.max(), 1e-300):
        raise FitError("Ram-Z rates do not constrain sigma")
    k = int(np.argmin(costs))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    res = minimize_scalar(cost, bounds=(lo, hi), method="bounded", options={"xatol": 1e-8})
    return float(res.x) if res.fun <= costs[k] else float(grid[k])


def detuning_for_sensitivity(params: DeviceParams, sensitivity_ghz_per_phi0: float) -> float:
    """Detuning (Hz) at which |d omega / d Phi| equals the given value (GHz/Phi_0, cyclic)."""
    target = sensitivity_ghz_per_phi0 * GHZ

    def f(phi):
        return abs(float(flux_sensitivity(params, phi))) - target

    phi = brentq(f, 1e-6, 0.45)
    return float((params.omega_sweetspot_H - qubit_frequency(params, phi)) / (2 * np.pi))
