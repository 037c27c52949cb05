"""Two-qutrit Hamiltonian, Lindblad dissipators and sliced propagation.

Basis ordering is |q_M, q_H> with flat index ``3 * i_M + i_H``. Density
matrices are vectorized by column stacking, so ``vec(A rho B) =
kron(B.T, A) vec(rho)`` and a unitary U acts as ``kron(U.conj(), U)``.

Propagators are returned in a fixed reporting frame: the dressed eigenbasis
of the idle Hamiltonian, rotated by the idle single-qubit frequencies of
q_M and q_H. Idling therefore leaves |00>, |01>, |10> untouched and only
accumulates the residual ZZ phase on |11>.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.linalg import expm

from . import distortion
from .device import (
    DeviceParams,
    ModelValidityError,
    arc_frequency,
    flux_sensitivity,
    qubit_frequency,
)
from .pulses import Waveform

DIM = 3
DIM2 = DIM * DIM
TIERS = ("A", "B", "C", "D", "E")
COMPUTATIONAL = (0, 1, 3, 4)  # 00, 01, 10, 11
LEAKAGE = (2, 5, 6, 7, 8)  # 02, 12, 20, 21, 22
DEFAULT_DT = 0.1e-9
# two-point Gauss-Legendre nodes inside a step; with the commutator term the
# slice exponentials form a fourth-order Magnus product
GAUSS_NODES = (0.5 - np.sqrt(3) / 6, 0.5 + np.sqrt(3) / 6)
_MAGNUS_C = np.sqrt(3) / 12


class NumericalInstabilityError(RuntimeError):
    pass


def index(i_m: int, i_h: int) -> int:
    return DIM * i_m + i_h


def state_label(k: int) -> str:
    return f"{k // DIM}{k % DIM}"


# -- operators --------------------------------------------------------------

_a = np.diag(np.sqrt(np.arange(1, DIM)), 1).astype(complex)
_id3 = np.eye(DIM, dtype=complex)
A_M = np.kron(_a, _id3)
A_H = np.kron(_id3, _a)
N_M = np.diag(np.repeat(np.arange(DIM), DIM)).real
N_H = np.diag(np.tile(np.arange(DIM), DIM)).real
_n_m = np.diag(N_M)
_n_h = np.diag(N_H)
# a_M a_H^dag + h.c.
EXCHANGE = A_M @ A_H.conj().T + A_M.conj().T @ A_H


def embed_M(op3):
    return np.kron(op3, _id3)


def embed_H(op3):
    return np.kron(_id3, op3)


def _coupling(params: DeviceParams, omega_h, omega_m):
    d_m = params.omega_bus - omega_m
    d_h = params.omega_bus - omega_h
    if np.any(d_m <= 0) or np.any(d_h <= 0):
        raise ModelValidityError("bus resonator must lie above both qubits")
    return params.g_product / 2 * (1 / d_m + 1 / d_h)


def _diagonal(params, omega_h, omega_m, omega_ref):
    """Diagonal of H - omega_ref * N_total for arrays of frequencies, shape (n, 9)."""
    omega_h = np.atleast_1d(omega_h)[:, None]
    omega_m = np.atleast_1d(omega_m)[:, None]
    return ((omega_m - omega_ref) * _n_m + params.eta_M / 2 * _n_m * (_n_m - 1)
            + (omega_h - omega_ref) * _n_h + params.eta_H / 2 * _n_h * (_n_h - 1))


def hamiltonians(params: DeviceParams, omega_h, omega_m=None, omega_ref: float = 0.0) -> np.ndarray:
    """Batch of rotating-wave Hamiltonians (n, 9, 9) from frequency trajectories."""
    omega_h = np.atleast_1d(np.asarray(omega_h, dtype=float))
    omega_m = np.full_like(omega_h, params.omega_M) if omega_m is None else np.broadcast_to(omega_m, omega_h.shape)
    diag = _diagonal(params, omega_h, omega_m, omega_ref)
    j1 = _coupling(params, omega_h, omega_m)
    h = j1[:, None, None] * EXCHANGE[None]
    h[:, np.arange(DIM2), np.arange(DIM2)] += diag
    return h


def hamiltonian_at(params: DeviceParams, flux: float, omega_m: float | None = None,
                   omega_ref: float = 0.0) -> np.ndarray:
    """9x9 Hamiltonian (rad/s) with q_H at ``flux``."""
    return hamiltonians(params, qubit_frequency(params, flux), omega_m, omega_ref)[0]


# -- dissipators --------------------------------------------------------------

def pure_dephasing_time(t1: float, t2: float) -> float:
    """T_phi = (1/T2 - 1/(2 T1))^-1; infinite T1/T2 gives infinite T_phi."""
    if np.isinf(t2):
        return np.inf
    rate = 1 / t2 - 1 / (2 * t1)
    if rate <= 0:
        raise ModelValidityError(
            f"T2 = {t2:g} s >= 2 T1 = {2 * t1:g} s leaves no pure dephasing (T_phi undefined)"
        )
    return 1 / rate


def qutrit_relaxation(t1: float) -> list[np.ndarray]:
    if np.isinf(t1):
        return []
    return [np.sqrt(1 / t1) * _a]


def qutrit_dephasing(t_phi: float) -> list[np.ndarray]:
    """Three diagonal jump operators giving coherence decay rates (1, 2, 1)/T_phi on (01, 02, 12)."""
    if np.isinf(t_phi):
        return []
    return [
        np.sqrt(8 / (9 * t_phi)) * np.diag([1.0, 0.0, -1.0]).astype(complex),
        np.sqrt(2 / (9 * t_phi)) * np.diag([1.0, -1.0, 0.0]).astype(complex),
        np.sqrt(2 / (9 * t_phi)) * np.diag([0.0, 1.0, -1.0]).astype(complex),
    ]


def jump_operators(params: DeviceParams, flux: float, relaxation: bool = True,
                   dephasing: bool = True) -> list[np.ndarray]:
    """Two-qutrit jump operators at q_H flux ``flux`` (Markovian, echo-based)."""
    ops = []
    if relaxation:
        ops += [embed_M(c) for c in qutrit_relaxation(params.t1_M)]
        ops += [embed_H(c) for c in qutrit_relaxation(params.t1_H)]
    if dephasing:
        t_phi_m = pure_dephasing_time(params.t1_M, params.t2_echo_M)
        ops += [embed_M(c) for c in qutrit_dephasing(t_phi_m)]
        ops += [embed_H(c) for c in qutrit_dephasing(float(params.t_phi_echo_H(flux)))]
    return ops


def dissipator(ops) -> np.ndarray:
    """Liouville matrix of sum_k D[c_k]."""
    n = ops[0].shape[0] if len(ops) else DIM2
    d = np.zeros((n * n, n * n), dtype=complex)
    eye = np.eye(n)
    for c in ops:
        cdc = c.conj().T @ c
        d += np.kron(c.conj(), c) - 0.5 * np.kron(eye, cdc) - 0.5 * np.kron(cdc.T, eye)
    return d


def liouvillian(h: np.ndarray, ops=()) -> np.ndarray:
    eye = np.eye(h.shape[0])
    return -1j * (np.kron(eye, h) - np.kron(h.T, eye)) + (dissipator(ops) if len(ops) else 0)


# -- noise model --------------------------------------------------------------

@dataclass(frozen=True)
class NoiseModel:
    tier: str = "A"
    relaxation: bool = False
    dephasing: bool = False
    quasi_static: bool = False
    distortions: bool = False
    sigma_flux: float | None = None  # defaults to the device value
    n_quadrature: int = 7
    kernel: distortion.ImpulseResponse | None = field(default=None, compare=False)
    kernel_id: str = "synthetic_residual"

    @classmethod
    def from_tier(cls, tier: str, **kw) -> "NoiseModel":
        tier = tier.upper()
        if tier not in TIERS:
            raise ValueError(f"tier must be one of {TIERS}")
        level = TIERS.index(tier)
        return cls(tier=tier, relaxation=level >= 1, dephasing=level >= 2,
                   quasi_static=level >= 3, distortions=level >= 4, **kw)

    def sigma(self, params: DeviceParams) -> float:
        return params.sigma_flux if self.sigma_flux is None else self.sigma_flux

    def with_(self, **changes) -> "NoiseModel":
        return dataclasses.replace(self, **changes)

    def _kernel_for(self, dt: float) -> distortion.ImpulseResponse:
        if self.kernel is not None:
            return self.kernel
        return distortion.synthetic_residual(dt)


# -- superoperator ------------------------------------------------------------

@dataclass(frozen=True)
class Superoperator:
    """81x81 Liouville matrix (column stacking) over the two-qutrit space."""

    matrix: np.ndarray
    unitary: np.ndarray | None = field(default=None, compare=False)
    basis: str = "dressed_idle_frame"

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (DIM2 * DIM2, DIM2 * DIM2):
            raise ValueError("superoperator must be 81x81")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_unitary(cls, u: np.ndarray, basis: str = "dressed_idle_frame") -> "Superoperator":
        u = np.asarray(u, dtype=complex)
        return cls(np.kron(u.conj(), u), u, basis)

    @classmethod
    def identity(cls) -> "Superoperator":
        return cls.from_unitary(np.eye(DIM2))

    def apply(self, rho: np.ndarray) -> np.ndarray:
        v = self.matrix @ np.asarray(rho, dtype=complex).reshape(-1, order="F")
        return v.reshape(DIM2, DIM2, order="F")

    def __matmul__(self, other: "Superoperator") -> "Superoperator":
        """``self @ other`` applies ``other`` first."""
        u = None
        if self.unitary is not None and other.unitary is not None:
            u = self.unitary @ other.unitary
        return Superoperator(self.matrix @ other.matrix, u, self.basis)

    def choi(self) -> np.ndarray:
        """Choi matrix sum_cd |c><d| (x) P(|c><d|), indices (c*9 + a, d*9 + b)."""
        p = self.matrix.reshape(DIM2, DIM2, DIM2, DIM2)  # [b, a, d, c] from row a+9b, col c+9d
        return p.transpose(3, 1, 2, 0).reshape(DIM2 * DIM2, DIM2 * DIM2)

    def trace_deviation(self) -> float:
        """max over input matrix units of |Tr P(|c><d|) - delta_cd|."""
        rows = np.arange(DIM2) * (DIM2 + 1)
        tr = self.matrix[rows].sum(axis=0)
        return float(np.max(np.abs(tr - np.eye(DIM2).reshape(-1, order="F"))))

    def min_choi_eigenvalue(self) -> float:
        c = self.choi()
        return float(np.linalg.eigvalsh((c + c.conj().T) / 2).min())

    def kraus(self, clip: float = 1e-9, fail: float = 1e-6) -> list[np.ndarray]:
        c = self.choi()
        w, v = np.linalg.eigh((c + c.conj().T) / 2)
        if w.min() < -fail:
            raise ValueError(f"map is not completely positive (Choi eigenvalue {w.min():.3e})")
        ops = []
        for lam, vec in zip(w, v.T):
            if lam < -clip:
                continue  # small negative residue between clip and fail is discarded
            if lam <= 0:
                continue
            ops.append(np.sqrt(lam) * vec.reshape(DIM2, DIM2).T)
        return ops

    def to_binary(self, path: str | Path) -> None:
        """Row-major little-endian complex128, 81*81 entries, no header."""
        np.asarray(self.matrix, dtype="<c16").tofile(path)

    @classmethod
    def from_binary(cls, path: str | Path) -> "Superoperator":
        return cls(np.fromfile(path, dtype="<c16").reshape(DIM2 * DIM2, DIM2 * DIM2))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            fh.write("row,col,re,im\n")
            for (r, c), z in np.ndenumerate(self.matrix):
                fh.write(f"{r},{c},{float(z.real)!r},{float(z.imag)!r}\n")


# -- frames -------------------------------------------------------------------

def dressed_basis(h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvectors of ``h`` ordered by maximal overlap with bare states.

    Returns ``(energies, V)`` with column k of V the dressed version of bare
    state k, phase-fixed so that V[k, k] > 0.
    """
    w, v = np.linalg.eigh(h)
    overlap = np.abs(v) ** 2
    order = np.full(DIM2, -1)
    taken = set()
    for k in np.argsort(-overlap.max(axis=0)):
        for bare in np.argsort(-overlap[:, k]):
            if bare not in taken:
                order[bare] = k
                taken.add(bare)
                break
    v = v[:, order]
    w = w[order]
    phase = v[np.arange(DIM2), np.arange(DIM2)]
    v = v * (np.abs(phase) / phase)[None, :]
    return w, v


@dataclass(frozen=True)
class Frame:
    energies: np.ndarray
    vectors: np.ndarray
    omega_ref: float

    @property
    def omega_H(self) -> float:
        return float(self.energies[index(0, 1)] - self.energies[index(0, 0)])

    @property
    def omega_M(self) -> float:
        return float(self.energies[index(1, 0)] - self.energies[index(0, 0)])

    def rotation(self, duration: float) -> np.ndarray:
        """Diagonal single-qubit frame unitary, removing idle q_M and q_H precession."""
        i_m = np.repeat(np.arange(DIM), DIM)
        i_h = np.tile(np.arange(DIM), DIM)
        phase = (self.energies[index(0, 0)] + i_m * self.omega_M + i_h * self.omega_H) * duration
        return np.exp(1j * phase)


def idle_frame(params: DeviceParams) -> Frame:
    omega_ref = params.omega_M
    h = hamiltonians(params, params.omega_operating_H, params.omega_M, omega_ref)[0]
    w, v = dressed_basis(h)
    return Frame(w, v, omega_ref)


def _to_frame_unitary(u, frame: Frame, duration: float):
    u_d = frame.vectors.conj().T @ u @ frame.vectors
    return frame.rotation(duration)[:, None] * u_d


def _to_frame_super(p, frame: Frame, duration: float):
    v = frame.vectors
    s_in = np.kron(v.conj(), v)
    s_out = np.kron(v.T, v.conj().T)
    r = frame.rotation(duration)
    rot = np.kron(r.conj(), r)
    return rot[:, None] * (s_out @ p @ s_in)


# -- trajectories -------------------------------------------------------------

@dataclass(frozen=True)
class FrequencyTrajectory:
    """Angular frequencies of q_H and q_M on a uniform simulation grid.

    Arrays have shape (n_steps,) for one sample per step (held over the
    step) or (n_steps, 2) for samples at the two Gauss nodes of each step.
    """

    omega_h: np.ndarray
    omega_m: np.ndarray
    dt: float
    flux_h: np.ndarray  # effective flux used for the dephasing rate

    @property
    def n_steps(self) -> int:
        return len(self.omega_h)

    @property
    def duration(self) -> float:
        return self.n_steps * self.dt

    @property
    def two_node(self) -> bool:
        return np.ndim(self.omega_h) == 2


def first_order_offset_trajectory(params: DeviceParams, waveform: Waveform | np.ndarray, delta_phi: float,
                                  dt: float | None = None) -> np.ndarray:
    """omega_H(Phi(t)) + (d omega_H / d Phi)(Phi(t)) * delta_phi on the waveform's samples.

    With ``dt`` the waveform is first interpolated onto that grid.
    """
    if isinstance(waveform, Waveform):
        flux = waveform.interpolate(dt) if dt else np.asarray(waveform.samples)
    else:
        flux = np.asarray(waveform, dtype=float)
    return qubit_frequency(params, flux) + flux_sensitivity(params, flux) * delta_phi


def build_trajectory(params: DeviceParams, flux_h: np.ndarray, dt: float, delta_phi: float = 0.0,
                     first_order: bool = False, flux_m: np.ndarray | None = None) -> FrequencyTrajectory:
    flux_h = np.asarray(flux_h, dtype=float)
    if first_order:
        omega_h = qubit_frequency(params, flux_h) + flux_sensitivity(params, flux_h) * delta_phi
        eff = flux_h
    else:
        eff = flux_h + delta_phi
        omega_h = qubit_frequency(params, eff)
    if flux_h.ndim not in (1, 2) or (flux_h.ndim == 2 and flux_h.shape[1] != 2):
        raise ValueError("flux must have shape (n,) or (n, 2)")
    if flux_m is None:
        omega_m = np.full_like(omega_h, params.omega_M)
    else:
        flux_m = np.asarray(flux_m, dtype=float)
        if flux_m.shape != flux_h.shape:
            raise ValueError("q_M and q_H flux samples must have the same shape")
        omega_m = arc_frequency(params.omega_sweetspot_M, params.eta_M, flux_m)
    return FrequencyTrajectory(omega_h, omega_m, dt, eff)


def sample_flux(waveform: Waveform, dt: float, t_1q_idle: float = 0.0, idle_flux: float | None = None,
                nodes=GAUSS_NODES) -> np.ndarray:
    """Flux at the integration nodes of each step, shape (n_steps, len(nodes))."""
    flux = waveform.interpolate(dt, nodes=nodes)
    n_idle = int(round(t_1q_idle / dt))
    if n_idle:
        idle = waveform.rest if idle_flux is None else idle_flux
        flux = np.concatenate([flux, np.full((n_idle,) + flux.shape[1:], idle)])
    return flux


# -- propagation --------------------------------------------------------------

def ordered_product(mats: np.ndarray) -> np.ndarray:
    """mats[n-1] @ ... @ mats[0] by pairwise reduction."""
    mats = np.asarray(mats)
    while len(mats) > 1:
        tail = mats[-1:] if len(mats) % 2 else None
        even = mats[0:len(mats) - (len(mats) % 2):2]
        odd = mats[1:len(mats) - (len(mats) % 2):2]
        mats = odd @ even
        if tail is not None:
            mats = np.concatenate([mats, tail])
    return mats[0]


def _comm(a, b):
    return a @ b - b @ a


def _unitary_steps(params, traj: FrequencyTrajectory, omega_ref):
    dt = traj.dt
    if traj.two_node:
        h1 = hamiltonians(params, traj.omega_h[:, 0], traj.omega_m[:, 0], omega_ref)
        h2 = hamiltonians(params, traj.omega_h[:, 1], traj.omega_m[:, 1], omega_ref)
        # exp(-i K) with K Hermitian
        k = dt / 2 * (h1 + h2) + 1j * _MAGNUS_C * dt ** 2 * _comm(h1, h2)
    else:
        k = hamiltonians(params, traj.omega_h, traj.omega_m, omega_ref) * dt
    w, v = np.linalg.eigh(k)
    return (v * np.exp(-1j * w)[:, None, :]) @ v.conj().transpose(0, 2, 1)


_CHUNK = 256


def _lindblad_steps(params, traj: FrequencyTrajectory, noise: NoiseModel, omega_ref):
    n = traj.n_steps
    d_const_ops = []
    if noise.relaxation:
        d_const_ops += [embed_M(c) for c in qutrit_relaxation(params.t1_M)]
        d_const_ops += [embed_H(c) for c in qutrit_relaxation(params.t1_H)]
    if noise.dephasing:
        d_const_ops += [embed_M(c) for c in qutrit_dephasing(pure_dephasing_time(params.t1_M, params.t2_echo_M))]
    d_const = dissipator(d_const_ops)
    d_unit = dissipator([embed_H(c) for c in qutrit_dephasing(1.0)]) if noise.dephasing else None

    eye = np.eye(DIM2)
    exch = -1j * (np.kron(eye, EXCHANGE) - np.kron(EXCHANGE.T, eye))
    idx = np.arange(DIM2 * DIM2)

    def generators(omega_h, omega_m, flux_h, sl):
        diag = _diagonal(params, omega_h[sl], omega_m[sl], omega_ref)
        # -i (d_a - d_b) on vec index a + 9 b
        coh = -1j * (diag[:, None, :] - diag[:, :, None]).reshape(len(diag), -1)
        gen = _coupling(params, omega_h[sl], omega_m[sl])[:, None, None] * exch[None] + d_const[None]
        if d_unit is not None:
            rates = params.dephasing_echo_H.rate(flux_sensitivity(params, flux_h[sl]))
            gen = gen + rates[:, None, None] * d_unit[None]
        gen[:, idx, idx] += coh
        return gen

    dt = traj.dt
    out = []
    for s in range(0, n, _CHUNK):
        sl = slice(s, min(s + _CHUNK, n))
        if traj.two_node:
            g1 = generators(traj.omega_h[:, 0], traj.omega_m[:, 0], traj.flux_h[:, 0], sl)
            g2 = generators(traj.omega_h[:, 1], traj.omega_m[:, 1], traj.flux_h[:, 1], sl)
            omega = dt / 2 * (g1 + g2) - _MAGNUS_C * dt ** 2 * _comm(g1, g2)
        else:
            omega = generators(traj.omega_h, traj.omega_m, traj.flux_h, sl) * dt
        out.append(expm(omega))
    return np.concatenate(out)


def propagate_trajectory(params: DeviceParams, traj: FrequencyTrajectory, noise: NoiseModel,
                         frame: Frame | None = None, check: bool = True) -> Superoperator:
    """Time-ordered slice product for a single frequency trajectory."""
    frame = frame or idle_frame(params)
    duration = traj.duration
    if not (noise.relaxation or noise.dephasing):
        u = ordered_product(_unitary_steps(params, traj, frame.omega_ref))
        return Superoperator.from_unitary(_to_frame_unitary(u, frame, duration))
    p = ordered_product(_lindblad_steps(params, traj, noise, frame.omega_ref))
    sup = Superoperator(_to_frame_super(p, frame, duration))
    if check:
        drift = sup.trace_deviation()
        if drift > 1e-6:
            raise NumericalInstabilityError(
                f"trace drift {drift:.2e} exceeds 1e-6; retry with dt <= {traj.dt / 2:.3g} s"
            )
    return sup


def gauss_hermite(sigma: float, n_points: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for E[f(x)], x ~ N(0, sigma^2)."""
    x, w = np.polynomial.hermite.hermgauss(n_points)
    return np.sqrt(2) * sigma * x, w / np.sqrt(np.pi)


def quasi_static_average(propagate_fn: Callable[[float], Superoperator], sigma: float, n_points: int = 7,
                         scheme: str = "gauss-hermite", rng: np.random.Generator | None = None) -> Superoperator:
    """Average propagators over a Gaussian static flux offset of width ``sigma``."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if n_points < 1:
        raise ValueError("n_points must be positive")
    if sigma == 0:
        return propagate_fn(0.0)
    if scheme == "gauss-hermite":
        if n_points % 2 == 0:
            raise ValueError("use an odd number of quadrature points")
        nodes, weights = gauss_hermite(sigma, n_points)
    elif scheme == "monte-carlo":
        rng = rng or np.random.default_rng(0)
        nodes = rng.normal(0.0, sigma, n_points)
        weights = np.full(n_points, 1.0 / n_points)
    else:
        raise ValueError("scheme must be 'gauss-hermite' or 'monte-carlo'")
    acc = np.zeros((DIM2 * DIM2, DIM2 * DIM2), dtype=complex)
    for x, w in zip(nodes, weights):
        acc += w * propagate_fn(float(x)).matrix
    return Superoperator(acc)


def distorted(waveform: Waveform, noise: NoiseModel, baseline: float = 0.0) -> Waveform:
    """Apply the noise model's line kernel around a settled ``baseline`` flux."""
    if not noise.distortions:
        return waveform
    h = noise._kernel_for(waveform.dt)
    return distortion.convolve(waveform, h, resample=True, baseline=baseline)


def propagate(params: DeviceParams, waveform: Waveform, noise: NoiseModel | None = None, t_1q_idle: float = 0.0,
              dt: float = DEFAULT_DT, waveform_M: Waveform | None = None, first_order: bool = False,
              delta_phi: float = 0.0, frame: Frame | None = None) -> Superoperator:
    """Propagator of the gate window: the q_H waveform, then ``t_1q_idle`` at its rest flux.

    ``waveform_M`` optionally drives q_M on its own flux arc over the same
    window (it is padded with its rest flux if shorter). Distortions, when
    enabled by the noise model, act on the q_H waveform including the idle
    tail, with the line settled at the operating flux beforehand.
    """
    noise = noise or NoiseModel.from_tier("A")
    frame = frame or idle_frame(params)
    if t_1q_idle:
        n_idle = int(round(t_1q_idle * waveform.sampling_rate))
        if np.isclose(n_idle * waveform.dt, t_1q_idle, rtol=1e-9, atol=1e-15):
            waveform = waveform.concat(Waveform(np.full(n_idle, waveform.rest), waveform.dt, rest=waveform.rest))
            t_1q_idle = 0.0
    wf = distorted(waveform, noise, baseline=params.flux_operating)
    flux_h = sample_flux(wf, dt, t_1q_idle)
    flux_m = None
    if waveform_M is not None:
        flux_m = waveform_M.interpolate(dt, nodes=GAUSS_NODES)
        if len(flux_m) > len(flux_h):
            raise ValueError("q_M waveform is longer than the gate window")
        pad = np.full((len(flux_h) - len(flux_m),) + flux_m.shape[1:], waveform_M.rest)
        flux_m = np.concatenate([flux_m, pad])
    return propagate_flux(params, flux_h, dt, noise, flux_m, first_order, delta_phi, frame)


def propagate_flux(params: DeviceParams, flux_h: np.ndarray, dt: float, noise: NoiseModel | None = None,
                   flux_m: np.ndarray | None = None, first_order: bool = False, delta_phi: float = 0.0,
                   frame: Frame | None = None) -> Superoperator:
    """Propagator for q_H flux samples already on the simulation grid (already distorted if needed).

    ``flux_h`` holds one sample per step, held constant over it, or two per
    step at ``GAUSS_NODES`` for the fourth-order product.
    """
    noise = noise or NoiseModel.from_tier("A")
    frame = frame or idle_frame(params)

    def one(offset: float) -> Superoperator:
        traj = build_trajectory(params, flux_h, dt, delta_phi + offset, first_order, flux_m)
        return propagate_trajectory(params, traj, noise, frame)

    sigma = noise.sigma(params) if noise.quasi_static else 0.0
    return quasi_static_average(one, sigma, noise.n_quadrature)
