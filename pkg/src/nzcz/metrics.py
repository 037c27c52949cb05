"""Gate metrics of a two-qutrit superoperator: phases, leakage, seepage, fidelity."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .dynamics import COMPUTATIONAL, DIM, DIM2, LEAKAGE, Superoperator, index

D1 = len(COMPUTATIONAL)


class UndefinedPhaseError(ValueError):
    pass


def wrap(phi, positive: bool = False):
    """Wrap to (-pi, pi], or to [0, 2pi) with ``positive``."""
    if positive:
        return np.mod(phi, 2 * np.pi)
    return np.pi - np.mod(np.pi - np.asarray(phi), 2 * np.pi)


def cz_unitary(phi_2q: float = np.pi, phi_01: float = 0.0, phi_10: float = 0.0) -> np.ndarray:
    """4x4 diagonal target on (00, 01, 10, 11)."""
    return np.diag(np.exp(1j * np.array([0.0, phi_01, phi_10, phi_01 + phi_10 + phi_2q])))


def _vec_index(a: int, b: int) -> int:
    return a + DIM2 * b


def acquired_phase(p: Superoperator, i: int, j: int, tol: float = 1e-12) -> float:
    """arg <ij| P(|ij><00|) |00>, so that phi_00 = 0."""
    k = index(i, j)
    z = p.matrix[_vec_index(k, 0), _vec_index(k, 0)]
    if abs(z) < tol:
        raise UndefinedPhaseError(f"coherence between |{i}{j}> and |00> vanished; phase undefined")
    return float(np.angle(z))


def conditional_phase(p: Superoperator, positive: bool = False) -> float:
    phi = acquired_phase(p, 1, 1) - acquired_phase(p, 1, 0) - acquired_phase(p, 0, 1)
    return float(wrap(phi, positive))


def _populations(p: Superoperator, inputs, outputs) -> np.ndarray:
    """Rows: input basis states; columns: output populations."""
    rows = [_vec_index(o, o) for o in outputs]
    cols = [_vec_index(s, s) for s in inputs]
    return p.matrix[np.ix_(rows, cols)].real.T


def leakage(p: Superoperator) -> float:
    pop = _populations(p, COMPUTATIONAL, COMPUTATIONAL)
    return float(np.clip(1 - pop.sum() / D1, 0.0, 1.0))


def seepage(p: Superoperator) -> float:
    pop = _populations(p, LEAKAGE, LEAKAGE)
    return float(np.clip(1 - pop.sum() / len(LEAKAGE), 0.0, 1.0))


def embed_target(u4: np.ndarray) -> np.ndarray:
    """4x4 computational operator padded into the 9-dim space (zero elsewhere)."""
    out = np.zeros((DIM2, DIM2), dtype=complex)
    out[np.ix_(COMPUTATIONAL, COMPUTATIONAL)] = u4
    return out


def average_gate_fidelity(p: Superoperator, target: np.ndarray | None = None, l1: float | None = None) -> float:
    """Leakage-aware average gate fidelity on the computational subspace."""
    target = cz_unitary() if target is None else np.asarray(target)
    l1 = leakage(p) if l1 is None else l1
    if p.unitary is not None:
        kraus = [p.unitary]
    else:
        kraus = p.kraus()
    ut = target.conj().T
    cs = list(COMPUTATIONAL)
    overlap = sum(abs(np.trace(ut @ a[np.ix_(cs, cs)])) ** 2 for a in kraus)
    f = (D1 * (1 - l1) + overlap) / (D1 * (D1 + 1))
    return float(np.clip(f, 0.0, 1.0))


def z_correction(phi_m: float, phi_h: float) -> np.ndarray:
    """Diagonal 9x9 virtual-Z unitary rotating q_M by -phi_m and q_H by -phi_h per excitation."""
    i_m = np.repeat(np.arange(DIM), DIM)
    i_h = np.tile(np.arange(DIM), DIM)
    return np.exp(-1j * (i_m * phi_m + i_h * phi_h))


def phase_corrected(p: Superoperator) -> Superoperator:
    """Compose with the virtual Z rotations that null phi_01 and phi_10."""
    r = z_correction(acquired_phase(p, 1, 0), acquired_phase(p, 0, 1))
    rot = np.kron(r.conj(), r)
    u = None if p.unitary is None else r[:, None] * p.unitary
    return Superoperator(rot[:, None] * p.matrix, u, p.basis)


@dataclass(frozen=True)
class GateMetrics:
    phi_01: float
    phi_10: float
    phi_11: float
    phi_2q: float
    leakage_l1: float
    seepage_l2: float
    avg_fidelity_f: float
    infidelity_eps: float
    # fidelity after virtual-Z correction of the single-qubit phases
    avg_fidelity_pc: float
    infidelity_pc: float

    def to_dict(self, degrees: bool = True) -> dict:
        d = asdict(self)
        if degrees:
            for k in ("phi_01", "phi_10", "phi_11", "phi_2q"):
                d[k + "_deg"] = float(np.rad2deg(d.pop(k)))
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @property
    def phi_2q_deg(self) -> float:
        return float(np.rad2deg(wrap(self.phi_2q, positive=True)))


def gate_metrics(p: Superoperator, target: np.ndarray | None = None) -> GateMetrics:
    l1 = leakage(p)
    f = average_gate_fidelity(p, target, l1)
    pc = phase_corrected(p)
    f_pc = average_gate_fidelity(pc, target, l1)
    phi_01 = acquired_phase(p, 0, 1)
    phi_10 = acquired_phase(p, 1, 0)
    phi_11 = acquired_phase(p, 1, 1)
    return GateMetrics(
        phi_01=phi_01, phi_10=phi_10, phi_11=phi_11,
        phi_2q=float(wrap(phi_11 - phi_10 - phi_01)),
        leakage_l1=l1, seepage_l2=seepage(p),
        avg_fidelity_f=f, infidelity_eps=1 - f,
        avg_fidelity_pc=f_pc, infidelity_pc=1 - f_pc,
    )
