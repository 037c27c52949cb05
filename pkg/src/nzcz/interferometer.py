"""Two-path interferometer picture of a Net-Zero pulse in the {|11>, |02>} pair.

Each half pulse acts as a beamsplitter with leakage amplitude ``alpha`` and
conditional phase ``phi_half``; the excursion through the sweetspot between
the two crossings is a phase shifter with arm phase ``phi``. Row/column 0 is
|11>, row/column 1 is |02>.

Two sign conventions are supported for the second beamsplitter:

* ``"literal"``: B2 = B1.
* ``"su2"``: B2 = B1 with alpha -> -alpha.

:func:`selected_convention` picks the one that reproduces a direct
two-level simulation (see :func:`two_level_nz`).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import expm

from .device import DeviceParams, bare_detuning

CONVENTIONS = ("literal", "su2")


@dataclass(frozen=True)
class HalfPulseAction:
    alpha: float
    phi_half: float
    phi_arm: float

    def __post_init__(self):
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must lie in [0, 1]")

    @property
    def phi_tilde(self) -> float:
        return self.phi_arm - 2 * self.phi_half

    @classmethod
    def from_unitary(cls, u_half: np.ndarray, phi_arm: float) -> "HalfPulseAction":
        return cls(float(min(abs(u_half[0, 1]), 1.0)), float(np.angle(u_half[0, 0])), phi_arm)


def beamsplitter(alpha: float, phi_half: float) -> np.ndarray:
    if not 0 <= abs(alpha) <= 1:
        raise ValueError("|alpha| must lie in [0, 1]")
    c = np.sqrt(1 - alpha**2)
    return np.array([[np.exp(1j * phi_half) * c, alpha],
                     [alpha, -np.exp(-1j * phi_half) * c]], dtype=complex)


def phase_shifter(phi: float) -> np.ndarray:
    return np.diag([1.0, np.exp(1j * phi)]).astype(complex)


@dataclass(frozen=True)
class NZComposition:
    matrix: np.ndarray
    leakage_l1: float
    phi_2q: float
    # |M11|^2 / 4: the printed closed form, kept for comparison only
    printed_formula: float


def nz_composition(action: HalfPulseAction, convention: str | None = None) -> NZComposition:
    convention = convention or selected_convention()
    if convention not in CONVENTIONS:
        raise ValueError(f"convention must be one of {CONVENTIONS}")
    b1 = beamsplitter(action.alpha, action.phi_half)
    b2 = b1 if convention == "literal" else beamsplitter(-action.alpha, action.phi_half)
    m = b2 @ phase_shifter(action.phi_arm) @ b1
    return NZComposition(
        matrix=m,
        leakage_l1=float(abs(m[1, 0]) ** 2 / 4),
        phi_2q=float(np.angle(m[0, 0])),
        printed_formula=float(abs(m[0, 0]) ** 2 / 4),
    )


def closed_form_m11(action: HalfPulseAction, convention: str) -> complex:
    """M11 written out: e^{2i phi_h}(1 - alpha^2) -/+ alpha^2 e^{i phi}."""
    sign = 1.0 if convention == "literal" else -1.0
    return (np.exp(2j * action.phi_half) * (1 - action.alpha**2)
            + sign * action.alpha**2 * np.exp(1j * action.phi_arm))


def fringe_period(params_or_epsilon) -> float:
    """Buffer length between leakage minima: 2 pi / epsilon at the sweetspot."""
    if isinstance(params_or_epsilon, DeviceParams):
        eps = float(bare_detuning(params_or_epsilon, 0.0))
    else:
        eps = float(params_or_epsilon)
    if eps == 0:
        raise ValueError("zero detuning gives no fringe")
    return 2 * np.pi / abs(eps)


# -- numeric two-level oracle ---------------------------------------------------

def _evolve(eps, j2, dt):
    u = np.eye(2, dtype=complex)
    for e in np.atleast_1d(eps):
        h = np.array([[-e / 2, j2], [j2, e / 2]])
        u = expm(-1j * h * dt) @ u
    return u


def two_level_half(j2: float, eps_far: float, eps_near: float, duration: float, n_steps: int = 400) -> np.ndarray:
    """Half pulse: detuning swept far -> near -> far with a sin^2 profile (time symmetric)."""
    dt = duration / n_steps
    t = (np.arange(n_steps) + 0.5) * dt
    eps = eps_far - (eps_far - eps_near) * np.sin(np.pi * t / duration) ** 2
    return _evolve(eps, j2, dt)


def two_level_nz(u_half: np.ndarray, eps_arm: float, buffer: float) -> np.ndarray:
    """Half pulse, free evolution at ``eps_arm`` for ``buffer``, half pulse."""
    return u_half @ _evolve([eps_arm], 0.0, buffer) @ u_half


def arm_phase(eps_arm: float, buffer: float) -> float:
    """Relative |02> vs |11> phase of the free arm for H = diag(-eps/2, eps/2)."""
    return -eps_arm * buffer


def oracle_discrepancy(convention: str, j2: float = 2 * np.pi * 20e6, eps_arm: float = 2 * np.pi * 800e6,
                       n_buffers: int = 25) -> float:
    """max |L1_analytic - L1_numeric| over a buffer sweep for a leaky half pulse."""
    u_half = two_level_half(j2, eps_far=2 * np.pi * 600e6, eps_near=2 * np.pi * 15e6, duration=6e-9)
    worst = 0.0
    for buf in np.linspace(0.0, 2 * fringe_period(eps_arm), n_buffers):
        num = abs(two_level_nz(u_half, eps_arm, buf)[1, 0]) ** 2 / 4
        act = HalfPulseAction.from_unitary(u_half, arm_phase(eps_arm, buf))
        ana = nz_composition(act, convention).leakage_l1
        worst = max(worst, abs(num - ana))
    return worst


@lru_cache(maxsize=1)
def selected_convention() -> str:
    scores = {c: oracle_discrepancy(c) for c in CONVENTIONS}
    return min(scores, key=scores.get)


def leakage_sweep(alpha: float, phi_half: float, phi_tilde: np.ndarray, convention: str | None = None):
    """Rows (phi_tilde, L1, phi_2q) for a sweep of the interference phase."""
    out = []
    for pt in np.asarray(phi_tilde, dtype=float):
        act = HalfPulseAction(alpha, phi_half, pt + 2 * phi_half)
        r = nz_composition(act, convention)
        out.append((pt, r.leakage_l1, r.phi_2q))
    return np.array(out)
