"""Leakage-aware (interleaved) randomized benchmarking on the two-qutrit model.

Cliffords are compiled into ideal single-qubit layers and CZ applications;
every CZ occurrence uses the supplied (noisy) propagator.
"""
from __future__ import annotations

import csv
import json
import os
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.optimize import curve_fit, lsq_linear, minimize_scalar

from .dynamics import COMPUTATIONAL, DIM, DIM2, Superoperator
from .metrics import D1

GROUP_ORDER = 11520
_MAX_ORDER = 20000

_H2 = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
_S2 = np.diag([1, 1j])
_I2 = np.eye(2, dtype=complex)
CZ4 = np.diag([1, 1, 1, -1]).astype(complex)
# generator name -> (q_M 2x2, q_H 2x2) or "cz"
GENERATORS = {
    "H_M": (_H2, _I2),
    "S_M": (_S2, _I2),
    "H_H": (_I2, _H2),
    "S_H": (_I2, _S2),
    "CZ": "cz",
}


class RBFitError(RuntimeError):
    def __init__(self, message: str, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class PopulationCalibrationError(ValueError):
    pass


def _gen4(g):
    return CZ4 if isinstance(g, str) else np.kron(g[0], g[1])


def canonical_key(u: np.ndarray) -> bytes:
    """Global-phase-invariant hash key of a unitary."""
    flat = u.reshape(-1)
    k = int(np.argmax(np.abs(flat) > 1e-6))
    v = flat * (abs(flat[k]) / flat[k])
    v = np.round(v, 8) + 0.0  # folds -0.0
    return np.concatenate([v.real, v.imag]).tobytes()


def _embed2(op2):
    op = np.eye(DIM, dtype=complex)
    op[:2, :2] = op2
    return op


@dataclass(frozen=True)
class CliffordElement:
    index: int
    unitary: np.ndarray  # 4x4, up to global phase
    word: tuple  # generator names, first applied first
    layers: tuple = field(repr=False)  # 9x9 single-qubit layers or "cz", in application order

    @property
    def n_cz(self) -> int:
        return sum(1 for l in self.layers if isinstance(l, str))


def _compile(word) -> tuple:
    layers, m, h = [], _I2, _I2
    pending = False
    for name in word:
        g = GENERATORS[name]
        if isinstance(g, str):
            if pending:
                layers.append(np.kron(_embed2(m), _embed2(h)))
            layers.append("cz")
            m, h, pending = _I2, _I2, False
        else:
            m, h, pending = g[0] @ m, g[1] @ h, True
    if pending:
        layers.append(np.kron(_embed2(m), _embed2(h)))
    return tuple(layers)


@dataclass(frozen=True)
class CliffordGroup:
    elements: tuple
    lookup: dict = field(repr=False)

    def __len__(self):
        return len(self.elements)

    def index_of(self, u: np.ndarray) -> int:
        return self.lookup[canonical_key(u)]

    def inverse(self, i: int) -> int:
        return self.index_of(self.elements[i].unitary.conj().T)


@lru_cache(maxsize=1)
def build_clifford_group() -> CliffordGroup:
    """Breadth-first closure over {H, S on each qubit, CZ}, deduplicated up to global phase."""
    eye = np.eye(4, dtype=complex)
    seen = {canonical_key(eye): 0}
    units, words = [eye], [()]
    queue = deque([0])
    gens = [(name, _gen4(g)) for name, g in GENERATORS.items()]
    while queue:
        i = queue.popleft()
        for name, g in gens:
            u = g @ units[i]
            key = canonical_key(u)
            if key in seen:
                continue
            seen[key] = len(units)
            units.append(u)
            words.append(words[i] + (name,))
            queue.append(len(units) - 1)
            if len(units) > _MAX_ORDER:
                raise RuntimeError("Clifford closure exceeded its bound")
    elements = tuple(CliffordElement(k, u, w, _compile(w)) for k, (u, w) in enumerate(zip(units, words)))
    return CliffordGroup(elements, seen)


# -- sequence simulation ----------------------------------------------------------

def _apply_layers(rho, layers, cz_matrix):
    for l in layers:
        if isinstance(l, str):
            rho = (cz_matrix @ rho.reshape(-1, order="F")).reshape(DIM2, DIM2, order="F")
        else:
            rho = l @ rho @ l.conj().T
    return rho


def _populations(rho):
    diag = np.real(np.diag(rho))
    return float(diag[0]), float(diag[list(COMPUTATIONAL)].sum())


def _one_seed(args):
    cz_matrix, lengths, seed_seq, interleaved = args
    group = build_clifford_group()
    rng = np.random.default_rng(seed_seq)
    n_max = max(lengths)
    draws = rng.integers(len(group), size=n_max)
    out = []
    rho0 = np.zeros((DIM2, DIM2), dtype=complex)
    rho0[0, 0] = 1.0
    for variant in (("reference", "interleaved") if interleaved else ("reference",)):
        for n in lengths:
            rho, total = rho0, np.eye(4, dtype=complex)
            for c in draws[:n]:
                el = group.elements[int(c)]
                rho = _apply_layers(rho, el.layers, cz_matrix)
                total = el.unitary @ total
                if variant == "interleaved":
                    rho = _apply_layers(rho, ("cz",), cz_matrix)
                    total = CZ4 @ total
            rec = group.elements[group.index_of(total.conj().T)]
            rho = _apply_layers(rho, rec.layers, cz_matrix)
            out.append((variant, n, *_populations(rho)))
    return out


@dataclass(frozen=True)
class RBData:
    rows: tuple  # (variant, n_cliffords, seed, m0, p_x1)

    def select(self, variant: str):
        r = [x for x in self.rows if x[0] == variant]
        if not r:
            raise KeyError(variant)
        n = np.array([x[1] for x in r])
        lengths = np.unique(n)
        m0 = np.array([[x[3] for x in r if x[1] == k] for k in lengths])
        px = np.array([[x[4] for x in r if x[1] == k] for k in lengths])
        return lengths, m0, px

    def means(self, variant: str):
        n, m0, px = self.select(variant)
        return n, m0.mean(axis=1), px.mean(axis=1)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["variant", "n_cliffords", "seed", "m0", "p_x1"])
            for v, n, s, m0, px in self.rows:
                w.writerow([v, n, s, f"{m0:.12g}", f"{px:.12g}"])


def run_rb(cz: Superoperator | np.ndarray, n_cliffords_list, n_seeds: int, interleaved: bool = True,
           seed: int = 0, jobs: int | None = 1) -> RBData:
    """Random Clifford sequences with recovery, optionally with a CZ interleaved after each Clifford.

    Seed ``k`` draws from the stream keyed by (``seed``, k), so results do not
    depend on ``jobs``.
    """
    mat = cz.matrix if isinstance(cz, Superoperator) else np.asarray(cz)
    lengths = sorted(int(n) for n in n_cliffords_list)
    if not lengths or lengths[0] < 1:
        raise ValueError("sequence lengths must be positive")
    build_clifford_group()
    tasks = [(mat, lengths, np.random.SeedSequence([seed, k]), interleaved) for k in range(n_seeds)]
    jobs = jobs or os.cpu_count() or 1
    if jobs > 1 and n_seeds > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_one_seed, tasks))
    else:
        results = [_one_seed(t) for t in tasks]
    rows = tuple((v, n, k, m0, px) for k, res in enumerate(results) for v, n, m0, px in res)
    return RBData(rows)


# -- population extraction ------------------------------------------------------------

def extract_populations(s1: float, sx: float, v0: float, v1: float, v2: float) -> tuple[float, float, float]:
    """Three-level populations from signals without (s1) and with (sx) a pi pulse on the 0-1 transition.

    Levels above 2 are assumed empty; P_2 = 1 - P_0 - P_1.
    """
    a = np.array([[v0 - v2, v1 - v2], [v1 - v2, v0 - v2]])
    if abs(np.linalg.det(a)) < 1e-14 * max(1.0, np.abs(a).max() ** 2):
        raise PopulationCalibrationError("calibration points V0 and V1 are not distinguishable")
    p0, p1 = np.linalg.solve(a, [s1 - v2, sx - v2])
    return float(p0), float(p1), float(1 - p0 - p1)


# -- decay fits ------------------------------------------------------------------------

@dataclass(frozen=True)
class LeakageFit:
    a: float
    b: float
    lambda_1: float
    stderr: dict = field(default_factory=dict)

    @property
    def l1(self) -> float:
        return (1 - self.a) * (1 - self.lambda_1)

    @property
    def l2(self) -> float:
        return self.a * (1 - self.lambda_1)


@dataclass(frozen=True)
class FidelityFit:
    a0: float
    b0: float
    c0: float
    lambda_2: float
    leakage: LeakageFit
    stderr: dict = field(default_factory=dict)

    @property
    def epsilon(self) -> float:
        return clifford_infidelity(self.lambda_2, self.leakage.l1)


@dataclass(frozen=True)
class RBDecayFit:
    leakage: LeakageFit
    fidelity: FidelityFit

    @property
    def epsilon(self) -> float:
        return self.fidelity.epsilon

    @property
    def l1(self) -> float:
        return self.leakage.l1

    @property
    def l2(self) -> float:
        return self.leakage.l2

    def to_dict(self) -> dict:
        return {
            "A": self.leakage.a, "B": self.leakage.b, "lambda_1": self.leakage.lambda_1,
            "A0": self.fidelity.a0, "B0": self.fidelity.b0, "C0": self.fidelity.c0,
            "lambda_2": self.fidelity.lambda_2, "L1": self.l1, "L2": self.l2, "epsilon": self.epsilon,
            "stderr": {**self.leakage.stderr, **self.fidelity.stderr},
        }


def clifford_infidelity(lambda_2: float, l1: float, d1: int = D1) -> float:
    return 1 - ((d1 - 1) * lambda_2 + 1 - l1) / d1


def _varpro(n, y, fixed_cols, lo=0.5, nonneg=()):
    """Best decay constant for y ~ fixed columns + c lambda^n, linear coefficients by (bounded) least squares.

    ``nonneg`` lists coefficient indices (decay column last) constrained to be >= 0.
    """
    n_coef = len(fixed_cols) + 1
    lower = np.array([0.0 if k in nonneg else -np.inf for k in range(n_coef)])

    def design(lam):
        return np.column_stack(list(fixed_cols) + [lam ** n])

    def solve(lam):
        if nonneg:
            return lsq_linear(design(lam), y, bounds=(lower, np.inf)).x
        return np.linalg.lstsq(design(lam), y, rcond=None)[0]

    def sse(lam):
        return float(np.sum((design(lam) @ solve(lam) - y) ** 2))

    grid = 1 - np.geomspace(1e-7, 1 - lo, 200)
    k = int(np.argmin([sse(l) for l in grid]))
    a, b = grid[min(k + 1, len(grid) - 1)], grid[max(k - 1, 0)]
    res = minimize_scalar(sse, bounds=(min(a, b), max(a, b)), method="bounded", options={"xatol": 1e-12})
    lam = float(res.x) if res.fun <= sse(grid[k]) else float(grid[k])
    return lam, solve(lam)


def fit_leakage_rb(n_cliffords, p_x1) -> LeakageFit:
    """P_X1(N) = A + B lambda_1^N."""
    n = np.asarray(n_cliffords, dtype=float)
    y = np.asarray(p_x1, dtype=float)
    if len(np.unique(n)) < 4:
        raise RBFitError("need at least 4 sequence lengths")
    if np.ptp(y) < 1e-12:
        return LeakageFit(float(np.mean(y)), 0.0, 1.0)
    lam, (a, b) = _varpro(n, y, [np.ones_like(n)])
    stderr = {}
    try:
        popt, pcov = curve_fit(lambda t, a, b, l: a + b * l ** t, n, y, p0=[a, b, lam],
                               bounds=([-np.inf, -np.inf, 0], [np.inf, np.inf, 1]), maxfev=20000)
        a, b, lam = map(float, popt)
        stderr = dict(zip(("A", "B", "lambda_1"), map(float, np.sqrt(np.abs(np.diag(pcov))))))
    except (RuntimeError, ValueError):
        pass
    resid = a + b * lam ** n - y
    if not (0 < lam <= 1) or not np.isfinite(resid).all():
        raise RBFitError("leakage decay fit diverged", resid)
    return LeakageFit(float(a), float(b), float(lam), stderr)


def fit_fidelity_rb(n_cliffords, m0, leakage: LeakageFit) -> FidelityFit:
    """M_0(N) = A_0 + B_0 lambda_1^N + C_0 lambda_2^N with lambda_1 held at the leakage fit.

    B_0 and C_0 are kept non-negative: at short lengths lambda_2 close to
    lambda_1 otherwise admits large cancelling amplitudes.
    """
    n = np.asarray(n_cliffords, dtype=float)
    y = np.asarray(m0, dtype=float)
    if len(np.unique(n)) < 4:
        raise RBFitError("need at least 4 sequence lengths")
    l1 = leakage.lambda_1
    if np.ptp(y) < 1e-12:
        return FidelityFit(float(np.mean(y)), 0.0, 0.0, 1.0, leakage)
    if l1 == 1:
        lam, (a0, c0) = _varpro(n, y, [np.ones_like(n)], nonneg=(1,))
        b0 = 0.0
        names = ("A0", "C0", "lambda_2")

        def model(t, a, c, l):
            return a + c * l ** t

        p0, lo = [a0, c0, lam], [-np.inf, 0, 0]
    else:
        lam, (a0, b0, c0) = _varpro(n, y, [np.ones_like(n), l1 ** n], nonneg=(1, 2))
        names = ("A0", "B0", "C0", "lambda_2")

        def model(t, a, b, c, l):
            return a + b * l1 ** t + c * l ** t

        p0, lo = [a0, b0, c0, lam], [-np.inf, 0, 0, 0]
    stderr = {}
    hi = [np.inf] * (len(p0) - 1) + [1]
    p0 = np.clip(p0, np.array(lo) + 1e-15, hi)
    try:
        popt, pcov = curve_fit(model, n, y, p0=p0, bounds=(lo, hi), maxfev=20000)
        if np.sum((model(n, *popt) - y) ** 2) <= np.sum((model(n, *p0) - y) ** 2):
            if l1 == 1:
                a0, c0, lam = map(float, popt)
            else:
                a0, b0, c0, lam = map(float, popt)
        stderr = dict(zip(names, map(float, np.sqrt(np.abs(np.diag(pcov))))))
    except (RuntimeError, ValueError):
        pass
    resid = a0 + b0 * l1 ** n + c0 * lam ** n - y
    if not (0 < lam <= 1) or not np.isfinite(resid).all():
        raise RBFitError("survival decay fit diverged", resid)
    return FidelityFit(float(a0), float(b0), float(c0), float(lam), leakage, stderr)


def fit_rb(data: RBData, variant: str = "reference") -> RBDecayFit:
    n, m0, px = data.means(variant)
    lk = fit_leakage_rb(n, px)
    return RBDecayFit(lk, fit_fidelity_rb(n, m0, lk))


@dataclass(frozen=True)
class InterleavedEstimate:
    epsilon_cz: float
    l1_cz: float
    reference: RBDecayFit
    interleaved: RBDecayFit

    def to_dict(self) -> dict:
        return {"epsilon_cz": self.epsilon_cz, "L1_cz": self.l1_cz, "fidelity_cz": 1 - self.epsilon_cz,
                "reference": self.reference.to_dict(), "interleaved": self.interleaved.to_dict()}

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


def interleaved_estimates(ref: RBDecayFit, inter: RBDecayFit) -> InterleavedEstimate:
    """Per-CZ infidelity and leakage from reference and interleaved decays."""
    if ref.epsilon >= 1 or ref.l1 >= 1:
        raise ValueError("reference decay gives an undefined per-gate estimate")
    eps = 1 - (1 - inter.epsilon) / (1 - ref.epsilon)
    l1 = 1 - (1 - inter.l1) / (1 - ref.l1)
    return InterleavedEstimate(float(eps), float(l1), ref, inter)


# -- toy channels -----------------------------------------------------------------------

def depolarized_cz(p: float) -> Superoperator:
    """Ideal CZ followed by two-qubit depolarization of strength ``p`` on the computational block."""
    idx = list(COMPUTATIONAL)
    cz9 = np.eye(DIM2, dtype=complex)
    cz9[idx[3], idx[3]] = -1
    ideal = np.kron(cz9.conj(), cz9)
    proj = np.zeros((DIM2, DIM2))
    proj[idx, idx] = 1.0
    vec_proj = proj.reshape(-1, order="F")
    # Kraus form: sqrt(1-p) P + Q and sqrt(p)/2 |a><b| over computational a, b
    k0 = np.sqrt(1 - p) * proj + (np.eye(DIM2) - proj)
    depol = np.kron(k0, k0) + p * np.outer(vec_proj / 4, vec_proj)
    return Superoperator(depol @ ideal)


def depolarizing_prediction(p: float) -> float:
    """Clifford infidelity for ideal single-qubit layers and a depolarized CZ."""
    n_cz = np.array([e.n_cz for e in build_clifford_group().elements])
    lam = float(np.mean((1 - p) ** n_cz))
    return (D1 - 1) * (1 - lam) / D1


def bootstrap(data: RBData, n_boot: int = 200, seed: int = 0) -> dict:
    """Seed-resampling standard deviations of the reference (and per-CZ) estimates."""
    rng = np.random.default_rng(seed)
    variants = sorted({r[0] for r in data.rows})
    sel = {v: data.select(v) for v in variants}
    n_seeds = sel["reference"][1].shape[1]
    eps, l1, eps_cz, l1_cz = [], [], [], []
    for _ in range(n_boot):
        k = rng.integers(n_seeds, size=n_seeds)
        fits = {}
        for v, (n, m0, px) in sel.items():
            lk = fit_leakage_rb(n, px[:, k].mean(axis=1))
            fits[v] = RBDecayFit(lk, fit_fidelity_rb(n, m0[:, k].mean(axis=1), lk))
        eps.append(fits["reference"].epsilon)
        l1.append(fits["reference"].l1)
        if "interleaved" in fits:
            est = interleaved_estimates(fits["reference"], fits["interleaved"])
            eps_cz.append(est.epsilon_cz)
            l1_cz.append(est.l1_cz)
    out = {"epsilon": float(np.std(eps)), "L1": float(np.std(l1))}
    if eps_cz:
        out.update(epsilon_cz=float(np.std(eps_cz)), L1_cz=float(np.std(l1_cz)))
    return out


def summary(data: RBData) -> dict:
    out = {"reference": fit_rb(data, "reference").to_dict()}
    if any(r[0] == "interleaved" for r in data.rows):
        est = interleaved_estimates(fit_rb(data, "reference"), fit_rb(data, "interleaved"))
        out = est.to_dict()
    return out

