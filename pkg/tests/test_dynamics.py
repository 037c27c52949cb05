import numpy as np
import pytest
from scipy.linalg import expm
from scipy.stats import norm

from nzcz.device import ModelValidityError, coupling_j1, flux_sensitivity
from nzcz.dynamics import (
    DIM2,
    TIERS,
    NoiseModel,
    Superoperator,
    dissipator,
    first_order_offset_trajectory,
    gauss_hermite,
    hamiltonian_at,
    index,
    jump_operators,
    liouvillian,
    propagate,
    propagate_flux,
    pure_dephasing_time,
    qutrit_dephasing,
    qutrit_relaxation,
    quasi_static_average,
)
from nzcz.interferometer import HalfPulseAction, nz_composition
from nzcz.metrics import conditional_phase, leakage
from nzcz.pulses import PulseSpec, Waveform, build_waveform

I11, I02, I01, I10 = index(1, 1), index(0, 2), index(0, 1), index(1, 0)


def test_hamiltonian_hermitian(params):
    for phi in (0.0, 0.1, params.flux_crossing, -0.3):
        h = hamiltonian_at(params, phi)
        np.testing.assert_allclose(h, h.conj().T, atol=0)


def test_exchange_elements(params):
    phi = params.flux_crossing
    h = hamiltonian_at(params, phi)
    j1 = coupling_j1(params, phi)
    assert h[I01, I10] == pytest.approx(j1, rel=1e-14)
    assert h[I11, I02] == pytest.approx(np.sqrt(2) * j1, rel=1e-14)
    assert h[I11, index(2, 0)] == pytest.approx(np.sqrt(2) * j1, rel=1e-14)
    assert h[I11, I11] == pytest.approx(h[I02, I02], abs=1e-3)


def test_uncoupled_hamiltonian_is_diagonal(params):
    h = hamiltonian_at(params.with_(j1_at_crossing=0.0), 0.2)
    np.testing.assert_array_equal(h - np.diag(np.diag(h)), 0.0)


def test_avoided_crossing_splitting(params):
    h = hamiltonian_at(params, params.flux_crossing)
    block = h[np.ix_([I11, I02], [I11, I02])]
    w = np.linalg.eigvalsh(block)
    assert w[1] - w[0] == pytest.approx(2 * params.j2_at_crossing, rel=1e-6)


def test_pure_dephasing_time_of_static_qubit():
    t_phi = pure_dephasing_time(15.2e-6, 19.4e-6)
    assert t_phi == pytest.approx(1 / (1 / 19.4e-6 - 1 / 30.4e-6), rel=1e-12)
    assert t_phi == pytest.approx(53.6e-6, abs=0.05e-6)


def test_dephasing_needs_t2_below_twice_t1():
    with pytest.raises(ModelValidityError):
        pure_dephasing_time(10e-6, 20e-6)
    with pytest.raises(ModelValidityError):
        pure_dephasing_time(10e-6, 25e-6)


def _evolve_qutrit(ops, rho, t):
    lv = liouvillian(np.zeros((3, 3)), ops)
    return (expm(lv * t) @ rho.reshape(-1, order="F")).reshape(3, 3, order="F")


def test_coherence_decay_pattern():
    t_phi, t = 20e-6, 3e-6
    rho = np.full((3, 3), 1 / 3, dtype=complex)
    out = _evolve_qutrit(qutrit_dephasing(t_phi), rho, t)
    rates = -np.log(np.abs(out) / (1 / 3)) / t * t_phi
    assert rates[0, 1] == pytest.approx(1.0, rel=0.01)
    assert rates[0, 2] == pytest.approx(2.0, rel=0.01)
    assert rates[1, 2] == pytest.approx(1.0, rel=0.01)
    np.testing.assert_allclose(np.diag(out).real, 1 / 3, atol=1e-14)


def test_relaxation_populations():
    t1 = 15e-6
    rho = np.diag([0, 0, 1.0]).astype(complex)
    for t in (1e-6, 10e-6, 40e-6):
        pop = np.diag(_evolve_qutrit(qutrit_relaxation(t1), rho, t)).real
        x = np.exp(-t / t1)
        assert pop[2] == pytest.approx(x**2, abs=1e-4)
        assert pop[1] == pytest.approx(2 * (x - x**2), abs=1e-4)
        assert pop[0] == pytest.approx(1 - 2 * x + x**2, abs=1e-4)


def test_infinite_times_give_no_operators(params):
    assert qutrit_relaxation(np.inf) == []
    assert qutrit_dephasing(np.inf) == []
    assert pure_dephasing_time(np.inf, np.inf) == np.inf
    assert len(jump_operators(params, 0.1, relaxation=False, dephasing=False)) == 0
    np.testing.assert_array_equal(dissipator([]), 0.0)


def _idle(params, n=40):
    return Waveform(np.full(n, params.flux_operating), 1e-9, rest=params.flux_operating)


def test_idle_keeps_ground_state(params):
    p = propagate(params, _idle(params))
    rho = np.zeros((DIM2, DIM2), dtype=complex)
    rho[0, 0] = 1
    np.testing.assert_allclose(p.apply(rho), rho, atol=1e-12)


def test_idle_relaxation_survival(params):
    p = propagate(params, _idle(params), NoiseModel.from_tier("B"))
    rho = np.zeros((DIM2, DIM2), dtype=complex)
    rho[I11, I11] = 1
    expected = np.exp(-40e-9 / params.t1_M - 40e-9 / params.t1_H)
    assert p.apply(rho)[I11, I11].real == pytest.approx(expected, rel=0.05)


@pytest.fixture(scope="module")
def gate_wf(params, cz_gate):
    from nzcz.experiments.gate import gate_waveforms

    return gate_waveforms(params, cz_gate.spec, cz_gate.amp_H, cz_gate.amp_M)


@pytest.mark.parametrize("tier", TIERS)
def test_propagators_are_cptp(params, cz_gate, tier):
    p = cz_gate.simulate(params, NoiseModel.from_tier(tier))
    assert p.trace_deviation() < 1e-9
    assert p.min_choi_eigenvalue() >= -1e-9


def test_tier_a_is_unitary(params, cz_gate):
    p = cz_gate.simulate(params)
    u = p.unitary
    np.testing.assert_allclose(u.conj().T @ u, np.eye(DIM2), atol=1e-9)
    np.testing.assert_allclose(p.matrix, np.kron(u.conj(), u), atol=1e-12)


def test_step_size_convergence(params, cz_gate):
    coarse = cz_gate.simulate(params, dt=0.2e-9)
    fine = cz_gate.simulate(params, dt=0.1e-9)
    d_phi = abs(conditional_phase(coarse) - conditional_phase(fine))
    assert np.rad2deg(d_phi) < 0.05
    assert abs(leakage(coarse) - leakage(fine)) < 1e-5


def test_quasi_static_zero_width_is_single_evaluation(params, cz_gate):
    calls = []

    def fn(x):
        calls.append(x)
        return cz_gate.simulate(params)

    p = quasi_static_average(fn, 0.0, 7)
    assert calls == [0.0]
    np.testing.assert_array_equal(p.matrix, cz_gate.simulate(params).matrix)


def test_plain_monte_carlo_scheme(params):
    calls = []
    quasi_static_average(lambda x: calls.append(x) or Superoperator.identity(), 1e-5, 50,
                         scheme="monte-carlo", rng=np.random.default_rng(1))
    assert len(calls) == 50 and np.std(calls) == pytest.approx(1e-5, rel=0.3)


def test_quadrature_weights():
    x, w = gauss_hermite(55e-6, 7)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.sum(w * x**2) == pytest.approx(55e-6**2, rel=1e-12)
    with pytest.raises(ValueError):
        quasi_static_average(lambda x: Superoperator.identity(), 1e-6, 4)
    with pytest.raises(ValueError):
        quasi_static_average(lambda x: Superoperator.identity(), -1e-6, 7)


def test_quasi_static_quadrature_against_monte_carlo(params, gate_wf):
    sigma = 55e-6

    def fn(x):
        return propagate(params, gate_wf.flux_H, waveform_M=gate_wf.flux_M, delta_phi=x)

    gh = quasi_static_average(fn, sigma, 7)
    # one random draw per equal-probability stratum; plain sampling of a
    # near-quadratic leakage needs far more than 101 draws for 5%
    u = (np.arange(101) + np.random.default_rng(7).uniform(size=101)) / 101
    mc = Superoperator(sum(fn(x).matrix for x in norm.ppf(u) * sigma) / 101)
    assert gh.trace_deviation() < 1e-9
    assert np.rad2deg(abs(conditional_phase(gh) - conditional_phase(mc))) < 0.1
    assert leakage(gh) == pytest.approx(leakage(mc), rel=0.05)


def test_first_order_offset(params, cz_gate):
    w = build_waveform(cz_gate.spec, params)
    base = first_order_offset_trajectory(params, w, 0.0)
    np.testing.assert_array_equal(base, first_order_offset_trajectory(params, w.samples, 0.0))
    sweet = first_order_offset_trajectory(params, np.zeros(5), 1e-3)
    assert np.all(sweet == first_order_offset_trajectory(params, np.zeros(5), 0.0))
    shift = first_order_offset_trajectory(params, w, 1e-4) - base
    np.testing.assert_allclose(shift, flux_sensitivity(params, w.samples) * 1e-4, rtol=1e-9)
    n = len(w) // 2
    assert abs(shift[:n].sum() + shift[n:].sum()) <= 1e-12 * np.abs(shift).sum()


@pytest.mark.parametrize("theta, lam, t_2q", [
    (50, 0.0, 40e-9), (60, 0.0, 40e-9), (120, 0.2, 48e-9), (140, 0.1, 40e-9), (100.6891, 0.3752, 28e-9),
])
def test_leakage_matches_interferometer(params, frame, theta, lam, t_2q):
    # held samples make the two halves identical, so the full pulse is
    # half -> frame rotation -> half inside the {11, 02} pair
    w = build_waveform(PulseSpec(np.deg2rad(theta), lam, t_2q), params)
    n = len(w) // 2
    u_half = propagate_flux(params, w.samples[:n], w.dt, frame=frame).unitary
    u_full = propagate_flux(params, w.samples, w.dt, frame=frame).unitary
    b = u_half[np.ix_([I11, I02], [I11, I02])]
    r = frame.rotation(-n * w.dt)
    arm = float(np.angle(-b[1, 1] / b[0, 0] * r[I02] / r[I11]))
    act = HalfPulseAction(float(min(abs(b[1, 0]), 1.0)), 0.0, arm)
    predicted = 4 * nz_composition(act, "literal").leakage_l1
    assert abs(u_full[I02, I11]) ** 2 == pytest.approx(predicted, abs=1e-3)


def test_superoperator_io(tmp_path, params, cz_gate):
    p = cz_gate.simulate(params, NoiseModel.from_tier("C"))
    p.to_binary(tmp_path / "p.bin")
    assert (tmp_path / "p.bin").stat().st_size == 81 * 81 * 16
    np.testing.assert_array_equal(Superoperator.from_binary(tmp_path / "p.bin").matrix, p.matrix)
    p.to_csv(tmp_path / "p.csv")
    rows = np.loadtxt(tmp_path / "p.csv", delimiter=",", skiprows=1)
    assert rows.shape == (81 * 81, 4)
    k = 81 * 5 + 7
    assert rows[k, 2] + 1j * rows[k, 3] == p.matrix[5, 7]
    with pytest.raises(ValueError):
        Superoperator(np.eye(9))


def test_kraus_reconstructs_map(params, cz_gate):
    p = cz_gate.simulate(params, NoiseModel.from_tier("C"))
    ops = p.kraus()
    rebuilt = sum(np.kron(a.conj(), a) for a in ops)
    np.testing.assert_allclose(rebuilt, p.matrix, atol=1e-8)
    np.testing.assert_allclose(sum(a.conj().T @ a for a in ops), np.eye(DIM2), atol=1e-8)


def test_composition_order():
    a = Superoperator.from_unitary(np.diag(np.exp(1j * np.arange(DIM2))))
    x = np.eye(DIM2)[[1, 0, 2, 3, 4, 5, 6, 7, 8]]
    b = Superoperator.from_unitary(x)
    np.testing.assert_allclose((a @ b).unitary, a.unitary @ x)
    np.testing.assert_allclose((a @ b).matrix, np.kron((a.unitary @ x).conj(), a.unitary @ x))
