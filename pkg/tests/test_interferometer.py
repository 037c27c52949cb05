import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.signal import find_peaks

from nzcz.interferometer import (
    CONVENTIONS,
    HalfPulseAction,
    arm_phase,
    beamsplitter,
    closed_form_m11,
    fringe_period,
    leakage_sweep,
    nz_composition,
    oracle_discrepancy,
    phase_shifter,
    selected_convention,
    two_level_half,
    two_level_nz,
)

TWO_PI = 2 * np.pi


def test_beamsplitter_limits():
    b0 = beamsplitter(0.0, 0.4)
    np.testing.assert_allclose(b0, np.diag([np.exp(0.4j), -np.exp(-0.4j)]), atol=1e-15)
    np.testing.assert_allclose(beamsplitter(1.0, 0.4), [[0, 1], [1, 0]], atol=1e-15)
    b = beamsplitter(0.3, 0.7)
    np.testing.assert_allclose(b.conj().T @ b, np.eye(2), atol=1e-12)
    with pytest.raises(ValueError):
        beamsplitter(1.2, 0.0)


def test_phase_shifter():
    np.testing.assert_array_equal(phase_shifter(0.0), np.eye(2))
    np.testing.assert_allclose(phase_shifter(np.pi), np.diag([1, -1]), atol=1e-15)
    for phi in (0.2, 1.7, -3.0):
        assert abs(np.linalg.det(phase_shifter(phi))) == pytest.approx(1.0, abs=1e-15)


def test_action_validation():
    with pytest.raises(ValueError):
        HalfPulseAction(-0.1, 0.0, 0.0)
    with pytest.raises(ValueError):
        HalfPulseAction(1.1, 0.0, 0.0)
    assert HalfPulseAction(0.2, 0.3, 1.0).phi_tilde == pytest.approx(0.4)


def test_oracle_selects_sign_flipped_second_splitter():
    assert selected_convention() == "su2"
    assert oracle_discrepancy("su2") < 1e-12
    assert oracle_discrepancy("literal") > 1e-2
    with pytest.raises(ValueError):
        nz_composition(HalfPulseAction(0.1, 0, 0), "other")


@pytest.mark.parametrize("phi_tilde", np.linspace(0, 4 * np.pi, 9))
def test_adiabatic_condition(phi_tilde):
    r = nz_composition(HalfPulseAction(0.0, 0.45, phi_tilde + 0.9))
    assert r.leakage_l1 == pytest.approx(0.0, abs=1e-30)
    assert r.phi_2q == pytest.approx(0.9, abs=1e-12)


@pytest.mark.parametrize("k", [0, 1, -1, 2])
def test_interference_condition(k):
    phi_h = 0.6
    act = HalfPulseAction(0.3, phi_h, (2 * k + 1) * np.pi + 2 * phi_h)
    r = nz_composition(act)
    assert r.leakage_l1 < 1e-30
    assert np.exp(1j * r.phi_2q) == pytest.approx(np.exp(2j * phi_h), abs=1e-12)
    # the literal splitter puts the zero half a period away
    assert nz_composition(act, "literal").leakage_l1 == pytest.approx(0.3**2 * (1 - 0.3**2), rel=1e-12)


def test_leakage_is_periodic():
    pt = np.linspace(0, 4 * np.pi, 401)
    rows = leakage_sweep(0.3, 0.2, pt)
    l1 = rows[:, 1]
    np.testing.assert_allclose(l1[:201], l1[200:], atol=1e-15)
    assert l1.max() == pytest.approx(0.3**2 * (1 - 0.3**2), rel=1e-4)


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 1), st.floats(-np.pi, np.pi), st.floats(-np.pi, np.pi), st.sampled_from(CONVENTIONS))
def test_composition_unitary(alpha, phi_h, phi_arm, conv):
    r = nz_composition(HalfPulseAction(alpha, phi_h, phi_arm), conv)
    m = r.matrix
    np.testing.assert_allclose(m.conj().T @ m, np.eye(2), atol=1e-12)
    assert abs(m[0, 0]) ** 2 + abs(m[1, 0]) ** 2 == pytest.approx(1.0, abs=1e-12)
    assert m[0, 0] == pytest.approx(closed_form_m11(HalfPulseAction(alpha, phi_h, phi_arm), conv), abs=1e-12)


def test_phase_doubles_at_every_zero():
    pt = np.linspace(-2 * np.pi, 2 * np.pi, 4001)
    rows = leakage_sweep(0.4, 0.35, pt)
    idx, _ = find_peaks(-rows[:, 1])
    assert len(idx) == 2
    for i in idx:
        assert rows[i, 1] < 1e-5
        assert np.exp(1j * rows[i, 2]) == pytest.approx(np.exp(0.7j), abs=5e-3)


def test_printed_first_element_does_not_vanish_adiabatically(capsys):
    # |M11|^2/4 is 1/4 at alpha = 0, where the leakage itself is zero
    r = nz_composition(HalfPulseAction(0.0, 0.3, 1.0))
    assert r.printed_formula == pytest.approx(0.25)
    assert r.leakage_l1 == 0.0
    print(f"|M11|^2/4 at alpha=0: {r.printed_formula:.3f}; |M21|^2/4: {r.leakage_l1:.3f}")


def test_fringe_period():
    assert fringe_period(TWO_PI * 800e6) == pytest.approx(1.25e-9)
    assert fringe_period(TWO_PI * 1600e6) == pytest.approx(0.625e-9)


def test_fringe_period_of_device(params):
    assert fringe_period(params) == pytest.approx(1.267e-9, abs=1e-12)
    with pytest.raises(ValueError):
        fringe_period(0.0)


def test_buffer_fringes_match_two_level_dynamics():
    j2, eps_arm = TWO_PI * 20e6, TWO_PI * 800e6
    u_half = two_level_half(j2, TWO_PI * 600e6, TWO_PI * 15e6, 6e-9)
    period = fringe_period(eps_arm)
    bufs = np.linspace(0, 3 * period, 601)
    num = np.array([abs(two_level_nz(u_half, eps_arm, b)[1, 0]) ** 2 / 4 for b in bufs])
    ana = np.array([nz_composition(HalfPulseAction.from_unitary(u_half, arm_phase(eps_arm, b))).leakage_l1
                    for b in bufs])
    n_min, _ = find_peaks(-num)
    a_min, _ = find_peaks(-ana)
    assert len(n_min) == len(a_min) >= 2
    assert np.max(np.abs(bufs[n_min] - bufs[a_min])) < 0.05 * period
    assert np.all(np.abs(np.diff(bufs[n_min]) - period) < 0.05 * period)
