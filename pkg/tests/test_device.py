import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nzcz.device import (
    DomainError,
    ModelValidityError,
    bare_detuning,
    bisect_flux,
    coupling_j1,
    coupling_j2,
    default_device,
    device_from_dict,
    device_to_dict,
    flux_from_frequency,
    flux_sensitivity,
    load_device,
    qubit_frequency,
    table_s1_config,
)
from nzcz.pulses import theta_of

TWO_PI = 2 * np.pi


def test_sweetspot_frequency(params):
    assert qubit_frequency(params, 0.0) == pytest.approx(params.omega_sweetspot_H, rel=1e-15)
    assert params.omega_sweetspot_H / TWO_PI == pytest.approx(6.91e9)


@pytest.mark.parametrize("phi", [0.05, 0.1, 0.2, 0.33, 0.45])
def test_arc_is_even_and_maximal_at_sweetspot(params, phi):
    assert qubit_frequency(params, -phi) == qubit_frequency(params, phi)
    assert qubit_frequency(params, phi) < qubit_frequency(params, 0.0)


def test_arc_closed_form(params):
    # the arc written out directly, no shared helpers
    phi = np.linspace(-0.45, 0.45, 31)
    w0, eta = params.omega_sweetspot_H, params.eta_H
    expected = (w0 - eta) * np.sqrt(np.abs(np.cos(np.pi * phi))) + eta
    np.testing.assert_allclose(qubit_frequency(params, phi), expected, rtol=1e-14)


@pytest.mark.parametrize("phi", [0.5, -0.5, 0.7, np.nan, np.inf])
def test_flux_outside_single_well(params, phi):
    with pytest.raises(DomainError):
        qubit_frequency(params, phi)


def test_operating_point_40mhz_below_sweetspot(params):
    target = params.omega_sweetspot_H - TWO_PI * 40e6
    assert target / TWO_PI == pytest.approx(6.87e9)
    phi = flux_from_frequency(params, target, "positive")
    assert phi > 0
    # independent bisection on the arc
    assert phi == pytest.approx(bisect_flux(params, target), abs=1e-12)
    assert phi == pytest.approx(params.flux_operating, abs=1e-12)
    assert qubit_frequency(params, phi) == pytest.approx(target, rel=1e-12)


def test_branches(params):
    target = params.omega_operating_H
    pos = flux_from_frequency(params, target, "positive")
    neg = flux_from_frequency(params, target, "negative")
    assert pos > 0 and neg == -pos
    assert flux_from_frequency(params, params.omega_sweetspot_H, "negative") == 0.0
    assert flux_from_frequency(params, params.omega_sweetspot_H, "positive") == 0.0


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=1e-4, max_value=0.4))
def test_flux_round_trip(phi):
    p = default_device()
    back = flux_from_frequency(p, qubit_frequency(p, phi), "positive")
    assert back == pytest.approx(phi, rel=1e-10)


def test_frequency_round_trip_relative(params):
    w = np.linspace(params.omega_sweetspot_H - TWO_PI * 2e9, params.omega_sweetspot_H, 50)
    np.testing.assert_allclose(qubit_frequency(params, flux_from_frequency(params, w)), w, rtol=1e-12)


@pytest.mark.parametrize("omega_offset", [TWO_PI * 1e6, TWO_PI * 1e9])
def test_frequency_above_sweetspot_rejected(params, omega_offset):
    with pytest.raises(DomainError):
        flux_from_frequency(params, params.omega_sweetspot_H + omega_offset)


def test_frequency_below_reachable_range_rejected(params):
    with pytest.raises(DomainError):
        flux_from_frequency(params, params.eta_H)


def test_bad_branch(params):
    with pytest.raises(ValueError):
        flux_from_frequency(params, params.omega_operating_H, "sideways")


def test_sensitivity(params):
    assert flux_sensitivity(params, 0.0) == 0.0
    for phi in (0.1, 0.2, 0.3):
        assert flux_sensitivity(params, phi) + flux_sensitivity(params, -phi) == 0.0
    h = 1e-6
    fd = (qubit_frequency(params, 0.15 + h) - qubit_frequency(params, 0.15 - h)) / (2 * h)
    assert flux_sensitivity(params, 0.15) == pytest.approx(fd, rel=1e-6)


def test_coupling_at_crossing(params):
    phi_x = params.flux_crossing
    assert coupling_j1(params, phi_x) / TWO_PI == pytest.approx(14.3e6, rel=1e-12)
    assert coupling_j2(params, phi_x) == pytest.approx(np.sqrt(2) * coupling_j1(params, phi_x), rel=1e-15)
    assert coupling_j2(params, phi_x) / TWO_PI == pytest.approx(20.2e6, rel=2e-3)


def test_speed_limit(params):
    t = np.pi / params.j2_at_crossing
    assert 24e-9 <= t <= 26e-9
    assert t == pytest.approx(1 / (2 * np.sqrt(2) * 14.3e6), rel=1e-12)


def test_coupling_is_even(params):
    for phi in (0.05, 0.2, 0.3):
        assert coupling_j1(params, -phi) == coupling_j1(params, phi)


def test_coupling_matches_dispersive_form(params):
    phi = 0.12
    d_m = params.omega_bus - params.omega_M
    d_h = params.omega_bus - qubit_frequency(params, phi)
    assert coupling_j1(params, phi) == pytest.approx(params.g_H * params.g_M / 2 * (1 / d_m + 1 / d_h), rel=1e-14)
    assert params.g_H == pytest.approx(params.g_M)


def test_bus_below_qubit_is_invalid(params):
    low_bus = params.with_(omega_bus=TWO_PI * 6.0e9)
    with pytest.raises(ModelValidityError):
        coupling_j1(low_bus, 0.0)


def test_bare_detuning(params):
    eps0 = bare_detuning(params, 0.0) / TWO_PI
    assert eps0 == pytest.approx(789e6, abs=0.5e6)
    assert 750e6 <= eps0 <= 850e6
    assert bare_detuning(params, params.flux_crossing) == pytest.approx(0.0, abs=1e-3)
    assert bare_detuning(params, -0.3) == bare_detuning(params, 0.3)


def test_crossing_gives_right_angle(params):
    eps = bare_detuning(params, params.flux_crossing)
    assert theta_of(eps, params.j2_at_crossing) == pytest.approx(np.pi / 2, abs=1e-9)


def test_invariants_rejected(params):
    with pytest.raises(ValueError):
        params.with_(eta_H=abs(params.eta_H))
    with pytest.raises(ValueError):
        params.with_(omega_operating_H=params.omega_sweetspot_H + 1.0)
    with pytest.raises(ValueError):
        params.with_(t1_M=-1.0)
    with pytest.raises(ValueError):
        params.with_(t2_star_M=params.t2_echo_M * 2)


def test_dephasing_model_monotone_in_sensitivity(params):
    phis = np.linspace(0, 0.3, 7)
    te = params.t2_echo_H(phis)
    ts = params.t2_star_H(phis)
    assert np.all(np.diff(te) < 0)
    assert np.all(ts <= te)
    assert params.t2_echo_H(params.flux_operating) == pytest.approx(14.7e-6, rel=1e-9)
    assert params.t2_star_H(params.flux_operating) == pytest.approx(3.2e-6, rel=1e-9)


def test_config_round_trip(tmp_path, params):
    cfg = device_to_dict(params)
    again = device_from_dict(cfg)
    assert again.flux_operating == pytest.approx(params.flux_operating, rel=1e-12)
    assert again.g_product == pytest.approx(params.g_product, rel=1e-12)
    path = tmp_path / "dev.json"
    path.write_text(json.dumps(table_s1_config()))
    loaded = load_device(path)
    assert loaded.omega_M == pytest.approx(params.omega_M)
    assert loaded.t1_H == pytest.approx(params.t1_H)
