import numpy as np
import pytest

from nzcz.dynamics import COMPUTATIONAL, DIM2, Superoperator
from nzcz.rb import (
    CZ4,
    GROUP_ORDER,
    PopulationCalibrationError,
    RBFitError,
    bootstrap,
    build_clifford_group,
    canonical_key,
    clifford_infidelity,
    depolarized_cz,
    depolarizing_prediction,
    extract_populations,
    fit_fidelity_rb,
    fit_leakage_rb,
    fit_rb,
    interleaved_estimates,
    run_rb,
    summary,
)

CS = list(COMPUTATIONAL)


@pytest.fixture(scope="module")
def group():
    return build_clifford_group()


def _same_up_to_phase(a, b, tol=1e-9):
    k = np.unravel_index(np.argmax(np.abs(b)), b.shape)
    ph = a[k] / b[k]
    return abs(abs(ph) - 1) < tol and np.allclose(a, ph * b, atol=tol)


def test_group_order(group):
    assert len(group) == GROUP_ORDER == 11520 == 24**2 * 20


def test_identity_and_inverses(group, rng):
    assert group.index_of(np.eye(4)) == 0
    assert group.inverse(0) == 0
    for i in rng.integers(len(group), size=100):
        u = group.elements[i].unitary
        v = group.elements[group.inverse(int(i))].unitary
        assert _same_up_to_phase(v @ u, np.eye(4))


def test_closure(group, rng):
    for i, j in rng.integers(len(group), size=(100, 2)):
        u = group.elements[i].unitary @ group.elements[j].unitary
        assert canonical_key(u) in group.lookup


def test_global_phase_invariant_key(group, rng):
    u = group.elements[int(rng.integers(len(group)))].unitary
    assert canonical_key(u) == canonical_key(np.exp(0.77j) * u)


def test_compiled_layers_reproduce_element(group, rng):
    cz9 = np.eye(DIM2, dtype=complex)
    cz9[CS[3], CS[3]] = -1
    for i in rng.integers(len(group), size=200):
        el = group.elements[int(i)]
        u = np.eye(DIM2, dtype=complex)
        for layer in el.layers:
            u = (cz9 if isinstance(layer, str) else layer) @ u
        assert _same_up_to_phase(u[np.ix_(CS, CS)], el.unitary)
        assert el.n_cz == sum(1 for w in el.word if w == "CZ")


def _ideal_cz():
    u = np.eye(DIM2, dtype=complex)
    u[CS[3], CS[3]] = -1
    return Superoperator.from_unitary(u)


def test_noiseless_sequences(tmp_path):
    data = run_rb(_ideal_cz(), [1, 2, 4, 8], 3, seed=5)
    for _, _, _, m0, px in data.rows:
        assert m0 == pytest.approx(1.0, abs=1e-12)
        assert px == pytest.approx(1.0, abs=1e-12)
    data.to_csv(tmp_path / "rb.csv")
    lines = (tmp_path / "rb.csv").read_text().splitlines()
    assert lines[0] == "variant,n_cliffords,seed,m0,p_x1"
    assert len(lines) == 1 + 2 * 4 * 3


def test_sequences_are_reproducible():
    a = run_rb(depolarized_cz(0.05), [1, 3], 2, seed=9)
    b = run_rb(depolarized_cz(0.05), [1, 3], 2, seed=9)
    assert a.rows == b.rows
    with pytest.raises(ValueError):
        run_rb(_ideal_cz(), [0, 2], 1)


def test_depolarizing_channel_against_prediction():
    p = 0.02
    cz = depolarized_cz(p)
    assert cz.trace_deviation() < 1e-12 and cz.min_choi_eigenvalue() > -1e-12
    data = run_rb(cz, [1, 2, 4, 8, 16, 32, 64, 128], 200, interleaved=False, seed=3)
    fit = fit_rb(data)
    assert fit.l1 == pytest.approx(0.0, abs=1e-12)
    sigma = bootstrap(data, n_boot=100)["epsilon"]
    assert abs(fit.epsilon - depolarizing_prediction(p)) < 2 * sigma


def test_population_extraction():
    v0, v1, v2 = 1.0, -0.6, 0.1
    assert extract_populations(v0, v1, v0, v1, v2) == pytest.approx((1.0, 0.0, 0.0), abs=1e-15)
    assert extract_populations(v2, v2, v0, v1, v2) == pytest.approx((0.0, 0.0, 1.0), abs=1e-15)


def test_population_round_trip(rng):
    v0, v1, v2 = 0.9, -0.7, 0.15
    for _ in range(20):
        p = rng.dirichlet([1, 1, 1])
        s1 = p[0] * v0 + p[1] * v1 + p[2] * v2
        sx = p[1] * v0 + p[0] * v1 + p[2] * v2  # pi pulse swaps 0 and 1
        np.testing.assert_allclose(extract_populations(s1, sx, v0, v1, v2), p, atol=1e-12)
    with pytest.raises(PopulationCalibrationError):
        extract_populations(0.1, 0.2, 0.5, 0.5, 0.0)


N = np.array([1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 2000])


def test_leakage_fit_round_trip():
    fit = fit_leakage_rb(N, 0.95 + 0.05 * 0.999**N)
    assert fit.a == pytest.approx(0.95, rel=0.01)
    assert fit.b == pytest.approx(0.05, rel=0.01)
    assert fit.lambda_1 == pytest.approx(0.999, rel=0.01)
    assert fit.l1 == pytest.approx(5e-5, rel=0.01)
    assert fit.l1 + fit.l2 == pytest.approx(1 - fit.lambda_1, abs=1e-15)


def test_leakage_fit_without_leakage():
    fit = fit_leakage_rb(N, np.ones(len(N)))
    assert fit.lambda_1 == 1.0 and fit.l1 == 0.0 and fit.l2 == 0.0
    with pytest.raises(RBFitError):
        fit_leakage_rb([1, 2, 3], [1, 1, 0.9])


def test_fidelity_fit_round_trip():
    lk = fit_leakage_rb(N, 0.95 + 0.05 * 0.999**N)
    m0 = 0.3 + 0.1 * 0.999**N + 0.55 * 0.99**N
    fit = fit_fidelity_rb(N, m0, lk)
    assert fit.a0 == pytest.approx(0.3, rel=0.01)
    assert fit.b0 == pytest.approx(0.1, rel=0.01)
    assert fit.c0 == pytest.approx(0.55, rel=0.01)
    assert fit.lambda_2 == pytest.approx(0.99, rel=0.01)
    assert fit.epsilon == pytest.approx(clifford_infidelity(fit.lambda_2, lk.l1), abs=1e-15)


def test_infidelity_formula_limits():
    assert clifford_infidelity(1.0, 0.0) == 0.0
    for lam in (0.9, 0.99, 0.9999):
        assert clifford_infidelity(lam, 0.0) == pytest.approx((1 - lam) * 3 / 4, abs=1e-10)


def test_conventional_limit_from_fit():
    n = N[:7]
    lk = fit_leakage_rb(n, np.ones(len(n)))
    fit = fit_fidelity_rb(n, 0.25 + 0.75 * 0.98**n, lk)
    assert fit.b0 == 0.0
    assert fit.epsilon == pytest.approx((1 - 0.98) * 3 / 4, abs=1e-8)  # fit precision


def test_interleaved_identities():
    data = run_rb(depolarized_cz(0.03), [1, 2, 4, 8, 16], 5, interleaved=False, seed=1)
    ref = fit_rb(data)
    est = interleaved_estimates(ref, ref)
    assert est.epsilon_cz == 0.0 and est.l1_cz == 0.0
    assert est.to_dict()["fidelity_cz"] == 1.0


def test_interleaved_pipeline_keys():
    data = run_rb(depolarized_cz(0.03), [1, 2, 4, 8, 16], 10, seed=2)
    s = summary(data)
    assert {"epsilon_cz", "L1_cz", "reference", "interleaved"} <= set(s)
    assert s["epsilon_cz"] > 0
    b = bootstrap(data, n_boot=20)
    assert {"epsilon", "L1", "epsilon_cz", "L1_cz"} <= set(b)


def test_depolarized_cz_structure():
    cz = depolarized_cz(0.0)
    assert _same_up_to_phase(cz.matrix, _ideal_cz().matrix)
    np.testing.assert_array_equal(CZ4, np.diag([1, 1, 1, -1]))
