import numpy as np
import pytest

from sysrisk.model import (
    BankParams,
    CorrelationStructure,
    FixedRate,
    FlowRateMatrix,
    PolicyRate,
    SimulationConfig,
    ValidationError,
    build_covariance,
    example_flows,
    validate_flows,
)


def test_independent_covariance_is_diagonal():
    a = build_covariance(BankParams([0.1, 0.1], [0.1, 0.1]), CorrelationStructure("independent")).a
    np.testing.assert_allclose(a, [[0.01, 0.0], [0.0, 0.01]], rtol=0, atol=1e-15)


def test_one_factor_covariance_entries():
    a = build_covariance(BankParams([0.1, 0.1], [0.1, 0.2]), CorrelationStructure.one_factor(0.5)).a
    np.testing.assert_allclose(a, [[0.01, 0.01], [0.01, 0.04]], atol=1e-15)


def test_one_factor_matches_sample_covariance_of_factor_draws(rng):
    # independent oracle: build W_i = sqrt(1-rho) Z_i + sqrt(rho) Z_0 and measure
    sigma = np.array([0.1, 0.2])
    rho = 0.5
    z0 = rng.standard_normal(400_000)
    z = rng.standard_normal((400_000, 2))
    w = np.sqrt(1 - rho) * z + np.sqrt(rho) * z0[:, None]
    sample = np.cov((w * sigma).T)
    a = build_covariance(BankParams([0.1, 0.1], sigma), CorrelationStructure.one_factor(rho)).a
    np.testing.assert_allclose(a, sample, atol=3e-4)


def test_identical_covariance_all_equal():
    a = build_covariance(BankParams.homogeneous(3, 0.1, 0.1), CorrelationStructure("identical")).a
    np.testing.assert_allclose(a, np.full((3, 3), 0.01), atol=1e-15)


def test_aliases_of_one_factor_are_identical(rng):
    p = BankParams(rng.uniform(0.1, 0.2, 6), rng.uniform(0.1, 0.2, 6))
    a_ind = build_covariance(p, CorrelationStructure("independent")).a
    a_0 = build_covariance(p, CorrelationStructure.one_factor(0.0)).a
    a_id = build_covariance(p, CorrelationStructure("identical")).a
    a_1 = build_covariance(p, CorrelationStructure.one_factor(1.0)).a
    assert np.array_equal(a_ind, a_0)
    assert np.array_equal(a_id, a_1)


@pytest.mark.parametrize("rho", [0.0, 0.3, 0.99, 1.0])
def test_covariance_exactly_symmetric_and_psd(rng, rho):
    n = 12
    p = BankParams(rng.uniform(0.01, 0.5, n), rng.uniform(0.01, 0.5, n))
    a = build_covariance(p, CorrelationStructure.one_factor(rho)).a
    assert np.array_equal(a, a.T)
    assert np.linalg.eigvalsh(a).min() >= -1e-10
    assert np.array_equal(np.diag(a), p.sigma**2)


def test_explicit_correlation_rejects_indefinite():
    r = np.array([[1.0, 0.9, -0.9], [0.9, 1.0, 0.9], [-0.9, 0.9, 1.0]])
    with pytest.raises(ValidationError):
        build_covariance(BankParams.homogeneous(3, 0.1, 0.1), CorrelationStructure("explicit", matrix=r))


def test_explicit_correlation_scaled_by_sigmas():
    r = np.array([[1.0, 0.2], [0.2, 1.0]])
    a = build_covariance(BankParams([0.1, 0.1], [0.1, 0.3]), CorrelationStructure("explicit", matrix=r)).a
    np.testing.assert_allclose(a, [[0.01, 0.006], [0.006, 0.09]], atol=1e-15)


def test_explicit_correlation_needs_unit_diagonal():
    with pytest.raises(ValidationError):
        CorrelationStructure("explicit", matrix=np.array([[2.0, 0.0], [0.0, 1.0]])).correlation_matrix(2)


@pytest.mark.parametrize("rho", [-0.1, 1.1])
def test_one_factor_range(rho):
    with pytest.raises(ValidationError):
        CorrelationStructure.one_factor(rho)


def test_bank_params_validation():
    with pytest.raises(ValidationError):
        BankParams([0.1, 0.1], [0.1, 0.0])
    with pytest.raises(ValidationError):
        BankParams([0.1, 0.1], [0.1])


def test_uniform_draw_reproducible():
    a = BankParams.uniform_draw(30, 0.1, 0.2, seed=7)
    b = BankParams.uniform_draw(30, 0.1, 0.2, seed=7)
    assert np.array_equal(a.mu, b.mu) and np.array_equal(a.sigma, b.sigma)
    assert a.mu.min() >= 0.1 and a.sigma.max() <= 0.2
    # mu >= sigma^2 throughout this range
    assert np.all(a.mu >= a.sigma**2)


def test_validate_flows_zero_matrix():
    assert validate_flows(np.zeros((4, 4))) == []


def test_validate_flows_example_matrix():
    f = example_flows()
    assert validate_flows(f) == []
    assert f.c[0, 1] == 10.0 and f.c[0, 10] == 0.5 and f.c[15, 20] == 0.5 and f.c[3, 3] == 0.0


def test_validate_flows_reports_asymmetry():
    c = np.zeros((2, 2))
    c[0, 1] = 1.0
    assert validate_flows(c) == ["asymmetry at (1,2)"]


def test_validate_flows_reports_sign_and_diagonal():
    c = np.array([[1.0, -1.0], [-1.0, 0.0]])
    problems = validate_flows(c)
    assert "nonzero diagonal at (1,1)" in problems
    assert "negative rate at (1,2)" in problems and "negative rate at (2,1)" in problems


def test_flow_constructors():
    assert FlowRateMatrix.zero(3).is_zero()
    c = FlowRateMatrix.cliques([2, 3], 1.0).c
    assert c[0, 1] == 1.0 and c[0, 2] == 0.0 and c[2, 4] == 1.0
    assert np.array_equal(FlowRateMatrix.constant(3, 2.0).scaled(0.5).c, FlowRateMatrix.constant(3, 1.0).c)


def test_modulation_floor():
    f = FlowRateMatrix(np.zeros((2, 2)), "norm_dependent", f_floor=0.5, f_scale=2.0)
    np.testing.assert_allclose(f.modulation_factor(np.array([0.0, 0.25, 3.0])), [0.5, 1.0, 2.5])
    with pytest.raises(ValidationError):
        FlowRateMatrix(np.zeros((2, 2)), "norm_dependent", f_floor=0.0, f_scale=1.0)


def test_simulation_config_validation():
    cfg = SimulationConfig(T=2.0, n_steps=4)
    assert cfg.dt == 0.5
    assert np.array_equal(cfg.initial_state(3), np.zeros(3))
    for bad in ({"T": 0.0}, {"n_steps": 0}, {"n_paths": 0}, {"base_seed": -1}):
        with pytest.raises(ValidationError):
            SimulationConfig(**bad)
    with pytest.raises(ValidationError):
        FixedRate(-0.01)
    with pytest.raises(ValidationError):
        PolicyRate(-1.0)
    with pytest.raises(ValidationError):
        SimulationConfig(y0=[0.0, 1.0]).initial_state(3)
