import numpy as np
import pytest
from scipy.linalg import expm
from scipy.stats import ks_2samp

from sysrisk.control import bank_policies, effective_moments, system_moments
from sysrisk.dynamics import (
    FactorizationError,
    centered_paths,
    euler_maruyama,
    factorize_noise,
    flow_drift,
    mean_process,
    path_seeds,
    simulate,
    splitmix64,
)
from sysrisk.model import (
    BankParams,
    CorrelationStructure,
    FixedRate,
    FlowRateMatrix,
    SimulationConfig,
    build_covariance,
)

IND = CorrelationStructure("independent")


def _run(params, corr=IND, flows=None, **cfg):
    cov = build_covariance(params, corr)
    flows = flows if flows is not None else FlowRateMatrix.zero(params.n)
    kw = {k: cfg.pop(k) for k in ("workers", "record_stride", "bridge") if k in cfg}
    return simulate(params, cov, flows, SimulationConfig(**cfg), **kw)


def test_splitmix_reference_value():
    # first output of the reference splitmix64 generator seeded with 0
    assert splitmix64(0) == 0xE220A8397B1DCDAF
    s = path_seeds(42, 1000)
    assert len(set(s.tolist())) == 1000


def test_factorize_diagonal():
    np.testing.assert_allclose(factorize_noise(np.diag([0.01, 0.04])).loading, np.diag([0.1, 0.2]), atol=1e-15)


def test_factorize_rank_one():
    lo = factorize_noise(np.full((2, 2), 0.01)).loading
    np.testing.assert_allclose(lo, [[0.1, 0.0], [0.1, 0.0]], atol=1e-15)
    np.testing.assert_allclose(lo @ lo.T, np.full((2, 2), 0.01), atol=1e-15)


def test_factorize_one_factor_reconstructs():
    p = BankParams.homogeneous(2, 0.1, 0.1)
    a = build_covariance(p, CorrelationStructure.one_factor(0.5)).a
    lo = factorize_noise(a).loading
    np.testing.assert_allclose(lo @ lo.T, [[0.01, 0.005], [0.005, 0.01]], atol=1e-10)
    assert np.allclose(lo, np.tril(lo))


def test_factorize_random_singular(rng):
    b = rng.standard_normal((6, 3))
    a = b @ b.T
    lo = factorize_noise(a).loading
    assert np.max(np.abs(lo @ lo.T - a)) <= 1e-10


def test_factorize_rejects_indefinite():
    with pytest.raises(FactorizationError):
        factorize_noise(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_grid_and_initial_values():
    ens = _run(BankParams.homogeneous(3, 0.1, 0.1), T=2.0, n_steps=8, n_paths=4, y0=[1.0, 2.0, 3.0])
    np.testing.assert_allclose(ens.times, np.linspace(0, 2, 9), atol=1e-15)
    assert np.all(np.diff(ens.times) > 0)
    assert np.all(ens.paths[:, 0, :] == [1.0, 2.0, 3.0])
    assert ens.paths.shape == (4, 9, 3)
    np.testing.assert_array_equal(ens.terminal, ens.paths[:, -1, :])
    np.testing.assert_array_equal(ens.running_min, ens.paths.min(axis=1))


def test_deterministic_limit():
    # vanishing noise: Y(T) = h* T, with h* = mu - sigma^2/2 in the own-capital regime
    p = BankParams([0.1], [1e-12])
    ens = _run(p, T=1.0, n_steps=100, n_paths=2, rate=FixedRate(0.2))
    h = bank_policies(p, 0.2).h_star[0]
    assert h == pytest.approx(0.1, abs=1e-20)
    np.testing.assert_allclose(ens.terminal[:, 0], h, atol=1e-6)


def test_zero_flow_decoupling_bitwise():
    a = _run(BankParams([0.1, 0.1], [0.1, 0.1]), T=1.0, n_steps=50, n_paths=20, base_seed=9)
    b = _run(BankParams([0.1, 0.3], [0.1, 0.4]), T=1.0, n_steps=50, n_paths=20, base_seed=9)
    np.testing.assert_array_equal(a.paths[:, :, 0], b.paths[:, :, 0])


def test_zero_flow_exchangeability_ks():
    mu, sigma = [0.1, 0.15, 0.2], [0.12, 0.1, 0.18]
    perm = [2, 0, 1]
    a = _run(BankParams(mu, sigma), T=1.0, n_steps=20, n_paths=3000, base_seed=3)
    b = _run(BankParams(np.take(mu, perm), np.take(sigma, perm)), T=1.0, n_steps=20, n_paths=3000, base_seed=3)
    for new, old in enumerate(perm):
        assert ks_2samp(a.terminal[:, old], b.terminal[:, new]).pvalue > 0.01


def test_mean_invariant_to_homogeneous_flows():
    p = BankParams.homogeneous(6, 0.1, 0.1)
    corr = CorrelationStructure.one_factor(0.3)
    base = dict(T=1.0, n_steps=200, n_paths=8, base_seed=4)
    y_free = mean_process(_run(p, corr, FlowRateMatrix.zero(6), **base))
    for c in (0.5, 5.0):
        y_flow = mean_process(_run(p, corr, FlowRateMatrix.constant(6, c), **base))
        assert np.max(np.abs(y_flow - y_free)) <= 1e-12


def test_flow_drift_sums_to_zero(rng):
    c = rng.uniform(0, 3, (7, 7))
    c = np.triu(c, 1) + np.triu(c, 1).T
    flows = FlowRateMatrix(c)
    y = rng.standard_normal((100, 7)) * 5
    assert np.max(np.abs(flow_drift(y, flows).sum(axis=1))) <= 1e-12
    mod = FlowRateMatrix(c, "norm_dependent", f_floor=0.5, f_scale=1.0)
    assert np.max(np.abs(flow_drift(y, mod).sum(axis=1))) <= 1e-12


def test_flow_drift_direct_sum(rng):
    c = np.array([[0.0, 1.0, 2.0], [1.0, 0.0, 0.5], [2.0, 0.5, 0.0]])
    y = np.array([0.3, -1.0, 2.0])
    expected = [sum(c[i, j] * (y[j] - y[i]) for j in range(3)) / 3 for i in range(3)]
    np.testing.assert_allclose(flow_drift(y, FlowRateMatrix(c)), expected, atol=1e-15)


@pytest.mark.parametrize("flows", [FlowRateMatrix.zero(5), FlowRateMatrix.constant(5, 2.0)])
def test_reproducible_across_workers(flows):
    p = BankParams(np.linspace(0.1, 0.2, 5), np.linspace(0.1, 0.2, 5))
    kw = dict(T=1.0, n_steps=40, n_paths=600, base_seed=17)
    one = _run(p, IND, flows, workers=1, **kw)
    four = _run(p, IND, flows, workers=4, **kw)
    again = _run(p, IND, flows, workers=3, **kw)
    assert np.array_equal(one.paths, four.paths) and np.array_equal(one.paths, again.paths)
    assert one.meta == four.meta


def test_record_stride_subsamples_same_paths():
    p = BankParams.homogeneous(3, 0.1, 0.1)
    kw = dict(T=1.0, n_steps=40, n_paths=5, base_seed=2)
    full = _run(p, **kw)
    sub = _run(p, record_stride=8, **kw)
    none = _run(p, record_stride=None, **kw)
    np.testing.assert_array_equal(sub.paths, full.paths[:, ::8, :])
    np.testing.assert_allclose(sub.times, full.times[::8], atol=1e-15)
    np.testing.assert_array_equal(none.running_min, full.running_min)
    assert none.paths is None


def test_increment_covariance_matches_levered_covariance():
    p = BankParams([0.1, 0.15], [0.1, 0.2])
    corr = CorrelationStructure.one_factor(0.5)
    cov = build_covariance(p, corr)
    ens = _run(p, corr, T=1.0, n_steps=1, n_paths=40000, base_seed=8)
    eff = effective_moments(p, cov, bank_policies(p, 0.0))
    inc = ens.terminal - ens.y0
    np.testing.assert_allclose(np.cov(inc.T), eff.a_star, rtol=0.04)
    assert np.all(np.abs(inc.mean(axis=0) - eff.mu_star) <= 4 * np.sqrt(np.diag(eff.a_star) / 40000))


def test_mean_process_moments_small():
    p = BankParams.uniform_draw(10, 0.1, 0.2, seed=1)
    cov = build_covariance(p, IND)
    ens = _run(p, T=1.0, n_steps=50, n_paths=4000, base_seed=11, record_stride=50)
    g, rho2 = system_moments(p, cov, 0.0)
    dy = mean_process(ens)[:, -1] - mean_process(ens)[:, 0]
    n = dy.size
    assert abs(dy.mean() - g) <= 3 * np.sqrt(rho2 / n)
    assert abs(dy.var(ddof=1) - rho2) <= 3 * rho2 * np.sqrt(2.0 / (n - 1))


def test_mean_and_centered_basics():
    paths = np.array([[[1.0, -1.0], [3.0, 1.0]]])
    c = centered_paths(paths)
    np.testing.assert_allclose(c[0, 1], [1.0, -1.0])
    ens = _run(BankParams.homogeneous(1, 0.1, 0.1), T=1.0, n_steps=5, n_paths=2)
    np.testing.assert_array_equal(mean_process(ens), ens.paths[:, :, 0])
    ens = _run(BankParams.homogeneous(4, 0.1, 0.1), T=1.0, n_steps=30, n_paths=3, y0=[1.0, -1.0, 2.0, 0.5])
    assert np.max(np.abs(centered_paths(ens).sum(axis=2))) <= 1e-12 * 4


def test_centered_autocovariance_decay():
    # homogeneous flows c: the centered process is OU with rate c
    c = 1.0
    p = BankParams.homogeneous(5, 0.1, 0.1)
    ens = _run(p, IND, FlowRateMatrix.constant(5, c), T=200.0, n_steps=20000, n_paths=16,
               base_seed=21, record_stride=10)
    y = centered_paths(ens)[:, 200:, :]  # drop t < 20
    lags = np.arange(0, 21, 2)  # record spacing 0.1
    ac = [np.mean(y[:, : y.shape[1] - k, :] * y[:, k:, :]) for k in lags]
    slope = np.polyfit(lags * 0.1, np.log(ac), 1)[0]
    assert slope == pytest.approx(-c, rel=0.10)


def test_weak_order_one_for_mean():
    # xi = 0 isolates the Euler error of the mean, exact mean from the matrix exponential
    c = FlowRateMatrix(np.array([[0.0, 2.0, 0.5], [2.0, 0.0, 1.0], [0.5, 1.0, 0.0]]))
    drift = np.array([0.5, 0.1, -0.2])
    y0 = np.array([1.0, -1.0, 0.5])
    m = c.c - np.diag(c.c.sum(axis=1))
    b = m / 3
    # exact: y(t) = e^{Bt} y0 + int_0^t e^{Bs} ds drift, via the augmented exponential
    aug = np.zeros((4, 4))
    aug[:3, :3] = b
    aug[:3, 3] = drift
    exact = (expm(aug) @ np.append(y0, 1.0))[:3]
    steps = np.array([10, 20, 40, 80, 160])
    errs = []
    for k in steps:
        y = euler_maruyama(y0, drift, np.zeros((3, 3)), 1.0 / k, np.zeros((1, k, 3)), c)
        errs.append(np.max(np.abs(y[0, -1] - exact)))
    slope = np.polyfit(np.log(1.0 / steps), np.log(errs), 1)[0]
    assert slope == pytest.approx(1.0, rel=0.3)


def test_barrier_statistic_half_order():
    # matched refinements of one fine Brownian grid: the expected miss of the
    # grid minimum (continuous crossing probability given the grid values minus
    # the grid indicator) shrinks like dt^(1/2)
    rng = np.random.default_rng(5)
    fine, barrier = 1600, -1.0
    levels = np.array([50, 100, 200, 400, 800])
    miss = {int(k): [] for k in levels}
    for _ in range(5):
        xi = rng.standard_normal((2000, fine, 1))
        y = euler_maruyama(np.zeros(1), np.array([0.5]), np.eye(1), 1.0 / fine, xi)[:, :, 0]
        for k in levels:
            g = y[:, :: fine // k]
            hi = g[:, :-1] - barrier
            lo = g[:, 1:] - barrier
            p = np.where((hi > 0) & (lo > 0), np.exp(-2 * hi * lo * k), 1.0)
            miss[int(k)].append((1 - np.prod(1 - p, axis=1)) - (g.min(axis=1) < barrier))
    err = np.array([np.concatenate(miss[int(k)]).mean() for k in levels])
    slope = np.polyfit(np.log(1.0 / levels), np.log(err), 1)[0]
    assert slope == pytest.approx(0.5, rel=0.3)


def test_coarse_noise_aggregation_matches_subsampling(rng):
    xi = rng.standard_normal((3, 8, 2))
    lo = np.array([[0.3, 0.0], [0.1, 0.2]])
    fine = euler_maruyama(np.zeros(2), np.array([0.1, 0.2]), lo, 0.125, xi)
    coarse_xi = xi.reshape(3, 4, 2, 2).sum(axis=2) / np.sqrt(2)
    coarse = euler_maruyama(np.zeros(2), np.array([0.1, 0.2]), lo, 0.25, coarse_xi)
    np.testing.assert_allclose(coarse, fine[:, ::2, :], atol=1e-12)


def test_modulated_flows_run_and_conserve_mean():
    p = BankParams.homogeneous(4, 0.1, 0.1)
    flows = FlowRateMatrix(FlowRateMatrix.constant(4, 1.0).c, "norm_dependent", f_floor=0.5, f_scale=2.0)
    kw = dict(T=1.0, n_steps=100, n_paths=4, base_seed=5)
    ens = _run(p, IND, flows, **kw)
    free = _run(p, IND, FlowRateMatrix.zero(4), **kw)
    assert np.max(np.abs(mean_process(ens) - mean_process(free))) <= 1e-12
    assert not np.allclose(ens.paths, free.paths)


def test_unstable_step_marks_failed_paths(caplog):
    p = BankParams.homogeneous(2, 0.1, 0.1)
    ens = _run(p, IND, FlowRateMatrix.constant(2, 1e4), T=100.0, n_steps=100, n_paths=2, base_seed=1)
    assert ens.failed.all()
    assert ens.diagnostics and "non-finite" in ens.diagnostics[0]


def test_bridge_requires_zero_flows():
    with pytest.raises(ValueError):
        _run(BankParams.homogeneous(2, 0.1, 0.1), IND, FlowRateMatrix.constant(2, 1.0),
             T=1.0, n_steps=10, n_paths=2, bridge=True)
