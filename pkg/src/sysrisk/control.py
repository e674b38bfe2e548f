"""Optimal bank leverage and the central bank's optimal interest rate.

Each bank maximizes the log-wealth drift

    h(alpha, r) = (1 + alpha) mu - sigma^2 / 2 (1 + alpha)^2 - r max(alpha, 0)

which is concave in alpha with a single kink at alpha = 0. The central bank
then maximizes w(r, lam) = g(r) - lam / 2 rho^2(r) over r >= 0, where g and
rho^2 are the drift and variance rate of the cross-sectional mean of log-wealth.
w is piecewise quadratic in r with breakpoints at (mu_i - sigma_i^2)_+, so its
exact maximizer is found by checking interval endpoints and interior vertices.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from numpy.typing import NDArray

from .model import BankParams, CovarianceMatrix

Regime = Literal["borrowing", "own_capital_only", "cash_reserve"]

TIE_TOL = 1e-12


def h_of(alpha, r, mu, sigma):
    """Log-wealth drift for leverage ``alpha`` at rate ``r``. Broadcasts."""
    x = 1.0 + np.asarray(alpha, dtype=np.float64)
    out = x * mu - 0.5 * np.square(sigma) * x * x - r * np.maximum(np.asarray(alpha, dtype=np.float64), 0.0)
    return out if out.ndim else float(out)


def optimal_alpha(mu: float, sigma: float, r: float) -> tuple[float, float, Regime]:
    """Maximize ``h_of`` over alpha in closed form.

    Works in terms of the invested fraction x = 1 + alpha. Below x = 1 the
    parabola peaks at mu / sigma^2, above it at (mu - r) / sigma^2; whichever
    side holds its own peak wins, otherwise the kink x = 1 is optimal.

    Returns
    -------
    alpha_star, h_star, regime
    """
    s2 = sigma * sigma
    x_low = mu / s2
    x_high = (mu - r) / s2
    if x_low < 1.0:
        x, regime = x_low, "cash_reserve"
        h = mu * mu / (2.0 * s2)
    elif x_high > 1.0:
        x, regime = x_high, "borrowing"
        h = r + (mu - r) ** 2 / (2.0 * s2)
    else:
        x, regime = 1.0, "own_capital_only"
        h = mu - 0.5 * s2
    return x - 1.0, h, regime


@dataclass(frozen=True)
class BankPolicy:
    alpha_star: NDArray[np.float64]
    h_star: NDArray[np.float64]
    regime: tuple[Regime, ...]
    r: float


def bank_policies(params: BankParams, r: float) -> BankPolicy:
    """Optimal leverage for every bank at rate ``r``.

    Flow rates do not enter: each bank's problem only involves its own drift.
    """
    res = [optimal_alpha(float(m), float(s), float(r)) for m, s in zip(params.mu, params.sigma)]
    alpha = np.array([a for a, _, _ in res])
    h = np.array([v for _, v, _ in res])
    return BankPolicy(alpha, h, tuple(g for _, _, g in res), float(r))


def g_i(r, mu, sigma):
    """Per-bank drift of the optimally controlled log-wealth as a function of r."""
    r = np.asarray(r, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    s2 = np.square(np.asarray(sigma, dtype=np.float64))
    out = np.where(
        mu < s2,
        mu * mu / (2.0 * s2),
        np.where(r <= mu - s2, (mu - r) ** 2 / (2.0 * s2) + r, mu - 0.5 * s2),
    )
    return out if out.ndim else float(out)


def rho_i(r, mu, sigma):
    """Per-bank volatility multiplier 1 + alpha_i* as a function of r."""
    r = np.asarray(r, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    s2 = np.square(np.asarray(sigma, dtype=np.float64))
    out = np.where(mu <= s2, mu / s2, np.where(r <= mu - s2, (mu - r) / s2, 1.0))
    return out if out.ndim else float(out)


def system_moments(params: BankParams, cov: CovarianceMatrix, r: float) -> tuple[float, float]:
    """Drift ``g`` and variance rate ``rho2`` of the mean log-wealth."""
    n = params.n
    g = float(np.mean(g_i(r, params.mu, params.sigma)))
    rho = rho_i(np.full(n, r), params.mu, params.sigma)
    rho2 = float(rho @ cov.a @ rho) / (n * n)
    return g, max(rho2, 0.0)


def central_objective(params: BankParams, cov: CovarianceMatrix, r: float, lam: float) -> float:
    g, rho2 = system_moments(params, cov, r)
    return g - 0.5 * lam * rho2


def objective_curve(params: BankParams, cov: CovarianceMatrix, lam: float, r_grid) -> NDArray:
    """Vectorized ``(r, w, g, rho2)`` rows for every r in ``r_grid``."""
    r_grid = np.asarray(r_grid, dtype=np.float64)
    n = params.n
    g = g_i(r_grid[:, None], params.mu, params.sigma).mean(axis=1)
    rho = rho_i(r_grid[:, None], params.mu, params.sigma)
    rho2 = np.maximum(np.einsum("ki,ij,kj->k", rho, cov.a, rho) / (n * n), 0.0)
    return np.column_stack([r_grid, g - 0.5 * lam * rho2, g, rho2])


@dataclass(frozen=True)
class PolicyResult:
    r_star: float
    w_star: float
    lam: float
    liquidity_trap: bool
    breakpoints: NDArray[np.float64]
    curve: NDArray[np.float64]  # columns r, w, g, rho2

    @property
    def r_max(self) -> float:
        return float(self.breakpoints[-1]) if self.breakpoints.size else 0.0


def breakpoints(params: BankParams) -> NDArray[np.float64]:
    return np.unique(np.maximum(params.mu - params.sigma ** 2, 0.0))


def _quadratic_on(params: BankParams, cov: CovarianceMatrix, lam: float, hi: float):
    """Coefficients (c0, c1, c2) of w on an interval whose right end is ``hi``."""
    mu, s2 = params.mu, params.sigma ** 2
    n = params.n
    borrowing = (mu > s2) & (mu - s2 >= hi)
    # rho_i = p_i + q_i r
    p = np.where(borrowing, mu / s2, np.where(mu <= s2, mu / s2, 1.0))
    q = np.where(borrowing, -1.0 / s2, 0.0)
    g0 = np.where(borrowing, mu * mu / (2 * s2), np.where(mu < s2, mu * mu / (2 * s2), mu - 0.5 * s2))
    g1 = np.where(borrowing, 1.0 - mu / s2, 0.0)
    g2 = np.where(borrowing, 1.0 / (2 * s2), 0.0)
    a = cov.a
    k = 0.5 * lam / (n * n)
    c0 = g0.mean() - k * (p @ a @ p)
    c1 = g1.mean() - k * 2.0 * (q @ a @ p)
    c2 = g2.mean() - k * (q @ a @ q)
    return c0, c1, c2


def optimal_rate(
    params: BankParams,
    cov: CovarianceMatrix,
    lam: float,
    curve_points: int = 201,
) -> PolicyResult:
    """Exact maximizer of ``w(r, lam)`` over r >= 0.

    w is constant beyond r_max = max_i (mu_i - sigma_i^2)_+, so only
    [0, r_max] is searched. Ties go to the smallest rate.
    """
    if not lam >= 0:
        raise ValueError(f"risk aversion must be nonnegative, got {lam}")
    bps = breakpoints(params)
    knots = np.unique(np.concatenate([[0.0], bps]))
    candidates = [0.0]
    for lo, hi in zip(knots[:-1], knots[1:]):
        candidates.append(float(hi))
        c0, c1, c2 = _quadratic_on(params, cov, lam, hi)
        if c2 < 0:
            vertex = -c1 / (2.0 * c2)
            if lo < vertex < hi:
                candidates.append(float(vertex))
    candidates = sorted(set(candidates))
    values = [central_objective(params, cov, r, lam) for r in candidates]
    best = max(values)
    r_star = next(r for r, v in zip(candidates, values) if v >= best - TIE_TOL)
    w_star = central_objective(params, cov, r_star, lam)
    r_max = float(knots[-1])

    grid = np.linspace(0.0, r_max + max(0.05, 0.25 * r_max), curve_points)
    grid = np.unique(np.concatenate([grid, knots, [r_star]]))
    curve = objective_curve(params, cov, lam, grid)
    return PolicyResult(
        r_star=r_star,
        w_star=w_star,
        lam=float(lam),
        liquidity_trap=bool(r_max == 0.0),
        breakpoints=bps,
        curve=curve,
    )


@dataclass(frozen=True)
class EffectiveMoments:
    mu_star: NDArray[np.float64]
    a_star: NDArray[np.float64]


def effective_moments(params: BankParams, cov: CovarianceMatrix, policy: BankPolicy) -> EffectiveMoments:
    """Drift and covariance of the optimally levered portfolio returns.

    The covariance is D A D with D = diag(1 + alpha_i*), the law of the noise
    terms sigma_i (1 + alpha_i*) dW_i.
    """
    d = 1.0 + policy.alpha_star
    a_star = d[:, None] * cov.a * d[None, :]
    a_star = np.triu(a_star) + np.triu(a_star, 1).T
    return EffectiveMoments(np.array(policy.h_star), a_star)


def resolve_rate(params: BankParams, cov: CovarianceMatrix, rate) -> float:
    """Numeric rate for a ``FixedRate`` or ``PolicyRate`` setting."""
    from .model import FixedRate

    if isinstance(rate, FixedRate):
        return rate.r
    return optimal_rate(params, cov, rate.lam).r_star
