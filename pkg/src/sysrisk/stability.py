"""Long-run behaviour of the centered log-wealth process.

The deviations Y~ = Y - mean(Y) follow a linear SDE on the zero-sum
hyperplane with drift mu~ + (M / N) Y~, where M is the flow generator matrix.
When the flow graph is connected, M is negative definite on that hyperplane
and Y~ has a Gaussian stationary law; otherwise bank groups drift apart.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.stats import norm

from .control import EffectiveMoments
from .model import FlowRateMatrix

ZERO_EIG_REL = 1e-9


class JacobiError(RuntimeError):
    pass


class NotErgodicError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorMatrix:
    m: NDArray[np.float64]

    @property
    def n(self) -> int:
        return self.m.shape[0]


def build_generator(flows: FlowRateMatrix | NDArray) -> GeneratorMatrix:
    c = np.array(flows.c if isinstance(flows, FlowRateMatrix) else flows, dtype=np.float64)
    m = c.copy()
    np.fill_diagonal(m, 0.0)
    np.fill_diagonal(m, -m.sum(axis=1))
    return GeneratorMatrix(m)


def connectivity(flows: FlowRateMatrix | NDArray) -> tuple[bool, list[list[int]]]:
    """Connected components (0-based, sorted) of the graph {i ~ j : c_ij > 0}."""
    c = np.asarray(flows.c if isinstance(flows, FlowRateMatrix) else flows)
    n = c.shape[0]
    seen = [False] * n
    comps = []
    for start in range(n):
        if seen[start]:
            continue
        seen[start] = True
        queue = deque([start])
        comp = []
        while queue:
            i = queue.popleft()
            comp.append(i)
            for j in np.flatnonzero((c[i] > 0) | (c[:, i] > 0)):
                if not seen[j]:
                    seen[j] = True
                    queue.append(int(j))
        comps.append(sorted(comp))
    return len(comps) == 1, comps


def jacobi_eigh(a: NDArray, tol: float = 1e-12, max_sweeps: int = 100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps over all (p, q) pairs until the off-diagonal Frobenius norm drops
    below ``tol`` times the matrix norm.

    Returns
    -------
    eigenvalues : ascending
    eigenvectors : columns, orthonormal
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    if not np.allclose(a, a.T, rtol=0, atol=1e-14 * max(1.0, np.abs(a).max(initial=0.0))):
        raise ValueError("jacobi_eigh needs a symmetric matrix")
    v = np.eye(n)
    scale = np.linalg.norm(a)
    offdiag = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        off = math.sqrt(np.sum(a[offdiag] ** 2))
        if off <= tol * scale or scale == 0.0:
            w = np.diag(a).copy()
            order = np.argsort(w, kind="stable")
            return w[order], v[:, order]
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(tau) > 1e150:
                    t = 0.5 / tau
                else:
                    t = (1.0 if tau >= 0 else -1.0) / (abs(tau) + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                ap, aq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap, aq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = a[q, p] = 0.0
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    raise JacobiError(f"no convergence after {max_sweeps} sweeps")


def _split_spectrum(gen: GeneratorMatrix):
    """Eigenpairs of M with the eigenvector closest to e set apart."""
    w, v = jacobi_eigh(gen.m)
    n = gen.n
    e = np.ones(n) / math.sqrt(n)
    k0 = int(np.argmax(np.abs(v.T @ e)))
    keep = [k for k in range(n) if k != k0]
    return w, v, k0, keep


def zero_eigen_count(gen: GeneratorMatrix) -> int:
    w, _ = jacobi_eigh(gen.m)
    top = np.abs(w).max(initial=0.0)
    return int(np.count_nonzero(np.abs(w) <= ZERO_EIG_REL * top)) if top > 0 else gen.n


def spectral_gap(gen: GeneratorMatrix) -> float:
    """Smallest |eigenvalue| of M on the zero-sum hyperplane; 0 if disconnected."""
    if gen.n < 2:
        raise ValueError("spectral gap needs at least two banks")
    w, _, _, keep = _split_spectrum(gen)
    top = np.abs(w).max(initial=0.0)
    if top == 0.0:
        return 0.0
    rest = np.abs(w[keep])
    if np.any(rest <= ZERO_EIG_REL * top):
        return 0.0
    return float(rest.min())


def centered_moments(effective: EffectiveMoments) -> tuple[NDArray, NDArray]:
    """Project drift and covariance onto the zero-sum hyperplane: V mu, V A V."""
    mu = np.asarray(effective.mu_star, dtype=np.float64)
    a = np.asarray(effective.a_star, dtype=np.float64)
    n = mu.size
    proj = np.eye(n) - np.full((n, n), 1.0 / n)
    a_t = proj @ a @ proj
    return proj @ mu, 0.5 * (a_t + a_t.T)


def _restricted(gen: GeneratorMatrix):
    if gen.n < 2 or spectral_gap(gen) == 0.0:
        raise NotErgodicError("flow graph is disconnected: no unique stationary distribution")
    w, v, _, keep = _split_spectrum(gen)
    return w[keep], v[:, keep]


def stationary_covariance(gen: GeneratorMatrix, a_tilde: NDArray) -> NDArray[np.float64]:
    """Solve (M/N) S + S (M/N)' + A~ = 0 on the zero-sum hyperplane."""
    n = gen.n
    lam, v = _restricted(gen)
    s = v.T @ np.asarray(a_tilde) @ v
    s = s / (-(lam[:, None] + lam[None, :]) / n)
    sigma = v @ s @ v.T
    return 0.5 * (sigma + sigma.T)


def stationary_mean(gen: GeneratorMatrix, mu_tilde: NDArray) -> NDArray[np.float64]:
    """Unique zero-sum solution of (M/N) m + mu~ = 0."""
    n = gen.n
    lam, v = _restricted(gen)
    return -v @ ((n / lam) * (v.T @ np.asarray(mu_tilde)))


def lyapunov_residual(gen: GeneratorMatrix, sigma: NDArray, a_tilde: NDArray) -> float:
    b = gen.m / gen.n
    return float(np.max(np.abs(b @ sigma + sigma @ b.T + a_tilde)))


@dataclass(frozen=True)
class DriftCertificate:
    """Constants of the exponential Lyapunov function V(x) = exp(lam |x|^2 / 2).

    For |x| >= c2 the generator satisfies LV <= -c1 V, and c3 bounds
    LV + c1 V on the ball of radius c2.
    """

    lam: float
    c0: float
    a0: float
    c1: float
    c2: float
    c3: float
    mu_tilde: NDArray[np.float64]
    trace_a: float

    def k_bound(self, x) -> NDArray[np.float64] | float:
        """K(x) = lam mu~.x - lam^2 |x|^2 / 2 + lam tr(A~) / 2."""
        x = np.asarray(x, dtype=np.float64)
        val = (
            self.lam * (x @ self.mu_tilde)
            - 0.5 * self.lam**2 * np.sum(x * x, axis=-1)
            + 0.5 * self.lam * self.trace_a
        )
        return val if np.ndim(val) else float(val)


def lyapunov_drift_certificate(
    gen: GeneratorMatrix,
    a_tilde: NDArray,
    mu_tilde: NDArray,
    theta: float = 0.5,
    flow_floor: float = 1.0,
) -> DriftCertificate:
    """Lyapunov-function constants for the centered process.

    With c0 = gap(M) / N and a0 the top eigenvalue of A~ on the hyperplane,
    lam = c0 / a0 makes K(x) a concave quadratic. The radius c2 is where a
    (1 - theta) share of the quadratic decay absorbs the linear and constant
    terms; beyond it K <= -theta lam^2 c2^2 / 2 =: -c1. ``flow_floor`` is a
    lower bound on any state-dependent flow multiplier and scales c0.
    """
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    n = gen.n
    gap = spectral_gap(gen) if n >= 2 else 0.0
    if gap == 0.0:
        raise NotErgodicError("flow graph is disconnected: no drift certificate")
    _, v, _, keep = _split_spectrum(gen)
    basis = v[:, keep]
    a0 = float(np.linalg.eigvalsh(basis.T @ np.asarray(a_tilde) @ basis).max())
    if a0 <= 0:
        raise ValueError("centered noise is degenerate")
    c0 = gap / n * flow_floor
    lam = c0 / a0
    mu_t = np.asarray(mu_tilde, dtype=np.float64)
    m = float(np.linalg.norm(mu_t))
    tr = float(np.trace(a_tilde))
    kappa = 0.5 * lam * tr
    quad = (1.0 - theta) * 0.5 * lam**2
    c2 = (lam * m + math.sqrt((lam * m) ** 2 + 4.0 * quad * kappa)) / (2.0 * quad)
    c1 = theta * 0.5 * lam**2 * c2**2
    s = np.linspace(0.0, c2, 4001)
    worst = lam * m * s - 0.5 * lam**2 * s**2 + kappa
    c3 = float(np.max((worst + c1) * np.exp(0.5 * lam * s**2)))
    return DriftCertificate(lam, c0, a0, c1, c2, max(c3, 0.0), mu_t, tr)


# --- ergodic diagnostics ---------------------------------------------------


@dataclass(frozen=True)
class Functional:
    name: str
    fn: Callable[[NDArray], NDArray]
    stationary: Callable[[NDArray, NDArray], float]


def indicator_functional(coord: int = 0, q: float = 0.0) -> Functional:
    """f(y) = 1{y_coord <= q}."""

    def fn(y):
        return (y[..., coord] <= q).astype(np.float64)

    def stat(mean, cov):
        sd = math.sqrt(max(cov[coord, coord], 0.0))
        if sd == 0.0:
            return float(mean[coord] <= q)
        return float(norm.cdf((q - mean[coord]) / sd))

    return Functional(f"indicator(y{coord + 1}<={q:g})", fn, stat)


def truncated_square_functional(cap: float = 100.0, n_draws: int = 400_000, seed: int = 7) -> Functional:
    """f(y) = min(|y|^2, cap); the Gaussian value is estimated by sampling."""

    def fn(y):
        return np.minimum(np.sum(y * y, axis=-1), cap)

    def stat(mean, cov):
        w, v = np.linalg.eigh(cov)
        root = v * np.sqrt(np.clip(w, 0.0, None))
        z = np.random.default_rng(seed).standard_normal((n_draws, mean.size))
        y = mean + z @ root.T
        return float(np.mean(fn(y)))

    return Functional(f"min(|y|^2,{cap:g})", fn, stat)


@dataclass(frozen=True)
class ErgodicResult:
    functional: str
    time_average: float
    stationary_value: float
    abs_error: float
    time_average_se: float = float("nan")


def time_average(values: NDArray, times: NDArray) -> float:
    """Trapezoidal (1 / T) int f dt over the given grid."""
    span = times[-1] - times[0]
    return float(np.trapezoid(values, times) / span) if hasattr(np, "trapezoid") else float(
        np.trapz(values, times) / span
    )


def ergodic_check(
    centered: NDArray,
    times: NDArray,
    mean: NDArray,
    cov: NDArray,
    functional: Functional,
    burn_in: float = 0.0,
) -> ErgodicResult:
    """Compare long-run time averages of f(Y~) with the stationary expectation.

    ``centered`` is (n_times, N) for one path or (n_paths, n_times, N); with
    several paths the per-path time averages are averaged and their spread
    gives a standard error.
    """
    y = np.asarray(centered)
    if y.ndim == 2:
        y = y[None]
    keep = np.asarray(times) >= burn_in
    t = np.asarray(times)[keep]
    vals = functional.fn(y[:, keep, :])
    per_path = np.array([time_average(v, t) for v in vals])
    avg = float(per_path.mean())
    se = float(per_path.std(ddof=1) / math.sqrt(per_path.size)) if per_path.size > 1 else float("nan")
    target = functional.stationary(np.asarray(mean), np.asarray(cov))
    return ErgodicResult(functional.name, avg, target, abs(avg - target), se)


@dataclass(frozen=True)
class Divergence:
    """Growth of Var(group mean 1 - group mean 2) over time across paths."""

    times: NDArray[np.float64]
    variance: NDArray[np.float64]
    slope: float
    intercept: float
    r_squared: float


def component_divergence(paths: NDArray, times: NDArray, groups: Sequence[Sequence[int]]) -> Divergence:
    """Regress the cross-path variance of the first two group averages on t."""
    if len(groups) < 2:
        raise ValueError("need at least two groups")
    p = np.asarray(paths)
    diff = p[:, :, list(groups[0])].mean(axis=2) - p[:, :, list(groups[1])].mean(axis=2)
    var = diff.var(axis=0, ddof=1)
    t = np.asarray(times)
    slope, intercept = np.polyfit(t, var, 1)
    fitted = slope * t + intercept
    ss_res = float(np.sum((var - fitted) ** 2))
    ss_tot = float(np.sum((var - var.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    return Divergence(t, var, float(slope), float(intercept), r2)


@dataclass(frozen=True)
class StabilityReport:
    connected: bool
    components: list[list[int]]
    spectral_gap: float
    stationary_mean: Optional[NDArray[np.float64]] = None
    stationary_cov: Optional[NDArray[np.float64]] = None
    certificate: Optional[DriftCertificate] = None
    ergodic: list[ErgodicResult] = field(default_factory=list)


def analyze(flows: FlowRateMatrix, effective: EffectiveMoments) -> StabilityReport:
    """Analytic part of the stability report; stationary fields only when connected."""
    connected, comps = connectivity(flows)
    gen = build_generator(flows)
    if gen.n < 2:
        raise ValueError("stability analysis needs at least two banks")
    gap = spectral_gap(gen)
    if not connected or gap == 0.0:
        return StabilityReport(False, comps, 0.0)
    mu_t, a_t = centered_moments(effective)
    if flows.modulation != "constant":
        # state-dependent flows: stationary law exists but is not Gaussian
        cert = lyapunov_drift_certificate(gen, a_t, mu_t, flow_floor=flows.f_floor)
        return StabilityReport(True, comps, gap, certificate=cert)
    return StabilityReport(
        True,
        comps,
        gap,
        stationary_mean=stationary_mean(gen, mu_t),
        stationary_cov=stationary_covariance(gen, a_t),
        certificate=lyapunov_drift_certificate(gen, a_t, mu_t),
    )
