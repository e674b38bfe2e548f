"""Scenario inputs: bank parameters, portfolio correlation, flow rates, run config.

All containers are frozen dataclasses holding read-only numpy arrays, so they
can be shared freely between worker threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np
from numpy.typing import NDArray

PSD_FLOOR = -1e-10


class ValidationError(ValueError):
    """Raised when scenario inputs violate a model invariant.

    ``where`` names the offending field (e.g. ``banks.sigma[2]``) when known.
    """

    def __init__(self, message: str, where: str | None = None):
        self.where = where
        super().__init__(f"{where}: {message}" if where else message)


def _frozen(a, ndim: int, name: str) -> NDArray[np.float64]:
    arr = np.array(a, dtype=np.float64)
    if arr.ndim != ndim:
        raise ValidationError(f"expected {ndim}-d array, got shape {arr.shape}", name)
    if not np.all(np.isfinite(arr)):
        raise ValidationError("non-finite entries", name)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class BankParams:
    """Per-bank portfolio drift ``mu`` and volatility ``sigma``."""

    mu: NDArray[np.float64]
    sigma: NDArray[np.float64]

    def __post_init__(self):
        mu = _frozen(self.mu, 1, "banks.mu")
        sigma = _frozen(self.sigma, 1, "banks.sigma")
        if mu.size < 1:
            raise ValidationError("need at least one bank", "banks.mu")
        if mu.shape != sigma.shape:
            raise ValidationError(
                f"length {sigma.size} differs from mu length {mu.size}", "banks.sigma"
            )
        for k, s in enumerate(sigma):
            if not s > 0:
                raise ValidationError(f"volatility must be positive, got {s}", f"banks.sigma[{k}]")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def n(self) -> int:
        return int(self.mu.size)

    @classmethod
    def homogeneous(cls, n: int, mu: float, sigma: float) -> "BankParams":
        return cls(np.full(n, mu), np.full(n, sigma))

    @classmethod
    def uniform_draw(cls, n: int, low: float, high: float, seed: int) -> "BankParams":
        """i.i.d. uniform ``mu`` and ``sigma`` on ``[low, high]`` from a fixed seed."""
        rng = np.random.default_rng(seed)
        mu = rng.uniform(low, high, n)
        sigma = rng.uniform(low, high, n)
        return cls(mu, sigma)


CorrelationKind = Literal["independent", "identical", "one_factor", "explicit"]


@dataclass(frozen=True)
class CorrelationStructure:
    """Dependence between the banks' driving Brownian motions.

    ``rho_pair`` is the pairwise correlation Corr(W_i, W_j) for the one-factor
    model, i.e. loadings sqrt(1 - rho) on the idiosyncratic factor and sqrt(rho)
    on the common one.
    """

    kind: CorrelationKind = "independent"
    rho_pair: float = 0.0
    matrix: Optional[NDArray[np.float64]] = None

    def __post_init__(self):
        if self.kind not in ("independent", "identical", "one_factor", "explicit"):
            raise ValidationError(f"unknown correlation kind {self.kind!r}", "correlation.kind")
        if self.kind == "one_factor":
            if not 0.0 <= self.rho_pair <= 1.0:
                raise ValidationError(
                    f"pairwise correlation must lie in [0, 1], got {self.rho_pair}",
                    "correlation.rho_pair",
                )
        if self.kind == "explicit":
            if self.matrix is None:
                raise ValidationError("explicit correlation needs a matrix", "correlation.matrix")
            r = _frozen(self.matrix, 2, "correlation.matrix")
            if r.shape[0] != r.shape[1]:
                raise ValidationError("matrix must be square", "correlation.matrix")
            if not np.array_equal(r, r.T):
                raise ValidationError("matrix must be symmetric", "correlation.matrix")
            if not np.all(np.diag(r) == 1.0):
                raise ValidationError("matrix must have unit diagonal", "correlation.matrix")
            if np.linalg.eigvalsh(r).min() < PSD_FLOOR:
                raise ValidationError("matrix is not positive semidefinite", "correlation.matrix")
            object.__setattr__(self, "matrix", r)

    @classmethod
    def one_factor(cls, rho: float) -> "CorrelationStructure":
        return cls("one_factor", rho_pair=float(rho))

    def correlation_matrix(self, n: int) -> NDArray[np.float64]:
        if self.kind == "independent":
            return np.eye(n)
        if self.kind == "identical":
            return np.ones((n, n))
        if self.kind == "one_factor":
            r = np.full((n, n), self.rho_pair)
            np.fill_diagonal(r, 1.0)
            return r
        if self.matrix.shape != (n, n):
            raise ValidationError(
                f"matrix shape {self.matrix.shape} does not match {n} banks", "correlation.matrix"
            )
        return np.array(self.matrix)


@dataclass(frozen=True)
class CovarianceMatrix:
    """Portfolio covariance ``a_ij = sigma_i sigma_j R_ij``."""

    a: NDArray[np.float64]

    def __post_init__(self):
        a = _frozen(self.a, 2, "covariance")
        if a.shape[0] != a.shape[1]:
            raise ValidationError("covariance must be square", "covariance")
        if not np.array_equal(a, a.T):
            raise ValidationError("covariance must be symmetric", "covariance")
        object.__setattr__(self, "a", a)

    @property
    def n(self) -> int:
        return self.a.shape[0]


def build_covariance(params: BankParams, corr: CorrelationStructure) -> CovarianceMatrix:
    r = corr.correlation_matrix(params.n)
    s = params.sigma
    a = np.outer(s, s) * r
    # exact symmetry and exact sigma_i^2 on the diagonal
    a = np.triu(a) + np.triu(a, 1).T
    np.fill_diagonal(a, s * s)
    if np.linalg.eigvalsh(a).min() < PSD_FLOOR:
        raise ValidationError("covariance is not positive semidefinite", "correlation")
    return CovarianceMatrix(a)


ModulationKind = Literal["constant", "norm_dependent"]


@dataclass(frozen=True)
class FlowRateMatrix:
    """Interbank flow rates ``c_ij`` with optional state-dependent modulation.

    Under ``norm_dependent`` modulation the effective rate is
    ``c_ij * (f_floor + f_scale * min(1, |y_centered|))``, bounded below by
    ``f_floor > 0``.
    """

    c: NDArray[np.float64]
    modulation: ModulationKind = "constant"
    f_floor: float = 1.0
    f_scale: float = 0.0

    def __post_init__(self):
        c = _frozen(self.c, 2, "flows.matrix")
        if c.shape[0] != c.shape[1]:
            raise ValidationError("flow matrix must be square", "flows.matrix")
        object.__setattr__(self, "c", c)
        if self.modulation not in ("constant", "norm_dependent"):
            raise ValidationError(f"unknown modulation {self.modulation!r}", "flows.modulation")
        if self.modulation == "norm_dependent":
            if not self.f_floor > 0:
                raise ValidationError("f_floor must be positive", "flows.modulation.f_floor")
            if not self.f_scale > 0:
                raise ValidationError("f_scale must be positive", "flows.modulation.f_scale")

    @property
    def n(self) -> int:
        return self.c.shape[0]

    @classmethod
    def zero(cls, n: int) -> "FlowRateMatrix":
        return cls(np.zeros((n, n)))

    @classmethod
    def constant(cls, n: int, value: float) -> "FlowRateMatrix":
        c = np.full((n, n), float(value))
        np.fill_diagonal(c, 0.0)
        return cls(c)

    @classmethod
    def blocks(cls, n: int, blocks: list[tuple[int, int, float]], default: float = 0.0):
        """Rate ``default`` everywhere, overridden by ``value`` inside each
        ``[start, stop)`` diagonal block; diagonal forced to zero."""
        c = np.full((n, n), float(default))
        for start, stop, value in blocks:
            c[start:stop, start:stop] = value
        np.fill_diagonal(c, 0.0)
        return cls(c)

    @classmethod
    def cliques(cls, sizes: list[int], value: float) -> "FlowRateMatrix":
        """Disjoint complete graphs with common rate ``value``."""
        n = sum(sizes)
        c = np.zeros((n, n))
        start = 0
        for s in sizes:
            c[start:start + s, start:start + s] = value
            start += s
        np.fill_diagonal(c, 0.0)
        return cls(c)

    def scaled(self, factor: float) -> "FlowRateMatrix":
        return FlowRateMatrix(self.c * factor, self.modulation, self.f_floor, self.f_scale)

    def is_zero(self) -> bool:
        return not np.any(self.c)

    def modulation_factor(self, norm) -> NDArray[np.float64] | float:
        if self.modulation == "constant":
            return 1.0
        return self.f_floor + self.f_scale * np.minimum(1.0, norm)


def example_flows(n: int = 30, inner: int = 10, strong: float = 10.0, weak: float = 0.5):
    """Two-tier flow matrix: rate ``strong`` among the first ``inner`` banks,
    ``weak`` for every other pair."""
    return FlowRateMatrix.blocks(n, [(0, inner, strong)], default=weak)


def validate_flows(flows: FlowRateMatrix | NDArray) -> list[str]:
    """List every symmetry, diagonal and sign violation (1-based index pairs).

    Never raises; an empty list means the matrix is admissible.
    """
    c = np.asarray(flows.c if isinstance(flows, FlowRateMatrix) else flows, dtype=np.float64)
    out = []
    n = c.shape[0]
    for i in range(n):
        if c[i, i] != 0.0:
            out.append(f"nonzero diagonal at ({i + 1},{i + 1})")
        for j in range(n):
            if c[i, j] < 0:
                out.append(f"negative rate at ({i + 1},{j + 1})")
            if j > i and c[i, j] != c[j, i]:
                out.append(f"asymmetry at ({i + 1},{j + 1})")
    return out


@dataclass(frozen=True)
class FixedRate:
    r: float

    def __post_init__(self):
        if not self.r >= 0:
            raise ValidationError(f"rate must be nonnegative, got {self.r}", "rate.fixed")


@dataclass(frozen=True)
class PolicyRate:
    """Rate chosen by the central bank with risk aversion ``lam``."""

    lam: float

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValidationError(f"risk aversion must be nonnegative, got {self.lam}", "rate.lambda")


@dataclass(frozen=True)
class SimulationConfig:
    T: float = 1.0
    n_steps: int = 1000
    n_paths: int = 1000
    y0: NDArray[np.float64] | float = 0.0
    default_threshold: float = -1.0
    base_seed: int = 0
    rate: FixedRate | PolicyRate = field(default_factory=lambda: FixedRate(0.0))

    def __post_init__(self):
        if not self.T > 0:
            raise ValidationError(f"horizon must be positive, got {self.T}", "simulation.T")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValidationError("n_steps must be a positive integer", "simulation.n_steps")
        if int(self.n_paths) != self.n_paths or self.n_paths < 1:
            raise ValidationError("n_paths must be a positive integer", "simulation.n_paths")
        if not 0 <= int(self.base_seed) < 2**64:
            raise ValidationError("base_seed must be an unsigned 64-bit integer", "simulation.base_seed")
        y0 = np.array(self.y0, dtype=np.float64)
        if not np.all(np.isfinite(y0)):
            raise ValidationError("non-finite initial value", "simulation.y0")
        y0.setflags(write=False)
        object.__setattr__(self, "y0", y0)
        object.__setattr__(self, "n_steps", int(self.n_steps))
        object.__setattr__(self, "n_paths", int(self.n_paths))
        object.__setattr__(self, "base_seed", int(self.base_seed))

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    def initial_state(self, n: int) -> NDArray[np.float64]:
        if self.y0.ndim == 0:
            return np.full(n, float(self.y0))
        if self.y0.shape != (n,):
            raise ValidationError(f"y0 has {self.y0.size} entries for {n} banks", "simulation.y0")
        return np.array(self.y0)

    def with_(self, **changes) -> "SimulationConfig":
        from dataclasses import replace

        return replace(self, **changes)
