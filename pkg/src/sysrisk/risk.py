"""Default counts, their empirical distribution and parameter sweeps."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Literal

import numpy as np
from numpy.typing import NDArray

from .dynamics import BRIDGE_SALT, PathEnsemble, path_generator, simulate, splitmix64
from .model import (
    BankParams,
    CorrelationStructure,
    FixedRate,
    FlowRateMatrix,
    SimulationConfig,
    build_covariance,
)

K_HI = 60
K_LO = 5


def bridge_uniforms(seeds: NDArray[np.uint64], n_banks: int) -> NDArray[np.float64]:
    """One uniform per (path, bank) from a stream separate from the noise."""
    return np.stack([path_generator(splitmix64(int(s) ^ BRIDGE_SALT)).random(n_banks) for s in seeds])


def count_defaults(ensemble: PathEnsemble, threshold: float, bridge: bool = False) -> NDArray[np.int64]:
    """Number of banks per path whose log-wealth drops below ``threshold``.

    By default the minimum is taken over the simulation grid only. With
    ``bridge=True`` a bank that stays above the threshold at every grid point
    still defaults with its Brownian-bridge crossing probability, sampled
    with a per-path uniform; this needs an ensemble simulated with
    ``bridge=True`` at the same threshold.
    """
    hit = ensemble.running_min < threshold
    if bridge:
        if ensemble.bridge_log_survival is None or ensemble.bridge_threshold != threshold:
            raise ValueError("ensemble carries no bridge statistics for this threshold")
        u = bridge_uniforms(ensemble.seeds, ensemble.n_banks)
        hit = hit | (u < -np.expm1(ensemble.bridge_log_survival))
    return hit.sum(axis=1).astype(np.int64)


@dataclass(frozen=True)
class DefaultReport:
    counts: NDArray[np.int64]
    n_banks: int
    histogram: NDArray[np.float64]  # frequency of each count 0..N
    ecdf: NDArray[np.float64]
    k_lo: int
    k_hi: int
    p_large: float
    se_large: float
    p_small: float
    se_small: float

    @property
    def n_paths(self) -> int:
        return self.counts.size


def _binomial_se(p: float, n: int) -> float:
    return float(np.sqrt(p * (1.0 - p) / n))


def default_report(counts, n_banks: int, k_lo: int = K_LO, k_hi: int = K_HI) -> DefaultReport:
    """Histogram, ECDF and tail probabilities P(D > k_hi), P(D < k_lo)."""
    if k_lo > k_hi:
        raise ValueError("k_lo must not exceed k_hi")
    counts = np.asarray(counts, dtype=np.int64)
    if counts.size == 0:
        raise ValueError("no paths")
    if counts.min() < 0 or counts.max() > n_banks:
        raise ValueError("default counts outside 0..N")
    n = counts.size
    hist = np.bincount(counts, minlength=n_banks + 1)
    ecdf = np.cumsum(hist) / n
    p_large = float(np.count_nonzero(counts > k_hi)) / n
    p_small = float(np.count_nonzero(counts < k_lo)) / n
    return DefaultReport(
        counts=counts,
        n_banks=n_banks,
        histogram=hist / n,
        ecdf=ecdf,
        k_lo=k_lo,
        k_hi=k_hi,
        p_large=p_large,
        se_large=_binomial_se(p_large, n),
        p_small=p_small,
        se_small=_binomial_se(p_small, n),
    )


Axis = Literal["rho_pair", "r", "c_scale"]


@dataclass(frozen=True)
class SweepPoint:
    axis: str
    value: float
    report: DefaultReport


def sweep(
    params: BankParams,
    corr: CorrelationStructure,
    flows: FlowRateMatrix,
    config: SimulationConfig,
    axis: Axis,
    values: Iterable[float],
    k_lo: int = K_LO,
    k_hi: int = K_HI,
    workers: int = 1,
) -> list[SweepPoint]:
    """Default reports along one parameter axis with common random numbers.

    Every point reuses ``config.base_seed``, so path p sees the same normals
    at every axis value. ``rho_pair`` replaces the correlation by a one-factor
    structure, ``r`` fixes the rate, ``c_scale`` multiplies the base flows.
    """
    values = [float(v) for v in values]
    if values != sorted(values):
        raise ValueError("sweep values must be sorted")
    out = []
    for v in values:
        c, f, cfg = corr, flows, config
        if axis == "rho_pair":
            c = CorrelationStructure.one_factor(v)
        elif axis == "r":
            cfg = config.with_(rate=FixedRate(v))
        elif axis == "c_scale":
            f = flows.scaled(v)
        else:
            raise ValueError(f"unknown sweep axis {axis!r}")
        cov = build_covariance(params, c)
        ens = simulate(params, cov, f, cfg, workers=workers, record_stride=None)
        counts = count_defaults(ens, cfg.default_threshold)
        out.append(SweepPoint(axis, v, default_report(counts, params.n, k_lo, k_hi)))
    return out


def reflection_default_probability(drift: float, vol: float, barrier: float, horizon: float) -> float:
    """P(min_{t<=T} (drift t + vol W_t) < barrier) for barrier < 0."""
    from scipy.stats import norm

    a, m, s, t = barrier, drift, vol, horizon
    st = s * np.sqrt(t)
    return float(norm.cdf((a - m * t) / st) + np.exp(2 * m * a / s**2) * norm.cdf((a + m * t) / st))
