"""Euler-Maruyama integration of the coupled log-wealth system.

Per step, for every path,

    Y <- Y + (h* + f(Y~) (M / N) Y) dt + D L xi sqrt(dt)

where h* is the optimal drift, M the flow generator matrix, D L a square
root of the levered covariance and xi a standard normal vector. Each path
owns its own generator seeded from ``splitmix64(base_seed, path)``, and noise
is consumed path-major, step-major, bank-minor, so results do not depend on
how paths are grouped into chunks or scheduled onto threads.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from .control import bank_policies, effective_moments, resolve_rate
from .model import PSD_FLOOR, BankParams, CovarianceMatrix, FlowRateMatrix, SimulationConfig

log = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
CHUNK_PATHS = 256
BLOCK_ELEMENTS = 2_000_000
BRIDGE_SALT = 0x5BD1E995


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def path_seed(base_seed: int, path: int) -> int:
    return splitmix64(splitmix64(base_seed & MASK64) ^ (path & MASK64))


def path_seeds(base_seed: int, n_paths: int) -> NDArray[np.uint64]:
    return np.array([path_seed(base_seed, p) for p in range(n_paths)], dtype=np.uint64)


def path_generator(seed: int) -> np.random.Generator:
    """Normal variates for one path (PCG64 bit stream, ziggurat normals)."""
    return np.random.Generator(np.random.PCG64(int(seed)))


class FactorizationError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseFactorization:
    """Lower-triangular ``loading`` with ``loading @ loading.T == a``."""

    loading: NDArray[np.float64]

    @property
    def n(self) -> int:
        return self.loading.shape[0]


def factorize_noise(cov: CovarianceMatrix | NDArray, tol: float = 1e-10) -> NoiseFactorization:
    """Cholesky factor of a positive semidefinite matrix.

    Pivots at or below ``tol`` (relative to the largest diagonal entry) are
    treated as exact zeros and their column is left empty, so singular
    matrices such as a fully correlated covariance factorize exactly.
    """
    a = np.array(cov.a if isinstance(cov, CovarianceMatrix) else cov, dtype=np.float64)
    n = a.shape[0]
    scale = max(float(np.max(np.abs(np.diag(a)))), 1.0) if n else 1.0
    s = a.copy()
    loading = np.zeros((n, n))
    for k in range(n):
        d = s[k, k]
        if d < PSD_FLOOR * scale:
            raise FactorizationError(f"matrix is indefinite (pivot {d:.3e} at index {k})")
        if d <= tol * scale:
            continue
        col = s[k:, k] / math.sqrt(d)
        loading[k:, k] = col
        s[k:, k:] -= np.outer(col, col)
    err = np.max(np.abs(loading @ loading.T - a)) if n else 0.0
    if err > tol * scale:
        raise FactorizationError(f"factorization residual {err:.3e} exceeds {tol:.0e}")
    return NoiseFactorization(loading)


@dataclass(frozen=True)
class PathEnsemble:
    """Simulated log-wealth paths and streaming per-path statistics.

    ``paths`` holds every ``record_stride``-th grid point (all of them by
    default) or is None when recording was switched off; ``running_min``
    always covers every grid point.
    """

    times: NDArray[np.float64]
    paths: Optional[NDArray[np.float64]]  # (n_paths, len(times), N)
    seeds: NDArray[np.uint64]
    meta: str
    dt: float
    running_min: NDArray[np.float64]  # (n_paths, N)
    terminal: NDArray[np.float64]  # (n_paths, N)
    y0: NDArray[np.float64]
    r: float
    alpha_star: NDArray[np.float64]
    bridge_log_survival: Optional[NDArray[np.float64]] = None
    bridge_threshold: Optional[float] = None
    failed: NDArray[np.bool_] = field(default_factory=lambda: np.zeros(0, dtype=bool))
    diagnostics: tuple[str, ...] = ()

    @property
    def n_paths(self) -> int:
        return self.seeds.size

    @property
    def n_banks(self) -> int:
        return self.y0.size


def fingerprint(*parts) -> str:
    """Stable sha256 over the numeric content of scenario objects."""

    def enc(o):
        if isinstance(o, np.ndarray):
            return {"shape": list(o.shape), "data": np.asarray(o, dtype=np.float64).ravel().tolist()}
        if hasattr(o, "__dataclass_fields__"):
            return {"type": type(o).__name__, **{k: enc(getattr(o, k)) for k in o.__dataclass_fields__}}
        if isinstance(o, (list, tuple)):
            return [enc(x) for x in o]
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        return o

    blob = json.dumps([enc(p) for p in parts], sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


class _Integrator:
    """Advances a batch of paths through blocks of pre-drawn normals."""

    def __init__(self, drift, flow_op, loading, dt, flows: FlowRateMatrix | None,
                 threshold=None, bridge_var=None):
        self.drift = drift
        self.flow_op = flow_op  # M / N, or None for zero flows
        self.loading_t = loading.T
        self.dt = dt
        self.sqdt = math.sqrt(dt)
        self.flows = flows
        self.threshold = threshold
        self.bridge_var = bridge_var

    def advance(self, y, xi, running_min, log_surv, keep_every, offset, out):
        """Integrate ``xi`` (paths, steps, N) starting from state ``y``.

        States whose global step index is a multiple of ``keep_every`` are
        appended to ``out``. Returns the final state.
        """
        dw = (xi @ self.loading_t) * self.sqdt
        steps = xi.shape[1]
        if self.flow_op is None:
            base = self.drift * self.dt
            inc = base + dw
            traj = np.concatenate([y[:, None, :], inc], axis=1)
            np.cumsum(traj, axis=1, out=traj)
            states = traj[:, 1:, :]
        else:
            states = np.empty_like(dw)
            modulated = self.flows.modulation != "constant"
            cur = y
            for k in range(steps):
                flow = cur @ self.flow_op
                if modulated:
                    centered = cur - cur.mean(axis=1, keepdims=True)
                    fac = self.flows.modulation_factor(np.sqrt(np.sum(centered * centered, axis=1)))
                    flow = flow * fac[:, None]
                cur = cur + ((self.drift + flow) * self.dt + dw[:, k, :])
                states[:, k, :] = cur
        np.minimum(running_min, states.min(axis=1), out=running_min)
        if log_surv is not None:
            prev = np.concatenate([y[:, None, :], states[:, :-1, :]], axis=1)
            above_prev = prev - self.threshold
            above_next = states - self.threshold
            with np.errstate(over="ignore", invalid="ignore"):
                p = np.exp(-2.0 * above_prev * above_next / (self.bridge_var * self.dt))
            p = np.where((above_prev > 0) & (above_next > 0), p, 1.0)
            with np.errstate(divide="ignore"):
                log_surv += np.log1p(-np.minimum(p, 1.0)).sum(axis=1)
        if out is not None:
            idx = np.arange(offset + 1, offset + steps + 1)
            sel = (idx % keep_every) == 0
            if np.any(sel):
                out.append(states[:, sel, :].copy())
        return states[:, -1, :].copy()


def _setup(params, cov, flows, config, r):
    n = params.n
    if flows.n != n or cov.n != n:
        raise ValueError(f"dimension mismatch: {n} banks, covariance {cov.n}, flows {flows.n}")
    policy = bank_policies(params, r)
    eff = effective_moments(params, cov, policy)
    loading = factorize_noise(eff.a_star).loading
    flow_op = None if flows.is_zero() else _generator(flows.c) / n
    return policy, eff, loading, flow_op


def _generator(c: NDArray) -> NDArray:
    m = np.array(c, dtype=np.float64)
    np.fill_diagonal(m, 0.0)
    np.fill_diagonal(m, -m.sum(axis=1))
    return m


def simulate(
    params: BankParams,
    cov: CovarianceMatrix,
    flows: FlowRateMatrix,
    config: SimulationConfig,
    *,
    workers: int = 1,
    record_stride: Optional[int] = 1,
    bridge: bool = False,
) -> PathEnsemble:
    """Monte Carlo ensemble of the optimally controlled log-wealth system.

    Parameters
    ----------
    workers : threads used for path chunks; never changes the output.
    record_stride : keep every k-th grid point in ``paths``; None keeps none.
    bridge : accumulate Brownian-bridge survival against
        ``config.default_threshold`` (only valid without flows).
    """
    n = params.n
    r = resolve_rate(params, cov, config.rate)
    policy, eff, loading, flow_op = _setup(params, cov, flows, config, r)
    if bridge and flow_op is not None:
        raise ValueError("Brownian-bridge correction is exact only without interbank flows")
    if record_stride is not None and config.n_steps % record_stride:
        raise ValueError("record_stride must divide n_steps")
    y0 = config.initial_state(n)
    dt = config.dt
    seeds = path_seeds(config.base_seed, config.n_paths)
    integ = _Integrator(
        eff.mu_star, flow_op, loading, dt, flows,
        threshold=config.default_threshold if bridge else None,
        bridge_var=np.diag(eff.a_star) if bridge else None,
    )

    chunks = [(s, min(s + CHUNK_PATHS, config.n_paths)) for s in range(0, config.n_paths, CHUNK_PATHS)]

    def run_chunk(bounds):
        lo, hi = bounds
        gens = [path_generator(int(s)) for s in seeds[lo:hi]]
        p = hi - lo
        y = np.tile(y0, (p, 1))
        rmin = y.copy()
        log_surv = np.zeros((p, n)) if bridge else None
        rec = [y[:, None, :].copy()] if record_stride is not None else None
        block = max(1, min(config.n_steps, BLOCK_ELEMENTS // max(1, p * n)))
        done = 0
        failed = np.zeros(p, dtype=bool)
        notes = []
        while done < config.n_steps:
            b = min(block, config.n_steps - done)
            xi = np.stack([g.standard_normal((b, n)) for g in gens])
            with np.errstate(over="ignore", invalid="ignore"):
                y = integ.advance(y, xi, rmin, log_surv, record_stride or 1, done, rec)
            done += b
            bad = ~np.all(np.isfinite(y), axis=1) & ~failed
            if np.any(bad):
                for k in np.flatnonzero(bad):
                    notes.append(f"path {lo + k}: non-finite state by step {done}")
                failed |= bad
                y[failed] = np.nan
        paths = np.concatenate(rec, axis=1) if rec is not None else None
        return paths, rmin, y, log_surv, failed, notes

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_chunk, chunks))
    else:
        results = [run_chunk(c) for c in chunks]

    if record_stride is not None:
        n_rec = config.n_steps // record_stride + 1
        times = np.arange(n_rec) * (record_stride * dt)
        times[-1] = config.T
        paths = np.concatenate([res[0] for res in results], axis=0)
    else:
        times = np.array([0.0, config.T])
        paths = None
    failed = np.concatenate([res[4] for res in results])
    diagnostics = tuple(note for res in results for note in res[5])
    for note in diagnostics:
        log.warning(note)
    return PathEnsemble(
        times=times,
        paths=paths,
        seeds=seeds,
        meta=fingerprint(params, cov, flows, config),
        dt=dt,
        running_min=np.concatenate([res[1] for res in results], axis=0),
        terminal=np.concatenate([res[2] for res in results], axis=0),
        y0=y0,
        r=r,
        alpha_star=policy.alpha_star,
        bridge_log_survival=np.concatenate([res[3] for res in results], axis=0) if bridge else None,
        bridge_threshold=config.default_threshold if bridge else None,
        failed=failed,
        diagnostics=diagnostics,
    )


def euler_maruyama(
    y0: NDArray,
    drift: NDArray,
    loading: NDArray,
    dt: float,
    xi: NDArray,
    flows: FlowRateMatrix | None = None,
) -> NDArray:
    """Integrate explicit standard normals ``xi`` of shape (paths, steps, N).

    Returns the full trajectory array (paths, steps + 1, N). Used where the
    caller needs control over the Brownian increments, e.g. matched grid
    refinements.
    """
    xi = np.asarray(xi, dtype=np.float64)
    n = xi.shape[2]
    flow_op = None if flows is None or flows.is_zero() else _generator(flows.c) / n
    integ = _Integrator(np.asarray(drift, dtype=np.float64), flow_op, np.asarray(loading), dt, flows)
    y = np.tile(np.asarray(y0, dtype=np.float64), (xi.shape[0], 1))
    rmin = y.copy()
    rec = [y[:, None, :].copy()]
    integ.advance(y, xi, rmin, None, 1, 0, rec)
    return np.concatenate(rec, axis=1)


def mean_process(ensemble: PathEnsemble) -> NDArray[np.float64]:
    """Cross-sectional mean log-wealth, shape (n_paths, n_times)."""
    if ensemble.paths is None:
        raise ValueError("ensemble was simulated without recorded paths")
    return ensemble.paths.mean(axis=2)


def centered_paths(ensemble: PathEnsemble | NDArray) -> NDArray[np.float64]:
    """Deviations from the cross-sectional mean; each time slice sums to zero."""
    paths = ensemble.paths if isinstance(ensemble, PathEnsemble) else np.asarray(ensemble)
    if paths is None:
        raise ValueError("ensemble was simulated without recorded paths")
    return paths - paths.mean(axis=-1, keepdims=True)


def flow_drift(y: NDArray, flows: FlowRateMatrix) -> NDArray:
    """Flow term (1/N) sum_j c_ij f (y_j - y_i) for states ``y`` (..., N)."""
    y = np.asarray(y, dtype=np.float64)
    n = y.shape[-1]
    out = y @ (_generator(flows.c) / n)
    if flows.modulation != "constant":
        centered = y - y.mean(axis=-1, keepdims=True)
        out = out * np.asarray(flows.modulation_factor(np.linalg.norm(centered, axis=-1)))[..., None]
    return out
