"""Strict JSON scenario files.

Layout::

    {
      "banks":       {"mu": [..] | x, "sigma": [..] | x, "n": int,
                      "uniform": [lo, hi], "param_seed": int},
      "correlation": {"kind": ..., "rho_pair": x, "matrix": [[..]]},
      "flows":       {"kind": "zero" | "constant" | "block" | "explicit",
                      "value": x, "blocks": [[start, stop, rate], ..],
                      "matrix": [[..]],
                      "modulation": {"kind": ..., "f_floor": x, "f_scale": x}},
      "simulation":  {"T", "n_steps", "n_paths", "y0" | "y0_scalar",
                      "default_threshold", "base_seed"},
      "rate":        {"fixed": x} | {"lambda": x},
      "analysis":    {...}   # optional run options, see ANALYSIS_KEYS
    }

Unknown keys anywhere are rejected with their dotted path.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .model import (
    BankParams,
    CorrelationStructure,
    FixedRate,
    FlowRateMatrix,
    PolicyRate,
    SimulationConfig,
    ValidationError,
    validate_flows,
)

TOP_KEYS = {"banks", "correlation", "flows", "simulation", "rate", "analysis", "name"}
BANK_KEYS = {"mu", "sigma", "n", "uniform", "param_seed"}
CORR_KEYS = {"kind", "rho_pair", "matrix"}
FLOW_KEYS = {"kind", "value", "blocks", "matrix", "modulation"}
MOD_KEYS = {"kind", "f_floor", "f_scale"}
SIM_KEYS = {"T", "n_steps", "n_paths", "y0", "y0_scalar", "default_threshold", "base_seed"}
RATE_KEYS = {"fixed", "lambda"}
ANALYSIS_KEYS = {
    "lambda_grid",
    "r_values",
    "sweep",
    "k_lo",
    "k_hi",
    "bridge",
    "burn_in",
    "record_stride",
    "quadratic_cap",
}
SWEEP_KEYS = {"axis", "values"}


@dataclass(frozen=True)
class Scenario:
    params: BankParams
    corr: CorrelationStructure
    flows: FlowRateMatrix
    config: SimulationConfig
    analysis: dict = field(default_factory=dict)
    source: Optional[str] = None
    content_hash: str = ""
    name: str = ""


def _check_keys(obj: Any, allowed: set, where: str) -> dict:
    if not isinstance(obj, dict):
        raise ValidationError("expected an object", where)
    for k in obj:
        if k not in allowed:
            raise ValidationError(f"unknown key {k!r}", f"{where}.{k}" if where else k)
    return obj


def _number(obj, key, where, default=None, required=False):
    if key not in obj:
        if required:
            raise ValidationError("missing required key", f"{where}.{key}")
        return default
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValidationError(f"expected a number, got {v!r}", f"{where}.{key}")
    return v


def _vector(v, n, where):
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        if n is None:
            raise ValidationError("scalar needs banks.n", where)
        return np.full(n, float(v))
    if not isinstance(v, list) or not all(
        isinstance(x, (int, float)) and not isinstance(x, bool) for x in v
    ):
        raise ValidationError("expected a number or list of numbers", where)
    return np.array(v, dtype=np.float64)


def _banks(obj) -> BankParams:
    b = _check_keys(obj, BANK_KEYS, "banks")
    n = b.get("n")
    if n is not None and (not isinstance(n, int) or isinstance(n, bool) or n < 1):
        raise ValidationError("expected a positive integer", "banks.n")
    if "uniform" in b:
        lo_hi = b["uniform"]
        if "mu" in b or "sigma" in b:
            raise ValidationError("give either uniform or mu/sigma", "banks.uniform")
        if not (isinstance(lo_hi, list) and len(lo_hi) == 2 and lo_hi[0] < lo_hi[1]):
            raise ValidationError("expected [low, high]", "banks.uniform")
        if n is None or "param_seed" not in b:
            raise ValidationError("uniform draws need n and param_seed", "banks.uniform")
        return BankParams.uniform_draw(n, float(lo_hi[0]), float(lo_hi[1]), int(b["param_seed"]))
    for k in ("mu", "sigma"):
        if k not in b:
            raise ValidationError("missing required key", f"banks.{k}")
    mu = _vector(b["mu"], n, "banks.mu")
    sigma = _vector(b["sigma"], n, "banks.sigma")
    if n is not None and mu.size != n:
        raise ValidationError(f"{mu.size} entries for n={n}", "banks.mu")
    for k, s in enumerate(sigma):
        if not s > 0:
            raise ValidationError(f"volatility must be positive, got {s}", f"banks.sigma[{k}]")
    return BankParams(mu, sigma)


def _correlation(obj) -> CorrelationStructure:
    c = _check_keys(obj, CORR_KEYS, "correlation")
    kind = c.get("kind", "independent")
    if kind == "one_factor":
        rho = _number(c, "rho_pair", "correlation", required=True)
        return CorrelationStructure("one_factor", rho_pair=float(rho))
    if kind == "explicit":
        if "matrix" not in c:
            raise ValidationError("missing required key", "correlation.matrix")
        return CorrelationStructure("explicit", matrix=np.array(c["matrix"], dtype=np.float64))
    return CorrelationStructure(kind)


def _flows(obj, n: int) -> FlowRateMatrix:
    f = _check_keys(obj, FLOW_KEYS, "flows")
    kind = f.get("kind", "zero")
    value = _number(f, "value", "flows", default=0.0)
    if kind == "zero":
        c = np.zeros((n, n))
    elif kind == "constant":
        c = np.full((n, n), float(value))
        np.fill_diagonal(c, 0.0)
    elif kind == "block":
        blocks = f.get("blocks", [])
        c = np.full((n, n), float(value))
        for k, blk in enumerate(blocks):
            if not (isinstance(blk, list) and len(blk) == 3):
                raise ValidationError("expected [start, stop, rate]", f"flows.blocks[{k}]")
            start, stop, rate = blk
            if not (0 <= start < stop <= n):
                raise ValidationError(f"block [{start}, {stop}) outside 0..{n}", f"flows.blocks[{k}]")
            c[start:stop, start:stop] = rate
        np.fill_diagonal(c, 0.0)
    elif kind == "explicit":
        if "matrix" not in f:
            raise ValidationError("missing required key", "flows.matrix")
        c = np.array(f["matrix"], dtype=np.float64)
        if c.shape != (n, n):
            raise ValidationError(f"shape {c.shape} does not match {n} banks", "flows.matrix")
    else:
        raise ValidationError(f"unknown flow kind {kind!r}", "flows.kind")
    problems = validate_flows(c)
    if problems:
        raise ValidationError("; ".join(problems[:5]), "flows")
    mod = f.get("modulation")
    if mod is None:
        return FlowRateMatrix(c)
    m = _check_keys(mod, MOD_KEYS, "flows.modulation")
    mk = m.get("kind", "constant")
    if mk == "constant":
        return FlowRateMatrix(c)
    return FlowRateMatrix(
        c,
        mk,
        f_floor=float(_number(m, "f_floor", "flows.modulation", required=True)),
        f_scale=float(_number(m, "f_scale", "flows.modulation", required=True)),
    )


def _simulation(obj, rate, n) -> SimulationConfig:
    s = _check_keys(obj, SIM_KEYS, "simulation")
    if "y0" in s and "y0_scalar" in s:
        raise ValidationError("give either y0 or y0_scalar", "simulation.y0")
    if "y0" in s:
        y0 = _vector(s["y0"], None, "simulation.y0")
        if y0.size != n:
            raise ValidationError(f"{y0.size} entries for {n} banks", "simulation.y0")
    else:
        y0 = float(_number(s, "y0_scalar", "simulation", default=0.0))
    seed = s.get("base_seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ValidationError("expected an integer", "simulation.base_seed")
    return SimulationConfig(
        T=float(_number(s, "T", "simulation", default=1.0)),
        n_steps=_number(s, "n_steps", "simulation", default=1000),
        n_paths=_number(s, "n_paths", "simulation", default=1000),
        y0=y0,
        default_threshold=float(_number(s, "default_threshold", "simulation", default=-1.0)),
        base_seed=seed,
        rate=rate,
    )


def _rate(obj):
    r = _check_keys(obj, RATE_KEYS, "rate")
    if "fixed" in r and "lambda" in r:
        raise ValidationError("give either fixed or lambda", "rate")
    if "lambda" in r:
        return PolicyRate(float(_number(r, "lambda", "rate")))
    return FixedRate(float(_number(r, "fixed", "rate", default=0.0)))


def _analysis(obj) -> dict:
    a = dict(_check_keys(obj, ANALYSIS_KEYS, "analysis"))
    if "sweep" in a:
        sw = _check_keys(a["sweep"], SWEEP_KEYS, "analysis.sweep")
        if sw.get("axis") not in ("rho_pair", "r", "c_scale"):
            raise ValidationError(f"unknown axis {sw.get('axis')!r}", "analysis.sweep.axis")
        if not isinstance(sw.get("values"), list) or not sw["values"]:
            raise ValidationError("expected a nonempty list", "analysis.sweep.values")
    for key in ("lambda_grid", "r_values"):
        if key in a:
            vals = a[key]
            if not isinstance(vals, list) or not vals:
                raise ValidationError("expected a nonempty list", f"analysis.{key}")
            for k, v in enumerate(vals):
                if not v >= 0:
                    raise ValidationError(f"must be nonnegative, got {v}", f"analysis.{key}[{k}]")
    return a


def scenario_from_dict(doc: dict, source: str | None = None, content_hash: str = "") -> Scenario:
    _check_keys(doc, TOP_KEYS, "")
    for k in ("banks",):
        if k not in doc:
            raise ValidationError("missing required section", k)
    params = _banks(doc["banks"])
    corr = _correlation(doc.get("correlation", {}))
    corr.correlation_matrix(params.n)  # shape check for explicit matrices
    flows = _flows(doc.get("flows", {}), params.n)
    rate = _rate(doc.get("rate", {}))
    config = _simulation(doc.get("simulation", {}), rate, params.n)
    analysis = _analysis(doc.get("analysis", {}))
    if not content_hash:
        content_hash = hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()
    return Scenario(params, corr, flows, config, analysis, source, content_hash, doc.get("name", ""))


def parse_scenario(path: str | Path) -> Scenario:
    """Load and fully validate a scenario file."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"no such file: {path}", "scenario")
    raw = path.read_bytes()
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}", str(path))
    return scenario_from_dict(doc, str(path), hashlib.sha256(raw).hexdigest())
