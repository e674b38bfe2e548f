"""Command-line scenario runner.

    sysrisk policy    --scenario s.json --out out/
    sysrisk simulate  --scenario s.json --out out/ [--seed N] [--threads N]
    sysrisk defaults  --scenario s.json --out out/
    sysrisk sweep     --scenario s.json --out out/
    sysrisk stability --scenario s.json --out out/
    sysrisk figure    --figure fig7 --out out/

Exit codes: 0 success, 1 invalid input, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .control import bank_policies, effective_moments, optimal_rate, resolve_rate
from .dynamics import FactorizationError, centered_paths, simulate
from .model import FixedRate, PolicyRate, ValidationError, build_covariance
from .recipes import FIGURES, recipe_documents
from .risk import K_HI, K_LO, count_defaults, default_report, sweep
from .scenario import Scenario, parse_scenario, scenario_from_dict
from .stability import (
    JacobiError,
    analyze,
    component_divergence,
    ergodic_check,
    indicator_functional,
    truncated_square_functional,
)

log = logging.getLogger("sysrisk")

COMMANDS = ("policy", "simulate", "defaults", "sweep", "stability")


class NumericalError(RuntimeError):
    pass


@dataclass
class RunManifest:
    command: str
    scenario_hash: str
    base_seed: int
    tool_version: str
    outputs: list
    duration_s: float
    scenario_source: str | None = None
    notes: list | None = None


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path: Path, header, rows, written: list):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    written.append(str(path))


def _write_json_atomic(path: Path, payload: dict):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".json")
    with os.fdopen(fd, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _label(value: float) -> str:
    return f"{value:g}"


# --- subcommands -------------------------------------------------------------


def _run_policy(sc: Scenario, out: Path, threads: int, written: list, notes: list):
    cov = build_covariance(sc.params, sc.corr)
    lam = sc.config.rate.lam if isinstance(sc.config.rate, PolicyRate) else 0.0
    res = optimal_rate(sc.params, cov, lam)
    _write_csv(out / "curve.csv", ["r", "w", "g", "rho2"], res.curve.tolist(), written)
    grid = sc.analysis.get("lambda_grid", [lam])
    rows = []
    curves = []
    for lg in grid:
        pr = optimal_rate(sc.params, cov, float(lg))
        rows.append([float(lg), pr.r_star, pr.w_star, pr.liquidity_trap])
        curves.extend([[float(lg), *row] for row in pr.curve.tolist()])
    _write_csv(out / "summary.csv", ["lambda", "r_star", "w_star", "liquidity_trap"], rows, written)
    if len(grid) > 1:
        _write_csv(out / "curves.csv", ["lambda", "r", "w", "g", "rho2"], curves, written)
    _write_csv(
        out / "banks.csv",
        ["bank", "mu", "sigma", "mu_minus_sigma2", "alpha_star_at_r_star"],
        [
            [i + 1, m, s, m - s * s, a]
            for i, (m, s, a) in enumerate(
                zip(sc.params.mu, sc.params.sigma, bank_policies(sc.params, res.r_star).alpha_star)
            )
        ],
        written,
    )
    if res.liquidity_trap:
        notes.append("liquidity trap: no bank borrows at any rate")


def _simulate(sc: Scenario, threads: int, **kw):
    cov = build_covariance(sc.params, sc.corr)
    ens = simulate(sc.params, cov, sc.flows, sc.config, workers=threads, **kw)
    if ens.failed.any():
        raise NumericalError("; ".join(ens.diagnostics[:5]))
    return cov, ens


def _run_simulate(sc: Scenario, out: Path, threads: int, written: list, notes: list):
    stride = int(sc.analysis.get("record_stride", 1))
    cov, ens = _simulate(sc, threads, record_stride=stride)
    n = sc.params.n
    path_ = out / "paths.csv"
    path_.parent.mkdir(parents=True, exist_ok=True)
    with open(path_, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "step", "time", "bank", "Y"])
        for p in range(ens.n_paths):
            for k, t in enumerate(ens.times):
                step = k * stride
                for i in range(n):
                    w.writerow([p, step, _fmt(t), i + 1, _fmt(ens.paths[p, k, i])])
    written.append(str(path_))
    _write_csv(
        out / "alpha.csv",
        ["bank", "mu", "sigma", "alpha_star"],
        [[i + 1, m, s, a] for i, (m, s, a) in enumerate(zip(sc.params.mu, sc.params.sigma, ens.alpha_star))],
        written,
    )
    meta = {
        "fingerprint": ens.meta,
        "scenario_hash": sc.content_hash,
        "base_seed": sc.config.base_seed,
        "seeds": [int(s) for s in ens.seeds],
        "r": ens.r,
        "dt": ens.dt,
    }
    _write_json_atomic(out / "meta.json", meta)
    written.append(str(out / "meta.json"))


def _write_report(out: Path, rep, written: list):
    _write_csv(out / "histogram.csv", ["count", "frequency"],
               [[k, f] for k, f in enumerate(rep.histogram)], written)
    _write_csv(out / "ecdf.csv", ["count", "cum_prob"], [[k, f] for k, f in enumerate(rep.ecdf)], written)


def _run_defaults(sc: Scenario, out: Path, threads: int, written: list, notes: list):
    k_lo = int(sc.analysis.get("k_lo", K_LO))
    k_hi = int(sc.analysis.get("k_hi", K_HI))
    bridge = bool(sc.analysis.get("bridge", False))
    if "r_values" in sc.analysis:
        values = [float(v) for v in sc.analysis["r_values"]]
        scenarios = [replace(sc, config=sc.config.with_(rate=FixedRate(v))) for v in values]
    else:
        scenarios = [sc]
        values = [resolve_rate(sc.params, build_covariance(sc.params, sc.corr), sc.config.rate)]
    tails = []
    for v, s in zip(values, scenarios):
        _, ens = _simulate(s, threads, record_stride=None, bridge=bridge)
        counts = count_defaults(ens, s.config.default_threshold, bridge=bridge)
        rep = default_report(counts, s.params.n, k_lo, k_hi)
        target = out if len(values) == 1 else out / f"r={_label(v)}"
        _write_report(target, rep, written)
        tails.append([v, rep.p_large, rep.se_large, rep.p_small, rep.se_small])
    _write_csv(out / "tails.csv", ["axis_value", "p_large", "se_large", "p_small", "se_small"], tails, written)


def _run_sweep(sc: Scenario, out: Path, threads: int, written: list, notes: list):
    plan = sc.analysis.get("sweep")
    if plan is None:
        raise ValidationError("sweep needs analysis.sweep {axis, values}", "analysis.sweep")
    pts = sweep(
        sc.params, sc.corr, sc.flows, sc.config, plan["axis"], plan["values"],
        k_lo=int(sc.analysis.get("k_lo", K_LO)), k_hi=int(sc.analysis.get("k_hi", K_HI)),
        workers=threads,
    )
    rows = []
    for pt in pts:
        _write_report(out / f"{pt.axis}={_label(pt.value)}", pt.report, written)
        r = pt.report
        rows.append([pt.value, r.p_large, r.se_large, r.p_small, r.se_small])
    _write_csv(out / "tails.csv", ["axis_value", "p_large", "se_large", "p_small", "se_small"], rows, written)


def _run_stability(sc: Scenario, out: Path, threads: int, written: list, notes: list):
    cov = build_covariance(sc.params, sc.corr)
    r = resolve_rate(sc.params, cov, sc.config.rate)
    eff = effective_moments(sc.params, cov, bank_policies(sc.params, r))
    rep = analyze(sc.flows, eff)
    cert = rep.certificate
    _write_csv(
        out / "report.csv",
        ["connected", "spectral_gap", "c1", "c2", "lambda"],
        [[rep.connected, rep.spectral_gap,
          cert.c1 if cert else "", cert.c2 if cert else "", cert.lam if cert else ""]],
        written,
    )
    stride = int(sc.analysis.get("record_stride", 1))
    _, ens = _simulate(sc, threads, record_stride=stride)
    if not rep.connected:
        notes.append("flow graph is disconnected: centered process is not ergodic")
        div = component_divergence(ens.paths, ens.times, rep.components)
        _write_csv(out / "divergence.csv", ["time", "var_group_gap"],
                   list(zip(div.times.tolist(), div.variance.tolist())), written)
        _write_csv(out / "divergence_fit.csv", ["slope", "intercept", "r_squared"],
                   [[div.slope, div.intercept, div.r_squared]], written)
        return
    burn_in = float(sc.analysis.get("burn_in", 10.0 / rep.spectral_gap))
    functionals = [indicator_functional(0, 0.0),
                   truncated_square_functional(float(sc.analysis.get("quadratic_cap", 100.0)))]
    if rep.stationary_cov is not None:
        _write_csv(out / "stationary_cov.csv", [f"b{i + 1}" for i in range(sc.params.n)],
                   rep.stationary_cov.tolist(), written)
        rows = []
        yc = centered_paths(ens)
        for f in functionals:
            res = ergodic_check(yc, ens.times, rep.stationary_mean, rep.stationary_cov, f, burn_in)
            rows.append([res.functional, res.time_average, res.stationary_value, res.abs_error])
        _write_csv(out / "ergodic.csv", ["functional", "time_average", "stationary_value", "abs_error"],
                   rows, written)
    else:
        notes.append("state-dependent flows: stationary law is not Gaussian, no closed-form covariance")


RUNNERS = {
    "policy": _run_policy,
    "simulate": _run_simulate,
    "defaults": _run_defaults,
    "sweep": _run_sweep,
    "stability": _run_stability,
}


def run(command: str, scenario: Scenario, out_dir: str | Path, threads: int = 1) -> RunManifest:
    """Execute one subcommand and write its CSVs plus ``manifest.json``."""
    if command not in RUNNERS:
        raise ValidationError(f"unknown command {command!r}", "command")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    written: list = []
    notes: list = []
    RUNNERS[command](scenario, out, max(1, threads), written, notes)
    manifest = RunManifest(
        command=command,
        scenario_hash=scenario.content_hash,
        base_seed=scenario.config.base_seed,
        tool_version=__version__,
        outputs=sorted(written),
        duration_s=round(time.perf_counter() - start, 3),
        scenario_source=scenario.source,
        notes=notes,
    )
    _write_json_atomic(out / "manifest.json", asdict(manifest))
    return manifest


def reproduce_figure(fig: str, out_dir: str | Path, threads: int = 1) -> RunManifest:
    """Write the data behind one reference figure, one subdirectory per panel."""
    if fig not in FIGURES:
        raise ValidationError(f"unknown figure {fig!r}; choose from {', '.join(FIGURES)}", "figure")
    out = Path(out_dir)
    start = time.perf_counter()
    written, hashes = [], []
    for label, doc, cmd in recipe_documents(fig):
        sc = scenario_from_dict(doc, source=f"recipe:{fig}:{label}")
        m = run(cmd, sc, out / label, threads)
        written.extend(m.outputs)
        hashes.append(sc.content_hash)
        _write_json_atomic(out / label / "scenario.json", doc)
    manifest = RunManifest(
        command=f"figure {fig}",
        scenario_hash=",".join(hashes),
        base_seed=1,
        tool_version=__version__,
        outputs=sorted(written),
        duration_s=round(time.perf_counter() - start, 3),
        scenario_source=f"recipe:{fig}",
    )
    _write_json_atomic(out / "manifest.json", asdict(manifest))
    return manifest


def _threads(arg: int | None) -> int:
    if arg is None:
        env = os.environ.get("SYSRISK_THREADS")
        arg = int(env) if env else 1
    return os.cpu_count() or 1 if arg == 0 else arg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sysrisk", description="Systemic-risk scenario runner")
    parser.add_argument("command", choices=COMMANDS + ("figure",))
    parser.add_argument("--scenario", help="scenario JSON file")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, help="override simulation.base_seed")
    parser.add_argument("--threads", type=int, help="worker threads, 0 = auto (never changes results)")
    parser.add_argument("--figure", help="figure id for the figure command")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        threads = _threads(args.threads)
        if args.command == "figure":
            if not args.figure:
                raise ValidationError("--figure is required", "figure")
            manifest = reproduce_figure(args.figure, args.out, threads)
        else:
            if not args.scenario:
                raise ValidationError("--scenario is required", "scenario")
            sc = parse_scenario(args.scenario)
            if args.seed is not None:
                sc = replace(sc, config=sc.config.with_(base_seed=args.seed))
            manifest = run(args.command, sc, args.out, threads)
    except (NumericalError, FactorizationError, JacobiError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for note in manifest.notes or []:
        print(f"note: {note}", file=sys.stderr)
    print(f"wrote {len(manifest.outputs)} files to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
