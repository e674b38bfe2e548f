"""Bundled scenarios behind the reference figures.

Randomized bank parameters use ``PARAM_SEED`` so every run draws the same
mu_i, sigma_i. Each recipe is a list of (label, scenario document, command).
"""

from __future__ import annotations

import copy

PARAM_SEED = 20240501

EXAMPLE_FLOWS = {"kind": "block", "value": 0.5, "blocks": [[0, 10, 10.0]]}


def _uniform_banks(n):
    return {"n": n, "uniform": [0.1, 0.2], "param_seed": PARAM_SEED}


def _identical_banks(n):
    return {"n": n, "mu": 0.1, "sigma": 0.1}


def _doc(banks, corr=None, flows=None, sim=None, rate=None, analysis=None):
    doc = {
        "banks": banks,
        "correlation": corr or {"kind": "independent"},
        "flows": flows or {"kind": "zero"},
        "simulation": {"T": 1.0, "n_steps": 1000, "n_paths": 1, "y0_scalar": 0.0,
                       "default_threshold": -1.0, "base_seed": 1},
        "rate": rate or {"fixed": 0.0},
    }
    if sim:
        doc["simulation"].update(sim)
    if analysis:
        doc["analysis"] = analysis
    return doc


def _one_factor(rho):
    return {"kind": "one_factor", "rho_pair": rho}


LAMBDA_GRID = [round(0.25 * k, 2) for k in range(0, 241)]


def figure_recipe(fig: str):
    if fig == "fig1":
        return [
            (f"r={r:g}", _doc(_uniform_banks(30), rate={"fixed": r}), "simulate")
            for r in (0.0, 0.12, 0.20)
        ]
    if fig == "fig2":
        return [("r=0", _doc(_uniform_banks(30), flows=EXAMPLE_FLOWS), "simulate")]
    if fig == "fig3":
        return [("r=0.08", _doc(_uniform_banks(30), _one_factor(0.5), EXAMPLE_FLOWS,
                                rate={"fixed": 0.08}), "simulate")]
    if fig == "fig4":
        return [("defaults", _doc(_uniform_banks(100), sim={"n_steps": 100, "n_paths": 1000},
                                  analysis={"r_values": [0.0, 0.05, 0.08]}), "defaults")]
    if fig in ("fig5", "fig6"):
        out = []
        for r, rho in ((0.0, 0.0), (0.0, 0.5), (0.03, 0.3), (0.05, 0.3)):
            out.append((f"r={r:g}_rho={rho:g}",
                        _doc(_identical_banks(100), _one_factor(rho), rate={"fixed": r},
                             sim={"n_paths": 1000}), "defaults"))
        return out
    if fig == "fig7":
        rhos = [round(0.1 * k, 1) for k in range(11)]
        return [
            (f"r={r:g}", _doc(_identical_banks(100), rate={"fixed": r}, sim={"n_paths": 5000},
                              analysis={"sweep": {"axis": "rho_pair", "values": rhos}}), "sweep")
            for r in (0.0, 0.03, 0.05)
        ]
    if fig == "fig8":
        return [
            (f"r={r:g}", _doc(_identical_banks(100), _one_factor(0.5), {"kind": "constant", "value": 1.0},
                              rate={"fixed": r}, sim={"n_paths": 1000},
                              analysis={"sweep": {"axis": "c_scale", "values": [0.0, 0.5, 1.0]}}), "sweep")
            for r in (0.0, 0.03)
        ]
    if fig == "fig9":
        return [("policy", _doc(_identical_banks(30), rate={"lambda": 0.0},
                                analysis={"lambda_grid": LAMBDA_GRID}), "policy")]
    if fig == "fig10":
        return [("policy", _doc(_uniform_banks(30), rate={"lambda": 0.0},
                                analysis={"lambda_grid": LAMBDA_GRID}), "policy")]
    if fig == "fig11":
        return [("policy", _doc(_uniform_banks(30), _one_factor(0.8), rate={"lambda": 0.0},
                                analysis={"lambda_grid": LAMBDA_GRID}), "policy")]
    raise KeyError(fig)


FIGURES = tuple(f"fig{k}" for k in range(1, 12))


def recipe_documents(fig: str):
    return [(label, copy.deepcopy(doc), cmd) for label, doc, cmd in figure_recipe(fig)]
