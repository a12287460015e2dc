"""Experiment runner: `domlab <scenario> --config <path> [--out <dir>] [--seed <u64>]`.

Each run writes `report.json` (deterministic for a fixed config and seed),
scenario CSVs, PNG figures (unless `figures = off`), and a `timing.txt`
sidecar holding the wall clock (kept out of report.json so that re-runs are
byte-identical).  `DOMLAB_THREADS` caps worker threads; results do not depend
on the worker count.

Exit codes: 0 success, 2 configuration error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, plots
from .cocycle import domination_fit, lyapunov_spectrum, oseledets_splitting
from .config import (SCENARIOS, ExperimentConfig, load_config,
                     parse_config_text, validate)
from .dynamics import DiffeoSpec, make_map
from .entropy import (GridPartition, entropy_rate, pesin_gap, rate_bound_check,
                      support_multiplicities)
from .errors import ConfigurationError, DomlabError, NumericalError
from .graphs import (chart_at, iterate_transform, jacobian_ratio_check,
                     make_graph)
from .measures import (EmpiricalMeasure, Lebesgue, TestFunctionFamily,
                       basin_distances, empirical_measure, srb_like_score)
from .properties import run_property_suite
from .rng import derive_seed
from .sampling import kronecker_sequence, lebesgue_grid


def workers_from_env() -> int:
    try:
        return max(1, int(os.environ.get("DOMLAB_THREADS", "1")))
    except ValueError:
        return 1


def parse_mu(spec: str, diffeo: DiffeoSpec):
    """Measure grammar: lebesgue | dirac:X,Y[,Z] | orbit:X,Y[,Z]:N."""
    spec = spec.strip()
    if spec == "lebesgue":
        return Lebesgue(diffeo.dimension)
    if spec.startswith("dirac:"):
        coords = [float(t) for t in spec[len("dirac:"):].split(",")]
        return EmpiricalMeasure.dirac(coords)
    if spec.startswith("orbit:"):
        body = spec[len("orbit:"):]
        coords_str, n_str = body.rsplit(":", 1)
        coords = [float(t) for t in coords_str.split(",")]
        return empirical_measure(diffeo, np.array(coords), int(n_str))
    raise ConfigurationError(f"cannot parse measure spec {spec!r}")


# --------------------------------------------------------------------------
# Output helpers
# --------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def _content_hash(echo: dict) -> str:
    blob = json.dumps(_jsonable(echo), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


# --------------------------------------------------------------------------
# Scenario implementations
# --------------------------------------------------------------------------

def _splitting_for(cfg: ExperimentConfig, diffeo: DiffeoSpec, dim_f: int,
                   warnings: list[str]):
    anchors = kronecker_sequence(8, diffeo.dimension)
    try:
        return oseledets_splitting(diffeo, anchors, dim_F=dim_f)
    except DomlabError as exc:
        warnings.append(f"splitting not resolved ({exc}); using psi-less metric")
        return None


def _run_lyapunov(cfg, diffeo, out, warnings):
    k = cfg.knobs
    x0 = np.array(k["x0"])
    rep = lyapunov_spectrum(diffeo, x0, k["n"], k["reorth_every"], k["warmup"])
    checkpoints = np.unique(np.geomspace(8, k["n"], k["checkpoints"]).astype(int))
    rows, series = [], []
    for n in checkpoints:
        r = lyapunov_spectrum(diffeo, x0, int(n), k["reorth_every"], k["warmup"])
        series.append(r.exponents)
        rows.append([int(n), *r.exponents])
    write_csv(out / "lyapunov_convergence.csv",
              ["n"] + [f"chi_{i + 1}" for i in range(diffeo.dimension)], rows)
    if cfg.figures:
        plots.lyapunov_convergence(checkpoints, series, rep.exponents,
                                   out / "lyapunov.png")
    return {"exponents": rep.exponents, "n": rep.n_iterations,
            "warmup": rep.warmup, "sum": float(rep.exponents.sum()),
            "base_point": rep.base_point}


def _run_dominate(cfg, diffeo, out, warnings):
    k = cfg.knobs
    pts = kronecker_sequence(k["sample_points"], diffeo.dimension)
    n_push = k["n_push"] or None
    splitting = oseledets_splitting(diffeo, pts, n_push=n_push, dim_F=k["dim_f"])
    fit = domination_fit(diffeo, splitting, n_max=k["n_max"])
    ns = np.arange(1, k["n_max"] + 1)
    intercept = float(np.log(fit.C))
    write_csv(out / "domination.csv", ["n", "log_product_worst", "fit"],
              [[int(n), lp, fit.slope * n + intercept]
               for n, lp in zip(ns, fit.log_products)])
    if cfg.figures:
        plots.domination_fit(ns, fit.log_products, fit.slope, intercept,
                             out / "domination.png")
    if not fit.dominated:
        warnings.append("no domination detected")
    return {"C": fit.C, "lambda": fit.lam, "slope": fit.slope,
            "slope_upper95": fit.slope_upper95, "dominated": fit.dominated,
            "message": fit.message,
            "equivariance_residual": splitting.equivariance_residual}


def _entropy_sample(cfg, diffeo, mu, samples):
    if isinstance(mu, Lebesgue):
        return kronecker_sequence(samples, diffeo.dimension), None
    return support_multiplicities(mu)


def _run_entropy(cfg, diffeo, out, warnings):
    k = cfg.knobs
    mu = parse_mu(k["mu"], diffeo)
    pts, mult = _entropy_sample(cfg, diffeo, mu, k["samples"])
    part = GridPartition(k["k_axis"], diffeo.dimension)
    rep = entropy_rate(diffeo, pts, part, k["q_max"], multiplicities=mult,
                       miller_madow=k["miller_madow"], strict=k["strict"],
                       exact_support=mult is not None)
    rows = [[q, rep.H[q], rep.H[q] / q if q else 0.0, int(rep.distinct[q]),
             rep.samples, bool(rep.bias_flags[q])]
            for q in range(k["q_max"] + 1)]
    write_csv(out / "entropy.csv",
              ["q", "H", "H_over_q", "distinct_words", "samples", "bias_flag"],
              rows)
    if any(rep.bias_flags):
        warnings.append("entropy undersampling flags set for some q")
    if cfg.figures:
        plots.entropy_growth(list(range(k["q_max"] + 1)), rep.H, rep.h_window,
                             rep.window_q, out / "entropy.png")
    return {"h_plugin_ratio": rep.h_plugin, "h_window": rep.h_window,
            "window_q": rep.window_q, "H": rep.H,
            "distinct": rep.distinct, "bias_flags": rep.bias_flags,
            "samples": rep.samples, "miller_madow": rep.miller_madow}


def _run_pesin_gap(cfg, diffeo, out, warnings):
    k = cfg.knobs
    mu = parse_mu(k["mu"], diffeo)
    anchors = kronecker_sequence(8, diffeo.dimension)
    splitting = oseledets_splitting(diffeo, anchors, dim_F=k["dim_f"])
    rep = pesin_gap(diffeo, splitting, mu,
                    {"k_axis": k["k_axis"], "q_max": k["q_max"],
                     "entropy_samples": k["samples"],
                     "chi_points": k["chi_points"], "chi_n": k["chi_n"],
                     "miller_madow": k["miller_madow"]})
    write_csv(out / "pesin_gap.csv", ["quantity", "value"],
              [["h_estimate", rep.h_estimate], ["sum_chi_F", rep.sum_chi_F],
               ["sum_chi_plus", rep.sum_chi_plus],
               ["gap_theorem", rep.gap_theorem],
               ["ruelle_residual", rep.ruelle_residual]])
    if cfg.figures:
        plots.pesin_gap_bars(rep, out / "pesin_gap.png")
    if rep.gap_theorem < 0:
        warnings.append("entropy lower bound violated: candidate non-SRB-like measure")
    return {"h_estimate": rep.h_estimate, "sum_chi_F": rep.sum_chi_F,
            "sum_chi_plus": rep.sum_chi_plus, "gap_theorem": rep.gap_theorem,
            "ruelle_residual": rep.ruelle_residual,
            "diagnostics": rep.diagnostics}


def _run_srb_like(cfg, diffeo, out, warnings):
    k = cfg.knobs
    mu = parse_mu(k["mu"], diffeo)
    family = TestFunctionFamily(k["n_trunc"], diffeo.dimension)
    splitting = (_splitting_for(cfg, diffeo, k["dim_f"], warnings)
                 if k["use_psi"] else None)
    sample = lebesgue_grid(k["grid"], diffeo.dimension)
    score = srb_like_score(diffeo, mu, k["eps"], k["n_schedule"], sample,
                           family, splitting, workers=workers_from_env())
    write_csv(out / "srb_like.csv", ["n", "fraction"],
              list(zip(score.n_schedule, score.fractions)))
    if cfg.figures:
        plots.basin_fractions(score.n_schedule, score.fractions, score.eps,
                              score.floor, out / "srb_like.png")
    return {"fractions": score.fractions, "n_schedule": score.n_schedule,
            "eps": score.eps, "floor": score.floor,
            "candidate": score.candidate, "label": score.label,
            "psi_term": splitting is not None}


def _run_rate_bound(cfg, diffeo, out, warnings):
    k = cfg.knobs
    mu = parse_mu(k["mu"], diffeo)
    family = TestFunctionFamily(k["n_trunc"], diffeo.dimension)
    anchors = kronecker_sequence(8, diffeo.dimension)
    splitting = oseledets_splitting(diffeo, anchors, dim_F=k["dim_f"])
    sample = lebesgue_grid(k["grid"], diffeo.dimension)
    rep = rate_bound_check(diffeo, splitting, mu, k["eps_schedule"],
                           k["n_max"], sample, family,
                           tolerance=k["tolerance"],
                           estimator_params={"entropy_samples": k["samples"]},
                           workers=workers_from_env())
    rows = []
    for i, eps in enumerate(rep.eps_schedule):
        for j, n in enumerate(rep.n_schedule):
            rows.append([eps, int(n), rep.fractions[i, j], rep.rates[i, j]])
    write_csv(out / "rate_bound.csv", ["eps", "n", "fraction", "rate"], rows)
    if cfg.figures:
        plots.rate_bound(rep.n_schedule, rep.rates, rep.eps_schedule, rep.rhs,
                         rep.tolerance, out / "rate_bound.png")
    if rep.zero_fraction_flagged:
        warnings.append("some C_n(eps) fractions hit 0: rate reported as -inf")
    if not rep.satisfied:
        warnings.append("rate bound violated")
    return {"rhs": rep.rhs, "h_estimate": rep.h_estimate,
            "psi_integral": rep.psi_integral, "satisfied": rep.satisfied,
            "tolerance": rep.tolerance, "n_schedule": rep.n_schedule,
            "eps_schedule": rep.eps_schedule, "fractions": rep.fractions,
            "rates": [[(r if np.isfinite(r) else None) for r in row]
                      for row in rep.rates]}


def _run_basin_sweep(cfg, diffeo, out, warnings):
    k = cfg.knobs
    mu = parse_mu(k["mu"], diffeo)
    family = TestFunctionFamily(k["n_trunc"], diffeo.dimension)
    splitting = (_splitting_for(cfg, diffeo, k["dim_f"], warnings)
                 if k["use_psi"] else None)
    sample = lebesgue_grid(k["grid"], diffeo.dimension)
    dists = basin_distances(diffeo, mu, family, sample, k["n_schedule"],
                            splitting, workers=workers_from_env())
    coord_names = ["x", "y", "z"][: diffeo.dimension]
    rows = []
    for j, n in enumerate(k["n_schedule"]):
        for i, p in enumerate(sample):
            rows.append([*p, int(n), k["eps"], dists[j, i],
                         bool(dists[j, i] < k["eps"])])
    write_csv(out / "basin_sweep.csv",
              coord_names + ["n", "eps", "dist_value", "in_basin"], rows)
    fractions = [float((row < k["eps"]).mean()) for row in dists]
    if cfg.figures and diffeo.dimension == 2:
        plots.basin_heatmap(dists[-1], k["eps"], k["grid"],
                            out / "basin_sweep.png")
    return {"fractions": fractions, "n_schedule": k["n_schedule"],
            "eps": k["eps"], "psi_term": splitting is not None}


def _run_graph_transform(cfg, diffeo, out, warnings):
    k = cfg.knobs
    x0 = np.array(k["x0"])
    splitting = oseledets_splitting(diffeo, x0[None], dim_F=k["dim_f"])
    chart = chart_at(splitting, x0, k["radius"])
    recipe = {"kind": k["recipe"], "slope": k["slope"], "a": k["bilinear_a"],
              "target_disp": k["target_disp"], "terms": k["terms"],
              "seed": derive_seed(cfg.seed, f"graph-{k['graph_seed']}")}
    graph = make_graph(chart, recipe, resolution=k["resolution"])
    results, rep = iterate_transform(diffeo, graph, k["steps"], splitting)
    write_csv(out / "dispersion_trace.csv", ["step", "disp", "bound_rhs"],
              [[0, rep.dispersions[0], ""]] +
              [[i + 1, d, r] for i, (d, r) in
               enumerate(zip(rep.dispersions[1:], rep.bound_rhs))])
    final = results[-1][0]
    v1g_v2g = np.stack(np.meshgrid(*final.axes, indexing="ij"), axis=-1)
    flat = v1g_v2g.reshape(-1, v1g_v2g.shape[-1])
    gvals = final.values.reshape(-1, final.chart.dim_E)
    core = final.core_mask.reshape(-1)
    write_csv(out / "graph_nodes.csv",
              [f"v{i + 1}" for i in range(flat.shape[1])] +
              [f"G{i + 1}" for i in range(gvals.shape[1])] + ["core"],
              [[*flat[i], *gvals[i], bool(core[i])] for i in range(len(flat))])
    ratio = jacobian_ratio_check(diffeo, graph, min(k["steps"], 6), splitting,
                                 eps=k["ratio_eps"])
    if not all(rep.bound_satisfied):
        warnings.append("dispersion recursion bound violated at some step")
    if cfg.figures:
        plots.dispersion_trace(list(range(len(rep.dispersions))),
                               rep.dispersions, rep.bound_rhs,
                               out / "graph_transform.png")
    return {"dispersions": rep.dispersions, "bound_rhs": rep.bound_rhs,
            "bound_satisfied": rep.bound_satisfied,
            "first_recontraction": rep.first_recontraction,
            "c_prime": rep.c_prime, "n_zero": rep.n_zero,
            "ratio_check": {"steps": ratio.steps, "ratio_min": ratio.ratio_min,
                            "ratio_max": ratio.ratio_max, "eps": ratio.eps,
                            "n_zero": ratio.n_zero, "holds": ratio.holds}}


def _run_property_suite(cfg, diffeo, out, warnings):
    results = run_property_suite()
    rows = [[name, len(findings), "pass" if not findings else "FAIL"]
            for name, findings in results.items()]
    write_csv(out / "property_suite.csv", ["check", "findings", "status"], rows)
    if cfg.figures:
        plots.property_grid(results, out / "property_suite.png")
    failed = {name: f for name, f in results.items() if f}
    if failed:
        raise NumericalError(f"property suite violations: {failed}")
    return {"checks": {name: f for name, f in results.items()},
            "all_passed": True}


_RUNNERS = {
    "lyapunov": _run_lyapunov,
    "dominate": _run_dominate,
    "entropy": _run_entropy,
    "pesin-gap": _run_pesin_gap,
    "srb-like": _run_srb_like,
    "rate-bound": _run_rate_bound,
    "basin-sweep": _run_basin_sweep,
    "graph-transform": _run_graph_transform,
    "property-suite": _run_property_suite,
}


def run(cfg: ExperimentConfig, out_dir: str | Path) -> dict:
    """Execute a validated config; writes report.json and scenario outputs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    diffeo = make_map(cfg.map_name, cfg.map_params)
    echo = {"scenario": cfg.scenario, "map": cfg.map_name,
            "map_params": diffeo.params, "seed": cfg.seed,
            "figures": cfg.figures, "knobs": cfg.knobs,
            "version": __version__}
    warnings: list[str] = []
    t0 = time.perf_counter()
    payload = _RUNNERS[cfg.scenario](cfg, diffeo, out, warnings)
    wall = time.perf_counter() - t0
    report = {"config": echo, "content_hash": _content_hash(echo),
              "payload": _jsonable(payload), "warnings": warnings}
    (out / "report.json").write_text(
        json.dumps(report, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    (out / "timing.txt").write_text(f"wall_clock_s = {wall:.3f}\n",
                                    encoding="utf-8")
    return report


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="domlab",
        description="Dominated-splitting laboratory: Lyapunov spectra, weak* "
                    "basins, entropy diagnostics, and Hadamard graph transforms "
                    "on torus diffeomorphisms.")
    parser.add_argument("scenario", choices=list(SCENARIOS) + ["validate"],
                        help="scenario to run, or 'validate' to check a config")
    parser.add_argument("--config", required=True, help="path to the config file")
    parser.add_argument("--out", default="domlab_out", help="output directory")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed (u64)")
    args = parser.parse_args(argv)

    if args.scenario == "validate":
        with open(args.config, "r", encoding="utf-8") as fh:
            top, sections = parse_config_text(fh.read())
        findings = validate(top, sections)
        for f in findings:
            print(f"finding: {f}")
        print(f"{len(findings)} finding(s)")
        return 0

    try:
        cfg = load_config(args.config, scenario_override=args.scenario)
        if args.seed is not None:
            cfg.seed = args.seed
        report = run(cfg, args.out)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except DomlabError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    print(json.dumps({"scenario": cfg.scenario,
                      "out": str(args.out),
                      "warnings": report["warnings"]}, indent=1))
    return 0


if __name__ == "__main__":
    sys.exit(main())
