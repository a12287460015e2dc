"""Experiment configuration: flat key=value text with one section per scenario.

Example::

    scenario = pesin-gap
    map = cat
    seed = 42

    [pesin-gap]
    mu = lebesgue
    k_axis = 16
    q_max = 8

Every knob has a documented default; unknown keys are rejected with a
suggestion, so typos never silently fall back to defaults.
"""

from __future__ import annotations

import difflib
from dataclasses import dataclass, field

from .dynamics import catalog_names
from .errors import ConfigurationError

SCENARIOS = ("lyapunov", "dominate", "entropy", "pesin-gap", "srb-like",
             "rate-bound", "graph-transform", "basin-sweep", "property-suite")


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "on", "yes", "1"):
        return True
    if low in ("false", "off", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_int(s: str) -> int:
    return int(s.replace("_", ""))


def _parse_floats(s: str) -> list[float]:
    return [float(tok) for tok in s.split(",") if tok.strip()]


def _parse_ints(s: str) -> list[int]:
    return [_parse_int(tok) for tok in s.split(",") if tok.strip()]


# (type parser, default, description)
GLOBAL_SCHEMA = {
    "scenario": (str, None, "scenario name (may instead be given on the command line)"),
    "map": (str, "cat", "catalog map name"),
    "map_eps": (float, 0.05, "perturbed_cat perturbation size"),
    "map_a": (float, 0.5, "cat3d z-contraction strength"),
    "map_c": (float, 0.05, "cat3d coupling strength"),
    "map_dimension": (_parse_int, 2, "identity map dimension"),
    "seed": (_parse_int, 0, "master 64-bit seed"),
    "figures": (_parse_bool, True, "render PNG figures next to the CSV output"),
}

SCENARIO_SCHEMAS = {
    "lyapunov": {
        "x0": (_parse_floats, [0.1, 0.2], "base point"),
        "n": (_parse_int, 2000, "accumulated QR steps"),
        "reorth_every": (_parse_int, 1, "re-orthonormalization cadence"),
        "warmup": (_parse_int, 100, "discarded alignment steps"),
        "checkpoints": (_parse_int, 24, "running-estimate checkpoints in the CSV"),
    },
    "dominate": {
        "dim_f": (_parse_int, 1, "dimension of the dominating bundle"),
        "n_max": (_parse_int, 30, "largest cocycle power in the fit"),
        "sample_points": (_parse_int, 256, "uniform sample size for the worst case"),
        "n_push": (_parse_int, 0, "frame-estimation push length (0 = auto)"),
    },
    "entropy": {
        "mu": (str, "lebesgue", "measure: lebesgue | dirac:X,Y | orbit:X,Y:N"),
        "k_axis": (_parse_int, 16, "partition cells per axis"),
        "q_max": (_parse_int, 8, "deepest refinement"),
        "samples": (_parse_int, 1_000_000, "support sample size for Lebesgue"),
        "miller_madow": (_parse_bool, False, "bias-correct the plug-in entropy"),
        "strict": (_parse_bool, True, "escalate >50% undersampling to an error"),
    },
    "pesin-gap": {
        "mu": (str, "lebesgue", "measure under test"),
        "dim_f": (_parse_int, 1, "dimension of the dominating bundle"),
        "k_axis": (_parse_int, 16, "partition cells per axis"),
        "q_max": (_parse_int, 8, "deepest refinement"),
        "samples": (_parse_int, 1_000_000, "entropy support sample size"),
        "chi_points": (_parse_int, 16, "points for exponent integrals"),
        "chi_n": (_parse_int, 1000, "QR steps per exponent estimate"),
        "miller_madow": (_parse_bool, True, "bias-correct the entropy increments"),
    },
    "srb-like": {
        "mu": (str, "lebesgue", "candidate measure"),
        "eps": (float, 0.05, "weak basin radius"),
        "n_schedule": (_parse_ints, [100, 1000, 10000], "increasing time schedule"),
        "grid": (_parse_int, 64, "Lebesgue sample grid cells per axis"),
        "n_trunc": (_parse_int, 16, "test-function truncation N"),
        "dim_f": (_parse_int, 1, "dominating bundle dimension (psi term)"),
        "use_psi": (_parse_bool, True, "include the psi term of the metric"),
    },
    "rate-bound": {
        "mu": (str, "lebesgue", "measure under test"),
        "eps_schedule": (_parse_floats, [0.1, 0.05], "decreasing radii"),
        "n_max": (_parse_int, 400, "largest n"),
        "grid": (_parse_int, 64, "Lebesgue sample grid cells per axis"),
        "n_trunc": (_parse_int, 16, "test-function truncation N"),
        "tolerance": (float, 0.05, "slack on the rate bound"),
        "dim_f": (_parse_int, 1, "dominating bundle dimension"),
        "samples": (_parse_int, 200_000, "entropy support sample size"),
    },
    "basin-sweep": {
        "mu": (str, "lebesgue", "reference measure"),
        "eps": (float, 0.05, "basin radius"),
        "n_schedule": (_parse_ints, [100, 1000], "snapshot times"),
        "grid": (_parse_int, 64, "Lebesgue sample grid cells per axis"),
        "n_trunc": (_parse_int, 16, "test-function truncation N"),
        "dim_f": (_parse_int, 1, "dominating bundle dimension (psi term)"),
        "use_psi": (_parse_bool, True, "include the psi term of the metric"),
    },
    "graph-transform": {
        "x0": (_parse_floats, [0.2, 0.3], "chart base point"),
        "dim_f": (_parse_int, 1, "dominating bundle dimension"),
        "radius": (float, 0.002, "tangent block radius"),
        "recipe": (str, "banded", "zero | linear | bilinear | banded"),
        "slope": (float, 0.3, "linear recipe slope"),
        "bilinear_a": (float, 2.0, "bilinear recipe coefficient"),
        "target_disp": (float, 0.25, "banded recipe dispersion"),
        "graph_seed": (_parse_int, 1, "banded recipe seed"),
        "terms": (_parse_int, 3, "banded recipe term count"),
        "steps": (_parse_int, 10, "transform iterations"),
        "resolution": (_parse_int, 33, "grid nodes per axis (odd)"),
        "ratio_eps": (float, 0.2, "band for the det-ratio check"),
    },
    "property-suite": {},
}


@dataclass
class ExperimentConfig:
    scenario: str
    map_name: str
    map_params: dict
    seed: int
    figures: bool
    knobs: dict
    raw: dict = field(default_factory=dict)


def _reject_unknown(keys, schema, scope, findings):
    for k in keys:
        if k not in schema:
            hint = difflib.get_close_matches(k, schema.keys(), n=1)
            suffix = f'; did you mean "{hint[0]}"?' if hint else ""
            findings.append(f'unknown key "{k}" in {scope}{suffix}')


def parse_config_text(text: str) -> tuple[dict, dict]:
    """Split config text into (top-level dict, {section: dict})."""
    top: dict = {}
    sections: dict = {}
    current = top
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            current = sections.setdefault(name, {})
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = line.split("=", 1)
        current[key.strip()] = value.strip()
    return top, sections


def validate(top: dict, sections: dict, scenario_override: str | None = None) -> list[str]:
    """Schema and range checks; returns findings (never raises)."""
    findings: list[str] = []
    _reject_unknown(top.keys(), GLOBAL_SCHEMA, "top level", findings)
    scenario = scenario_override or top.get("scenario")
    if scenario is None:
        findings.append("no scenario given (config key or command line)")
    elif scenario not in SCENARIOS:
        hint = difflib.get_close_matches(scenario, SCENARIOS, n=1)
        suffix = f'; did you mean "{hint[0]}"?' if hint else ""
        findings.append(f'unknown scenario "{scenario}"{suffix}')
    if scenario_override and top.get("scenario") not in (None, scenario_override):
        findings.append(
            f'config names scenario "{top["scenario"]}" but the command line '
            f'says "{scenario_override}"')
    map_name = top.get("map", "cat")
    if map_name not in catalog_names():
        hint = difflib.get_close_matches(map_name, catalog_names(), n=1)
        suffix = f'; did you mean "{hint[0]}"?' if hint else ""
        findings.append(f'unknown map "{map_name}"{suffix}')
    for name, body in sections.items():
        if name not in SCENARIO_SCHEMAS:
            hint = difflib.get_close_matches(name, SCENARIO_SCHEMAS.keys(), n=1)
            suffix = f'; did you mean "{hint[0]}"?' if hint else ""
            findings.append(f'unknown section "[{name}]"{suffix}')
            continue
        schema = SCENARIO_SCHEMAS[name]
        _reject_unknown(body.keys(), schema, f"section [{name}]", findings)
        for key, value in body.items():
            if key in schema:
                parser = schema[key][0]
                try:
                    parser(value)
                except ValueError as exc:
                    findings.append(f"[{name}] {key}: {exc}")

    # eps must sit above the metric truncation error bound 2 * 2^{-N}.
    if scenario in ("srb-like", "basin-sweep", "rate-bound"):
        body = sections.get(scenario, {})
        schema = SCENARIO_SCHEMAS[scenario]
        try:
            n_trunc = _parse_int(body.get("n_trunc", str(schema["n_trunc"][1])))
            if scenario == "rate-bound":
                eps_values = (_parse_floats(body["eps_schedule"])
                              if "eps_schedule" in body
                              else list(schema["eps_schedule"][1]))
            else:
                eps_values = [float(body.get("eps", schema["eps"][1]))]
            bound = 2.0 * 2.0 ** (-n_trunc)
            for e in eps_values:
                if e <= bound:
                    findings.append(
                        f"eps {e} below metric truncation error bound {bound:.3e} "
                        f"(raise eps or n_trunc)")
        except ValueError:
            pass
    return findings


def load_config(path: str, scenario_override: str | None = None) -> ExperimentConfig:
    """Parse, validate, and materialize a config file; raises on any finding."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    top, sections = parse_config_text(text)
    findings = validate(top, sections, scenario_override)
    if findings:
        raise ConfigurationError("invalid config:\n  " + "\n  ".join(findings))
    scenario = scenario_override or top["scenario"]
    map_name = top.get("map", "cat")
    params = {}
    if map_name == "perturbed_cat" and "map_eps" in top:
        params["eps"] = float(top["map_eps"])
    if map_name == "cat3d":
        if "map_a" in top:
            params["a"] = float(top["map_a"])
        if "map_c" in top:
            params["c"] = float(top["map_c"])
    if map_name == "identity" and "map_dimension" in top:
        params["dimension"] = _parse_int(top["map_dimension"])
    knobs = {}
    schema = SCENARIO_SCHEMAS[scenario]
    body = sections.get(scenario, {})
    for key, (parser, default, _) in schema.items():
        knobs[key] = parser(body[key]) if key in body else default
    return ExperimentConfig(
        scenario=scenario, map_name=map_name, map_params=params,
        seed=_parse_int(top.get("seed", "0")),
        figures=_parse_bool(top.get("figures", "true")),
        knobs=knobs, raw={"top": top, "sections": sections})
