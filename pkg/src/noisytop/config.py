"""Experiment configuration: YAML loading and pre-run validation.

Every numeric knob is checked against the owning operation's preconditions
before any compute starts, and the model parameters (sigmas, eps, horizons)
have no defaults — configs must state them explicitly so runs are
self-describing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, NamedTuple

import yaml

__all__ = [
    "EXPERIMENT_NAMES",
    "ConfigError",
    "Violation",
    "ExperimentConfig",
    "load_config",
    "validate",
]

EXPERIMENT_NAMES = (
    "flow",
    "avg-table",
    "full-sde",
    "fast-sde",
    "limit-uv",
    "hk",
    "qv-study",
    "convergence-study",
    "invariant-3d",
    "invariant-uv",
    "two-estimators",
    "decomposition",
    "symmetry",
    "diagonal",
    "report",
)


class ConfigError(ValueError):
    """A config failed validation; carries the individual violations."""

    def __init__(self, violations: list["Violation"]):
        self.violations = violations
        super().__init__("; ".join(str(v) for v in violations))


class Violation(NamedTuple):
    field: str
    message: str

    def __str__(self) -> str:
        return f"{self.field}: {self.message}"


@dataclass
class ExperimentConfig:
    experiment: str
    params: dict = field(default_factory=dict)
    output_dir: str = "out"


def load_config(path) -> ExperimentConfig:
    """Parse a YAML config file into an ExperimentConfig (no validation)."""
    raw = yaml.safe_load(Path(path).read_text())
    if not isinstance(raw, dict):
        raise ConfigError([Violation("<root>", "config must be a mapping")])
    problems = []
    if "experiment" not in raw:
        problems.append(Violation("experiment", "required key missing"))
    extra = set(raw) - {"experiment", "params", "output_dir"}
    if extra:
        problems.append(Violation(", ".join(sorted(extra)), "unknown top-level key"))
    params = raw.get("params", {})
    if params is None:
        params = {}
    if not isinstance(params, dict):
        problems.append(Violation("params", "must be a mapping"))
        params = {}
    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(
        experiment=str(raw["experiment"]),
        params=params,
        output_dir=str(raw.get("output_dir", "out")),
    )


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


def _is_real(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _check_positive(out, params, key, label=None):
    label = label or key
    if key not in params:
        out.append(Violation(label, "required (no default)"))
    elif not _is_real(params[key]) or params[key] <= 0:
        out.append(Violation(label, f"must be a positive real (got {params[key]!r})"))


def _check_sigmas(out, params):
    for key in ("sigma1", "sigma2"):
        if key not in params:
            out.append(Violation(key, "required (no default): noise amplitudes must be explicit"))
        elif not _is_real(params[key]) or params[key] <= 0:
            out.append(
                Violation(key, f"must be strictly positive (standing assumption; got {params[key]!r})")
            )


def _check_eps(out, params, allow_zero: bool, key="eps"):
    if key not in params:
        out.append(Violation(key, "required (no default)"))
        return None
    val = params[key]
    if not _is_real(val) or val < 0 or (val == 0 and not allow_zero):
        bound = ">= 0" if allow_zero else "> 0"
        out.append(Violation(key, f"must be a real {bound} (got {val!r})"))
        return None
    return val


def _check_xi0(out, params, key="xi0"):
    val = params.get(key)
    if val is None:
        out.append(Violation(key, "required: initial state [x, y, z]"))
    elif not (isinstance(val, (list, tuple)) and len(val) == 3 and all(_is_real(c) for c in val)):
        out.append(Violation(key, f"must be three finite reals (got {val!r})"))


def _check_int(out, params, key, minimum, default_ok=True):
    if key not in params:
        if not default_ok:
            out.append(Violation(key, "required"))
        return
    val = params[key]
    if not isinstance(val, int) or isinstance(val, bool) or val < minimum:
        out.append(Violation(key, f"must be an integer >= {minimum} (got {val!r})"))


def _check_sweep(out, params, eps_allow_zero=False):
    sweep = params.get("sweep")
    if not isinstance(sweep, list) or not sweep:
        out.append(Violation("sweep", "required: a list of {eps, dt} records"))
        return
    for i, entry in enumerate(sweep):
        if not isinstance(entry, dict):
            out.append(Violation(f"sweep[{i}]", "must be a mapping with eps and dt"))
            continue
        eps = entry.get("eps")
        if not _is_real(eps) or eps < 0 or (eps == 0 and not eps_allow_zero):
            bound = ">= 0" if eps_allow_zero else "> 0"
            out.append(Violation(f"sweep[{i}].eps", f"must be a real {bound} (got {eps!r})"))
        _check_positive(out, entry, "dt", label=f"sweep[{i}].dt")


def _check_window(out, params):
    win = params.get("window")
    if not isinstance(win, dict):
        out.append(Violation("window", "required: {u_center, v_center, half_width}"))
        return
    for key in ("u_center", "v_center", "half_width"):
        _check_positive(out, win, key, label=f"window.{key}")
    if all(_is_real(win.get(k)) for k in ("u_center", "v_center", "half_width")):
        u, v, hw = win["u_center"], win["v_center"], win["half_width"]
        if u - hw <= 0 or v - hw <= 0:
            out.append(Violation("window", "must sit inside the open positive quadrant"))
        if abs(u - v) <= 2 * hw:
            out.append(Violation("window", "must not touch the diagonal u = v"))


def _validate_flow(out, p):
    _check_xi0(out, p)
    _check_positive(out, p, "T")
    _check_positive(out, p, "dt")
    _check_int(out, p, "store_every", 1)


def _validate_avg_table(out, p):
    _check_int(out, p, "n_r", 2, default_ok=False)


def _validate_full_sde(out, p, fast: bool):
    _check_xi0(out, p)
    _check_sigmas(out, p)
    eps = _check_eps(out, p, allow_zero=not fast)
    _check_positive(out, p, "T")
    _check_positive(out, p, "dt")
    _check_int(out, p, "n_paths", 1)
    _check_int(out, p, "store_every", 1)
    if fast and eps and _is_real(p.get("dt")) and p["dt"] > 0.1 * eps:
        out.append(
            Violation("dt", f"must satisfy dt <= 0.1*eps for the sped-up equation (dt={p['dt']!r}, eps={eps!r})")
        )


def _validate_limit_uv(out, p):
    _check_sigmas(out, p)
    _check_positive(out, p, "u0")
    _check_positive(out, p, "v0")
    _check_positive(out, p, "T")
    _check_positive(out, p, "dt")
    _check_int(out, p, "n_paths", 1)
    _check_int(out, p, "store_every", 1)


def _validate_hk(out, p):
    _check_sigmas(out, p)
    _check_positive(out, p, "h0")
    _check_positive(out, p, "k0")
    _check_positive(out, p, "T")
    _check_positive(out, p, "dt")
    _check_int(out, p, "n_paths", 1)
    _check_int(out, p, "store_every", 1)
    if _is_real(p.get("h0")) and _is_real(p.get("k0")) and p["h0"] == p["k0"]:
        out.append(Violation("h0", "h0 = k0 starts on the diagonal where the drift is singular"))


def _validate_qv_study(out, p):
    _check_xi0(out, p)
    _check_sigmas(out, p)
    _check_positive(out, p, "T")
    _check_sweep(out, p)
    _check_positive(out, p, "limit_dt")
    _check_int(out, p, "n_paths", 1)


def _validate_convergence(out, p):
    _check_xi0(out, p)
    _check_sigmas(out, p)
    _check_positive(out, p, "T")
    _check_sweep(out, p)
    _check_int(out, p, "n_paths", 1)


def _validate_invariant_3d(out, p):
    _validate_full_sde(out, p, fast=False)
    _check_int(out, p, "burn_in_steps", 0)


def _validate_invariant_uv(out, p):
    _validate_limit_uv(out, p)
    deltas = p.get("delta_list")
    if deltas is not None and (
        not isinstance(deltas, list) or not all(_is_real(d) and d > 0 for d in deltas)
    ):
        out.append(Violation("delta_list", "must be a list of positive reals"))
    edges = p.get("band_edges")
    if edges is not None:
        if not isinstance(edges, list) or len(edges) < 2 or not all(_is_real(e) for e in edges):
            out.append(Violation("band_edges", "must be a list of at least two reals"))
        elif any(b <= a for a, b in zip(edges, edges[1:])):
            out.append(Violation("band_edges", "must be strictly increasing"))


def _validate_two_estimators(out, p):
    _check_sigmas(out, p)
    _check_positive(out, p, "T")
    _check_positive(out, p, "dt")
    _check_int(out, p, "n_paths", 1)
    for key in ("u0", "v0"):
        if key in p:
            _check_positive(out, p, key)


def _validate_decomposition(out, p):
    _check_xi0(out, p)
    _check_sigmas(out, p)
    eps_list = p.get("eps_list")
    if not isinstance(eps_list, list) or not eps_list or not all(
        _is_real(e) and e > 0 for e in eps_list
    ):
        out.append(Violation("eps_list", "required: a list of positive reals"))
    _check_positive(out, p, "T")
    _check_positive(out, p, "dt")
    _check_int(out, p, "n_paths", 1)
    _check_int(out, p, "store_every", 1)
    _check_window(out, p)


def _validate_symmetry(out, p):
    pairs = p.get("sigma_pairs")
    if not isinstance(pairs, list) or not pairs or not all(
        isinstance(q, list) and len(q) == 2 and all(_is_real(s) and s > 0 for s in q)
        for q in pairs
    ):
        out.append(Violation("sigma_pairs", "required: a list of [sigma1, sigma2] positive pairs"))
    _check_xi0(out, p)
    _check_eps(out, p, allow_zero=False)
    _check_positive(out, p, "T")
    _check_positive(out, p, "dt")
    _check_int(out, p, "n_paths", 1)
    _check_int(out, p, "store_every", 1)


def _validate_diagonal(out, p):
    _validate_limit_uv(out, p)
    deltas = p.get("delta_list")
    if not isinstance(deltas, list) or not deltas or not all(
        _is_real(d) and d > 0 for d in deltas
    ):
        out.append(Violation("delta_list", "required: a list of positive reals"))


def _validate_report(out, p):
    if not isinstance(p.get("scan_dir"), str) or not p.get("scan_dir"):
        out.append(Violation("scan_dir", "required: directory holding completed runs"))


_VALIDATORS = {
    "flow": _validate_flow,
    "avg-table": _validate_avg_table,
    "full-sde": lambda out, p: _validate_full_sde(out, p, fast=False),
    "fast-sde": lambda out, p: _validate_full_sde(out, p, fast=True),
    "limit-uv": _validate_limit_uv,
    "hk": _validate_hk,
    "qv-study": _validate_qv_study,
    "convergence-study": _validate_convergence,
    "invariant-3d": _validate_invariant_3d,
    "invariant-uv": _validate_invariant_uv,
    "two-estimators": _validate_two_estimators,
    "decomposition": _validate_decomposition,
    "symmetry": _validate_symmetry,
    "diagonal": _validate_diagonal,
    "report": _validate_report,
}


def validate(config: ExperimentConfig) -> list[Violation]:
    """Pure validation: the empty list means run() would accept the config."""
    out: list[Violation] = []
    if config.experiment not in EXPERIMENT_NAMES:
        out.append(
            Violation(
                "experiment",
                f"unknown experiment {config.experiment!r}; expected one of {', '.join(EXPERIMENT_NAMES)}",
            )
        )
        return out
    if not isinstance(config.params, dict):
        out.append(Violation("params", "must be a mapping"))
        return out
    if not config.output_dir:
        out.append(Violation("output_dir", "must be a nonempty path"))
    if "seed" in config.params:
        seed = config.params["seed"]
        if not isinstance(seed, int) or isinstance(seed, bool):
            out.append(Violation("seed", f"must be an integer (got {seed!r})"))
    _VALIDATORS[config.experiment](out, config.params)
    return out
