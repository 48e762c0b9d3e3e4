"""Config-driven experiments producing CSV artifacts plus a run manifest.

Every experiment writes `summary.csv` with exactly the columns
``statistic,value``; richer payloads (trajectories, measure dumps, sweep
tables) are separate files.  Parameter sweeps write one payload file per
swept value plus a combined ``sweep.csv``.  All floats are emitted with 17
significant digits and nothing but the manifest carries a timestamp, so a
rerun with the same config is byte-identical apart from manifest.json.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__, averaging, dynamics, measures, sde
from .config import ConfigError, ExperimentConfig, validate

__all__ = ["RunManifest", "run", "assemble_report"]

# Measure dumps are capped so long runs do not produce multi-GB artifacts;
# the cap subsamples deterministically (every k-th sample, weights rescaled).
_DUMP_CAP = 200_000


@dataclass
class RunManifest:
    experiment: str
    config: dict
    version: str
    wall_clock_seconds: float
    seed: int
    streams: dict
    files: dict

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def _write_csv(outdir: Path, name: str, header: list[str], rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(cell) if not isinstance(cell, str) else cell for cell in row))
    (outdir / name).write_text("\n".join(lines) + "\n")
    return name


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    digest.update(path.read_bytes())
    return digest.hexdigest()


def _params(config: ExperimentConfig) -> dict:
    return config.params


def _noise(p: dict, eps=None) -> sde.NoiseParams:
    return sde.NoiseParams(
        float(p["sigma1"]), float(p["sigma2"]), float(p["eps"] if eps is None else eps)
    )


def _rng(p: dict, offset: int = 0) -> sde.RngSpec:
    return sde.RngSpec(int(p.get("seed", 0)), int(p.get("stream", 0)) + offset)


def _dump_measure(outdir: Path, name: str, m: measures.EmpiricalMeasure) -> str:
    n = len(m)
    if n > _DUMP_CAP:
        idx = np.arange(0, n, int(math.ceil(n / _DUMP_CAP)))
        samples = m.samples[idx]
        weights = m.weights[idx]
        weights = weights / weights.sum()
    else:
        samples, weights = m.samples, m.weights
    coord_names = ["x", "y", "z"] if m.dim == 3 else ["u", "v"]
    header = ["dim", *coord_names, "weight"]
    rows = ([m.dim, *point, w] for point, w in zip(samples, weights))
    return _write_csv(outdir, name, header, rows)


def _summary(outdir: Path, stats: list[tuple[str, object]]) -> str:
    return _write_csv(outdir, "summary.csv", ["statistic", "value"], stats)


# ---------------------------------------------------------------------------
# experiment bodies: each returns (files, streams, stats) and writes payloads
# ---------------------------------------------------------------------------


def _exp_flow(p: dict, outdir: Path):
    traj = dynamics.flow(tuple(p["xi0"]), float(p["T"]), float(p["dt"]), int(p.get("store_every", 1)))
    files = [
        _write_csv(
            outdir,
            "trajectory.csv",
            ["t", "x", "y", "z"],
            ((t, *state) for t, state in zip(traj.times, traj.states)),
        )
    ]
    stats = [
        ("max_phi_defect", traj.meta["max_phi_defect"]),
        ("final_x", traj.states[-1, 0]),
        ("final_y", traj.states[-1, 1]),
        ("final_z", traj.states[-1, 2]),
        ("n_rows", len(traj)),
    ]
    return files, {}, stats


def _exp_avg_table(p: dict, outdir: Path):
    n_r = int(p["n_r"])
    grid = np.linspace(0.0, 1.0, n_r)
    lam = averaging.lambda_fn(grid)
    files = [_write_csv(outdir, "avg_table.csv", ["r", "lambda"], zip(grid, lam))]
    stats = [
        ("lambda_at_0", lam[0]),
        ("lambda_at_1", lam[-1]),
        ("n_rows", n_r),
    ]
    return files, {}, stats


def _eps_tag(eps: float) -> str:
    return format(float(eps), ".3g").replace(".", "p").replace("-", "m")


def _exp_perturbed_sde(p: dict, outdir: Path, fast: bool):
    eps_values = p["eps"] if isinstance(p["eps"], list) else [p["eps"]]
    xi0 = tuple(p["xi0"])
    n_paths = int(p.get("n_paths", 1))
    store_every = int(p.get("store_every", 1))
    simulate = sde.ensemble_fast if fast else sde.ensemble_full
    files = []
    sweep_rows = []
    streams = {}
    for i, eps in enumerate(eps_values):
        noise = _noise(p, eps)
        rng = _rng(p, i * n_paths)
        res = simulate(xi0, noise, float(p["T"]), float(p["dt"]), rng, n_paths, store_every)
        streams[f"eps={eps!r}"] = [rng.stream, rng.stream + n_paths - 1]
        name = f"trajectory_eps_{_eps_tag(eps)}.csv"
        files.append(
            _write_csv(
                outdir,
                name,
                ["t", "x", "y", "z"],
                ((t, *state) for t, state in zip(res.times, res.states[:, 0, :])),
            )
        )
        sq = (res.states[-1] ** 2).sum(axis=1)
        sweep_rows.append([eps, sq.mean(), (sq**2).mean()])
    files.append(
        _write_csv(outdir, "sweep.csv", ["eps", "mean_sq_final", "mean_fourth_final"], sweep_rows)
    )
    stats = [(f"mean_sq_final[eps={row[0]!r}]", row[1]) for row in sweep_rows]
    stats.append(("n_eps", len(eps_values)))
    return files, streams, stats


def _exp_limit_uv(p: dict, outdir: Path):
    n_paths = int(p.get("n_paths", 1))
    rng = _rng(p)
    res = sde.ensemble_limit_uv(
        float(p["u0"]), float(p["v0"]), _noise(p, 0.0), float(p["T"]), float(p["dt"]),
        rng, n_paths, int(p.get("store_every", 1)),
    )
    files = [
        _write_csv(
            outdir,
            "trajectory.csv",
            ["t", "u", "v"],
            ((t, *state) for t, state in zip(res.times, res.states[:, 0, :])),
        )
    ]
    tail = res.states[len(res.times) // 2 :]
    stats = [
        ("tail_mean_u", tail[..., 0].mean()),
        ("tail_mean_v", tail[..., 1].mean()),
        ("min_u", res.states[..., 0].min()),
        ("min_v", res.states[..., 1].min()),
    ]
    return files, {"paths": [rng.stream, rng.stream + n_paths - 1]}, stats


def _exp_hk(p: dict, outdir: Path):
    n_paths = int(p.get("n_paths", 1))
    rng = _rng(p)
    res = sde.ensemble_hk(
        float(p["h0"]), float(p["k0"]), _noise(p, 0.0), float(p["T"]), float(p["dt"]),
        rng, n_paths, int(p.get("store_every", 1)),
    )
    files = [
        _write_csv(
            outdir,
            "trajectory.csv",
            ["t", "u", "v"],
            ((t, *state) for t, state in zip(res.times, res.states[:, 0, :])),
        )
    ]
    tail = res.states[len(res.times) // 2 :]
    stats = [
        ("tail_mean_h", tail[..., 0].mean()),
        ("tail_mean_k", tail[..., 1].mean()),
        ("min_h", res.states[..., 0].min()),
        ("min_k", res.states[..., 1].min()),
    ]
    return files, {"paths": [rng.stream, rng.stream + n_paths - 1]}, stats


def _exp_qv_study(p: dict, outdir: Path):
    xi0 = tuple(p["xi0"])
    T = float(p["T"])
    n_paths = int(p["n_paths"])
    pair = dynamics.phi(xi0)
    files = []
    streams = {}

    limit_rng = _rng(p)
    limit = sde.ensemble_limit_uv(
        pair.u, pair.v, _noise(p, 0.0), T, float(p["limit_dt"]), limit_rng, n_paths,
        sample_every=max(1, int(round(T / float(p["limit_dt"])))), accumulate_x2=True,
    )
    streams["limit"] = [limit_rng.stream, limit_rng.stream + n_paths - 1]
    qv_limit = limit.qv / T
    files.append(
        _write_csv(outdir, "qv_limit.csv", ["path", "qv_over_t"], enumerate(qv_limit))
    )
    w = np.full(n_paths, 1.0 / n_paths)

    sweep_rows = []
    for i, entry in enumerate(p["sweep"]):
        eps = float(entry["eps"])
        rng = _rng(p, (i + 1) * n_paths)
        res = sde.ensemble_fast_split(
            xi0, _noise(p, eps), T, float(entry["dt"]), rng, n_paths,
            sample_every=max(1, int(round(T / float(entry["dt"])))), qv_component=0,
        )
        streams[f"eps={eps!r}"] = [rng.stream, rng.stream + n_paths - 1]
        qv_eps = res.qv / T
        files.append(
            _write_csv(
                outdir, f"qv_eps_{_eps_tag(eps)}.csv", ["path", "qv_over_t"], enumerate(qv_eps)
            )
        )
        ks = measures.weighted_ks(qv_eps, w, qv_limit, w)
        sweep_rows.append([eps, qv_eps.mean(), qv_eps.std(ddof=1), ks])
    files.append(
        _write_csv(outdir, "sweep.csv", ["eps", "qv_mean", "qv_sd", "ks_to_limit"], sweep_rows)
    )
    stats = [(f"ks_to_limit[eps={row[0]!r}]", row[3]) for row in sweep_rows]
    stats.append(("qv_limit_mean", qv_limit.mean()))
    return files, streams, stats


def _exp_convergence(p: dict, outdir: Path):
    xi0 = tuple(p["xi0"])
    T = float(p["T"])
    n_paths = int(p["n_paths"])
    reference = dynamics.flow(xi0, T, dt=1e-4, store_every=10**9).states[-1]
    files = []
    streams = {}
    sweep_rows = []
    for i, entry in enumerate(p["sweep"]):
        eps = float(entry["eps"])
        rng = _rng(p, i * n_paths)
        res = sde.ensemble_full(
            xi0, _noise(p, eps), T, float(entry["dt"]), rng, n_paths,
            sample_every=max(1, int(round(T / float(entry["dt"])))),
        )
        streams[f"eps={eps!r}"] = [rng.stream, rng.stream + n_paths - 1]
        sq_dist = ((res.states[-1] - reference) ** 2).sum(axis=1)
        sweep_rows.append([eps, sq_dist.mean(), sq_dist.std(ddof=1) / math.sqrt(n_paths)])
    files.append(_write_csv(outdir, "sweep.csv", ["eps", "mean_sq_distance", "se"], sweep_rows))
    eps_arr = np.array([row[0] for row in sweep_rows])
    msd_arr = np.array([row[1] for row in sweep_rows])
    slope = float(np.polyfit(np.log(eps_arr), np.log(msd_arr), 1)[0])
    stats = [("loglog_slope", slope)] + [
        (f"mean_sq_distance[eps={row[0]!r}]", row[1]) for row in sweep_rows
    ]
    return files, streams, stats


def _exp_invariant_3d(p: dict, outdir: Path):
    n_paths = int(p.get("n_paths", 1))
    rng = _rng(p)
    res = sde.ensemble_full(
        tuple(p["xi0"]), _noise(p), float(p["T"]), float(p["dt"]), rng, n_paths,
        int(p.get("store_every", 1)),
    )
    burn = int(p.get("burn_in_steps", len(res.times) // 5))
    m = measures.EmpiricalMeasure.from_samples(res.states[burn:].reshape(-1, 3))
    files = [_dump_measure(outdir, "measure.csv", m)]
    defect_pm = measures.symmetry_defect(m, "pm")
    defect_e = measures.symmetry_defect(m, "e")
    stats = [
        ("n_samples", len(m)),
        ("symmetry_defect_pm", defect_pm),
        ("symmetry_defect_e", defect_e),
        ("mean_sq_radius", float((m.samples**2).sum(axis=1).mean())),
    ]
    return files, {"paths": [rng.stream, rng.stream + n_paths - 1]}, stats


def _exp_invariant_uv(p: dict, outdir: Path):
    n_paths = int(p.get("n_paths", 1))
    rng = _rng(p)
    res = sde.ensemble_limit_uv(
        float(p["u0"]), float(p["v0"]), _noise(p, 0.0), float(p["T"]), float(p["dt"]),
        rng, n_paths, int(p.get("store_every", 1)),
    )
    burn = len(res.times) // 5
    samples = res.states[burn:].reshape(-1, 2)
    m = measures.EmpiricalMeasure.from_samples(samples)
    files = [_dump_measure(outdir, "measure.csv", m)]
    stats = [("n_samples", len(m))]

    deltas = p.get("delta_list", [1e-1, 1e-2, 1e-3])
    rows = []
    for delta in deltas:
        mass = measures.small_mass(m, float(delta))
        rows.append([delta, mass, mass * abs(math.log(delta))])
    files.append(_write_csv(outdir, "small_mass.csv", ["delta", "mass", "mass_log"], rows))
    stats += [(f"small_mass[delta={row[0]!r}]", row[1]) for row in rows]

    edges = p.get("band_edges", [0.0, 0.2, 0.4, 0.6, 0.8])
    span = tuple(p.get("span", (1.0, 4.0)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        profile = measures.density_profile(m, [float(e) for e in edges], span)
    files.append(
        _write_csv(
            outdir,
            "density_profile.csv",
            ["band_lo", "band_hi", "mass", "area", "density", "count"],
            ([r["band_lo"], r["band_hi"], r["mass"], r["area"], r["density"], r["count"]] for r in profile),
        )
    )
    stats += [(f"density[band_lo={r['band_lo']!r}]", r["density"]) for r in profile]
    return files, {"paths": [rng.stream, rng.stream + n_paths - 1]}, stats


def _exp_two_estimators(p: dict, outdir: Path):
    rng = _rng(p)
    n_paths = int(p.get("n_paths", 8))
    est = measures.uv_invariant_two_ways(
        _noise(p, 0.0), float(p["T"]), rng, dt=float(p["dt"]), n_paths=n_paths,
        u0=p.get("u0"), v0=p.get("v0"),
    )
    files = [
        _dump_measure(outdir, "direct.csv", est.direct),
        _dump_measure(outdir, "reweighted.csv", est.reweighted),
    ]
    stats = []
    for name, record in est.diagnostics.items():
        if isinstance(record, dict):
            for key, value in record.items():
                stats.append((f"{name}.{key}", value))
        else:
            stats.append((name, record))
    streams = {"direct": [rng.stream, rng.stream + n_paths - 1],
               "reweighted": [rng.stream + n_paths, rng.stream + 2 * n_paths - 1]}
    return files, streams, stats


def _exp_decomposition(p: dict, outdir: Path):
    win = p["window"]
    window = measures.DecompositionWindow(
        float(win["u_center"]), float(win["v_center"]), float(win["half_width"])
    )
    n_paths = int(p["n_paths"])
    files = []
    streams = {}
    rows = []
    for i, eps in enumerate(p["eps_list"]):
        rng = _rng(p, i * n_paths)
        res = sde.ensemble_full(
            tuple(p["xi0"]), _noise(p, float(eps)), float(p["T"]), float(p["dt"]),
            rng, n_paths, int(p.get("store_every", 1)),
        )
        streams[f"eps={eps!r}"] = [rng.stream, rng.stream + n_paths - 1]
        burn = len(res.times) // 5
        m = measures.EmpiricalMeasure.from_samples(res.states[burn:].reshape(-1, 3))
        result = measures.decomposition_check(m, window)
        rows.append([eps, float(result), result.n_conditional, result.n_reference])
    files.append(
        _write_csv(outdir, "sweep.csv", ["eps", "distance", "n_conditional", "n_reference"], rows)
    )
    stats = [(f"distance[eps={row[0]!r}]", row[1]) for row in rows]
    stats.append(("decreasing", all(b[1] < a[1] for a, b in zip(rows, rows[1:]))))
    return files, streams, stats


def _exp_symmetry(p: dict, outdir: Path):
    n_paths = int(p["n_paths"])
    files = []
    streams = {}
    rows = []
    for i, (s1, s2) in enumerate(p["sigma_pairs"]):
        noise = sde.NoiseParams(float(s1), float(s2), float(p["eps"]))
        rng = _rng(p, i * n_paths)
        res = sde.ensemble_full(
            tuple(p["xi0"]), noise, float(p["T"]), float(p["dt"]), rng, n_paths,
            int(p.get("store_every", 1)),
        )
        streams[f"sigma=({s1!r},{s2!r})"] = [rng.stream, rng.stream + n_paths - 1]
        burn = len(res.times) // 5
        m = measures.EmpiricalMeasure.from_samples(res.states[burn:].reshape(-1, 3))
        rows.append(
            [s1, s2, len(m), measures.symmetry_defect(m, "pm"), measures.symmetry_defect(m, "e")]
        )
    files.append(
        _write_csv(
            outdir, "sweep.csv", ["sigma1", "sigma2", "n_samples", "defect_pm", "defect_e"], rows
        )
    )
    stats = []
    for row in rows:
        tag = f"sigma=({row[0]!r},{row[1]!r})"
        stats.append((f"defect_pm[{tag}]", row[3]))
        stats.append((f"defect_e[{tag}]", row[4]))
    return files, streams, stats


def _exp_diagonal(p: dict, outdir: Path):
    n_paths = int(p.get("n_paths", 1))
    rng = _rng(p)
    res = sde.ensemble_limit_uv(
        float(p["u0"]), float(p["v0"]), _noise(p, 0.0), float(p["T"]), float(p["dt"]),
        rng, n_paths, int(p.get("store_every", 1)),
    )
    flat = res.states.reshape(-1, 2)
    m = measures.EmpiricalMeasure.from_samples(flat)
    rows = [[delta, measures.diag_occupation(m, float(delta))] for delta in p["delta_list"]]
    files = [_write_csv(outdir, "diag.csv", ["delta", "occupation"], rows)]
    stats = [(f"occupation[delta={row[0]!r}]", row[1]) for row in rows]
    occs = [row[1] for row in rows]
    stats.append(("monotone_decreasing", all(b <= a for a, b in zip(occs, occs[1:]))))
    return files, {"paths": [rng.stream, rng.stream + n_paths - 1]}, stats


def assemble_report(scan_dir: Path, outdir: Path):
    """Collect every completed run's summary.csv under scan_dir into one table."""
    rows = []
    for manifest_path in sorted(scan_dir.rglob("manifest.json")):
        run_dir = manifest_path.parent
        if run_dir == outdir:
            continue
        try:
            manifest = json.loads(manifest_path.read_text())
        except (OSError, json.JSONDecodeError):
            continue
        summary = run_dir / "summary.csv"
        if not summary.is_file():
            continue
        lines = summary.read_text().strip().splitlines()
        for line in lines[1:]:
            statistic, _, value = line.partition(",")
            rows.append(
                [str(run_dir.relative_to(scan_dir)), manifest.get("experiment", "?"), statistic, value]
            )
    files = [_write_csv(outdir, "report.csv", ["run", "experiment", "statistic", "value"], rows)]
    stats = [("n_rows", len(rows)), ("n_runs", len({r[0] for r in rows}))]
    return files, {}, stats


def _exp_report(p: dict, outdir: Path):
    return assemble_report(Path(p["scan_dir"]), outdir)


_EXPERIMENTS = {
    "flow": _exp_flow,
    "avg-table": _exp_avg_table,
    "full-sde": lambda p, outdir: _exp_perturbed_sde(p, outdir, fast=False),
    "fast-sde": lambda p, outdir: _exp_perturbed_sde(p, outdir, fast=True),
    "limit-uv": _exp_limit_uv,
    "hk": _exp_hk,
    "qv-study": _exp_qv_study,
    "convergence-study": _exp_convergence,
    "invariant-3d": _exp_invariant_3d,
    "invariant-uv": _exp_invariant_uv,
    "two-estimators": _exp_two_estimators,
    "decomposition": _exp_decomposition,
    "symmetry": _exp_symmetry,
    "diagonal": _exp_diagonal,
    "report": _exp_report,
}


def run(config: ExperimentConfig) -> RunManifest:
    """Validate, execute, and write artifacts plus manifest.json.

    Raises ConfigError when validation fails; simulator diagnostics
    (SimulationError etc.) propagate unchanged.
    """
    violations = validate(config)
    if violations:
        raise ConfigError(violations)
    outdir = Path(config.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    started = time.monotonic()
    files, streams, stats = _EXPERIMENTS[config.experiment](config.params, outdir)
    files.append(_summary(outdir, stats))
    manifest = RunManifest(
        experiment=config.experiment,
        config={
            "experiment": config.experiment,
            "params": config.params,
            "output_dir": config.output_dir,
        },
        version=__version__,
        wall_clock_seconds=time.monotonic() - started,
        seed=int(config.params.get("seed", 0)),
        streams=streams,
        files={name: _sha256(outdir / name) for name in files},
    )
    manifest.write(outdir / "manifest.json")
    return manifest
