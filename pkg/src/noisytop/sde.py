"""Stochastic integrators for the perturbed system and its slow limits.

Four equations share one Euler-Maruyama backbone:

* full   — original time: drift B(xi, xi) - eps*xi, noise sqrt(eps)*sigma on
           the first two coordinates only (z carries no noise);
* fast   — sped-up time: drift (1/eps) B(xi, xi) - xi, noise sigma (the same
           path as `full` viewed at time t/eps);
* limit  — the slow pair (U, V): square-root diffusion with the orbit-averaged
           coefficient gamma_fn inside the root, degenerate on the diagonal;
* hk     — the time-changed pair (H, K): the limit equation run in the clock
           of f_fn, with the diffusion factor g_fn.

Square-root schemes use full truncation (clamp the root argument before the
square root, clamp the state at zero after the step), so stored samples are
never negative.

Randomness is counter-based: a path is fully determined by (seed, stream), so
ensembles assign stream + i to path i and are bit-identical however the paths
are blocked over threads (NOISYTOP_THREADS or the `threads` argument control
wall-clock only, never results).
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import dynamics
from .averaging import F_FLOOR, LAMBDA_HALF, RATIO_FLOOR, _lambda_array
from .dynamics import State3, Trajectory

__all__ = [
    "NoiseParams",
    "RngSpec",
    "UVTrajectory",
    "TimeChangeMap",
    "EnsembleResult",
    "SimulationError",
    "simulate_full",
    "simulate_fast",
    "simulate_limit_uv",
    "simulate_hk",
    "uv_from",
    "time_change_forward",
    "time_change_inverse",
    "quadratic_variation",
    "ensemble_full",
    "ensemble_fast",
    "ensemble_fast_split",
    "ensemble_limit_uv",
    "ensemble_hk",
]

_MASK64 = (1 << 64) - 1
_trapz = getattr(np, "trapezoid", None) or np.trapz
_CHUNK = 2048  # steps of pre-drawn increments per path (fixed: part of the stream layout)
_BLOWUP = 1e6
_BLOWUP_CHECK_EVERY = 16
_HK_GUARD = 1e-10
_HK_MAX_HALVINGS = 40
THREADS_ENV_VAR = "NOISYTOP_THREADS"


class SimulationError(RuntimeError):
    """A simulator aborted with a diagnostic (blow-up, halving cascade, ...)."""


@dataclass(frozen=True)
class NoiseParams:
    """Noise amplitudes and the perturbation size.

    sigma1, sigma2 must be strictly positive (the standing assumption of the
    model); eps >= 0 (eps = 0 degenerates the full equation to the unforced
    flow, which is allowed and used in tests).
    """

    sigma1: float
    sigma2: float
    eps: float = 0.0

    def __post_init__(self) -> None:
        if not (self.sigma1 > 0.0 and math.isfinite(self.sigma1)):
            raise ValueError("sigma1 must be a finite positive real")
        if not (self.sigma2 > 0.0 and math.isfinite(self.sigma2)):
            raise ValueError("sigma2 must be a finite positive real")
        if not (self.eps >= 0.0 and math.isfinite(self.eps)):
            raise ValueError("eps must be a finite nonnegative real")


@dataclass(frozen=True)
class RngSpec:
    """Counter-based randomness: (seed, stream) fully determines a path."""

    seed: int
    stream: int = 0

    def generator(self, offset: int = 0) -> np.random.Generator:
        key = [self.seed & _MASK64, (self.stream + offset) & _MASK64]
        return np.random.Generator(np.random.Philox(key=key))


@dataclass
class UVTrajectory:
    """A time-stamped path of the slow pair; states column 0 is u, column 1 v."""

    times: np.ndarray
    states: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.times.ndim != 1 or self.states.ndim != 2 or self.states.shape[1] != 2:
            raise ValueError("times must be 1-D and states (n, 2)")
        if len(self.times) != len(self.states):
            raise ValueError("times and states must have equal length")
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("times must be strictly increasing")
        if np.any(self.states < 0.0):
            raise ValueError("slow-pair samples must be nonnegative")

    @property
    def u(self) -> np.ndarray:
        return self.states[:, 0]

    @property
    def v(self) -> np.ndarray:
        return self.states[:, 1]

    @property
    def horizon(self) -> float:
        return float(self.times[-1] - self.times[0])

    def __len__(self) -> int:
        return len(self.times)


@dataclass
class TimeChangeMap:
    """The accumulated clock A over the source grid; a_values[0] = 0."""

    t_values: np.ndarray
    a_values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.t_values = np.asarray(self.t_values, dtype=float)
        self.a_values = np.asarray(self.a_values, dtype=float)
        if self.a_values[0] != 0.0:
            raise ValueError("a_values must start at 0")
        if np.any(np.diff(self.a_values) < 0.0):
            raise ValueError("a_values must be nondecreasing")


@dataclass
class EnsembleResult:
    """Sampled ensemble states plus optional per-path path functionals.

    times: (k,); states: (k, n_paths, d); qv: (n_paths,) or None — the running
    trapezoid integral requested via `qv_component` / the limit functional.
    """

    times: np.ndarray
    states: np.ndarray
    qv: np.ndarray | None = None
    meta: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------


def _resolve_threads(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get(THREADS_ENV_VAR, "1"))
    return max(1, threads)


def _sample_indices(n_steps: int, sample_every: int) -> np.ndarray:
    kept = list(range(0, n_steps + 1, max(1, sample_every)))
    if kept[-1] != n_steps:
        kept.append(n_steps)
    return np.asarray(kept, dtype=np.int64)


def _run_blocks(n_paths: int, threads: int, run_block) -> None:
    """Partition paths into contiguous blocks and run them, possibly on a
    thread pool.  Blocks write to disjoint output slices, and every path's
    randomness comes from its own (seed, stream + i), so the partition cannot
    influence results."""
    threads = min(threads, n_paths)
    if threads <= 1:
        run_block(0, n_paths)
        return
    bounds = np.linspace(0, n_paths, threads + 1).astype(int)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [
            pool.submit(run_block, int(lo), int(hi - lo))
            for lo, hi in zip(bounds[:-1], bounds[1:])
            if hi > lo
        ]
        for fut in futures:
            fut.result()


def _draw_chunk(gens, length: int, ncols: int) -> np.ndarray:
    out = np.empty((length, len(gens), ncols))
    for i, gen in enumerate(gens):
        out[:, i, :] = gen.standard_normal((length, ncols))
    return out


# ---------------------------------------------------------------------------
# full / fast equations (3-D state, noise on x and y)
# ---------------------------------------------------------------------------


def _ensemble_xyz(
    xi0,
    p: NoiseParams,
    T: float,
    dt: float,
    rng: RngSpec,
    n_paths: int,
    sample_every: int,
    qv_component: int | None,
    threads: int | None,
    fast: bool,
) -> EnsembleResult:
    x0, y0, z0 = (float(c) for c in xi0)
    if not all(math.isfinite(c) for c in (x0, y0, z0)):
        raise ValueError("initial state must be finite")
    if T <= 0.0 or dt <= 0.0:
        raise ValueError("T and dt must be positive")
    if fast and p.eps <= 0.0:
        raise ValueError("fast-time integration requires eps > 0")
    if fast and dt > 0.1 * p.eps:
        warnings.warn(
            f"fast-time step dt={dt:g} exceeds 0.1*eps={0.1 * p.eps:g}; "
            "the explicit scheme is unreliable at this resolution",
            RuntimeWarning,
            stacklevel=3,
        )

    n_steps = max(1, int(round(T / dt)))
    step = T / n_steps
    kept = _sample_indices(n_steps, sample_every)
    states = np.empty((len(kept), n_paths, 3))
    qv = np.zeros(n_paths) if qv_component is not None else None

    if fast:
        drift_scale = 1.0 / p.eps
        damp = 1.0
        a1 = p.sigma1 * math.sqrt(step)
        a2 = p.sigma2 * math.sqrt(step)
    else:
        drift_scale = 1.0
        damp = p.eps
        root_eps = math.sqrt(p.eps)
        a1 = root_eps * p.sigma1 * math.sqrt(step)
        a2 = root_eps * p.sigma2 * math.sqrt(step)

    def run_block(offset: int, count: int) -> None:
        gens = [rng.generator(offset + i) for i in range(count)]
        x = np.full(count, x0)
        y = np.full(count, y0)
        z = np.full(count, z0)
        sl = slice(offset, offset + count)
        states[0, sl, 0] = x
        states[0, sl, 1] = y
        states[0, sl, 2] = z
        kept_pos = 1
        if qv_component is not None:
            comp = (x, y, z)[qv_component]
            prev_sq = comp * comp
            acc = np.zeros(count)
        done = 0
        # overflow past the blow-up threshold is reported via SimulationError,
        # not as numpy warnings from the few steps before the check fires
        with np.errstate(over="ignore", invalid="ignore"):
            while done < n_steps:
                length = min(_CHUNK, n_steps - done)
                noise = _draw_chunk(gens, length, 2)
                for j in range(length):
                    bx = y * z
                    by = x * z
                    bz = -2.0 * x * y
                    x = x + (drift_scale * bx - damp * x) * step + a1 * noise[j, :, 0]
                    y = y + (drift_scale * by - damp * y) * step + a2 * noise[j, :, 1]
                    z = z + (drift_scale * bz - damp * z) * step
                    i_step = done + j + 1
                    if i_step % _BLOWUP_CHECK_EVERY == 0 or i_step == n_steps:
                        peak = max(
                            float(np.max(np.abs(x))),
                            float(np.max(np.abs(y))),
                            float(np.max(np.abs(z))),
                        )
                        if not (peak <= _BLOWUP) or not math.isfinite(peak):
                            raise SimulationError(
                                f"state norm exceeded {_BLOWUP:g} at or before step "
                                f"{i_step} (t={i_step * step:.6g})"
                            )
                    if qv_component is not None:
                        comp = (x, y, z)[qv_component]
                        sq = comp * comp
                        acc += 0.5 * step * (prev_sq + sq)
                        prev_sq = sq
                    if kept_pos < len(kept) and kept[kept_pos] == i_step:
                        states[kept_pos, sl, 0] = x
                        states[kept_pos, sl, 1] = y
                        states[kept_pos, sl, 2] = z
                        kept_pos += 1
                done += length
        if qv_component is not None:
            qv[sl] = acc

    _run_blocks(n_paths, _resolve_threads(threads), run_block)
    meta = {
        "scheme": "euler-maruyama",
        "equation": "fast" if fast else "full",
        "dt": step,
        "seed": rng.seed,
        "stream_first": rng.stream,
        "stream_last": rng.stream + n_paths - 1,
        "sigma1": p.sigma1,
        "sigma2": p.sigma2,
        "eps": p.eps,
    }
    return EnsembleResult(kept * step, states, qv, meta)


def ensemble_full(
    xi0,
    p: NoiseParams,
    T: float,
    dt: float,
    rng: RngSpec,
    n_paths: int,
    sample_every: int = 1,
    qv_component: int | None = None,
    threads: int | None = None,
) -> EnsembleResult:
    """Ensemble of original-time paths, one stream per path."""
    return _ensemble_xyz(xi0, p, T, dt, rng, n_paths, sample_every, qv_component, threads, False)


def ensemble_fast(
    xi0,
    p: NoiseParams,
    T: float,
    dt: float,
    rng: RngSpec,
    n_paths: int,
    sample_every: int = 1,
    qv_component: int | None = None,
    threads: int | None = None,
) -> EnsembleResult:
    """Ensemble of sped-up-time paths, one stream per path."""
    return _ensemble_xyz(xi0, p, T, dt, rng, n_paths, sample_every, qv_component, threads, True)


def simulate_full(
    xi0, p: NoiseParams, T: float, dt: float, rng: RngSpec, store_every: int = 1
) -> Trajectory:
    """One original-time path from xi0 over [0, T].

    Noise enters x and y only; z is driven by the drift alone.  Aborts with a
    diagnostic if the state norm passes 1e6 (it should not: the dissipation
    balances the noise at every eps).
    """
    res = _ensemble_xyz(xi0, p, T, dt, rng, 1, store_every, None, 1, False)
    return Trajectory(res.times, res.states[:, 0, :], res.meta)


def simulate_fast(
    xi0, p: NoiseParams, T: float, dt: float, rng: RngSpec, store_every: int = 1
) -> Trajectory:
    """One sped-up-time path; warns when dt > 0.1*eps (stiff drift)."""
    res = _ensemble_xyz(xi0, p, T, dt, rng, 1, store_every, None, 1, True)
    return Trajectory(res.times, res.states[:, 0, :], res.meta)


def ensemble_fast_split(
    xi0,
    p: NoiseParams,
    T: float,
    h: float,
    rng: RngSpec,
    n_paths: int,
    sample_every: int = 1,
    qv_component: int | None = None,
    threads: int | None = None,
    flow_substep: float = 0.02,
) -> EnsembleResult:
    """Long-horizon sped-up-time ensemble via operator splitting.

    Plain Euler-Maruyama needs the step to shrink like eps^2 before its
    spurious energy injection stops distorting long sped-up-time runs, which
    is hopeless at small eps.  This integrator splits the generator instead:
    the stiff conservative rotation is advanced with projected RK4 substeps
    (conserved pair exact to round-off, so no energy drift at any eps), and
    the damping+noise part is an exact Ornstein-Uhlenbeck update applied once
    per slow step h.  Weak error is O(h) uniformly in eps.

    Cost scales like T/(eps*flow_substep) regardless of h.  The qv_component
    accumulator integrates the component squared with a trapezoid rule over
    the RK4 substeps, so the oscillation is averaged inside every slow step
    rather than sampled at its endpoints.
    """
    if p.eps <= 0.0:
        raise ValueError("splitting integrator requires eps > 0")
    if h <= 0.0 or T <= 0.0:
        raise ValueError("T and h must be positive")
    if flow_substep <= 0.0:
        raise ValueError("flow_substep must be positive")
    x0, y0, z0 = (float(c) for c in xi0)
    if not all(math.isfinite(c) for c in (x0, y0, z0)):
        raise ValueError("xi0 must be finite")
    n_steps = max(1, int(round(T / h)))
    dtau = h / p.eps
    n_sub = max(1, int(math.ceil(dtau / flow_substep)))
    h_sub = dtau / n_sub
    damp = math.exp(-h)
    std1 = p.sigma1 * math.sqrt(0.5 * (1.0 - math.exp(-2.0 * h)))
    std2 = p.sigma2 * math.sqrt(0.5 * (1.0 - math.exp(-2.0 * h)))
    kept = _sample_indices(n_steps, sample_every)
    states = np.empty((len(kept), n_paths, 3))
    qv = np.empty(n_paths) if qv_component is not None else None

    def run_block(offset: int, count: int) -> None:
        gens = [rng.generator(offset + i) for i in range(count)]
        x = np.full(count, x0)
        y = np.full(count, y0)
        z = np.full(count, z0)
        sl = slice(offset, offset + count)
        states[0, sl, 0] = x
        states[0, sl, 1] = y
        states[0, sl, 2] = z
        kept_pos = 1
        acc = np.zeros(count) if qv_component is not None else None
        done = 0
        while done < n_steps:
            length = min(_CHUNK, n_steps - done)
            noise = _draw_chunk(gens, length, 2)
            for j in range(length):
                u0 = 2.0 * x * x + z * z
                v0 = 2.0 * y * y + z * z
                if qv_component is not None:
                    comp = (x, y, z)[qv_component]
                    sub_sum = 0.5 * comp * comp
                    last_sq = np.empty(count)

                    def tally(i_sub, xs, ys, zs):
                        sq = (xs, ys, zs)[qv_component] ** 2
                        if i_sub == n_sub:
                            last_sq[:] = sq
                        np.add(sub_sum, sq, out=sub_sum)

                    x, y, z, _ = dynamics._rk4_project_steps(
                        x, y, z, u0, v0, h_sub, n_sub, tally
                    )
                    sub_sum -= 0.5 * last_sq
                    acc += h * sub_sum / n_sub
                else:
                    x, y, z, _ = dynamics._rk4_project_steps(
                        x, y, z, u0, v0, h_sub, n_sub
                    )
                x = x * damp + std1 * noise[j, :, 0]
                y = y * damp + std2 * noise[j, :, 1]
                z = z * damp
                i_step = done + j + 1
                if kept_pos < len(kept) and kept[kept_pos] == i_step:
                    states[kept_pos, sl, 0] = x
                    states[kept_pos, sl, 1] = y
                    states[kept_pos, sl, 2] = z
                    kept_pos += 1
            done += length
        if qv_component is not None:
            qv[sl] = acc

    _run_blocks(n_paths, _resolve_threads(threads), run_block)
    meta = {
        "scheme": "split-rk4-ou",
        "equation": "fast",
        "dt": h,
        "flow_substep": h_sub,
        "substeps_per_step": n_sub,
        "seed": rng.seed,
        "stream_first": rng.stream,
        "stream_last": rng.stream + n_paths - 1,
        "sigma1": p.sigma1,
        "sigma2": p.sigma2,
        "eps": p.eps,
    }
    times = np.array([k * h for k in kept])
    return EnsembleResult(times, states, qv, meta)


def uv_from(traj: Trajectory) -> UVTrajectory:
    """Push a 3-D path through the conserved-pair map, samplewise."""
    x = traj.states[:, 0]
    y = traj.states[:, 1]
    z = traj.states[:, 2]
    states = np.stack([2.0 * x * x + z * z, 2.0 * y * y + z * z], axis=1)
    meta = dict(traj.meta)
    meta["derived"] = "uv_from"
    return UVTrajectory(traj.times.copy(), states, meta)


# ---------------------------------------------------------------------------
# limit (U, V) square-root diffusion
# ---------------------------------------------------------------------------


def _gamma_arrays(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    lo = np.minimum(u, v)
    hi = np.maximum(u, v)
    ratio = np.divide(lo, hi, out=np.ones_like(lo), where=hi > 0.0)
    return lo * _lambda_array(ratio)


def _ensemble_uv(
    u0: float,
    v0: float,
    p: NoiseParams,
    T: float,
    dt: float,
    rng: RngSpec,
    n_paths: int,
    sample_every: int,
    accumulate_x2: bool,
    threads: int | None,
    drift_only: bool = False,
) -> EnsembleResult:
    if not (u0 >= 0.0 and v0 >= 0.0 and math.isfinite(u0) and math.isfinite(v0)):
        raise ValueError("u0 and v0 must be finite and nonnegative")
    if T <= 0.0 or dt <= 0.0:
        raise ValueError("T and dt must be positive")
    n_steps = max(1, int(round(T / dt)))
    step = T / n_steps
    kept = _sample_indices(n_steps, sample_every)
    states = np.empty((len(kept), n_paths, 2))
    qv = np.zeros(n_paths) if accumulate_x2 else None
    s1 = p.sigma1
    s2 = p.sigma2
    root_dt = math.sqrt(step)
    amp = 0.0 if drift_only else 1.0

    def run_block(offset: int, count: int) -> None:
        gens = [rng.generator(offset + i) for i in range(count)]
        u = np.full(count, float(u0))
        v = np.full(count, float(v0))
        sl = slice(offset, offset + count)
        states[0, sl, 0] = u
        states[0, sl, 1] = v
        kept_pos = 1
        if accumulate_x2:
            prev_x2 = 0.5 * (u - _gamma_arrays(u, v))
            acc = np.zeros(count)
        done = 0
        while done < n_steps:
            length = min(_CHUNK, n_steps - done)
            noise = _draw_chunk(gens, length, 2)
            for j in range(length):
                gam = _gamma_arrays(u, v)
                du = (
                    (2.0 * s1 * s1 - 2.0 * u) * step
                    + amp * s1 * np.sqrt(np.maximum(8.0 * (u - gam), 0.0)) * root_dt * noise[j, :, 0]
                )
                dv = (
                    (2.0 * s2 * s2 - 2.0 * v) * step
                    + amp * s2 * np.sqrt(np.maximum(8.0 * (v - gam), 0.0)) * root_dt * noise[j, :, 1]
                )
                u = np.maximum(u + du, 0.0)
                v = np.maximum(v + dv, 0.0)
                if not drift_only:
                    # The diffusion degenerates exactly on the diagonal (the
                    # argument u - gamma vanishes there), so a pair clamped to
                    # the same value -- the corner (0, 0) after a double
                    # truncation is the one reachable case -- would evolve
                    # deterministically glued together forever, while the
                    # continuous process spends zero time on the diagonal.
                    # Break exact ties by one ulp; the degeneracy is only
                    # logarithmic, so this restores an O(1) diffusion.
                    tied = u == v
                    if tied.any():
                        v = np.where(tied, np.nextafter(v, np.inf), v)
                i_step = done + j + 1
                if accumulate_x2:
                    x2 = 0.5 * (u - _gamma_arrays(u, v))
                    acc += 0.5 * step * (prev_x2 + x2)
                    prev_x2 = x2
                if kept_pos < len(kept) and kept[kept_pos] == i_step:
                    states[kept_pos, sl, 0] = u
                    states[kept_pos, sl, 1] = v
                    kept_pos += 1
            done += length
        if accumulate_x2:
            qv[sl] = acc

    _run_blocks(n_paths, _resolve_threads(threads), run_block)
    meta = {
        "scheme": "euler-maruyama-full-truncation",
        "equation": "limit-uv",
        "dt": step,
        "seed": rng.seed,
        "stream_first": rng.stream,
        "stream_last": rng.stream + n_paths - 1,
        "sigma1": p.sigma1,
        "sigma2": p.sigma2,
        "diagonal_tie_break": None if drift_only else "ulp",
    }
    return EnsembleResult(kept * step, states, qv, meta)


def ensemble_limit_uv(
    u0: float,
    v0: float,
    p: NoiseParams,
    T: float,
    dt: float,
    rng: RngSpec,
    n_paths: int,
    sample_every: int = 1,
    accumulate_x2: bool = False,
    threads: int | None = None,
    drift_only: bool = False,
) -> EnsembleResult:
    """Ensemble of slow-pair paths; `accumulate_x2` also returns the per-path
    trapezoid integral of the averaged x^2 coefficient, (u - gamma)/2."""
    return _ensemble_uv(
        u0, v0, p, T, dt, rng, n_paths, sample_every, accumulate_x2, threads, drift_only
    )


def simulate_limit_uv(
    u0: float,
    v0: float,
    p: NoiseParams,
    T: float,
    dt: float,
    rng: RngSpec,
    store_every: int = 1,
    drift_only: bool = False,
) -> UVTrajectory:
    """One path of the limiting slow-pair diffusion (full-truncation scheme).

    The diffusion argument is clamped at zero before the square root and the
    state at zero after each step, so stored samples are nonnegative.  A step
    that leaves the two components exactly equal (double truncation at the
    corner) is tie-broken by one ulp so the pair cannot stay glued to the
    diagonal, where the diffusion is exactly degenerate but the continuous
    process spends zero time.  `drift_only=True` suppresses the diffusion term
    (and the tie-break) for deterministic-relaxation diagnostics.
    """
    res = _ensemble_uv(u0, v0, p, T, dt, rng, 1, store_every, False, 1, drift_only)
    return UVTrajectory(res.times, res.states[:, 0, :], res.meta)


# ---------------------------------------------------------------------------
# time-changed (H, K) diffusion
# ---------------------------------------------------------------------------


def _hk_coefficients(h: np.ndarray, k: np.ndarray, s1: float, s2: float):
    lo = np.minimum(h, k)
    hi = np.maximum(h, k)
    ratio = np.divide(lo, hi, out=np.ones_like(lo), where=hi > 0.0)
    lam = _lambda_array(ratio)
    one_minus = 1.0 - lam
    f_val = np.where(ratio >= RATIO_FLOOR, one_minus, F_FLOOR)
    g_val = one_minus / f_val
    drift_h = 2.0 * (s1 * s1 - h) / f_val
    drift_k = 2.0 * (s2 * s2 - k) / f_val
    base = lo * g_val
    diff_h = 2.0 * math.sqrt(2.0) * s1 * np.sqrt(np.maximum((h - lo) / f_val + base, 0.0))
    diff_k = 2.0 * math.sqrt(2.0) * s2 * np.sqrt(np.maximum((k - lo) / f_val + base, 0.0))
    return drift_h, drift_k, diff_h, diff_k


def _hk_in_guard(h, k) -> np.ndarray:
    hi = np.maximum(h, k)
    return np.abs(h - k) <= _HK_GUARD * np.maximum(hi, np.finfo(float).tiny)


def _hk_substep_scalar(h: float, k: float, dt: float, gen, s1: float, s2: float):
    """Cover one grid interval for a path whose vectorized proposal landed in
    the diagonal guard strip: redo it with step halving (fresh increments per
    attempt, all from the path's own stream)."""
    remaining = dt
    while remaining > 0.0:
        step = remaining
        halvings = 0
        while True:
            ha = np.array([h])
            ka = np.array([k])
            dh, dk, sh, sk = _hk_coefficients(ha, ka, s1, s2)
            xi = gen.standard_normal(2)
            root = math.sqrt(step)
            h_new = max(float(h + dh[0] * step + sh[0] * root * xi[0]), 0.0)
            k_new = max(float(k + dk[0] * step + sk[0] * root * xi[1]), 0.0)
            if not bool(_hk_in_guard(np.array([h_new]), np.array([k_new]))[0]):
                break
            halvings += 1
            if halvings > _HK_MAX_HALVINGS:
                raise SimulationError(
                    f"time-changed step rejected {_HK_MAX_HALVINGS} times near the "
                    f"diagonal (h={h_new:.12g}, k={k_new:.12g}); the path is stuck "
                    "in the degenerate strip"
                )
            step *= 0.5
        h, k = h_new, k_new
        remaining -= step
    return h, k


def _ensemble_hk(
    h0: float,
    k0: float,
    p: NoiseParams,
    T: float,
    dt: float,
    rng: RngSpec,
    n_paths: int,
    sample_every: int,
    threads: int | None,
) -> EnsembleResult:
    if not (h0 >= 0.0 and k0 >= 0.0 and math.isfinite(h0) and math.isfinite(k0)):
        raise ValueError("h0 and k0 must be finite and nonnegative")
    if bool(_hk_in_guard(np.array([float(h0)]), np.array([float(k0)]))[0]):
        raise ValueError(
            "h0 = k0 (within the diagonal guard): the time-changed drift is "
            "singular there; start off the diagonal"
        )
    if T <= 0.0 or dt <= 0.0:
        raise ValueError("T and dt must be positive")
    n_steps = max(1, int(round(T / dt)))
    step = T / n_steps
    kept = _sample_indices(n_steps, sample_every)
    states = np.empty((len(kept), n_paths, 2))
    s1 = p.sigma1
    s2 = p.sigma2
    root_dt = math.sqrt(step)

    def run_block(offset: int, count: int) -> None:
        gens = [rng.generator(offset + i) for i in range(count)]
        h = np.full(count, float(h0))
        k = np.full(count, float(k0))
        sl = slice(offset, offset + count)
        states[0, sl, 0] = h
        states[0, sl, 1] = k
        kept_pos = 1
        done = 0
        while done < n_steps:
            length = min(_CHUNK, n_steps - done)
            noise = _draw_chunk(gens, length, 2)
            for j in range(length):
                dh, dk, sh, sk = _hk_coefficients(h, k, s1, s2)
                h_new = np.maximum(h + dh * step + sh * root_dt * noise[j, :, 0], 0.0)
                k_new = np.maximum(k + dk * step + sk * root_dt * noise[j, :, 1], 0.0)
                bad = _hk_in_guard(h_new, k_new)
                if np.any(bad):
                    for i in np.nonzero(bad)[0]:
                        h_new[i], k_new[i] = _hk_substep_scalar(
                            float(h[i]), float(k[i]), step, gens[i], s1, s2
                        )
                h, k = h_new, k_new
                i_step = done + j + 1
                if kept_pos < len(kept) and kept[kept_pos] == i_step:
                    states[kept_pos, sl, 0] = h
                    states[kept_pos, sl, 1] = k
                    kept_pos += 1
            done += length

    _run_blocks(n_paths, _resolve_threads(threads), run_block)
    meta = {
        "scheme": "euler-maruyama-full-truncation",
        "equation": "hk-changed-time",
        "dt": step,
        "seed": rng.seed,
        "stream_first": rng.stream,
        "stream_last": rng.stream + n_paths - 1,
        "sigma1": p.sigma1,
        "sigma2": p.sigma2,
    }
    return EnsembleResult(kept * step, states, None, meta)


def ensemble_hk(
    h0: float,
    k0: float,
    p: NoiseParams,
    T: float,
    dt: float,
    rng: RngSpec,
    n_paths: int,
    sample_every: int = 1,
    threads: int | None = None,
) -> EnsembleResult:
    """Ensemble of time-changed pair paths, one stream per path."""
    return _ensemble_hk(h0, k0, p, T, dt, rng, n_paths, sample_every, threads)


def simulate_hk(
    h0: float, k0: float, p: NoiseParams, T: float, dt: float, rng: RngSpec, store_every: int = 1
) -> UVTrajectory:
    """One path of the time-changed pair.

    Steps whose proposal lands within relative 1e-10 of the diagonal are
    rejected and retried at half the step (the drift is singular on the
    diagonal); after 40 consecutive halvings the simulator gives up with a
    diagnostic.  The returned times are in the changed clock.
    """
    res = _ensemble_hk(h0, k0, p, T, dt, rng, 1, store_every, 1)
    return UVTrajectory(res.times, res.states[:, 0, :], res.meta)


# ---------------------------------------------------------------------------
# time-change transforms and path functionals
# ---------------------------------------------------------------------------


def _f_of_pair(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Clock factor F along a sampled nonnegative path; defined by continuity
    (= the floor value) at the origin where the ratio is 0/0."""
    lo = np.minimum(u, v)
    hi = np.maximum(u, v)
    ratio = np.divide(lo, hi, out=np.zeros_like(lo), where=hi > 0.0)
    lam = _lambda_array(np.maximum(ratio, RATIO_FLOOR))
    return 1.0 - lam


def time_change_forward(
    uv: UVTrajectory, n_out: int | None = None
) -> tuple[UVTrajectory, TimeChangeMap]:
    """Run a slow-pair path through the accumulated clock A = integral of F.

    Returns the path resampled on a uniform grid of the changed time together
    with the map (t, A(t)).  Rejects paths whose total clock is degenerate
    (stuck arbitrarily close to the diagonal for the whole horizon).
    """
    f_vals = _f_of_pair(uv.u, uv.v)
    dt_segs = np.diff(uv.times)
    a_vals = np.concatenate([[0.0], np.cumsum(0.5 * (f_vals[1:] + f_vals[:-1]) * dt_segs)])
    total = float(a_vals[-1])
    if total <= 1e-6 * uv.horizon:
        raise SimulationError(
            f"accumulated clock {total:.3e} is degenerate over horizon {uv.horizon:g}"
        )
    n_out = len(uv) if n_out is None else int(n_out)
    s_grid = np.linspace(0.0, total, n_out)
    eta = np.interp(s_grid, a_vals, uv.times)
    h_vals = np.interp(eta, uv.times, uv.u)
    k_vals = np.interp(eta, uv.times, uv.v)
    out = UVTrajectory(
        s_grid,
        np.stack([h_vals, k_vals], axis=1),
        {"derived": "time_change_forward", "clock_total": total},
    )
    return out, TimeChangeMap(uv.times.copy(), a_vals, {"direction": "forward"})


def time_change_inverse(
    hk: UVTrajectory, n_out: int | None = None
) -> tuple[UVTrajectory, TimeChangeMap]:
    """Invert the clock: accumulate 1/F along a changed-time path and resample
    on a uniform grid of the recovered original time."""
    f_vals = np.maximum(_f_of_pair(hk.u, hk.v), 1e-15)
    dt_segs = np.diff(hk.times)
    inv = 1.0 / f_vals
    a_vals = np.concatenate([[0.0], np.cumsum(0.5 * (inv[1:] + inv[:-1]) * dt_segs)])
    total = float(a_vals[-1])
    n_out = len(hk) if n_out is None else int(n_out)
    t_grid = np.linspace(0.0, total, n_out)
    eta = np.interp(t_grid, a_vals, hk.times)
    u_vals = np.interp(eta, hk.times, hk.u)
    v_vals = np.interp(eta, hk.times, hk.v)
    out = UVTrajectory(
        t_grid,
        np.stack([u_vals, v_vals], axis=1),
        {"derived": "time_change_inverse", "clock_total": total},
    )
    return out, TimeChangeMap(hk.times.copy(), a_vals, {"direction": "inverse"})


def quadratic_variation(values, dt: float) -> float:
    """Trapezoid integral of the squared path over its (uniform) grid."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or len(arr) < 2:
        raise ValueError("quadratic_variation expects a 1-D path with >= 2 samples")
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    return float(_trapz(arr * arr, dx=dt))
