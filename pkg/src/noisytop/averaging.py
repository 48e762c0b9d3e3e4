"""Averages along deterministic orbits.

The occupation (time) measure of the periodic orbit on level set (u, v) with
ratio r = min/max has density proportional to 1/sqrt(1 - r sin^2 theta) in the
phase theta of `orbit_point`.  Everything in this module derives from that:

* lambda_fn(r) — the normalized time average of z^2/min(u, v), in closed form
  (K(r) - E(r)) / (r K(r)) with removable endpoints 1/2 at 0 and 1 at 1;
* gamma_fn(u, v) = min(u, v) * lambda_fn(r) — the time average of z^2;
* f_fn / g_fn — the clock and diffusion factors built from lambda_fn, with the
  floor branch below ratio 1/2;
* k_norm(r) — the occupation normalization constant, by adaptive quadrature;
* orbit_average / nu_average — weighted quadrature of arbitrary observables
  against the occupation density (orbit branches separately or mixed 50/50);
* near_diagonal_expansion — the two-term behaviour of nu_average as the level
  set approaches the diagonal u = v.

All closed forms are cross-checked in the tests against an independent
ODE-integration oracle (time averages along the actual flow).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.integrate import quad

from . import dynamics
from .special import agm_ke

__all__ = [
    "EllipticPair",
    "AveragedCoefficients",
    "NearDiagonalResult",
    "elliptic_ke",
    "lambda_fn",
    "gamma_fn",
    "f_fn",
    "g_fn",
    "k_norm",
    "orbit_average",
    "nu_average",
    "near_diagonal_expansion",
    "averaged_coefficients",
    "sample_orbit_states",
    "RATIO_FLOOR",
    "LAMBDA_HALF",
    "F_FLOOR",
]

# Below this ratio the clock factor F freezes at its ratio-1/2 value.
RATIO_FLOOR = 0.5

# Parameter below which lambda uses its series (K - E cancels catastrophically
# as m -> 0; the m^3 series term is ~0.02 m^3, far below double noise there).
_SERIES_CUT = 1e-4


class EllipticPair(NamedTuple):
    """Complete elliptic integrals at parameter m (convention m = k^2)."""

    m: float
    k: float
    e: float


@dataclass(frozen=True)
class AveragedCoefficients:
    """All orbit-averaged coefficients at one (u, v)."""

    u: float
    v: float
    gamma: float  # time average of z^2
    x2: float  # time average of x^2 = (u - gamma)/2
    y2: float  # time average of y^2 = (v - gamma)/2
    f: float  # clock factor F(u, v)
    g_uv: float  # diffusion factor G(u, v)


@dataclass(frozen=True)
class NearDiagonalResult:
    """Near-diagonal expansion output: either the leading fixed-point average
    or the coefficient of the 1/(2|ln(1-r)|) correction term."""

    order: str
    value: float
    diverged: bool
    error: float


def elliptic_ke(m: float) -> EllipticPair:
    """K(m) and E(m) by the arithmetic-geometric mean, for m in [0, 1)."""
    m = float(m)
    k_val, e_val = agm_ke(m)
    return EllipticPair(m, k_val, e_val)


def _lambda_array(r: np.ndarray) -> np.ndarray:
    out = np.empty_like(r)
    tiny = r < _SERIES_CUT
    one = r >= 1.0
    mid = ~tiny & ~one
    rt = r[tiny]
    out[tiny] = 0.5 + rt / 16.0 + rt * rt / 32.0
    out[one] = 1.0
    if np.any(mid):
        rm = r[mid]
        k_val, e_val = agm_ke(rm)
        out[mid] = (k_val - e_val) / (rm * k_val)
    return out


def lambda_fn(r):
    """Normalized orbit average of z^2 as a function of the level-set ratio.

    Strictly increasing from 1/2 at r=0 to 1 at r=1.  Accepts scalars or
    arrays; rejects arguments outside [0, 1].
    """
    arr = np.asarray(r, dtype=float)
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError("lambda_fn requires r in [0, 1]")
    out = _lambda_array(np.atleast_1d(arr))
    if arr.ndim == 0:
        return float(out[0])
    return out.reshape(arr.shape)


def gamma_fn(u, v):
    """Orbit average of z^2 on level set (u, v): min(u,v) * lambda(min/max).

    Symmetric, zero when either argument is zero, and bounded by min(u, v).
    """
    u_arr = np.asarray(u, dtype=float)
    v_arr = np.asarray(v, dtype=float)
    if np.any(u_arr < 0.0) or np.any(v_arr < 0.0):
        raise ValueError("gamma_fn requires u, v >= 0")
    lo = np.minimum(u_arr, v_arr)
    hi = np.maximum(u_arr, v_arr)
    ratio = np.divide(lo, hi, out=np.ones_like(lo), where=hi > 0.0)
    out = lo * _lambda_array(np.atleast_1d(ratio)).reshape(ratio.shape)
    if u_arr.ndim == 0 and v_arr.ndim == 0:
        return float(out)
    return out


def f_fn(u, v):
    """Clock factor F: 1 - lambda(ratio) above ratio 1/2, frozen at the
    ratio-1/2 value below it.  Vanishes only on the diagonal u = v."""
    u_arr = np.asarray(u, dtype=float)
    v_arr = np.asarray(v, dtype=float)
    if np.any(u_arr <= 0.0) or np.any(v_arr <= 0.0):
        raise ValueError("f_fn requires u, v > 0")
    lo = np.minimum(u_arr, v_arr)
    hi = np.maximum(u_arr, v_arr)
    ratio = np.maximum(lo / hi, RATIO_FLOOR)
    out = 1.0 - _lambda_array(np.atleast_1d(ratio)).reshape(ratio.shape)
    if u_arr.ndim == 0 and v_arr.ndim == 0:
        return float(out)
    return out


def g_fn(h, k):
    """Diffusion factor G = (1 - lambda(ratio)) / F; identically 1 at or above
    ratio 1/2, and > 1 below it (the clock floor kicks in)."""
    h_arr = np.asarray(h, dtype=float)
    k_arr = np.asarray(k, dtype=float)
    if np.any(h_arr <= 0.0) or np.any(k_arr <= 0.0):
        raise ValueError("g_fn requires h, k > 0")
    lo = np.minimum(h_arr, k_arr)
    hi = np.maximum(h_arr, k_arr)
    ratio = lo / hi
    lam = _lambda_array(np.atleast_1d(ratio)).reshape(ratio.shape)
    out = np.where(ratio >= RATIO_FLOOR, 1.0, (1.0 - lam) / F_FLOOR)
    if h_arr.ndim == 0 and k_arr.ndim == 0:
        return float(out)
    return out


# The two module-level constants most formulas reuse.
LAMBDA_HALF = float(lambda_fn(0.5))
F_FLOOR = 1.0 - LAMBDA_HALF


def k_norm(r: float) -> float:
    """Occupation-density normalization on a ratio-r level set.

    The unnormalized density over one full phase revolution integrates to
    int_0^{2pi} dtheta / sqrt(1 - r sin^2 theta); k_norm is the reciprocal.
    Computed by adaptive quadrature (independent of the AGM route, which the
    tests use as a cross-check).  Rejects r outside (0, 1).
    """
    r = float(r)
    if not 0.0 < r < 1.0:
        raise ValueError("k_norm requires 0 < r < 1")
    total, err = _occupation_normalizer(r)
    if not math.isfinite(total) or err > 1e-8 * total:
        raise RuntimeError(
            f"occupation normalizer quadrature did not converge (err={err:.3e})"
        )
    return 1.0 / total


def _occupation_normalizer(r: float) -> tuple[float, float]:
    """int_0^{2pi} dtheta / sqrt(1 - r sin^2 theta) with its error estimate.

    By symmetry this is 4x the quarter integral.  Near r = 1 the integrand
    peaks like 1/|cos theta| at theta = pi/2; substituting
    theta = pi/2 - arcsinh-type stretching via t = arctanh(cos theta) keeps the
    adaptive rule honest: dtheta/cos theta = -dt and
    cos theta = sech t turns the quarter integral into
    int_0^inf sech t / sqrt(1 - r + r sech^2 t ... ) — implemented below
    directly as int_0^inf dt * sech t / sqrt(1 - r tanh^2 t ...).
    """
    # Quarter integral, substitution t = arctanh(sin theta):
    #   sin theta = tanh t, cos theta d theta = sech^2 t dt,
    #   d theta = sech t dt, 1 - r sin^2 theta = 1 - r tanh^2 t.
    def integrand(t: float) -> float:
        th = math.tanh(t)
        return (1.0 / math.cosh(t)) / math.sqrt(1.0 - r * th * th)

    val, err = quad(integrand, 0.0, 40.0, limit=200)
    return 4.0 * val, 4.0 * err


def _orbit_quadrature(func: Callable[[float], float], r: float) -> tuple[float, float]:
    """int_0^{2pi} func(theta) / sqrt(1 - r sin^2 theta) dtheta via the
    arctanh substitution on each quadrant (robust to the near-singular peaks
    at theta = pi/2 and 3pi/2 as r -> 1)."""
    # Quadrant maps: theta = q0 + s * arcsin(tanh t), t in [0, inf).
    total = 0.0
    err_total = 0.0
    for q0, s in ((0.0, 1.0), (math.pi, -1.0), (math.pi, 1.0), (2.0 * math.pi, -1.0)):

        def integrand(t: float, q0=q0, s=s) -> float:
            sin_th = math.tanh(t)
            theta = q0 + s * math.asin(sin_th)
            sech = 1.0 / math.cosh(t)
            return func(theta) * sech / math.sqrt(1.0 - r * sin_th * sin_th)

        val, err = quad(integrand, 0.0, 40.0, limit=400)
        total += val
        err_total += err
    return total, err_total


def orbit_average(
    psi: Callable[[float, float, float], float], u: float, v: float, sign: int = 1
) -> float:
    """Time average of psi(x, y, z) over the periodic orbit on (u, v), branch
    `sign`.

    On the diagonal u = v (within the heteroclinic guard) the orbit measures
    collapse onto the z-axis fixed points and the average is
    (psi(0,0,sqrt(u)) + psi(0,0,-sqrt(u)))/2 for either sign.
    Raises if the adaptive quadrature cannot certify its error estimate.
    """
    u = float(u)
    v = float(v)
    if u <= 0.0 or v <= 0.0:
        raise ValueError("orbit_average requires u, v > 0")
    lo, hi = min(u, v), max(u, v)
    if (hi - lo) / hi < dynamics.DIAGONAL_GUARD:
        root = math.sqrt(u)
        return 0.5 * (psi(0.0, 0.0, root) + psi(0.0, 0.0, -root))
    r = lo / hi

    def weighted(theta: float) -> float:
        x, y, z = dynamics.orbit_point(u, v, sign, theta)
        return psi(x, y, z)

    total, err = _orbit_quadrature(weighted, r)
    norm, norm_err = _occupation_normalizer(r)
    value = total / norm
    err_combined = (err + norm_err * abs(value)) / norm
    if err_combined > 1e-7 * (1.0 + abs(value)):
        raise RuntimeError(
            f"orbit_average quadrature did not converge "
            f"(error estimate {err_combined:.3e} at (u, v)=({u:g}, {v:g}))"
        )
    return value


def nu_average(psi: Callable[[float, float, float], float], u: float, v: float) -> float:
    """Average of psi against the 50/50 mixture of the two orbit branches."""
    return 0.5 * (orbit_average(psi, u, v, 1) + orbit_average(psi, u, v, -1))


def averaged_coefficients(u: float, v: float) -> AveragedCoefficients:
    """Bundle gamma, the coordinate second moments, F and G at one (u, v)."""
    u = float(u)
    v = float(v)
    if u <= 0.0 or v <= 0.0:
        raise ValueError("averaged_coefficients requires u, v > 0")
    gam = gamma_fn(u, v)
    return AveragedCoefficients(
        u=u,
        v=v,
        gamma=gam,
        x2=0.5 * (u - gam),
        y2=0.5 * (v - gam),
        f=f_fn(u, v),
        g_uv=g_fn(u, v),
    )


def near_diagonal_expansion(
    psi: Callable[[float, float, float], float], u: float, order: str = "leading"
) -> NearDiagonalResult:
    """Behaviour of nu_average(psi, u, v) as v -> u.

    order="leading": the limit value (psi(0,0,sqrt u) + psi(0,0,-sqrt u))/2.
    order="log": the coefficient C of the C/(2|ln(1-r)|) correction — finite
    exactly when psi's fixed-point average vanishes fast enough at the poles;
    computed by quadrature of

        C_u(psi) = int_0^{2pi} psi(sqrt(u) cos t, sqrt(u) cos t, sqrt(u) sin t)
                   / |cos t| dt

    over the u = v figure; divergence is detected by comparing truncations and
    reported via the `diverged` flag (value = +inf).
    """
    u = float(u)
    if u <= 0.0:
        raise ValueError("near_diagonal_expansion requires u > 0")
    if order == "leading":
        root = math.sqrt(u)
        val = 0.5 * (psi(0.0, 0.0, root) + psi(0.0, 0.0, -root))
        return NearDiagonalResult("leading", val, False, 0.0)
    if order != "log":
        raise ValueError("order must be 'leading' or 'log'")

    root = math.sqrt(u)

    # alpha = sin t on each quadrant; dt/|cos t| = dalpha/(1 - alpha^2).
    def quadrant_sum(alpha: float) -> float:
        c = math.sqrt(max(1.0 - alpha * alpha, 0.0))
        total = 0.0
        for cs, ss in ((c, alpha), (-c, alpha), (-c, -alpha), (c, -alpha)):
            total += psi(root * cs, root * cs, root * ss)
        return total / (1.0 - alpha * alpha)

    # A convergent integrand loses O(cut) when the endpoint is trimmed at
    # 1 - cut, so successive truncations shrink geometrically; a log-divergent
    # one gains a fixed increment per decade of cut.  Compare the increments.
    cuts = (1e-4, 1e-6, 1e-8)
    values = []
    errors = []
    for cut in cuts:
        val, err = quad(quadrant_sum, 0.0, 1.0 - cut, limit=400)
        values.append(val)
        errors.append(err)
    scale = max(abs(values[-1]), 1.0)
    inc_early = abs(values[1] - values[0])
    inc_late = abs(values[2] - values[1])
    diverged = inc_late > 0.25 * inc_early + 1e-9 * scale
    if diverged:
        return NearDiagonalResult("log", math.inf, True, float("nan"))
    return NearDiagonalResult("log", values[-1], False, max(errors[-1], inc_late))


def sample_orbit_states(
    u: float, v: float, n: int, rng: np.random.Generator, sign: int | None = None
) -> np.ndarray:
    """Draw n states from the occupation measure of the orbit on (u, v).

    sign=None mixes the two branches 50/50 (the symmetric orbit mixture);
    sign=+-1 restricts to one branch.  Sampling is inverse-CDF on a fine phase
    grid; accuracy is far below statistical resolution for any reasonable n.
    """
    u = float(u)
    v = float(v)
    lo, hi = min(u, v), max(u, v)
    if lo <= 0.0 or (hi - lo) / hi < dynamics.DIAGONAL_GUARD:
        raise ValueError("sample_orbit_states requires u, v > 0 and u != v")
    r = lo / hi
    grid = np.linspace(0.0, 2.0 * math.pi, 8193)
    density = 1.0 / np.sqrt(1.0 - r * np.sin(grid) ** 2)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (density[1:] + density[:-1]) * np.diff(grid))])
    cdf /= cdf[-1]
    thetas = np.interp(rng.random(n), cdf, grid)
    ratio = lo / hi
    s = np.sin(thetas)
    small_cos = np.sqrt(np.maximum(1.0 - ratio * s * s, 0.0))
    big_cos = np.cos(thetas)
    z = math.sqrt(lo) * s
    if u >= v:
        x = math.sqrt(u / 2.0) * small_cos
        y = math.sqrt(v / 2.0) * big_cos
    else:
        x = math.sqrt(u / 2.0) * big_cos
        y = math.sqrt(v / 2.0) * small_cos
    states = np.stack([x, y, z], axis=1)
    if sign is None:
        flip = rng.random(n) < 0.5
        states[flip, 0] *= -1.0
        states[flip, 1] *= -1.0
    elif sign == -1:
        states[:, 0] *= -1.0
        states[:, 1] *= -1.0
    elif sign != 1:
        raise ValueError("sign must be +1, -1 or None")
    return states
