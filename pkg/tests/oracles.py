"""Independent oracles for derived expected values.

Everything here is deliberately written from scratch against the defining
equations — a plain scalar RK4 on the vector field, event detection by cubic
Hermite refinement, literal quadrature of the angle integrals — and shares no
code with the package beyond the test boundary.  Frozen constants in the test
modules were produced by these functions; the generating calls are kept in
tests so drift is caught.

Run as a script to print the frozen values:

    python3 tests/oracles.py
"""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import quad
from scipy.special import ellipe, ellipk


# ---------------------------------------------------------------------------
# deterministic flow: plain RK4 + Hermite-refined return times
# ---------------------------------------------------------------------------

def field(state):
    """The quadratic vector field, written out componentwise."""
    x, y, z = state
    return np.array([y * z, x * z, -2.0 * x * y])


def rk4_step(state, dt):
    k1 = field(state)
    k2 = field(state + 0.5 * dt * k1)
    k3 = field(state + 0.5 * dt * k2)
    k4 = field(state + dt * k3)
    return state + (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)


def _hermite_root(t0, f0, d0, t1, f1, d1):
    """Root of the cubic Hermite interpolant on [t0, t1], assuming exactly one
    sign change; bisection on the interpolant keeps it robust."""
    h = t1 - t0
    lo, hi = 0.0, 1.0
    for _ in range(80):
        s = 0.5 * (lo + hi)
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        val = h00 * f0 + h10 * h * d0 + h01 * f1 + h11 * h * d1
        if (val < 0) == (f0 < 0):
            lo = s
        else:
            hi = s
    return t0 + 0.5 * (lo + hi) * h


def start_state(u, v):
    """A point on the level set with z = 0 and both other coordinates at their
    extremes: (sqrt(u/2), sqrt(v/2), 0)."""
    return np.array([math.sqrt(u / 2.0), math.sqrt(v / 2.0), 0.0])


def period_return_oracle(u, v, dt=1e-4):
    """Orbit period via the return time of z to zero with the starting slope
    sign.  z completes one sine-like cycle per orbit loop, so the first
    crossing whose slope matches the initial one closes the orbit."""
    state = start_state(u, v)
    sign0 = 1.0 if field(state)[2] >= 0 else -1.0
    t = 0.0
    prev = state
    prev_d = field(prev)[2]
    max_steps = int(200.0 / math.sqrt(min(u, v)) / dt) + 10
    for _ in range(max_steps):
        nxt = rk4_step(prev, dt)
        z0, z1 = prev[2], nxt[2]
        if (z0 < 0) != (z1 < 0):
            d1 = field(nxt)[2]
            t_cross = _hermite_root(t, z0, prev_d, t + dt, z1, d1)
            slope_sign = 1.0 if z1 > z0 else -1.0
            if slope_sign == sign0 and t_cross > dt:
                return t_cross
            prev, prev_d, t = nxt, d1, t + dt
            continue
        prev = nxt
        prev_d = field(prev)[2]
        t += dt
    raise RuntimeError(f"no return found for (u, v)=({u}, {v})")


def lambda_time_average_oracle(ratio, dt=1e-4):
    """Time average of z**2 over one orbit of the (1, ratio) level set,
    divided by the smaller invariant — an augmented-ODE route to the shape
    function that never touches elliptic integrals.

    Integrates (state, I) with I' = z**2 by RK4 up to the oracle period.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie strictly between 0 and 1")
    period = period_return_oracle(1.0, ratio, dt=dt)
    aug = np.append(start_state(1.0, ratio), 0.0)

    def aug_field(s):
        return np.append(field(s[:3]), s[2] * s[2])

    n_full = int(period / dt)
    rem = period - n_full * dt

    def step(s, h):
        k1 = aug_field(s)
        k2 = aug_field(s + 0.5 * h * k1)
        k3 = aug_field(s + 0.5 * h * k2)
        k4 = aug_field(s + h * k3)
        return s + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)

    for _ in range(n_full):
        aug = step(aug, dt)
    aug = step(aug, rem)
    lo = min(1.0, ratio)
    return aug[3] / (period * lo)


# ---------------------------------------------------------------------------
# elliptic / angle-integral oracles (scipy closed forms and literal quadrature)
# ---------------------------------------------------------------------------

def lambda_closed_form(m):
    """(K - E) / (m K) via scipy's elliptic integrals."""
    return (ellipk(m) - ellipe(m)) / (m * ellipk(m))


def lambda_quadrature(m):
    """Literal angle integral: the weighted mean of sin**2 under the orbit
    occupation density, computed by adaptive quadrature."""
    num = quad(lambda t: math.sin(t) ** 2 / math.sqrt(1 - m * math.sin(t) ** 2),
               0.0, math.pi / 2.0, epsabs=1e-13, epsrel=1e-13)[0]
    den = quad(lambda t: 1.0 / math.sqrt(1 - m * math.sin(t) ** 2),
               0.0, math.pi / 2.0, epsabs=1e-13, epsrel=1e-13)[0]
    return num / den


def occupation_normalizer_quadrature(r):
    """Full-circle integral of 1 / sqrt(1 - r sin(t)**2): equals 4 K(r)."""
    return 4.0 * quad(lambda t: 1.0 / math.sqrt(1 - r * math.sin(t) ** 2),
                      0.0, math.pi / 2.0, epsabs=1e-12, epsrel=1e-12)[0]


def k_norm_literal(r):
    """Literal reading of the normalizing-constant formula with the inner
    sine scaled by the ratio itself (cos(arcsin(r sin t)) in the denominator),
    i.e. reciprocal of the full-circle integral of 1/sqrt(1 - r**2 sin**2)."""
    total = 4.0 * quad(lambda t: 1.0 / math.sqrt(1 - (r * math.sin(t)) ** 2),
                       0.0, math.pi / 2.0, epsabs=1e-12, epsrel=1e-12)[0]
    return 1.0 / total


# ---------------------------------------------------------------------------
# slow-equation oracles
# ---------------------------------------------------------------------------

def limit_mean_exact(u0, sigma1, t):
    """E U_t for the slow first component: linear drift 2*sigma1**2 - 2u makes
    the mean an exact exponential relaxation regardless of the diffusion."""
    s2 = sigma1 * sigma1
    return s2 + (u0 - s2) * math.exp(-2.0 * t)


def drift_only_euler(u0, sigma1, t_final, dt):
    """Euler integration of the noiseless slow drift, as a second route to the
    exponential relaxation."""
    u = u0
    n = int(round(t_final / dt))
    for _ in range(n):
        u += dt * (2.0 * sigma1 * sigma1 - 2.0 * u)
    return u


if __name__ == "__main__":
    np.set_printoptions(precision=17)
    pairs = [(3.0, 1.0), (2.25, 0.75), (1.0, 0.25), (5.0, 4.0), (1.0, 1e-3)]
    for u, v in pairs:
        print(f"period({u}, {v}) = {period_return_oracle(u, v):.17g}")
    for r in (0.5, 1.0 / 3.0, 0.25, 0.9):
        print(f"lambda_time_average({r}) = {lambda_time_average_oracle(r):.17g}")
        print(f"lambda_closed_form({r})  = {lambda_closed_form(r):.17g}")
        print(f"lambda_quadrature({r})   = {lambda_quadrature(r):.17g}")
    for r in (0.3, 0.9, 1.0 - 1e-6):
        print(f"occ_norm({r})       = {occupation_normalizer_quadrature(r):.17g}")
        print(f"k_norm_literal({r}) = {k_norm_literal(r):.17g}")
    print(f"limit_mean_exact(1.5, 0.5, 1.0) = {limit_mean_exact(1.5, 0.5, 1.0):.17g}")
    print(f"drift_only_euler(1.5, 0.5, 1.0, 1e-6) = {drift_only_euler(1.5, 0.5, 1.0, 1e-6):.17g}")
