"""Deterministic conservative dynamics: the quadratic vector field, its conserved
pair, orbit geometry, flow integration, periods, and the two phase-space symmetries.

The system is  xi' = B(xi, xi)  for the symmetric bilinear form

    B(a, b) = 1/2 * ( a_y b_z + b_y a_z,
                      a_x b_z + b_x a_z,
                      -2 a_x b_y - 2 b_x a_y )

which conserves both components of  Phi(x, y, z) = (2x^2 + z^2, 2y^2 + z^2).
Level sets of Phi with u != v and min(u, v) > 0 are simple periodic orbits; the
coordinate axes are lines of fixed points; u = v > 0 carries heteroclinic
connections between the z-axis fixed points.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .special import agm_ke

__all__ = [
    "State3",
    "ConservedPair",
    "OrbitClass",
    "OrbitKind",
    "Trajectory",
    "bilinear",
    "drift",
    "phi",
    "sn",
    "classify",
    "flow",
    "flow_batch",
    "period",
    "orbit_point",
    "apply_sym_e",
    "apply_sym_pm",
    "DIAGONAL_GUARD",
]

# Relative |u - v| below which the level set is treated as heteroclinic:
# the elliptic period diverges logarithmically there.
DIAGONAL_GUARD = 1e-12


class State3(NamedTuple):
    """A phase-space point (x, y, z)."""

    x: float
    y: float
    z: float


class ConservedPair(NamedTuple):
    """The conserved pair (u, v) = (2x^2 + z^2, 2y^2 + z^2)."""

    u: float
    v: float


class OrbitKind(enum.Enum):
    PERIODIC_PLUS = "PeriodicPlus"
    PERIODIC_MINUS = "PeriodicMinus"
    FIXED_POINT_LINE = "FixedPointLine"
    HETEROCLINIC = "Heteroclinic"


class OrbitClass(NamedTuple):
    """Classification of the level set through a state."""

    kind: OrbitKind
    pair: ConservedPair


@dataclass
class Trajectory:
    """A time-stamped sample path.

    times: strictly increasing 1-D array; states: (len(times), d) array with
    d = 3 for full paths.  meta records step size, method tag and seeds.
    """

    times: np.ndarray
    states: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.times.ndim != 1 or self.states.ndim != 2:
            raise ValueError("times must be 1-D and states 2-D")
        if len(self.times) != len(self.states):
            raise ValueError("times and states must have equal length")
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("times must be strictly increasing")

    @property
    def horizon(self) -> float:
        return float(self.times[-1] - self.times[0])

    def __len__(self) -> int:
        return len(self.times)


def _as_xyz(state) -> tuple[float, float, float]:
    x, y, z = state
    return float(x), float(y), float(z)


def bilinear(a, b) -> State3:
    """The symmetric bilinear form B(a, b); B(a, b) == B(b, a)."""
    ax, ay, az = _as_xyz(a)
    bx, by, bz = _as_xyz(b)
    return State3(
        0.5 * (ay * bz + by * az),
        0.5 * (ax * bz + bx * az),
        0.5 * (-2.0 * ax * by - 2.0 * bx * ay),
    )


def drift(state) -> State3:
    """B(xi, xi): the deterministic vector field."""
    x, y, z = _as_xyz(state)
    return State3(y * z, x * z, -2.0 * x * y)


def phi(state) -> ConservedPair:
    """The conserved pair (2x^2 + z^2, 2y^2 + z^2)."""
    x, y, z = _as_xyz(state)
    return ConservedPair(2.0 * x * x + z * z, 2.0 * y * y + z * z)


def sn(state) -> int:
    """Orbit-branch sign: +1 where |x| > |y| (sign of x), -1 where |y| > |x|
    (sign of y), and 0 on the separating set |x| = |y| (callers must branch
    explicitly there)."""
    x, y, _ = _as_xyz(state)
    if abs(x) > abs(y):
        return 1 if x > 0 else -1
    if abs(y) > abs(x):
        return 1 if y > 0 else -1
    return 0


def classify(state) -> OrbitClass:
    """Classify the level set through `state`.

    Fixed-point lines are the three coordinate axes {(0,0,z)}, {(x,0,0)},
    {(0,y,0)}; u = v > 0 off the axes is heteroclinic; everything else is a
    periodic orbit whose branch is the sign from `sn`.
    """
    x, y, z = _as_xyz(state)
    pair = phi(state)
    on_axis = (x == 0.0 and y == 0.0) or (y == 0.0 and z == 0.0) or (x == 0.0 and z == 0.0)
    if on_axis:
        return OrbitClass(OrbitKind.FIXED_POINT_LINE, pair)
    if abs(x) == abs(y):
        return OrbitClass(OrbitKind.HETEROCLINIC, pair)
    kind = OrbitKind.PERIODIC_PLUS if sn(state) > 0 else OrbitKind.PERIODIC_MINUS
    return OrbitClass(kind, pair)


def apply_sym_e(state) -> State3:
    """The coordinate-exchange involution (x, y, z) -> (y, x, z)."""
    x, y, z = _as_xyz(state)
    return State3(y, x, z)


def apply_sym_pm(state) -> State3:
    """The sign-flip involution (x, y, z) -> (-x, -y, z)."""
    x, y, z = _as_xyz(state)
    return State3(-x, -y, z)


# ---------------------------------------------------------------------------
# Flow integration: classical RK4 plus one Newton projection step back onto
# the conserved level set after every step.  The projection removes the
# secular drift of Phi that a bare one-step method accumulates on long
# horizons; one Newton iteration is enough because the RK4 defect is O(dt^5).
# ---------------------------------------------------------------------------


def _rk4_project_steps(x, y, z, u0, v0, dt: float, n_steps: int, record=None):
    """Advance component arrays (x, y, z) in place-ish for n_steps.

    x, y, z, u0, v0 are same-shape float arrays.  `record`, when given, is a
    callable invoked as record(i, x, y, z) after step i (1-based).  Returns the
    final arrays and the maximum absolute Phi defect seen at recorded steps.
    """
    max_defect = np.zeros_like(x)
    half = 0.5 * dt
    sixth = dt / 6.0
    for i in range(1, n_steps + 1):
        k1x = y * z
        k1y = x * z
        k1z = -2.0 * x * y
        x2 = x + half * k1x
        y2 = y + half * k1y
        z2 = z + half * k1z
        k2x = y2 * z2
        k2y = x2 * z2
        k2z = -2.0 * x2 * y2
        x3 = x + half * k2x
        y3 = y + half * k2y
        z3 = z + half * k2z
        k3x = y3 * z3
        k3y = x3 * z3
        k3z = -2.0 * x3 * y3
        x4 = x + dt * k3x
        y4 = y + dt * k3y
        z4 = z + dt * k3z
        k4x = y4 * z4
        k4y = x4 * z4
        k4z = -2.0 * x4 * y4
        x = x + sixth * (k1x + 2.0 * (k2x + k3x) + k4x)
        y = y + sixth * (k1y + 2.0 * (k2y + k3y) + k4y)
        z = z + sixth * (k1z + 2.0 * (k2z + k3z) + k4z)

        # One Newton step for g(xi) = (Phi(xi) - (u0, v0)) = 0 along the
        # Jacobian's row space: xi <- xi - J^T (J J^T)^{-1} g.
        g1 = 2.0 * x * x + z * z - u0
        g2 = 2.0 * y * y + z * z - v0
        zz4 = 4.0 * z * z
        a11 = 16.0 * x * x + zz4
        a22 = 16.0 * y * y + zz4
        det = a11 * a22 - zz4 * zz4
        # Near the fixed-point axes the normal equations degenerate; skip the
        # projection there (Phi is exactly conserved on the axes anyway).
        safe = det > 1e-300
        inv_det = np.where(safe, 1.0 / np.where(safe, det, 1.0), 0.0)
        lam1 = (a22 * g1 - zz4 * g2) * inv_det
        lam2 = (a11 * g2 - zz4 * g1) * inv_det
        x = x - 4.0 * x * lam1
        y = y - 4.0 * y * lam2
        z = z - 2.0 * z * (lam1 + lam2)

        if record is not None:
            record(i, x, y, z)
        defect = np.maximum(np.abs(2.0 * x * x + z * z - u0), np.abs(2.0 * y * y + z * z - v0))
        np.maximum(max_defect, defect, out=max_defect)
    return x, y, z, max_defect


def flow(xi0, T: float, dt: float = 1e-3, store_every: int = 1) -> Trajectory:
    """Integrate the conservative flow from xi0 over [0, T].

    Classical 4th-order stepping with a per-step Newton projection back onto
    the level set Phi(xi) = Phi(xi0).  Samples every `store_every` steps (the
    final partial step, if any, is included so the path always reaches T).
    """
    x0, y0, z0 = _as_xyz(xi0)
    if not all(math.isfinite(c) for c in (x0, y0, z0)):
        raise ValueError("flow requires finite initial state")
    if T <= 0 or dt <= 0:
        raise ValueError("flow requires T > 0 and dt > 0")
    n_steps = max(1, int(round(T / dt)))
    step = T / n_steps
    u0 = np.array(2.0 * x0 * x0 + z0 * z0)
    v0 = np.array(2.0 * y0 * y0 + z0 * z0)

    kept = list(range(0, n_steps + 1, store_every))
    if kept[-1] != n_steps:
        kept.append(n_steps)
    keep_at = {s: j for j, s in enumerate(kept)}
    states = np.empty((len(kept), 3))
    states[0] = (x0, y0, z0)

    def record(i, xs, ys, zs):
        j = keep_at.get(i)
        if j is not None:
            states[j] = (float(xs), float(ys), float(zs))

    x, y, z, defect = _rk4_project_steps(
        np.array(x0), np.array(y0), np.array(z0), u0, v0, step, n_steps, record
    )
    times = np.array([s * step for s in kept])
    meta = {
        "method": "rk4-projected",
        "dt": step,
        "max_phi_defect": float(defect),
    }
    return Trajectory(times, states, meta)


def flow_batch(states0, T: float, dt: float = 1e-3):
    """Integrate many initial states at once; returns (final_states, max_defect).

    final_states is (n, 3); max_defect is the per-state maximum absolute
    deviation of either conserved component along the whole path.
    """
    arr = np.asarray(states0, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError("states0 must be (n, 3)")
    if not np.all(np.isfinite(arr)):
        raise ValueError("flow_batch requires finite initial states")
    n_steps = max(1, int(round(T / dt)))
    step = T / n_steps
    x = arr[:, 0].copy()
    y = arr[:, 1].copy()
    z = arr[:, 2].copy()
    u0 = 2.0 * x * x + z * z
    v0 = 2.0 * y * y + z * z
    x, y, z, defect = _rk4_project_steps(x, y, z, u0, v0, step, n_steps)
    return np.stack([x, y, z], axis=1), defect


def period(u: float, v: float) -> float:
    """Period of the orbit on the level set (u, v).

    tau(u, v) = 4 K(m) / sqrt(max(u, v)) with m = min(u, v)/max(u, v), K the
    complete elliptic integral of the first kind in the parameter convention
    m = k^2.  Returns +inf within relative 1e-12 of the diagonal (heteroclinic
    level sets have no finite period); rejects min(u, v) <= 0.
    """
    u = float(u)
    v = float(v)
    lo, hi = (u, v) if u <= v else (v, u)
    if lo <= 0.0:
        raise ValueError("period requires min(u, v) > 0")
    if (hi - lo) / hi < DIAGONAL_GUARD:
        return math.inf
    k_val, _ = agm_ke(lo / hi)
    return 4.0 * k_val / math.sqrt(hi)


def orbit_point(u: float, v: float, sign: int, theta: float) -> State3:
    """The point of the periodic orbit on level set (u, v), branch `sign`, at
    phase `theta`.

    z = sqrt(min(u, v)) * sin(theta); the smaller-amplitude coordinate is
    proportional to cos(theta) (it vanishes where |z| peaks), while the
    larger-amplitude coordinate never vanishes and carries the compressed
    angle arcsin(sqrt(min/max) * sin(theta)).  sign=-1 applies the sign-flip
    symmetry, so the branch equals `sign` wherever the branch sign is defined.
    """
    u = float(u)
    v = float(v)
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    lo, hi = (u, v) if u <= v else (v, u)
    if lo <= 0.0:
        raise ValueError("orbit_point requires min(u, v) > 0")
    if (hi - lo) / hi < DIAGONAL_GUARD:
        raise ValueError("orbit_point rejects u = v (heteroclinic level set)")
    ratio = lo / hi
    s = math.sin(theta)
    small_cos = math.sqrt(max(1.0 - ratio * s * s, 0.0))
    big_cos = math.cos(theta)
    z = math.sqrt(lo) * s
    if u >= v:
        x = math.sqrt(u / 2.0) * small_cos
        y = math.sqrt(v / 2.0) * big_cos
    else:
        x = math.sqrt(u / 2.0) * big_cos
        y = math.sqrt(v / 2.0) * small_cos
    point = State3(x, y, z)
    return apply_sym_pm(point) if sign < 0 else point
