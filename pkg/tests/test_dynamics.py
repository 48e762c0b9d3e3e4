"""Deterministic flow, conserved pair, orbit classification and periods."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noisytop import dynamics

import oracles

coord = st.floats(min_value=-5.0, max_value=5.0, allow_nan=False, width=64)


# ---------------------------------------------------------------------------
# algebraic structure of the field
# ---------------------------------------------------------------------------


@given(coord, coord, coord)
@settings(max_examples=300, deadline=None)
def test_drift_orthogonal_to_state(x, y, z):
    d = dynamics.drift((x, y, z))
    dot = d.x * x + d.y * y + d.z * z
    norm3 = (x * x + y * y + z * z) ** 1.5
    assert abs(dot) <= 1e-12 * max(norm3, 1e-300)


@given(coord, coord, coord, coord, coord, coord)
@settings(max_examples=200, deadline=None)
def test_bilinear_symmetric_and_diagonal_matches_drift(ax, ay, az, bx, by, bz):
    a, b = (ax, ay, az), (bx, by, bz)
    ab = dynamics.bilinear(a, b)
    ba = dynamics.bilinear(b, a)
    assert ab == ba
    d = dynamics.drift(a)
    aa = dynamics.bilinear(a, a)
    assert (aa.x, aa.y, aa.z) == pytest.approx((d.x, d.y, d.z), abs=1e-12)


def test_bilinear_is_polarization_of_drift():
    rng = np.random.default_rng(7)
    for _ in range(50):
        a, b = rng.normal(size=3), rng.normal(size=3)
        lhs = np.array(dynamics.bilinear(a, b))
        pol = 0.5 * (
            np.array(dynamics.drift(a + b)) - np.array(dynamics.drift(a)) - np.array(dynamics.drift(b))
        )
        np.testing.assert_allclose(lhs, pol, atol=1e-12)


def test_phi_values_and_symmetry_equivariance():
    s = (1.0, 0.5, 0.5)
    assert dynamics.phi(s) == (2.25, 0.75)
    e = dynamics.apply_sym_e(s)
    assert dynamics.phi(e) == (0.75, 2.25)  # exchange swaps the pair
    pm = dynamics.apply_sym_pm(s)
    assert dynamics.phi(pm) == (2.25, 0.75)  # sign flip preserves it
    # both maps are involutions
    assert dynamics.apply_sym_e(e) == dynamics.State3(*s)
    assert dynamics.apply_sym_pm(pm) == dynamics.State3(*s)


def test_classify_branches():
    cls = dynamics.classify((1.0, 0.5, 0.5))
    assert cls.kind is dynamics.OrbitKind.PERIODIC_PLUS
    assert cls.pair == (2.25, 0.75)
    assert dynamics.classify((-1.0, 0.5, 0.5)).kind is dynamics.OrbitKind.PERIODIC_MINUS
    assert dynamics.classify((0.5, 1.0, 0.5)).kind is dynamics.OrbitKind.PERIODIC_PLUS
    assert dynamics.classify((0.0, 0.0, 3.0)).kind is dynamics.OrbitKind.FIXED_POINT_LINE
    assert dynamics.classify((2.0, 0.0, 0.0)).kind is dynamics.OrbitKind.FIXED_POINT_LINE
    assert dynamics.classify((0.0, -1.5, 0.0)).kind is dynamics.OrbitKind.FIXED_POINT_LINE
    assert dynamics.classify((1.0, 1.0, 0.7)).kind is dynamics.OrbitKind.HETEROCLINIC
    assert dynamics.classify((1.0, -1.0, 0.7)).kind is dynamics.OrbitKind.HETEROCLINIC


def test_branch_sign_matches_dominant_coordinate():
    assert dynamics.sn((2.0, 1.0, 0.0)) == 1
    assert dynamics.sn((-2.0, 1.0, 0.0)) == -1
    assert dynamics.sn((0.5, -1.0, 0.3)) == -1
    assert dynamics.sn((1.0, -1.0, 0.3)) == 0


# ---------------------------------------------------------------------------
# orbit parametrization
# ---------------------------------------------------------------------------


def test_orbit_point_quarter_phase_closed_form():
    # at theta = pi/2 with u > v the smaller coordinate vanishes and
    # z reaches sqrt(v): the point is (sqrt((u - v)/2), 0, sqrt(v))
    u, v = 3.0, 1.0
    pt = dynamics.orbit_point(u, v, 1, math.pi / 2.0)
    assert pt.x == pytest.approx(math.sqrt((u - v) / 2.0), rel=1e-14)
    assert pt.y == pytest.approx(0.0, abs=1e-14)
    assert pt.z == pytest.approx(math.sqrt(v), rel=1e-14)


@pytest.mark.parametrize("u,v", [(3.0, 1.0), (1.0, 3.0), (2.25, 0.75), (0.4, 0.39)])
@pytest.mark.parametrize("sign", [1, -1])
def test_orbit_point_stays_on_level_set(u, v, sign):
    for theta in np.linspace(0.0, 2.0 * math.pi, 37):
        pt = dynamics.orbit_point(u, v, sign, float(theta))
        pu, pv = dynamics.phi(pt)
        assert pu == pytest.approx(u, rel=1e-12, abs=1e-12)
        assert pv == pytest.approx(v, rel=1e-12, abs=1e-12)
        # away from the degenerate phases the branch sign is `sign`
        s = dynamics.sn(pt)
        if s != 0:
            assert s == sign


def test_orbit_point_zero_phase_has_no_z():
    pt = dynamics.orbit_point(2.0, 1.0, 1, 0.0)
    assert pt.z == 0.0
    assert pt.x > 0 and pt.y > 0


def test_orbit_point_rejects_bad_sign():
    with pytest.raises(ValueError):
        dynamics.orbit_point(2.0, 1.0, 0, 0.3)


# ---------------------------------------------------------------------------
# flow: conservation, oracle cross-checks, batching
# ---------------------------------------------------------------------------


def test_flow_conserves_phi_to_projection_tolerance():
    traj = dynamics.flow((1.0, 0.5, 0.5), T=50.0, dt=1e-3, store_every=10)
    pairs = np.stack([2 * traj.states[:, 0] ** 2 + traj.states[:, 2] ** 2,
                      2 * traj.states[:, 1] ** 2 + traj.states[:, 2] ** 2], axis=1)
    drift_u = np.abs(pairs[:, 0] - 2.25).max()
    drift_v = np.abs(pairs[:, 1] - 0.75).max()
    assert max(drift_u, drift_v) < 1e-12


def test_flow_matches_independent_rk4_pointwise():
    # independent scalar RK4 (no projection) at a finer step should agree with
    # the projected path to well below either scheme's global error
    xi0 = np.array([1.0, 0.5, 0.5])
    traj = dynamics.flow(xi0, T=2.0, dt=1e-3)
    state = xi0.copy()
    for _ in range(20000):
        state = oracles.rk4_step(state, 1e-4)
    np.testing.assert_allclose(traj.states[-1], state, atol=5e-10)


def test_flow_returns_after_one_period():
    u, v = 2.25, 0.75
    tau = dynamics.period(u, v)
    xi0 = dynamics.orbit_point(u, v, 1, 0.3)
    traj = dynamics.flow(xi0, T=tau, dt=tau / 8000)
    np.testing.assert_allclose(traj.states[-1], np.array(xi0), atol=5e-9)


def test_flow_batch_agrees_with_single_flow():
    states0 = np.array([[1.0, 0.5, 0.5], [0.3, 1.2, -0.4], [-1.1, 0.2, 0.9]])
    finals, defect = dynamics.flow_batch(states0, T=5.0, dt=1e-3)
    assert finals.shape == (3, 3)
    assert defect.shape == (3,)
    assert np.all(defect < 1e-12)
    for row0, rowf in zip(states0, finals):
        single = dynamics.flow(row0, T=5.0, dt=1e-3, store_every=5000)
        np.testing.assert_allclose(rowf, single.states[-1], atol=1e-12)


def test_flow_rejects_bad_inputs():
    with pytest.raises(ValueError):
        dynamics.flow((math.nan, 0.0, 1.0), T=1.0)
    with pytest.raises(ValueError):
        dynamics.flow((1.0, 0.5, 0.5), T=-1.0)
    with pytest.raises(ValueError):
        dynamics.flow_batch(np.zeros((3, 2)), T=1.0)


# ---------------------------------------------------------------------------
# periods
# ---------------------------------------------------------------------------


def test_period_against_return_time_oracle():
    # frozen from tests/oracles.py: period_return_oracle(3, 1, dt=1e-4)
    assert dynamics.period(3.0, 1.0) == pytest.approx(4.0043095218284508, rel=1e-9)
    # and live, at a second level set
    live = oracles.period_return_oracle(2.25, 0.75, dt=2e-4)
    assert dynamics.period(2.25, 0.75) == pytest.approx(live, rel=1e-8)


def test_period_symmetric_in_pair_order():
    assert dynamics.period(3.0, 1.0) == dynamics.period(1.0, 3.0)


def test_period_diverges_at_diagonal():
    assert math.isinf(dynamics.period(1.0, 1.0))
    assert math.isinf(dynamics.period(1.0, 1.0 - 1e-13))
    finite = dynamics.period(1.0, 1.0 - 1e-9)
    assert math.isfinite(finite)
    assert finite > dynamics.period(1.0, 0.5)


def test_period_grows_as_ratio_approaches_one():
    values = [dynamics.period(1.0, r) for r in (0.1, 0.5, 0.9, 0.99, 0.9999)]
    assert all(a < b for a, b in zip(values, values[1:]))


def test_period_rejects_nonpositive_level():
    with pytest.raises(ValueError):
        dynamics.period(1.0, 0.0)
    with pytest.raises(ValueError):
        dynamics.period(-1.0, 2.0)


# ---------------------------------------------------------------------------
# trajectory container
# ---------------------------------------------------------------------------


def test_trajectory_validates_shape_and_monotonicity():
    with pytest.raises(ValueError):
        dynamics.Trajectory(np.arange(3.0), np.zeros((4, 3)))
    with pytest.raises(ValueError):
        dynamics.Trajectory(np.array([0.0, 1.0, 1.0]), np.zeros((3, 3)))
    traj = dynamics.Trajectory(np.array([0.0, 0.5, 1.5]), np.zeros((3, 3)))
    assert traj.horizon == 1.5
    assert len(traj) == 3
