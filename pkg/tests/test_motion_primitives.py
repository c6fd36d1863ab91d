import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.polynomial import polynomial as P
from scipy.integrate import quad
from scipy.optimize import minimize_scalar

from adaptive_dispersion.motion_primitives import (
    DynamicsLimits,
    FullState,
    InfeasibleBoundaryError,
    InfeasiblePrimitiveError,
    InvalidArgumentError,
    MotionPrimitive,
    Trajectory,
    concatenate,
    evaluate,
    optimize_primitive,
    solve_fixed_time_bvp,
    stopping_primitive,
    stopping_target,
    trajectory_cost,
)


def quad_jerk(traj: Trajectory) -> float:
    """Squared-jerk integral by adaptive quadrature on numpy's own derivative."""
    total = 0.0
    for d, seg in zip(traj.durations, traj.coeffs):
        for axis in seg:
            j = P.polyder(axis, 3)
            total += quad(lambda t: P.polyval(t, j) ** 2, 0.0, d, epsabs=1e-12, epsrel=1e-12)[0]
    return total


def state_1d(p, v=0.0, a=0.0):
    return FullState([p], [v], [a])


finite = st.floats(-3.0, 3.0, allow_nan=False)


@st.composite
def state_pairs(draw, dim=2, accelerations=True):
    vals = [draw(finite) for _ in range(6 * dim)]
    arr = np.array(vals).reshape(2, 3, dim)
    if not accelerations:
        arr[:, 2, :] = 0.0
    return FullState.from_array(arr[0]), FullState.from_array(arr[1])


class TestFixedTimeBVP:
    def test_rest_to_rest_unit_polynomial(self):
        traj = solve_fixed_time_bvp(state_1d(0.0), state_1d(1.0), 1.0)
        np.testing.assert_allclose(traj.coeffs[0, 0], [0, 0, 0, 10, -15, 6], atol=1e-12)
        assert quad_jerk(traj) == pytest.approx(720.0, rel=1e-9)
        assert traj.jerk_integral() == pytest.approx(720.0, rel=1e-12)

    @pytest.mark.parametrize("d", [0.5, 1.0, 2.0])
    @pytest.mark.parametrize("T", [0.5, 1.0, 2.0])
    def test_rest_to_rest_closed_form(self, d, T):
        traj = solve_fixed_time_bvp(state_1d(0.0), state_1d(d), T)
        assert traj.jerk_integral() == pytest.approx(720 * d**2 / T**5, rel=1e-6)
        assert quad_jerk(traj) == pytest.approx(720 * d**2 / T**5, rel=1e-6)

    def test_scaling_in_distance(self):
        j = [solve_fixed_time_bvp(state_1d(0.0), state_1d(d), 1.3).jerk_integral() for d in (1, 2, 4)]
        assert j[1] / j[0] == pytest.approx(4.0, rel=1e-9)
        assert j[2] / j[0] == pytest.approx(16.0, rel=1e-9)

    def test_identity_is_constant(self):
        s = FullState([1.0, -2.0], [0.0, 0.0], [0.0, 0.0])
        traj = solve_fixed_time_bvp(s, s, 0.7)
        assert traj.jerk_integral() == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_allclose(traj.sample(np.linspace(0, 0.7, 11)), np.tile(s.position, (11, 1)))

    def test_cruise_has_no_jerk(self):
        traj = solve_fixed_time_bvp(state_1d(0.0, 1.0), state_1d(1.0, 1.0), 1.0)
        np.testing.assert_allclose(traj.coeffs[0, 0], [0, 1, 0, 0, 0, 0], atol=1e-12)
        assert traj.jerk_integral() == pytest.approx(0.0, abs=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(state_pairs(), st.floats(0.2, 5.0))
    def test_boundary_conditions(self, pair, T):
        a, b = pair
        traj = solve_fixed_time_bvp(a, b, T)
        assert traj.start_state.allclose(a, 1e-6)
        assert traj.end_state.allclose(b, 1e-6)

    @settings(max_examples=30, deadline=None)
    @given(state_pairs(dim=1), st.floats(0.3, 3.0), st.floats(-5.0, 5.0))
    def test_quintic_beats_perturbations(self, pair, T, eps):
        # t^3 (T - t)^3 vanishes with its first two derivatives at both ends
        a, b = pair
        traj = solve_fixed_time_bvp(a, b, T)
        bump = P.polymul(P.polypow([0, 1], 3), P.polypow([T, -1], 3))
        base = np.zeros(7)
        base[:6] = traj.coeffs[0, 0]
        perturbed = P.polyadd(base, eps * bump / T**6)
        j = P.polyder(perturbed, 3)
        alt = quad(lambda t: P.polyval(t, j) ** 2, 0, T, epsabs=1e-12)[0]
        assert alt >= quad_jerk(traj) - 1e-9 * max(1.0, alt)

    def test_rejects_bad_duration(self):
        with pytest.raises(InvalidArgumentError):
            solve_fixed_time_bvp(state_1d(0.0), state_1d(1.0), 0.0)
        with pytest.raises(InvalidArgumentError):
            solve_fixed_time_bvp(state_1d(0.0), state_1d(1.0), math.nan)

    def test_rejects_non_finite_state(self):
        with pytest.raises(InvalidArgumentError):
            FullState([math.inf], [0.0], [0.0])

    def test_rejects_mixed_dimensions(self):
        with pytest.raises(InvalidArgumentError):
            solve_fixed_time_bvp(state_1d(0.0), FullState.rest([1.0, 1.0]), 1.0)


class TestOptimizePrimitive:
    def test_rest_to_rest_optimum(self):
        lim = DynamicsLimits(100.0, 100.0, 3600.0)
        prim = optimize_primitive(state_1d(0.0), state_1d(1.0), lim)
        # bounded scalar minimisation of the closed form as an independent oracle
        ref = minimize_scalar(lambda T: 3600 * T + 720 / T**5, bounds=(0.1, 5.0), method="bounded",
                              options={"xatol": 1e-10})
        assert ref.x == pytest.approx(1.0, rel=1e-6)
        assert prim.duration == pytest.approx(ref.x, rel=1e-6)
        assert prim.cost == pytest.approx(4320.0, rel=1e-9)

    def test_stationary_under_time_perturbation(self):
        lim = DynamicsLimits(100.0, 100.0, 3600.0)
        prim = optimize_primitive(state_1d(0.0), state_1d(1.0), lim)
        T = prim.duration
        J = [3600 * t + solve_fixed_time_bvp(state_1d(0.0), state_1d(1.0), t).jerk_integral()
             for t in (0.99 * T, T, 1.01 * T)]
        assert J[1] <= J[0] and J[1] <= J[2]
        h = 1e-4 * T
        dJ = (solve_fixed_time_bvp(state_1d(0.0), state_1d(1.0), T + h).jerk_integral()
              - solve_fixed_time_bvp(state_1d(0.0), state_1d(1.0), T - h).jerk_integral()) / (2 * h) + 3600
        assert abs(dJ) < 1e-3 * 3600

    def test_velocity_limit_binds(self):
        lim = DynamicsLimits(1.0, 100.0, 10.0)
        prim = optimize_primitive(state_1d(0.0), state_1d(10.0), lim)
        assert prim.duration >= 18.75 * (1 - 1e-9)
        v = prim.trajectory.sample(np.linspace(0, prim.duration, 1000), 1)
        assert np.max(np.abs(v)) <= 1.0 + 1e-6

    def test_identity_has_zero_cost(self):
        s = FullState([0.5, 0.5], [1.0, 0.0], [0.0, 0.0])
        prim = optimize_primitive(s, s, DynamicsLimits(7, 4, 10))
        assert prim.duration == 0.0 and prim.cost == 0.0

    def test_boundary_outside_limits(self):
        with pytest.raises(InfeasibleBoundaryError):
            optimize_primitive(state_1d(0.0, 9.0), state_1d(1.0), DynamicsLimits(7, 4, 10))

    @settings(max_examples=40, deadline=None)
    @given(state_pairs(accelerations=False), st.sampled_from([1.0, 10.0, 1000.0]))
    def test_feasible_and_locally_optimal(self, pair, rho):
        lim = DynamicsLimits(3.5, 3.5, rho)
        a, b = pair
        if not (lim.admits(a) and lim.admits(b)):
            return
        prim = optimize_primitive(a, b, lim)
        if prim.duration == 0.0:
            assert a.allclose(b, 0.0)
            return
        traj = prim.trajectory
        assert traj.start_state.allclose(a) and traj.end_state.allclose(b)
        assert prim.cost >= 0
        assert trajectory_cost(traj, rho) == pytest.approx(prim.cost, rel=1e-9)
        ts = np.linspace(0, prim.duration, 1000)
        assert np.max(np.abs(traj.sample(ts, 1))) <= lim.v_max + 1e-6
        assert np.max(np.abs(traj.sample(ts, 2))) <= lim.a_max + 1e-6
        for f in (0.99, 1.01):
            alt = solve_fixed_time_bvp(a, b, f * prim.duration)
            ts = np.linspace(0, alt.total_duration, 1000)
            ok = (np.max(np.abs(alt.sample(ts, 1))) <= lim.v_max and np.max(np.abs(alt.sample(ts, 2))) <= lim.a_max)
            if ok:
                assert trajectory_cost(alt, rho) >= prim.cost * (1 - 1e-9)

    @settings(max_examples=40, deadline=None)
    @given(state_pairs())
    def test_accelerating_boundaries_solve_or_raise(self, pair):
        # a quintic cannot always arrive with a large acceleration without overshooting the bounds
        lim = DynamicsLimits(3.5, 3.5, 10.0)
        a, b = pair
        if not (lim.admits(a) and lim.admits(b)):
            return
        try:
            prim = optimize_primitive(a, b, lim)
        except InfeasiblePrimitiveError:
            return
        ts = np.linspace(0, prim.duration, 1000)
        assert np.max(np.abs(prim.trajectory.sample(ts, 1))) <= lim.v_max + 1e-6
        assert np.max(np.abs(prim.trajectory.sample(ts, 2))) <= lim.a_max + 1e-6

    def test_unreachable_acceleration_raises(self):
        lim = DynamicsLimits(3.5, 3.5, 10.0)
        with pytest.raises(InfeasiblePrimitiveError):
            optimize_primitive(FullState.rest([0.0, 0.0]), FullState([0.0, 0.0], [0.0, -3.0], [0.0, 3.0]), lim)

    @settings(max_examples=30, deadline=None)
    @given(state_pairs(accelerations=False))
    def test_costs_nonnegative_not_assumed_symmetric(self, pair):
        lim = DynamicsLimits(3.5, 3.5, 10.0)
        a, b = pair
        if not (lim.admits(a) and lim.admits(b)):
            return
        assert optimize_primitive(a, b, lim).cost >= 0
        assert optimize_primitive(a, a, lim).cost == 0


class TestEval:
    def test_start_and_midpoint(self):
        traj = solve_fixed_time_bvp(state_1d(0.0), state_1d(1.0), 1.0)
        assert evaluate(traj, 0.0, 0)[0] == 0.0
        assert evaluate(traj, 0.5, 0)[0] == pytest.approx(0.5, abs=1e-12)

    def test_derivative_orders(self):
        traj = solve_fixed_time_bvp(state_1d(0.0), state_1d(1.0), 1.0)
        c = np.array([0, 0, 0, 10, -15, 6.0])
        for k in range(4):
            assert evaluate(traj, 0.3, k)[0] == pytest.approx(P.polyval(0.3, P.polyder(c, k)), abs=1e-12)

    def test_junction_continuity(self):
        a, b, c = state_1d(0.0), state_1d(1.0, 0.5, 0.2), state_1d(2.0)
        traj = concatenate([solve_fixed_time_bvp(a, b, 1.0), solve_fixed_time_bvp(b, c, 1.5)])
        for k in range(3):
            left = P.polyval(1.0, P.polyder(traj.coeffs[0, 0], k))
            right = evaluate(traj, 1.0, k)[0]
            assert left == pytest.approx(right, abs=1e-9)

    def test_out_of_range(self):
        traj = solve_fixed_time_bvp(state_1d(0.0), state_1d(1.0), 1.0)
        with pytest.raises(InvalidArgumentError):
            evaluate(traj, 1.5)
        with pytest.raises(InvalidArgumentError):
            evaluate(traj, -0.1)
        with pytest.raises(InvalidArgumentError):
            evaluate(traj, 0.5, 4)

    def test_serialisation_round_trip(self):
        traj = concatenate([solve_fixed_time_bvp(state_1d(0.0), state_1d(1.0, 0.3), 1.0),
                            solve_fixed_time_bvp(state_1d(1.0, 0.3), state_1d(2.0), 0.8)])
        assert Trajectory.from_dict(traj.to_dict()) == traj

    def test_slice_matches_original(self):
        traj = concatenate([solve_fixed_time_bvp(state_1d(0.0), state_1d(1.0, 0.3), 1.0),
                            solve_fixed_time_bvp(state_1d(1.0, 0.3), state_1d(2.0), 0.8)])
        part = traj.slice(0.4, 1.5)
        assert part.total_duration == pytest.approx(1.1)
        for t in np.linspace(0, 1.1, 9):
            np.testing.assert_allclose(part.eval(t), traj.eval(0.4 + t), atol=1e-12)


class TestStopping:
    LIM = DynamicsLimits(7.0, 4.0, 10.0)

    def test_rest_gives_empty_trajectory(self):
        assert stopping_primitive(FullState.rest([1.0, 2.0]), self.LIM).total_duration == 0.0

    @pytest.mark.parametrize("v", [-3.0, 1.0, 6.0])
    def test_target_at_braking_distance(self, v):
        target = stopping_target(state_1d(0.5, v), self.LIM)
        assert target.position[0] == pytest.approx(0.5 + math.copysign(v * v / 8.0, v))
        assert not np.any(target.velocity) and not np.any(target.acceleration)

    @pytest.mark.parametrize("state", [
        FullState([0.0, 0.0], [3.0, 3.0], [0.0, 0.0]),
        FullState([0.0, 0.0], [5.0, -2.0], [1.0, 3.0]),
        FullState([0.0, 0.0], [0.0, 0.0], [2.0, -1.0]),
    ])
    def test_stops_within_limits(self, state):
        traj = stopping_primitive(state, self.LIM)
        assert traj.start_state.allclose(state)
        end = traj.end_state
        assert np.linalg.norm(end.velocity) <= 1e-6 and np.linalg.norm(end.acceleration) <= 1e-6
        ts = np.linspace(0, traj.total_duration, 1000)
        assert np.max(np.abs(traj.sample(ts, 2))) <= self.LIM.a_max + 1e-6
        assert np.max(np.abs(traj.sample(ts, 1))) <= self.LIM.v_max + 1e-6


def test_primitive_fields_consistent():
    prim = optimize_primitive(state_1d(0.0), state_1d(2.0, 1.0), DynamicsLimits(7, 4, 10))
    assert isinstance(prim, MotionPrimitive)
    assert prim.trajectory.start_state == prim.start or prim.trajectory.start_state.allclose(prim.start)
    assert prim.trajectory.end_state.allclose(prim.end)
