import pytest

from adaptive_dispersion.graph_gen import StateBox, family_from_counts
from adaptive_dispersion.motion_primitives import DynamicsLimits

LIMITS = DynamicsLimits(7.0, 4.0, 1000.0)
BOX = StateBox((1.0, 1.0), 3.0, 0.0)


@pytest.fixture(scope="session")
def small_family():
    """Three-graph family, coarsest first, small enough for unit tests."""
    return family_from_counts(BOX, LIMITS, [8, 16, 32], 300, 0, beta=1.2)


def audit_log(log, mission, tol=1e-6):
    """Safety, continuity, limit and cadence checks over an executed mission.

    Returns a dict of booleans so callers can report each property.
    """
    import numpy as np

    from adaptive_dispersion.world import inflate, is_trajectory_free

    audit = inflate(mission.global_map, mission.robot_radius)
    lim = mission.limits
    pieces = log.pieces
    free = all(is_trajectory_free(audit, p, mission.check_dt).free for p in pieces)
    from adaptive_dispersion.motion_primitives import Trajectory

    def gap(a, b):
        return float(np.max(np.abs(a.end_state.as_array() - b.start_state.as_array())))

    # handoffs between executed pieces, and splices inside a piece (new plans
    # join the old one mid-piece at the commit horizon)
    joins = [gap(a, b) for a, b in zip(pieces, pieces[1:])]
    for p in pieces:
        segs = [Trajectory(p.durations[i:i + 1], p.coeffs[i:i + 1]) for i in range(p.num_segments)]
        joins += [gap(a, b) for a, b in zip(segs, segs[1:])]
    continuous = all(j <= tol for j in joins)
    within = True
    for p in pieces:
        ts = np.linspace(0.0, p.total_duration, 200)
        within &= bool(np.all(np.abs(p.sample(ts, 1)) <= lim.v_max + tol))
        within &= bool(np.all(np.abs(p.sample(ts, 2)) <= lim.a_max + tol))
    period = mission.replan_period
    cadence = all(abs(c["t"] - i * period) <= 1e-9 and c["cycle"] == i for i, c in enumerate(log.cycles))
    cadence &= all(abs(p.total_duration - period) <= 1e-9 for p in pieces)
    return {"collision_free": free, "continuous": continuous, "within_limits": within, "cadence": cadence}
