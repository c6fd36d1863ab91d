"""Minimum jerk+time boundary value problems between full states.

Every axis of a primitive is a quintic in local time. For a fixed duration the
quintic is the unique interpolant of the six boundary conditions and is also
the minimiser of the integrated squared jerk. The free-duration problem
minimises ``J(T) = rho * T + int ||jerk||^2 dt`` over the set of durations for
which the per-axis velocity and acceleration bounds hold.

The batch routines operate on stacked states of shape ``(N, 3, D)`` (rows are
position, velocity, acceleration) and are what the graph generator uses; the
scalar API is a thin wrapper so both paths produce bit-identical numbers.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
T_FLOOR = 1e-3
FEAS_TOL = 1e-9

# time search knobs
_MAX_DOUBLINGS = 64
_GOLDEN_ITERS = 48
_DILATION = 1.2
_MAX_DILATIONS = 80
_BISECT_ITERS = 40
_BOUNDARY_RTOL = 1e-8


class InvalidArgumentError(ValueError):
    pass


class InfeasibleBoundaryError(ValueError):
    """A boundary state itself violates the velocity/acceleration limits."""


class InfeasiblePrimitiveError(ValueError):
    """No duration in the searched range satisfies the limits."""


@dataclass(frozen=True)
class FullState:
    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.position, dtype=float)).copy()
        v = np.atleast_1d(np.asarray(self.velocity, dtype=float)).copy()
        a = np.atleast_1d(np.asarray(self.acceleration, dtype=float)).copy()
        if not (p.shape == v.shape == a.shape) or p.ndim != 1 or p.size not in (1, 2, 3):
            raise InvalidArgumentError(
                f"position/velocity/acceleration must share dimension 1..3, got {p.shape}, {v.shape}, {a.shape}"
            )
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(v)) and np.all(np.isfinite(a))):
            raise InvalidArgumentError("state components must be finite")
        for arr in (p, v, a):
            arr.setflags(write=False)
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "velocity", v)
        object.__setattr__(self, "acceleration", a)

    @property
    def dim(self) -> int:
        return self.position.size

    @classmethod
    def rest(cls, position) -> "FullState":
        p = np.atleast_1d(np.asarray(position, dtype=float))
        return cls(p, np.zeros_like(p), np.zeros_like(p))

    @classmethod
    def from_array(cls, arr) -> "FullState":
        arr = np.asarray(arr, dtype=float)
        return cls(arr[0], arr[1], arr[2])

    def as_array(self) -> np.ndarray:
        """Stack to shape (3, D)."""
        return np.stack([self.position, self.velocity, self.acceleration])

    def translated(self, offset) -> "FullState":
        return FullState(self.position + np.asarray(offset, dtype=float), self.velocity, self.acceleration)

    def __eq__(self, other):
        if not isinstance(other, FullState):
            return NotImplemented
        return (
            np.array_equal(self.position, other.position)
            and np.array_equal(self.velocity, other.velocity)
            and np.array_equal(self.acceleration, other.acceleration)
        )

    def __hash__(self):
        return hash(self.as_array().tobytes())

    def allclose(self, other: "FullState", atol: float = 1e-6) -> bool:
        return bool(np.allclose(self.as_array(), other.as_array(), rtol=0.0, atol=atol))


@dataclass(frozen=True)
class DynamicsLimits:
    v_max: float
    a_max: float
    rho: float = 10.0

    def __post_init__(self):
        for name in ("v_max", "a_max", "rho"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise InvalidArgumentError(f"{name} must be finite and > 0, got {val}")

    def admits(self, state: FullState, tol: float = 1e-9) -> bool:
        return bool(
            np.all(np.abs(state.velocity) <= self.v_max + tol)
            and np.all(np.abs(state.acceleration) <= self.a_max + tol)
        )


# ---------------------------------------------------------------------------
# Trajectory
# ---------------------------------------------------------------------------

_DERIV = {
    0: np.array([1, 1, 1, 1, 1, 1], dtype=float),
    1: np.array([1, 2, 3, 4, 5], dtype=float),
    2: np.array([2, 6, 12, 20], dtype=float),
    3: np.array([6, 24, 60], dtype=float),
}


def _deriv_coeffs(coeffs: np.ndarray, order: int) -> np.ndarray:
    """Monomial coefficients of the order-th derivative along the last axis."""
    return coeffs[..., order:] * _DERIV[order]


def _polyval(c: np.ndarray, t) -> np.ndarray:
    # Horner along the last axis of c; t broadcasts against c[..., 0]
    out = np.zeros(np.broadcast_shapes(c.shape[:-1], np.shape(t)))
    for k in range(c.shape[-1] - 1, -1, -1):
        out = out * t + c[..., k]
    return out


def _shift_coeffs(coeffs: np.ndarray, t0: float) -> np.ndarray:
    """Coefficients of p(t + t0) given those of p(t)."""
    n = coeffs.shape[-1]
    out = np.zeros_like(coeffs)
    for k in range(n):
        for j in range(k + 1):
            out[..., j] += coeffs[..., k] * math.comb(k, j) * t0 ** (k - j)
    return out


def jerk_integral_coeffs(coeffs: np.ndarray, T) -> np.ndarray:
    """Closed-form int_0^T jerk^2 dt per axis for quintic coefficients (..., 6)."""
    c3, c4, c5 = coeffs[..., 3], coeffs[..., 4], coeffs[..., 5]
    return (
        36.0 * c3 * c3 * T
        + 144.0 * c3 * c4 * T**2
        + (192.0 * c4 * c4 + 240.0 * c3 * c5) * T**3
        + 720.0 * c4 * c5 * T**4
        + 720.0 * c5 * c5 * T**5
    )


@dataclass(frozen=True)
class Trajectory:
    """Piecewise per-axis quintic. ``coeffs[s, i, k]`` multiplies ``t**k``
    for axis ``i`` of segment ``s``, with ``t`` local to the segment."""

    durations: np.ndarray
    coeffs: np.ndarray
    _ends: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        d = np.asarray(self.durations, dtype=float).reshape(-1).copy()
        c = np.asarray(self.coeffs, dtype=float).copy()
        if c.ndim != 3 or c.shape[2] != 6 or c.shape[0] != d.size or d.size == 0:
            raise InvalidArgumentError(f"bad trajectory shapes {d.shape} / {c.shape}")
        if np.any(d < 0) or not np.all(np.isfinite(d)) or not np.all(np.isfinite(c)):
            raise InvalidArgumentError("durations must be finite and >= 0, coefficients finite")
        d.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "durations", d)
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "_ends", tuple(np.cumsum(d).tolist()))

    @property
    def dim(self) -> int:
        return self.coeffs.shape[1]

    @property
    def total_duration(self) -> float:
        return self._ends[-1]

    @property
    def num_segments(self) -> int:
        return self.durations.size

    def _locate(self, t: float) -> tuple[int, float]:
        idx = bisect.bisect_right(self._ends, t)
        idx = min(idx, self.num_segments - 1)
        start = self._ends[idx - 1] if idx > 0 else 0.0
        return idx, t - start

    def eval(self, t: float, derivative_order: int = 0) -> np.ndarray:
        if derivative_order not in _DERIV:
            raise InvalidArgumentError("derivative_order must be in 0..3")
        if not (-1e-12 <= t <= self.total_duration + 1e-12):
            raise InvalidArgumentError(f"t={t} outside [0, {self.total_duration}]")
        t = min(max(t, 0.0), self.total_duration)
        idx, tau = self._locate(t)
        return _polyval(_deriv_coeffs(self.coeffs[idx], derivative_order), tau)

    def state_at(self, t: float) -> FullState:
        return FullState(self.eval(t, 0), self.eval(t, 1), self.eval(t, 2))

    def sample(self, times, derivative_order: int = 0) -> np.ndarray:
        """Vectorised evaluation at many times; returns (len(times), D)."""
        times = np.clip(np.asarray(times, dtype=float), 0.0, self.total_duration)
        ends = np.asarray(self._ends)
        idx = np.minimum(np.searchsorted(ends, times, side="right"), self.num_segments - 1)
        starts = np.concatenate([[0.0], ends[:-1]])
        tau = times - starts[idx]
        c = _deriv_coeffs(self.coeffs[idx], derivative_order)  # (M, D, k)
        return _polyval(c, tau[:, None])

    @property
    def start_state(self) -> FullState:
        return self.state_at(0.0)

    @property
    def end_state(self) -> FullState:
        return self.state_at(self.total_duration)

    def jerk_integral(self) -> float:
        per_axis = jerk_integral_coeffs(self.coeffs, self.durations[:, None])
        return float(np.sum(per_axis))

    def sample_segments(self, dt: float) -> tuple[np.ndarray, np.ndarray]:
        """Per-segment sampling at spacing ``dt``; returns (global times, positions)."""
        rel, c0, seg, tau = segment_samples(self.coeffs, self.durations, dt)
        starts = np.concatenate([[0.0], np.asarray(self._ends[:-1])])
        return starts[seg] + tau, rel + c0

    def translated(self, offset) -> "Trajectory":
        c = np.array(self.coeffs)
        c[:, :, 0] += np.asarray(offset, dtype=float)
        return Trajectory(self.durations, c)

    def then(self, other: "Trajectory") -> "Trajectory":
        return concatenate([self, other])

    def slice(self, t0: float, t1: float) -> "Trajectory":
        """Sub-trajectory on [t0, t1], re-timed to start at zero."""
        t0 = max(0.0, t0)
        t1 = min(self.total_duration, t1)
        if t1 < t0:
            raise InvalidArgumentError("empty slice")
        durs, coefs = [], []
        start = 0.0
        for i, (d, end) in enumerate(zip(self.durations, self._ends)):
            lo, hi = max(start, t0), min(end, t1)
            if hi > lo or (not durs and hi >= lo and end >= t0):
                durs.append(hi - lo)
                coefs.append(_shift_coeffs(self.coeffs[i], lo - start))
            start = end
            if end >= t1 and durs:
                break
        return Trajectory(np.array(durs), np.stack(coefs))

    def to_dict(self) -> dict:
        return {
            "segments": [
                {"duration": float(d), "coeffs": c.tolist()} for d, c in zip(self.durations, self.coeffs)
            ]
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Trajectory":
        segs = data["segments"]
        return cls(np.array([s["duration"] for s in segs], dtype=float),
                   np.array([s["coeffs"] for s in segs], dtype=float))

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return np.array_equal(self.durations, other.durations) and np.array_equal(self.coeffs, other.coeffs)

    def __hash__(self):
        return hash((self.durations.tobytes(), self.coeffs.tobytes()))


def sample_times(duration: float, dt: float) -> np.ndarray:
    """0, dt, 2dt, ... plus the end point."""
    n = int(math.floor(duration / dt))
    t = np.arange(n + 1) * dt
    if t[-1] < duration:
        t = np.append(t, duration)
    return t


def segment_samples(coeffs: np.ndarray, durations: np.ndarray, dt: float):
    """Positions of each segment sampled on its own local clock.

    Returns ``(rel, c0, seg, tau)`` where ``rel`` is the position minus the
    segment's constant term, so that ``rel + c0`` reproduces the Horner
    evaluation of the full polynomial bit for bit.  Translating a segment only
    changes ``c0``, which is what lets the planner reuse ``rel``.
    """
    if not dt > 0:
        raise InvalidArgumentError("dt must be > 0")
    taus = [sample_times(float(d), dt) for d in durations]
    seg = np.repeat(np.arange(len(taus)), [len(t) for t in taus])
    tau = np.concatenate(taus)
    c = np.array(coeffs[seg])
    c0 = np.array(c[:, :, 0])
    c[:, :, 0] = 0.0
    rel = _polyval(c, tau[:, None])
    return rel, c0, seg, tau


def concatenate(trajs: Sequence[Trajectory]) -> Trajectory:
    trajs = list(trajs)
    if not trajs:
        raise InvalidArgumentError("nothing to concatenate")
    return Trajectory(np.concatenate([t.durations for t in trajs]), np.concatenate([t.coeffs for t in trajs]))


def evaluate(trajectory: Trajectory, t: float, derivative_order: int = 0) -> np.ndarray:
    return trajectory.eval(t, derivative_order)


def hold(state: FullState, duration: float = 0.0) -> Trajectory:
    """Constant-position trajectory; only meaningful for a state at rest."""
    c = np.zeros((1, state.dim, 6))
    c[0, :, 0] = state.position
    c[0, :, 1] = state.velocity
    c[0, :, 2] = state.acceleration / 2.0
    return Trajectory(np.array([duration]), c)


@dataclass(frozen=True)
class MotionPrimitive:
    start: FullState
    end: FullState
    trajectory: Trajectory
    cost: float

    @property
    def duration(self) -> float:
        return self.trajectory.total_duration


def trajectory_cost(traj: Trajectory, rho: float) -> float:
    return rho * traj.total_duration + traj.jerk_integral()


# ---------------------------------------------------------------------------
# Fixed-duration quintic
# ---------------------------------------------------------------------------

def quintic_coeffs(start: np.ndarray, end: np.ndarray, T) -> np.ndarray:
    """Quintic coefficients for stacked states.

    start, end: (..., 3, D); T broadcastable to start[..., 0, 0].
    Returns (..., D, 6).
    """
    T = np.asarray(T, dtype=float)[..., None]
    p0, v0, a0 = start[..., 0, :], start[..., 1, :], start[..., 2, :]
    p1, v1, a1 = end[..., 0, :], end[..., 1, :], end[..., 2, :]
    h = p1 - (p0 + v0 * T + 0.5 * a0 * T * T)
    dv = v1 - (v0 + a0 * T)
    da = a1 - a0
    T2 = T * T
    T3 = T2 * T
    c3 = (10.0 * h - 4.0 * dv * T + 0.5 * da * T2) / T3
    c4 = (-15.0 * h + 7.0 * dv * T - da * T2) / (T3 * T)
    c5 = (6.0 * h - 3.0 * dv * T + 0.5 * da * T2) / (T3 * T2)
    return np.stack([p0 * np.ones_like(c3), v0 * np.ones_like(c3), 0.5 * a0 * np.ones_like(c3), c3, c4, c5], axis=-1)


def _poly_mul(x: tuple, y: tuple) -> list:
    out = [0.0] * (len(x) + len(y) - 1)
    for i, xi in enumerate(x):
        for j, yj in enumerate(y):
            out[i + j] = out[i + j] + xi * yj
    return out


class _Pairs:
    """Per-pair precomputation for the free-duration search.

    With ``x3 = c3 T^3``, ``x4 = c4 T^4``, ``x5 = c5 T^5`` each a quadratic in
    T, the jerk integral is ``Q(T) / T^5`` with Q a quartic, so J(T) costs a
    handful of flops once Q is known.
    """

    def __init__(self, start: np.ndarray, end: np.ndarray):
        p0, v0, a0 = start[:, 0, :], start[:, 1, :], start[:, 2, :]
        P = end[:, 0, :] - p0
        V = end[:, 1, :] - v0
        A = end[:, 2, :] - a0
        self.v0, self.a0 = v0, a0
        self.x3 = (10.0 * P, -(10.0 * v0 + 4.0 * V), 0.5 * A - a0)
        self.x4 = (-15.0 * P, 15.0 * v0 + 7.0 * V, 0.5 * a0 - A)
        self.x5 = (6.0 * P, -(6.0 * v0 + 3.0 * V), 0.5 * A)
        terms = [
            (36.0, self.x3, self.x3),
            (144.0, self.x3, self.x4),
            (192.0, self.x4, self.x4),
            (240.0, self.x3, self.x5),
            (720.0, self.x4, self.x5),
            (720.0, self.x5, self.x5),
        ]
        q = [0.0] * 5
        for w, x, y in terms:
            for m, c in enumerate(_poly_mul(x, y)):
                q[m] = q[m] + w * c
        self.q = np.stack([np.sum(c, axis=1) for c in q], axis=1)  # (N, 5)

    def jerk(self, T: np.ndarray, idx=None) -> np.ndarray:
        q = self.q if idx is None else self.q[idx]
        inv = 1.0 / T
        # sum_m q_m T^(m-5) by Horner in 1/T
        acc = q[:, 0]
        for m in (1, 2, 3, 4):
            acc = acc * inv + q[:, m]
        return acc * inv

    def cost(self, T: np.ndarray, rho: float, idx=None) -> np.ndarray:
        return rho * T + self.jerk(T, idx)

    def feasible(self, T: np.ndarray, limits: DynamicsLimits, idx) -> np.ndarray:
        return self.peak_ratio(T, limits, idx) <= 1.0

    def peak_ratio(self, T: np.ndarray, limits: DynamicsLimits, idx) -> np.ndarray:
        """max over axes of peak|v|/v_max and peak|a|/a_max, minus tolerance slack."""
        Tc = T[:, None]
        T2 = Tc * Tc
        x3 = self.x3[0][idx] + Tc * (self.x3[1][idx] + Tc * self.x3[2][idx])
        x4 = self.x4[0][idx] + Tc * (self.x4[1][idx] + Tc * self.x4[2][idx])
        x5 = self.x5[0][idx] + Tc * (self.x5[1][idx] + Tc * self.x5[2][idx])
        v0, a0 = self.v0[idx], self.a0[idx]
        n, D = x3.shape
        # derivatives in normalised time s = t / T
        vel = np.stack([v0 * Tc, a0 * T2, 3.0 * x3, 4.0 * x4, 5.0 * x5], axis=-1) / Tc[..., None]
        acc = np.stack([a0 * T2, 6.0 * x3, 12.0 * x4, 20.0 * x5], axis=-1) / T2[..., None]
        vmax = _max_abs_on_unit(vel.reshape(n * D, 5)).reshape(n, D)
        amax = _max_abs_on_unit(acc.reshape(n * D, 4)).reshape(n, D)
        rv = np.max(vmax, axis=1) / (limits.v_max + FEAS_TOL)
        ra = np.max(amax, axis=1) / (limits.a_max + FEAS_TOL)
        return np.maximum(rv, ra)


def _jerk_cost(start: np.ndarray, end: np.ndarray, T: np.ndarray) -> np.ndarray:
    return _Pairs(start, end).jerk(np.asarray(T, dtype=float))


def solve_fixed_time_bvp(start: FullState, end: FullState, T: float) -> Trajectory:
    if start.dim != end.dim:
        raise InvalidArgumentError("states must share dimension")
    if not (math.isfinite(T) and T > 0):
        raise InvalidArgumentError(f"T must be finite and > 0, got {T}")
    c = quintic_coeffs(start.as_array(), end.as_array(), T)
    return Trajectory(np.array([T]), c[None])


# ---------------------------------------------------------------------------
# Feasibility: exact per-axis extrema of velocity and acceleration
# ---------------------------------------------------------------------------

def _cubic_real_roots(b: np.ndarray, c: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Real roots of monic cubics s^3 + b s^2 + c s + d, NaN-padded to (M, 3)."""
    p = c - b * b / 3.0
    q = 2.0 * b**3 / 27.0 - b * c / 3.0 + d
    disc = (q / 2.0) ** 2 + (p / 3.0) ** 3
    out = np.full((b.size, 3), np.nan)
    one = disc > 0
    if np.any(one):
        sq = np.sqrt(disc[one])
        y = np.cbrt(-q[one] / 2.0 + sq) + np.cbrt(-q[one] / 2.0 - sq)
        out[one, 0] = y
    three = ~one
    if np.any(three):
        pp, qq = p[three], q[three]
        neg = pp < 0
        m = 2.0 * np.sqrt(np.where(neg, -pp / 3.0, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            arg = np.where(neg, 3.0 * qq / (pp * np.where(m > 0, m, 1.0)) * 1.0, 0.0)
        arg = np.clip(arg, -1.0, 1.0)
        theta = np.arccos(arg) / 3.0
        ys = np.stack([m * np.cos(theta - 2.0 * np.pi * k / 3.0) for k in range(3)], axis=1)
        # p == 0 and disc <= 0 means a triple root at y = 0
        out[three] = ys
    roots = out - b[:, None] / 3.0
    # two Newton polishes against cancellation in the closed form
    for _ in range(2):
        f = ((roots + b[:, None]) * roots + c[:, None]) * roots + d[:, None]
        df = (3.0 * roots + 2.0 * b[:, None]) * roots + c[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(np.abs(df) > 1e-14, f / df, 0.0)
        roots = roots - step
    return roots


def _real_roots_unit(d: np.ndarray) -> np.ndarray:
    """Real roots in (0, 1) of polynomials with coefficients d (M, k), k <= 4.

    Returns (M, k-1) with NaN where there is no root in range.
    """
    M, k = d.shape
    deg = k - 1
    out = np.full((M, max(deg, 1)), np.nan)
    if deg <= 0:
        return out
    scale = np.max(np.abs(d), axis=1)
    scale = np.where(scale > 0, scale, 1.0)
    dn = d / scale[:, None]
    eps = 1e-9
    remaining = np.ones(M, dtype=bool)
    if deg == 3:
        cub = np.abs(dn[:, 3]) > eps
        if np.any(cub):
            c = dn[cub]
            out[cub, :3] = _cubic_real_roots(c[:, 2] / c[:, 3], c[:, 1] / c[:, 3], c[:, 0] / c[:, 3])
        remaining &= ~cub
        dn = dn[:, :3]
    if deg >= 2:
        a2, a1, a0 = dn[:, 2], dn[:, 1], dn[:, 0]
        quad = remaining & (np.abs(a2) > eps)
        disc = a1 * a1 - 4.0 * a2 * a0
        good = quad & (disc >= 0)
        sq = np.sqrt(np.where(good, disc, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            q = -0.5 * (a1 + np.copysign(sq, a1))
            r1 = np.where(good, q / np.where(quad, a2, 1.0), np.nan)
            r2 = np.where(good & (q != 0), a0 / np.where(q != 0, q, 1.0), np.nan)
        out[quad, 0] = r1[quad]
        out[quad, 1] = r2[quad]
        remaining &= ~quad
    a1, a0 = dn[:, 1], dn[:, 0]
    lin = remaining & (np.abs(a1) > eps)
    with np.errstate(divide="ignore", invalid="ignore"):
        out[lin, 0] = -a0[lin] / a1[lin]
    out[~((out > 0.0) & (out < 1.0))] = np.nan
    return out


_GRID = np.linspace(0.0, 1.0, 9)


def _max_abs_on_unit(c: np.ndarray) -> np.ndarray:
    """max_{s in [0,1]} |p(s)| for coefficients c (M, k) low-to-high."""
    k = c.shape[1]
    d = c[:, 1:] * np.arange(1, k, dtype=float)
    roots = _real_roots_unit(d)
    # a coarse grid backs up the stationary points when a root is lost to conditioning
    pts = np.concatenate([np.broadcast_to(_GRID, (c.shape[0], _GRID.size)), roots], axis=1)
    pts_f = np.where(np.isnan(pts), 0.0, pts)
    vals = np.abs(_polyval(c[:, None, :], pts_f))
    return np.max(vals, axis=1)


def peak_derivatives(coeffs: np.ndarray, T) -> tuple[np.ndarray, np.ndarray]:
    """Exact per-axis peak |v| and |a| over [0, T] for quintics (N, D, 6)."""
    N, D, _ = coeffs.shape
    T = np.broadcast_to(np.asarray(T, dtype=float), (N,))
    powers = T[:, None, None] ** np.arange(6)  # rescale to s = t / T
    cs = coeffs * powers  # p(s) coefficients
    Tn = np.where(T > 0, T, 1.0)[:, None, None]
    v = (cs[..., 1:] * np.arange(1, 6)) / Tn
    a = (cs[..., 2:] * np.array([2.0, 6.0, 12.0, 20.0])) / Tn**2
    vmax = _max_abs_on_unit(v.reshape(N * D, 5)).reshape(N, D)
    amax = _max_abs_on_unit(a.reshape(N * D, 4)).reshape(N, D)
    return vmax, amax


def boundary_ok(states: np.ndarray, limits: DynamicsLimits) -> np.ndarray:
    """Mask of stacked states (N, 3, D) whose velocity/acceleration obey the limits."""
    return np.all(np.abs(states[:, 1, :]) <= limits.v_max + FEAS_TOL, axis=1) & np.all(
        np.abs(states[:, 2, :]) <= limits.a_max + FEAS_TOL, axis=1
    )


# ---------------------------------------------------------------------------
# Free-duration optimisation (batched)
# ---------------------------------------------------------------------------

def _boundary_search(pr: _Pairs, lo, hi, limits, idx) -> np.ndarray:
    """Smallest feasible duration in [lo, hi] (lo infeasible, hi feasible).

    Illinois-modified regula falsi on peak_ratio - 1; the feasible end of the
    bracket is returned so the result always satisfies the limits.
    """
    f_lo = pr.peak_ratio(lo, limits, idx) - 1.0
    f_hi = pr.peak_ratio(hi, limits, idx) - 1.0
    side = np.zeros(lo.size, dtype=int)
    active = np.arange(lo.size)
    for _ in range(_BISECT_ITERS):
        width = hi[active] - lo[active]
        active = active[width > _BOUNDARY_RTOL * hi[active]]
        if active.size == 0:
            break
        a, b, fa, fb = lo[active], hi[active], f_lo[active], f_hi[active]
        denom = fb - fa
        with np.errstate(divide="ignore", invalid="ignore"):
            m = np.where(denom != 0, b - fb * (b - a) / denom, 0.5 * (a + b))
        # keep strictly inside, fall back to bisection on degenerate steps
        bad = ~((m > a) & (m < b))
        m[bad] = 0.5 * (a[bad] + b[bad])
        fm = pr.peak_ratio(m, limits, idx[active]) - 1.0
        ok = fm <= 0.0
        hi[active[ok]] = m[ok]
        f_hi[active[ok]] = fm[ok]
        lo[active[~ok]] = m[~ok]
        f_lo[active[~ok]] = fm[~ok]
        # Illinois: halve the stale endpoint's value when the same side moves twice
        s_new = np.where(ok, 1, -1)
        stale_lo = ok & (side[active] == 1)
        stale_hi = ~ok & (side[active] == -1)
        f_lo[active[stale_lo]] *= 0.5
        f_hi[active[stale_hi]] *= 0.5
        side[active] = s_new
    return hi


def optimize_batch(start: np.ndarray, end: np.ndarray, limits: DynamicsLimits) -> tuple[np.ndarray, np.ndarray]:
    """Optimal durations and costs for N state pairs.

    start, end: (N, 3, D). Returns (T, J); infeasible pairs get T = J = inf.
    Identical pairs get T = J = 0.
    """
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    N = start.shape[0]
    rho = limits.rho
    T_out = np.full(N, np.inf)
    J_out = np.full(N, np.inf)
    if N == 0:
        return T_out, J_out

    same = np.all((start == end).reshape(N, -1), axis=1)
    ok = boundary_ok(start, limits) & boundary_ok(end, limits)
    T_out[same] = 0.0
    J_out[same] = 0.0
    act = np.flatnonzero(ok & ~same)
    if act.size == 0:
        return T_out, J_out
    s, e = start[act], end[act]

    pr = _Pairs(s, e)
    m = act.size
    disp = np.max(np.abs(e[:, 0, :] - s[:, 0, :]), axis=1)
    t_lo = np.maximum(disp / limits.v_max, T_FLOOR)

    # bracket by doubling until J increases
    lo = t_lo.copy()
    mid = t_lo.copy()
    j_mid = pr.cost(mid, rho)
    hi = 2.0 * mid
    j_hi = pr.cost(hi, rho)
    grow = j_hi <= j_mid
    n = 0
    while np.any(grow) and n < _MAX_DOUBLINGS:
        idx = np.flatnonzero(grow)
        lo[idx] = mid[idx]
        mid[idx] = hi[idx]
        j_mid[idx] = j_hi[idx]
        hi[idx] = 2.0 * hi[idx]
        j_hi[idx] = pr.cost(hi[idx], rho, idx)
        grow[idx] = j_hi[idx] <= j_mid[idx]
        n += 1

    # golden-section on [lo, hi]; J is cheap so both interior points are re-evaluated
    a, b = lo, hi
    for _ in range(_GOLDEN_ITERS):
        x1 = b - GOLDEN * (b - a)
        x2 = a + GOLDEN * (b - a)
        left = pr.cost(x1, rho) < pr.cost(x2, rho)
        b = np.where(left, x2, b)
        a = np.where(left, a, x1)
    T = 0.5 * (a + b)

    # enforce limits by time dilation, then tighten onto the feasibility boundary
    feas = pr.feasible(T, limits, np.arange(m))
    bad = np.flatnonzero(~feas)
    if bad.size:
        t_in = T[bad].copy()  # last infeasible
        t_f = t_in * _DILATION
        found = np.zeros(bad.size, dtype=bool)
        pending = np.arange(bad.size)
        for _ in range(_MAX_DILATIONS):
            if pending.size == 0:
                break
            fz = pr.feasible(t_f[pending], limits, bad[pending])
            found[pending[fz]] = True
            still = pending[~fz]
            t_in[still] = t_f[still]
            t_f[still] = t_f[still] * _DILATION
            pending = still
        hit = np.flatnonzero(found)
        T[bad[hit]] = _boundary_search(pr, t_in[hit], t_f[hit], limits, bad[hit])
        T[bad[~found]] = np.inf

    fin = np.flatnonzero(np.isfinite(T))
    J = np.full(T.shape, np.inf)
    J[fin] = pr.cost(T[fin], rho, fin)
    T_out[act] = T
    J_out[act] = J
    return T_out, J_out


def optimize_primitive(start: FullState, end: FullState, limits: DynamicsLimits) -> MotionPrimitive:
    if start.dim != end.dim:
        raise InvalidArgumentError("states must share dimension")
    for st in (start, end):
        if not limits.admits(st):
            raise InfeasibleBoundaryError(f"boundary state violates limits: {st}")
    s, e = start.as_array()[None], end.as_array()[None]
    T, J = optimize_batch(s, e, limits)
    T, J = float(T[0]), float(J[0])
    if not math.isfinite(T):
        raise InfeasiblePrimitiveError("no feasible duration found")
    if T == 0.0:
        return MotionPrimitive(start, end, hold(start, 0.0), 0.0)
    traj = Trajectory(np.array([T]), quintic_coeffs(s, e, np.array([T])))
    return MotionPrimitive(start, end, traj, J)


def primitive_from_duration(start: FullState, end: FullState, T: float, cost: float) -> MotionPrimitive:
    """Rebuild a primitive whose optimal duration is already known."""
    if T == 0.0:
        return MotionPrimitive(start, end, hold(start, 0.0), 0.0)
    c = quintic_coeffs(start.as_array()[None], end.as_array()[None], np.array([T]))
    return MotionPrimitive(start, end, Trajectory(np.array([T]), c), cost)


# ---------------------------------------------------------------------------
# Stopping
# ---------------------------------------------------------------------------

def stopping_target(state: FullState, limits: DynamicsLimits) -> FullState:
    """Rest state at the per-axis constant-deceleration stopping point."""
    v = state.velocity
    return FullState.rest(state.position + v * np.abs(v) / (2.0 * limits.a_max))


def stopping_primitive(state: FullState, limits: DynamicsLimits, max_tries: int = 20) -> Trajectory:
    """Time-optimised quintic to rest.

    A smooth profile that starts with the given acceleration cannot stop
    inside the bang-bang distance, so the target is pushed further along the
    velocity direction until a feasible duration exists.
    """
    if not np.any(state.velocity) and not np.any(state.acceleration):
        return hold(state, 0.0)
    base = stopping_target(state, limits).position - state.position
    if not np.any(base):
        # at zero velocity the residual acceleration sets the drift direction
        base = state.acceleration * np.abs(state.acceleration) / (2.0 * limits.a_max**2)
    scale = 1.0
    last_err = None
    for _ in range(max_tries):
        goal = FullState.rest(state.position + scale * base)
        try:
            return optimize_primitive(state, goal, limits).trajectory
        except InfeasiblePrimitiveError as err:
            last_err = err
            scale *= 1.5
    raise InfeasiblePrimitiveError(f"could not stop from {state}") from last_err


def try_stopping_primitive(state: FullState, limits: DynamicsLimits) -> Trajectory | None:
    """Like :func:`stopping_primitive` but returns None when no stop is found."""
    try:
        return stopping_primitive(state, limits)
    except InfeasiblePrimitiveError:
        return None
