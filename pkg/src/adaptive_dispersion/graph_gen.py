"""Offline construction of minimum-dispersion motion-primitive graphs.

Vertices are picked greedily from a dense quasirandom candidate set: each
round adds the candidate that is currently worst served by the graph (the
dispersion witness). Costs are the optimal jerk+time BVP costs, which are
direction dependent, so two drift-aware dispersion definitions are offered:

* ``ROUND_TRIP``: ``max_x min_v max(J(x, v), J(v, x))``
* ``TWO_SIDED``:  ``max_x max(min_v J(v, x), min_v J(x, v))``

Only position differences enter the cost, so a graph built around the origin
can be re-anchored anywhere at plan time.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import qmc

from .motion_primitives import (
    DynamicsLimits,
    FullState,
    InvalidArgumentError,
    MotionPrimitive,
    Trajectory,
    optimize_batch,
    peak_derivatives,
    primitive_from_duration,
    quintic_coeffs,
)

FORMAT_VERSION = 1
FAMILY_FORMAT_VERSION = 1


class GraphFormatError(ValueError):
    pass


class GraphVersionError(GraphFormatError):
    pass


class DispersionMode(str, enum.Enum):
    ROUND_TRIP = "round_trip"
    TWO_SIDED = "two_sided"


@dataclass(frozen=True)
class StateBox:
    """Origin-centred box of states.

    ``acceleration_bound == 0`` pins sampled accelerations to zero, which is
    the default for planning graphs (vertices are then position+velocity).
    """

    position_half_extent: tuple
    velocity_bound: float
    acceleration_bound: float = 0.0

    def __post_init__(self):
        ext = tuple(float(x) for x in np.atleast_1d(self.position_half_extent))
        object.__setattr__(self, "position_half_extent", ext)
        if len(ext) not in (1, 2, 3) or min(ext) <= 0:
            raise InvalidArgumentError("position half extents must be positive, dimension 1..3")
        if self.velocity_bound <= 0 or self.acceleration_bound < 0:
            raise InvalidArgumentError("velocity bound must be > 0 and acceleration bound >= 0")

    @property
    def dim(self) -> int:
        return len(self.position_half_extent)

    @property
    def tile_period(self) -> np.ndarray:
        """Position period at which copies of the box tile space."""
        return 2.0 * np.asarray(self.position_half_extent)

    def contains(self, states: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        ext = np.asarray(self.position_half_extent)
        return (
            np.all(np.abs(states[:, 0, :]) <= ext + tol, axis=1)
            & np.all(np.abs(states[:, 1, :]) <= self.velocity_bound + tol, axis=1)
            & np.all(np.abs(states[:, 2, :]) <= self.acceleration_bound + tol, axis=1)
        )

    def to_dict(self) -> dict:
        return {
            "position_half_extent": list(self.position_half_extent),
            "velocity_bound": self.velocity_bound,
            "acceleration_bound": self.acceleration_bound,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "StateBox":
        return cls(tuple(data["position_half_extent"]), data["velocity_bound"], data.get("acceleration_bound", 0.0))


@dataclass(frozen=True)
class CandidateSet:
    states: np.ndarray  # (n, 3, D); row 0 is the origin rest state
    method: str
    seed: int
    count: int

    def __len__(self):
        return self.count

    def state(self, i: int) -> FullState:
        return FullState.from_array(self.states[i])

    def meta(self) -> dict:
        return {"method": self.method, "seed": self.seed, "count": self.count}


def sample_candidates(box: StateBox, n: int, seed: int = 0) -> CandidateSet:
    """Origin rest state followed by n-1 scrambled Halton points mapped into the box."""
    if n < 2:
        raise InvalidArgumentError("need at least 2 candidates")
    D = box.dim
    free = 3 * D if box.acceleration_bound > 0 else 2 * D
    sampler = qmc.Halton(d=free, scramble=True, seed=seed)
    u = sampler.random(n - 1)
    lo = -np.concatenate([box.position_half_extent, [box.velocity_bound] * D, [box.acceleration_bound] * (free - 2 * D)])
    pts = qmc.scale(u, lo, -lo)
    states = np.zeros((n, 3, D))
    states[1:, 0, :] = pts[:, :D]
    states[1:, 1, :] = pts[:, D : 2 * D]
    if free > 2 * D:
        states[1:, 2, :] = pts[:, 2 * D :]
    states.setflags(write=False)
    return CandidateSet(states, "halton", int(seed), n)


def candidates_from_states(states: Sequence[FullState] | np.ndarray, method: str = "explicit") -> CandidateSet:
    arr = np.stack([s.as_array() for s in states]) if not isinstance(states, np.ndarray) else np.asarray(states, float)
    arr = arr.copy()
    arr.setflags(write=False)
    return CandidateSet(arr, method, 0, arr.shape[0])


def _as_array(states) -> np.ndarray:
    if isinstance(states, CandidateSet):
        return states.states
    if isinstance(states, np.ndarray):
        return states
    return np.stack([s.as_array() for s in states])


def pairwise_costs(sources: np.ndarray, targets: np.ndarray, limits: DynamicsLimits) -> tuple[np.ndarray, np.ndarray]:
    """Dense (len(sources), len(targets)) matrices of optimal J and T."""
    S, C = sources.shape[0], targets.shape[0]
    s = np.repeat(sources, C, axis=0)
    e = np.tile(targets, (S, 1, 1))
    T, J = optimize_batch(s, e, limits)
    return J.reshape(S, C), T.reshape(S, C)


def dispersion(vertices, candidates, mode: DispersionMode, limits: DynamicsLimits) -> tuple[float, FullState]:
    """Brute-force dispersion of ``vertices`` with sup over X replaced by max over candidates."""
    V = _as_array(vertices)
    C = _as_array(candidates)
    if V.shape[0] == 0 or C.shape[0] == 0:
        raise InvalidArgumentError("vertices and candidates must be nonempty")
    J_vc, _ = pairwise_costs(V, C, limits)  # J(v, x)
    J_cv, _ = pairwise_costs(C, V, limits)  # J(x, v)
    J_cv = J_cv.T
    mode = DispersionMode(mode)
    if mode is DispersionMode.ROUND_TRIP:
        vals = np.min(np.maximum(J_vc, J_cv), axis=0)
    else:
        vals = np.maximum(np.min(J_vc, axis=0), np.min(J_cv, axis=0))
    i = int(np.argmax(vals))
    return float(vals[i]), FullState.from_array(C[i])


@dataclass
class GreedyResult:
    order: list  # candidate indices in insertion order
    trace: list  # dispersion after each insertion
    witnesses: list  # witness candidate index after each insertion
    reached: bool
    # cached costs: rows follow insertion order, columns are candidates
    out_cost: np.ndarray = field(repr=False)  # J(v_i, x)
    out_time: np.ndarray = field(repr=False)
    in_cost: np.ndarray = field(repr=False)  # J(x, v_i)
    in_time: np.ndarray = field(repr=False)
    solves: int = 0

    def vertices(self, candidates: CandidateSet, count: int | None = None) -> np.ndarray:
        idx = self.order if count is None else self.order[:count]
        return candidates.states[np.asarray(idx)]


def greedy_min_dispersion(
    candidates: CandidateSet,
    mode: DispersionMode = DispersionMode.TWO_SIDED,
    limits: DynamicsLimits | None = None,
    *,
    target_dispersion: float | None = None,
    target_vertex_count: int | None = None,
    max_vertices: int | None = None,
) -> GreedyResult:
    """Greedy farthest-point insertion under the drift-aware dispersion.

    Exactly one of ``target_dispersion`` / ``target_vertex_count`` must be
    given. ``max_vertices`` caps the run for dispersion targets; hitting the
    cap (or exhausting the candidates) leaves ``reached`` False.
    """
    if limits is None:
        raise InvalidArgumentError("limits are required")
    if (target_dispersion is None) == (target_vertex_count is None):
        raise InvalidArgumentError("give exactly one of target_dispersion / target_vertex_count")
    mode = DispersionMode(mode)
    C = candidates.states
    n = C.shape[0]
    if target_vertex_count is not None and not (1 <= target_vertex_count <= n):
        raise InvalidArgumentError(f"target_vertex_count must be in [1, {n}]")
    cap = n if max_vertices is None else min(n, max_vertices)

    out_c, out_t, in_c, in_t = [], [], [], []
    order: list[int] = []
    trace: list[float] = []
    witnesses: list[int] = []
    best_out = np.full(n, np.inf)  # min_v J(x, v)
    best_in = np.full(n, np.inf)  # min_v J(v, x)
    best_rt = np.full(n, np.inf)  # min_v max(J(x,v), J(v,x))
    solves = 0

    nxt = 0  # origin rest state seeds the graph
    reached = False
    while True:
        v = C[nxt : nxt + 1]
        Jvc, Tvc = pairwise_costs(v, C, limits)
        Jcv, Tcv = pairwise_costs(C, v, limits)
        solves += 2 * n
        Jvc, Tvc, Jcv, Tcv = Jvc[0], Tvc[0], Jcv[:, 0], Tcv[:, 0]
        out_c.append(Jvc)
        out_t.append(Tvc)
        in_c.append(Jcv)
        in_t.append(Tcv)
        order.append(nxt)
        np.minimum(best_in, Jvc, out=best_in)
        np.minimum(best_out, Jcv, out=best_out)
        np.minimum(best_rt, np.maximum(Jvc, Jcv), out=best_rt)
        vals = best_rt if mode is DispersionMode.ROUND_TRIP else np.maximum(best_out, best_in)
        w = int(np.argmax(vals))
        d = float(vals[w])
        trace.append(d)
        witnesses.append(w)

        k = len(order)
        if target_vertex_count is not None:
            if k >= target_vertex_count:
                reached = True
                break
        elif d <= target_dispersion:
            reached = True
            break
        if k >= cap:
            break
        if d == 0.0:
            # every candidate already costs nothing; take the lowest unused index
            used = set(order)
            nxt = next(i for i in range(n) if i not in used)
        else:
            nxt = w

    return GreedyResult(
        order=order,
        trace=trace,
        witnesses=witnesses,
        reached=reached,
        out_cost=np.array(out_c),
        out_time=np.array(out_t),
        in_cost=np.array(in_c),
        in_time=np.array(in_t),
        solves=solves,
    )


@dataclass(frozen=True)
class Edge:
    source: int
    target: int
    primitive: MotionPrimitive

    @property
    def cost(self) -> float:
        return self.primitive.cost


def build_edges(
    vertices,
    d: float,
    beta: float,
    limits: DynamicsLimits,
    *,
    cost: np.ndarray | None = None,
    duration: np.ndarray | None = None,
) -> list[Edge]:
    """Directed edge u->v for every ordered pair with J(u, v) <= beta * d.

    ``cost``/``duration`` may supply a precomputed (V, V) matrix pair.
    """
    if not beta > 0:
        raise InvalidArgumentError("beta must be > 0")
    V = _as_array(vertices)
    if cost is None:
        cost, duration = pairwise_costs(V, V, limits)
    thresh = beta * d
    edges = []
    for u, v in zip(*np.nonzero(cost <= thresh)):
        if u == v:
            continue
        prim = primitive_from_duration(
            FullState.from_array(V[u]), FullState.from_array(V[v]), float(duration[u, v]), float(cost[u, v])
        )
        edges.append(Edge(int(u), int(v), prim))
    return edges


@dataclass(eq=False)
class DispersionGraph:
    """Vertices plus packed directed edges.

    Edge ``k`` runs ``edge_src[k] -> edge_dst[k]`` with optimal cost
    ``edge_cost[k]``, duration ``edge_duration[k]`` and single-segment quintic
    ``edge_coeffs[k]`` (D, 6) expressed in the graph's own frame.

    ``edge_shift[k]`` (D integers) says which tile the target lies in: the
    edge ends at ``vertices[dst]`` moved by ``edge_shift[k] * box.tile_period``.
    Shifted edges let searches leave the box the vertices were sampled in.
    """

    vertices: np.ndarray  # (V, 3, D)
    edge_src: np.ndarray
    edge_dst: np.ndarray
    edge_cost: np.ndarray
    edge_duration: np.ndarray
    edge_coeffs: np.ndarray
    dispersion: float
    witness: int  # candidate index attaining the dispersion
    mode: DispersionMode
    limits: DynamicsLimits
    beta: float
    box: StateBox
    candidates: dict  # candidate metadata {method, seed, count}
    trace: list = field(default_factory=list)
    edge_shift: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        if self.edge_shift is None:
            self.edge_shift = np.zeros((self.edge_src.size, self.vertices.shape[2]), dtype=np.int64)
        self.edge_shift = np.asarray(self.edge_shift, dtype=np.int64).reshape(self.edge_src.size, -1)

    @property
    def edge_displacement(self) -> np.ndarray:
        """(E, D) position change along each edge."""
        if "disp" not in self._cache:
            period = self.box.tile_period
            self._cache["disp"] = (
                self.vertices[self.edge_dst, 0] + self.edge_shift * period - self.vertices[self.edge_src, 0]
            )
        return self._cache["disp"]

    @classmethod
    def from_edges(cls, vertices, edges: Sequence[Edge], **kw) -> "DispersionGraph":
        V = _as_array(vertices)
        D = V.shape[2]
        return cls(
            vertices=np.array(V),
            edge_src=np.array([e.source for e in edges], dtype=np.int64),
            edge_dst=np.array([e.target for e in edges], dtype=np.int64),
            edge_cost=np.array([e.cost for e in edges], dtype=float),
            edge_duration=np.array([e.primitive.duration for e in edges], dtype=float),
            edge_coeffs=np.array([e.primitive.trajectory.coeffs[0] for e in edges]).reshape(len(edges), D, 6),
            **kw,
        )

    @property
    def dim(self) -> int:
        return self.vertices.shape[2]

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_edges(self) -> int:
        return self.edge_src.size

    @property
    def speed_bound(self) -> float:
        """Upper bound on the speed reached along any edge (per-axis peaks combined)."""
        if "speed" not in self._cache:
            if self.num_edges == 0:
                self._cache["speed"] = self.limits.v_max * math.sqrt(self.dim)
            else:
                vmax, _ = peak_derivatives(self.edge_coeffs, self.edge_duration)
                self._cache["speed"] = float(np.max(np.sqrt(np.sum(vmax**2, axis=1))))
        return self._cache["speed"]

    def vertex(self, i: int) -> FullState:
        return FullState.from_array(self.vertices[i])

    def edge_trajectory(self, k: int) -> Trajectory:
        return Trajectory(self.edge_duration[k : k + 1], self.edge_coeffs[k : k + 1])

    def edge(self, k: int) -> Edge:
        u, v = int(self.edge_src[k]), int(self.edge_dst[k])
        end = self.vertex(v).translated(self.edge_shift[k] * self.box.tile_period)
        prim = MotionPrimitive(self.vertex(u), end, self.edge_trajectory(k), float(self.edge_cost[k]))
        return Edge(u, v, prim)

    @property
    def edges(self) -> list:
        return [self.edge(k) for k in range(self.num_edges)]

    def out_edges(self, u: int) -> np.ndarray:
        """Edge indices leaving vertex u."""
        if "adj" not in self._cache:
            order = np.argsort(self.edge_src, kind="stable")
            bounds = np.searchsorted(self.edge_src[order], np.arange(self.num_vertices + 1))
            self._cache["adj"] = [order[bounds[i] : bounds[i + 1]] for i in range(self.num_vertices)]
        return self._cache["adj"][u]

    def cache(self) -> dict:
        """Scratch space for derived, read-only search data."""
        return self._cache

    def __eq__(self, other):
        if not isinstance(other, DispersionGraph):
            return NotImplemented
        return (
            np.array_equal(self.vertices, other.vertices)
            and self.mode == other.mode
            and self.limits == other.limits
            and self.beta == other.beta
            and self.box == other.box
            and self.candidates == other.candidates
            and self.witness == other.witness
            and math.isclose(self.dispersion, other.dispersion, rel_tol=1e-12)
            and np.array_equal(self.edge_src, other.edge_src)
            and np.array_equal(self.edge_dst, other.edge_dst)
            and np.array_equal(self.edge_shift, other.edge_shift)
            and np.allclose(self.edge_cost, other.edge_cost, rtol=1e-12, atol=0.0)
            and np.allclose(self.edge_duration, other.edge_duration, rtol=1e-12, atol=0.0)
            and np.allclose(self.edge_coeffs, other.edge_coeffs, rtol=1e-12, atol=1e-300)
        )

    __hash__ = None


def _tile_shifts(dim: int) -> np.ndarray:
    """All neighbouring tile offsets in {-1, 0, 1}^D except the zero shift."""
    grids = np.meshgrid(*([np.arange(-1, 2)] * dim), indexing="ij")
    shifts = np.stack([g.reshape(-1) for g in grids], axis=1)
    return shifts[np.any(shifts != 0, axis=1)]


def tiled_edges(V: np.ndarray, d: float, beta: float, limits: DynamicsLimits, period) -> tuple:
    """Edges from each vertex to copies of every vertex in the adjacent tiles.

    Returns (src, dst, shift, cost, duration) for pairs with cost <= beta * d.
    """
    n, _, dim = V.shape
    shifts = _tile_shifts(dim)
    out = []
    for sh in shifts:
        tgt = np.array(V)
        tgt[:, 0, :] += sh * np.asarray(period)
        cost, dur = pairwise_costs(V, tgt, limits)
        src, dst = np.nonzero(cost <= beta * d)
        out.append((src, dst, np.repeat(sh[None], src.size, axis=0), cost[src, dst], dur[src, dst]))
    src, dst, shift, cost, dur = (np.concatenate(parts) for parts in zip(*out))
    order = np.lexsort((dst, src))
    return src[order], dst[order], shift[order], cost[order], dur[order]


def graph_from_greedy(
    candidates: CandidateSet,
    greedy: GreedyResult,
    count: int,
    mode: DispersionMode,
    limits: DynamicsLimits,
    beta: float,
    box: StateBox,
    tile: bool = True,
) -> DispersionGraph:
    """Graph on the first ``count`` greedy vertices.

    With ``tile`` the vertex set is treated as one cell of a periodic lattice
    and edges into the neighbouring copies are added under the same cost rule.
    """
    if not beta > 0:
        raise InvalidArgumentError("beta must be > 0")
    idx = np.asarray(greedy.order[:count])
    V = np.array(candidates.states[idx])
    dim = V.shape[2]
    cost = greedy.out_cost[:count][:, idx]
    dur = greedy.out_time[:count][:, idx]
    d = greedy.trace[count - 1]
    mask = cost <= beta * d
    np.fill_diagonal(mask, False)
    src, dst = np.nonzero(mask)
    shift = np.zeros((src.size, dim), dtype=np.int64)
    ecost, T = cost[src, dst], dur[src, dst]
    if tile:
        ts, td, tsh, tc, tT = tiled_edges(V, d, beta, limits, box.tile_period)
        src, dst = np.concatenate([src, ts]), np.concatenate([dst, td])
        shift = np.concatenate([shift, tsh]).astype(np.int64)
        ecost, T = np.concatenate([ecost, tc]), np.concatenate([T, tT])
    ends = np.array(V[dst])
    ends[:, 0, :] += shift * box.tile_period
    coeffs = np.zeros((src.size, dim, 6))
    moving = T > 0
    if np.any(moving):
        coeffs[moving] = quintic_coeffs(V[src[moving]], ends[moving], T[moving])
    if np.any(~moving):
        # zero-cost edges between coincident vertices are constant holds
        coeffs[~moving, :, 0] = V[src[~moving], 0, :]
    return DispersionGraph(
        vertices=V,
        edge_src=src.astype(np.int64),
        edge_dst=dst.astype(np.int64),
        edge_cost=ecost.astype(float),
        edge_duration=T.astype(float),
        edge_coeffs=coeffs,
        dispersion=d,
        witness=greedy.witnesses[count - 1],
        mode=DispersionMode(mode),
        limits=limits,
        beta=float(beta),
        box=box,
        candidates=candidates.meta(),
        trace=list(greedy.trace[:count]),
        edge_shift=shift,
    )


@dataclass
class GraphFamily:
    graphs: list  # strictly decreasing dispersion
    box: StateBox
    limits: DynamicsLimits
    ladder: list
    solves: int = 0

    def __len__(self):
        return len(self.graphs)

    def __getitem__(self, i) -> DispersionGraph:
        return self.graphs[i]

    @property
    def dispersions(self) -> list:
        return [g.dispersion for g in self.graphs]


class DispersionUnreachableError(RuntimeError):
    pass


def build_family(
    box: StateBox,
    limits: DynamicsLimits,
    dispersion_ladder: Sequence[float],
    candidate_count: int = 2000,
    seed: int = 0,
    *,
    mode: DispersionMode = DispersionMode.TWO_SIDED,
    beta: float = 3.0,
    max_vertices: int | None = None,
    candidates: CandidateSet | None = None,
    tile: bool = True,
) -> GraphFamily:
    """One graph per ladder rung, all cut from a single greedy run."""
    ladder = [float(x) for x in dispersion_ladder]
    if not ladder or any(b >= a for a, b in zip(ladder, ladder[1:])):
        raise InvalidArgumentError("dispersion ladder must be nonempty and strictly decreasing")
    if candidates is None:
        candidates = sample_candidates(box, candidate_count, seed)
    greedy = greedy_min_dispersion(
        candidates, mode, limits, target_dispersion=ladder[-1], max_vertices=max_vertices
    )
    if not greedy.reached:
        raise DispersionUnreachableError(
            f"target dispersion {ladder[-1]} not reached; best {greedy.trace[-1]} with {len(greedy.order)} vertices"
        )
    trace = np.asarray(greedy.trace)
    counts = [int(np.argmax(trace <= r)) + 1 for r in ladder]
    if any(b <= a for a, b in zip(counts, counts[1:])):
        raise InvalidArgumentError(f"ladder rungs {ladder} collapse onto vertex counts {counts}")
    graphs = [graph_from_greedy(candidates, greedy, c, mode, limits, beta, box, tile) for c in counts]
    return GraphFamily(graphs, box, limits, ladder, solves=greedy.solves)


def family_from_counts(
    box: StateBox,
    limits: DynamicsLimits,
    vertex_counts: Sequence[int],
    candidate_count: int = 2000,
    seed: int = 0,
    *,
    mode: DispersionMode = DispersionMode.TWO_SIDED,
    beta: float = 3.0,
    candidates: CandidateSet | None = None,
    tile: bool = True,
) -> GraphFamily:
    """Family whose rungs are the greedy prefixes of the given sizes.

    The ladder is read off the greedy trace, so it is strictly decreasing only
    if every count adds dispersion-reducing vertices.
    """
    counts = [int(c) for c in vertex_counts]
    if not counts or counts[0] < 1 or any(b <= a for a, b in zip(counts, counts[1:])):
        raise InvalidArgumentError("vertex counts must be positive and strictly increasing")
    if candidates is None:
        candidates = sample_candidates(box, candidate_count, seed)
    greedy = greedy_min_dispersion(candidates, mode, limits, target_vertex_count=counts[-1])
    if len(greedy.order) < counts[-1]:
        raise DispersionUnreachableError(f"only {len(greedy.order)} candidates available, {counts[-1]} requested")
    ladder = [float(greedy.trace[c - 1]) for c in counts]
    if any(b >= a for a, b in zip(ladder, ladder[1:])):
        raise InvalidArgumentError(f"vertex counts {counts} give a non-decreasing ladder {ladder}")
    graphs = [graph_from_greedy(candidates, greedy, c, mode, limits, beta, box, tile) for c in counts]
    return GraphFamily(graphs, box, limits, ladder, solves=greedy.solves)


# ---------------------------------------------------------------------------
# Serialisation
# ---------------------------------------------------------------------------

def graph_to_dict(graph: DispersionGraph) -> dict:
    header = {
        "format_version": FORMAT_VERSION,
        "D": graph.dim,
        "mode": graph.mode.value,
        "rho": graph.limits.rho,
        "v_max": graph.limits.v_max,
        "a_max": graph.limits.a_max,
        "beta": graph.beta,
        "candidate_count": graph.candidates.get("count"),
        "seed": graph.candidates.get("seed"),
        "dispersion": graph.dispersion,
    }
    edges = [
        {
            "from_id": int(graph.edge_src[k]),
            "to_id": int(graph.edge_dst[k]),
            "shift": graph.edge_shift[k].tolist(),
            "cost": float(graph.edge_cost[k]),
            "trajectory": graph.edge_trajectory(k).to_dict(),
        }
        for k in range(graph.num_edges)
    ]
    return {
        "header": header,
        "candidates": graph.candidates,
        "box": graph.box.to_dict(),
        "witness": graph.witness,
        "trace": graph.trace,
        "vertices": graph.vertices.tolist(),
        "edges": edges,
    }


def graph_from_dict(data: dict) -> DispersionGraph:
    try:
        header = data["header"]
        version = header["format_version"]
    except (KeyError, TypeError) as err:
        raise GraphFormatError(f"missing header: {err}") from err
    if version != FORMAT_VERSION:
        raise GraphVersionError(f"unsupported graph format version {version} (expected {FORMAT_VERSION})")
    try:
        limits = DynamicsLimits(header["v_max"], header["a_max"], header["rho"])
        D = int(header["D"])
        V = np.asarray(data["vertices"], dtype=float)
        if V.ndim != 3 or V.shape[1] != 3 or V.shape[2] != D:
            raise GraphFormatError(f"vertex table has shape {V.shape}")
        recs = data["edges"]
        E = len(recs)
        src = np.array([int(r["from_id"]) for r in recs], dtype=np.int64)
        dst = np.array([int(r["to_id"]) for r in recs], dtype=np.int64)
        if E and (src.min() < 0 or dst.min() < 0 or max(src.max(), dst.max()) >= V.shape[0]):
            raise GraphFormatError("edge references a missing vertex")
        cost = np.array([float(r["cost"]) for r in recs], dtype=float)
        shift = np.array([r.get("shift", [0] * D) for r in recs], dtype=np.int64).reshape(E, D)
        trajs = [Trajectory.from_dict(r["trajectory"]) for r in recs]
        if any(t.num_segments != 1 or t.dim != D for t in trajs):
            raise GraphFormatError("edge trajectories must be single segments of dimension D")
        dur = np.array([t.durations[0] for t in trajs], dtype=float)
        coeffs = np.array([t.coeffs[0] for t in trajs], dtype=float).reshape(E, D, 6)
        return DispersionGraph(
            vertices=V,
            edge_src=src,
            edge_dst=dst,
            edge_cost=cost,
            edge_duration=dur,
            edge_coeffs=coeffs,
            dispersion=float(header["dispersion"]),
            witness=int(data["witness"]),
            mode=DispersionMode(header["mode"]),
            limits=limits,
            beta=float(header["beta"]),
            box=StateBox.from_dict(data["box"]),
            candidates=dict(data["candidates"]),
            trace=[float(x) for x in data.get("trace", [])],
            edge_shift=shift,
        )
    except GraphFormatError:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as err:
        raise GraphFormatError(f"malformed graph file: {err}") from err


def save_graph(graph: DispersionGraph, path) -> None:
    Path(path).write_text(json.dumps(graph_to_dict(graph), sort_keys=True))


def load_graph(path) -> DispersionGraph:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise GraphFormatError(f"{path}: not valid JSON ({err})") from err
    return graph_from_dict(data)


def save_family(family: GraphFamily, directory, stem: str = "graph") -> Path:
    """Write each graph plus a family index; returns the index path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    refs = []
    for i, g in enumerate(family.graphs):
        name = f"{stem}_{i:02d}.json"
        save_graph(g, directory / name)
        refs.append(name)
    index = {
        "format_version": FAMILY_FORMAT_VERSION,
        "graphs": refs,
        "ladder": family.ladder,
        "dispersions": family.dispersions,
        "vertex_counts": [g.num_vertices for g in family.graphs],
        "box": family.box.to_dict(),
        "solves": family.solves,
    }
    path = directory / "family.json"
    path.write_text(json.dumps(index, indent=1, sort_keys=True))
    return path


def load_family(path) -> GraphFamily:
    path = Path(path)
    try:
        index = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise GraphFormatError(f"{path}: not valid JSON ({err})") from err
    if index.get("format_version") != FAMILY_FORMAT_VERSION:
        raise GraphVersionError(f"unsupported family format version {index.get('format_version')}")
    graphs = [load_graph(path.parent / ref) for ref in index["graphs"]]
    if not graphs:
        raise GraphFormatError("family lists no graphs")
    return GraphFamily(graphs, StateBox.from_dict(index["box"]), graphs[0].limits, index["ladder"], index.get("solves", 0))
