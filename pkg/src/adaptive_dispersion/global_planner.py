"""8-connected grid A* used as the coarse global planner."""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .world import OccupancyGrid

SQRT2 = math.sqrt(2.0)
_MOVES = [(di, dj) for di in (-1, 0, 1) for dj in (-1, 0, 1) if di or dj]


@dataclass
class GridPath:
    cells: list  # (i, j) tuples from start to goal
    points: np.ndarray  # world coordinates of the cell centres
    cost: float  # metres

    def __len__(self):
        return len(self.cells)


def octile(a, b) -> float:
    dx, dy = abs(a[0] - b[0]), abs(a[1] - b[1])
    return (dx + dy) + (SQRT2 - 2.0) * min(dx, dy)


def grid_astar(occ: np.ndarray, start: tuple, goal: tuple):
    """Shortest 8-connected path in cell units; diagonal moves may not cut corners.

    Returns (cells, cost) or None when the goal is unreachable.
    """
    nx, ny = occ.shape
    if occ[start] or occ[goal]:
        return None
    g = {start: 0.0}
    parent = {start: None}
    done = set()
    heap = [(octile(start, goal), 0.0, start)]
    while heap:
        _, gc, c = heapq.heappop(heap)
        if c in done:
            continue
        done.add(c)
        if c == goal:
            cells = []
            while c is not None:
                cells.append(c)
                c = parent[c]
            return cells[::-1], gc
        for di, dj in _MOVES:
            i, j = c[0] + di, c[1] + dj
            if not (0 <= i < nx and 0 <= j < ny) or occ[i, j]:
                continue
            if di and dj and (occ[c[0] + di, c[1]] or occ[c[0], c[1] + dj]):
                continue
            ng = gc + (SQRT2 if di and dj else 1.0)
            if ng < g.get((i, j), math.inf):
                g[(i, j)] = ng
                parent[(i, j)] = c
                heapq.heappush(heap, (ng + octile((i, j), goal), ng, (i, j)))
    return None


def nearest_free_cell(occ: np.ndarray, cell: tuple, max_radius: int = 10):
    """Breadth-first search for the closest free cell (used to snap endpoints)."""
    if not occ[cell]:
        return cell
    seen = {cell}
    q = deque([cell])
    while q:
        c = q.popleft()
        if max(abs(c[0] - cell[0]), abs(c[1] - cell[1])) > max_radius:
            break
        for di, dj in _MOVES:
            n = (c[0] + di, c[1] + dj)
            if n in seen or not (0 <= n[0] < occ.shape[0] and 0 <= n[1] < occ.shape[1]):
                continue
            if not occ[n]:
                return n
            seen.add(n)
            q.append(n)
    return None


def global_plan(grid: OccupancyGrid, start_pos, goal_pos, snap: bool = False) -> GridPath | None:
    """Shortest grid path between two world positions; None if there is none."""
    if grid.dim != 2:
        raise ValueError("global planner supports 2D grids")
    idx = grid.index_of(np.vstack([np.asarray(start_pos, float)[:2], np.asarray(goal_pos, float)[:2]]))
    if not np.all(grid.in_bounds(idx)):
        return None
    s, g = tuple(idx[0].tolist()), tuple(idx[1].tolist())
    if snap:
        s = nearest_free_cell(grid.occupancy, s)
        g = nearest_free_cell(grid.occupancy, g)
        if s is None or g is None:
            return None
    found = grid_astar(grid.occupancy, s, g)
    if found is None:
        return None
    cells, cost = found
    arr = np.asarray(cells, dtype=float)
    pts = grid.origin + (arr + 0.5) * grid.resolution
    return GridPath(cells, pts, cost * grid.resolution)


def _segment_exit(a: np.ndarray, b: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Point where the segment a->b (a inside the box) first leaves [lo, hi]."""
    d = b - a
    t_exit = 1.0
    for k in range(a.size):
        if d[k] > 0:
            t_exit = min(t_exit, (hi[k] - a[k]) / d[k])
        elif d[k] < 0:
            t_exit = min(t_exit, (lo[k] - a[k]) / d[k])
    return a + max(t_exit, 0.0) * d


def local_goal_point(path_points: np.ndarray, lo, hi, goal_pos) -> tuple[np.ndarray, bool]:
    """Final goal if it is inside the window, else where the path first exits it.

    Returns (point, is_final_goal).
    """
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    goal = np.asarray(goal_pos, float)
    if np.all(goal >= lo) and np.all(goal <= hi):
        return goal, True
    pts = np.asarray(path_points, float)
    for a, b in zip(pts[:-1], pts[1:]):
        if not (np.all(b >= lo) and np.all(b <= hi)):
            return _segment_exit(a, b, lo, hi), False
    return pts[-1], False
