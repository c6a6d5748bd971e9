"""Random benchmark instances: maps, start/goal tasks and prioritized MAPF plans.

Plans come from prioritized space-time A*: agents are planned one at a time
in a random priority order, earlier agents acting as moving obstacles that
park forever at their goals. A failed order is retried with a fresh shuffle.
"""

from __future__ import annotations

import heapq
import logging
from collections import deque

import numpy as np

from ktpg.plan_model import AgentTask, Cell, GridMap, MapfPlan, TimedPath, validate_plan

log = logging.getLogger(__name__)


class InstanceError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# maps


def empty_map(width: int = 32, height: int = 32) -> GridMap:
    return GridMap(width, height, np.zeros((height, width), dtype=bool))


def random_map(width: int = 32, height: int = 32, density: float = 0.1, seed: int = 0) -> GridMap:
    """Random obstacles, then everything outside the largest free component is blocked."""
    rng = np.random.default_rng(seed)
    blocked = rng.random((height, width)) < density
    grid = GridMap(width, height, blocked)
    comp = largest_component(grid)
    keep = np.ones_like(blocked)
    for x, y in comp:
        keep[y, x] = False
    return GridMap(width, height, keep)


def warehouse_map(shelf_rows: int = 6, shelf_cols: int = 4, shelf_len: int = 6,
                  aisle: int = 2, margin: int = 3) -> GridMap:
    """Blocks of one-cell-deep shelves separated by aisles, with open border lanes."""
    width = margin * 2 + shelf_cols * shelf_len + (shelf_cols - 1) * aisle
    height = margin * 2 + shelf_rows + (shelf_rows - 1) * aisle
    blocked = np.zeros((height, width), dtype=bool)
    for r in range(shelf_rows):
        y = margin + r * (aisle + 1)
        for c in range(shelf_cols):
            x0 = margin + c * (shelf_len + aisle)
            blocked[y, x0:x0 + shelf_len] = True
    return GridMap(width, height, blocked)


def largest_component(grid: GridMap) -> list[Cell]:
    seen: set[Cell] = set()
    best: list[Cell] = []
    for c in grid.free_cells():
        if c in seen:
            continue
        comp, queue = [], deque([c])
        seen.add(c)
        while queue:
            u = queue.popleft()
            comp.append(u)
            for v in grid.neighbors(u):
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        if len(comp) > len(best):
            best = comp
    return sorted(best)


def bfs_distances(grid: GridMap, source: Cell) -> dict[Cell, int]:
    dist = {source: 0}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in grid.neighbors(u):
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def random_tasks(grid: GridMap, n: int, seed: int = 0) -> list[AgentTask]:
    comp = largest_component(grid)
    if 2 * n > len(comp):
        raise InstanceError(f"map has room for at most {len(comp) // 2} agents")
    rng = np.random.default_rng(seed)
    starts = rng.choice(len(comp), size=n, replace=False)
    goals = rng.choice(len(comp), size=n, replace=False)
    return [AgentTask(i, comp[s], comp[g]) for i, (s, g) in enumerate(zip(starts, goals))]


# ---------------------------------------------------------------------------
# prioritized planning


class _Reservations:
    def __init__(self):
        self.vertex: set[tuple[Cell, int]] = set()
        self.edge: set[tuple[Cell, Cell, int]] = set()
        self.parked: dict[Cell, int] = {}  # cell -> first timestep of permanent occupancy
        self.last_use: dict[Cell, int] = {}

    def blocked(self, a: Cell, b: Cell, t: int) -> bool:
        """Moving (or waiting) from ``a`` at t-1 to ``b`` at t is not allowed.

        Besides vertex and swap conflicts this forbids *following* (entering a
        cell in the step its previous occupant leaves it, in either role): with
        every passing separated by at least one step the temporal plan graph is
        acyclic, whereas a rotation of followers would make it cyclic.
        """
        if (b, t) in self.vertex or (b, a, t) in self.edge:
            return True
        if a != b and ((b, t - 1) in self.vertex or (a, t) in self.vertex):
            return True
        p = self.parked.get(b)
        return p is not None and t >= p

    def add(self, cells: list[Cell]):
        for t, c in enumerate(cells):
            self.vertex.add((c, t))
            self.last_use[c] = max(self.last_use.get(c, -1), t)
            if t:
                self.edge.add((cells[t - 1], c, t))
        self.parked[cells[-1]] = len(cells) - 1


def space_time_astar(grid: GridMap, start: Cell, goal: Cell, res: _Reservations,
                     h: dict[Cell, int], max_t: int) -> list[Cell] | None:
    if start not in h:
        return None
    if res.blocked(start, start, 0):
        return None
    earliest_goal = res.last_use.get(goal, -1) + 1
    open_ = [(h[start], 0, start)]
    parent: dict[tuple[Cell, int], tuple[Cell, int] | None] = {(start, 0): None}
    while open_:
        _, t, c = heapq.heappop(open_)
        if c == goal and t >= earliest_goal:
            path, node = [], (c, t)
            while node is not None:
                path.append(node[0])
                node = parent[node]
            return path[::-1]
        if t >= max_t:
            continue
        for nb in [c] + grid.neighbors(c):
            if nb not in h or (nb, t + 1) in parent or res.blocked(c, nb, t + 1):
                continue
            parent[(nb, t + 1)] = (c, t)
            heapq.heappush(open_, (t + 1 + h[nb], t + 1, nb))
    return None


def prioritized_plan(grid: GridMap, tasks: list[AgentTask], seed: int = 0,
                     max_orders: int = 20, max_t: int | None = None) -> MapfPlan:
    rng = np.random.default_rng(seed)
    heuristics = {t.goal: bfs_distances(grid, t.goal) for t in tasks}
    max_t = max_t or 4 * (grid.width + grid.height) + 2 * len(tasks)
    for attempt in range(max_orders):
        order = list(rng.permutation(len(tasks)))
        res = _Reservations()
        for task in tasks:  # not-yet-planned agents still sit at their starts at t=0
            res.vertex.add((task.start, 0))
        paths: dict[int, list[Cell]] = {}
        for i in order:
            task = tasks[i]
            res.vertex.discard((task.start, 0))
            path = space_time_astar(grid, task.start, task.goal, res, heuristics[task.goal], max_t)
            if path is None:
                break
            res.add(path)
            paths[i] = path
        else:
            timed = []
            for i in range(len(tasks)):
                cells = paths[i]
                timed.append(TimedPath(i, tuple((c, t) for t, c in enumerate(cells))))
            plan = MapfPlan(timed, grid)
            if validate_plan(plan).ok:
                return plan
            log.debug("order %d produced collisions; retrying", attempt)
            continue
        log.debug("priority order %d failed at agent %d", attempt, i)
    raise InstanceError(f"no plan after {max_orders} priority orders")


def generate_instance(grid: GridMap, n_agents: int, seed: int = 0,
                      max_orders: int = 20) -> tuple[list[AgentTask], MapfPlan]:
    tasks = random_tasks(grid, n_agents, seed)
    return tasks, prioritized_plan(grid, tasks, seed, max_orders)


MAPS = {
    "empty": lambda seed=0: empty_map(32, 32),
    "random": lambda seed=0: random_map(32, 32, 0.1, seed),
    "warehouse": lambda seed=0: warehouse_map(),
}


# ---------------------------------------------------------------------------
# small hand-built scenarios


def crossing_instance() -> MapfPlan:
    """Two agents crossing one cell; the second waits one step for the first."""
    grid = empty_map(3, 3)
    paths = [
        [(0, 1), (1, 1), (2, 1)],
        [(1, 0), (1, 0), (1, 1), (1, 2)],
    ]
    return MapfPlan([TimedPath(i, tuple((c, t) for t, c in enumerate(p))) for i, p in enumerate(paths)],
                    grid)


def overtaking_instance():
    """Two robots already cruising at full speed whose paths share cell B2.

    Columns A, B, C are x = 0, 1, 2 and row n is y = n. R1 (agent 0) goes
    C2 -> B2 -> A2; R2 (agent 1) comes down column B from B8 and ends at B1,
    passing B2 well after R1 has cleared it. Returns ``(plan, initial_states)``.
    """
    from ktpg.kinodynamics import KinematicState

    grid = empty_map(3, 10)
    r1 = [(2, 2), (1, 2), (0, 2)]
    r2 = [(1, y) for y in range(8, 0, -1)]
    plan = MapfPlan([TimedPath(0, tuple((c, t) for t, c in enumerate(r1))),
                     TimedPath(1, tuple((c, t) for t, c in enumerate(r2)))], grid)
    states = {0: KinematicState(2.0, (-1, 0), 0.0), 1: KinematicState(2.0, (0, -1), 0.0)}
    return plan, states
