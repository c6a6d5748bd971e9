"""Grid maps, MovingAI scenarios and discrete MAPF plans.

Coordinates are ``(x, y)`` = (column, row) with the origin at the top-left
corner, the convention of the MovingAI ``.scen`` files. A plan file holds one
record per agent::

    0: (1,2)@0, (2,2)@1, (2,2)@2, (2,3)@3
    1: (5,5)@0, (5,4)@1

Wait steps (a repeated cell) are kept verbatim; they are collapsed only when
the temporal plan graph is built.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable

import numpy as np

if TYPE_CHECKING:
    from ktpg.kinodynamics import RobotModel

Cell = tuple[int, int]

PASSABLE = frozenset(".GS")
BLOCKED = frozenset("@OTW")


class ParseError(ValueError):
    """Malformed map, scenario or plan text."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class GridMap:
    width: int
    height: int
    blocked: np.ndarray  # bool, indexed [y, x]
    cell_size: float = 1.0

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("map dimensions must be positive")
        if self.blocked.shape != (self.height, self.width):
            raise ValueError("blocked mask shape does not match map dimensions")

    def in_bounds(self, cell: Cell) -> bool:
        x, y = cell
        return 0 <= x < self.width and 0 <= y < self.height

    def passable(self, cell: Cell) -> bool:
        return self.in_bounds(cell) and not self.blocked[cell[1], cell[0]]

    def neighbors(self, cell: Cell) -> list[Cell]:
        x, y = cell
        out = []
        for c in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
            if self.passable(c):
                out.append(c)
        return out

    def free_cells(self) -> list[Cell]:
        ys, xs = np.nonzero(~self.blocked)
        return [(int(x), int(y)) for y, x in zip(ys, xs)]

    @classmethod
    def from_rows(cls, rows: Iterable[str]) -> "GridMap":
        rows = list(rows)
        blocked = np.array([[ch in BLOCKED for ch in row] for row in rows], dtype=bool)
        return cls(width=len(rows[0]), height=len(rows), blocked=blocked)


@dataclass(frozen=True)
class AgentTask:
    agent_id: int
    start: Cell
    goal: Cell


@dataclass(frozen=True)
class TimedPath:
    agent_id: int
    steps: tuple[tuple[Cell, int], ...]

    @property
    def cells(self) -> list[Cell]:
        return [c for c, _ in self.steps]

    @property
    def start(self) -> Cell:
        return self.steps[0][0]

    @property
    def goal(self) -> Cell:
        return self.steps[-1][0]

    def cell_at(self, t: int) -> Cell:
        """Location at timestep ``t``; agents park at their goal afterwards."""
        if t >= len(self.steps):
            return self.steps[-1][0]
        return self.steps[max(t, 0)][0]


@dataclass
class MapfPlan:
    paths: list[TimedPath]
    map: GridMap | None = None

    @property
    def num_agents(self) -> int:
        return len(self.paths)

    @property
    def horizon(self) -> int:
        return max((len(p.steps) for p in self.paths), default=0)


@dataclass
class ValidationReport:
    vertex_collisions: list[tuple[int, int, int, Cell]] = field(default_factory=list)
    edge_collisions: list[tuple[int, int, int, Cell, Cell]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.vertex_collisions and not self.edge_collisions

    def __bool__(self) -> bool:
        # truthy when something is wrong, like a non-empty list of problems
        return not self.ok

    def __len__(self) -> int:
        return len(self.vertex_collisions) + len(self.edge_collisions)


def adjacent(a: Cell, b: Cell) -> bool:
    return abs(a[0] - b[0]) + abs(a[1] - b[1]) == 1


def collapse_waits(cells: Iterable[Cell]) -> list[Cell]:
    out: list[Cell] = []
    for c in cells:
        if not out or out[-1] != c:
            out.append(c)
    return out


# ---------------------------------------------------------------------------
# MovingAI formats


def parse_map(text: str) -> GridMap:
    lines = text.splitlines()
    header: dict[str, str] = {}
    i = 0
    while i < len(lines):
        line = lines[i].strip()
        i += 1
        if not line:
            continue
        if line == "map":
            break
        parts = line.split()
        if len(parts) != 2 or parts[0] not in ("type", "height", "width"):
            raise ParseError(f"unexpected header line {line!r}", i)
        header[parts[0]] = parts[1]
    else:
        raise ParseError("missing 'map' line", i)
    for key in ("height", "width"):
        if key not in header:
            raise ParseError(f"missing '{key}' in header", i)
    try:
        height, width = int(header["height"]), int(header["width"])
    except ValueError:
        raise ParseError("non-integer map dimensions", i) from None
    rows = []
    for j in range(i, len(lines)):
        row = lines[j].rstrip("\r\n")
        if not row.strip() and len(rows) == height:
            continue
        if len(rows) == height:
            raise ParseError("more rows than declared height", j + 1)
        if len(row) != width:
            raise ParseError(f"row has {len(row)} cells, expected {width}", j + 1)
        bad = set(row) - PASSABLE - BLOCKED
        if bad:
            raise ParseError(f"unknown cell character {sorted(bad)[0]!r}", j + 1)
        rows.append(row)
    if len(rows) != height:
        raise ParseError(f"found {len(rows)} rows, expected {height}", len(lines))
    return GridMap.from_rows(rows)


def serialize_map(grid: GridMap) -> str:
    out = ["type octile", f"height {grid.height}", f"width {grid.width}", "map"]
    for y in range(grid.height):
        out.append("".join("@" if grid.blocked[y, x] else "." for x in range(grid.width)))
    return "\n".join(out) + "\n"


def parse_scenario(text: str, count: int, grid: GridMap | None = None) -> list[AgentTask]:
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("version"):
            continue
        fields = line.split("\t") if "\t" in line else line.split()
        if len(fields) < 8:
            raise ParseError("scenario row needs at least 8 fields", lineno)
        try:
            sx, sy, gx, gy = (int(f) for f in fields[4:8])
        except ValueError:
            raise ParseError("non-integer coordinate", lineno) from None
        rows.append((lineno, (sx, sy), (gx, gy)))
    if count < 0 or count > len(rows):
        raise ValueError(f"requested {count} agents but the scenario has {len(rows)}")
    tasks = []
    for aid, (lineno, start, goal) in enumerate(rows[:count]):
        if grid is not None:
            for c in (start, goal):
                if not grid.in_bounds(c):
                    raise ParseError(f"coordinate {c} out of map bounds", lineno)
        tasks.append(AgentTask(aid, start, goal))
    return tasks


def serialize_scenario(tasks: list[AgentTask], grid: GridMap, map_name: str = "map.map") -> str:
    out = ["version 1"]
    for t in tasks:
        dist = abs(t.start[0] - t.goal[0]) + abs(t.start[1] - t.goal[1])
        out.append(
            "\t".join(
                str(v)
                for v in (0, map_name, grid.width, grid.height, *t.start, *t.goal, float(dist))
            )
        )
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# plan format

_STEP = re.compile(r"\(\s*(-?\d+)\s*,\s*(-?\d+)\s*\)\s*@\s*(-?\d+)")


def parse_plan(text: str, grid: GridMap | None = None) -> MapfPlan:
    records: dict[int, TimedPath] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        head, sep, body = line.partition(":")
        if not sep:
            raise ParseError("expected 'agent_id: steps'", lineno)
        try:
            aid = int(head)
        except ValueError:
            raise ParseError(f"bad agent id {head!r}", lineno) from None
        if aid in records:
            raise ParseError(f"duplicate record for agent {aid}", lineno)
        steps = [((int(m[1]), int(m[2])), int(m[3])) for m in _STEP.finditer(body)]
        if not steps or _STEP.sub("", body).replace(",", "").strip():
            raise ParseError("malformed step list", lineno)
        _check_steps(steps, grid, lineno)
        records[aid] = TimedPath(aid, tuple(steps))
    ids = sorted(records)
    if ids != list(range(len(ids))):
        raise ParseError("agent ids must be 0..n-1")
    return MapfPlan([records[i] for i in ids], grid)


def _check_steps(steps, grid, lineno):
    for n, (cell, t) in enumerate(steps):
        if t != n:
            raise ParseError(f"timestep gap: expected {n}, got {t}", lineno)
        if grid is not None and not grid.passable(cell):
            raise ParseError(f"cell {cell} is out of bounds or blocked", lineno)
        if n and cell != steps[n - 1][0] and not adjacent(cell, steps[n - 1][0]):
            raise ParseError(f"non-adjacent step {steps[n - 1][0]} -> {cell}", lineno)


def serialize_plan(plan: MapfPlan) -> str:
    lines = []
    for p in plan.paths:
        body = ", ".join(f"({x},{y})@{t}" for (x, y), t in p.steps)
        lines.append(f"{p.agent_id}: {body}")
    return "\n".join(lines) + "\n"


def plan_from_cells(paths: list[list[Cell]], grid: GridMap | None = None) -> MapfPlan:
    timed = []
    for aid, cells in enumerate(paths):
        steps = tuple((tuple(c), t) for t, c in enumerate(cells))
        _check_steps(steps, grid, None)
        timed.append(TimedPath(aid, steps))
    return MapfPlan(timed, grid)


def validate_plan(plan: MapfPlan) -> ValidationReport:
    """Vertex and edge (swap) collisions; finished agents keep occupying their goal."""
    report = ValidationReport()
    horizon = plan.horizon
    for t in range(horizon):
        seen: dict[Cell, int] = {}
        for p in plan.paths:
            c = p.cell_at(t)
            if c in seen:
                report.vertex_collisions.append((seen[c], p.agent_id, t, c))
            else:
                seen[c] = p.agent_id
        if t == 0:
            continue
        moves: dict[tuple[Cell, Cell], int] = {}
        for p in plan.paths:
            a, b = p.cell_at(t - 1), p.cell_at(t)
            if a != b:
                moves[(a, b)] = p.agent_id
        for (a, b), aid in moves.items():
            other = moves.get((b, a))
            if other is not None and aid < other:
                report.edge_collisions.append((aid, other, t, a, b))
    return report


def ideal_time_sum(plan: MapfPlan, model: "RobotModel") -> float:
    """Sum of solo minimum traversal times, ignoring every other agent."""
    from ktpg.kinodynamics import min_traverse_time

    cache: dict[tuple, float] = {}
    total = 0.0
    for p in plan.paths:
        chain = collapse_waits(p.cells)
        # the time only depends on the displacement sequence
        key = tuple((b[0] - a[0], b[1] - a[1]) for a, b in zip(chain, chain[1:]))
        if key not in cache:
            cache[key] = min_traverse_time(chain, model)
        total += cache[key]
    return total
