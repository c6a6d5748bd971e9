"""Robot models, motion primitives and the 1-D safe-interval speed planner.

The planner moves one agent along a fixed chain of unit-spaced locations.
Speeds at chain vertices are restricted to the model's discrete set; between
vertices the agent follows a time-optimal trapezoidal (or triangular) speed
segment. Each chain vertex carries a reserved interval ``[lower, upper]``:
the agent must *reach* the vertex no earlier than ``lower`` and must have
*left* it (reached the next vertex) no later than ``upper``. At the last
vertex of the chain only the reach time is bounded.

Because motion along a chain never goes backwards the search space is
layered by vertex index, so the planner sweeps the chain once and keeps, for
every (vertex, speed) pair, the exact set of reachable arrival times as a
union of intervals. Waiting is only possible at zero speed, where the set of
usable departure times is a ray starting at the earliest arrival.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

INF = math.inf
TIME_EPS = 1e-9   # float slack for interval membership inside the planner
SPLIT_DELTA = 1e-6  # turns a half-open (t, inf) interval into [t + delta, inf)

Cell = tuple[int, int]
Interval = tuple[float, float]


@dataclass(frozen=True)
class RobotModel:
    kind: str = "omnidirectional"
    v_max: float = 2.0
    a_max: float = 1.0
    a_min: float = -1.0
    speeds: tuple[float, ...] = (0.0, math.sqrt(2.0), 2.0)
    turn_time_90: float = 0.5
    turn_time_180: float = 0.9
    v_min: float = 0.0

    def __post_init__(self):
        if self.kind not in ("omnidirectional", "differential_drive"):
            raise ValueError(f"unknown robot kind {self.kind!r}")
        if not (self.a_min < 0 < self.a_max):
            raise ValueError("need a_min < 0 < a_max")
        if 0.0 not in self.speeds:
            raise ValueError("the discrete speed set must contain 0")
        if any(v < 0 or v > self.v_max + 1e-12 for v in self.speeds):
            raise ValueError("discrete speeds must lie in [0, v_max]")
        if list(self.speeds) != sorted(self.speeds):
            raise ValueError("discrete speeds must be sorted")

    @property
    def differential(self) -> bool:
        return self.kind == "differential_drive"

    def turn_time(self, angle: int) -> float:
        if angle == 0 or not self.differential:
            return 0.0
        return self.turn_time_90 if angle == 90 else self.turn_time_180

    @classmethod
    def omnidirectional(cls, **kw) -> "RobotModel":
        return cls(kind="omnidirectional", **kw)

    @classmethod
    def differential_drive(cls, **kw) -> "RobotModel":
        return cls(kind="differential_drive", **kw)


@dataclass(frozen=True)
class MotionPrimitive:
    entry_speed: float
    exit_speed: float
    cells: int
    duration: float
    offsets: tuple[float, ...]  # time at which each spanned cell boundary is crossed
    kind: str = "move"  # move | wait | turn
    peak_speed: float = 0.0
    accel_time: float = 0.0
    cruise_time: float = 0.0
    angle: int = 0

    @property
    def decel_start(self) -> float:
        return self.accel_time + self.cruise_time

    def speed_at(self, t: float, a_max: float, a_dec: float) -> float:
        if self.kind != "move":
            return 0.0
        if t <= self.accel_time:
            return self.entry_speed + a_max * t
        if t <= self.decel_start:
            return self.peak_speed
        return self.peak_speed - a_dec * (t - self.decel_start)

    def position_at(self, t: float, a_max: float, a_dec: float) -> float:
        if self.kind != "move":
            return 0.0
        u, vp = self.entry_speed, self.peak_speed
        t1, t2 = self.accel_time, self.cruise_time
        if t <= t1:
            return u * t + 0.5 * a_max * t * t
        d1 = u * t1 + 0.5 * a_max * t1 * t1
        if t <= t1 + t2:
            return d1 + vp * (t - t1)
        s = t - t1 - t2
        return d1 + vp * t2 + vp * s - 0.5 * a_dec * s * s


def _quad_time(v0: float, acc: float, dist: float) -> float:
    """Smallest t >= 0 with v0 t + acc t^2 / 2 = dist."""
    if dist <= 0:
        return 0.0
    if abs(acc) < 1e-15:
        return dist / v0
    disc = max(v0 * v0 + 2 * acc * dist, 0.0)
    return (-v0 + math.sqrt(disc)) / acc


def make_move(u: float, w: float, cells: int, model: RobotModel) -> MotionPrimitive | None:
    """Time-optimal move from speed ``u`` to ``w`` over ``cells`` metres, or None."""
    a1, a2, vmax, d = model.a_max, -model.a_min, model.v_max, float(cells)
    if w > u and (w * w - u * u) / (2 * a1) > d + 1e-9:
        return None
    if u > w and (u * u - w * w) / (2 * a2) > d + 1e-9:
        return None
    vp2 = (2 * a1 * a2 * d + a2 * u * u + a1 * w * w) / (a1 + a2)
    vp = math.sqrt(max(vp2, 0.0))
    if vp >= vmax:
        vp = vmax
        t1 = (vmax - u) / a1
        t3 = (vmax - w) / a2
        d1 = (vmax * vmax - u * u) / (2 * a1)
        d3 = (vmax * vmax - w * w) / (2 * a2)
        t2 = max(d - d1 - d3, 0.0) / vmax
    else:
        vp = max(vp, u, w)
        t1 = max(vp - u, 0.0) / a1
        t3 = max(vp - w, 0.0) / a2
        t2 = 0.0
    duration = t1 + t2 + t3
    d1 = u * t1 + 0.5 * a1 * t1 * t1
    d2 = vp * t2
    offsets = []
    for x in range(1, cells + 1):
        if x == cells:
            offsets.append(duration)
        elif x <= d1:
            offsets.append(_quad_time(u, a1, x))
        elif x <= d1 + d2:
            offsets.append(t1 + (x - d1) / vp)
        else:
            offsets.append(t1 + t2 + _quad_time(vp, -a2, x - d1 - d2))
    return MotionPrimitive(u, w, cells, duration, tuple(offsets), "move", vp, t1, t2)


@lru_cache(maxsize=None)
def build_primitives(model: RobotModel, max_cells: int = 16) -> tuple[MotionPrimitive, ...]:
    """One minimal-length move per ordered pair of discrete speeds, plus turns.

    Longer moves between the same speeds are compositions of these and are
    not needed.
    """
    prims = []
    for u in model.speeds:
        for w in model.speeds:
            for n in range(1, max_cells + 1):
                p = make_move(u, w, n, model)
                if p is not None:
                    prims.append(p)
                    break
    if not prims:
        raise ValueError("robot model admits no motion primitive")
    prims.append(MotionPrimitive(0.0, 0.0, 0, 0.0, (), "wait"))
    if model.differential:
        for angle in (90, 180):
            t = model.turn_time(angle)
            prims.append(MotionPrimitive(0.0, 0.0, 0, t, (), "turn", angle=angle))
    return tuple(prims)


@lru_cache(maxsize=None)
def _moves_table(model: RobotModel):
    idx = {v: i for i, v in enumerate(model.speeds)}
    table: list[list] = [[] for _ in model.speeds]
    for p in build_primitives(model):
        if p.kind == "move":
            table[idx[p.entry_speed]].append((idx[p.exit_speed], p))
    # deterministic expansion order: fewer cells first, then faster exit
    for row in table:
        row.sort(key=lambda e: (e[1].cells, -e[1].exit_speed))
    return table


# ---------------------------------------------------------------------------
# profiles


@dataclass(frozen=True)
class KinematicState:
    speed: float = 0.0
    heading: tuple[int, int] | None = None
    time: float = 0.0


@dataclass
class SpeedProfile:
    """Reach/depart times along a chain segment.

    ``reach[k]`` and ``depart[k]`` refer to chain vertex ``base + k``; the
    gap between them is a wait or an in-place turn and only happens at zero
    speed. ``moves[k]`` is the primitive whose first cell starts at vertex k
    (``None`` when vertex k is crossed inside a multi-cell primitive).
    """

    agent_id: int
    base: int
    cells: list[Cell]
    reach: list[float]
    depart: list[float]
    speeds: list[float]
    headings: list[tuple[int, int] | None]
    turns: list[int]
    moves: list[MotionPrimitive | None] = field(default_factory=list)

    @property
    def vertex_times(self) -> list[float]:
        return self.reach

    @property
    def start_time(self) -> float:
        return self.reach[0]

    @property
    def end_time(self) -> float:
        return self.reach[-1]

    @property
    def duration(self) -> float:
        return self.reach[-1] - self.reach[0]

    @property
    def last(self) -> int:
        return self.base + len(self.reach) - 1

    def local(self, seq: int) -> int:
        return seq - self.base

    def move_duration(self, k: int) -> float:
        return self.reach[k + 1] - self.depart[k]

    def segments(self) -> list[tuple[float, MotionPrimitive, int]]:
        """(start time, primitive, local start vertex) in execution order."""
        out = []
        for k in range(len(self.reach)):
            if self.turns[k]:
                out.append((self.reach[k], MotionPrimitive(
                    0.0, 0.0, 0, self.depart[k] - self.reach[k], (), "turn", angle=self.turns[k]), k))
            elif self.depart[k] - self.reach[k] > TIME_EPS and k < len(self.reach) - 1:
                out.append((self.reach[k], MotionPrimitive(
                    0.0, 0.0, 0, self.depart[k] - self.reach[k], (), "wait"), k))
            if k < len(self.moves) and self.moves[k] is not None:
                out.append((self.depart[k], self.moves[k], k))
        return out

    def to_json(self) -> dict:
        return {
            "agent": self.agent_id,
            "base": self.base,
            "cells": [list(c) for c in self.cells],
            "reach": self.reach,
            "depart": self.depart,
            "speeds": self.speeds,
        }


def _direction(a: Cell, b: Cell) -> tuple[int, int]:
    return (b[0] - a[0], b[1] - a[1])


def turn_angle(h1: tuple[int, int] | None, h2: tuple[int, int] | None) -> int:
    if h1 is None or h2 is None or h1 == h2:
        return 0
    dot = h1[0] * h2[0] + h1[1] * h2[1]
    return 180 if dot < 0 else 90


def chain_turns(chain: Sequence[Cell], heading0, model: RobotModel):
    """Arrival heading and required in-place turn angle at each chain vertex."""
    n = len(chain)
    dirs = [_direction(chain[k], chain[k + 1]) for k in range(n - 1)]
    headings = [heading0 if heading0 is not None else (dirs[0] if dirs else None)]
    headings += dirs
    turns = [0] * n
    if model.differential:
        for k in range(n - 1):
            turns[k] = turn_angle(headings[k], dirs[k])
    return headings, turns


def plan_speed_profile(
    chain: Sequence[Cell],
    intervals: Sequence[Interval] | None,
    start: KinematicState,
    model: RobotModel,
    agent_id: int = 0,
    base: int = 0,
) -> SpeedProfile | None:
    """Earliest-arrival profile through ``chain`` ending at rest, or None if infeasible.

    ``intervals[0]`` only bounds the departure from the start vertex; its
    lower bound is ignored since the agent is already there.
    """
    n = len(chain)
    if n == 0:
        raise ValueError("empty chain")
    speeds = model.speeds
    if intervals is None:
        intervals = [(0.0, INF)] * n
    lower = [iv[0] for iv in intervals]
    upper = [iv[1] for iv in intervals]
    headings, turns = chain_turns(chain, start.heading, model)
    turn_t = [model.turn_time(a) for a in turns]
    try:
        u0 = speeds.index(start.speed)
    except ValueError:
        u0 = min(range(len(speeds)), key=lambda i: abs(speeds[i] - start.speed))
        if abs(speeds[u0] - start.speed) > 1e-9:
            raise ValueError(f"start speed {start.speed} is not a discrete speed") from None
    t0 = start.time
    if n == 1:
        if u0 != 0 or t0 > upper[0] + TIME_EPS:
            return None
        return SpeedProfile(agent_id, base, list(chain), [t0], [t0], [0.0], headings[:1], [0], [None])
    if u0 != 0 and turns[0]:
        return None

    table = _moves_table(model)
    ns = len(speeds)
    # zero-speed states: (earliest arrival, parent); moving states: list of pieces
    rest: list = [None] * n
    moving: list[list[list]] = [[[] for _ in range(ns)] for _ in range(n)]
    if u0 == 0:
        rest[0] = (t0, None)
    else:
        moving[0][u0].append((t0, t0, None))

    for k in range(n - 1):
        for ui in range(ns):
            if ui == 0:
                if rest[k] is None:
                    continue
                dep = [(rest[k][0] + turn_t[k], INF)]
            else:
                if not moving[k][ui] or turns[k]:
                    continue
                dep = [(lo, hi) for lo, hi, _ in moving[k][ui]]
            for wi, prim in table[ui]:
                m = prim.cells
                end = k + m
                if end > n - 1 or (end == n - 1 and wi != 0):
                    continue
                if m > 1 and any(turns[k + j] for j in range(1, m)):
                    continue
                if end < n - 1 and wi != 0 and turns[end]:
                    continue
                off = prim.offsets
                lo_c = -INF
                for j in range(1, m + 1):
                    v = lower[k + j] - off[j - 1]
                    if v > lo_c:
                        lo_c = v
                hi_c = upper[k] - off[0]
                for j in range(1, m):
                    v = upper[k + j] - off[j]
                    if v < hi_c:
                        hi_c = v
                if end == n - 1:
                    hi_c = min(hi_c, upper[end] - off[-1])
                dur = prim.duration
                for pi, (a, b) in enumerate(dep):
                    t_lo = a if a > lo_c else lo_c
                    t_hi = b if b < hi_c else hi_c
                    if t_lo > t_hi + TIME_EPS:
                        continue
                    if t_hi < t_lo:
                        t_hi = t_lo
                    parent = (k, ui, pi, prim)
                    if wi == 0:
                        arr = t_lo + dur
                        if rest[end] is None or arr < rest[end][0] - 1e-12:
                            rest[end] = (arr, parent)
                    else:
                        _add_piece(moving[end][wi], (t_lo + dur, t_hi + dur, parent))

    if rest[n - 1] is None:
        return None
    return _backtrack(rest, moving, chain, headings, turns, turn_t, speeds, agent_id, base)


def _add_piece(pieces: list, piece):
    lo, hi, _ = piece
    for p in pieces:
        if p[0] <= lo + 1e-12 and p[1] >= hi - 1e-12:
            return
    pieces[:] = [p for p in pieces if not (lo <= p[0] + 1e-12 and hi >= p[1] - 1e-12)]
    pieces.append(piece)


def _backtrack(rest, moving, chain, headings, turns, turn_t, speeds, agent_id, base):
    n = len(chain)
    reach = [0.0] * n
    depart = [0.0] * n
    vel = [0.0] * n
    moves: list = [None] * n
    k, t = n - 1, rest[n - 1][0]
    reach[k] = depart[k] = t
    parent = rest[n - 1][1]
    while parent is not None:
        pk, pu, pi, prim = parent
        dep = t - prim.duration
        for j in range(1, prim.cells):
            x = pk + j
            reach[x] = depart[x] = dep + prim.offsets[j - 1]
            v = _speed_at_offset(prim, prim.offsets[j - 1])
            near = min(speeds, key=lambda s: abs(s - v))
            vel[x] = near if abs(near - v) < 1e-6 else v
        moves[pk] = prim
        if pu == 0:
            arr, parent = rest[pk]
            reach[pk] = arr
            depart[pk] = max(dep, arr + turn_t[pk])
            vel[pk] = 0.0
            t = arr
        else:
            _, _, parent = moving[pk][pu][pi]
            reach[pk] = depart[pk] = dep
            vel[pk] = speeds[pu]
            t = dep
        k = pk
    return SpeedProfile(agent_id, base, list(chain), reach, depart, vel, list(headings),
                        list(turns), moves)


def _speed_at_offset(prim: MotionPrimitive, t: float) -> float:
    # intermediate vertices of a multi-cell move; a_max/a_dec recovered from the shape
    if t <= prim.accel_time:
        a = (prim.peak_speed - prim.entry_speed) / prim.accel_time if prim.accel_time else 0.0
        return prim.entry_speed + a * t
    if t <= prim.decel_start:
        return prim.peak_speed
    tail = prim.duration - prim.decel_start
    a = (prim.peak_speed - prim.exit_speed) / tail if tail else 0.0
    return prim.peak_speed - a * (t - prim.decel_start)


def min_traverse_time(chain: Sequence[Cell], model: RobotModel, start: KinematicState | None = None) -> float:
    chain = list(chain)
    if len(chain) <= 1:
        return 0.0
    start = start or KinematicState()
    prof = plan_speed_profile(chain, None, start, model)
    if prof is None:
        raise RuntimeError("no feasible solo profile; the primitive set is incomplete")
    return prof.end_time - start.time


def check_profile(profile: SpeedProfile, model: RobotModel, intervals=None, tol: float = 1e-6) -> list[str]:
    """Analytic feasibility audit of a profile; returns a list of problems."""
    problems = []
    a1, a2 = model.a_max, -model.a_min
    n = len(profile.reach)
    if profile.speeds[-1] != 0.0:
        problems.append("does not end at rest")
    for k in range(n):
        if profile.depart[k] < profile.reach[k] - tol:
            problems.append(f"vertex {k}: departs before reaching")
        if profile.depart[k] > profile.reach[k] + tol and profile.speeds[k] != 0.0:
            problems.append(f"vertex {k}: waits at nonzero speed")
        if k < n - 1 and profile.reach[k + 1] <= profile.depart[k]:
            problems.append(f"vertex {k}: times not increasing")
    k = 0
    while k < n - 1:
        prim = profile.moves[k]
        if prim is None:
            problems.append(f"vertex {k}: no primitive")
            break
        if abs(prim.entry_speed - profile.speeds[k]) > 1e-9:
            problems.append(f"vertex {k}: speed discontinuity")
        if prim.peak_speed > model.v_max + 1e-9:
            problems.append(f"vertex {k}: exceeds v_max")
        # sample the kinematics: acceleration in bounds, position ends at `cells`
        steps = 50
        prev_v = prim.entry_speed
        for s in range(1, steps + 1):
            t = prim.duration * s / steps
            v = prim.speed_at(t, a1, a2)
            acc = (v - prev_v) / (prim.duration / steps)
            if v < -1e-9 or v > model.v_max + 1e-9 or acc > a1 + 1e-6 or acc < -a2 - 1e-6:
                problems.append(f"vertex {k}: kinematic bound violated at t={t:.3f}")
                break
            prev_v = v
        if abs(prim.position_at(prim.duration, a1, a2) - prim.cells) > 1e-6:
            problems.append(f"vertex {k}: primitive does not span its cells")
        if abs(profile.depart[k] + prim.duration - profile.reach[k + prim.cells]) > 1e-6:
            problems.append(f"vertex {k}: duration mismatch")
        k += prim.cells
    if intervals is not None:
        for k, (lo, hi) in enumerate(intervals):
            if k > 0 and profile.reach[k] < lo - tol:
                problems.append(f"vertex {k}: reached before {lo}")
            leave = profile.reach[k + 1] if k < n - 1 else profile.reach[k]
            if leave > hi + tol:
                problems.append(f"vertex {k}: left after {hi}")
    return problems
