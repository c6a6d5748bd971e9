"""Windowed execution: replan a closed sub-TPG every ``t_e`` seconds from feedback.

Each agent keeps executing its committed instructions through an *enqueued*
frontier (``N_E`` vertices past its last reported vertex). Vertices after the
frontier, up to ``t_p`` of them, form the agent's planning window; the window
is then grown until every Type-2 edge entering it starts inside it or at an
already committed vertex. Committed vertices act as fixed external events whose
times are predicted from the reported reach times.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Mapping

from ktpg.core import (
    AgentTrack,
    InfeasibleProfileError,
    KtpgState,
    UncertaintyModel,
    make_state,
    solve,
)
from ktpg.kinodynamics import INF, SPLIT_DELTA, KinematicState, RobotModel
from ktpg.sim import ExecutionTrace, NoiseModel, Simulator, profile_instructions
from ktpg.tpg import Tpg

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WindowConfig:
    t_e: float = 5.0
    t_p: float = 20  # vertices per agent; math.inf for the whole remaining chain
    n_e: int = 1

    def __post_init__(self):
        if not self.t_e > 0:
            raise ValueError("t_e must be positive")
        if not self.t_p >= 1:
            raise ValueError("t_p must be at least 1")
        if self.n_e < 1:
            raise ValueError("N_E must be at least 1")


@dataclass
class Feedback:
    """Snapshot of one agent at replanning time."""

    vertex: int
    time: float
    speed: float
    heading: tuple[int, int] | None
    idle: bool


@dataclass
class PlanningWindow:
    ranges: dict[int, tuple[int, int]]  # agent -> (frontier, last window vertex)
    edges: list[int]  # indices of Type-2 edges with both endpoints inside

    def contains(self, agent: int, seq: int) -> bool:
        r = self.ranges.get(agent)
        return r is not None and r[0] < seq <= r[1]


class DeadlockError(RuntimeError):
    pass


def mark_enqueued(feedback: Mapping[int, Feedback], committed_end: Mapping[int, int],
                  n_e: int) -> dict[int, int]:
    """Frontier per agent: ``n_e`` vertices past the last report, within the commitment."""
    return {a: min(fb.vertex + n_e, committed_end[a]) for a, fb in feedback.items()}


def extract_window(tpg: Tpg, frontiers: Mapping[int, int], t_p: float,
                   reported: Mapping[int, int] | None = None) -> PlanningWindow:
    """Per-agent ranges after the frontiers, grown until closed.

    With ``reported`` (last reached vertex per agent), an edge whose target is
    committed but not yet reached also pulls its source into the window, so the
    source agent is never left parked on a location promised to someone else.
    """
    reported = reported or {}
    ranges = {}
    for a, f in frontiers.items():
        last = len(tpg.chains[a]) - 1
        if f >= last:
            continue
        end = last if math.isinf(t_p) else min(f + int(t_p), last)
        ranges[a] = [f, end]
    changed = True
    while changed:
        changed = False
        for e in tpg.edges:
            rt = ranges.get(e.tgt_agent)
            if rt is None or not rt[0] < e.tgt_seq <= rt[1]:
                continue
            rs = ranges.get(e.src_agent)
            if rs is not None and e.src_seq > rs[1]:
                rs[1] = e.src_seq
                changed = True
        for e in tpg.edges:
            j = e.tgt_agent
            if j not in reported or not reported[j] < e.tgt_seq <= frontiers.get(j, -1):
                continue
            rs = ranges.get(e.src_agent)
            if rs is not None and e.src_seq > rs[1]:
                rs[1] = e.src_seq
                changed = True
    inside = [
        n for n, e in enumerate(tpg.edges)
        if e.src_agent in ranges and e.tgt_agent in ranges
        and ranges[e.src_agent][0] < e.src_seq <= ranges[e.src_agent][1]
        and ranges[e.tgt_agent][0] < e.tgt_seq <= ranges[e.tgt_agent][1]
    ]
    return PlanningWindow({a: (r[0], r[1]) for a, r in ranges.items()}, inside)


def window_is_closed(tpg: Tpg, window: PlanningWindow, frontiers: Mapping[int, int],
                     reported: Mapping[int, int] | None = None) -> bool:
    reported = reported or {}
    for e in tpg.edges:
        i, s, j, t = e.src_agent, e.src_seq, e.tgt_agent, e.tgt_seq
        pending = s > frontiers.get(i, len(tpg.chains[i]) - 1) and not window.contains(i, s)
        if window.contains(j, t) and pending:
            return False
        if j in reported and reported[j] < t <= frontiers.get(j, -1) and pending:
            return False
    return True


@dataclass
class WindowResult:
    profiles: dict
    window: PlanningWindow
    frontiers: dict[int, int]
    iterations: int
    planner_calls: int
    extended: int = 0
    relaxed: int = 0
    runtime: float = 0.0


class WindowController:
    """Bookkeeping of dispatched instructions and the per-window kTPGu call."""

    def __init__(self, tpg: Tpg, model: RobotModel, uncertainty: UncertaintyModel | None,
                 config: WindowConfig, initial_states: Mapping[int, KinematicState] | None = None):
        self.tpg = tpg
        self.model = model
        self.uncertainty = uncertainty
        self.config = config
        initial_states = initial_states or {}
        self.init = {a: initial_states.get(a, KinematicState()) for a in range(tpg.num_agents)}
        n = [len(c) for c in tpg.chains]
        self.dwell = [[INF] * k for k in n]
        self.move = [[math.nan] * k for k in n]
        self.speed = [[0.0] * k for k in n]
        self.heading: list[list] = [[None] * k for k in n]
        for a, st in self.init.items():
            self.speed[a][0] = st.speed
            self.heading[a][0] = st.heading
        self.committed_end = {a: 0 for a in range(tpg.num_agents)}

    # -- predictions -----------------------------------------------------------
    def feedback(self, sim: Simulator) -> dict[int, Feedback]:
        out = {}
        for a, run in enumerate(sim.agents):
            p = run.pos
            idle = not run.departed and p == self.committed_end[a]
            speed = self.speed[a][p] if run.departed or not idle else 0.0
            if p == 0 and self.committed_end[a] == 0:
                speed = self.init[a].speed
            out[a] = Feedback(p, run.reach[p], speed, self.heading[a][p], idle)
        return out

    def predictions(self, sim: Simulator, a: int) -> list[float]:
        """Reach-time means over the committed stretch (actual times where reported)."""
        run = sim.agents[a]
        mu = [math.nan] * len(self.tpg.chains[a])
        for x in range(run.pos + 1):
            mu[x] = run.reach[x]
        for x in range(run.pos, self.committed_end[a]):
            mu[x + 1] = mu[x] + self.dwell[a][x] + self.move[a][x]
        return mu

    def _margin(self, i: int, s: int, pi: int, j: int, t: int, pj: int) -> float:
        u = self.uncertainty
        if u is None:
            return 0.0
        return u.margin(u.k_of(i) * max(s - pi, 0) + u.k_of(j) * max(t - pj, 0))

    # -- one window --------------------------------------------------------------
    def replan(self, sim: Simulator, now: float) -> WindowResult | None:
        t0 = time.perf_counter()
        fb = self.feedback(sim)
        active = {a: f for a, f in fb.items() if f.vertex < len(self.tpg.chains[a]) - 1}
        frontiers = mark_enqueued(fb, self.committed_end, self.config.n_e)
        mu = {a: self.predictions(sim, a) for a in range(self.tpg.num_agents)}
        relaxed: set[int] = set()
        extended = 0
        calls = 0
        for _attempt in range(4 * len(active) + 4):
            window = extract_window(
                self.tpg, {a: f for a, f in frontiers.items() if a in active}, self.config.t_p,
                {a: f.vertex for a, f in fb.items()})
            if not window.ranges:
                return None
            state = self._build_state(window, frontiers, fb, mu, relaxed, now)
            try:
                result = solve(state)
            except InfeasibleProfileError as err:
                calls += state.planner_calls
                a = err.agent
                if frontiers[a] < self.committed_end[a]:
                    # stop trying to replan in-flight motion; keep the old commitment
                    frontiers[a] = self.committed_end[a]
                    extended += 1
                elif a not in relaxed:
                    relaxed.add(a)
                else:
                    raise
                continue
            calls += state.planner_calls
            self._dispatch(sim, window, result.profiles, fb)
            res = WindowResult(result.profiles, window, dict(frontiers), result.iterations,
                               calls, extended, len(relaxed), time.perf_counter() - t0)
            if extended or relaxed:
                log.debug("window at t=%.3f: %d frontier extensions, %d relaxed agents",
                          now, extended, len(relaxed))
            return res
        raise RuntimeError("window replanning did not converge")

    def _build_state(self, window: PlanningWindow, frontiers, fb, mu, relaxed, now) -> KtpgState:
        tracks, intervals = {}, {}
        for a, (f, end) in window.ranges.items():
            info = fb[a]
            if f == info.vertex and info.idle:
                start = KinematicState(info.speed, self.heading[a][f], max(info.time, now))
            else:
                start = KinematicState(self.speed[a][f], self.heading[a][f], mu[a][f])
            tracks[a] = AgentTrack(a, f, self.tpg.chains[a][f:end + 1], start, info.vertex)
            intervals[a] = [[0.0, INF] for _ in range(end - f + 1)]
        for e in self.tpg.edges:
            i, s, j, t = e.src_agent, e.src_seq, e.tgt_agent, e.tgt_seq
            pi, pj = fb[i].vertex, fb[j].vertex
            if window.contains(j, t):
                if s <= frontiers[i]:
                    # the source is committed: predicted leave time is a fixed lower bound
                    m = self._margin(i, s, pi, j, t, pj)
                    iv = intervals[j][t - tracks[j].base]
                    iv[0] = max(iv[0], mu[i][s] + m + SPLIT_DELTA)
            elif window.contains(i, s) and t <= frontiers[j] and t > pj and i not in relaxed:
                # the target is committed: the source must be gone before it arrives
                m = self._margin(i, s, pi, j, t, pj)
                iv = intervals[i][s - 1 - tracks[i].base]
                iv[1] = min(iv[1], mu[j][t] - m - SPLIT_DELTA)
        edges = [self.tpg.edges[n] for n in window.edges]
        return make_state(tracks, edges, self.model, self.uncertainty, intervals)

    def _dispatch(self, sim: Simulator, window: PlanningWindow, profiles, fb):
        for a, prof in profiles.items():
            f, end = window.ranges[a]
            info = fb[a]
            arrival = info.time if (f == info.vertex and info.idle) else None
            dwell, move = profile_instructions(prof, arrival)
            for k in range(len(prof.reach)):
                x = f + k
                self.dwell[a][x] = dwell[k]
                if k < len(move):
                    self.move[a][x] = move[k]
                self.speed[a][x] = prof.speeds[k]
                self.heading[a][x] = prof.headings[k]
            self.committed_end[a] = end
            sim.dispatch(a, f, dwell, move)


def run_execution_loop(
    tpg: Tpg,
    model: RobotModel | None = None,
    uncertainty: UncertaintyModel | None = None,
    config: WindowConfig | None = None,
    simulator: Simulator | None = None,
    initial_states: Mapping[int, KinematicState] | None = None,
    noise: NoiseModel | None = None,
    time_limit: float = INF,
) -> ExecutionTrace:
    model = model or RobotModel()
    config = config or WindowConfig()
    sim = simulator or Simulator(tpg, noise)
    ctl = WindowController(tpg, model, uncertainty, config, initial_states)
    runtimes, iterations, calls, extended, relaxed = [], 0, 0, 0, 0
    now, stalled = 0.0, 0
    wall0 = time.perf_counter()
    while not sim.all_done:
        res = ctl.replan(sim, now)
        if res is not None:
            runtimes.append(res.runtime)
            iterations += res.iterations
            calls += res.planner_calls
            extended += res.extended
            relaxed += res.relaxed
        if math.isinf(config.t_e):
            events = sim.run_to_completion()
            if not sim.all_done:
                raise DeadlockError("agents stopped short of their goals")
            break
        events = sim.advance(now + config.t_e)
        now += config.t_e
        stalled = 0 if events or sim.next_event_time() < INF else stalled + 1
        if stalled >= 3:
            raise DeadlockError(f"no progress for 3 windows at t={now:.2f}")
        if time.perf_counter() - wall0 > time_limit:
            break
    stats = {
        "window_runtimes": runtimes,
        "iterations": iterations,
        "planner_calls": calls,
        "frontier_extensions": extended,
        "relaxed_agents": relaxed,
    }
    return sim.trace(stats)
