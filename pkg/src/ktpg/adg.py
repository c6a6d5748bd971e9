"""Action-dependency-graph (ADG) baseline executor.

A vertex becomes *enqueued* once its chain predecessor is enqueued or finished
and every Type-2 source feeding it is *finished* (reached by its agent). On a
fixed replanning tick after any status change, each agent whose enqueued set
grew plans a fresh profile through its enqueued vertices, ending at rest at
the last one. Nothing is ever planned through a vertex whose predecessors are
still pending, which makes the scheme robust to delays but conservative.
"""

from __future__ import annotations

import math
import time
from typing import Mapping

from ktpg.kinodynamics import INF, KinematicState, MotionPrimitive, RobotModel, plan_speed_profile
from ktpg.sim import ExecutionError, ExecutionTrace, NoiseModel, Simulator, profile_instructions
from ktpg.tpg import Tpg


def _coincide_until(a: MotionPrimitive, b: MotionPrimitive) -> float:
    """Time from the start during which two primitives with equal entry speed move identically."""
    if abs(a.peak_speed - b.peak_speed) > 1e-12:
        return min(a.accel_time, b.accel_time)
    return min(a.decel_start, b.decel_start)


class AdgExecutor:
    def __init__(self, tpg: Tpg, model: RobotModel, sim: Simulator, replan_period: float = 0.01,
                 initial_states: Mapping[int, KinematicState] | None = None):
        self.tpg = tpg
        self.model = model
        self.sim = sim
        self.period = replan_period
        initial_states = initial_states or {}
        n = [len(c) for c in tpg.chains]
        self.init = {a: initial_states.get(a, KinematicState()) for a in range(len(n))}
        self.speed = [[0.0] * k for k in n]
        self.heading: list[list] = [[None] * k for k in n]
        self.prims: list[list] = [[None] * k for k in n]
        self.nominal = [[math.nan] * k for k in n]
        self.enqueued = [0] * len(n)
        self.planned_end = [0] * len(n)
        self.replans = 0
        self.tick_runtimes: list[float] = []

    def _update_enqueued(self) -> list[int]:
        grown = []
        for a, chain in enumerate(self.tpg.chains):
            x = max(self.enqueued[a], self.sim.agents[a].pos)
            while x + 1 < len(chain) and all(
                self.sim.agents[self.tpg.edges[n].src_agent].reach[self.tpg.edges[n].src_seq] is not None
                for n in self.tpg.incoming_ids((a, x + 1))
            ):
                x += 1
            if x > self.enqueued[a]:
                grown.append(a)
            self.enqueued[a] = x
        return grown

    def _record(self, a: int, frm: int, prof):
        for k in range(len(prof.reach)):
            x = frm + k
            self.speed[a][x] = prof.speeds[k]
            self.heading[a][x] = prof.headings[k]
            self.prims[a][x] = prof.moves[k] if k < len(prof.reach) - 1 else None
            if k < len(prof.reach) - 1:
                self.nominal[a][x] = prof.reach[k + 1] - prof.depart[k]
        self.planned_end[a] = frm + len(prof.reach) - 1

    def _plan(self, a: int, frm: int, start: KinematicState):
        chain = self.tpg.chains[a][frm:self.enqueued[a] + 1]
        prof = plan_speed_profile(chain, None, start, self.model, a, frm)
        if prof is None:
            raise ExecutionError(f"agent {a}: no profile through its enqueued vertices")
        return prof

    def replan(self, a: int, tau: float):
        run = self.sim.agents[a]
        p = run.pos
        chain = self.tpg.chains[a]
        self.replans += 1
        if not run.departed:
            st = KinematicState(self.init[a].speed if (p == 0 and self.planned_end[a] == 0) else 0.0,
                                self.heading[a][p] if p or self.planned_end[a] else self.init[a].heading,
                                run.reach[p])
            prof = self._plan(a, p, st)
            dwell, move = profile_instructions(prof)
            dwell[0] = max(prof.depart[0], tau) - run.reach[p]
            self._record(a, p, prof)
            self.sim.dispatch(a, p, dwell, move)
            return
        # in flight from p to p + 1
        d = run.depart_time
        direction = (chain[p + 1][0] - chain[p][0], chain[p + 1][1] - chain[p][1])
        old = self.prims[a][p]
        if old is not None:
            prof = self._plan(a, p, KinematicState(self.speed[a][p], direction, d))
            new = prof.moves[0]
            actual = run.arrival_time - d
            elapsed = (tau - d) * self.nominal[a][p] / actual
            if new is not None and elapsed <= _coincide_until(old, new) + 1e-9:
                dwell, move = profile_instructions(prof)
                self._record(a, p, prof)
                self.sim.dispatch(a, p, dwell, move, in_flight=True)
                return
        if p + 1 >= self.enqueued[a]:
            return
        t_arr = d + self.nominal[a][p]
        prof = self._plan(a, p + 1, KinematicState(self.speed[a][p + 1], direction, t_arr))
        dwell, move = profile_instructions(prof)
        self._record(a, p + 1, prof)
        self.sim.dispatch(a, p + 1, dwell, move)

    def _tick(self, tau: float):
        t0 = time.perf_counter()
        self._update_enqueued()
        for a in range(self.tpg.num_agents):
            if self.enqueued[a] > self.planned_end[a]:
                self.replan(a, tau)
        self.tick_runtimes.append(time.perf_counter() - t0)

    def run(self, time_limit: float = INF) -> ExecutionTrace:
        sim = self.sim
        wall0 = time.perf_counter()
        self._tick(0.0)
        while not sim.all_done:
            t = sim.next_event_time()
            if t == INF:
                raise ExecutionError("ADG execution stalled with agents short of their goals")
            sim.advance(t)
            if self._update_enqueued():
                tau = math.ceil(t / self.period - 1e-9) * self.period
                sim.advance(tau)
                self._tick(tau)
            if time.perf_counter() - wall0 > time_limit:
                break
        stats = {"window_runtimes": self.tick_runtimes, "replans": self.replans}
        return sim.trace(stats)


def run_adg_baseline(
    tpg: Tpg,
    model: RobotModel | None = None,
    sim: Simulator | None = None,
    replan_period: float = 0.01,
    initial_states: Mapping[int, KinematicState] | None = None,
    noise: NoiseModel | None = None,
    time_limit: float = INF,
) -> ExecutionTrace:
    sim = sim or Simulator(tpg, noise)
    return AdgExecutor(tpg, model or RobotModel(), sim, replan_period, initial_states).run(time_limit)
