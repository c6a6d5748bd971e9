"""Discrete-event execution of dispatched speed profiles under move-time noise.

Agents execute per-vertex instructions: after reaching chain vertex ``x`` they
dwell for ``dwell[x]`` seconds (a wait or in-place turn, noiseless) and then
take ``move[x]`` nominal seconds to reach ``x + 1``. Each move's actual
duration is perturbed by Gaussian noise of variance ``K * distance``. An
agent without further instructions holds its position.

An agent occupies a location from its reach time until its reach time at the
next location; the goal is held until the end of the episode.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ktpg.tpg import Tpg

INF = math.inf


def sample_move_time(nominal: float, k: float, distance: float, rng: np.random.Generator,
                     clamp_floor: float = 0.1) -> float:
    if nominal <= 0:
        raise ValueError("nominal move time must be positive")
    if k == 0.0:
        return nominal
    t = nominal + rng.normal(0.0, math.sqrt(k * distance))
    return max(t, clamp_floor * nominal)


@dataclass(frozen=True)
class NoiseModel:
    k: float | Sequence[float] = 0.0
    seed: int = 0
    clamp_floor: float = 0.1

    @classmethod
    def from_epsilon(cls, eps: float, seed: int = 0, clamp_floor: float = 0.1) -> "NoiseModel":
        return cls(eps * eps, seed, clamp_floor)

    def k_of(self, agent: int) -> float:
        return float(self.k) if isinstance(self.k, (int, float)) else float(self.k[agent])

    def agent_rng(self, agent: int) -> np.random.Generator:
        # one substream per agent: draws do not depend on event interleaving
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(agent,)))


class ExecutionError(RuntimeError):
    pass


@dataclass
class _AgentRun:
    n: int
    pos: int = 0
    reach: list = field(default_factory=list)
    dwell: dict = field(default_factory=dict)
    move: dict = field(default_factory=dict)
    departed: bool = False
    depart_time: float = 0.0
    arrival_time: float = INF
    token: int = 0
    noise: list = field(default_factory=list)  # standard normal draw per move index
    actual: dict = field(default_factory=dict)

    @property
    def done(self) -> bool:
        return self.pos == self.n - 1

    @property
    def holding(self) -> bool:
        return not self.departed and not self.done and not math.isfinite(self.dwell.get(self.pos, INF))


@dataclass
class ExecutionTrace:
    reach: list[list[float | None]]
    end_time: float
    stats: dict = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return all(r[-1] is not None for r in self.reach)

    def goal_times(self) -> list[float | None]:
        return [r[-1] for r in self.reach]

    def events(self, tpg: Tpg) -> list[dict]:
        out = []
        for a, times in enumerate(self.reach):
            for k, t in enumerate(times):
                if t is not None:
                    out.append({"agent": a, "vertex_seq": k,
                                "location": list(tpg.chains[a][k]), "t_actual": t})
        out.sort(key=lambda e: (e["t_actual"], e["agent"], e["vertex_seq"]))
        return out

    def to_jsonl(self, tpg: Tpg) -> str:
        return "".join(json.dumps(e) + "\n" for e in self.events(tpg))


class Simulator:
    def __init__(self, tpg: Tpg, noise: NoiseModel | None = None):
        self.tpg = tpg
        self.noise = noise or NoiseModel()
        self.now = 0.0
        self.agents = []
        for a, chain in enumerate(tpg.chains):
            run = _AgentRun(len(chain))
            run.reach = [None] * len(chain)
            run.reach[0] = 0.0
            self.agents.append(run)
        self._rngs = [self.noise.agent_rng(a) for a in range(len(self.agents))]
        self._heap: list = []

    # -- noise ---------------------------------------------------------------
    def _actual(self, agent: int, x: int, nominal: float) -> float:
        run = self.agents[agent]
        k = self.noise.k_of(agent)
        if k == 0.0:
            return nominal
        while len(run.noise) <= x:
            run.noise.append(self._rngs[agent].standard_normal())
        t = nominal + math.sqrt(k) * run.noise[x]  # unit-length moves
        return max(t, self.noise.clamp_floor * nominal)

    # -- instructions --------------------------------------------------------
    def dispatch(self, agent: int, frm: int, dwell: Sequence[float], move: Sequence[float],
                 in_flight: bool = False):
        """Replace instructions from chain vertex ``frm`` onwards.

        With ``in_flight`` the agent may already be moving away from ``frm``;
        the move in progress then takes the new nominal duration ``move[0]``.
        """
        run = self.agents[agent]
        if frm < run.pos or (frm == run.pos and run.departed and not in_flight):
            raise ExecutionError(f"agent {agent} already left vertex {frm}")
        for x in [x for x in run.dwell if x >= frm]:
            del run.dwell[x]
        for x in [x for x in run.move if x >= frm]:
            del run.move[x]
        for i, d in enumerate(dwell):
            run.dwell[frm + i] = d
        for i, m in enumerate(move):
            run.move[frm + i] = m
        if frm == run.pos and run.departed:
            self.replace_current_move(agent, move[0])
        elif frm == run.pos and not run.done:
            self._schedule_departure(agent)

    def replace_current_move(self, agent: int, nominal: float):
        """Swap the nominal duration of the move in progress (same noise draw)."""
        run = self.agents[agent]
        if not run.departed:
            raise ExecutionError(f"agent {agent} is not moving")
        run.move[run.pos] = nominal
        arrive = max(run.depart_time + self._actual(agent, run.pos, nominal), self.now)
        self._push(agent, arrive)

    def _push(self, agent: int, t: float):
        run = self.agents[agent]
        run.token += 1
        run.arrival_time = t
        heapq.heappush(self._heap, (t, agent, run.token))

    def _schedule_departure(self, agent: int):
        run = self.agents[agent]
        d = run.dwell.get(run.pos, INF)
        if not math.isfinite(d) or run.pos not in run.move:
            run.departed = False
            return
        dep = max(run.reach[run.pos] + d, self.now)
        run.departed = True
        run.depart_time = dep
        self._push(agent, dep + self._actual(agent, run.pos, run.move[run.pos]))

    # -- time ----------------------------------------------------------------
    def next_event_time(self) -> float:
        while self._heap:
            t, a, tok = self._heap[0]
            if tok == self.agents[a].token and self.agents[a].departed:
                return t
            heapq.heappop(self._heap)
        return INF

    def advance(self, until: float) -> list[tuple[int, int, float]]:
        events = []
        while True:
            t = self.next_event_time()
            if t > until or t == INF:
                break
            _, a, _ = heapq.heappop(self._heap)
            run = self.agents[a]
            self.now = max(self.now, t)
            run.actual[run.pos] = t - run.depart_time
            run.pos += 1
            run.reach[run.pos] = t
            run.departed = False
            events.append((a, run.pos, t))
            if not run.done:
                self._schedule_departure(a)
        if math.isfinite(until):
            self.now = max(self.now, until)
        return events

    def run_to_completion(self) -> list[tuple[int, int, float]]:
        return self.advance(INF)

    @property
    def all_done(self) -> bool:
        return all(r.done for r in self.agents)

    def trace(self, stats: dict | None = None) -> ExecutionTrace:
        end = max((t for r in self.agents for t in r.reach if t is not None), default=0.0)
        return ExecutionTrace([list(r.reach) for r in self.agents], end, dict(stats or {}))


# ---------------------------------------------------------------------------
# checks and metrics


@dataclass
class CollisionReport:
    collisions: list[tuple] = field(default_factory=list)   # (location, agent_a, agent_b, start, end)
    order_violations: list[tuple] = field(default_factory=list)  # (edge index, t_leave, t_enter)

    @property
    def ok(self) -> bool:
        return not self.collisions and not self.order_violations

    def to_json(self) -> dict:
        return {
            "collisions": [
                {"location": list(c[0]), "agents": [c[1], c[2]], "overlap": [c[3], c[4]]}
                for c in self.collisions
            ],
            "order_violations": [
                {"edge": v[0], "t_leave": v[1], "t_enter": v[2]} for v in self.order_violations
            ],
        }


def occupancy(trace: ExecutionTrace, tpg: Tpg):
    by_loc: dict = {}
    for a, times in enumerate(trace.reach):
        chain = tpg.chains[a]
        for k, t in enumerate(times):
            if t is None:
                break
            nxt = times[k + 1] if k + 1 < len(times) else None
            end = INF if nxt is None else nxt
            by_loc.setdefault(chain[k], []).append((t, end, a, k))
    return by_loc


def check_trace(trace: ExecutionTrace, tpg: Tpg) -> CollisionReport:
    report = CollisionReport()
    for loc, occ in occupancy(trace, tpg).items():
        occ.sort()
        for i, (s1, e1, a1, _) in enumerate(occ):
            for s2, e2, a2, _ in occ[i + 1:]:
                if s2 >= e1:
                    break
                if a1 != a2:
                    report.collisions.append((loc, a1, a2, s2, min(e1, e2)))
    for n, e in enumerate(tpg.edges):
        t_enter = trace.reach[e.tgt_agent][e.tgt_seq]
        if t_enter is None:
            continue
        t_leave = trace.reach[e.src_agent][e.src_seq]
        if t_leave is None or t_enter <= t_leave:
            report.order_violations.append((n, t_leave, t_enter))
    return report


@dataclass
class Metrics:
    success: bool
    t_sum: float
    t_ideal: float
    suboptimality: float
    makespan: float
    planner_runtime: float = 0.0
    planner_runtime_mean: float = 0.0
    planner_runtime_max: float = 0.0
    windows: int = 0


def compute_metrics(trace: ExecutionTrace, ideal: float) -> Metrics:
    goals = trace.goal_times()
    done = [t for t in goals if t is not None]
    success = len(done) == len(goals)
    t_sum = float(sum(done))
    sub = (t_sum - ideal) / ideal if success and ideal > 0 else (0.0 if success else math.nan)
    rt = trace.stats.get("window_runtimes", [])
    return Metrics(
        success=success,
        t_sum=t_sum,
        t_ideal=ideal,
        suboptimality=sub,
        makespan=max(done, default=0.0),
        planner_runtime=float(sum(rt)),
        planner_runtime_mean=float(np.mean(rt)) if rt else 0.0,
        planner_runtime_max=float(max(rt)) if rt else 0.0,
        windows=len(rt),
    )


def execute_profiles(tpg: Tpg, profiles: Mapping, noise: NoiseModel | None = None,
                     stats: dict | None = None) -> ExecutionTrace:
    """Open-loop execution of one full profile per agent."""
    sim = Simulator(tpg, noise)
    for a, prof in profiles.items():
        dwell, move = profile_instructions(prof)
        sim.dispatch(a, prof.base, dwell, move)
    sim.run_to_completion()
    return sim.trace(stats)


def profile_instructions(prof, arrival: float | None = None):
    """Dwell and nominal move durations along a profile; the last dwell is unbounded.

    ``arrival`` is the agent's reach time at the first vertex when it differs
    from the profile's planned start (an agent that has been idle there).
    """
    n = len(prof.reach)
    dwell = [prof.depart[k] - prof.reach[k] for k in range(n - 1)] + [INF]
    if arrival is not None and n > 1:
        dwell[0] = prof.depart[0] - arrival
    move = [prof.reach[k + 1] - prof.depart[k] for k in range(n - 1)]
    return dwell, move
