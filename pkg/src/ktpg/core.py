"""Iterative interval splitting over a temporal plan graph (kTPG / kTPGu).

Every TPG vertex owns a reserved interval, initially ``[0, inf)``. An agent
whose chain prefix has no incoming conflicting Type-2 edge gets a speed
profile through that prefix; its leave time at each shared location then
splits the location's time axis between it and the follower. With an
uncertainty model the follower's share starts a safety margin later.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from ktpg.kinodynamics import (
    INF,
    SPLIT_DELTA,
    KinematicState,
    RobotModel,
    SpeedProfile,
    plan_speed_profile,
)
from ktpg.tpg import Tpg, Type2Edge

SATISFIED = "SATISFIED"
CONFLICTING = "CONFLICTING"


class InfeasibleProfileError(RuntimeError):
    """The speed planner found no profile where one must exist."""

    def __init__(self, agent: int, message: str = ""):
        self.agent = agent
        super().__init__(f"agent {agent}: no feasible speed profile {message}".strip())


# ---------------------------------------------------------------------------
# uncertainty


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF (Acklam's approximation + two Halley steps)."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {p}")
    a = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
         1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
    b = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
         6.680131188771972e01, -1.328068155288572e01)
    c = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
         -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
    d = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
         3.754408661907416e00)
    lo = 0.02425
    if p < lo:
        q = math.sqrt(-2 * math.log(p))
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1)
    elif p > 1 - lo:
        q = math.sqrt(-2 * math.log(1 - p))
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1)
    else:
        q = p - 0.5
        r = q * q
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q / \
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1)
    for _ in range(2):
        # Halley refinement on F(x) - p, using erfc for accuracy in the tails
        e = 0.5 * math.erfc(-x / math.sqrt(2)) - p
        u = e * math.sqrt(2 * math.pi) * math.exp(x * x / 2)
        x = x - u / (1 + x * u / 2)
    return x


@dataclass(frozen=True)
class UncertaintyModel:
    """Move-time noise variance ``K * distance`` per agent, safety level ``p_d``."""

    k: float | Sequence[float] = 0.0
    p_d: float = 0.99

    def __post_init__(self):
        if not 0.5 < self.p_d < 1.0:
            raise ValueError("p_d must lie in (0.5, 1)")
        ks = [self.k] if isinstance(self.k, (int, float)) else list(self.k)
        if any(v < 0 for v in ks):
            raise ValueError("K must be non-negative")

    @classmethod
    def from_epsilon(cls, eps: float, p_d: float = 0.99) -> "UncertaintyModel":
        return cls(k=eps * eps, p_d=p_d)

    def k_of(self, agent: int) -> float:
        if isinstance(self.k, (int, float)):
            return float(self.k)
        return float(self.k[agent])

    @property
    def z(self) -> float:
        return normal_quantile(self.p_d)

    def margin(self, var_sum: float) -> float:
        if var_sum <= 0.0:
            return 0.0
        return self.z * math.sqrt(var_sum)


@dataclass
class ReachTimeBelief:
    mean: list[float]
    var: list[float]


def propagate_belief(
    planned_reach: Sequence[float],
    k: float,
    anchor: tuple[int, float],
    distances: Sequence[float] | None = None,
) -> ReachTimeBelief:
    """Gaussian reach-time belief re-anchored at an observed vertex.

    ``planned_reach`` are the nominal reach times along a chain; ``anchor`` is
    ``(index, observed time)``. Entries before the anchor are NaN.
    """
    idx, t_obs = anchor
    n = len(planned_reach)
    mean = [math.nan] * n
    var = [math.nan] * n
    mean[idx], var[idx] = t_obs, 0.0
    for x in range(idx + 1, n):
        d = 1.0 if distances is None else distances[x - 1]
        mean[x] = mean[x - 1] + (planned_reach[x] - planned_reach[x - 1])
        var[x] = var[x - 1] + k * d
    return ReachTimeBelief(mean, var)


# ---------------------------------------------------------------------------
# state


@dataclass
class AgentTrack:
    """The stretch of an agent's chain a kTPG run plans over.

    Local index 0 is global vertex ``base``, where the agent is (or will be)
    in kinematic state ``start``. ``anchor`` is the last vertex whose reach
    time was observed; reach-time variance accumulates from there.
    """

    agent: int
    base: int
    cells: list
    start: KinematicState = field(default_factory=KinematicState)
    anchor: int = 0

    @property
    def end(self) -> int:
        return self.base + len(self.cells) - 1


@dataclass
class KtpgState:
    model: RobotModel
    tracks: dict[int, AgentTrack]
    edges: list[Type2Edge]
    intervals: dict[int, list[list[float]]]
    status: list[str]
    uncertainty: UncertaintyModel | None = None
    profiles: dict[int, SpeedProfile] = field(default_factory=dict)
    iterations: int = 0
    planner_calls: int = 0
    _incoming: dict = field(default_factory=dict, repr=False)
    _outgoing: dict = field(default_factory=dict, repr=False)
    _prefix: dict = field(default_factory=dict, repr=False)

    def interval(self, agent: int, seq: int) -> list[float]:
        return self.intervals[agent][seq - self.tracks[agent].base]

    @property
    def conflicting(self) -> list[int]:
        return [n for n, s in enumerate(self.status) if s == CONFLICTING]

    @property
    def done(self) -> bool:
        return CONFLICTING not in self.status

    def snapshot(self) -> dict:
        return {
            "intervals": {
                str(a): [[lo, None if hi == INF else hi] for lo, hi in ivs]
                for a, ivs in self.intervals.items()
            },
            "edges": [
                {"src": list(e.source), "tgt": list(e.target), "status": s}
                for e, s in zip(self.edges, self.status)
            ],
        }


def make_state(
    tracks: Mapping[int, AgentTrack],
    edges: Sequence[Type2Edge],
    model: RobotModel,
    uncertainty: UncertaintyModel | None = None,
    intervals: Mapping[int, list[list[float]]] | None = None,
) -> KtpgState:
    """State over arbitrary chain stretches; ``edges`` must lie inside the tracks."""
    tracks = dict(tracks)
    if intervals is None:
        intervals = {a: [[0.0, INF] for _ in t.cells] for a, t in tracks.items()}
    state = KtpgState(model, tracks, list(edges), {a: [list(iv) for iv in ivs] for a, ivs in intervals.items()},
                      [CONFLICTING] * len(edges), uncertainty)
    for n, e in enumerate(state.edges):
        ts, tt = tracks.get(e.src_agent), tracks.get(e.tgt_agent)
        if ts is None or tt is None or not (ts.base < e.src_seq <= ts.end) \
                or not (tt.base < e.tgt_seq <= tt.end):
            raise ValueError(f"edge {e} is not inside the planned tracks")
        state._incoming[e.target] = state._incoming.get(e.target, 0) + 1
        state._outgoing.setdefault(e.src_agent, []).append(n)
    for lst in state._outgoing.values():
        lst.sort(key=lambda n: state.edges[n].src_seq)
    for a in tracks:
        state._prefix[a] = _scan_prefix(state, a, tracks[a].base)
    return state


def init_state(
    tpg: Tpg,
    model: RobotModel | None = None,
    uncertainty: UncertaintyModel | None = None,
    initial_states: Mapping[int, KinematicState] | None = None,
) -> KtpgState:
    from ktpg.tpg import assert_acyclic

    if not assert_acyclic(tpg):
        raise ValueError("temporal plan graph has a cycle")
    initial_states = initial_states or {}
    tracks = {
        a: AgentTrack(a, 0, list(chain), initial_states.get(a, KinematicState()), 0)
        for a, chain in enumerate(tpg.chains)
    }
    return make_state(tracks, tpg.edges, model or RobotModel(), uncertainty)


def _scan_prefix(state: KtpgState, agent: int, frm: int) -> int:
    t = state.tracks[agent]
    seq = frm
    while seq < t.end and state._incoming.get((agent, seq + 1), 0) == 0:
        seq += 1
    return seq


def unlocked_prefix(state: KtpgState, agent: int) -> range:
    """Global vertex indices of the agent's unlocked prefix."""
    return range(state.tracks[agent].base, state._prefix[agent] + 1)


def _pending_from_prefix(state: KtpgState, agent: int) -> list[int]:
    end = state._prefix[agent]
    out = []
    for n in state._outgoing.get(agent, ()):
        e = state.edges[n]
        if e.src_seq > end:
            break
        if state.status[n] == CONFLICTING:
            out.append(n)
    return out


def select_agent(state: KtpgState) -> int | None:
    best, best_count = None, 0
    for a in sorted(state.tracks):
        c = len(_pending_from_prefix(state, a))
        if c > best_count:
            best, best_count = a, c
    return best


def edge_margin(state: KtpgState, e: Type2Edge) -> float:
    u = state.uncertainty
    if u is None:
        return 0.0
    ti, tj = state.tracks[e.src_agent], state.tracks[e.tgt_agent]
    var = u.k_of(e.src_agent) * max(e.src_seq - ti.anchor, 0) \
        + u.k_of(e.tgt_agent) * max(e.tgt_seq - tj.anchor, 0)
    return u.margin(var)


def plan_agent(state: KtpgState, agent: int, last: int | None = None) -> SpeedProfile:
    t = state.tracks[agent]
    last = state._prefix[agent] if last is None else last
    n = last - t.base + 1
    ivs = [tuple(iv) for iv in state.intervals[agent][:n]]
    state.planner_calls += 1
    prof = plan_speed_profile(t.cells[:n], ivs, t.start, state.model, agent, t.base)
    if prof is None:
        raise InfeasibleProfileError(agent, f"over vertices {t.base}..{last}")
    return prof


def satisfy_edges(
    state: KtpgState,
    agent: int,
    profile: SpeedProfile,
    uncertainty: UncertaintyModel | None = None,
) -> list[int]:
    """Split shared-location time at the agent's leave times; returns satisfied edge ids."""
    if uncertainty is not None:
        state.uncertainty = uncertainty
    done = []
    touched = set()
    for n in _pending_from_prefix(state, agent):
        e = state.edges[n]
        if e.src_seq > profile.last:
            continue
        t_leave = profile.reach[profile.local(e.src_seq)]
        own = state.interval(agent, e.src_seq - 1)
        own[1] = min(own[1], t_leave)
        other = state.interval(e.tgt_agent, e.tgt_seq)
        other[0] = max(other[0], t_leave + edge_margin(state, e) + SPLIT_DELTA)
        if own[0] > own[1] + 1e-9 or other[0] > other[1] + 1e-9:
            raise AssertionError(f"empty reserved interval after satisfying {e}")
        state.status[n] = SATISFIED
        state._incoming[e.target] -= 1
        touched.add(e.tgt_agent)
        done.append(n)
    state.profiles[agent] = profile
    for a in touched:
        state._prefix[a] = _scan_prefix(state, a, state._prefix[a])
    return done


@dataclass
class KtpgResult:
    profiles: dict[int, SpeedProfile]
    iterations: int
    planner_calls: int
    state: KtpgState


def solve(state: KtpgState) -> KtpgResult:
    """Run the split loop to completion, then commit full-track profiles."""
    while not state.done:
        agent = select_agent(state)
        if agent is None:
            raise AssertionError("conflicting edges remain but none leaves an unlocked prefix")
        profile = plan_agent(state, agent)
        satisfied = satisfy_edges(state, agent, profile)
        if not satisfied:
            raise AssertionError("iteration made no progress")
        state.iterations += 1
    for a, t in state.tracks.items():
        prof = state.profiles.get(a)
        if prof is None or prof.last < t.end:
            state.profiles[a] = plan_agent(state, a, t.end)
    return KtpgResult(dict(state.profiles), state.iterations, state.planner_calls, state)


def run_ktpg(
    tpg: Tpg,
    model: RobotModel | None = None,
    uncertainty: UncertaintyModel | None = None,
    initial_states: Mapping[int, KinematicState] | None = None,
) -> KtpgResult:
    return solve(init_state(tpg, model, uncertainty, initial_states))
