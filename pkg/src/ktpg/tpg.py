"""Temporal plan graph: per-agent location chains plus cross-agent passing order."""

from __future__ import annotations

from collections import defaultdict, deque
from dataclasses import dataclass, field

from ktpg.plan_model import Cell, MapfPlan, validate_plan

Vertex = tuple[int, int]  # (agent_id, seq)


@dataclass(frozen=True)
class TpgVertex:
    agent_id: int
    seq: int
    location: Cell


@dataclass(frozen=True)
class Type2Edge:
    """Agent ``tgt_agent`` may enter ``location`` at ``tgt_seq`` only after
    ``src_agent`` has reached ``src_seq`` (and thereby left ``location``)."""

    src_agent: int
    src_seq: int
    tgt_agent: int
    tgt_seq: int
    location: Cell

    @property
    def source(self) -> Vertex:
        return (self.src_agent, self.src_seq)

    @property
    def target(self) -> Vertex:
        return (self.tgt_agent, self.tgt_seq)


class CyclicGraphError(ValueError):
    pass


@dataclass
class Tpg:
    chains: list[list[Cell]]
    edges: list[Type2Edge]
    _incoming: dict[Vertex, list[int]] = field(default_factory=dict, repr=False)
    _outgoing: dict[Vertex, list[int]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        inc, out = defaultdict(list), defaultdict(list)
        for n, e in enumerate(self.edges):
            inc[e.target].append(n)
            out[e.source].append(n)
        key = lambda n: (self.edges[n].src_agent, self.edges[n].src_seq,  # noqa: E731
                         self.edges[n].tgt_agent, self.edges[n].tgt_seq)
        self._incoming = {v: sorted(ns, key=key) for v, ns in inc.items()}
        self._outgoing = {v: sorted(ns, key=lambda n: (self.edges[n].tgt_agent,
                                                        self.edges[n].tgt_seq))
                          for v, ns in out.items()}

    @property
    def num_agents(self) -> int:
        return len(self.chains)

    @property
    def num_vertices(self) -> int:
        return sum(len(c) for c in self.chains)

    def vertex(self, agent: int, seq: int) -> TpgVertex:
        return TpgVertex(agent, seq, self.chains[agent][seq])

    def vertices(self):
        for a, chain in enumerate(self.chains):
            for k, loc in enumerate(chain):
                yield TpgVertex(a, k, loc)

    def _check(self, v) -> Vertex:
        a, k = (v.agent_id, v.seq) if isinstance(v, TpgVertex) else v
        if not (0 <= a < len(self.chains) and 0 <= k < len(self.chains[a])):
            raise KeyError(f"unknown vertex {v}")
        return (a, k)

    def incoming_type2(self, v) -> list[Type2Edge]:
        return [self.edges[n] for n in self._incoming.get(self._check(v), ())]

    def outgoing_type2(self, v) -> list[Type2Edge]:
        return [self.edges[n] for n in self._outgoing.get(self._check(v), ())]

    def incoming_ids(self, v: Vertex) -> list[int]:
        return self._incoming.get(v, [])

    def to_dot(self) -> str:
        def name(a, k):
            x, y = self.chains[a][k]
            return f'"a{a}:{k}@({x},{y})"'

        out = ["digraph tpg {"]
        for a, chain in enumerate(self.chains):
            for k in range(len(chain) - 1):
                out.append(f"  {name(a, k)} -> {name(a, k + 1)};")
            if len(chain) == 1:
                out.append(f"  {name(a, 0)};")
        for e in self.edges:
            out.append(f"  {name(*e.source)} -> {name(*e.target)} [style=dashed];")
        out.append("}")
        return "\n".join(out) + "\n"


def _visits(path) -> list[tuple[Cell, int, int]]:
    """Collapse waits into (location, first timestep, last timestep) visits."""
    visits: list[list] = []
    for cell, t in path.steps:
        if visits and visits[-1][0] == cell:
            visits[-1][2] = t
        else:
            visits.append([cell, t, t])
    return [tuple(v) for v in visits]


def build_tpg(plan: MapfPlan) -> Tpg:
    report = validate_plan(plan)
    if not report.ok:
        raise ValueError(f"plan has collisions, passing order is ambiguous: {report}")
    chains, by_location = [], defaultdict(list)
    for a, path in enumerate(plan.paths):
        visits = _visits(path)
        chains.append([v[0] for v in visits])
        for k, (loc, first, last) in enumerate(visits):
            if k == len(visits) - 1:
                last = float("inf")  # parked at the goal
            by_location[loc].append((first, last, a, k))
    edges = []
    for loc, visits in by_location.items():
        visits.sort()
        for n, (f1, l1, a1, k1) in enumerate(visits):
            for f2, l2, a2, k2 in visits[n + 1:]:
                if a1 == a2:
                    continue
                # collision-free plan: the earlier visit ends before the later starts
                assert l1 < f2, (loc, a1, a2)
                edges.append(Type2Edge(a1, k1 + 1, a2, k2, loc))
    edges.sort(key=lambda e: (e.src_agent, e.src_seq, e.tgt_agent, e.tgt_seq))
    return Tpg(chains, edges)


def topological_order(chains_len: list[int], edges: list[tuple[Vertex, Vertex]]):
    """Kahn's algorithm over Type-1 chain links plus the given extra edges."""
    indeg: dict[Vertex, int] = defaultdict(int)
    succ: dict[Vertex, list[Vertex]] = defaultdict(list)
    nodes = [(a, k) for a, n in enumerate(chains_len) for k in range(n)]
    for a, n in enumerate(chains_len):
        for k in range(n - 1):
            succ[(a, k)].append((a, k + 1))
            indeg[(a, k + 1)] += 1
    for u, v in edges:
        succ[u].append(v)
        indeg[v] += 1
    queue = deque(v for v in nodes if indeg[v] == 0)
    order = []
    while queue:
        u = queue.popleft()
        order.append(u)
        for v in succ[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                queue.append(v)
    return order if len(order) == len(nodes) else None


def assert_acyclic(tpg: Tpg) -> bool:
    lens = [len(c) for c in tpg.chains]
    return topological_order(lens, [(e.source, e.target) for e in tpg.edges]) is not None
