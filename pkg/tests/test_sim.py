import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ktpg.adg import run_adg_baseline
from ktpg.core import run_ktpg
from ktpg.instances import crossing_instance, generate_instance, overtaking_instance, random_map
from ktpg.kinodynamics import RobotModel, min_traverse_time
from ktpg.plan_model import plan_from_cells
from ktpg.sim import (
    ExecutionError,
    ExecutionTrace,
    NoiseModel,
    Simulator,
    check_trace,
    compute_metrics,
    execute_profiles,
    profile_instructions,
    sample_move_time,
)
from ktpg.tpg import Tpg, build_tpg

OMNI = RobotModel.omnidirectional()
DIFF = RobotModel.differential_drive()


# -- noise -------------------------------------------------------------------------------

def test_zero_noise_is_nominal():
    rng = np.random.default_rng(0)
    assert sample_move_time(0.5, 0.0, 1.0, rng) == 0.5


def test_noise_moments():
    rng = np.random.default_rng(123)
    xs = np.array([sample_move_time(0.5, 0.0025, 1.0, rng) for _ in range(100_000)])
    se_mean = 0.05 / math.sqrt(len(xs))
    assert abs(xs.mean() - 0.5) < 3 * se_mean
    se_std = 0.05 / math.sqrt(2 * len(xs))
    assert abs(xs.std() - 0.05) < 3 * se_std


def test_clamp_floor():
    class Huge:
        def normal(self, mu, sigma):
            return -1e9

    assert sample_move_time(0.5, 0.0025, 1.0, Huge()) == pytest.approx(0.05)


def test_nominal_must_be_positive():
    with pytest.raises(ValueError):
        sample_move_time(0.0, 0.0, 1.0, np.random.default_rng())


def test_agent_streams_are_independent_of_each_other():
    n = NoiseModel(0.01, seed=5)
    a = n.agent_rng(3).standard_normal(4)
    assert np.array_equal(a, NoiseModel(0.01, seed=5).agent_rng(3).standard_normal(4))
    assert not np.array_equal(a, n.agent_rng(2).standard_normal(4))


# -- advance ------------------------------------------------------------------------------

def _solo(chain, model=OMNI):
    tpg = Tpg([chain], [])
    return tpg, run_ktpg(tpg, model).profiles


def test_goal_event_at_profile_end():
    chain = [(x, 0) for x in range(5)]
    tpg, profs = _solo(chain)
    sim = Simulator(tpg)
    dwell, move = profile_instructions(profs[0])
    sim.dispatch(0, 0, dwell, move)
    events = sim.advance(10.0)
    assert events[-1] == (0, 4, pytest.approx(4.0))
    assert sim.now == 10.0 and sim.all_done


def test_crossing_events_match_profiles():
    tpg = build_tpg(crossing_instance())
    profs = run_ktpg(tpg, OMNI).profiles
    trace = execute_profiles(tpg, profs)
    for a, prof in profs.items():
        assert trace.reach[a] == pytest.approx(prof.reach, abs=1e-6)


def test_agent_without_instructions_holds():
    tpg = build_tpg(crossing_instance())
    sim = Simulator(tpg)
    assert sim.advance(100.0) == []
    assert [r.pos for r in sim.agents] == [0, 0]


def test_dispatch_behind_agent_rejected():
    tpg, profs = _solo([(x, 0) for x in range(4)])
    sim = Simulator(tpg)
    sim.dispatch(0, 0, [0.0, 0.0, 0.0, math.inf], [1.0, 1.0, 1.0])
    sim.advance(1.5)
    with pytest.raises(ExecutionError):
        sim.dispatch(0, 0, [0.0], [1.0])


def test_in_flight_move_can_be_retimed():
    tpg, _ = _solo([(x, 0) for x in range(3)])
    sim = Simulator(tpg)
    sim.dispatch(0, 0, [0.0, 0.0, math.inf], [1.0, 1.0])
    sim.advance(0.5)
    sim.dispatch(0, 0, [0.0, 0.0, math.inf], [2.0, 1.0], in_flight=True)
    sim.run_to_completion()
    assert sim.agents[0].reach == [0.0, 2.0, 3.0]


# -- trace checks and export ---------------------------------------------------------------

def test_disjoint_paths_report_empty():
    tpg = build_tpg(plan_from_cells([[(0, 0), (1, 0)], [(0, 2), (1, 2)]]))
    trace = execute_profiles(tpg, run_ktpg(tpg, OMNI).profiles)
    rep = check_trace(trace, tpg)
    assert rep.ok and rep.to_json() == {"collisions": [], "order_violations": []}


def test_forced_overlap_reported_once():
    tpg = Tpg([[(0, 0), (1, 0)], [(1, 1), (1, 0)]], [])
    trace = ExecutionTrace([[0.0, 1.0], [0.0, 3.0]], 3.0)
    rep = check_trace(trace, tpg)
    assert rep.collisions == [((1, 0), 0, 1, 3.0, math.inf)]


def test_order_violation_reported():
    tpg = build_tpg(crossing_instance())
    # agent 1 enters the shared cell before agent 0 left it
    trace = ExecutionTrace([[0.0, 1.0, 3.0], [0.0, 2.0, 4.0]], 4.0)
    rep = check_trace(trace, tpg)
    assert rep.order_violations == [(0, 3.0, 2.0)]
    assert rep.collisions


def test_jsonl_events():
    tpg = build_tpg(crossing_instance())
    trace = execute_profiles(tpg, run_ktpg(tpg, OMNI).profiles)
    lines = [json.loads(x) for x in trace.to_jsonl(tpg).splitlines()]
    assert len(lines) == tpg.num_vertices
    assert set(lines[0]) == {"agent", "vertex_seq", "location", "t_actual"}
    assert [e["t_actual"] for e in lines] == sorted(e["t_actual"] for e in lines)


def test_seeded_execution_is_bit_identical():
    _, plan = generate_instance(random_map(12, 12, 0.1, 1), 8, 1)
    tpg = build_tpg(plan)
    profs = run_ktpg(tpg, OMNI).profiles
    a = execute_profiles(tpg, profs, NoiseModel.from_epsilon(0.05, 11))
    b = execute_profiles(tpg, profs, NoiseModel.from_epsilon(0.05, 11))
    assert a.reach == b.reach


def test_per_move_variance_matches_noise_model():
    tpg, profs = _solo([(x, 0) for x in range(2)])
    ends = [execute_profiles(tpg, profs, NoiseModel(0.0025, seed=s)).reach[0][-1] for s in range(4000)]
    assert np.std(ends) == pytest.approx(0.05, rel=0.05)


# -- metrics -------------------------------------------------------------------------------

def test_metrics_arithmetic():
    m = compute_metrics(ExecutionTrace([[0.0, 10.0], [0.0, 20.0]], 20.0), 24.0)
    assert m.success and m.t_sum == 30.0 and m.suboptimality == pytest.approx(0.25)
    assert m.makespan == 20.0
    assert compute_metrics(ExecutionTrace([[0.0, 12.0]], 12.0), 12.0).suboptimality == 0.0
    assert compute_metrics(ExecutionTrace([[0.0, 18.0]], 18.0), 12.0).suboptimality == pytest.approx(0.5)


def test_incomplete_trace_is_unsuccessful():
    m = compute_metrics(ExecutionTrace([[0.0, None], [0.0, 5.0]], 5.0), 4.0)
    assert not m.success and math.isnan(m.suboptimality)


def test_runtime_statistics():
    m = compute_metrics(ExecutionTrace([[0.0, 1.0]], 1.0, {"window_runtimes": [0.1, 0.3]}), 1.0)
    assert (m.windows, m.planner_runtime_max) == (2, 0.3)
    assert m.planner_runtime_mean == pytest.approx(0.2)


# -- ADG baseline ----------------------------------------------------------------------------

def test_adg_without_edges_is_solo_optimal():
    chains = [[(0, 0), (1, 0), (2, 0), (2, 1)], [(0, 3), (1, 3), (2, 3), (3, 3)]]
    tpg = Tpg(chains, [])
    trace = run_adg_baseline(tpg, DIFF)
    for a, c in enumerate(chains):
        assert trace.reach[a][-1] == pytest.approx(min_traverse_time(c, DIFF), abs=1e-9)


def test_adg_slower_than_ktpg_when_overtaking():
    plan, states = overtaking_instance()
    tpg = build_tpg(plan)
    ktpg = execute_profiles(tpg, run_ktpg(tpg, OMNI, None, states).profiles)
    adg = run_adg_baseline(tpg, OMNI, initial_states=states)
    assert check_trace(adg, tpg).ok
    assert adg.reach[1][-1] > ktpg.reach[1][-1] + 0.1


@settings(max_examples=15)
@given(st.integers(2, 12), st.integers(0, 10_000), st.sampled_from([OMNI, DIFF]),
       st.sampled_from([0.0, 0.02, 0.05]))
def test_adg_is_safe_under_noise(n, seed, model, eps):
    _, plan = generate_instance(random_map(12, 12, 0.1, seed), n, seed)
    tpg = build_tpg(plan)
    trace = run_adg_baseline(tpg, model, noise=NoiseModel.from_epsilon(eps, seed))
    assert trace.complete and check_trace(trace, tpg).ok
