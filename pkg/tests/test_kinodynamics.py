import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ktpg.kinodynamics import (
    INF,
    KinematicState,
    RobotModel,
    build_primitives,
    check_profile,
    make_move,
    min_traverse_time,
    plan_speed_profile,
)
from oracles import brute_force_optimum

OMNI = RobotModel.omnidirectional()
DIFF = RobotModel.differential_drive()
R2 = math.sqrt(2)


def straight(n):
    return [(x, 0) for x in range(n)]


# -- model and primitives ------------------------------------------------------------

def test_model_invariants():
    assert 0.0 in OMNI.speeds and max(OMNI.speeds) <= OMNI.v_max
    with pytest.raises(ValueError):
        RobotModel(speeds=(0.0, 3.0))
    with pytest.raises(ValueError):
        RobotModel(a_min=0.5)
    with pytest.raises(ValueError):
        RobotModel(speeds=(1.0, 2.0))


def test_cruise_primitive():
    assert make_move(2.0, 2.0, 1, OMNI).duration == pytest.approx(0.5)


def test_accelerate_to_sqrt2_in_one_cell():
    p = make_move(0.0, R2, 1, OMNI)
    assert p.duration == pytest.approx(R2, abs=1e-9)


def test_rest_to_rest_one_cell():
    p = make_move(0.0, 0.0, 1, OMNI)
    assert p.duration == pytest.approx(2.0)
    assert p.peak_speed == pytest.approx(1.0)


def test_full_speed_change_needs_two_cells():
    assert make_move(0.0, 2.0, 1, OMNI) is None
    assert make_move(0.0, 2.0, 2, OMNI) is not None


def test_primitive_set_is_complete():
    prims = build_primitives(DIFF)
    moves = [p for p in prims if p.kind == "move"]
    pairs = {(p.entry_speed, p.exit_speed) for p in moves}
    assert pairs == {(u, w) for u in DIFF.speeds for w in DIFF.speeds}
    for p in prims:
        assert p.entry_speed in DIFF.speeds and p.exit_speed in DIFF.speeds
        if p.kind != "move":
            assert p.entry_speed == p.exit_speed == 0.0
        else:
            assert list(p.offsets) == sorted(set(p.offsets)) and p.offsets[-1] == pytest.approx(p.duration)
    assert {p.angle for p in prims if p.kind == "turn"} == {90, 180}


# -- planner examples -------------------------------------------------------------------

def test_single_vertex_chain_is_instant():
    prof = plan_speed_profile([(0, 0)], None, KinematicState(), OMNI)
    assert prof.duration == 0.0


def test_four_metre_corridor_matches_oracle():
    chain = straight(5)
    prof = plan_speed_profile(chain, None, KinematicState(), OMNI)
    assert prof.end_time == pytest.approx(brute_force_optimum(chain, None, KinematicState(), OMNI), abs=1e-9)
    assert prof.end_time == pytest.approx(4.0)
    assert check_profile(prof, OMNI) == []


def test_waits_for_late_interval():
    chain = straight(3)
    ivs = [(0, INF), (5.0, INF), (0, INF)]
    prof = plan_speed_profile(chain, ivs, KinematicState(), OMNI)
    assert prof.reach[1] >= 5.0
    assert prof.depart[0] > prof.reach[0]  # the wait happens at rest at the start
    assert prof.end_time == pytest.approx(brute_force_optimum(chain, ivs, KinematicState(), OMNI), abs=1e-9)


def test_infeasible_upper_bound():
    ivs = [(0, INF), (0, 0.5), (0, INF)]
    assert plan_speed_profile(straight(3), ivs, KinematicState(), OMNI) is None


def test_moving_start_cannot_stop_in_one_cell():
    assert plan_speed_profile(straight(2), None, KinematicState(2.0, (1, 0)), OMNI) is None


def test_min_traverse_time_examples():
    assert min_traverse_time([(0, 0)], OMNI) == 0.0
    assert min_traverse_time(straight(3), OMNI) == pytest.approx(
        brute_force_optimum(straight(3), None, KinematicState(), OMNI))


def test_turn_costs_time_and_a_stop():
    chain = [(0, 0), (1, 0), (2, 0), (2, 1), (2, 2)]
    omni = min_traverse_time(chain, OMNI)
    diff = min_traverse_time(chain, DIFF)
    two_legs = 2 * min_traverse_time(straight(3), OMNI)
    assert diff == pytest.approx(two_legs + 0.5)
    assert diff > omni + 0.5
    assert diff == pytest.approx(brute_force_optimum(chain, None, KinematicState(), DIFF))


def test_u_turn_start_heading():
    # initially facing west, the first move goes east: a 180 degree turn first
    t = min_traverse_time(straight(2), DIFF, KinematicState(0.0, (-1, 0)))
    assert t == pytest.approx(0.9 + 2.0)


def test_speeds_change_only_within_bounds():
    chain = straight(8)
    prof = plan_speed_profile(chain, [(0, INF)] * 3 + [(9.0, INF)] + [(0, INF)] * 4, KinematicState(), DIFF)
    assert check_profile(prof, DIFF) == []
    for k in range(len(chain)):
        if prof.depart[k] > prof.reach[k] + 1e-12:
            assert prof.speeds[k] == 0.0


# -- properties ---------------------------------------------------------------------------

DIRS = [(1, 0), (0, 1), (-1, 0), (0, -1)]


@st.composite
def constrained_chains(draw, max_cells=6):
    n = draw(st.integers(2, max_cells + 1))
    model = draw(st.sampled_from([OMNI, DIFF]))
    chain = [(0, 0)]
    heading = draw(st.sampled_from(DIRS))
    for _ in range(n - 1):
        if draw(st.integers(0, 3)) == 0:
            heading = draw(st.sampled_from(DIRS))
        x, y = chain[-1]
        nxt = (x + heading[0], y + heading[1])
        if nxt in chain:
            heading = (heading[1], -heading[0])
            nxt = (x + heading[0], y + heading[1])
        chain.append(nxt)
    ivs = [[0.0, INF] for _ in chain]
    for _ in range(draw(st.integers(0, 3))):
        k = draw(st.integers(0, n - 1))
        if draw(st.booleans()):
            ivs[k][0] = draw(st.floats(0.0, 12.0))
        else:
            ivs[k][1] = draw(st.floats(0.5, 15.0))
    speed = draw(st.sampled_from([0.0, 0.0, R2, 2.0]))
    start = KinematicState(0.0, draw(st.sampled_from(DIRS + [None])), 0.0)
    if speed:
        d = (chain[1][0] - chain[0][0], chain[1][1] - chain[0][1])
        start = KinematicState(speed, d, 0.0)
    return chain, [tuple(iv) for iv in ivs], start, model


@settings(max_examples=150)
@given(constrained_chains())
def test_planner_matches_exhaustive_enumeration(case):
    chain, ivs, start, model = case
    prof = plan_speed_profile(chain, ivs, start, model)
    best = brute_force_optimum(chain, ivs, start, model)
    if best is None:
        assert prof is None
    else:
        assert prof is not None and prof.end_time == pytest.approx(best, abs=1e-6)
        assert check_profile(prof, model, ivs) == []


@settings(max_examples=80)
@given(constrained_chains(), st.integers(0, 6), st.floats(0.0, 3.0))
def test_tightening_never_helps(case, k, amount):
    chain, ivs, start, model = case
    k = k % len(chain)
    loose = plan_speed_profile(chain, ivs, start, model)
    tight = [list(iv) for iv in ivs]
    tight[k][0] += amount
    tighter = plan_speed_profile(chain, [tuple(iv) for iv in tight], start, model)
    if loose is None:
        assert tighter is None
    elif tighter is not None:
        assert tighter.end_time >= loose.end_time - 1e-9


@settings(max_examples=80)
@given(constrained_chains())
def test_no_waiting_while_moving(case):
    chain, ivs, start, model = case
    prof = plan_speed_profile(chain, ivs, start, model)
    if prof is None:
        return
    for t, prim, k in prof.segments():
        if prim.kind in ("wait", "turn"):
            assert prof.speeds[k] == 0.0
    assert prof.speeds[-1] == 0.0
    assert all(b > a for a, b in zip(prof.reach, prof.reach[1:]))
