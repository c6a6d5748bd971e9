import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ktpg.instances import crossing_instance, empty_map, generate_instance
from ktpg.kinodynamics import RobotModel, min_traverse_time
from ktpg.plan_model import (
    MapfPlan,
    ParseError,
    TimedPath,
    ideal_time_sum,
    parse_map,
    parse_plan,
    parse_scenario,
    plan_from_cells,
    serialize_map,
    serialize_plan,
    validate_plan,
)


def map_text(rows):
    return "type octile\nheight {}\nwidth {}\nmap\n{}\n".format(len(rows), len(rows[0]), "\n".join(rows))


# -- parse_map ------------------------------------------------------------------

def test_parse_map_empty_2x2():
    g = parse_map(map_text(["..", ".."]))
    assert (g.width, g.height) == (2, 2)
    assert not g.blocked.any()


def test_parse_map_single_obstacle():
    g = parse_map(map_text([".@", ".."]))
    assert g.blocked.sum() == 1
    assert not g.passable((1, 0)) and g.passable((0, 0))


def test_parse_map_benchmark_header():
    g = parse_map(map_text(["." * 32] * 32))
    assert (g.width, g.height) == (32, 32)


@pytest.mark.parametrize("text, line", [
    ("type octile\nheight 2\nwidht 2\nmap\n..\n..\n", 3),
    ("type octile\nheight 2\nwidth 2\nmap\n..\n...\n", 6),
    ("type octile\nheight 2\nwidth 2\nmap\n..\n.x\n", 6),
])
def test_parse_map_errors_name_the_line(text, line):
    with pytest.raises(ParseError) as err:
        parse_map(text)
    assert err.value.line == line
    assert f"line {line}" in str(err.value)


def test_all_character_classes():
    g = parse_map(map_text([".GS", "@OT", "W.."]))
    assert g.blocked.tolist() == [[False] * 3, [True] * 3, [True, False, False]]


# -- parse_scenario -----------------------------------------------------------------

SCEN = "version 1\n" + "".join(
    f"0\tm.map\t32\t32\t{x}\t{y}\t{x + 4}\t{y + 5}\t9.0\n" for x, y in [(3, 4), (0, 0), (1, 1), (2, 2), (5, 5)]
)


def test_scenario_count():
    assert len(parse_scenario(SCEN, 5)) == 5
    assert parse_scenario(SCEN, 0) == []


def test_scenario_row_fields():
    t = parse_scenario(SCEN, 1)[0]
    assert (t.agent_id, t.start, t.goal) == (0, (3, 4), (7, 9))


def test_scenario_errors():
    with pytest.raises(ValueError):
        parse_scenario(SCEN, 6)
    small = parse_map(map_text(["...."] * 4))
    with pytest.raises(ParseError):
        parse_scenario(SCEN, 1, small)


# -- parse_plan -----------------------------------------------------------------------

def test_parse_plan_single_agent():
    plan = parse_plan("0: (0,0)@0, (1,0)@1\n")
    assert plan.num_agents == 1 and len(plan.paths[0].steps) == 2


def test_parse_plan_disjoint_agents_valid():
    plan = parse_plan("0: (0,0)@0, (1,0)@1\n1: (0,2)@0, (1,2)@1\n")
    assert validate_plan(plan).ok


def test_parse_plan_diagonal_rejected():
    with pytest.raises(ParseError, match="non-adjacent step"):
        parse_plan("0: (0,0)@0, (1,1)@1\n")


@pytest.mark.parametrize("text", [
    "0: (0,0)@0, (1,0)@2\n",          # timestep gap
    "0: (0,0)@0, (1,0)@1 junk\n",     # trailing garbage
    "0 (0,0)@0\n",                     # missing colon
    "1: (0,0)@0\n",                    # ids must start at 0
])
def test_parse_plan_malformed(text):
    with pytest.raises(ParseError):
        parse_plan(text)


def test_parse_plan_out_of_bounds():
    g = parse_map(map_text(["..", ".."]))
    with pytest.raises(ParseError):
        parse_plan("0: (1,1)@0, (2,1)@1\n", g)


def test_plan_keeps_terminal_waits():
    plan = parse_plan("0: (0,0)@0, (1,0)@1, (1,0)@2, (1,0)@3\n")
    assert len(plan.paths[0].steps) == 4


# -- validate_plan -----------------------------------------------------------------------

def test_vertex_collision_reported():
    plan = plan_from_cells([
        [(0, 0), (1, 0), (2, 0), (3, 0)],
        [(3, 2), (3, 2), (3, 1), (3, 0)],
    ])
    rep = validate_plan(plan)
    assert len(rep.vertex_collisions) == 1 and rep.vertex_collisions[0][2] == 3
    assert not rep.edge_collisions


def test_edge_collision_reported():
    plan = plan_from_cells([
        [(0, 0), (0, 0), (1, 0), (2, 0)],
        [(3, 0), (2, 0), (2, 0), (1, 0)],
    ])
    rep = validate_plan(plan)
    assert len(rep.edge_collisions) == 1
    assert rep.edge_collisions[0][2] == 3
    assert not rep.vertex_collisions


def test_crossing_plan_with_wait_is_clean():
    rep = validate_plan(crossing_instance())
    assert rep.ok and len(rep) == 0 and not rep


def test_parked_agent_blocks_its_goal():
    plan = plan_from_cells([[(0, 0), (1, 0)], [(2, 1), (2, 0), (1, 0), (0, 0)]])
    assert validate_plan(plan).vertex_collisions


# -- ideal_time_sum -------------------------------------------------------------------------

def test_ideal_zero_agents():
    assert ideal_time_sum(MapfPlan([]), RobotModel()) == 0.0


def test_ideal_straight_corridor_matches_solo_planner():
    plan = plan_from_cells([[(x, 0) for x in range(5)]])
    m = RobotModel()
    assert ideal_time_sum(plan, m) == pytest.approx(min_traverse_time([(x, 0) for x in range(5)], m))


def test_ideal_additive_and_order_invariant():
    m = RobotModel.differential_drive()
    a = [(0, 0), (1, 0), (1, 1), (1, 2)]
    b = [(5, 5), (5, 6), (6, 6)]
    one = ideal_time_sum(plan_from_cells([a]), m)
    two = ideal_time_sum(plan_from_cells([a, [(x + 3, y) for x, y in a]]), m)
    assert two == pytest.approx(2 * one)
    assert ideal_time_sum(plan_from_cells([a, b]), m) == pytest.approx(ideal_time_sum(plan_from_cells([b, a]), m))


# -- properties -----------------------------------------------------------------------------

@st.composite
def grids(draw):
    w = draw(st.integers(1, 8))
    h = draw(st.integers(1, 8))
    rows = ["".join(draw(st.sampled_from(".@GT")) for _ in range(w)) for _ in range(h)]
    return rows


@given(grids())
def test_map_round_trip(rows):
    g = parse_map(map_text(rows))
    g2 = parse_map(serialize_map(g))
    assert (g2.blocked == g.blocked).all()


@st.composite
def walks(draw):
    n = draw(st.integers(1, 4))
    paths = []
    for i in range(n):
        x, y = draw(st.integers(0, 9)), draw(st.integers(0, 9))
        cells = [(x, y)]
        for _ in range(draw(st.integers(0, 8))):
            dx, dy = draw(st.sampled_from([(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)]))
            x, y = x + dx, y + dy
            cells.append((x, y))
        paths.append(TimedPath(i, tuple((c, t) for t, c in enumerate(cells))))
    return MapfPlan(paths)


@given(walks())
def test_plan_round_trip(plan):
    again = parse_plan(serialize_plan(plan))
    assert [p.steps for p in again.paths] == [p.steps for p in plan.paths]


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 12), st.integers(0, 10_000))
def test_generated_plans_validate(n, seed):
    _, plan = generate_instance(empty_map(12, 12), n, seed)
    assert validate_plan(plan).ok
