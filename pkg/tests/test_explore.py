from __future__ import annotations

import itertools
import math
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boxmap.boxcalc import BoxSet, DoorBox, RoomBox, rasterize
from boxmap.errors import EpisodeTimeout, NoPath, TooManyRooms
from boxmap.explore import (
    EpisodeConfig,
    FrontierConfig,
    astar,
    frontier_candidates,
    frontier_goal,
    greedy_goal,
    greedy_order,
    information_gain,
    merge_boxes,
    path_cost,
    rh_goal,
    rh_order,
    run_episode,
)
from boxmap.floorgen import generate, random_starts
from boxmap.gridworld import FREE, OCCUPIED, UNKNOWN, OccupancyGrid, Pose, simulate_scan
from boxmap.topograph import NavGraph, NavNode, RoomNode, TopoGraph


def bfs_cost(free: np.ndarray, s, g) -> int | None:
    """Independent unit-cost 8-connected breadth-first search."""
    h, w = free.shape
    dist = {s: 0}
    q = deque([s])
    while q:
        r, c = q.popleft()
        if (r, c) == g:
            return dist[g]
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                n = (r + dr, c + dc)
                if n not in dist and 0 <= n[0] < h and 0 <= n[1] < w and free[n]:
                    dist[n] = dist[(r, c)] + 1
                    q.append(n)
    return None


# --- astar ------------------------------------------------------------------

def test_astar_corridor():
    free = np.zeros((3, 12), bool)
    free[1, 1:11] = True
    path = astar(free, (1, 1), (1, 10))
    assert path_cost(path) == 9 and path[0] == (1, 1) and path[-1] == (1, 10)


def test_astar_occupied_goal():
    grid = OccupancyGrid(np.full((5, 5), FREE, np.uint8))
    cells = grid.cells.copy()
    cells[2, 2] = OCCUPIED
    with pytest.raises(NoPath):
        astar(grid.with_cells(cells), (0, 0), (2, 2))


def test_astar_walled_off():
    free = np.ones((5, 5), bool)
    free[:, 2] = False
    with pytest.raises(NoPath):
        astar(free, (0, 0), (4, 4))


@settings(max_examples=30)
@given(st.integers(0, 2**31 - 1))
def test_astar_matches_bfs_maze(seed):
    rng = np.random.default_rng(seed)
    free = rng.random((20, 20)) > 0.3
    cells = np.argwhere(free)
    s, g = (tuple(map(int, cells[i])) for i in rng.choice(len(cells), 2))
    want = bfs_cost(free, s, g)
    if want is None:
        with pytest.raises(NoPath):
            astar(free, s, g)
        return
    path = astar(free, s, g)
    assert path_cost(path) == want
    for (r0, c0), (r1, c1) in zip(path, path[1:]):
        assert max(abs(r0 - r1), abs(c0 - c1)) == 1 and free[r1, c1]


def test_astar_deterministic():
    free = np.ones((15, 15), bool)
    assert astar(free, (0, 0), (14, 7)) == astar(free, (0, 0), (14, 7))


# --- graph strategies -------------------------------------------------------

def line_graph(rooms: dict[int, float], robot: float = 0.0, visited=()):
    """Rooms at x positions on a line, each linked only to its neighbours."""
    nodes = tuple(RoomNode(k, RoomBox(x - 1, 0, x + 1, 2), k, k, k in visited) for k, x in rooms.items())
    topo = TopoGraph(nodes, ())
    nav = NavGraph()
    nav.add_node(NavNode("robot", "robot", (robot, 0.0)))
    for k, x in rooms.items():
        nav.add_node(NavNode(f"r{k}", "room", (x, 0.0), k))
    order = sorted(nav.nodes, key=lambda n: nav.nodes[n].pos[0])
    for a, b in zip(order, order[1:]):
        nav.add_edge(a, b)
    return nav, topo


def test_greedy_examples():
    nav, topo = line_graph({0: 10.0})
    assert greedy_goal(nav, topo) == "r0"
    nav, topo = line_graph({0: 10.0, 1: -30.0})
    assert greedy_goal(nav, topo) == "r0"
    nav, topo = line_graph({0: 10.0}, visited=(0,))
    assert greedy_goal(nav, topo) is None and rh_goal(nav, topo) is None


def test_greedy_hand_weighted():
    """Nearer by straight line but farther on the graph loses."""
    nodes = tuple(RoomNode(k, RoomBox(0, 0, 2, 2), k, k) for k in range(3))
    topo = TopoGraph(nodes, ())
    nav = NavGraph()
    for k in ("robot", "r0", "r1", "r2"):
        nav.add_node(NavNode(k, "robot" if k == "robot" else "room", (0.0, 0.0), None if k == "robot" else int(k[1])))
    nav.adj["robot"] = {"r0": 30.0, "r2": 4.0}
    nav.adj["r0"] = {"robot": 30.0}
    nav.adj["r2"] = {"robot": 4.0, "r1": 6.0}
    nav.adj["r1"] = {"r2": 6.0}
    topo = TopoGraph(tuple(RoomNode(n.id, n.box, n.box_index, n.group, n.id == 2) for n in nodes), ())
    assert greedy_goal(nav, topo) == "r1"  # 10 vs 30


def test_rh_line_examples():
    nav, topo = line_graph({0: 10.0, 1: 20.0, 2: 30.0})
    assert greedy_goal(nav, topo) == "r0" and rh_goal(nav, topo) == "r0"
    nav, topo = line_graph({0: -10.0, 1: 12.0, 2: 24.0})
    cost, order = rh_order(nav, topo)
    assert order == ["r0", "r1", "r2"] and cost == pytest.approx(10 + 22 + 12)


def brute_force(d: np.ndarray) -> float:
    n = len(d)
    best = math.inf
    for perm in itertools.permutations(range(1, n)):
        c = d[0, perm[0]] + sum(d[a, b] for a, b in zip(perm, perm[1:]))
        best = min(best, c)
    return best


def complete_graph(pts: np.ndarray):
    n = len(pts) - 1
    nodes = tuple(RoomNode(k, RoomBox(0, 0, 2, 2), k, k) for k in range(n))
    nav = NavGraph()
    nav.add_node(NavNode("robot", "robot", tuple(pts[0])))
    for k in range(n):
        nav.add_node(NavNode(f"r{k}", "room", tuple(pts[k + 1]), k))
    for a, b in itertools.combinations(nav.nodes, 2):
        nav.add_edge(a, b)
    return nav, TopoGraph(nodes, ())


@settings(max_examples=25)
@given(st.integers(1, 7), st.integers(0, 2**31 - 1))
def test_rh_matches_brute_force(n, seed):
    pts = np.random.default_rng(seed).uniform(0, 50, (n + 1, 2))
    nav, topo = complete_graph(pts)
    cost, order = rh_order(nav, topo)
    d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    assert cost == pytest.approx(brute_force(d), abs=1e-9)
    assert sorted(order) == sorted(f"r{k}" for k in range(n))
    g_cost, _ = greedy_order(nav, topo)
    assert cost <= g_cost + 1e-9


def test_rh_too_many_rooms():
    pts = np.random.default_rng(0).uniform(0, 50, (18, 2))
    nav, topo = complete_graph(pts)
    with pytest.raises(TooManyRooms):
        rh_order(nav, topo)


def test_unreachable_room_excluded(caplog):
    nav, topo = line_graph({0: 10.0})
    nodes = topo.nodes + (RoomNode(1, RoomBox(0, 0, 2, 2), 1, 1),)
    nav.add_node(NavNode("r1", "room", (99.0, 0.0), 1))
    with caplog.at_level("WARNING"):
        assert greedy_goal(nav, TopoGraph(nodes, ())) == "r0"
    assert "unreachable" in caplog.text


# --- frontier ---------------------------------------------------------------

def two_frontier_map(left_open: int, right_open: int) -> OccupancyGrid:
    """A corridor with an unknown pocket at each end; pocket sizes set the gain."""
    cells = np.full((21, 41), OCCUPIED, np.uint8)
    cells[10, 5:36] = FREE
    cells[10 - left_open // 2:10 + left_open // 2 + 1, 1:5] = UNKNOWN
    cells[10 - right_open // 2:10 + right_open // 2 + 1, 36:40] = UNKNOWN
    return OccupancyGrid(cells)


def test_single_frontier_chosen_for_any_lambda():
    cells = np.full((9, 20), OCCUPIED, np.uint8)
    cells[4, 1:18] = FREE
    cells[4, 18] = UNKNOWN
    grid = OccupancyGrid(cells)
    for lam in (0.0, 0.02, 10.0):
        assert frontier_goal(grid, (4, 2), FrontierConfig(lam=lam), 5.0) == (4, 17)


def test_frontier_prefers_information_at_equal_distance():
    grid = two_frontier_map(9, 1)
    left = information_gain(grid, (10, 5), 5.0)
    right = information_gain(grid, (10, 35), 5.0)
    assert left > right
    assert frontier_goal(grid, (10, 20), FrontierConfig(lam=1.0), 5.0) == (10, 5)


def test_frontier_gain_counts():
    cells = np.full((30, 30), FREE, np.uint8)
    cells[:, 20:] = UNKNOWN
    grid = OccupancyGrid(cells)
    assert information_gain(grid, (15, 19), 3.0) == sum(
        1 for r in range(12, 19) for c in range(20, 23) if (r - 15) ** 2 + (c - 19) ** 2 <= 9)


def test_lambda_zero_is_nearest():
    grid = two_frontier_map(9, 1)
    assert frontier_goal(grid, (10, 28), FrontierConfig(lam=0.0), 5.0) == (10, 35)
    assert frontier_goal(grid, (10, 12), FrontierConfig(lam=0.0), 5.0) == (10, 5)


def test_frontier_candidates_are_members():
    grid = two_frontier_map(5, 5)
    assert sorted(frontier_candidates(grid)) == [(10, 5), (10, 35)]
    assert frontier_goal(OccupancyGrid(np.zeros((5, 5), np.uint8)), (2, 2), FrontierConfig(), 5.0) is None


def test_frontier_config_validation():
    with pytest.raises(ValueError):
        FrontierConfig(lam=-1)
    with pytest.raises(ValueError):
        FrontierConfig(distance="manhattan")


# --- episodes ---------------------------------------------------------------

ONE_ROOM = BoxSet((RoomBox(60, 60, 90, 90),))


def one_room_world():
    return rasterize(ONE_ROOM, (256, 256))


@pytest.mark.parametrize("strategy", ["greedy", "rh", "hybrid"])
def test_single_room_one_update(strategy):
    world = one_room_world()
    res = run_episode(world, Pose.from_cell(world, 75, 75), EpisodeConfig(strategy=strategy), ONE_ROOM)
    assert res.status == "done" and res.updates == 1 and res.steps == 0 and res.rooms_visited == 1


def test_single_room_frontier_terminates_quickly():
    world = one_room_world()
    res = run_episode(world, Pose.from_cell(world, 75, 75), EpisodeConfig(strategy="frontier"), ONE_ROOM)
    assert res.status == "done" and res.updates <= 2


def replay_coverage(world, measurements, laser) -> np.ndarray:
    seen = np.zeros(world.shape, bool)
    for r, c in measurements:
        seen |= simulate_scan(world, Pose.from_cell(world, r, c), laser).cells != UNKNOWN
    return seen


@pytest.fixture(scope="module")
def plan():
    fp = generate(5)
    return fp, random_starts(fp, 2, np.random.default_rng(5))


@pytest.mark.parametrize("strategy", ["greedy", "rh", "hybrid"])
def test_plan_all_rooms_visited_with_coverage(plan, strategy):
    fp, starts = plan
    cfg = EpisodeConfig(strategy=strategy)
    res = run_episode(fp.world, starts[0], cfg, fp.annotations, seed=5)
    assert res.status == "done" and res.rooms_visited == fp.n_rooms
    seen = replay_coverage(fp.world, res.measurements, cfg.laser)
    for room in fp.annotations.rooms:
        inner = seen[int(room.y0) + 1:int(room.y1), int(room.x0) + 1:int(room.x1)]
        assert inner.any()


@pytest.mark.parametrize("strategy", ["greedy", "frontier"])
def test_episode_invariants(plan, strategy):
    fp, starts = plan
    res = run_episode(fp.world, starts[1], EpisodeConfig(strategy=strategy), fp.annotations, seed=5)
    traj = res.trajectory
    assert all(fp.world.cells[r, c] != OCCUPIED for r, c in traj)
    moves = sum(max(abs(a[0] - b[0]), abs(a[1] - b[1])) for a, b in zip(traj, traj[1:]))
    assert all(max(abs(a[0] - b[0]), abs(a[1] - b[1])) <= 1 for a, b in zip(traj, traj[1:]))
    assert res.steps == moves
    assert res.updates == len(res.measurements)


def test_episode_deterministic(plan):
    fp, starts = plan
    cfg = EpisodeConfig(strategy="rh")
    a = run_episode(fp.world, starts[0], cfg, fp.annotations, seed=3)
    b = run_episode(fp.world, starts[0], cfg, fp.annotations, seed=3)
    assert a.to_json() == b.to_json()


def test_full_information_visits_everything(plan):
    fp, starts = plan
    cfg = EpisodeConfig(strategy="greedy", rho=0.0)
    res = run_episode(fp.world, starts[0], cfg, fp.annotations)
    assert res.rooms_visited == fp.n_rooms


def test_timeout(plan):
    fp, starts = plan
    res = run_episode(fp.world, starts[0], EpisodeConfig(strategy="frontier", max_updates=2), fp.annotations)
    assert res.status == "timeout" and res.updates == 2
    with pytest.raises(EpisodeTimeout):
        run_episode(fp.world, starts[0], EpisodeConfig(strategy="frontier", max_updates=2,
                                                       raise_on_timeout=True), fp.annotations)


def test_episode_config_validation():
    with pytest.raises(ValueError):
        EpisodeConfig(strategy="random")
    with pytest.raises(ValueError):
        EpisodeConfig(max_updates=0)


def test_dump_frames(tmp_path):
    world = one_room_world()
    run_episode(world, Pose.from_cell(world, 75, 75), EpisodeConfig(dump_frames=str(tmp_path)), ONE_ROOM)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["acc_001.pgm", "graph_001.pgm"]


# --- merge ------------------------------------------------------------------

def test_merge_boxes():
    window = OccupancyGrid(np.zeros((40, 40), np.uint8))
    prev = BoxSet((RoomBox(2, 2, 20, 20), RoomBox(30, 2, 80, 20)), (DoorBox(20, 10, 6, 1.0, (0, 1)),))
    new = BoxSet((RoomBox(2.2, 2, 20, 20), RoomBox(5, 25, 15, 35, 0.1)))
    out = merge_boxes(prev, new, window)
    # the matched room is replaced, the room sticking out of the window is kept with its door
    assert out.rooms == (RoomBox(2.2, 2, 20, 20), RoomBox(30, 2, 80, 20))
    assert [d.rooms for d in out.doors] == [(0, 1)]
    inside = BoxSet((RoomBox(2, 2, 20, 20), RoomBox(22, 22, 30, 30)))
    assert merge_boxes(inside, new, window).rooms == (RoomBox(2.2, 2, 20, 20),)


def test_measured_only_door_evidence(plan):
    fp, starts = plan
    res = run_episode(fp.world, starts[0], EpisodeConfig(strategy="greedy", prior_evidence=False), fp.annotations)
    assert res.status == "done" and res.rooms_visited == fp.n_rooms
