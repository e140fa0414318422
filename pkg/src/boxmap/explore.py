"""Exploration strategies and the closed scan-predict-plan-move loop.

Strategies: ``greedy`` (nearest unvisited room on the planning graph), ``rh``
(receding horizon: first room of the shortest tour over all unvisited rooms),
``frontier`` (grid frontier baseline) and ``hybrid`` (``rh`` with predictions
fed from the full accumulated grid).
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import kernels
from .boxcalc import BoxSet, DoorBox, RoomBox, iou, rasterize
from .errors import EpisodeTimeout, NoPath, TooManyRooms
from .gridworld import (
    DEFAULT_GAMMA,
    FREE,
    OCCUPIED,
    UNKNOWN,
    LaserConfig,
    OccupancyGrid,
    Pose,
    accumulate,
    crop_local,
    overlay,
    simulate_scan,
    write_pgm,
)
from .predictor import FitterConfig, Predictor, PredictorInput, make_predictor
from .topograph import DEFAULT_ALPHA, NavGraph, TopoGraph, build_nav, build_topo, mark_visited

log = logging.getLogger(__name__)

STRATEGIES = ("greedy", "rh", "frontier", "hybrid")
GRAPH_STRATEGIES = ("greedy", "rh", "hybrid")
MAX_DP_ROOMS = 16


# --- grid planning ----------------------------------------------------------

def astar(grid: OccupancyGrid | np.ndarray, start: tuple[int, int], goal: tuple[int, int]) -> list[tuple[int, int]]:
    """Shortest 8-connected unit-cost path over FREE cells, start and goal included."""
    free = grid.free() if isinstance(grid, OccupancyGrid) else np.asarray(grid, dtype=bool)
    h, w = free.shape
    (sr, sc), (gr, gc) = start, goal
    if not (0 <= sr < h and 0 <= sc < w and free[sr, sc]):
        raise NoPath(f"start {start} is not a free cell")
    if not (0 <= gr < h and 0 <= gc < w and free[gr, gc]):
        raise NoPath(f"goal {goal} is not a free cell")
    path = kernels.astar8(np.ascontiguousarray(free), sr, sc, gr, gc)
    if len(path) == 0:
        raise NoPath(f"no path from {start} to {goal}")
    return [(int(r), int(c)) for r, c in path]


def path_cost(path) -> int:
    return max(len(path) - 1, 0)


# --- graph strategies -------------------------------------------------------

def _room_reps(nav: NavGraph, topo: TopoGraph, dist: dict[str, float]) -> list[str]:
    """One nav node per unvisited room (multi-box groups collapse to the
    member closest to the robot).  Unreachable rooms are dropped."""
    reps = []
    for members in topo.groups().values():
        cand = [nav.room_node(m) for m in members if not topo.nodes[m].visited]
        if not cand:
            continue
        reach = [c for c in cand if c in dist]
        if not reach:
            log.warning("unvisited room %s unreachable on the planning graph", cand)
            continue
        reps.append(min(reach, key=lambda c: (dist[c], c)))
    return reps


def greedy_goal(nav: NavGraph, topo: TopoGraph, source: str = "robot") -> str | None:
    """Unvisited room node nearest to ``source`` by planning-graph distance."""
    dist = nav.dijkstra(source)
    reps = _room_reps(nav, topo, dist)
    if not reps:
        return None
    return min(reps, key=lambda c: (dist[c], nav.nodes[c].ref))


def greedy_order(nav: NavGraph, topo: TopoGraph, source: str = "robot") -> tuple[float, list[str]]:
    """Repeated nearest-neighbour tour; its cost bounds the optimal tour from above."""
    reps = _room_reps(nav, topo, nav.dijkstra(source))
    cost, cur, order, left = 0.0, source, [], set(reps)
    while left:
        d = nav.dijkstra(cur)
        nxt = min(left, key=lambda c: (d.get(c, math.inf), nav.nodes[c].ref))
        cost += d[nxt]
        order.append(nxt)
        left.discard(nxt)
        cur = nxt
    return cost, order


def rh_order(nav: NavGraph, topo: TopoGraph, source: str = "robot") -> tuple[float, list[str]]:
    """Optimal open tour from ``source`` through every reachable unvisited room."""
    reps = sorted(_room_reps(nav, topo, nav.dijkstra(source)), key=lambda c: nav.nodes[c].ref)
    if len(reps) > MAX_DP_ROOMS:
        raise TooManyRooms(f"{len(reps)} unvisited rooms exceed the exact budget of {MAX_DP_ROOMS}")
    if not reps:
        return 0.0, []
    pts = [source] + reps
    n = len(pts)
    d = np.zeros((n, n))
    for i, p in enumerate(pts):
        di = nav.dijkstra(p)
        for j, q in enumerate(pts):
            d[i, j] = di.get(q, math.inf)
    cost, order = kernels.held_karp(np.ascontiguousarray(d))
    return float(cost), [pts[int(k)] for k in order]


def rh_goal(nav: NavGraph, topo: TopoGraph, source: str = "robot") -> str | None:
    _, order = rh_order(nav, topo, source)
    return order[0] if order else None


# --- frontier baseline ------------------------------------------------------

@dataclass(frozen=True)
class FrontierConfig:
    lam: float = 0.02
    sensor_radius: float | None = None  # cells; None uses the laser range
    distance: str = "path"  # or "euclidean"
    min_size: int = 1

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.distance not in ("path", "euclidean"):
            raise ValueError(f"unknown distance {self.distance!r}")


_FOUR = ndimage.generate_binary_structure(2, 1)
_EIGHT = ndimage.generate_binary_structure(2, 2)


def frontier_cells(grid: OccupancyGrid) -> np.ndarray:
    """FREE cells with an UNKNOWN 4-neighbour."""
    unk = grid.unknown()
    near = ndimage.binary_dilation(unk, structure=_FOUR)
    return grid.free() & near


def frontier_candidates(grid: OccupancyGrid, min_size: int = 1) -> list[tuple[int, int]]:
    """Centroid of each 8-connected frontier segment, snapped to a member cell."""
    lab, n = ndimage.label(frontier_cells(grid), structure=_EIGHT)
    out = []
    for k in range(1, n + 1):
        cells = np.argwhere(lab == k)
        if len(cells) < min_size:
            continue
        c = cells.mean(axis=0)
        d = ((cells - c) ** 2).sum(axis=1)
        r, cc = cells[int(np.argmin(d))]
        out.append((int(r), int(cc)))
    return out


def information_gain(grid: OccupancyGrid, cell: tuple[int, int], radius: float) -> int:
    """UNKNOWN cells within ``radius`` of ``cell``."""
    r, c = cell
    k = int(math.floor(radius))
    r0, r1 = max(r - k, 0), min(r + k + 1, grid.height)
    c0, c1 = max(c - k, 0), min(c + k + 1, grid.width)
    ys, xs = np.mgrid[r0:r1, c0:c1]
    disk = (ys - r) ** 2 + (xs - c) ** 2 <= radius * radius
    return int(np.count_nonzero(grid.unknown()[r0:r1, c0:c1] & disk))


def frontier_goal(grid: OccupancyGrid, robot: tuple[int, int], cfg: FrontierConfig,
                  radius: float) -> tuple[int, int] | None:
    """Frontier maximising lam * information - distance, or None when none is reachable."""
    cands = frontier_candidates(grid, cfg.min_size)
    if not cands:
        return None
    bfs = kernels.bfs8(np.ascontiguousarray(grid.free()), robot[0], robot[1])
    best, best_r = None, -math.inf
    for cell in cands:
        d = bfs[cell]
        if d < 0:
            continue  # unreachable under either distance
        if cfg.distance == "euclidean":
            d = math.hypot(cell[0] - robot[0], cell[1] - robot[1])
        if d == 0:
            continue
        reward = cfg.lam * information_gain(grid, cell, radius) - float(d)
        if reward > best_r:
            best, best_r = cell, reward
    return best


# --- episode ----------------------------------------------------------------

@dataclass(frozen=True)
class EpisodeConfig:
    strategy: str = "greedy"
    predictor: str = "oracle"
    rho: float = 0.2
    sigma: float = 0.0
    door_reveal: bool = True
    prior_evidence: bool = True  # rasterised prior counts as door evidence alongside the scan
    alpha: float = DEFAULT_ALPHA
    crop: int = 128
    max_updates: int = 50
    gamma: float = DEFAULT_GAMMA
    laser: LaserConfig = field(default_factory=LaserConfig)
    frontier: FrontierConfig = field(default_factory=FrontierConfig)
    fitter: FitterConfig = field(default_factory=FitterConfig)
    raise_on_timeout: bool = False
    dump_frames: str | None = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.max_updates < 1:
            raise ValueError("max_updates must be at least 1")


@dataclass
class EpisodeResult:
    strategy: str
    seed: int
    status: str  # "done", "timeout"
    steps: int
    updates: int
    rooms_visited: int
    measurements: list[tuple[int, int]]
    trajectory: list[tuple[int, int]]
    final_boxes: BoxSet
    final_topo: TopoGraph
    accumulated: OccupancyGrid = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "seed": self.seed,
            "status": self.status,
            "steps": self.steps,
            "updates": self.updates,
            "rooms_visited": self.rooms_visited,
            "measurements": [list(p) for p in self.measurements],
            "trajectory": [list(p) for p in self.trajectory],
            "final_boxes": self.final_boxes.to_dict(),
            "final_graph": self.final_topo.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))


def merge_boxes(prev: BoxSet, new: BoxSet, window: OccupancyGrid, match_iou: float = 0.5) -> BoxSet:
    """Active boxes of ``new`` plus remembered rooms of ``prev`` that the
    current window cannot judge (not wholly inside it) and that no new box
    already explains."""
    f = window.frame
    xa, xb = f.col0, f.col0 + window.width - 1
    ya, yb = f.row0, f.row0 + window.height - 1
    rooms = [r for r in new.rooms if r.active]
    new_idx = {i: k for k, i in enumerate(i for i, r in enumerate(new.rooms) if r.active)}
    prev_idx = {}
    for i, r in enumerate(prev.rooms):
        inside = xa <= r.x0 and r.x1 <= xb and ya <= r.y0 and r.y1 <= yb
        if not r.active or inside or any(iou(r, s) >= match_iou for s in rooms[:len(new_idx)]):
            continue
        prev_idx[i] = len(rooms)
        rooms.append(r)
    doors = []
    for d in new.doors:
        if d.active and d.rooms[0] in new_idx and d.rooms[1] in new_idx:
            doors.append(DoorBox(d.cx, d.cy, d.s, d.q, (new_idx[d.rooms[0]], new_idx[d.rooms[1]])))
    remap = {}
    for i, r in enumerate(prev.rooms):
        if i in prev_idx:
            remap[i] = prev_idx[i]
        elif r.active:
            match = [k for k, s in enumerate(rooms[:len(new_idx)]) if iou(r, s) >= match_iou]
            if match:
                remap[i] = match[0]
    for d in prev.doors:
        a, b = remap.get(d.rooms[0]), remap.get(d.rooms[1])
        if not d.active or a is None or b is None or a == b:
            continue
        if any(abs(d.cx - e.cx) <= 2 and abs(d.cy - e.cy) <= 2 for e in doors):
            continue
        doors.append(DoorBox(d.cx, d.cy, d.s, d.q, (a, b)))
    return BoxSet(tuple(rooms), tuple(doors))


def topo_boxes(topo: TopoGraph) -> BoxSet:
    """The rooms and validated doors of a graph as a BoxSet."""
    index = {n.id: k for k, n in enumerate(topo.nodes)}
    doors = tuple(DoorBox(e.door.cx, e.door.cy, e.door.s, 1.0, (index[e.a], index[e.b])) for e in topo.door_edges())
    return BoxSet(tuple(RoomBox(n.box.x0, n.box.y0, n.box.x1, n.box.y1, 1.0) for n in topo.nodes), doors)


class Episode:
    """Mutable state of one exploration run."""

    def __init__(self, world: OccupancyGrid, start: Pose, cfg: EpisodeConfig, annotations: BoxSet | None = None,
                 seed: int = 0, predictor: Predictor | None = None):
        self.world = world
        self.cfg = cfg
        self.seed = seed
        self.annotations = annotations
        self.pose = start
        if predictor is None and cfg.strategy in GRAPH_STRATEGIES:
            kw = {"rho": cfg.rho, "sigma": cfg.sigma, "seed": seed, "door_reveal": cfg.door_reveal} if cfg.predictor == "oracle" else {
                "cfg": cfg.fitter, "gamma": cfg.gamma}
            predictor = make_predictor(cfg.predictor, annotations, **kw)
        self.predictor = predictor
        self.acc = OccupancyGrid.filled(world.height, world.width, resolution=world.resolution, origin=world.origin)
        self.laser = self.acc
        self.boxes = BoxSet()
        self.topo = TopoGraph()
        self.nav: NavGraph | None = None
        self.steps = 0
        self.updates = 0
        self.measurements: list[Pose] = []
        self.trajectory: list[tuple[int, int]] = [start.cell]
        self.failures = 0
        self.radius = cfg.frontier.sensor_radius or cfg.laser.range_max / world.resolution

    # sensing and prediction
    def scan(self) -> None:
        self.laser = simulate_scan(self.world, self.pose, self.cfg.laser)
        self.acc = accumulate(self.acc, self.laser)
        self.measurements.append(self.pose)
        self.updates += 1

    def prior_raster(self) -> OccupancyGrid:
        if self.cfg.strategy == "hybrid":
            return self.acc
        return rasterize(topo_boxes(self.topo), self.world)

    def update_graph(self) -> None:
        prior = self.prior_raster()
        window = crop_local(self.laser, self.pose, self.cfg.crop)
        inp = PredictorInput(crop_local(prior, self.pose, self.cfg.crop), window)
        pred = self.predictor.predict(inp)
        self.boxes = merge_boxes(self.boxes, pred, window)
        if self.cfg.strategy == "hybrid" or not self.cfg.prior_evidence:
            evidence = self.acc
        else:
            evidence = overlay(prior, self.laser)
        topo = build_topo(self.boxes, evidence)
        self.topo = mark_visited(topo, self.measurements)
        self.nav = build_nav(self.topo, self.pose, self.cfg.alpha, fallback=True) if self.topo.nodes else None

    # goals
    def plan_grid(self) -> np.ndarray:
        free = self.acc.free()
        if self.cfg.strategy in GRAPH_STRATEGIES and self.boxes.rooms:
            pred = rasterize(self.boxes, self.world).free()
            free = free | (self.acc.unknown() & pred)
        return free

    def room_goal_cells(self) -> list[tuple[int, int]]:
        """Goal cells of candidate rooms, most preferred first."""
        if self.nav is None:
            return []
        if self.cfg.strategy == "greedy":
            dist = self.nav.dijkstra("robot")
            reps = sorted(_room_reps(self.nav, self.topo, dist), key=lambda c: (dist[c], self.nav.nodes[c].ref))
        else:
            _, reps = rh_order(self.nav, self.topo)
        free = self.plan_grid()
        out = []
        for c in reps:
            node = self.topo.nodes[self.nav.nodes[c].ref]
            cell = _snap(self.nav.nodes[c].pos, node.box, free)
            if cell is not None:
                out.append(cell)
        return out

    def frontier_goal(self) -> tuple[int, int] | None:
        return frontier_goal(self.acc, self.pose.cell, self.cfg.frontier, self.radius)

    # motion
    def move_to(self, goal: tuple[int, int], free: np.ndarray) -> None:
        path = astar(free, self.pose.cell, goal)
        cur = path[0]
        for cell in path[1:]:
            if self.world.cells[cell] == OCCUPIED:
                break  # bump: the plan crossed an unseen wall
            cur = cell
            self.trajectory.append(cell)
            self.steps += 1
        self.pose = Pose.from_cell(self.world, *cur)

    def graph_step(self) -> bool:
        """One move for the graph strategies; False when exploration is over."""
        goals = self.room_goal_cells()
        free = self.plan_grid()
        for goal in goals[:2]:
            try:
                self.move_to(goal, free)
                self.failures = 0
                return True
            except NoPath:
                self.failures += 1
        if not goals and not self.topo.unvisited():
            return False
        # unvisited rooms are off the graph or unreachable: explore the grid instead
        goal = self.frontier_goal()
        if goal is None:
            return False
        self.move_to(goal, self.acc.free())
        return True

    def frontier_step(self) -> bool:
        goal = self.frontier_goal()
        if goal is None:
            return False
        self.move_to(goal, self.acc.free())
        return True

    def dump(self, k: int) -> None:
        out = Path(self.cfg.dump_frames)
        out.mkdir(parents=True, exist_ok=True)
        write_pgm(out / f"acc_{k:03d}.pgm", self.acc)
        if self.cfg.strategy in GRAPH_STRATEGIES:
            write_pgm(out / f"graph_{k:03d}.pgm", rasterize(self.boxes, self.world))

    def run(self) -> EpisodeResult:
        status = "done"
        self.scan()
        while True:
            if self.cfg.strategy in GRAPH_STRATEGIES:
                self.update_graph()
            if self.cfg.dump_frames:
                self.dump(self.updates)
            if self.updates >= self.cfg.max_updates:
                status = "timeout"
                break
            moved = self.graph_step() if self.cfg.strategy in GRAPH_STRATEGIES else self.frontier_step()
            if not moved:
                break
            self.scan()
        if status == "timeout" and self.cfg.raise_on_timeout:
            raise EpisodeTimeout(f"episode exceeded {self.cfg.max_updates} updates")
        visited = len({n.group for n in self.topo.nodes if n.visited})
        return EpisodeResult(
            self.cfg.strategy, self.seed, status, self.steps, self.updates, visited,
            [p.cell for p in self.measurements], list(self.trajectory), self.boxes, self.topo, self.acc,
        )


def _snap(pos, box: RoomBox, free: np.ndarray) -> tuple[int, int] | None:
    """Plannable cell nearest to ``pos`` inside ``box``."""
    r, c = int(round(pos[1])), int(round(pos[0]))
    h, w = free.shape
    if 0 <= r < h and 0 <= c < w and free[r, c]:
        return r, c
    r0, r1 = max(int(math.ceil(box.y0)), 0), min(int(math.floor(box.y1)), h - 1)
    c0, c1 = max(int(math.ceil(box.x0)), 0), min(int(math.floor(box.x1)), w - 1)
    if r0 > r1 or c0 > c1:
        return None
    cells = np.argwhere(free[r0:r1 + 1, c0:c1 + 1])
    if len(cells) == 0:
        return None
    cells += (r0, c0)
    d = (cells[:, 0] - pos[1]) ** 2 + (cells[:, 1] - pos[0]) ** 2
    k = int(np.argmin(d))
    return int(cells[k, 0]), int(cells[k, 1])


def step_greedy(ep: Episode) -> str | None:
    return greedy_goal(ep.nav, ep.topo) if ep.nav is not None else None


def step_rh(ep: Episode) -> str | None:
    return rh_goal(ep.nav, ep.topo) if ep.nav is not None else None


def frontier_baseline_step(ep: Episode, cfg: FrontierConfig | None = None) -> tuple[int, int] | None:
    return frontier_goal(ep.acc, ep.pose.cell, cfg or ep.cfg.frontier, ep.radius)


def run_episode(world: OccupancyGrid, start: Pose, cfg: EpisodeConfig, annotations: BoxSet | None = None,
                seed: int = 0, predictor: Predictor | None = None) -> EpisodeResult:
    return Episode(world, start, cfg, annotations, seed, predictor).run()
