"""Topological room graph from a BoxSet, and the planning graph derived from it."""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .boxcalc import BoxSet, DoorBox, RoomBox, overlaps, shared_edge
from .errors import RobotOutsideGraph
from .gridworld import FREE, OccupancyGrid, Pose

DEFAULT_ALPHA = 0.5
DOOR_MARGIN = 2  # cells beyond the door half-size for sample points and BFS region


@dataclass(frozen=True)
class RoomNode:
    id: int
    box: RoomBox
    box_index: int  # position in the source BoxSet
    group: int
    visited: bool = False


@dataclass(frozen=True)
class TopoEdge:
    a: int
    b: int
    kind: str  # "overlap" or "door"
    door: DoorBox | None = None
    door_index: int | None = None


@dataclass(frozen=True)
class TopoGraph:
    nodes: tuple[RoomNode, ...] = ()
    edges: tuple[TopoEdge, ...] = ()

    def node_of_box(self, box_index: int) -> int | None:
        for n in self.nodes:
            if n.box_index == box_index:
                return n.id
        return None

    def door_edges(self) -> list[TopoEdge]:
        return [e for e in self.edges if e.kind == "door"]

    def overlap_edges(self) -> list[TopoEdge]:
        return [e for e in self.edges if e.kind == "overlap"]

    def groups(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for n in self.nodes:
            out.setdefault(n.group, []).append(n.id)
        return out

    def unvisited(self) -> list[int]:
        return [n.id for n in self.nodes if not n.visited]

    def to_dict(self) -> dict:
        return {
            "nodes": [
                {"id": n.id, "kind": "room", "box": [n.box.x0, n.box.y0, n.box.x1, n.box.y1],
                 "group": n.group, "visited": n.visited}
                for n in self.nodes
            ],
            "edges": [
                {"a": e.a, "b": e.b, "kind": e.kind,
                 **({"door": [e.door.cx, e.door.cy, e.door.s]} if e.door is not None else {})}
                for e in self.edges
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))


def _components(n: int, pairs) -> list[int]:
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a, b in pairs:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    roots = [find(i) for i in range(n)]
    relabel: dict[int, int] = {}
    return [relabel.setdefault(r, len(relabel)) for r in roots]


def door_normal(door: DoorBox, a: RoomBox, b: RoomBox) -> tuple[float, float]:
    """Unit normal of the wall the door sits in."""
    edge = shared_edge(a, b)
    if edge is not None:
        return (1.0, 0.0) if edge[0] == "x" else (0.0, 1.0)
    # no facing edge: use whichever box edge the door centre lies closest to
    dx = min(min(abs(door.cx - r.x0), abs(door.cx - r.x1)) for r in (a, b))
    dy = min(min(abs(door.cy - r.y0), abs(door.cy - r.y1)) for r in (a, b))
    return (1.0, 0.0) if dx <= dy else (0.0, 1.0)


def door_traversable(door: DoorBox, a: RoomBox, b: RoomBox, grid: OccupancyGrid,
                     margin: int = DOOR_MARGIN) -> bool:
    """Cells on both sides of the door are FREE and joined by FREE cells inside
    the door square grown by ``margin``."""
    nx, ny = door_normal(door, a, b)
    off = door.s / 2 + margin
    f = grid.frame
    pts = []
    for sgn in (-1.0, 1.0):
        c = int(np.rint(door.cx + sgn * off * nx)) - f.col0
        r = int(np.rint(door.cy + sgn * off * ny)) - f.row0
        if not grid.in_bounds(r, c) or grid.cells[r, c] != FREE:
            return False
        pts.append((r, c))
    half = off
    r0 = max(int(math.floor(door.cy - half)) - f.row0, 0)
    r1 = min(int(math.ceil(door.cy + half)) - f.row0, grid.height - 1)
    c0 = max(int(math.floor(door.cx - half)) - f.col0, 0)
    c1 = min(int(math.ceil(door.cx + half)) - f.col0, grid.width - 1)
    region = grid.cells[r0:r1 + 1, c0:c1 + 1] == FREE
    lab, _ = ndimage.label(region)
    (ra, ca), (rb, cb) = pts
    la, lb = lab[ra - r0, ca - c0], lab[rb - r0, cb - c0]
    return bool(la != 0 and la == lb)


def door_gap_seen(door: DoorBox, a: RoomBox, b: RoomBox, grid: OccupancyGrid) -> bool:
    """Some cell of the doorway (in the wall line) is observed FREE."""
    nx, ny = door_normal(door, a, b)
    f = grid.frame
    half = door.s / 2
    k = int(math.ceil(half)) - 1
    for t in range(-k, k + 1):
        if abs(t) >= half:
            continue
        c = int(np.rint(door.cx + t * ny)) - f.col0
        r = int(np.rint(door.cy + t * nx)) - f.row0
        if grid.in_bounds(r, c) and grid.cells[r, c] == FREE:
            return True
    return False


def build_topo(boxes: BoxSet, accumulated: OccupancyGrid, margin: int = DOOR_MARGIN,
               visited: set[int] | None = None) -> TopoGraph:
    """Room nodes for active boxes (row-major by top-left), overlap edges for
    multi-box rooms and door edges for doors that pass the traversability check.

    ``visited`` holds box indices to carry over as visited.
    """
    active = [i for i, r in enumerate(boxes.rooms) if r.active]
    order = sorted(active, key=lambda i: (boxes.rooms[i].y0, boxes.rooms[i].x0,
                                          boxes.rooms[i].y1, boxes.rooms[i].x1, i))
    node_of = {bi: k for k, bi in enumerate(order)}
    overlap_pairs = []
    for ka in range(len(order)):
        for kb in range(ka + 1, len(order)):
            if overlaps(boxes.rooms[order[ka]], boxes.rooms[order[kb]]):
                overlap_pairs.append((ka, kb))
    group = _components(len(order), overlap_pairs)
    visited = visited or set()
    nodes = [RoomNode(k, boxes.rooms[bi], bi, group[k], bi in visited) for k, bi in enumerate(order)]
    edges = [TopoEdge(a, b, "overlap") for a, b in overlap_pairs]
    for di, d in enumerate(boxes.doors):
        i, j = d.rooms
        if not d.active or i not in node_of or j not in node_of:
            continue
        a, b = node_of[i], node_of[j]
        if group[a] == group[b]:
            continue
        if door_traversable(d, boxes.rooms[i], boxes.rooms[j], accumulated, margin):
            edges.append(TopoEdge(min(a, b), max(a, b), "door", d, di))
    return _propagate(TopoGraph(tuple(nodes), tuple(edges)))


def _propagate(topo: TopoGraph) -> TopoGraph:
    hit = {n.group for n in topo.nodes if n.visited}
    return replace(topo, nodes=tuple(replace(n, visited=n.group in hit) for n in topo.nodes))


def pose_xy(pose: Pose) -> tuple[float, float]:
    """Continuous cell coordinates (x=col, y=row) of a pose."""
    return float(pose.cell[1]), float(pose.cell[0])


def mark_visited(topo: TopoGraph, poses) -> TopoGraph:
    """A room is visited once a measurement pose lies in one of its group's boxes."""
    pts = [pose_xy(p) for p in poses]
    nodes = tuple(replace(n, visited=n.visited or any(n.box.contains(x, y) for x, y in pts)) for n in topo.nodes)
    return _propagate(replace(topo, nodes=nodes))


# --- planning graph ---------------------------------------------------------

@dataclass
class NavNode:
    id: str
    kind: str  # "room", "door" or "robot"
    pos: tuple[float, float]
    ref: int | None = None  # topo node id for rooms, door index for doors


@dataclass
class NavGraph:
    nodes: dict[str, NavNode] = field(default_factory=dict)
    adj: dict[str, dict[str, float]] = field(default_factory=dict)

    def add_node(self, node: NavNode) -> None:
        self.nodes[node.id] = node
        self.adj.setdefault(node.id, {})

    def add_edge(self, a: str, b: str) -> None:
        if a == b:
            return
        pa, pb = self.nodes[a].pos, self.nodes[b].pos
        w = max(math.hypot(pa[0] - pb[0], pa[1] - pb[1]), 1e-9)
        self.adj[a][b] = w
        self.adj[b][a] = w

    def room_node(self, topo_id: int) -> str:
        return f"r{topo_id}"

    def dijkstra(self, src: str) -> dict[str, float]:
        dist = {src: 0.0}
        heap = [(0.0, src)]
        done = set()
        while heap:
            d, u = heapq.heappop(heap)
            if u in done:
                continue
            done.add(u)
            for v in sorted(self.adj[u]):
                nd = d + self.adj[u][v]
                if nd < dist.get(v, math.inf):
                    dist[v] = nd
                    heapq.heappush(heap, (nd, v))
        return dist

    def edges(self) -> list[tuple[str, str, float]]:
        return [(a, b, w) for a in sorted(self.adj) for b, w in sorted(self.adj[a].items()) if a < b]

    def to_dict(self) -> dict:
        return {
            "nodes": [{"id": n.id, "kind": n.kind, "pos": list(n.pos)} for n in self.nodes.values()],
            "edges": [{"a": a, "b": b, "weight": w} for a, b, w in self.edges()],
        }


def _door_id(e: TopoEdge) -> str:
    return f"d{e.door_index}"


def build_nav(topo: TopoGraph, robot: Pose, alpha: float = DEFAULT_ALPHA, fallback: bool = False) -> NavGraph:
    """Planning graph: rooms, one node per validated door, door-door links
    inside a room, and a robot node.

    Each room sits between its centroid and the associated door closest to
    the robot, at fraction ``alpha``.  The robot links to the boxes that
    contain it, the rest of their multi-box group and their doors.  Without a
    containing box it raises RobotOutsideGraph, or with ``fallback`` links to
    the nearest node.
    """
    rx, ry = pose_xy(robot)
    nav = NavGraph()
    doors_of: dict[int, list[TopoEdge]] = {n.id: [] for n in topo.nodes}
    for e in topo.door_edges():
        doors_of[e.a].append(e)
        doors_of[e.b].append(e)
    for n in topo.nodes:
        cx, cy = n.box.centroid
        ds = doors_of[n.id]
        if ds:
            near = min(ds, key=lambda e: (math.hypot(e.door.cx - rx, e.door.cy - ry), e.door_index))
            cx += alpha * (near.door.cx - cx)
            cy += alpha * (near.door.cy - cy)
        nav.add_node(NavNode(nav.room_node(n.id), "room", (cx, cy), n.id))
    for e in topo.door_edges():
        nav.add_node(NavNode(_door_id(e), "door", (e.door.cx, e.door.cy), e.door_index))
        nav.add_edge(_door_id(e), nav.room_node(e.a))
        nav.add_edge(_door_id(e), nav.room_node(e.b))
    for e in topo.overlap_edges():
        nav.add_edge(nav.room_node(e.a), nav.room_node(e.b))
    # doors of the same room (a multi-box group counts as one room)
    groups = topo.groups()
    for members in groups.values():
        ids = sorted({_door_id(e) for m in members for e in doors_of[m]})
        for i in range(len(ids)):
            for j in range(i + 1, len(ids)):
                nav.add_edge(ids[i], ids[j])
    nav.add_node(NavNode("robot", "robot", (rx, ry)))
    inside = [n for n in topo.nodes if n.box.contains(rx, ry)]
    if inside:
        links: set[str] = set()
        for n in inside:
            for m in groups[n.group]:
                links.add(nav.room_node(m))
                links.update(_door_id(e) for e in doors_of[m])
        for v in sorted(links):
            nav.add_edge("robot", v)
    elif fallback and len(nav.nodes) > 1:
        others = [n for n in nav.nodes.values() if n.id != "robot"]
        near = min(others, key=lambda n: (math.hypot(n.pos[0] - rx, n.pos[1] - ry), n.id))
        nav.add_edge("robot", near.id)
    else:
        raise RobotOutsideGraph(f"robot at ({rx}, {ry}) lies in no active room box")
    return nav
