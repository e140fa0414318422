"""Box primitives and their analytic truncated signed distance fields.

Coordinates are continuous world cell coordinates: x runs along columns, y
along rows, and a box edge sits on the centre line of its wall cells.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .gridworld import DEFAULT_RESOLUTION, FREE, OCCUPIED, UNKNOWN, Frame, OccupancyGrid

GATE_THRESHOLD = 0.5


def relu(x):
    return np.maximum(x, 0.0)


@dataclass(frozen=True)
class RoomBox:
    x0: float
    y0: float
    x1: float
    y1: float
    q: float = 1.0

    def __post_init__(self):
        if self.x0 > self.x1 or self.y0 > self.y1:
            raise ValueError(f"degenerate box ({self.x0}, {self.y0})-({self.x1}, {self.y1})")
        if not 0.0 <= self.q <= 1.0:
            raise ValueError(f"gate {self.q} outside [0, 1]")

    @property
    def active(self) -> bool:
        return self.q > GATE_THRESHOLD

    @property
    def centroid(self) -> tuple[float, float]:
        return (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def contains(self, x: float, y: float) -> bool:
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1

    def as_array(self) -> np.ndarray:
        return np.array([self.x0, self.y0, self.x1, self.y1, self.q])


@dataclass(frozen=True)
class DoorBox:
    cx: float
    cy: float
    s: float
    q: float = 1.0
    rooms: tuple[int, int] = (0, 1)

    def __post_init__(self):
        if self.s <= 0:
            raise ValueError("door size must be positive")
        if not 0.0 <= self.q <= 1.0:
            raise ValueError(f"gate {self.q} outside [0, 1]")
        i, j = self.rooms
        if i == j:
            raise ValueError("a door must join two distinct rooms")
        object.__setattr__(self, "rooms", (int(i), int(j)))

    @property
    def active(self) -> bool:
        return self.q > GATE_THRESHOLD

    def as_box(self) -> RoomBox:
        h = self.s / 2
        return RoomBox(self.cx - h, self.cy - h, self.cx + h, self.cy + h, self.q)


@dataclass(frozen=True)
class BoxSet:
    rooms: tuple[RoomBox, ...] = ()
    doors: tuple[DoorBox, ...] = ()
    M: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "rooms", tuple(self.rooms))
        object.__setattr__(self, "doors", tuple(self.doors))
        if self.M is None:
            object.__setattr__(self, "M", len(self.rooms))
        n = len(self.rooms)
        for d in self.doors:
            if not (0 <= d.rooms[0] < n and 0 <= d.rooms[1] < n):
                raise ValueError(f"door references rooms {d.rooms} but only {n} exist")

    def room_array(self) -> np.ndarray:
        if not self.rooms:
            return np.zeros((0, 5))
        return np.array([r.as_array() for r in self.rooms], dtype=np.float64)

    def door_array(self) -> np.ndarray:
        if not self.doors:
            return np.zeros((0, 4))
        return np.array([[d.cx, d.cy, d.s, d.q] for d in self.doors], dtype=np.float64)

    def door_pairs(self) -> np.ndarray:
        if not self.doors:
            return np.zeros((0, 2), dtype=np.int64)
        return np.array([d.rooms for d in self.doors], dtype=np.int64)

    @classmethod
    def from_arrays(cls, rooms: np.ndarray, doors: np.ndarray | None = None,
                    pairs: np.ndarray | None = None, M: int | None = None) -> BoxSet:
        rs = tuple(RoomBox(*map(float, r)) for r in np.asarray(rooms).reshape(-1, 5))
        ds = ()
        if doors is not None and len(doors):
            ds = tuple(
                DoorBox(float(d[0]), float(d[1]), float(d[2]), float(d[3]), (int(p[0]), int(p[1])))
                for d, p in zip(np.asarray(doors).reshape(-1, 4), np.asarray(pairs).reshape(-1, 2))
            )
        return cls(rs, ds, M)

    def active_rooms(self) -> list[int]:
        return [i for i, r in enumerate(self.rooms) if r.active]

    def padded(self, M: int) -> BoxSet:
        """Fill up to M rooms with gated-off placeholders."""
        extra = max(M - len(self.rooms), 0)
        filler = tuple(RoomBox(0.0, 0.0, 0.0, 0.0, 0.0) for _ in range(extra))
        return BoxSet(self.rooms + filler, self.doors, max(M, len(self.rooms)))

    def with_gates(self, room_q=None, door_q=None) -> BoxSet:
        rooms = self.rooms if room_q is None else tuple(replace(r, q=float(q)) for r, q in zip(self.rooms, room_q))
        doors = self.doors if door_q is None else tuple(replace(d, q=float(q)) for d, q in zip(self.doors, door_q))
        return BoxSet(rooms, doors, self.M)

    def to_dict(self) -> dict:
        return {
            "rooms": [{"x0": r.x0, "y0": r.y0, "x1": r.x1, "y1": r.y1, "q": r.q} for r in self.rooms],
            "doors": [{"cx": d.cx, "cy": d.cy, "s": d.s, "q": d.q, "rooms": list(d.rooms)} for d in self.doors],
        }

    @classmethod
    def from_dict(cls, data: dict, M: int | None = None) -> BoxSet:
        rooms = tuple(RoomBox(r["x0"], r["y0"], r["x1"], r["y1"], r.get("q", 1.0)) for r in data.get("rooms", []))
        doors = tuple(
            DoorBox(d["cx"], d["cy"], d["s"], d.get("q", 1.0), tuple(d["rooms"])) for d in data.get("doors", [])
        )
        return cls(rooms, doors, M)

    def to_json(self, compact: bool = True) -> str:
        if compact:
            return json.dumps(_rounded(self.to_dict()), separators=(",", ":"))
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> BoxSet:
        return cls.from_dict(json.loads(text))


def _rounded(obj, nd: int = 3):
    if isinstance(obj, float):
        r = round(obj, nd)
        return int(r) if r == int(r) else r
    if isinstance(obj, dict):
        return {k: _rounded(v, nd) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_rounded(v, nd) for v in obj]
    return obj


# --- analytic TSDFs --------------------------------------------------------

def f1d(x, x0, x1, gamma):
    """Truncated signed distance to the nearer of two walls along one axis."""
    a = relu(x - x0 + gamma) - relu(x - x0 - gamma) - gamma
    b = -relu(x - x1 + gamma) + relu(x - x1 - gamma) + gamma
    return np.minimum(a, b)


def box_tsdf(b: RoomBox, p, gamma: float):
    x, y = p
    return np.minimum(f1d(x, b.x0, b.x1, gamma), f1d(y, b.y0, b.y1, gamma))


def door_diamond(d: DoorBox, p):
    x, y = p
    return relu(d.s / 2 - (np.abs(x - d.cx) + np.abs(y - d.cy)))


def _merge_boxes(boxes: BoxSet, doors: bool) -> list[RoomBox]:
    out = list(boxes.rooms)
    if doors:
        out += [d.as_box() for d in boxes.doors]
    return out


def composite_tsdf(boxes: BoxSet, p, gamma: float, doors: bool = True):
    """max_i q_i (f_i(p) + gamma) - gamma over rooms (and door squares)."""
    members = _merge_boxes(boxes, doors)
    x, y = p
    best = np.full(np.broadcast(np.asarray(x), np.asarray(y)).shape, -float(gamma))
    for b in members:
        best = np.maximum(best, b.q * (box_tsdf(b, (x, y), gamma) + gamma) - gamma)
    return best if best.ndim else float(best)


def stacked_boxes(boxes: BoxSet, doors: bool = True) -> np.ndarray:
    """(K, 5) array: rooms first, then door squares."""
    parts = [boxes.room_array()]
    if doors and boxes.doors:
        d = boxes.door_array()
        h = d[:, 2:3] / 2
        parts.append(np.hstack([d[:, 0:1] - h, d[:, 1:2] - h, d[:, 0:1] + h, d[:, 1:2] + h, d[:, 3:4]]))
    return np.ascontiguousarray(np.vstack(parts)) if parts else np.zeros((0, 5))


def shift_boxes(arr: np.ndarray, frame: Frame) -> np.ndarray:
    out = arr.copy()
    out[:, [0, 2]] -= frame.col0
    out[:, [1, 3]] -= frame.row0
    return out


def composite_field(boxes: BoxSet, shape: tuple[int, int], gamma: float, doors: bool = True,
                    frame: Frame = Frame()) -> np.ndarray:
    """composite_tsdf evaluated at every cell centre of an (h, w) lattice."""
    arr = shift_boxes(stacked_boxes(boxes, doors), frame)
    return kernels.box_field(arr, shape[0], shape[1], float(gamma))[0]


def diamond_field(boxes: BoxSet, shape: tuple[int, int], frame: Frame = Frame(), active_only: bool = False):
    """max_i q_i * diamond_i at every cell centre (0 where no door)."""
    h, w = shape
    out = np.zeros((h, w))
    ys, xs = np.mgrid[0:h, 0:w]
    for d in boxes.doors:
        if active_only and not d.active:
            continue
        cx, cy = frame.xy_to_local(d.cx, d.cy)
        out = np.maximum(out, d.q * relu(d.s / 2 - (np.abs(xs - cx) + np.abs(ys - cy))))
    return out


# --- box relations ---------------------------------------------------------

def _edge_overlap(a0, a1, b0, b1) -> float:
    return min(a1, b1) - max(a0, b0)


def shared_edge(a: RoomBox, b: RoomBox, eps_gap: float = 3.0, min_overlap: float = 4.0):
    """Facing edges of two boxes, as ('x'|'y', wall coordinate, lo, hi), or None.

    'x' means a vertical wall (normal along x) at the given x; lo..hi is the
    shared extent along the wall.
    """
    candidates = []
    oy = _edge_overlap(a.y0, a.y1, b.y0, b.y1)
    ox = _edge_overlap(a.x0, a.x1, b.x0, b.x1)
    for ea, eb in ((a.x1, b.x0), (a.x0, b.x1)):  # E-W, W-E
        if abs(ea - eb) <= eps_gap and oy >= min_overlap:
            candidates.append((abs(ea - eb), "x", 0.5 * (ea + eb), max(a.y0, b.y0), min(a.y1, b.y1)))
    for ea, eb in ((a.y1, b.y0), (a.y0, b.y1)):  # S-N, N-S
        if abs(ea - eb) <= eps_gap and ox >= min_overlap:
            candidates.append((abs(ea - eb), "y", 0.5 * (ea + eb), max(a.x0, b.x0), min(a.x1, b.x1)))
    if not candidates:
        return None
    _, axis, coord, lo, hi = min(candidates, key=lambda c: c[0])
    return axis, coord, lo, hi


def room_adjacency(boxes: BoxSet, eps_gap: float = 3.0, min_overlap: float = 4.0) -> np.ndarray:
    """M x M: rooms i and j have facing N/S or W/E edges that touch and overlap."""
    n = len(boxes.rooms)
    adj = np.zeros((n, n), dtype=bool)
    for i in range(n):
        if not boxes.rooms[i].active:
            continue
        for j in range(i + 1, n):
            if boxes.rooms[j].active and shared_edge(boxes.rooms[i], boxes.rooms[j], eps_gap, min_overlap):
                adj[i, j] = adj[j, i] = True
    return adj


def intersection_area(a: RoomBox, b: RoomBox) -> float:
    return max(0.0, _edge_overlap(a.x0, a.x1, b.x0, b.x1)) * max(0.0, _edge_overlap(a.y0, a.y1, b.y0, b.y1))


def iou(a: RoomBox, b: RoomBox) -> float:
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def overlaps(a: RoomBox, b: RoomBox) -> bool:
    """Positive-area intersection."""
    return _edge_overlap(a.x0, a.x1, b.x0, b.x1) > 0 and _edge_overlap(a.y0, a.y1, b.y0, b.y1) > 0


# --- rasterisation ---------------------------------------------------------

def rasterize(boxes: BoxSet, geometry: OccupancyGrid | tuple[int, int]) -> OccupancyGrid:
    """Active rooms as FREE interiors with OCCUPIED 1-cell walls; active door
    diamonds carve their wall cells FREE; everything else UNKNOWN.

    Box coordinates are snapped to the nearest cell.
    """
    if isinstance(geometry, OccupancyGrid):
        h, w = geometry.shape
        frame = geometry.frame
        res, origin = geometry.resolution, geometry.origin
    else:
        h, w = geometry
        frame, res, origin = Frame(), DEFAULT_RESOLUTION, (0.0, 0.0)
    inside = np.zeros((h, w), dtype=bool)
    wall = np.zeros((h, w), dtype=bool)

    def span(a, b, lim):
        return max(a, 0), min(b, lim)

    for r in boxes.rooms:
        if not r.active:
            continue
        x0 = int(np.rint(r.x0)) - frame.col0
        x1 = int(np.rint(r.x1)) - frame.col0
        y0 = int(np.rint(r.y0)) - frame.row0
        y1 = int(np.rint(r.y1)) - frame.row0
        rs, re = span(y0 + 1, y1, h)
        cs, ce = span(x0 + 1, x1, w)
        if rs < re and cs < ce:
            inside[rs:re, cs:ce] = True
        rs, re = span(y0, y1 + 1, h)
        cs, ce = span(x0, x1 + 1, w)
        for x in (x0, x1):
            if 0 <= x < w and rs < re:
                wall[rs:re, x] = True
        for y in (y0, y1):
            if 0 <= y < h and cs < ce:
                wall[y, cs:ce] = True
    wall &= ~inside
    cells = np.full((h, w), UNKNOWN, dtype=np.uint8)
    cells[wall] = OCCUPIED
    cells[inside] = FREE
    if boxes.doors and wall.any():
        carve = diamond_field(boxes, (h, w), frame, active_only=True) > 0
        cells[carve & wall] = FREE
    return OccupancyGrid(cells, res, origin, frame)
