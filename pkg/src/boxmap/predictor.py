"""Box predictors: an annotation oracle and a loss-minimising fitter.

Both map a robot-centred PredictorInput to a BoxSet in world coordinates.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from typing import Protocol

import numpy as np
from scipy import ndimage

from .boxcalc import GATE_THRESHOLD, BoxSet, DoorBox, RoomBox
from .errors import Diverged, MissingAnnotations
from .gridworld import UNKNOWN, OccupancyGrid, TsdfGrid, chamfer_tsdf, overlay
from .losses import WALL_BAND, BoxParams, door_target, loss_total
from .topograph import door_gap_seen

DEFAULT_M = 6


@dataclass(frozen=True)
class PredictorInput:
    prev_topo_raster: OccupancyGrid
    laser_local: OccupancyGrid

    def __post_init__(self):
        if not self.prev_topo_raster.same_geometry(self.laser_local):
            raise ValueError("prior raster and scan must share geometry")

    @property
    def frame(self):
        return self.laser_local.frame

    def observed(self) -> OccupancyGrid:
        # a fresh measurement outranks the rasterised prediction
        return overlay(self.prev_topo_raster, self.laser_local)


class Predictor(Protocol):
    def predict(self, inp: PredictorInput) -> BoxSet: ...


# --- oracle -----------------------------------------------------------------

def visible_fraction(box: RoomBox, observed: OccupancyGrid) -> float:
    """Share of the box's cells (walls included) that are known in ``observed``."""
    f = observed.frame
    x0, x1 = int(np.rint(box.x0)) - f.col0, int(np.rint(box.x1)) - f.col0
    y0, y1 = int(np.rint(box.y0)) - f.row0, int(np.rint(box.y1)) - f.row0
    total = (x1 - x0 + 1) * (y1 - y0 + 1)
    rs, re = max(y0, 0), min(y1 + 1, observed.height)
    cs, ce = max(x0, 0), min(x1 + 1, observed.width)
    if total <= 0 or rs >= re or cs >= ce:
        return 0.0
    known = np.count_nonzero(observed.cells[rs:re, cs:ce] != UNKNOWN)
    return known / total


def oracle_predict(truth_boxes: BoxSet | None, observed: OccupancyGrid, rho: float = 0.2,
                   sigma: float = 0.0, rng: np.random.Generator | None = None,
                   door_reveal: bool = False) -> BoxSet:
    """Annotated boxes gated by how much of each room has been seen.

    Rooms at least ``rho`` visible keep q=1, the rest get q=0.  With
    ``door_reveal`` a room also counts as seen when the doorway joining it
    to a seen room is observed open.  A door is kept when both of
    its rooms are.  ``sigma`` adds uniform coordinate noise to the kept boxes.
    """
    if truth_boxes is None or not truth_boxes.rooms:
        raise MissingAnnotations("world has no box annotations")
    seen = [visible_fraction(r, observed) >= rho for r in truth_boxes.rooms]
    while door_reveal:
        grown = False
        for d in truth_boxes.doors:
            i, j = d.rooms
            if seen[i] != seen[j]:
                a, b = truth_boxes.rooms[i], truth_boxes.rooms[j]
                if door_gap_seen(d, a, b, observed):
                    seen[i] = seen[j] = grown = True
        if not grown:
            break
    rooms = []
    for r, ok in zip(truth_boxes.rooms, seen):
        if ok and sigma > 0:
            rng = rng or np.random.default_rng(0)
            x0, y0, x1, y1 = np.array([r.x0, r.y0, r.x1, r.y1]) + rng.uniform(-sigma, sigma, 4)
            r = RoomBox(min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1), 1.0)
        rooms.append(replace(r, q=1.0 if ok else 0.0))
    doors = [replace(d, q=1.0 if seen[d.rooms[0]] and seen[d.rooms[1]] else 0.0) for d in truth_boxes.doors]
    return BoxSet(tuple(rooms), tuple(doors), truth_boxes.M)


@dataclass
class OraclePredictor:
    truth_boxes: BoxSet | None
    rho: float = 0.2
    sigma: float = 0.0
    seed: int = 0
    door_reveal: bool = False

    def __post_init__(self):
        self._rng = np.random.default_rng(self.seed)

    def predict(self, inp: PredictorInput) -> BoxSet:
        return oracle_predict(self.truth_boxes, inp.observed(), self.rho, self.sigma, self._rng, self.door_reveal)


# --- fitter -----------------------------------------------------------------

@dataclass(frozen=True)
class FitterConfig:
    step_size: float = 0.5
    decay: float = 0.5
    decay_every: int = 200
    max_iters: int = 2000
    door_iters: int = 600
    restarts: int = 1
    jitter: float = 2.0
    init: str = "components"  # or "given"
    tol: float = 1e-10
    patience: int = 600
    M: int = DEFAULT_M
    interior_level: float = 4.0  # truth level whose components seed room boxes
    min_component: int = 4
    gate_step_ratio: float = 0.1
    wall_band: float = WALL_BAND
    seed: int = 0
    trace_every: int = 10

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        if self.init not in ("components", "given"):
            raise ValueError(f"unknown init strategy {self.init!r}")


@dataclass
class FitResult:
    boxes: BoxSet
    report: object  # LossReport of the returned boxes
    trace: list[dict] = field(default_factory=list)

    def dump_trace(self, path: str | os.PathLike) -> None:
        with open(path, "w") as fh:
            for rec in self.trace:
                fh.write(json.dumps(rec) + "\n")


def _largest_rectangle(mask: np.ndarray):
    """Largest all-True axis-aligned rectangle as (r0, c0, r1, c1) inclusive."""
    h, w = mask.shape
    heights = np.zeros(w, dtype=np.int64)
    best = (0, None)
    for r in range(h):
        heights = np.where(mask[r], heights + 1, 0)
        stack: list[int] = []
        for c in range(w + 1):
            cur = heights[c] if c < w else 0
            start = c
            while stack and heights[stack[-1]] >= cur:
                top = stack.pop()
                left = stack[-1] + 1 if stack else 0
                area = heights[top] * (c - left)
                if area > best[0]:
                    best = (area, (r - heights[top] + 1, left, r, c - 1))
                start = left
            stack.append(c)
    return best[1]


def init_rooms(truth: TsdfGrid, cfg: FitterConfig) -> np.ndarray:
    """Seed boxes from deep-interior components of the truth.

    Each component of {truth >= level} is covered greedily by its largest
    rectangles; every rectangle grows by ``level`` cells to reach the walls.
    Slots beyond those found are gated-off placeholders.
    """
    level = cfg.interior_level
    lab, n = ndimage.label(truth.values >= level)
    rects = []
    for k in range(1, n + 1):
        comp = lab == k
        if comp.sum() < cfg.min_component:
            continue
        remaining = comp.copy()
        while remaining.sum() >= cfg.min_component:
            rect = _largest_rectangle(remaining)
            if rect is None:
                break
            r0, c0, r1, c1 = rect
            if (r1 - r0 + 1) * (c1 - c0 + 1) < cfg.min_component:
                break
            rects.append((comp.sum(), (r1 - r0 + 1) * (c1 - c0 + 1), rect))
            remaining[r0:r1 + 1, c0:c1 + 1] = False
            if remaining.sum() < 0.15 * comp.sum():
                break
    rects.sort(key=lambda t: (-t[1], t[2]))
    f = truth.frame
    out = np.zeros((cfg.M, 5))
    for i, (_, _, (r0, c0, r1, c1)) in enumerate(rects[:cfg.M]):
        out[i] = [c0 - level + f.col0, r0 - level + f.row0, c1 + level + f.col0, r1 + level + f.row0, 1.0]
    return out


def init_doors(truth: TsdfGrid, rooms: np.ndarray, cfg: FitterConfig):
    """Door seeds from blobs of the rooms-only residual on the wall band."""
    p = BoxParams(rooms, np.zeros((0, 4)), np.zeros((0, 2), dtype=np.int64), cfg.M)
    target, mask, _, _ = door_target(p, truth, cfg.wall_band)
    lab, n = ndimage.label((target > 0.5) & mask)
    doors, pairs = [], []
    f = truth.frame
    active = [i for i in range(len(rooms)) if rooms[i, 4] > GATE_THRESHOLD]
    for k in range(1, n + 1):
        cells = np.argwhere(lab == k)
        if len(cells) < 2:
            continue
        vals = target[cells[:, 0], cells[:, 1]]
        pk = cells[np.argmax(vals)]
        cy, cx = float(pk[0] + f.row0), float(pk[1] + f.col0)
        s = float(np.clip(2.0 * vals.max(), 2.0, 2.0 * truth.gamma))
        pair = _nearest_rooms(rooms, active, cx, cy)
        if pair is None:
            continue
        doors.append([cx, cy, s, 1.0])
        pairs.append(pair)
        if len(doors) >= 2 * cfg.M:
            break
    return np.array(doors).reshape(-1, 4), np.array(pairs, dtype=np.int64).reshape(-1, 2)


def _nearest_rooms(rooms, active, x, y):
    if len(active) < 2:
        return None
    d = []
    for i in active:
        x0, y0, x1, y1 = rooms[i, :4]
        dx = max(x0 - x, 0.0, x - x1)
        dy = max(y0 - y, 0.0, y - y1)
        edge = min(abs(x - x0), abs(x - x1), abs(y - y0), abs(y - y1))
        d.append((np.hypot(dx, dy) + edge, i))
    d.sort()
    return sorted((d[0][1], d[1][1]))


def _project(p: BoxParams, truth: TsdfGrid) -> None:
    f = truth.frame
    xmin, xmax = f.col0, f.col0 + truth.width - 1
    ymin, ymax = f.row0, f.row0 + truth.height - 1
    r = p.rooms
    r[:, [0, 2]] = np.clip(r[:, [0, 2]], xmin, xmax)
    r[:, [1, 3]] = np.clip(r[:, [1, 3]], ymin, ymax)
    for a, b in ((0, 2), (1, 3)):
        bad = r[:, a] > r[:, b]
        mid = 0.5 * (r[bad, a] + r[bad, b])
        r[bad, a] = mid
        r[bad, b] = mid
    r[:, 4] = np.clip(r[:, 4], 0.0, 1.0)
    d = p.doors
    if len(d):
        d[:, 0] = np.clip(d[:, 0], xmin, xmax)
        d[:, 1] = np.clip(d[:, 1], ymin, ymax)
        d[:, 2] = np.clip(d[:, 2], 1.0, 2.0 * truth.gamma)
        d[:, 3] = np.clip(d[:, 3], 0.0, 1.0)


def _normalised(g: np.ndarray) -> np.ndarray:
    m = np.max(np.abs(g)) if g.size else 0.0
    return g / m if m > 0 else g


def _descend(p: BoxParams, truth: TsdfGrid, cfg: FitterConfig, phase: str, iters: int,
             terms, freeze_rooms: bool, trace: list, restart: int):
    """Projected normalised subgradient descent; returns the best iterate."""
    best = p.copy()
    best_loss = np.inf
    since = 0
    for it in range(iters):
        rep = loss_total(p, truth, terms=terms, wall_band=cfg.wall_band)
        if not np.isfinite(rep.total) or not rep.grad.is_finite():
            raise Diverged(f"non-finite loss at {phase} iteration {it}")
        if rep.total < best_loss - cfg.tol:
            best_loss, best, since = rep.total, p.copy(), 0
        else:
            since += 1
        if it % cfg.trace_every == 0 or it == iters - 1:
            trace.append({"restart": restart, "phase": phase, "iter": it, "loss": rep.total,
                          "best": best_loss, **{k: v for k, v in rep.to_dict().items() if k != "total"}})
        if since >= cfg.patience:
            break
        step = cfg.step_size * cfg.decay ** (it // cfg.decay_every)
        if not freeze_rooms:
            p.rooms[:, :4] -= step * _normalised(rep.grad.rooms[:, :4])
            p.rooms[:, 4] -= step * cfg.gate_step_ratio * _normalised(rep.grad.rooms[:, 4])
        if len(p.doors):
            p.doors[:, :3] -= step * _normalised(rep.grad.doors[:, :3])
            p.doors[:, 3] -= step * cfg.gate_step_ratio * _normalised(rep.grad.doors[:, 3])
        _project(p, truth)
    return best, best_loss


ROOM_TERMS = ("tsdf", "tsdf_W", "iou", "gate")
DOOR_TERMS = ("tsdf", "tsdf_W", "door")


def fit_boxes(truth: TsdfGrid, cfg: FitterConfig | None = None, init: BoxSet | None = None) -> FitResult:
    """Fit room boxes, then doors with rooms frozen; best of ``cfg.restarts``."""
    cfg = cfg or FitterConfig()
    rng = np.random.default_rng(cfg.seed)
    if init is not None:
        base = BoxParams.of(init.padded(cfg.M) if len(init.rooms) < cfg.M else init).copy()
        given_doors = len(base.doors) > 0
    else:
        rooms = init_rooms(truth, cfg)
        base = BoxParams(rooms, np.zeros((0, 4)), np.zeros((0, 2), dtype=np.int64), cfg.M)
        given_doors = False
    trace: list[dict] = []
    best_p, best_total = None, np.inf
    for k in range(cfg.restarts):
        p = base.copy()
        if k > 0:
            live = p.rooms[:, 4] > 0
            p.rooms[live, :4] += rng.uniform(-cfg.jitter, cfg.jitter, (int(live.sum()), 4))
            _project(p, truth)
        doors, pairs = p.doors, p.pairs
        rooms_only = BoxParams(p.rooms, np.zeros((0, 4)), np.zeros((0, 2), dtype=np.int64), cfg.M)
        fitted, _ = _descend(rooms_only, truth, cfg, "rooms", cfg.max_iters, ROOM_TERMS, False, trace, k)
        if not given_doors:
            doors, pairs = init_doors(truth, fitted.rooms, cfg)
        full = BoxParams(fitted.rooms, doors.copy(), pairs, cfg.M)
        if len(full.doors) and cfg.door_iters > 0:
            full, _ = _descend(full, truth, cfg, "doors", cfg.door_iters, DOOR_TERMS, True, trace, k)
        total = loss_total(full, truth, wall_band=cfg.wall_band).total
        if total < best_total:
            best_p, best_total = full, total
    final = loss_total(best_p, truth, wall_band=cfg.wall_band)
    return FitResult(best_p.to_boxset(), final, trace)


@dataclass
class FitterPredictor:
    cfg: FitterConfig = field(default_factory=FitterConfig)
    gamma: float = 10.0

    def predict(self, inp: PredictorInput) -> BoxSet:
        observed = inp.observed()
        if not observed.occupied().any():
            return BoxSet((), (), self.cfg.M)
        truth = chamfer_tsdf(observed, self.gamma)
        return fit_boxes(truth, self.cfg).boxes


def make_predictor(kind: str, truth_boxes: BoxSet | None = None, **kw) -> Predictor:
    """Predictor by name: ``oracle`` or ``fitter``."""
    if kind == "oracle":
        return OraclePredictor(truth_boxes, **kw)
    if kind == "fitter":
        return FitterPredictor(**kw)
    raise ValueError(f"unknown predictor {kind!r}")
