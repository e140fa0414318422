"""Procedural axis-aligned floorplans with box annotations.

A building rectangle is cut guillotine-style into rooms; one adjacent pair
may fuse into a multi-box room; doors are carved along a random spanning tree
of the room adjacency plus a few extra edges.
"""

from __future__ import annotations

import argparse
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .boxcalc import BoxSet, DoorBox, RoomBox, rasterize
from .errors import GenerationFailed, MissingAnnotations
from .gridworld import (
    DEFAULT_GAMMA,
    FREE,
    LaserConfig,
    OccupancyGrid,
    Pose,
    TsdfGrid,
    accumulate,
    chamfer_tsdf,
    crop_local,
    read_pgm,
    simulate_scan,
    write_pgm,
)

DOOR_SIZE = 6.0  # diamond size; carves a 5-cell opening in a 1-cell wall
DOOR_CLEARANCE = 6  # cells between a door centre and the end of its wall segment


@dataclass(frozen=True)
class FloorgenConfig:
    n_rooms: int = 5
    size: int = 256
    min_side: int = 20
    building: tuple[int, int] = (64, 96)
    p_multi: float = 0.3
    p_extra_door: float = 0.2
    door_size: float = DOOR_SIZE
    overlap_depth: int = 4
    max_tries: int = 100


@dataclass(frozen=True)
class Floorplan:
    world: OccupancyGrid
    annotations: BoxSet
    seed: int
    groups: tuple[tuple[int, ...], ...] = field(default=())

    @property
    def n_rooms(self) -> int:
        return len(self.groups) if self.groups else len(self.annotations.rooms)

    def group_of(self, box_index: int) -> int:
        for g, members in enumerate(self.groups):
            if box_index in members:
                return g
        return box_index


def _split(rect, rng, min_side):
    x0, y0, x1, y1 = rect
    w, h = x1 - x0, y1 - y0
    vertical = w > h or (w == h and rng.random() < 0.5)
    if (w if vertical else h) < 2 * min_side:
        vertical = not vertical
    span = w if vertical else h
    if span < 2 * min_side:
        return None
    lo = x0 if vertical else y0
    cut = int(rng.integers(lo + min_side, lo + span - min_side + 1))
    if vertical:
        return (x0, y0, cut, y1), (cut, y0, x1, y1)
    return (x0, y0, x1, cut), (x0, cut, x1, y1)


def _partition(outer, n, rng, min_side):
    rects = [outer]
    while len(rects) < n:
        order = sorted(range(len(rects)), key=lambda i: -((rects[i][2] - rects[i][0]) * (rects[i][3] - rects[i][1])))
        for i in order:
            parts = _split(rects[i], rng, min_side)
            if parts is not None:
                rects[i:i + 1] = list(parts)
                break
        else:
            return None
    return rects


def _contact(a, b):
    """Shared wall of two partition rectangles: (axis, coord, lo, hi) or None."""
    for ea, eb in ((a[2], b[0]), (a[0], b[2])):
        if ea == eb:
            lo, hi = max(a[1], b[1]), min(a[3], b[3])
            if hi > lo:
                return "x", ea, lo, hi
    for ea, eb in ((a[3], b[1]), (a[1], b[3])):
        if ea == eb:
            lo, hi = max(a[0], b[0]), min(a[2], b[2])
            if hi > lo:
                return "y", ea, lo, hi
    return None


def _span(r, axis):
    return (r[1], r[3]) if axis == "x" else (r[0], r[2])


def _fuse_candidates(rects, depth):
    """Pairs whose contact covers one box's whole side but only part of the
    other's, so that their union is not a rectangle."""
    out = []
    for i in range(len(rects)):
        for j in range(len(rects)):
            if i == j:
                continue
            c = _contact(rects[i], rects[j])
            if c is None:
                continue
            axis, coord, lo, hi = c
            si, sj = _span(rects[i], axis), _span(rects[j], axis)
            # rects[i] is the shorter one and gets extended into rects[j]
            if si == (lo, hi) and sj != si and sj[0] <= si[0] and si[1] <= sj[1]:
                depth_j = (rects[j][2] - rects[j][0]) if axis == "x" else (rects[j][3] - rects[j][1])
                if depth_j > depth + 2:
                    out.append((i, j, axis, coord))
    return out


def _extend(rect, axis, coord, depth):
    x0, y0, x1, y1 = rect
    if axis == "x":
        return (x0 - depth, y0, x1, y1) if x0 == coord else (x0, y0, x1 + depth, y1)
    return (x0, y0 - depth, x1, y1) if y0 == coord else (x0, y0, x1, y1 + depth)


def _try_generate(rng, cfg: FloorgenConfig):
    multi = cfg.n_rooms >= 2 and rng.random() < cfg.p_multi
    n_rect = cfg.n_rooms + (1 if multi else 0)
    lo, hi = cfg.building
    bw, bh = (int(v) for v in rng.integers(lo, hi + 1, size=2))
    bw, bh = min(bw, cfg.size - 4), min(bh, cfg.size - 4)
    ox = int(rng.integers(2, cfg.size - bw - 1))
    oy = int(rng.integers(2, cfg.size - bh - 1))
    rects = _partition((ox, oy, ox + bw, oy + bh), n_rect, rng, cfg.min_side)
    if rects is None:
        return None
    rects.sort(key=lambda r: (r[1], r[0]))
    group = list(range(len(rects)))
    boxes = list(rects)
    if multi:
        cands = _fuse_candidates(rects, cfg.overlap_depth)
        if not cands:
            return None
        i, j, axis, coord = cands[int(rng.integers(len(cands)))]
        boxes[i] = _extend(rects[i], axis, coord, cfg.overlap_depth)
        group[i] = group[j]
    labels = sorted(set(group))
    gid = {g: k for k, g in enumerate(labels)}
    group = [gid[g] for g in group]
    groups = tuple(tuple(i for i in range(len(rects)) if group[i] == g) for g in range(len(labels)))

    # candidate door walls between different rooms
    walls = []
    for i in range(len(rects)):
        for j in range(i + 1, len(rects)):
            if group[i] == group[j]:
                continue
            c = _contact(rects[i], rects[j])
            if c is not None and c[3] - c[2] >= 2 * DOOR_CLEARANCE:
                walls.append((i, j, c))
    order = rng.permutation(len(walls))
    parent = list(range(len(labels)))

    def find(a):
        while parent[a] != a:
            a = parent[a]
        return a

    doors = []
    taken = set()
    for k in order:
        i, j, (axis, coord, lo_, hi_) = walls[k]
        gi, gj = find(group[i]), find(group[j])
        pair = (min(group[i], group[j]), max(group[i], group[j]))
        tree = gi != gj
        if not tree and (pair in taken or rng.random() >= cfg.p_extra_door):
            continue
        if tree:
            parent[max(gi, gj)] = min(gi, gj)
        t = int(rng.integers(lo_ + DOOR_CLEARANCE, hi_ - DOOR_CLEARANCE + 1))
        cx, cy = (coord, t) if axis == "x" else (t, coord)
        doors.append(DoorBox(float(cx), float(cy), cfg.door_size, 1.0, (i, j)))
        taken.add(pair)
    if len({find(g) for g in range(len(labels))}) != 1:
        return None
    rooms = tuple(RoomBox(*map(float, b)) for b in boxes)
    return BoxSet(rooms, tuple(doors)), groups


def is_connected(world: OccupancyGrid) -> bool:
    free = world.free()
    _, n = ndimage.label(free)
    return n == 1


def generate(seed: int, n_rooms: int = 5, size: int = 256, cfg: FloorgenConfig | None = None) -> Floorplan:
    """Random floorplan with ``n_rooms`` rooms in a ``size`` x ``size`` world."""
    cfg = cfg or FloorgenConfig()
    cfg = FloorgenConfig(**{**cfg.__dict__, "n_rooms": n_rooms, "size": size})
    if n_rooms < 1:
        raise ValueError("need at least one room")
    if size < cfg.building[0] + 4:
        lo = max(cfg.min_side * 2, min(size - 4, cfg.building[0]))
        cfg = FloorgenConfig(**{**cfg.__dict__, "building": (min(lo, size - 4), size - 4)})
    rng = np.random.default_rng(seed)
    for _ in range(cfg.max_tries):
        out = _try_generate(rng, cfg)
        if out is None:
            continue
        boxes, groups = out
        world = rasterize(boxes, OccupancyGrid.filled(size, size))
        if is_connected(world):
            return Floorplan(world, boxes, seed, groups)
    raise GenerationFailed(f"no valid floorplan for seed {seed} after {cfg.max_tries} tries")


def random_starts(fp: Floorplan, n: int, rng: np.random.Generator, clearance: float = 3.0) -> list[Pose]:
    """FREE cells at least ``clearance`` cells from any wall, drawn without replacement."""
    tsdf = chamfer_tsdf(fp.world)
    cand = np.argwhere(fp.world.free() & (tsdf.values >= clearance))
    idx = rng.choice(len(cand), size=min(n, len(cand)), replace=False)
    return [Pose.from_cell(fp.world, int(cand[i][0]), int(cand[i][1])) for i in idx]


# --- persistence ------------------------------------------------------------

def annotations_dict(fp: Floorplan) -> dict:
    d = fp.annotations.to_dict()
    d["groups"] = [list(g) for g in fp.groups]
    d["seed"] = fp.seed
    return d


def save_floorplan(fp: Floorplan, out_dir: str | os.PathLike, gamma: float = DEFAULT_GAMMA) -> None:
    """Write world.pgm, annotations.json and tsdf.pgm."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_pgm(out / "world.pgm", fp.world)
    write_pgm(out / "tsdf.pgm", chamfer_tsdf(fp.world, gamma))
    (out / "annotations.json").write_text(json.dumps(annotations_dict(fp), indent=1))


def load_floorplan(in_dir: str | os.PathLike) -> Floorplan:
    """Ingest a world.pgm + annotations.json pair (any source using this schema)."""
    d = Path(in_dir)
    world = read_pgm(d / "world.pgm")
    if not isinstance(world, OccupancyGrid):
        raise ValueError("world.pgm must be an occupancy raster")
    ann = d / "annotations.json"
    if not ann.exists():
        raise MissingAnnotations(f"{ann} not found")
    data = json.loads(ann.read_text())
    boxes = BoxSet.from_dict(data)
    groups = tuple(tuple(g) for g in data.get("groups", [[i] for i in range(len(boxes.rooms))]))
    return Floorplan(world, boxes, int(data.get("seed", -1)), groups)


# --- dataset export ---------------------------------------------------------

@dataclass(frozen=True)
class SampleRecord:
    pose: Pose
    scan: OccupancyGrid  # accumulated scans, cropped
    tsdf: TsdfGrid  # ground truth, cropped
    annotations: BoxSet  # rooms touching the crop, plus doors between them


def crop_tsdf(tsdf: TsdfGrid, window: OccupancyGrid) -> TsdfGrid:
    """Cut ``tsdf`` to the geometry of ``window``; outside cells read -gamma."""
    h, w = window.shape
    r0, c0 = window.frame.row0 - tsdf.frame.row0, window.frame.col0 - tsdf.frame.col0
    out = np.full((h, w), -tsdf.gamma)
    rs, re = max(r0, 0), min(r0 + h, tsdf.height)
    cs, ce = max(c0, 0), min(c0 + w, tsdf.width)
    if rs < re and cs < ce:
        out[rs - r0:re - r0, cs - c0:ce - c0] = tsdf.values[rs:re, cs:ce]
    return TsdfGrid(out, tsdf.gamma, tsdf.resolution, window.origin, window.frame)


def _subset(boxes: BoxSet, window: OccupancyGrid) -> BoxSet:
    f = window.frame
    xa, xb = f.col0, f.col0 + window.width - 1
    ya, yb = f.row0, f.row0 + window.height - 1
    keep = [i for i, r in enumerate(boxes.rooms) if r.x1 >= xa and r.x0 <= xb and r.y1 >= ya and r.y0 <= yb]
    remap = {old: new for new, old in enumerate(keep)}
    doors = tuple(
        DoorBox(d.cx, d.cy, d.s, d.q, (remap[d.rooms[0]], remap[d.rooms[1]]))
        for d in boxes.doors if d.rooms[0] in remap and d.rooms[1] in remap
    )
    return BoxSet(tuple(boxes.rooms[i] for i in keep), doors)


def export_samples(fp: Floorplan, poses, out_dir: str | os.PathLike | None = None, size: int = 128,
                   gamma: float = DEFAULT_GAMMA, laser: LaserConfig | None = None) -> list[SampleRecord]:
    """One record per pose; scans accumulate along the pose sequence."""
    tsdf = chamfer_tsdf(fp.world, gamma)
    acc = OccupancyGrid.filled(fp.world.height, fp.world.width, resolution=fp.world.resolution)
    records = []
    for k, pose in enumerate(poses):
        acc = accumulate(acc, simulate_scan(fp.world, pose, laser))
        scan = crop_local(acc, pose, size)
        rec = SampleRecord(pose, scan, crop_tsdf(tsdf, scan), _subset(fp.annotations, scan))
        records.append(rec)
        if out_dir is not None:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            write_pgm(out / f"scan_{k:04d}.pgm", rec.scan)
            write_pgm(out / f"tsdf_{k:04d}.pgm", rec.tsdf)
            meta = {"pose": list(pose.cell), "frame": [scan.frame.row0, scan.frame.col0],
                    "annotations": rec.annotations.to_dict()}
            (out / f"sample_{k:04d}.json").write_text(json.dumps(meta))
    return records


def read_sample(in_dir: str | os.PathLike, k: int):
    """Load one exported record back as (scan, tsdf, annotations, pose cell, frame)."""
    d = Path(in_dir)
    meta = json.loads((d / f"sample_{k:04d}.json").read_text())
    return (read_pgm(d / f"scan_{k:04d}.pgm"), read_pgm(d / f"tsdf_{k:04d}.pgm"),
            BoxSet.from_dict(meta["annotations"]), tuple(meta["pose"]), tuple(meta["frame"]))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="floorgen", description="Generate an annotated floorplan.")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--rooms", type=int, default=5)
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--gamma", type=float, default=DEFAULT_GAMMA)
    ap.add_argument("--out", required=True)
    args = ap.parse_args(argv)
    fp = generate(args.seed, args.rooms, args.size)
    save_floorplan(fp, args.out, args.gamma)
    print(f"wrote {args.out}: {len(fp.annotations.rooms)} boxes, {len(fp.annotations.doors)} doors")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
