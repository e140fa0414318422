"""Occupancy-grid worlds, simulated laser scans, chamfer TSDFs, crops and PGM I/O.

Cell (row, col) has its centre at continuous cell coordinates (x=col, y=row);
world coordinates in metres are ``origin + resolution * (col, row)``.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from . import kernels
from .errors import (
    GeometryMismatch,
    MalformedHeader,
    NoWalls,
    PoseInObstacle,
    PoseOutOfBounds,
    UnknownEncoding,
)

DEFAULT_RESOLUTION = 0.14
DEFAULT_GAMMA = 10.0


class Cell(IntEnum):
    FREE = 0
    OCCUPIED = 1
    UNKNOWN = 2


FREE = np.uint8(Cell.FREE)
OCCUPIED = np.uint8(Cell.OCCUPIED)
UNKNOWN = np.uint8(Cell.UNKNOWN)


def _frozen(a: np.ndarray, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Frame:
    """Offset of a local window: local cell (0, 0) is world cell (row0, col0)."""

    row0: int = 0
    col0: int = 0

    def to_world(self, r: float, c: float) -> tuple[float, float]:
        return r + self.row0, c + self.col0

    def to_local(self, r: float, c: float) -> tuple[float, float]:
        return r - self.row0, c - self.col0

    def xy_to_world(self, x: float, y: float) -> tuple[float, float]:
        return x + self.col0, y + self.row0

    def xy_to_local(self, x: float, y: float) -> tuple[float, float]:
        return x - self.col0, y - self.row0


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    cells: np.ndarray
    resolution: float = DEFAULT_RESOLUTION
    origin: tuple[float, float] = (0.0, 0.0)
    frame: Frame = field(default_factory=Frame)

    def __post_init__(self):
        cells = np.asarray(self.cells)
        if cells.ndim != 2 or cells.shape[0] == 0 or cells.shape[1] == 0:
            raise ValueError("grid must be a non-empty 2-D array")
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        if cells.size and cells.max(initial=0) > 2:
            raise ValueError("cell states must be FREE, OCCUPIED or UNKNOWN")
        object.__setattr__(self, "cells", _frozen(cells, np.uint8))

    @classmethod
    def filled(cls, height: int, width: int, state: int = Cell.UNKNOWN, **kw) -> OccupancyGrid:
        return cls(np.full((height, width), state, dtype=np.uint8), **kw)

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape

    def free(self) -> np.ndarray:
        return self.cells == FREE

    def occupied(self) -> np.ndarray:
        return self.cells == OCCUPIED

    def unknown(self) -> np.ndarray:
        return self.cells == UNKNOWN

    def in_bounds(self, r: int, c: int) -> bool:
        return 0 <= r < self.height and 0 <= c < self.width

    def same_geometry(self, other: OccupancyGrid) -> bool:
        return (
            self.shape == other.shape
            and math.isclose(self.resolution, other.resolution)
            and self.frame == other.frame
        )

    def with_cells(self, cells: np.ndarray) -> OccupancyGrid:
        return OccupancyGrid(cells, self.resolution, self.origin, self.frame)

    def __eq__(self, other):
        if not isinstance(other, OccupancyGrid):
            return NotImplemented
        return self.same_geometry(other) and np.array_equal(self.cells, other.cells)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class TsdfGrid:
    values: np.ndarray
    gamma: float = DEFAULT_GAMMA
    resolution: float = DEFAULT_RESOLUTION
    origin: tuple[float, float] = (0.0, 0.0)
    frame: Frame = field(default_factory=Frame)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.size == 0:
            raise ValueError("TSDF must be a non-empty 2-D array")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if np.any(np.abs(v) > self.gamma + 1e-9):
            raise ValueError("TSDF values must lie in [-gamma, gamma]")
        object.__setattr__(self, "values", _frozen(v, np.float64))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def wall_mask(self) -> np.ndarray:
        """Cells on the zero level set (ground-truth wall region)."""
        return np.abs(self.values) < 0.5

    def __eq__(self, other):
        if not isinstance(other, TsdfGrid):
            return NotImplemented
        return (
            self.shape == other.shape
            and self.gamma == other.gamma
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    cell: tuple[int, int]

    @classmethod
    def from_cell(cls, grid: OccupancyGrid, row: int, col: int) -> Pose:
        ox, oy = grid.origin
        return cls(ox + col * grid.resolution, oy + row * grid.resolution, (int(row), int(col)))

    @classmethod
    def from_world(cls, grid: OccupancyGrid, x: float, y: float) -> Pose:
        ox, oy = grid.origin
        col = int(math.floor((x - ox) / grid.resolution + 0.5))
        row = int(math.floor((y - oy) / grid.resolution + 0.5))
        return cls(x, y, (row, col))

    @property
    def row(self) -> int:
        return self.cell[0]

    @property
    def col(self) -> int:
        return self.cell[1]


@dataclass(frozen=True)
class LaserConfig:
    range_max: float = 9.0
    num_rays: int = 1440
    fov: float = 360.0

    def __post_init__(self):
        if self.range_max <= 0:
            raise ValueError("range_max must be positive")
        if self.num_rays < 4:
            raise ValueError("num_rays must be at least 4")

    def angles(self) -> np.ndarray:
        if self.fov >= 360.0:
            return np.arange(self.num_rays) * (2 * np.pi / self.num_rays)
        half = np.deg2rad(self.fov) / 2
        return np.linspace(-half, half, self.num_rays)


def simulate_scan(world: OccupancyGrid, pose: Pose, cfg: LaserConfig | None = None) -> OccupancyGrid:
    """Cast rays from the pose; cells passed are FREE, the first hit OCCUPIED."""
    cfg = cfg or LaserConfig()
    r, c = pose.cell
    if not world.in_bounds(r, c):
        raise PoseOutOfBounds(f"pose cell {pose.cell} outside {world.shape}")
    state = world.cells[r, c]
    if state == OCCUPIED:
        raise PoseInObstacle(f"pose cell {pose.cell} is occupied")
    if state != FREE:
        raise PoseInObstacle(f"pose cell {pose.cell} is not free")
    out = kernels.raycast(
        world.cells, r, c, cfg.angles(), cfg.range_max / world.resolution
    )
    return world.with_cells(out)


def chamfer_tsdf(grid: OccupancyGrid, gamma: float = DEFAULT_GAMMA, unknown_sign: float = -1.0) -> TsdfGrid:
    """Signed 3-4 chamfer distance to the nearest OCCUPIED cell, clamped to +-gamma.

    FREE cells are positive.  UNKNOWN cells carry the same distance with
    ``unknown_sign`` (negative by default, so the exterior of a building reads
    as solid).  OCCUPIED cells are 0 on the wall surface and negative inside
    walls thicker than one cell.
    """
    occ = grid.occupied()
    if not occ.any():
        raise NoWalls("grid has no occupied cells")
    d_out = kernels.chamfer34(occ) / 3.0
    d_in = kernels.chamfer34(~occ) / 3.0
    values = np.where(grid.free(), d_out, unknown_sign * d_out)
    values = np.where(occ, -np.maximum(d_in - 1.0, 0.0), values)
    values = np.clip(values, -gamma, gamma)
    return TsdfGrid(values, gamma, grid.resolution, grid.origin, grid.frame)


def crop_local(grid: OccupancyGrid, center: Pose, size: int = 128) -> OccupancyGrid:
    """size x size window centred on the pose cell, UNKNOWN outside the world."""
    if size <= 0 or size % 2:
        raise ValueError("crop size must be a positive even number")
    r0 = center.cell[0] - size // 2
    c0 = center.cell[1] - size // 2
    out = np.full((size, size), UNKNOWN, dtype=np.uint8)
    rs, re = max(r0, 0), min(r0 + size, grid.height)
    cs, ce = max(c0, 0), min(c0 + size, grid.width)
    if rs < re and cs < ce:
        out[rs - r0:re - r0, cs - c0:ce - c0] = grid.cells[rs:re, cs:ce]
    frame = Frame(grid.frame.row0 + r0, grid.frame.col0 + c0)
    ox, oy = grid.origin
    origin = (ox + c0 * grid.resolution, oy + r0 * grid.resolution)
    return OccupancyGrid(out, grid.resolution, origin, frame)


def uncrop(local: OccupancyGrid, world_shape: tuple[int, int]) -> np.ndarray:
    """Paste a crop back into world-sized cells (UNKNOWN elsewhere)."""
    h, w = world_shape
    out = np.full((h, w), UNKNOWN, dtype=np.uint8)
    r0, c0 = local.frame.row0, local.frame.col0
    rs, re = max(r0, 0), min(r0 + local.height, h)
    cs, ce = max(c0, 0), min(c0 + local.width, w)
    if rs < re and cs < ce:
        out[rs:re, cs:ce] = local.cells[rs - r0:re - r0, cs - c0:ce - c0]
    return out


def accumulate(a: OccupancyGrid, b: OccupancyGrid) -> OccupancyGrid:
    """Cellwise merge: OCCUPIED beats FREE beats UNKNOWN."""
    if not a.same_geometry(b):
        raise GeometryMismatch(f"{a.shape} vs {b.shape}")
    ca, cb = a.cells, b.cells
    out = np.where(
        (ca == OCCUPIED) | (cb == OCCUPIED),
        OCCUPIED,
        np.where((ca == FREE) | (cb == FREE), FREE, UNKNOWN),
    )
    return a.with_cells(out)


def overlay(base: OccupancyGrid, top: OccupancyGrid) -> OccupancyGrid:
    """Known cells of ``top`` replace those of ``base``."""
    if not base.same_geometry(top):
        raise GeometryMismatch(f"{base.shape} vs {top.shape}")
    return base.with_cells(np.where(top.cells != UNKNOWN, top.cells, base.cells))


# --- PGM -------------------------------------------------------------------

_OCC_TO_BYTE = np.array([255, 0, 128], dtype=np.uint8)


def _header(kind: str, w: int, h: int, maxval: int, resolution: float, origin, gamma=None) -> bytes:
    lines = ["P5", f"# boxmap {kind}", f"# resolution {resolution!r}", f"# origin {origin[0]!r} {origin[1]!r}"]
    if gamma is not None:
        lines.append(f"# gamma {gamma!r}")
    lines += [f"{w} {h}", str(maxval)]
    return ("\n".join(lines) + "\n").encode("ascii")


def encode_pgm(grid: OccupancyGrid | TsdfGrid) -> tuple[bytes, bytes]:
    """(header, raster payload) of the binary PGM encoding."""
    if isinstance(grid, OccupancyGrid):
        payload = _OCC_TO_BYTE[grid.cells].tobytes()
        head = _header("occupancy", grid.width, grid.height, 255, grid.resolution, grid.origin)
    elif isinstance(grid, TsdfGrid):
        g = grid.gamma
        px = np.rint((grid.values + g) / (2 * g) * 65535.0)
        payload = np.clip(px, 0, 65535).astype(">u2").tobytes()
        head = _header("tsdf", grid.width, grid.height, 65535, grid.resolution, grid.origin, g)
    else:
        raise TypeError(f"cannot write {type(grid).__name__} as PGM")
    return head, payload


def write_pgm(path: str | os.PathLike, grid: OccupancyGrid | TsdfGrid) -> None:
    head, payload = encode_pgm(grid)
    with open(path, "wb") as fh:
        fh.write(head + payload)


def _parse_header(data: bytes):
    pos = 0
    tokens: list[bytes] = []
    comments: dict[str, list[str]] = {}
    n = len(data)
    while len(tokens) < 4:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= n:
            raise MalformedHeader("truncated PGM header")
        if data[pos:pos + 1] == b"#":
            end = data.find(b"\n", pos)
            if end < 0:
                raise MalformedHeader("unterminated comment")
            parts = data[pos + 1:end].decode("ascii", "replace").split()
            if parts:
                comments[parts[0]] = parts[1:]
            pos = end + 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1  # single whitespace before the raster
    if tokens[0] != b"P5":
        raise MalformedHeader(f"expected P5 magic, got {tokens[0]!r}")
    try:
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as exc:
        raise MalformedHeader("non-integer size field") from exc
    if w <= 0 or h <= 0 or not 0 < maxval < 65536:
        raise MalformedHeader(f"bad geometry {w}x{h} maxval {maxval}")
    return w, h, maxval, comments, pos


def read_pgm(path: str | os.PathLike) -> OccupancyGrid | TsdfGrid:
    with open(path, "rb") as fh:
        data = fh.read()
    w, h, maxval, comments, pos = _parse_header(data)
    resolution = float(comments.get("resolution", [DEFAULT_RESOLUTION])[0])
    origin = tuple(float(v) for v in comments.get("origin", [0.0, 0.0])[:2])
    kind = comments.get("boxmap", ["tsdf" if maxval > 255 else "occupancy"])[0]
    if maxval > 255:
        raw = np.frombuffer(data, dtype=">u2", count=w * h, offset=pos) if len(data) - pos >= 2 * w * h else None
    else:
        raw = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos) if len(data) - pos >= w * h else None
    if raw is None:
        raise MalformedHeader("raster shorter than header geometry")
    raw = raw.reshape(h, w)
    if kind == "tsdf":
        if "gamma" not in comments:
            raise MalformedHeader("TSDF PGM lacks a '# gamma' comment")
        g = float(comments["gamma"][0])
        values = raw.astype(np.float64) / float(maxval) * (2 * g) - g
        return TsdfGrid(np.clip(values, -g, g), g, resolution, origin)
    if kind != "occupancy" or maxval != 255:
        raise UnknownEncoding(f"unsupported PGM kind {kind!r} / maxval {maxval}")
    cells = np.full((h, w), 255, dtype=np.uint8)
    cells[raw == 255] = Cell.FREE
    cells[raw == 0] = Cell.OCCUPIED
    cells[raw == 128] = Cell.UNKNOWN
    if (cells == 255).any():
        bad = np.unique(raw[cells == 255])[:5].tolist()
        raise UnknownEncoding(f"pixel values {bad} are not 0/128/255")
    return OccupancyGrid(cells, resolution, origin)
