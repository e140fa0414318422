"""Exploration metrics and the environments x starts x strategies runner."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import ndimage

from .boxcalc import BoxSet, rasterize
from .explore import STRATEGIES, EpisodeConfig, EpisodeResult, FrontierConfig, run_episode
from .floorgen import generate, random_starts
from .gridworld import DEFAULT_GAMMA, UNKNOWN, OccupancyGrid, TsdfGrid, chamfer_tsdf, encode_pgm
from .topograph import TopoGraph

log = logging.getLogger(__name__)

CSV_VERSION = 1
SSIM_WINDOW = 8
SSIM_K1 = 0.01
SSIM_K2 = 0.03

COLUMNS = (
    "env", "env_seed", "start", "start_row", "start_col", "strategy", "status",
    "steps", "updates", "rooms_visited", "n_rooms", "memory_bytes", "ssim", "hamming",
)
METRICS = ("steps", "updates", "memory_bytes", "ssim", "hamming")


# --- metrics ----------------------------------------------------------------

def _values(x: TsdfGrid | np.ndarray) -> np.ndarray:
    return np.asarray(x.values if isinstance(x, TsdfGrid) else x, dtype=np.float64)


def ssim(a: TsdfGrid | np.ndarray, b: TsdfGrid | np.ndarray, gamma: float | None = None,
         window: int = SSIM_WINDOW) -> float:
    """Mean SSIM over all ``window`` x ``window`` windows at stride 1.

    Window statistics are uniform-weighted population moments; the dynamic
    range is 2*gamma.
    """
    if gamma is None:
        gamma = a.gamma if isinstance(a, TsdfGrid) else DEFAULT_GAMMA
    x, y = _values(a), _values(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    if min(x.shape) < window:
        raise ValueError(f"grids smaller than the {window}x{window} window")
    c1 = (SSIM_K1 * 2 * gamma) ** 2
    c2 = (SSIM_K2 * 2 * gamma) ** 2

    def mean(z):
        m = ndimage.uniform_filter(z, size=window, mode="constant")
        # uniform_filter centres even windows at offset window//2; keep fully inside windows only
        lo = window // 2
        return m[lo:lo + x.shape[0] - window + 1, lo:lo + x.shape[1] - window + 1]

    mx, my = mean(x), mean(y)
    vx = mean(x * x) - mx * mx
    vy = mean(y * y) - my * my
    cxy = mean(x * y) - mx * my
    s = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
    return float(s.mean())


def hamming(final_map: OccupancyGrid, truth: OccupancyGrid) -> float:
    """Fraction of truth's known cells whose FREE/OCCUPIED class differs in
    ``final_map``; UNKNOWN there is always a mismatch."""
    if final_map.shape != truth.shape:
        raise ValueError(f"shape mismatch {final_map.shape} vs {truth.shape}")
    known = truth.cells != UNKNOWN
    n = int(known.sum())
    if n == 0:
        return 0.0
    bad = (final_map.cells != truth.cells) & known
    return float(bad.sum()) / n


def map_memory(rep: OccupancyGrid | BoxSet | tuple[BoxSet, TopoGraph] | None) -> int:
    """Serialized size in bytes: raster payload for a grid, compact JSON for
    boxes and their graph."""
    if isinstance(rep, OccupancyGrid):
        return len(encode_pgm(rep)[1])
    if rep is None:
        rep = (BoxSet((), ()), None)
    if isinstance(rep, BoxSet):
        rep = (rep, None)
    boxes, topo = rep
    doc = {"boxes": boxes.to_dict(), "graph": topo.to_dict() if topo is not None else None}
    return len(json.dumps(doc, separators=(",", ":")).encode())


def building_window(truth: OccupancyGrid, pad: int) -> tuple[slice, slice]:
    """Bounding box of truth's known cells grown by ``pad``."""
    rows, cols = np.nonzero(truth.cells != UNKNOWN)
    if len(rows) == 0:
        return slice(0, truth.height), slice(0, truth.width)
    return (slice(max(rows.min() - pad, 0), min(rows.max() + pad + 1, truth.height)),
            slice(max(cols.min() - pad, 0), min(cols.max() + pad + 1, truth.width)))


def final_map(result: EpisodeResult, world: OccupancyGrid) -> OccupancyGrid:
    """Reconstructed map: rasterised boxes for graph strategies, the grid otherwise."""
    if result.strategy == "frontier":
        return result.accumulated
    return rasterize(result.final_boxes, world)


def episode_metrics(result: EpisodeResult, world: OccupancyGrid, gamma: float = DEFAULT_GAMMA) -> dict:
    fmap = final_map(result, world)
    if result.strategy in ("greedy", "rh"):
        mem = map_memory((result.final_boxes, result.final_topo))
    else:
        mem = map_memory(result.accumulated)
    win = building_window(world, int(np.ceil(gamma)))
    a = chamfer_tsdf(fmap, gamma).values[win]
    b = chamfer_tsdf(world, gamma).values[win]
    return {"memory_bytes": mem, "ssim": ssim(a, b, gamma), "hamming": hamming(fmap, world)}


# --- runner -----------------------------------------------------------------

@dataclass(frozen=True)
class BenchConfig:
    envs: int = 40
    starts: int = 3
    strategies: tuple[str, ...] = STRATEGIES
    predictor: str = "oracle"
    seed: int = 7
    n_rooms: int = 5
    rho: float = 0.2
    sigma: float = 0.0
    door_reveal: bool = True
    lam: float = 0.02  # frontier information weight
    max_updates: int = 50
    workers: int | None = None
    out: str | None = None

    def __post_init__(self):
        unknown = set(self.strategies) - set(STRATEGIES)
        if unknown:
            raise ValueError(f"unknown strategies {sorted(unknown)}")
        if self.envs < 1 or self.starts < 1:
            raise ValueError("envs and starts must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> BenchConfig:
        names = {f.name for f in fields(cls)}
        extra = set(d) - names
        if extra:
            raise ValueError(f"unknown config keys {sorted(extra)}")
        d = dict(d)
        if isinstance(d.get("strategies"), str):
            d["strategies"] = tuple(s for s in d["strategies"].split(",") if s)
        elif "strategies" in d:
            d["strategies"] = tuple(d["strategies"])
        return cls(**d)

    def env_seeds(self) -> list[int]:
        children = np.random.SeedSequence(self.seed).spawn(self.envs)
        return [int(c.generate_state(1)[0]) for c in children]


def _env_rows(args) -> list[dict]:
    env, env_seed, cfg = args
    fp = generate(env_seed, n_rooms=cfg.n_rooms)
    starts = random_starts(fp, cfg.starts, np.random.default_rng(env_seed))
    rows = []
    for k, start in enumerate(starts):
        for strategy in cfg.strategies:
            ecfg = EpisodeConfig(strategy=strategy, predictor=cfg.predictor, rho=cfg.rho,
                                 sigma=cfg.sigma, door_reveal=cfg.door_reveal,
                                 frontier=FrontierConfig(lam=cfg.lam), max_updates=cfg.max_updates)
            res = run_episode(fp.world, start, ecfg, fp.annotations, seed=env_seed)
            r, c = start.cell
            row = {
                "env": env, "env_seed": env_seed, "start": k, "start_row": r, "start_col": c,
                "strategy": strategy, "status": res.status, "steps": res.steps, "updates": res.updates,
                "rooms_visited": res.rooms_visited, "n_rooms": fp.n_rooms,
                **episode_metrics(res, fp.world),
            }
            row["episode"] = res.to_dict()
            rows.append(row)
    return rows


def worker_count(requested: int | None = None) -> int:
    n = requested or os.cpu_count() or 1
    cap = os.environ.get("BOXMAP_THREADS")
    if cap:
        n = min(n, max(int(cap), 1))
    return max(n, 1)


@dataclass
class RunSummary:
    config: BenchConfig
    rows: list[dict] = field(repr=False)

    @property
    def strategies(self) -> tuple[str, ...]:
        return self.config.strategies

    def column(self, strategy: str, metric: str) -> np.ndarray:
        return np.array([r[metric] for r in self.rows if r["strategy"] == strategy], dtype=np.float64)

    def mean(self, strategy: str, metric: str) -> float:
        return float(self.column(strategy, metric).mean())

    def aggregates(self) -> dict:
        out = {}
        for s in self.strategies:
            out[s] = {m: {"mean": self.mean(s, m), "values": self.column(s, m).tolist()} for m in METRICS}
            out[s]["episodes"] = len(self.column(s, "steps"))
            out[s]["complete"] = float(np.mean([r["rooms_visited"] >= r["n_rooms"]
                                                for r in self.rows if r["strategy"] == s]))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# boxmap bench csv v{CSV_VERSION}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in self.rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in COLUMNS])
        return buf.getvalue()

    def to_dict(self) -> dict:
        cfg = asdict(self.config)
        cfg["strategies"] = list(cfg["strategies"])
        return {"config": cfg, "summary": self.aggregates(),
                "runs": [{c: r[c] for c in COLUMNS} for r in self.rows]}

    def write(self, out: str | os.PathLike) -> Path:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "runs.csv").write_text(self.to_csv())
        (out / "summary.json").write_text(json.dumps(self.to_dict(), indent=1))
        with open(out / "episodes.jsonl", "w") as fh:
            for r in self.rows:
                fh.write(json.dumps({"env": r["env"], "start": r["start"], **r["episode"]},
                                    separators=(",", ":")) + "\n")
        return out

    @classmethod
    def from_runs(cls, config: BenchConfig, runs: list[dict]) -> RunSummary:
        return cls(config, [dict(r) for r in runs])


def run_matrix(config: BenchConfig) -> RunSummary:
    tasks = [(i, s, config) for i, s in enumerate(config.env_seeds())]
    n = min(worker_count(config.workers), len(tasks))
    if n <= 1:
        chunks = [_env_rows(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=n) as pool:
            chunks = list(pool.map(_env_rows, tasks))
    rows = [r for chunk in chunks for r in chunk]
    summary = RunSummary(config, rows)
    if config.out:
        summary.write(config.out)
    return summary
