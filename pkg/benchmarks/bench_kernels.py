"""Time the numba kernels against their numpy fallbacks on the same inputs.

    python benchmarks/bench_kernels.py [--repeat 5] [--size 256]

Each kernel is called once untimed per backend (numba compiles on first call),
then timed as the best of ``--repeat`` runs.  Outputs are compared for equality.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from boxmap.floorgen import generate
from boxmap.kernels import _numba, _numpy


def best_of(fn, repeat: int) -> float:
    fn()
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def cases(size: int, rng: np.random.Generator):
    fp = generate(0, size=size)
    world = fp.world.cells
    free = np.ascontiguousarray(world == 0)
    r, c = map(int, np.argwhere(free)[len(np.argwhere(free)) // 2])
    goal = tuple(map(int, np.argwhere(free)[-1]))
    angles = np.linspace(0.0, 2 * np.pi, 1440, endpoint=False)
    boxes = fp.annotations.room_array()
    pts = rng.uniform(0, 50, (10, 2))
    dist = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    field = _numpy.box_field(boxes, size, size, 10.0)
    gv = rng.standard_normal((size, size))
    return {
        "chamfer34": lambda k: k.chamfer34(world == 1),
        "raycast": lambda k: k.raycast(world, r, c, angles, 64.0),
        "bfs8": lambda k: k.bfs8(free, r, c),
        "astar8": lambda k: k.astar8(free, r, c, *goal),
        "held_karp(9)": lambda k: k.held_karp(dist),
        "box_field": lambda k: k.box_field(boxes, size, size, 10.0),
        "box_field_backward": lambda k: k.box_field_backward(boxes, *field[1:5], gv, 10.0),
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--size", type=int, default=256)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}  equal")
    for name, call in cases(args.size, rng).items():
        tn = best_of(lambda: call(_numba), args.repeat)
        tp = best_of(lambda: call(_numpy), args.repeat)
        eq = same(call(_numba), call(_numpy))
        print(f"{name:<20}{tn * 1e3:>10.3f}{tp * 1e3:>10.3f}{tp / tn:>9.1f}  {eq}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
