from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boxmap.boxcalc import RoomBox, box_tsdf
from boxmap.kernels import _numba, _numpy

seeds = st.integers(0, 2**31 - 1)


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def random_world(rng, shape=(40, 40)):
    return (rng.random(shape) < 0.2).astype(np.uint8) + (rng.random(shape) < 0.05).astype(np.uint8)


@settings(max_examples=20)
@given(seeds)
def test_chamfer_backends_agree(seed):
    rng = np.random.default_rng(seed)
    seed_mask = rng.random((30, 37)) < 0.05
    assert same(_numba.chamfer34(seed_mask), _numpy.chamfer34(seed_mask))


@settings(max_examples=20)
@given(seeds)
def test_raycast_backends_agree(seed):
    rng = np.random.default_rng(seed)
    world = random_world(rng)
    world[20, 20] = 0
    angles = np.linspace(0, 2 * np.pi, 360, endpoint=False)
    assert same(_numba.raycast(world, 20, 20, angles, 15.0), _numpy.raycast(world, 20, 20, angles, 15.0))


@settings(max_examples=20)
@given(seeds)
def test_search_backends_agree(seed):
    rng = np.random.default_rng(seed)
    free = np.ascontiguousarray(rng.random((25, 25)) > 0.3)
    cells = np.argwhere(free)
    (sr, sc), (gr, gc) = (cells[i] for i in rng.choice(len(cells), 2))
    assert same(_numba.bfs8(free, sr, sc), _numpy.bfs8(free, sr, sc))
    assert same(_numba.astar8(free, sr, sc, gr, gc), _numpy.astar8(free, sr, sc, gr, gc))


@settings(max_examples=20)
@given(st.integers(1, 8), seeds)
def test_held_karp_backends_agree(n, seed):
    pts = np.random.default_rng(seed).uniform(0, 30, (n + 1, 2))
    d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    a, b = _numba.held_karp(d), _numpy.held_karp(d)
    assert a[0] == pytest.approx(b[0], abs=1e-12) and same(a[1], b[1])


@settings(max_examples=20)
@given(seeds)
def test_box_field_backends_agree(seed):
    rng = np.random.default_rng(seed)
    lo = rng.uniform(0, 20, (4, 2))
    boxes = np.column_stack([lo, lo + rng.uniform(3, 15, (4, 2)), rng.uniform(0, 1, 4)])
    fa, fb = _numba.box_field(boxes, 32, 36, 10.0), _numpy.box_field(boxes, 32, 36, 10.0)
    assert all(np.allclose(x, y) for x, y in zip(fa, fb))
    gv = rng.standard_normal((32, 36))
    ga = _numba.box_field_backward(boxes, *fa[1:5], gv, 10.0)
    gb = _numpy.box_field_backward(boxes, *fb[1:5], gv, 10.0)
    assert np.allclose(ga, gb)


def test_box_field_matches_pointwise():
    boxes = np.array([[3.0, 4.0, 20.0, 15.0, 1.0]])
    field = _numpy.box_field(boxes, 24, 28, 10.0)[0]
    want = np.array([[box_tsdf(RoomBox(3, 4, 20, 15), (x, y), 10.0) for x in range(28)] for y in range(24)])
    assert np.allclose(field, want)


def test_env_flag_selects_numpy_backend():
    import subprocess
    import sys
    code = "import boxmap.kernels as k; print(k.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], env={"BOXMAP_NUMBA": "0", "PATH": ""},
                         capture_output=True, text=True, check=True).stdout.strip()
    assert out == "numpy"
