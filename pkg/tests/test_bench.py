from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from boxmap.bench import (
    BenchConfig,
    RunSummary,
    hamming,
    map_memory,
    run_matrix,
    ssim,
    worker_count,
)
from boxmap.boxcalc import BoxSet, DoorBox, RoomBox, rasterize
from boxmap.gridworld import FREE, OCCUPIED, UNKNOWN, OccupancyGrid, TsdfGrid
from boxmap.topograph import build_topo


def ssim_reference(x: np.ndarray, y: np.ndarray, gamma: float, win: int = 8) -> float:
    """Window-by-window loop with the textbook formula."""
    L = 2 * gamma
    c1, c2 = (0.01 * L) ** 2, (0.03 * L) ** 2
    vals = []
    for i in range(x.shape[0] - win + 1):
        for j in range(x.shape[1] - win + 1):
            a = x[i:i + win, j:j + win].ravel()
            b = y[i:i + win, j:j + win].ravel()
            ma, mb = a.mean(), b.mean()
            va, vb = a.var(), b.var()
            cov = ((a - ma) * (b - mb)).mean()
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


tsdf_arrays = arrays(np.float64, (12, 12), elements=st.floats(-10, 10, allow_nan=False))


def test_ssim_identical_is_one():
    a = np.random.default_rng(0).uniform(-10, 10, (20, 20))
    assert ssim(a, a, 10.0) == pytest.approx(1.0)
    t = TsdfGrid(a, 10.0)
    assert ssim(t, t) == pytest.approx(1.0)


def test_ssim_anticorrelated_negative():
    # every 8x8 window of a checkerboard has zero mean, so only the structure term flips
    rng = np.random.default_rng(1)
    a = np.indices((16, 16)).sum(0) % 2 * 2.0 - 1.0
    a *= rng.uniform(2, 9)
    assert ssim(a, -a, 10.0) < 0
    assert ssim(a, -a, 10.0) == pytest.approx(ssim_reference(a, -a, 10.0), abs=1e-6)


def test_ssim_matches_reference_16x16():
    rng = np.random.default_rng(2)
    a = rng.uniform(-10, 10, (16, 16))
    b = np.clip(a + rng.normal(0, 3, (16, 16)), -10, 10)
    assert abs(ssim(a, b, 10.0) - ssim_reference(a, b, 10.0)) <= 1e-6


@settings(max_examples=30)
@given(tsdf_arrays, tsdf_arrays)
def test_ssim_properties(a, b):
    s = ssim(a, b, 10.0)
    assert -1 - 1e-9 <= s <= 1 + 1e-9
    assert s == pytest.approx(ssim(b, a, 10.0), abs=1e-12)
    assert s == pytest.approx(ssim_reference(a, b, 10.0), abs=1e-6)


def test_ssim_shape_errors():
    with pytest.raises(ValueError):
        ssim(np.zeros((10, 10)), np.zeros((10, 11)))
    with pytest.raises(ValueError):
        ssim(np.zeros((5, 5)), np.zeros((5, 5)))


def test_hamming_examples():
    truth = OccupancyGrid(np.full((10, 10), FREE, np.uint8))
    assert hamming(truth, truth) == 0.0
    assert hamming(OccupancyGrid(np.full((10, 10), UNKNOWN, np.uint8)), truth) == 1.0
    cells = truth.cells.copy()
    cells[3, 4] = OCCUPIED
    assert hamming(truth.with_cells(cells), truth) == pytest.approx(0.01)


def test_hamming_ignores_exterior():
    cells = np.full((10, 10), UNKNOWN, np.uint8)
    cells[2:8, 2:8] = FREE
    truth = OccupancyGrid(cells)
    guess = cells.copy()
    guess[0, 0] = OCCUPIED
    assert hamming(OccupancyGrid(guess), truth) == 0.0


known = arrays(np.uint8, (8, 8), elements=st.sampled_from([FREE, OCCUPIED]))


@given(known, known)
def test_hamming_axioms(a, b):
    ga, gb = OccupancyGrid(a), OccupancyGrid(b)
    assert (hamming(ga, gb) == 0) == np.array_equal(a, b)
    assert hamming(ga, gb) == hamming(gb, ga)


def test_map_memory_examples():
    assert map_memory(OccupancyGrid.filled(256, 256)) >= 65536
    rooms = tuple(RoomBox(2 + 30 * (k % 3), 2 + 30 * (k // 3), 32 + 30 * (k % 3), 32 + 30 * (k // 3)) for k in range(6))
    doors = tuple(DoorBox(32 + 30 * (k % 2), 17, 6, 1.0, (k, k + 1)) for k in range(2))
    boxes = BoxSet(rooms, doors)
    topo = build_topo(boxes, rasterize(boxes, (70, 100)))
    assert map_memory((boxes, topo)) < 4096
    empty = map_memory(None)
    assert empty == map_memory(BoxSet((), ())) and empty < 64


@pytest.fixture(scope="module")
def small_run():
    return run_matrix(BenchConfig(envs=2, starts=2, strategies=("greedy", "frontier"), workers=1))


def test_run_matrix_rows_and_means(small_run):
    assert len(small_run.rows) == 8
    rows = [r for r in small_run.rows if r["strategy"] == "greedy"]
    assert small_run.mean("greedy", "steps") == pytest.approx(sum(r["steps"] for r in rows) / len(rows))


def test_run_matrix_rerun_identical_csv(small_run):
    again = run_matrix(BenchConfig(envs=2, starts=2, strategies=("greedy", "frontier"), workers=1))
    assert again.to_csv() == small_run.to_csv()
    assert small_run.to_csv().startswith("# boxmap bench csv v1\n")


def test_parallel_matches_serial(small_run):
    par = run_matrix(BenchConfig(envs=2, starts=2, strategies=("greedy", "frontier"), workers=2))
    assert par.to_csv() == small_run.to_csv()


def test_summary_recomputable_from_written_runs(small_run, tmp_path):
    small_run.write(tmp_path)
    doc = json.loads((tmp_path / "summary.json").read_text())
    cfg = BenchConfig.from_dict(doc["config"])
    again = RunSummary.from_runs(cfg, doc["runs"])
    assert again.aggregates() == doc["summary"]
    lines = (tmp_path / "episodes.jsonl").read_text().splitlines()
    assert len(lines) == 8
    ep = json.loads(lines[0])
    assert ep["steps"] == doc["runs"][0]["steps"]


def test_bench_config_validation():
    with pytest.raises(ValueError):
        BenchConfig(strategies=("greedy", "wander"))
    with pytest.raises(ValueError):
        BenchConfig(envs=0)
    with pytest.raises(ValueError):
        BenchConfig.from_dict({"bogus": 1})
    cfg = BenchConfig.from_dict({"strategies": "greedy,rh", "envs": 3})
    assert cfg.strategies == ("greedy", "rh") and len(set(cfg.env_seeds())) == 3


def test_worker_cap(monkeypatch):
    monkeypatch.setenv("BOXMAP_THREADS", "2")
    assert worker_count(8) == 2
    monkeypatch.delenv("BOXMAP_THREADS")
    assert worker_count(3) == 3
