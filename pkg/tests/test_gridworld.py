from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from boxmap.errors import GeometryMismatch, MalformedHeader, NoWalls, PoseInObstacle, PoseOutOfBounds, UnknownEncoding
from boxmap.gridworld import (
    FREE,
    OCCUPIED,
    UNKNOWN,
    Frame,
    LaserConfig,
    OccupancyGrid,
    Pose,
    TsdfGrid,
    accumulate,
    chamfer_tsdf,
    crop_local,
    encode_pgm,
    overlay,
    read_pgm,
    simulate_scan,
    uncrop,
    write_pgm,
)


def walled(h, w):
    c = np.zeros((h, w), np.uint8)
    c[0, :] = c[-1, :] = c[:, 0] = c[:, -1] = OCCUPIED
    return OccupancyGrid(c)


def euclid_to_occupied(cells: np.ndarray) -> np.ndarray:
    """Brute-force exact distance from every cell centre to the nearest OCCUPIED centre."""
    occ = np.argwhere(cells == OCCUPIED)
    rr, cc = np.mgrid[0:cells.shape[0], 0:cells.shape[1]]
    d = np.sqrt((rr[..., None] - occ[:, 0]) ** 2 + (cc[..., None] - occ[:, 1]) ** 2)
    return d.min(-1)


# --- types ------------------------------------------------------------------

def test_grid_rejects_bad_states_and_shapes():
    with pytest.raises(ValueError):
        OccupancyGrid(np.full((3, 3), 3, np.uint8))
    with pytest.raises(ValueError):
        OccupancyGrid(np.zeros((0, 3), np.uint8))
    with pytest.raises(ValueError):
        OccupancyGrid(np.zeros((3, 3), np.uint8), resolution=0)


def test_grid_is_immutable():
    g = walled(5, 5)
    with pytest.raises(ValueError):
        g.cells[1, 1] = OCCUPIED


def test_tsdf_rejects_out_of_range_values():
    with pytest.raises(ValueError):
        TsdfGrid(np.full((2, 2), 11.0), gamma=10.0)


def test_laser_config_validation():
    with pytest.raises(ValueError):
        LaserConfig(range_max=0)
    with pytest.raises(ValueError):
        LaserConfig(num_rays=3)


def test_pose_cell_round_trip():
    g = walled(10, 10)
    p = Pose.from_cell(g, 3, 7)
    assert Pose.from_world(g, p.x, p.y).cell == (3, 7)


# --- scanning ---------------------------------------------------------------

def test_scan_empty_room_sees_everything():
    g = walled(21, 21)
    scan = simulate_scan(g, Pose.from_cell(g, 10, 10), LaserConfig(range_max=100.0))
    # the four corner cells hide behind their neighbours under supercover traversal
    corners = (np.array([0, 0, 20, 20]), np.array([0, 20, 0, 20]))
    expect = g.cells.copy()
    expect[corners] = UNKNOWN
    assert np.array_equal(scan.cells, expect)


def test_scan_full_wall_occludes_far_side():
    c = walled(21, 21).cells.copy()
    c[:, 12] = OCCUPIED
    g = OccupancyGrid(c)
    scan = simulate_scan(g, Pose.from_cell(g, 10, 5), LaserConfig(range_max=100.0))
    assert (scan.cells[:, 13:] == UNKNOWN).all()
    assert (scan.cells[1:-1, 12] == OCCUPIED).all()


def test_scan_single_obstacle_shadows_its_ray():
    c = walled(21, 41).cells.copy()
    c[10, 15] = OCCUPIED  # 10 cells east of the pose
    g = OccupancyGrid(c)
    scan = simulate_scan(g, Pose.from_cell(g, 10, 5), LaserConfig(range_max=100.0))
    assert scan.cells[10, 15] == OCCUPIED
    assert (scan.cells[10, 6:15] == FREE).all()
    assert (scan.cells[10, 16:] == UNKNOWN).all()


def test_scan_pose_errors():
    g = walled(9, 9)
    with pytest.raises(PoseInObstacle):
        simulate_scan(g, Pose.from_cell(g, 0, 0))
    with pytest.raises(PoseOutOfBounds):
        simulate_scan(g, Pose.from_cell(g, 20, 20))


def test_scan_respects_range():
    g = walled(61, 61)
    scan = simulate_scan(g, Pose.from_cell(g, 30, 30), LaserConfig(range_max=10 * g.resolution))
    rr, cc = np.nonzero(scan.cells != UNKNOWN)
    assert np.sqrt((rr - 30) ** 2 + (cc - 30) ** 2).max() <= 10 + 1.5


@given(st.integers(0, 2**31 - 1))
def test_scan_soundness(seed):
    rng = np.random.default_rng(seed)
    c = np.where(rng.random((30, 30)) < 0.15, OCCUPIED, FREE).astype(np.uint8)
    c[15, 15] = FREE
    g = OccupancyGrid(c)
    scan = simulate_scan(g, Pose.from_cell(g, 15, 15), LaserConfig(range_max=3.0, num_rays=720))
    assert (g.cells[scan.free()] == FREE).all()
    assert (g.cells[scan.occupied()] == OCCUPIED).all()


# --- chamfer TSDF -----------------------------------------------------------

def test_chamfer_adjacent_wall_and_zero_set():
    g = walled(9, 9)
    t = chamfer_tsdf(g)
    assert t.values[1, 4] == pytest.approx(1.0)
    assert t.values[0, 4] == 0.0
    assert t.values[4, 4] == pytest.approx(min(euclid_to_occupied(g.cells)[4, 4], 4.0), abs=0.35)


def test_chamfer_truncates():
    g = walled(41, 41)
    t = chamfer_tsdf(g, gamma=5.0)
    assert t.values[20, 20] == 5.0
    assert t.values.max() == 5.0


def test_chamfer_needs_walls():
    with pytest.raises(NoWalls):
        chamfer_tsdf(OccupancyGrid(np.zeros((4, 4), np.uint8)))


def test_chamfer_unknown_is_negative_outside_and_thick_walls_go_negative():
    c = np.full((12, 12), UNKNOWN, np.uint8)
    c[2:10, 2:10] = OCCUPIED
    c[5:7, 5:7] = FREE
    t = chamfer_tsdf(OccupancyGrid(c))
    assert t.values[0, 0] < 0
    assert t.values[2, 2] == 0.0  # outer wall layer is the surface
    assert t.values[3, 3] < 0  # wall interior


@given(st.integers(0, 2**31 - 1))
def test_chamfer_within_eight_percent_of_euclid(seed):
    rng = np.random.default_rng(seed)
    h, w = rng.integers(8, 33, 2)
    c = np.where(rng.random((h, w)) < 0.05, OCCUPIED, FREE).astype(np.uint8)
    c[rng.integers(h), rng.integers(w)] = OCCUPIED
    t = chamfer_tsdf(OccupancyGrid(c), gamma=100.0)
    exact = euclid_to_occupied(c)
    free = c == FREE
    rel = np.abs(t.values[free] - exact[free]) / exact[free]
    assert rel.max() <= 0.08 + 1e-12


# --- crops ------------------------------------------------------------------

def test_crop_identity_and_corner_padding():
    rng = np.random.default_rng(0)
    g = OccupancyGrid(rng.integers(0, 3, (128, 128)).astype(np.uint8))
    same = crop_local(g, Pose.from_cell(g, 64, 64), 128)
    assert np.array_equal(same.cells, g.cells) and same.frame == Frame(0, 0)
    corner = crop_local(g, Pose.from_cell(g, 0, 0), 128)
    assert (corner.cells[:64, :] == UNKNOWN).all() and (corner.cells[:, :64] == UNKNOWN).all()
    assert np.array_equal(corner.cells[64:, 64:], g.cells[:64, :64])


def test_crop_rejects_odd_size():
    g = walled(8, 8)
    with pytest.raises(ValueError):
        crop_local(g, Pose.from_cell(g, 4, 4), 7)


@given(st.integers(0, 59), st.integers(0, 79), st.sampled_from([8, 16, 32]))
def test_crop_uncrop_round_trip(r, c, size):
    rng = np.random.default_rng(r * 100 + c)
    g = OccupancyGrid(rng.integers(0, 3, (60, 80)).astype(np.uint8))
    local = crop_local(g, Pose.from_cell(g, r, c), size)
    back = uncrop(local, g.shape)
    f = local.frame
    rs, re = max(f.row0, 0), min(f.row0 + size, 60)
    cs, ce = max(f.col0, 0), min(f.col0 + size, 80)
    assert np.array_equal(back[rs:re, cs:ce], g.cells[rs:re, cs:ce])
    # in-window coordinates map back to the same world cell
    lr, lc = f.to_local(rs, cs)
    assert f.to_world(lr, lc) == (rs, cs)
    assert local.cells[int(lr), int(lc)] == g.cells[rs, cs]


# --- merging ----------------------------------------------------------------

cells3 = st.integers(0, 2**31 - 1).map(lambda s: OccupancyGrid(np.random.default_rng(s).integers(0, 3, (6, 7)).astype(np.uint8)))


def test_accumulate_rules():
    a = OccupancyGrid(np.array([[FREE, FREE, UNKNOWN]], np.uint8))
    b = OccupancyGrid(np.array([[OCCUPIED, UNKNOWN, UNKNOWN]], np.uint8))
    assert accumulate(a, b).cells.tolist() == [[OCCUPIED, FREE, UNKNOWN]]
    assert accumulate(a, OccupancyGrid.filled(1, 3)) == a


def test_accumulate_two_halves_make_the_room():
    room = walled(10, 10)
    left = room.cells.copy()
    left[:, 5:] = UNKNOWN
    right = room.cells.copy()
    right[:, :5] = UNKNOWN
    assert accumulate(OccupancyGrid(left), OccupancyGrid(right)) == room


def test_accumulate_geometry_mismatch():
    with pytest.raises(GeometryMismatch):
        accumulate(walled(4, 4), walled(4, 5))


@given(cells3, cells3, cells3)
def test_accumulate_algebra(a, b, c):
    assert accumulate(a, b) == accumulate(b, a)
    assert accumulate(accumulate(a, b), c) == accumulate(a, accumulate(b, c))
    assert accumulate(a, a) == a


def test_overlay_prefers_top():
    base = OccupancyGrid(np.array([[OCCUPIED, FREE]], np.uint8))
    top = OccupancyGrid(np.array([[FREE, UNKNOWN]], np.uint8))
    assert overlay(base, top).cells.tolist() == [[FREE, FREE]]


# --- PGM --------------------------------------------------------------------

def test_pgm_round_trip_occupancy(tmp_path):
    rng = np.random.default_rng(1)
    g = OccupancyGrid(rng.integers(0, 3, (13, 17)).astype(np.uint8), resolution=0.2, origin=(1.0, -2.0))
    write_pgm(tmp_path / "g.pgm", g)
    back = read_pgm(tmp_path / "g.pgm")
    assert back == g and back.origin == (1.0, -2.0) and back.resolution == 0.2


def test_pgm_unknown_bytes_and_tsdf_midpoint():
    _, payload = encode_pgm(OccupancyGrid.filled(4, 4))
    assert set(payload) == {128}
    _, payload = encode_pgm(TsdfGrid(np.zeros((1, 1)), gamma=10.0))
    assert int.from_bytes(payload, "big") == 32768


def test_pgm_round_trip_tsdf(tmp_path):
    t = chamfer_tsdf(walled(12, 15), gamma=4.0)
    write_pgm(tmp_path / "t.pgm", t)
    back = read_pgm(tmp_path / "t.pgm")
    assert back.gamma == 4.0
    assert np.abs(back.values - t.values).max() <= 2 * 4.0 / 65535


def test_pgm_errors(tmp_path):
    p = tmp_path / "bad.pgm"
    p.write_bytes(b"P2\n2 2\n255\n0000")
    with pytest.raises(MalformedHeader):
        read_pgm(p)
    p.write_bytes(b"P5\n2 2\n255\n\x00\x07\x80\xff")
    with pytest.raises(UnknownEncoding):
        read_pgm(p)
    p.write_bytes(b"P5\n4 4\n255\n\x00")
    with pytest.raises(MalformedHeader):
        read_pgm(p)
    p.write_bytes(b"P5\n# boxmap tsdf\n1 1\n65535\n\x80\x00")
    with pytest.raises(MalformedHeader):
        read_pgm(p)
