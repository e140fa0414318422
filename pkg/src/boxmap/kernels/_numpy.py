"""Pure numpy/python fallbacks for the numba kernels.

Selected with ``BOXMAP_NUMBA=0``.  Outputs match ``_numba`` exactly.
"""

from __future__ import annotations

import heapq

import numpy as np

FREE = 0
OCCUPIED = 1
UNKNOWN = 2

INF = 1 << 29


def _prefix_chamfer(v: np.ndarray) -> np.ndarray:
    # v'[j] = min_{k<=j} v[k] + 3 (j - k), the in-row left-to-right recurrence
    j = 3 * np.arange(v.shape[0], dtype=np.int64)
    return j + np.minimum.accumulate(v - j)


def chamfer34(seed: np.ndarray) -> np.ndarray:
    h, w = seed.shape
    d = np.where(seed, 0, INF).astype(np.int64)
    big = np.full(1, INF, dtype=np.int64)
    for i in range(h):
        v = d[i].copy()
        if i > 0:
            up = d[i - 1]
            v = np.minimum(v, up + 3)
            v = np.minimum(v, np.concatenate([big, up[:-1]]) + 4)
            v = np.minimum(v, np.concatenate([up[1:], big]) + 4)
        v = np.where(seed[i], 0, v)
        d[i] = np.where(seed[i], 0, _prefix_chamfer(v))
    for i in range(h - 1, -1, -1):
        v = d[i].copy()
        if i < h - 1:
            dn = d[i + 1]
            v = np.minimum(v, dn + 3)
            v = np.minimum(v, np.concatenate([dn[1:], big]) + 4)
            v = np.minimum(v, np.concatenate([big, dn[:-1]]) + 4)
        v = np.where(seed[i], 0, v)
        d[i] = np.where(seed[i], 0, _prefix_chamfer(v[::-1])[::-1])
    return np.minimum(d, INF)


def raycast(world: np.ndarray, r0: int, c0: int, angles: np.ndarray, max_range: float) -> np.ndarray:
    """All rays marched in lock-step; one DDA step per iteration."""
    h, w = world.shape
    out = np.full((h, w), UNKNOWN, dtype=np.uint8)
    out[r0, c0] = FREE
    n = angles.shape[0]
    dx = np.cos(angles)
    dy = np.sin(angles)
    dx[np.abs(dx) < 1e-12] = 0.0
    dy[np.abs(dy) < 1e-12] = 0.0
    with np.errstate(divide="ignore"):
        sx = np.sign(dx).astype(np.int64)
        sy = np.sign(dy).astype(np.int64)
        ddx = np.where(dx != 0, 1.0 / np.abs(dx), np.inf)
        ddy = np.where(dy != 0, 1.0 / np.abs(dy), np.inf)
    tx = 0.5 * ddx
    ty = 0.5 * ddy
    ix = np.full(n, c0, dtype=np.int64)
    iy = np.full(n, r0, dtype=np.int64)
    alive = np.ones(n, dtype=bool)

    def visit(rr, cc):
        inb = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        s = np.full(rr.shape, UNKNOWN, dtype=np.uint8)
        s[inb] = world[rr[inb], cc[inb]]
        occ = inb & (s == OCCUPIED)
        free = inb & (s == FREE)
        out[rr[occ], cc[occ]] = OCCUPIED
        out[rr[free], cc[free]] = FREE
        return ~free

    while alive.any():
        corner = alive & (np.abs(tx - ty) <= 1e-9)
        xstep = alive & ~corner & (tx < ty)
        ystep = alive & ~corner & ~xstep
        tnext = np.where(xstep | corner, tx, ty)
        alive &= ~(tnext > max_range)
        corner &= alive
        xstep &= alive
        ystep &= alive
        if corner.any():
            idx = np.nonzero(corner)[0]
            stop_a = visit(iy[idx], ix[idx] + sx[idx])
            stop_b = visit(iy[idx] + sy[idx], ix[idx])
            stop = stop_a | stop_b
            alive[idx[stop]] = False
            go = idx[~stop]
            ix[go] += sx[go]
            iy[go] += sy[go]
            tx[go] += ddx[go]
            ty[go] += ddy[go]
            corner[idx[stop]] = False
        ix[xstep] += sx[xstep]
        tx[xstep] += ddx[xstep]
        iy[ystep] += sy[ystep]
        ty[ystep] += ddy[ystep]
        moved = np.nonzero(corner | xstep | ystep)[0]
        if moved.size:
            stop = visit(iy[moved], ix[moved])
            alive[moved[stop]] = False
    return out


_K8 = np.ones((3, 3), dtype=bool)


def bfs8(free: np.ndarray, r: int, c: int) -> np.ndarray:
    """Level-synchronous wavefront; each level is one 8-neighbour dilation."""
    h, w = free.shape
    dist = np.full((h, w), -1, dtype=np.int64)
    if not free[r, c]:
        return dist
    dist[r, c] = 0
    front = np.zeros((h, w), dtype=bool)
    front[r, c] = True
    level = 0
    while front.any():
        level += 1
        grown = np.zeros((h + 2, w + 2), dtype=bool)
        for di in range(3):
            for dj in range(3):
                grown[di:di + h, dj:dj + w] |= front
        nxt = grown[1:-1, 1:-1] & free & (dist < 0)
        dist[nxt] = level
        front = nxt
    return dist


def astar8(free: np.ndarray, sr: int, sc: int, gr: int, gc: int) -> np.ndarray:
    h, w = free.shape
    empty = np.empty((0, 2), dtype=np.int64)
    if not free[sr, sc] or not free[gr, gc]:
        return empty
    start = sr * w + sc
    goal = gr * w + gc
    g = {start: 0}
    parent = {start: -1}
    closed = set()
    h0 = max(abs(sr - gr), abs(sc - gc))
    heap = [(h0, h0, start)]
    found = False
    while heap:
        _, _, idx = heapq.heappop(heap)
        if idx in closed:
            continue
        closed.add(idx)
        if idx == goal:
            found = True
            break
        i, j = divmod(idx, w)
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                if di == 0 and dj == 0:
                    continue
                ni, nj = i + di, j + dj
                if ni < 0 or ni >= h or nj < 0 or nj >= w or not free[ni, nj]:
                    continue
                nidx = ni * w + nj
                if nidx in closed:
                    continue
                ng = g[idx] + 1
                if nidx not in g or ng < g[nidx]:
                    g[nidx] = ng
                    parent[nidx] = idx
                    hh = max(abs(ni - gr), abs(nj - gc))
                    heapq.heappush(heap, (ng + hh, hh, nidx))
    if not found:
        return empty
    cells = []
    idx = goal
    while idx >= 0:
        cells.append(divmod(idx, w))
        idx = parent[idx]
    return np.array(cells[::-1], dtype=np.int64)


def held_karp(dist: np.ndarray) -> tuple[float, np.ndarray]:
    n = dist.shape[0] - 1
    order = np.empty(n, dtype=np.int64)
    if n == 0:
        return 0.0, order
    full = (1 << n) - 1
    dp = np.full((1 << n, n), np.inf)
    par = np.full((1 << n, n), -1, dtype=np.int64)
    sub = dist[1:, 1:]
    bits = (np.arange(1 << n)[:, None] >> np.arange(n)[None, :]) & 1
    for j in range(n):
        dp[1 << j, j] = dist[0, j + 1]
    for mask in range(1, full + 1):
        members = np.nonzero(bits[mask])[0]
        if members.size < 2:
            continue
        for j in members:
            prev = mask ^ (1 << j)
            ks = np.nonzero(bits[prev])[0]
            cand = dp[prev, ks] + sub[ks, j]
            a = int(np.argmin(cand))
            dp[mask, j] = cand[a]
            par[mask, j] = ks[a]
    last = int(np.argmin(dp[full]))
    best = float(dp[full, last])
    mask = full
    for pos in range(n - 1, -1, -1):
        order[pos] = last + 1
        k = par[mask, last]
        mask ^= 1 << last
        last = k
    return best, order


def box_field(boxes: np.ndarray, h: int, w: int, gamma: float):
    k_boxes = boxes.shape[0]
    if k_boxes == 0:
        return (np.full((h, w), -gamma), np.zeros((h, w), np.int32), np.zeros((h, w), np.int8),
                np.zeros((h, w), bool), np.full((h, w), -gamma))
    x = np.arange(w, dtype=np.float64)[None, None, :]
    y = np.arange(h, dtype=np.float64)[None, :, None]
    b = boxes[:, :, None, None]
    raw = np.empty((k_boxes, 4, h, w))
    raw[:, 0] = x - b[:, 0]
    raw[:, 1] = b[:, 2] - x
    raw[:, 2] = y - b[:, 1]
    raw[:, 3] = b[:, 3] - y
    clamped = np.clip(raw, -gamma, gamma)
    t = np.argmin(clamped, axis=1)
    f = np.take_along_axis(clamped, t[:, None], axis=1)[:, 0]
    r = np.take_along_axis(raw, t[:, None], axis=1)[:, 0]
    lin_lo = (-gamma < r) & (r <= gamma)
    lin_hi = (-gamma <= r) & (r < gamma)
    lin = np.where((t == 0) | (t == 2), lin_lo, lin_hi)
    gated = boxes[:, 4, None, None] * (f + gamma) - gamma
    winner = np.argmax(gated, axis=0)
    pick = winner[None]
    value = np.take_along_axis(gated, pick, axis=0)[0]
    term = np.take_along_axis(t, pick, axis=0)[0].astype(np.int8)
    lin_w = np.take_along_axis(lin, pick, axis=0)[0]
    fw = np.take_along_axis(f, pick, axis=0)[0]
    return value, winner.astype(np.int32), term, lin_w, fw


_COORD = np.array([0, 2, 1, 3])
_SIGN = np.array([-1.0, 1.0, -1.0, 1.0])


def box_field_backward(boxes, winner, term, lin, fw, grad_value, gamma):
    k_boxes = boxes.shape[0]
    grad = np.zeros((k_boxes, 5))
    if k_boxes == 0:
        return grad
    wi = winner.ravel()
    gv = grad_value.ravel()
    grad[:, 4] = np.bincount(wi, weights=gv * (fw.ravel() + gamma), minlength=k_boxes)
    sel = lin.ravel() & (gv != 0.0)
    t = term.ravel()[sel].astype(np.int64)
    k = wi[sel]
    contrib = gv[sel] * boxes[k, 4] * _SIGN[t]
    np.add.at(grad, (k, _COORD[t]), contrib)
    return grad
