"""Loop kernels compiled with numba.

Every function here has a twin in ``_numpy`` with identical outputs; the
test-suite checks the pair against each other.
"""

from __future__ import annotations

import numpy as np
from numba import njit

FREE = 0
OCCUPIED = 1
UNKNOWN = 2

INF = 1 << 29


@njit(cache=True)
def chamfer34(seed):
    """Two-pass 3-4 chamfer distance (in thirds of a cell) to the nearest seed."""
    h, w = seed.shape
    d = np.empty((h, w), dtype=np.int64)
    for i in range(h):
        for j in range(w):
            d[i, j] = 0 if seed[i, j] else INF
    for i in range(h):
        for j in range(w):
            v = d[i, j]
            if v == 0:
                continue
            if j > 0:
                v = min(v, d[i, j - 1] + 3)
            if i > 0:
                v = min(v, d[i - 1, j] + 3)
                if j > 0:
                    v = min(v, d[i - 1, j - 1] + 4)
                if j < w - 1:
                    v = min(v, d[i - 1, j + 1] + 4)
            d[i, j] = v
    for i in range(h - 1, -1, -1):
        for j in range(w - 1, -1, -1):
            v = d[i, j]
            if v == 0:
                continue
            if j < w - 1:
                v = min(v, d[i, j + 1] + 3)
            if i < h - 1:
                v = min(v, d[i + 1, j] + 3)
                if j < w - 1:
                    v = min(v, d[i + 1, j + 1] + 4)
                if j > 0:
                    v = min(v, d[i + 1, j - 1] + 4)
            d[i, j] = v
    return np.minimum(d, INF)


@njit(cache=True)
def _visit(world, out, r, c):
    # returns True when the ray must stop at this cell
    h, w = world.shape
    if r < 0 or r >= h or c < 0 or c >= w:
        return True
    s = world[r, c]
    if s == OCCUPIED:
        out[r, c] = OCCUPIED
        return True
    if s == UNKNOWN:
        return True
    out[r, c] = FREE
    return False


@njit(cache=True)
def raycast(world, r0, c0, angles, max_range):
    """Supercover ray casting from the centre of cell (r0, c0)."""
    h, w = world.shape
    out = np.full((h, w), UNKNOWN, dtype=np.uint8)
    out[r0, c0] = FREE
    for a in range(angles.shape[0]):
        dx = np.cos(angles[a])
        dy = np.sin(angles[a])
        if abs(dx) < 1e-12:
            dx = 0.0
        if abs(dy) < 1e-12:
            dy = 0.0
        ix = c0
        iy = r0
        if dx > 0:
            sx = 1
            ddx = 1.0 / dx
            tx = 0.5 * ddx
        elif dx < 0:
            sx = -1
            ddx = 1.0 / abs(dx)
            tx = 0.5 * ddx
        else:
            sx = 0
            tx = np.inf
            ddx = np.inf
        if dy > 0:
            sy = 1
            ddy = 1.0 / dy
            ty = 0.5 * ddy
        elif dy < 0:
            sy = -1
            ddy = 1.0 / abs(dy)
            ty = 0.5 * ddy
        else:
            sy = 0
            ty = np.inf
            ddy = np.inf
        while True:
            if abs(tx - ty) <= 1e-9:
                if tx > max_range:
                    break
                stop_a = _visit(world, out, iy, ix + sx)
                stop_b = _visit(world, out, iy + sy, ix)
                if stop_a or stop_b:
                    break
                ix += sx
                iy += sy
                tx += ddx
                ty += ddy
            elif tx < ty:
                if tx > max_range:
                    break
                ix += sx
                tx += ddx
            else:
                if ty > max_range:
                    break
                iy += sy
                ty += ddy
            if _visit(world, out, iy, ix):
                break
    return out


@njit(cache=True)
def bfs8(free, r, c):
    """Unit-cost 8-connected BFS distances from (r, c); -1 where unreachable."""
    h, w = free.shape
    dist = np.full((h, w), -1, dtype=np.int64)
    if not free[r, c]:
        return dist
    qr = np.empty(h * w, dtype=np.int64)
    qc = np.empty(h * w, dtype=np.int64)
    head = 0
    tail = 1
    qr[0] = r
    qc[0] = c
    dist[r, c] = 0
    while head < tail:
        i = qr[head]
        j = qc[head]
        head += 1
        for di in range(-1, 2):
            for dj in range(-1, 2):
                if di == 0 and dj == 0:
                    continue
                ni = i + di
                nj = j + dj
                if 0 <= ni < h and 0 <= nj < w and free[ni, nj] and dist[ni, nj] < 0:
                    dist[ni, nj] = dist[i, j] + 1
                    qr[tail] = ni
                    qc[tail] = nj
                    tail += 1
    return dist


@njit(cache=True)
def _heap_push(heap, n, key):
    heap[n] = key
    i = n
    while i > 0:
        p = (i - 1) >> 1
        if heap[p] <= heap[i]:
            break
        heap[p], heap[i] = heap[i], heap[p]
        i = p
    return n + 1


@njit(cache=True)
def _heap_pop(heap, n):
    top = heap[0]
    n -= 1
    heap[0] = heap[n]
    i = 0
    while True:
        lo = 2 * i + 1
        if lo >= n:
            break
        if lo + 1 < n and heap[lo + 1] < heap[lo]:
            lo += 1
        if heap[i] <= heap[lo]:
            break
        heap[i], heap[lo] = heap[lo], heap[i]
        i = lo
    return top, n


@njit(cache=True)
def astar8(free, sr, sc, gr, gc):
    """8-connected unit-cost A* with a Chebyshev heuristic.

    Heap keys pack (f, h, row-major index) so ties break deterministically on
    lower f, then lower h, then lower index.  Returns an (n, 2) path, empty
    when the goal is unreachable.
    """
    h, w = free.shape
    empty = np.empty((0, 2), dtype=np.int64)
    if not free[sr, sc] or not free[gr, gc]:
        return empty
    n_cells = h * w
    g = np.full(n_cells, -1, dtype=np.int64)
    parent = np.full(n_cells, -1, dtype=np.int64)
    closed = np.zeros(n_cells, dtype=np.bool_)
    heap = np.empty(8 * n_cells + 8, dtype=np.int64)
    start = sr * w + sc
    goal = gr * w + gc
    g[start] = 0
    h0 = max(abs(sr - gr), abs(sc - gc))
    n = _heap_push(heap, 0, ((h0 << 12) | h0) << 24 | start)
    found = False
    while n > 0:
        key, n = _heap_pop(heap, n)
        idx = key & ((1 << 24) - 1)
        if closed[idx]:
            continue
        closed[idx] = True
        if idx == goal:
            found = True
            break
        i = idx // w
        j = idx % w
        for di in range(-1, 2):
            for dj in range(-1, 2):
                if di == 0 and dj == 0:
                    continue
                ni = i + di
                nj = j + dj
                if ni < 0 or ni >= h or nj < 0 or nj >= w or not free[ni, nj]:
                    continue
                nidx = ni * w + nj
                if closed[nidx]:
                    continue
                ng = g[idx] + 1
                if g[nidx] < 0 or ng < g[nidx]:
                    g[nidx] = ng
                    parent[nidx] = idx
                    hh = max(abs(ni - gr), abs(nj - gc))
                    n = _heap_push(heap, n, (((ng + hh) << 12) | hh) << 24 | nidx)
    if not found:
        return empty
    length = g[goal] + 1
    path = np.empty((length, 2), dtype=np.int64)
    idx = goal
    for k in range(length - 1, -1, -1):
        path[k, 0] = idx // w
        path[k, 1] = idx % w
        idx = parent[idx]
    return path


@njit(cache=True)
def held_karp(dist):
    """Cheapest open path from node 0 through all other nodes.

    Returns (cost, order) where order lists the visited nodes (excluding 0).
    """
    n = dist.shape[0] - 1
    order = np.empty(n, dtype=np.int64)
    if n == 0:
        return 0.0, order
    full = (1 << n) - 1
    dp = np.full((1 << n, n), np.inf)
    par = np.full((1 << n, n), -1, dtype=np.int64)
    for j in range(n):
        dp[1 << j, j] = dist[0, j + 1]
    for mask in range(1, full + 1):
        for j in range(n):
            if not (mask >> j) & 1:
                continue
            prev = mask ^ (1 << j)
            if prev == 0:
                continue
            best = np.inf
            arg = -1
            for k in range(n):
                if (prev >> k) & 1:
                    v = dp[prev, k] + dist[k + 1, j + 1]
                    if v < best:
                        best = v
                        arg = k
            dp[mask, j] = best
            par[mask, j] = arg
    best = np.inf
    last = -1
    for j in range(n):
        if dp[full, j] < best:
            best = dp[full, j]
            last = j
    mask = full
    for pos in range(n - 1, -1, -1):
        order[pos] = last + 1
        k = par[mask, last]
        mask ^= 1 << last
        last = k
    return best, order


@njit(cache=True)
def box_field(boxes, h, w, gamma):
    """Gated max-merge of per-box truncated distance fields on the cell lattice.

    boxes is (K, 5): x0, y0, x1, y1, q.  Besides the value, returns the bookkeeping
    needed for the backward pass: winning box, winning axis term (0: x0, 1: x1,
    2: y0, 3: y1), whether that term is in its linear zone, and the winner's
    ungated value.
    """
    k_boxes = boxes.shape[0]
    value = np.full((h, w), -gamma)
    winner = np.zeros((h, w), dtype=np.int32)
    term = np.zeros((h, w), dtype=np.int8)
    lin = np.zeros((h, w), dtype=np.bool_)
    fw = np.full((h, w), -gamma)
    for i in range(h):
        y = float(i)
        for j in range(w):
            x = float(j)
            best = -np.inf
            for k in range(k_boxes):
                t0 = x - boxes[k, 0]
                t1 = boxes[k, 2] - x
                t2 = y - boxes[k, 1]
                t3 = boxes[k, 3] - y
                v0 = min(max(t0, -gamma), gamma)
                v1 = min(max(t1, -gamma), gamma)
                v2 = min(max(t2, -gamma), gamma)
                v3 = min(max(t3, -gamma), gamma)
                f = v0
                t = 0
                raw = t0
                if v1 < f:
                    f = v1
                    t = 1
                    raw = t1
                if v2 < f:
                    f = v2
                    t = 2
                    raw = t2
                if v3 < f:
                    f = v3
                    t = 3
                    raw = t3
                q = boxes[k, 4]
                gv = q * (f + gamma) - gamma
                if gv > best:
                    best = gv
                    winner[i, j] = k
                    term[i, j] = t
                    fw[i, j] = f
                    if t == 0 or t == 2:
                        lin[i, j] = -gamma < raw and raw <= gamma
                    else:
                        lin[i, j] = -gamma <= raw and raw < gamma
            if k_boxes > 0:
                value[i, j] = best
    return value, winner, term, lin, fw


@njit(cache=True)
def box_field_backward(boxes, winner, term, lin, fw, grad_value, gamma):
    """Accumulate dL/d(box params) from dL/d(field) using box_field's bookkeeping."""
    k_boxes = boxes.shape[0]
    grad = np.zeros((k_boxes, 5))
    if k_boxes == 0:
        return grad
    h, w = grad_value.shape
    for i in range(h):
        for j in range(w):
            gv = grad_value[i, j]
            if gv == 0.0:
                continue
            k = winner[i, j]
            grad[k, 4] += gv * (fw[i, j] + gamma)
            if lin[i, j]:
                t = term[i, j]
                q = boxes[k, 4]
                if t == 0:
                    grad[k, 0] -= gv * q
                elif t == 1:
                    grad[k, 2] += gv * q
                elif t == 2:
                    grad[k, 1] -= gv * q
                else:
                    grad[k, 3] += gv * q
    return grad
