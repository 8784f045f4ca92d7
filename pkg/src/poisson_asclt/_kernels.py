"""Compiled inner loops for the grid index and planar Voronoi geometry.

All distance comparisons use squared distances computed as
``sum((p - x)**2)`` in coordinate order, with no epsilon, so results match
a brute-force scan written the same way.
"""

import math

import numpy as np
from numba import njit

# ---------------------------------------------------------------------------
# ordering of candidates: squared distance, then coordinates, then index


@njit(cache=True, nogil=True)
def _less(points, a, da, b, db):
    if da < db:
        return True
    if da > db:
        return False
    for c in range(points.shape[1]):
        if points[a, c] < points[b, c]:
            return True
        if points[a, c] > points[b, c]:
            return False
    return a < b


@njit(cache=True, nogil=True)
def _dist2(points, j, x):
    s = 0.0
    for c in range(points.shape[1]):
        t = points[j, c] - x[c]
        s += t * t
    return s


@njit(cache=True, nogil=True)
def _cell_of(x, origin, h, dims, out):
    for c in range(x.shape[0]):
        out[c] = np.int64(math.floor((x[c] - origin[c]) / h))


@njit(cache=True, nogil=True)
def _offer(points, j, dj, best_idx, best_d2, count, k):
    """Insert candidate ``j`` into the sorted top-k buffers; return new count."""
    if count < k:
        pos = count
        count += 1
    elif _less(points, j, dj, best_idx[k - 1], best_d2[k - 1]):
        pos = k - 1
    else:
        return count
    while pos > 0 and _less(points, j, dj, best_idx[pos - 1], best_d2[pos - 1]):
        best_idx[pos] = best_idx[pos - 1]
        best_d2[pos] = best_d2[pos - 1]
        pos -= 1
    best_idx[pos] = j
    best_d2[pos] = dj
    return count


@njit(cache=True, nogil=True)
def knn_point(points, origin, h, dims, strides, cell_start, order, x, k, skip, skip_zero):
    """Indices of the ``k`` nearest points to ``x`` in ascending order.

    ``skip`` is an index to leave out (``-1`` for none); ``skip_zero`` drops
    points coinciding with ``x``.
    """
    d = points.shape[1]
    best_idx = np.empty(k, dtype=np.int64)
    best_d2 = np.empty(k, dtype=np.float64)
    count = 0
    if points.shape[0] == 0 or k <= 0:
        return best_idx[:0]
    centre = np.empty(d, dtype=np.int64)
    _cell_of(x, origin, h, dims, centre)
    max_ring = 0
    for c in range(d):
        far = max(abs(centre[c]), abs(centre[c] - (dims[c] - 1)))
        if far > max_ring:
            max_ring = far
    off = np.empty(d, dtype=np.int64)
    r = 0
    while True:
        # enumerate offsets in [-r, r]^d with Chebyshev norm exactly r
        for c in range(d):
            off[c] = -r
        while True:
            on_shell = False
            inside = True
            lin = 0
            for c in range(d):
                if off[c] == r or off[c] == -r:
                    on_shell = True
                cc = centre[c] + off[c]
                if cc < 0 or cc >= dims[c]:
                    inside = False
                    break
                lin += cc * strides[c]
            if (on_shell or r == 0) and inside:
                for t in range(cell_start[lin], cell_start[lin + 1]):
                    j = order[t]
                    if j == skip:
                        continue
                    dj = _dist2(points, j, x)
                    if skip_zero and dj == 0.0:
                        continue
                    count = _offer(points, j, dj, best_idx, best_d2, count, k)
            # advance the odometer
            c = d - 1
            while c >= 0:
                off[c] += 1
                if off[c] <= r:
                    break
                off[c] = -r
                c -= 1
            if c < 0:
                break
        if r >= max_ring:
            break
        if count == k:
            bound = r * h * (1.0 - 1e-9)
            if best_d2[k - 1] < bound * bound:
                break
        r += 1
    return best_idx[:count]


@njit(cache=True, nogil=True)
def knn_all(points, origin, h, dims, strides, cell_start, order, k):
    n = points.shape[0]
    kk = min(k, max(n - 1, 0))
    out = np.full((n, kk), -1, dtype=np.int64)
    for i in range(n):
        res = knn_point(points, origin, h, dims, strides, cell_start, order, points[i], kk, i, False)
        for t in range(res.shape[0]):
            out[i, t] = res[t]
    return out


@njit(cache=True, nogil=True)
def _range_into(points, origin, h, dims, strides, cell_start, order, x, r, out):
    """Write the (unsorted) indices of points in ``B(x, r)`` to ``out``; return the count."""
    d = points.shape[1]
    count = 0
    if points.shape[0] == 0:
        return 0
    lo = np.empty(d, dtype=np.int64)
    hi = np.empty(d, dtype=np.int64)
    for c in range(d):
        a = np.int64(math.floor((x[c] - r - origin[c]) / h)) - 1
        b = np.int64(math.floor((x[c] + r - origin[c]) / h)) + 1
        if a < 0:
            a = 0
        if b > dims[c] - 1:
            b = dims[c] - 1
        if a > b:
            return 0
        lo[c] = a
        hi[c] = b
    r2 = r * r
    cur = lo.copy()
    while True:
        lin = 0
        for c in range(d):
            lin += cur[c] * strides[c]
        for t in range(cell_start[lin], cell_start[lin + 1]):
            j = order[t]
            if _dist2(points, j, x) <= r2:
                out[count] = j
                count += 1
        c = d - 1
        while c >= 0:
            cur[c] += 1
            if cur[c] <= hi[c]:
                break
            cur[c] = lo[c]
            c -= 1
        if c < 0:
            break
    return count


@njit(cache=True, nogil=True)
def range_point(points, origin, h, dims, strides, cell_start, order, x, r):
    """Sorted indices of points in the closed ball ``B(x, r)``."""
    out = np.empty(points.shape[0], dtype=np.int64)
    count = _range_into(points, origin, h, dims, strides, cell_start, order, x, r, out)
    res = out[:count].copy()
    res.sort()
    return res


@njit(cache=True, nogil=True)
def pairs_within(points, origin, h, dims, strides, cell_start, order, r):
    """All index pairs ``i < j`` with ``|p_i - p_j| <= r``, lexicographically sorted."""
    n = points.shape[0]
    cap = 16 * n + 16
    first = np.empty(cap, dtype=np.int64)
    second = np.empty(cap, dtype=np.int64)
    buf = np.empty(n, dtype=np.int64)
    m = 0
    for i in range(n):
        cnt = _range_into(points, origin, h, dims, strides, cell_start, order, points[i], r, buf)
        nb = np.sort(buf[:cnt])
        for t in range(cnt):
            j = nb[t]
            if j <= i:
                continue
            if m == cap:
                cap *= 2
                f2 = np.empty(cap, dtype=np.int64)
                s2 = np.empty(cap, dtype=np.int64)
                f2[:m] = first[:m]
                s2[:m] = second[:m]
                first = f2
                second = s2
            first[m] = i
            second[m] = j
            m += 1
    return first[:m].copy(), second[:m].copy()


# ---------------------------------------------------------------------------
# planar polygons


@njit(cache=True, nogil=True)
def clip_halfplane(px, py, m, ax, ay, mx, my, qx, qy):
    """Sutherland-Hodgman step keeping ``ax*(x-mx) + ay*(y-my) <= 0``.

    Writes the result to ``qx, qy`` and returns its vertex count. A polygon
    entirely inside is copied unchanged, vertex for vertex.
    """
    if m == 0:
        return 0
    out = 0
    sx = px[m - 1]
    sy = py[m - 1]
    ss = ax * (sx - mx) + ay * (sy - my)
    for v in range(m):
        ex = px[v]
        ey = py[v]
        se = ax * (ex - mx) + ay * (ey - my)
        if se <= 0.0:
            if ss > 0.0:
                t = ss / (ss - se)
                qx[out] = sx + t * (ex - sx)
                qy[out] = sy + t * (ey - sy)
                out += 1
            qx[out] = ex
            qy[out] = ey
            out += 1
        elif ss <= 0.0:
            t = ss / (ss - se)
            qx[out] = sx + t * (ex - sx)
            qy[out] = sy + t * (ey - sy)
            out += 1
        sx = ex
        sy = ey
        ss = se
    return out


@njit(cache=True, nogil=True)
def polygon_area(px, py, m):
    s = 0.0
    for v in range(m):
        w = v + 1 if v + 1 < m else 0
        s += px[v] * py[w] - px[w] * py[v]
    return 0.5 * s


@njit(cache=True, nogil=True)
def _edge_disk_area(ax, ay, bx, by, r):
    # signed area of triangle (0, a, b) intersected with the disk |y| <= r
    dx = bx - ax
    dy = by - ay
    qa = dx * dx + dy * dy
    if qa == 0.0:
        return 0.0
    qb = ax * dx + ay * dy
    qc = ax * ax + ay * ay - r * r
    ts = np.empty(4)
    nt = 1
    ts[0] = 0.0
    disc = qb * qb - qa * qc
    if disc > 0.0:
        sq = math.sqrt(disc)
        t1 = (-qb - sq) / qa
        t2 = (-qb + sq) / qa
        if 0.0 < t1 < 1.0:
            ts[nt] = t1
            nt += 1
        if 0.0 < t2 < 1.0:
            ts[nt] = t2
            nt += 1
    ts[nt] = 1.0
    nt += 1
    area = 0.0
    for u in range(nt - 1):
        t0 = ts[u]
        t1 = ts[u + 1]
        x0 = ax + t0 * dx
        y0 = ay + t0 * dy
        x1 = ax + t1 * dx
        y1 = ay + t1 * dy
        tm = 0.5 * (t0 + t1)
        xm = ax + tm * dx
        ym = ay + tm * dy
        cross = x0 * y1 - y0 * x1
        if xm * xm + ym * ym <= r * r:
            area += 0.5 * cross
        else:
            area += 0.5 * r * r * math.atan2(cross, x0 * x1 + y0 * y1)
    return area


@njit(cache=True, nogil=True)
def polygon_disk_area(px, py, m, cx, cy, r):
    """Area of a counterclockwise polygon intersected with a disk."""
    s = 0.0
    for v in range(m):
        w = v + 1 if v + 1 < m else 0
        s += _edge_disk_area(px[v] - cx, py[v] - cy, px[w] - cx, py[w] - cy, r)
    return s


@njit(cache=True, nogil=True)
def polygon_halfspaces_area(px, py, m, normals, offsets):
    """Area of a polygon intersected with ``{y : normals @ y <= offsets}``."""
    cap = m + normals.shape[0] + 2
    ax_ = np.empty(cap)
    ay_ = np.empty(cap)
    bx_ = np.empty(cap)
    by_ = np.empty(cap)
    ax_[:m] = px[:m]
    ay_[:m] = py[:m]
    cnt = m
    for h in range(normals.shape[0]):
        nx = normals[h, 0]
        ny = normals[h, 1]
        nn = nx * nx + ny * ny
        mx = nx * offsets[h] / nn
        my = ny * offsets[h] / nn
        cnt = clip_halfplane(ax_, ay_, cnt, nx, ny, mx, my, bx_, by_)
        ax_, bx_ = bx_, ax_
        ay_, by_ = by_, ay_
        if cnt == 0:
            return 0.0
    return polygon_area(ax_, ay_, cnt)


# ---------------------------------------------------------------------------
# Voronoi cells in a box


@njit(cache=True, nogil=True)
def _box_polygon(lo, hi, px, py):
    px[0] = lo[0]
    py[0] = lo[1]
    px[1] = hi[0]
    py[1] = lo[1]
    px[2] = hi[0]
    py[2] = hi[1]
    px[3] = lo[0]
    py[3] = hi[1]
    return 4


@njit(cache=True, nogil=True)
def clip_sequence(points, i, nbrs, lo, hi, early_stop):
    """Clip the box by bisectors of ``i`` with each neighbour in turn.

    With ``early_stop`` the loop ends once the next neighbour is farther than
    twice the current cell's circumradius about ``p_i``; every later bisector
    would leave the polygon untouched. Returns ``(xs, ys, count, finished)``
    where ``finished`` reports that the stop rule fired.
    """
    cap = nbrs.shape[0] + 8
    px = np.empty(cap)
    py = np.empty(cap)
    qx = np.empty(cap)
    qy = np.empty(cap)
    m = _box_polygon(lo, hi, px, py)
    xi = points[i, 0]
    yi = points[i, 1]
    finished = False
    for t in range(nbrs.shape[0]):
        j = nbrs[t]
        ax = points[j, 0] - xi
        ay = points[j, 1] - yi
        if early_stop:
            r2 = 0.0
            for v in range(m):
                ddx = px[v] - xi
                ddy = py[v] - yi
                q = ddx * ddx + ddy * ddy
                if q > r2:
                    r2 = q
            if ax * ax + ay * ay > 4.0 * r2 * (1.0 + 1e-9):
                finished = True
                break
        m = clip_halfplane(px, py, m, ax, ay, 0.5 * (points[j, 0] + xi), 0.5 * (points[j, 1] + yi), qx, qy)
        px, qx = qx, px
        py, qy = qy, py
    return px[:m].copy(), py[:m].copy(), m, finished


@njit(cache=True, nogil=True)
def voronoi_cell(points, origin, h, dims, strides, cell_start, order, i, lo, hi):
    n = points.shape[0]
    k = min(n - 1, 16)
    while True:
        nbrs = knn_point(points, origin, h, dims, strides, cell_start, order, points[i], k, i, False)
        xs, ys, m, finished = clip_sequence(points, i, nbrs, lo, hi, True)
        if finished or k >= n - 1:
            return xs, ys
        k = min(n - 1, 2 * k)


@njit(cache=True, nogil=True)
def voronoi_areas(points, origin, h, dims, strides, cell_start, order, which, lo, hi,
                  a_kind, a_vec, a_scalar, a_normals, a_offsets):
    """Cell area and cell-in-A area for each index in ``which``.

    ``a_kind``: 0 box (``a_vec`` = lower then upper), 1 disk (``a_vec`` =
    centre, ``a_scalar`` = radius), 2 half-spaces.
    """
    out = np.empty((which.shape[0], 2))
    for t in range(which.shape[0]):
        xs, ys = voronoi_cell(points, origin, h, dims, strides, cell_start, order, which[t], lo, hi)
        m = xs.shape[0]
        out[t, 0] = polygon_area(xs, ys, m)
        if a_kind == 1:
            out[t, 1] = polygon_disk_area(xs, ys, m, a_vec[0], a_vec[1], a_scalar)
        else:
            out[t, 1] = polygon_halfspaces_area(xs, ys, m, a_normals, a_offsets)
    return out


@njit(cache=True, nogil=True)
def nearest_all(points, origin, h, dims, strides, cell_start, order, queries):
    out = np.empty(queries.shape[0], dtype=np.int64)
    for q in range(queries.shape[0]):
        res = knn_point(points, origin, h, dims, strides, cell_start, order, queries[q], 1, -1, False)
        out[q] = res[0] if res.shape[0] else -1
    return out
