"""Signed distance to a triangle mesh.

Magnitude is the exact distance to the closest triangle, found through a
bounding-volume hierarchy. The sign comes from the generalized winding number
(inside when it exceeds 0.5), which tolerates meshes that are not perfectly
closed. Far-away BVH nodes contribute to the winding number through their
area-weighted dipole; nodes close to the query are summed exactly.
"""

from __future__ import annotations

import numba
import numpy as np
from numba import prange

LEAF_SIZE = 4
# A node is treated as a dipole when the query is this many node radii away.
FAR_FIELD_RATIO = 2.5
STACK_DEPTH = 128
# cells along the longest bounding-box side of the sign cache
SIGN_GRID_RESOLUTION = 96


@numba.njit(cache=True, inline="always")
def _point_triangle_sq(px, py, pz, tri):
    """Squared distance from a point to a triangle (closest-feature regions)."""
    ax, ay, az = tri[0, 0], tri[0, 1], tri[0, 2]
    bx, by, bz = tri[1, 0], tri[1, 1], tri[1, 2]
    cx, cy, cz = tri[2, 0], tri[2, 1], tri[2, 2]
    abx, aby, abz = bx - ax, by - ay, bz - az
    acx, acy, acz = cx - ax, cy - ay, cz - az
    apx, apy, apz = px - ax, py - ay, pz - az
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        qx, qy, qz = ax, ay, az
    else:
        bpx, bpy, bpz = px - bx, py - by, pz - bz
        d3 = abx * bpx + aby * bpy + abz * bpz
        d4 = acx * bpx + acy * bpy + acz * bpz
        vc = d1 * d4 - d3 * d2
        cpx, cpy, cpz = px - cx, py - cy, pz - cz
        d5 = abx * cpx + aby * cpy + abz * cpz
        d6 = acx * cpx + acy * cpy + acz * cpz
        vb = d5 * d2 - d1 * d6
        va = d3 * d6 - d5 * d4
        if d3 >= 0.0 and d4 <= d3:
            qx, qy, qz = bx, by, bz
        elif vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
            v = d1 / (d1 - d3)
            qx, qy, qz = ax + v * abx, ay + v * aby, az + v * abz
        elif d6 >= 0.0 and d5 <= d6:
            qx, qy, qz = cx, cy, cz
        elif vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
            w = d2 / (d2 - d6)
            qx, qy, qz = ax + w * acx, ay + w * acy, az + w * acz
        elif va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
            w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
            qx, qy, qz = bx + w * (cx - bx), by + w * (cy - by), bz + w * (cz - bz)
        else:
            denom = 1.0 / (va + vb + vc)
            v = vb * denom
            w = vc * denom
            qx = ax + abx * v + acx * w
            qy = ay + aby * v + acy * w
            qz = az + abz * v + acz * w
    dx, dy, dz = px - qx, py - qy, pz - qz
    return dx * dx + dy * dy + dz * dz


@numba.njit(cache=True, inline="always")
def _solid_angle(px, py, pz, tri):
    ax, ay, az = tri[0, 0] - px, tri[0, 1] - py, tri[0, 2] - pz
    bx, by, bz = tri[1, 0] - px, tri[1, 1] - py, tri[1, 2] - pz
    cx, cy, cz = tri[2, 0] - px, tri[2, 1] - py, tri[2, 2] - pz
    la = np.sqrt(ax * ax + ay * ay + az * az)
    lb = np.sqrt(bx * bx + by * by + bz * bz)
    lc = np.sqrt(cx * cx + cy * cy + cz * cz)
    det = ax * (by * cz - bz * cy) - ay * (bx * cz - bz * cx) + az * (bx * cy - by * cx)
    ab = ax * bx + ay * by + az * bz
    bc = bx * cx + by * cy + bz * cz
    ca = cx * ax + cy * ay + cz * az
    den = la * lb * lc + ab * lc + bc * la + ca * lb
    return 2.0 * np.arctan2(det, den)


@numba.njit(cache=True, inline="always")
def _box_sq(px, py, pz, lo, hi):
    d = 0.0
    if px < lo[0]:
        d += (lo[0] - px) ** 2
    elif px > hi[0]:
        d += (px - hi[0]) ** 2
    if py < lo[1]:
        d += (lo[1] - py) ** 2
    elif py > hi[1]:
        d += (py - hi[1]) ** 2
    if pz < lo[2]:
        d += (lo[2] - pz) ** 2
    elif pz > hi[2]:
        d += (pz - hi[2]) ** 2
    return d


@numba.njit(cache=True, parallel=True)
def _brute_distance(points, tris):
    out = np.empty(points.shape[0])
    for i in prange(points.shape[0]):
        best = np.inf
        for t in range(tris.shape[0]):
            d = _point_triangle_sq(points[i, 0], points[i, 1], points[i, 2], tris[t])
            if d < best:
                best = d
        out[i] = np.sqrt(best)
    return out


@numba.njit(cache=True, parallel=True)
def _brute_winding(points, tris):
    out = np.empty(points.shape[0])
    for i in prange(points.shape[0]):
        s = 0.0
        for t in range(tris.shape[0]):
            s += _solid_angle(points[i, 0], points[i, 1], points[i, 2], tris[t])
        out[i] = s / (4.0 * np.pi)
    return out


@numba.njit(cache=True)
def _nearest_sq(px, py, pz, tris, lo, hi, left, right, start, count, cutoff_sq, first_hit):
    """Smallest squared distance not above cutoff_sq, or inf if none.

    With first_hit set the search stops at the first triangle inside the
    cutoff, which is all a within-tolerance test needs.
    """
    stack = np.empty(STACK_DEPTH, dtype=np.int64)
    stack[0] = 0
    top = 1
    best = cutoff_sq
    found = False
    while top > 0:
        top -= 1
        node = stack[top]
        if _box_sq(px, py, pz, lo[node], hi[node]) > best:
            continue
        if left[node] < 0:
            for t in range(start[node], start[node] + count[node]):
                d = _point_triangle_sq(px, py, pz, tris[t])
                if d <= best:
                    best = d
                    found = True
                    if first_hit:
                        return best
            continue
        a, b = left[node], right[node]
        da = _box_sq(px, py, pz, lo[a], hi[a])
        db = _box_sq(px, py, pz, lo[b], hi[b])
        # push the farther child first so the nearer one is popped next
        if da < db:
            a, b = b, a
        stack[top] = a
        stack[top + 1] = b
        top += 2
    return best if found else np.inf


@numba.njit(cache=True)
def _winding_one(px, py, pz, tris, left, right, start, count, center, normal, radius):
    stack = np.empty(STACK_DEPTH, dtype=np.int64)
    stack[0] = 0
    top = 1
    total = 0.0
    while top > 0:
        top -= 1
        node = stack[top]
        dx = center[node, 0] - px
        dy = center[node, 1] - py
        dz = center[node, 2] - pz
        dist = np.sqrt(dx * dx + dy * dy + dz * dz)
        if left[node] < 0:
            for t in range(start[node], start[node] + count[node]):
                total += _solid_angle(px, py, pz, tris[t])
        elif dist > FAR_FIELD_RATIO * radius[node]:
            total += (dx * normal[node, 0] + dy * normal[node, 1] + dz * normal[node, 2]) / (dist * dist * dist)
        else:
            stack[top] = left[node]
            stack[top + 1] = right[node]
            top += 2
    return total / (4.0 * np.pi)


@numba.njit(cache=True, parallel=True)
def _bvh_distance(points, tris, lo, hi, left, right, start, count):
    out = np.empty(points.shape[0])
    for i in prange(points.shape[0]):
        out[i] = np.sqrt(
            _nearest_sq(points[i, 0], points[i, 1], points[i, 2], tris, lo, hi, left, right, start, count, np.inf, False)
        )
    return out


@numba.njit(cache=True, parallel=True)
def _bvh_within(points, tol, tris, lo, hi, left, right, start, count):
    out = np.empty(points.shape[0], dtype=np.bool_)
    tol_sq = tol * tol
    for i in prange(points.shape[0]):
        d = _nearest_sq(points[i, 0], points[i, 1], points[i, 2], tris, lo, hi, left, right, start, count, tol_sq, True)
        out[i] = d <= tol_sq
    return out


@numba.njit(cache=True, parallel=True)
def _bvh_winding(points, tris, left, right, start, count, center, normal, radius):
    out = np.empty(points.shape[0])
    for i in prange(points.shape[0]):
        out[i] = _winding_one(points[i, 0], points[i, 1], points[i, 2], tris, left, right, start, count, center, normal, radius)
    return out


# sign-cache states
_UNKNOWN, _OUTSIDE, _INSIDE, _MIXED = 0, 1, 2, 3


@numba.njit(cache=True)
def _inside_one(px, py, pz, orientation, tris, lo, hi, left, right, start, count, center, normal, radius):
    if _box_sq(px, py, pz, lo[0], hi[0]) > 0.0:
        return False
    return orientation * _winding_one(px, py, pz, tris, left, right, start, count, center, normal, radius) > 0.5


@numba.njit(cache=True, parallel=True)
def _bvh_inside(points, orientation, tris, lo, hi, left, right, start, count, center, normal, radius,
                grid_lo, cell, dims, cache):
    """Inside test with a lazily filled sign cache on a uniform grid.

    A cell whose center is farther from the surface than the cell's
    half-diagonal cannot contain surface, so every point in it shares the
    center's sign. Other cells fall back to a per-point winding number.
    """
    out = np.zeros(points.shape[0], dtype=np.bool_)
    half_diag_sq = 0.75 * cell * cell
    for i in prange(points.shape[0]):
        px, py, pz = points[i, 0], points[i, 1], points[i, 2]
        if _box_sq(px, py, pz, lo[0], hi[0]) > 0.0:
            continue
        ix = min(max(int((px - grid_lo[0]) / cell), 0), dims[0] - 1)
        iy = min(max(int((py - grid_lo[1]) / cell), 0), dims[1] - 1)
        iz = min(max(int((pz - grid_lo[2]) / cell), 0), dims[2] - 1)
        idx = (ix * dims[1] + iy) * dims[2] + iz
        state = cache[idx]
        if state == _UNKNOWN:
            cx = grid_lo[0] + (ix + 0.5) * cell
            cy = grid_lo[1] + (iy + 0.5) * cell
            cz = grid_lo[2] + (iz + 0.5) * cell
            near = _nearest_sq(cx, cy, cz, tris, lo, hi, left, right, start, count, half_diag_sq, True)
            if near <= half_diag_sq:
                state = _MIXED
            elif _inside_one(cx, cy, cz, orientation, tris, lo, hi, left, right, start, count, center, normal, radius):
                state = _INSIDE
            else:
                state = _OUTSIDE
            cache[idx] = state
        if state == _MIXED:
            out[i] = _inside_one(px, py, pz, orientation, tris, lo, hi, left, right, start, count, center, normal, radius)
        else:
            out[i] = state == _INSIDE
    return out


class MeshSDF:
    """BVH over a mesh's triangles supporting distance and inside queries."""

    def __init__(self, mesh):
        corners = np.ascontiguousarray(mesh.corners, dtype=np.float64)
        if not len(corners):
            raise ValueError("mesh has no triangles")
        self.orientation = -1.0 if mesh.signed_volume < 0 else 1.0
        self._build(corners)
        lo, hi = self.lo[0], self.hi[0]
        self.cell = max(float(np.max(hi - lo)), 1e-12) / SIGN_GRID_RESOLUTION
        self.grid_lo = lo.copy()
        self.dims = np.maximum(np.ceil((hi - lo) / self.cell).astype(np.int64), 1)
        self.sign_cache = np.zeros(int(np.prod(self.dims)), dtype=np.int8)

    def _build(self, corners: np.ndarray) -> None:
        centroids = corners.mean(axis=1)
        order = np.arange(len(corners))
        lo, hi, left, right, start, count = [], [], [], [], [], []
        # (node id, slice start, slice end) of `order`
        pending = [(0, 0, len(order))]
        lo.append(None), hi.append(None), left.append(-1), right.append(-1), start.append(0), count.append(0)
        while pending:
            node, a, b = pending.pop()
            idx = order[a:b]
            pts = corners[idx].reshape(-1, 3)
            lo[node], hi[node] = pts.min(axis=0), pts.max(axis=0)
            if b - a <= LEAF_SIZE:
                start[node], count[node] = a, b - a
                continue
            c = centroids[idx]
            axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
            order[a:b] = idx[np.argsort(c[:, axis], kind="stable")]
            mid = (a + b) // 2
            for side, (s, e) in enumerate(((a, mid), (mid, b))):
                child = len(lo)
                lo.append(None), hi.append(None), left.append(-1), right.append(-1), start.append(0), count.append(0)
                if side == 0:
                    left[node] = child
                else:
                    right[node] = child
                pending.append((child, s, e))
        self.tris = np.ascontiguousarray(corners[order])
        self.lo = np.asarray(lo)
        self.hi = np.asarray(hi)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.start = np.asarray(start, dtype=np.int64)
        self.count = np.asarray(count, dtype=np.int64)
        self._dipoles()

    def _dipoles(self) -> None:
        t = self.tris
        area_vec = 0.5 * np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
        area = np.linalg.norm(area_vec, axis=1)
        cen = t.mean(axis=1)
        n_nodes = len(self.left)
        self.center = np.zeros((n_nodes, 3))
        self.normal = np.zeros((n_nodes, 3))
        self.radius = np.zeros(n_nodes)
        # children always have larger ids than their parent
        leaf_range = {}
        for node in range(n_nodes - 1, -1, -1):
            if self.left[node] < 0:
                s, e = self.start[node], self.start[node] + self.count[node]
            else:
                s = min(leaf_range[self.left[node]][0], leaf_range[self.right[node]][0])
                e = max(leaf_range[self.left[node]][1], leaf_range[self.right[node]][1])
            leaf_range[node] = (s, e)
            w = area[s:e]
            total = w.sum()
            c = (w[:, None] * cen[s:e]).sum(axis=0) / total if total > 0 else cen[s:e].mean(axis=0)
            self.center[node] = c
            self.normal[node] = area_vec[s:e].sum(axis=0)
            self.radius[node] = np.sqrt(((t[s:e] - c) ** 2).sum(axis=2).max())

    @staticmethod
    def _points(points) -> np.ndarray:
        return np.ascontiguousarray(np.atleast_2d(np.asarray(points, dtype=np.float64)).reshape(-1, 3))

    def distance(self, points) -> np.ndarray:
        return _bvh_distance(self._points(points), self.tris, self.lo, self.hi, self.left, self.right, self.start, self.count)

    def within(self, points, tol: float) -> np.ndarray:
        """Whether each point lies within ``tol`` of the surface."""
        return _bvh_within(
            self._points(points), float(tol), self.tris, self.lo, self.hi, self.left, self.right, self.start, self.count
        )

    def winding(self, points) -> np.ndarray:
        w = _bvh_winding(
            self._points(points), self.tris, self.left, self.right, self.start, self.count,
            self.center, self.normal, self.radius,
        )
        return self.orientation * w

    def inside(self, points) -> np.ndarray:
        return _bvh_inside(
            self._points(points), self.orientation, self.tris, self.lo, self.hi, self.left, self.right,
            self.start, self.count, self.center, self.normal, self.radius,
            self.grid_lo, self.cell, self.dims, self.sign_cache,
        )

    def signed_distance(self, points) -> np.ndarray:
        d = self.distance(points)
        return np.where(self.inside(points), -d, d)


def signed_distance(mesh, points):
    """Signed distance (negative inside) for one point or an (N, 3) array."""
    single = np.ndim(points) == 1
    out = mesh.sdf.signed_distance(points)
    return float(out[0]) if single else out


def brute_force_distance(mesh, points) -> np.ndarray:
    """Unsigned distance by scanning every triangle."""
    return _brute_distance(MeshSDF._points(points), np.ascontiguousarray(mesh.corners))


def brute_force_winding(mesh, points) -> np.ndarray:
    """Exact generalized winding number summed over every triangle."""
    w = _brute_winding(MeshSDF._points(points), np.ascontiguousarray(mesh.corners))
    return -w if mesh.signed_volume < 0 else w


def brute_force_signed_distance(mesh, points) -> np.ndarray:
    d = brute_force_distance(mesh, points)
    return np.where(brute_force_winding(mesh, points) > 0.5, -d, d)
