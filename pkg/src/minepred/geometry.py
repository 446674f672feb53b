"""Planar polygon helpers shared by the rasterizer, the generator and the evaluator."""

from __future__ import annotations

import numpy as np


def as_polygon(vertices) -> np.ndarray:
    """Return ``vertices`` as a float64 ``(V, 2)`` array, dropping a repeated closing vertex."""
    poly = np.asarray(vertices, dtype=np.float64)
    if poly.ndim != 2 or poly.shape[1] != 2:
        raise ValueError(f"polygon must have shape (V, 2), got {poly.shape}")
    if len(poly) > 3 and np.array_equal(poly[0], poly[-1]):
        poly = poly[:-1]
    return poly


def points_in_polygon(px, py, polygon) -> np.ndarray:
    """Even-odd (crossing number) membership test, vectorized over points.

    A horizontal ray is cast towards +x from every point; an edge counts when
    it straddles the ray's ``y`` with the half-open rule ``(y0 <= y) != (y1 <= y)``,
    so shared vertices are never double counted.

    Args:
        px, py: Arrays of the same shape with query coordinates.
        polygon: ``(V, 2)`` vertex array, implicitly closed.

    Returns:
        Boolean array shaped like ``px``.
    """
    poly = as_polygon(polygon)
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    x0, y0 = poly[:, 0], poly[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)

    flat_x = px.reshape(-1, 1)
    flat_y = py.reshape(-1, 1)
    straddle = (y0 <= flat_y) != (y1 <= flat_y)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = x0 + (flat_y - y0) * (x1 - x0) / (y1 - y0)
    hits = straddle & (flat_x < x_cross)
    inside = (np.count_nonzero(hits, axis=1) % 2) == 1
    return inside.reshape(px.shape)


def point_in_any(points, polygons) -> np.ndarray:
    """Boolean mask of which ``(N, 2)`` points fall inside at least one polygon."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    mask = np.zeros(len(pts), dtype=bool)
    for poly in polygons:
        mask |= points_in_polygon(pts[:, 0], pts[:, 1], poly)
    return mask


def fill_mask(polygon, width: int, height: int, row_block: int = 256) -> np.ndarray:
    """Scanline-fill a polygon given in continuous pixel coordinates.

    Pixel ``(col, row)`` covers ``[col, col+1) x [row, row+1)`` measured from
    the bottom-left corner and belongs to the polygon when its centre does.
    The returned mask is indexed ``mask[row, col]`` with row 0 at the bottom.
    """
    poly = as_polygon(polygon)
    mask = np.zeros((height, width), dtype=bool)
    if not np.all(np.isfinite(poly)):
        raise ValueError("polygon has non-finite vertices")
    c_lo = max(int(np.floor(poly[:, 0].min() - 0.5)), 0)
    c_hi = min(int(np.ceil(poly[:, 0].max() + 0.5)), width)
    r_lo = max(int(np.floor(poly[:, 1].min() - 0.5)), 0)
    r_hi = min(int(np.ceil(poly[:, 1].max() + 0.5)), height)
    if c_lo >= c_hi or r_lo >= r_hi:
        return mask

    x0, y0 = poly[:, 0], poly[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    cx = np.arange(c_lo, c_hi, dtype=np.float64) + 0.5
    for start in range(r_lo, r_hi, row_block):
        stop = min(start + row_block, r_hi)
        cy = (np.arange(start, stop, dtype=np.float64) + 0.5)[:, None]
        straddle = (y0 <= cy) != (y1 <= cy)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_cross = x0 + (cy - y0) * (x1 - x0) / (y1 - y0)
        x_cross = np.where(straddle, x_cross, -np.inf)
        # crossings strictly to the right of each pixel centre, per scanline
        hits = cx[None, :, None] < x_cross[:, None, :]
        mask[start:stop, c_lo:c_hi] = (np.count_nonzero(hits, axis=2) % 2) == 1
    return mask


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return 0 if v == 0 else (1 if v > 0 else -1)

    def on_segment(a, b, c):
        return min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and on_segment(p1, p2, q1):
        return True
    if o2 == 0 and on_segment(p1, p2, q2):
        return True
    if o3 == 0 and on_segment(q1, q2, p1):
        return True
    if o4 == 0 and on_segment(q1, q2, p2):
        return True
    return False


def is_simple(polygon) -> bool:
    """True when no two non-adjacent edges of the closed polygon touch."""
    poly = as_polygon(polygon)
    n = len(poly)
    if n < 3:
        return False
    edges = [(poly[i], poly[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_cross(*edges[i], *edges[j]):
                return False
    return True


def rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def oriented_box(cx: float, cy: float, theta: float, length: float, width: float) -> np.ndarray:
    """Corners of a rectangle centred on ``(cx, cy)`` with its length along ``theta`` (CCW order)."""
    half = np.array([[length, -width], [length, width], [-length, width], [-length, -width]]) / 2.0
    return half @ rotation(theta).T + np.array([cx, cy])


def convex_hull(points) -> np.ndarray:
    """Monotone-chain convex hull, CCW, without repeated endpoint."""
    pts = sorted(map(tuple, np.asarray(points, dtype=np.float64)))
    if len(pts) <= 2:
        return np.array(pts)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])
