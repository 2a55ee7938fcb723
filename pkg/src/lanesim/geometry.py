"""Planar geometry primitives shared by the map, simulation, and collision code.

Conventions: right-handed frame, positions in meters, headings in radians
counterclockwise from +x.  Oriented boxes are represented as
(cx, cy, heading, length, width) tuples or the corresponding 4x2 corner
arrays in counterclockwise order.
"""

import math

import numpy as np

TWO_PI = 2.0 * np.pi


def wrap_pi(a: float) -> float:
    """Scalar fast path of wrap_angle; maps the pi boundary to -pi."""
    return (a + math.pi) % TWO_PI - math.pi


def wrap_angle(a):
    """Wrap angle(s) to (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    wrapped = a - TWO_PI * np.floor((a + np.pi) / TWO_PI)
    # floor maps +pi to -pi; keep +pi canonical
    wrapped = np.where(wrapped <= -np.pi, wrapped + TWO_PI, wrapped)
    if wrapped.ndim == 0:
        return float(wrapped)
    return wrapped


def unit_vector(heading):
    """Unit direction vector(s) for heading angle(s)."""
    h = np.asarray(heading, dtype=float)
    return np.stack([np.cos(h), np.sin(h)], axis=-1)


def rotate_into_frame(points, origin, heading):
    """Express global points in the local frame at origin with x along heading."""
    p = np.asarray(points, dtype=float) - np.asarray(origin, dtype=float)
    c, s = np.cos(heading), np.sin(heading)
    x = p[..., 0] * c + p[..., 1] * s
    y = -p[..., 0] * s + p[..., 1] * c
    return np.stack([x, y], axis=-1)


def polyline_lengths(points):
    """Per-segment lengths of a polyline given as (n, 2) array."""
    pts = np.asarray(points, dtype=float)
    return np.linalg.norm(np.diff(pts, axis=0), axis=1)


def polyline_arclength(points):
    """Total arclength of a polyline."""
    return float(polyline_lengths(points).sum())


def resample_polyline(points, spacing):
    """Resample a polyline at fixed spacing, keeping both endpoints.

    Returns (positions (m, 2), arclengths (m,), headings (m,)).  Interior
    samples sit exactly `spacing` apart along the original polyline; the
    final segment may be shorter.  Headings are tangents of the resampled
    curve, one-sided at the endpoints.
    """
    pts = np.asarray(points, dtype=float)
    seg_len = polyline_lengths(pts)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]
    n_regular = int(np.floor(total / spacing + 1e-9))
    s_values = [i * spacing for i in range(n_regular + 1)]
    if total - s_values[-1] > 1e-9:
        s_values.append(total)
    s = np.asarray(s_values)

    # locate each arclength in the original segments
    idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg_len) - 1)
    frac = (s - cum[idx]) / np.where(seg_len[idx] > 0, seg_len[idx], 1.0)
    pos = pts[idx] + frac[:, None] * (pts[idx + 1] - pts[idx])

    # tangent headings: central differences inside, one-sided at ends
    diffs = np.diff(pos, axis=0)
    head = np.empty(len(pos))
    head[:-1] = np.arctan2(diffs[:, 1], diffs[:, 0])
    head[-1] = head[-2] if len(pos) > 1 else 0.0
    if len(pos) > 2:
        mid = 0.5 * (pos[2:] - pos[:-2])
        head[1:-1] = np.arctan2(mid[:, 1], mid[:, 0])
    return pos, s, head


def box_corners(cx, cy, heading, length, width):
    """Corners of an oriented box, counterclockwise from front-left."""
    c, s = np.cos(heading), np.sin(heading)
    hl, hw = 0.5 * length, 0.5 * width
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([cx, cy])


def boxes_intersect(corners_a, corners_b):
    """Separating-axis test for two oriented boxes given as 4x2 corner arrays.

    Touching boundaries count as intersecting.
    """
    for corners in (corners_a, corners_b):
        edges = corners[[1, 3]] - corners[[0, 0]]
        for edge in edges:
            axis = np.array([-edge[1], edge[0]])
            pa = corners_a @ axis
            pb = corners_b @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def point_in_box(points, corners):
    """Test whether point(s) lie inside an oriented box (inclusive)."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    ax1 = corners[0] - corners[1]
    ax2 = corners[1] - corners[2]
    rel = p - corners[2]
    d1 = rel @ ax1
    d2 = rel @ ax2
    inside = (
        (d1 >= -1e-12)
        & (d1 <= ax1 @ ax1 + 1e-12)
        & (d2 >= -1e-12)
        & (d2 <= ax2 @ ax2 + 1e-12)
    )
    return inside if inside.size > 1 else bool(inside[0])


def segments_intersect(p1, p2, q1, q2):
    """Test whether segment p1-p2 intersects segment q1-q2 (inclusive)."""
    d1 = _cross(q2 - q1, p1 - q1)
    d2 = _cross(q2 - q1, p2 - q1)
    d3 = _cross(p2 - p1, q1 - p1)
    d4 = _cross(p2 - p1, q2 - p1)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)):
        return True
    for d, a, b, c in ((d1, q1, q2, p1), (d2, q1, q2, p2), (d3, p1, p2, q1), (d4, p1, p2, q2)):
        if d == 0 and _on_segment(a, b, c):
            return True
    return False


def _cross(u, v):
    return u[0] * v[1] - u[1] * v[0]


def _on_segment(a, b, c):
    """Whether collinear point c lies on segment a-b."""
    return (
        min(a[0], b[0]) - 1e-12 <= c[0] <= max(a[0], b[0]) + 1e-12
        and min(a[1], b[1]) - 1e-12 <= c[1] <= max(a[1], b[1]) + 1e-12
    )


def box_crosses_polyline(corners, polyline):
    """Whether an oriented box touches a polyline.

    True when any polyline segment intersects a box edge or any polyline
    vertex lies inside the box.
    """
    pts = np.asarray(polyline, dtype=float)
    if np.any(point_in_box(pts, corners)):
        return True
    box_edges = [(corners[i], corners[(i + 1) % 4]) for i in range(4)]
    for i in range(len(pts) - 1):
        for a, b in box_edges:
            if segments_intersect(a, b, pts[i], pts[i + 1]):
                return True
    return False
