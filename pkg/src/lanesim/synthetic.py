"""Hand-constructable synthetic maps for training and fixtures."""

import numpy as np

from .maps import Lane, MapBundle


def straight_map(n_lanes: int = 3, length: float = 400.0, lane_width: float = 3.5,
                 point_spacing: float = 10.0, map_id: str = "straight") -> MapBundle:
    """Parallel straight lanes along +x with shared road edges and boundaries.

    Lane i runs at y = i * lane_width; higher indices sit to the left of lower
    ones.  Interior lane boundaries are crossable; the outer limits of the
    roadway are road edges.
    """
    xs = np.arange(0.0, length + 0.5 * point_spacing, point_spacing)
    if xs[-1] < length:
        xs = np.append(xs, length)

    def line(y):
        return np.stack([xs, np.full_like(xs, y)], axis=1)

    lanes = [
        Lane(
            id="L%d" % i,
            centerline=line(i * lane_width),
            left_neighbor="L%d" % (i + 1) if i + 1 < n_lanes else None,
            right_neighbor="L%d" % (i - 1) if i > 0 else None,
        )
        for i in range(n_lanes)
    ]
    road_edges = [line(-0.5 * lane_width), line((n_lanes - 0.5) * lane_width)]
    boundaries = [(line((i + 0.5) * lane_width), True) for i in range(n_lanes - 1)]
    return MapBundle(
        map_id=map_id, lanes=lanes, road_edges=road_edges, lane_boundaries=boundaries
    )
