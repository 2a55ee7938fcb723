"""Road geometry ingestion and the 1 m lane graph.

A map is a set of lane centerlines with left/right adjacency and successor
links, plus road-edge and lane-boundary polylines.  The lane graph upsamples
every centerline to nodes spaced 1 m apart (in arclength) and connects them
with longitudinal and lateral edges; all downstream queries (routing,
observations, rewards) run against this graph.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import resample_polyline, wrap_angle

NODE_SPACING = 1.0
LATERAL_WINDOW = 1.5

LANE_CENTER = 0
LANE_BOUNDARY = 1
ROAD_EDGE = 2

CATEGORY_NAMES = {LANE_CENTER: "lane_center", LANE_BOUNDARY: "lane_boundary", ROAD_EDGE: "road_edge"}


class MapFormatError(ValueError):
    """Raised when a map file is malformed or violates map invariants."""


@dataclass
class Lane:
    id: str
    centerline: np.ndarray
    left_neighbor: str | None = None
    right_neighbor: str | None = None
    successors: list[str] = field(default_factory=list)


@dataclass
class MapBundle:
    map_id: str
    lanes: list[Lane]
    road_edges: list[np.ndarray]
    lane_boundaries: list[tuple[np.ndarray, bool]]

    def lane_by_id(self, lane_id: str) -> Lane:
        return self._lane_index[lane_id]

    def __post_init__(self):
        self._lane_index = {lane.id: lane for lane in self.lanes}

    def validate(self):
        ids = set(self._lane_index)
        if len(ids) != len(self.lanes):
            raise MapFormatError("duplicate lane ids in map %r" % self.map_id)
        for lane in self.lanes:
            pts = np.asarray(lane.centerline, dtype=float)
            if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
                raise MapFormatError("degenerate centerline for lane %r" % lane.id)
            if not np.all(np.isfinite(pts)):
                raise MapFormatError("non-finite centerline point in lane %r" % lane.id)
            if np.any(np.linalg.norm(np.diff(pts, axis=0), axis=1) < 1e-9):
                raise MapFormatError("coincident consecutive points in lane %r" % lane.id)
            for ref in [lane.left_neighbor, lane.right_neighbor, *lane.successors]:
                if ref is not None and ref not in ids:
                    raise MapFormatError(
                        "lane %r references missing lane %r" % (lane.id, ref)
                    )
        for lane in self.lanes:
            if lane.left_neighbor is not None:
                other = self._lane_index[lane.left_neighbor]
                if other.right_neighbor != lane.id:
                    raise MapFormatError(
                        "asymmetric adjacency between %r and %r" % (lane.id, other.id)
                    )
            if lane.right_neighbor is not None:
                other = self._lane_index[lane.right_neighbor]
                if other.left_neighbor != lane.id:
                    raise MapFormatError(
                        "asymmetric adjacency between %r and %r" % (lane.id, other.id)
                    )
        return self


def load_map(path) -> MapBundle:
    """Load and validate a map JSON file."""
    try:
        with open(path) as f:
            raw = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise MapFormatError("cannot parse map file %s: %s" % (path, exc)) from exc
    return map_from_dict(raw)


def map_from_dict(raw: dict) -> MapBundle:
    try:
        lanes = [
            Lane(
                id=str(entry["id"]),
                centerline=np.asarray(entry["centerline"], dtype=float),
                left_neighbor=entry.get("left_neighbor"),
                right_neighbor=entry.get("right_neighbor"),
                successors=list(entry.get("successors", [])),
            )
            for entry in raw["lanes"]
        ]
        bundle = MapBundle(
            map_id=str(raw["map_id"]),
            lanes=lanes,
            road_edges=[np.asarray(e, dtype=float) for e in raw.get("road_edges", [])],
            lane_boundaries=[
                (np.asarray(b["points"], dtype=float), bool(b.get("crossable", True)))
                for b in raw.get("lane_boundaries", [])
            ],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise MapFormatError("malformed map structure: %s" % exc) from exc
    return bundle.validate()


def map_to_dict(bundle: MapBundle) -> dict:
    return {
        "map_id": bundle.map_id,
        "lanes": [
            {
                "id": lane.id,
                "centerline": np.asarray(lane.centerline).tolist(),
                "left_neighbor": lane.left_neighbor,
                "right_neighbor": lane.right_neighbor,
                "successors": list(lane.successors),
            }
            for lane in bundle.lanes
        ],
        "road_edges": [np.asarray(e).tolist() for e in bundle.road_edges],
        "lane_boundaries": [
            {"points": np.asarray(p).tolist(), "crossable": c}
            for p, c in bundle.lane_boundaries
        ],
    }


def save_map(bundle: MapBundle, path):
    with open(path, "w") as f:
        json.dump(map_to_dict(bundle), f, indent=1)


class LaneGraph:
    """Upsampled lane graph: nodes every 1 m plus longitudinal/lateral edges.

    Node arrays are parallel: positions (n, 2), headings (n,), arclengths (n,)
    cumulative per lane, lane_index (n,) into `lane_ids`.  `next_nodes[i]`
    lists longitudinal targets (within-lane follower and, at lane ends, the
    first node of each successor lane).  `left_of[i]` / `right_of[i]` hold the
    lateral partner node or -1.
    """

    def __init__(self, positions, headings, arclengths, lane_index, lane_ids,
                 lane_slices, next_nodes, left_of, right_of, map_id=""):
        self.map_id = map_id
        self.positions = positions
        self.headings = headings
        self.arclengths = arclengths
        self.lane_index = lane_index
        self.lane_ids = lane_ids
        self.lane_slices = lane_slices
        self.next_nodes = next_nodes
        self.left_of = left_of
        self.right_of = right_of
        self._node_tree = cKDTree(positions)
        self._road_index = None

    def __len__(self):
        return len(self.positions)

    def lane_nodes(self, lane_id: str) -> np.ndarray:
        start, stop = self.lane_slices[lane_id]
        return np.arange(start, stop)


def build_lane_graph(bundle: MapBundle) -> LaneGraph:
    """Resample every centerline at 1 m and wire longitudinal + lateral edges."""
    positions, headings, arclengths, lane_index = [], [], [], []
    lane_slices = {}
    offset = 0
    for li, lane in enumerate(bundle.lanes):
        pos, s, head = resample_polyline(lane.centerline, NODE_SPACING)
        n = len(pos)
        positions.append(pos)
        headings.append(head)
        arclengths.append(s)
        lane_index.append(np.full(n, li))
        lane_slices[lane.id] = (offset, offset + n)
        offset += n

    positions = np.concatenate(positions, axis=0)
    headings = np.concatenate(headings)
    arclengths = np.concatenate(arclengths)
    lane_index = np.concatenate(lane_index)
    lane_ids = [lane.id for lane in bundle.lanes]

    n_total = len(positions)
    next_nodes = [[] for _ in range(n_total)]
    for lane in bundle.lanes:
        start, stop = lane_slices[lane.id]
        for i in range(start, stop - 1):
            next_nodes[i].append(i + 1)
        for succ in lane.successors:
            s_start, _ = lane_slices[succ]
            next_nodes[stop - 1].append(s_start)

    left_of = np.full(n_total, -1, dtype=int)
    right_of = np.full(n_total, -1, dtype=int)
    for lane in bundle.lanes:
        start, stop = lane_slices[lane.id]
        for neighbor_id, target in ((lane.left_neighbor, left_of), (lane.right_neighbor, right_of)):
            if neighbor_id is None:
                continue
            n_start, n_stop = lane_slices[neighbor_id]
            neighbor_s = arclengths[n_start:n_stop]
            own_s = arclengths[start:stop]
            # nearest-arclength pairing within the lateral window
            j = np.clip(np.searchsorted(neighbor_s, own_s), 1, len(neighbor_s) - 1)
            pick = np.where(
                np.abs(neighbor_s[j] - own_s) < np.abs(neighbor_s[j - 1] - own_s), j, j - 1
            )
            ok = np.abs(neighbor_s[pick] - own_s) <= LATERAL_WINDOW
            target[start:stop][ok] = (n_start + pick)[ok]

    return LaneGraph(
        positions, headings, arclengths, lane_index, lane_ids, lane_slices,
        next_nodes, left_of, right_of, map_id=bundle.map_id,
    )


def nearest_lane_frame(graph: LaneGraph, p, heading: float = 0.0):
    """Nearest graph node to p with the query expressed in its lane frame.

    Returns (node index, signed lateral offset, heading error).  Lateral
    offset is positive to the left of the node heading; equidistant nodes
    resolve to the lowest index.
    """
    p = np.asarray(p, dtype=float)
    if len(graph) == 1:
        node = 0
    else:
        dists, idxs = graph._node_tree.query(p, k=2)
        if dists[1] > dists[0] + 1e-9:
            node = int(idxs[0])
        else:
            ties = graph._node_tree.query_ball_point(p, r=dists[0] + 1e-9)
            node = min(ties)
    node_heading = graph.headings[node]
    rel = p - graph.positions[node]
    lateral = -np.sin(node_heading) * rel[0] + np.cos(node_heading) * rel[1]
    return node, float(lateral), float(wrap_angle(heading - node_heading))


@dataclass
class RoadPointSet:
    """Categorized road points: positions (n,2), unit directions (n,2), categories (n,)."""

    positions: np.ndarray
    directions: np.ndarray
    categories: np.ndarray

    def __len__(self):
        return len(self.positions)


class _RoadIndex:
    """All categorized road points of one map with a KD-tree for radius queries."""

    def __init__(self, graph: LaneGraph, bundle: MapBundle):
        pos = [graph.positions]
        dirs = [np.stack([np.cos(graph.headings), np.sin(graph.headings)], axis=1)]
        cats = [np.full(len(graph), LANE_CENTER, dtype=np.uint8)]
        for polylines, cat in (
            ([b for b, _ in bundle.lane_boundaries], LANE_BOUNDARY),
            (bundle.road_edges, ROAD_EDGE),
        ):
            for poly in polylines:
                p, _, h = resample_polyline(poly, NODE_SPACING)
                pos.append(p)
                dirs.append(np.stack([np.cos(h), np.sin(h)], axis=1))
                cats.append(np.full(len(p), cat, dtype=np.uint8))
        self.positions = np.concatenate(pos, axis=0)
        self.directions = np.concatenate(dirs, axis=0)
        self.categories = np.concatenate(cats)
        self.tree = cKDTree(self.positions)


def _road_index(graph: LaneGraph, bundle: MapBundle) -> _RoadIndex:
    if graph._road_index is None:
        graph._road_index = _RoadIndex(graph, bundle)
    return graph._road_index


def road_points_near(graph: LaneGraph, bundle: MapBundle, p, radius: float,
                     max_points: int) -> RoadPointSet:
    """Up to max_points categorized road points within radius of p, nearest first.

    Ties in distance break on (category, index) so results are deterministic.
    """
    if radius <= 0 or max_points <= 0:
        raise ValueError("radius and max_points must be positive")
    index = _road_index(graph, bundle)
    p = np.asarray(p, dtype=float)
    hits = np.asarray(index.tree.query_ball_point(p, r=radius, return_sorted=False), dtype=int)
    if hits.size == 0:
        empty = np.empty((0, 2))
        return RoadPointSet(empty, empty.copy(), np.empty(0, dtype=np.uint8))
    d = np.linalg.norm(index.positions[hits] - p, axis=1)
    order = np.lexsort((hits, index.categories[hits], d))[:max_points]
    sel = hits[order]
    return RoadPointSet(index.positions[sel], index.directions[sel], index.categories[sel])
