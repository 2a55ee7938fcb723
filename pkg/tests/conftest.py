import numpy as np
import pytest

from lanesim.maps import MapBundle, Lane, build_lane_graph
from lanesim.synthetic import straight_map


def line(y, length=100.0, step=10.0):
    xs = np.arange(0.0, length + 0.5 * step, step)
    return np.stack([xs, np.full_like(xs, y)], axis=1)


@pytest.fixture
def two_lane_bundle():
    lanes = [
        Lane(id="A", centerline=line(0.0), left_neighbor="B"),
        Lane(id="B", centerline=line(3.5), right_neighbor="A"),
    ]
    return MapBundle(map_id="two", lanes=lanes, road_edges=[], lane_boundaries=[]).validate()


@pytest.fixture
def single_lane_graph():
    lanes = [Lane(id="A", centerline=line(0.0, length=200.0))]
    bundle = MapBundle(map_id="single", lanes=lanes, road_edges=[], lane_boundaries=[]).validate()
    return bundle, build_lane_graph(bundle)


@pytest.fixture
def straight3():
    bundle = straight_map(n_lanes=3, length=300.0, map_id="straight3")
    return bundle, build_lane_graph(bundle)


@pytest.fixture
def straight3_400():
    bundle = straight_map(n_lanes=3, length=400.0, map_id="straight3x400")
    return bundle, build_lane_graph(bundle)
