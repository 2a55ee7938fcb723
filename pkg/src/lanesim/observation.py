"""Ego-centric observations: ego state with conditioning and control history,
nearest-neighbor agents, and categorized road points, with optional Gaussian
noise on the neighbor and road blocks (never on ego features).

Every spatial feature is expressed in the ego frame, so observations are
invariant to rigid transforms of the whole world.  The flat normalized layout
is fixed by the (n_neighbors, road_points) configuration and documented in
docs/observation_layout.md; checkpoints embed its signature.
"""

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import TRUCK
from .maps import nearest_lane_frame, road_points_near
from .geometry import wrap_angle, wrap_pi
from .world import ACTIVE, HISTORY_STEPS

EGO_DIM = 20
COND_DIM = 8
NEIGHBOR_DIM = 8
ROAD_DIM = 7


@dataclass
class ObservationConfig:
    n_neighbors: int = 16
    road_points: int = 64
    road_radius: float = 50.0
    noise_pos_std: float = 0.2
    noise_ang_std: float = 0.1
    dist_scale: float = 100.0
    speed_scale: float = 40.0
    angle_scale: float = math.pi
    accel_scale: float = 10.0

    @property
    def flat_dim(self):
        return (EGO_DIM + COND_DIM
                + self.n_neighbors * (NEIGHBOR_DIM + 1)
                + self.road_points * (ROAD_DIM + 1))

    def layout_signature(self) -> str:
        return "obs-v1:e%dc%dn%dx%dr%dx%d" % (
            EGO_DIM, COND_DIM, self.n_neighbors, NEIGHBOR_DIM, self.road_points, ROAD_DIM
        )


@dataclass
class Observation:
    """Raw (un-normalized) observation blocks for one agent."""

    ego: np.ndarray
    cond: np.ndarray
    neighbors: np.ndarray
    neighbor_mask: np.ndarray
    road: np.ndarray
    road_mask: np.ndarray


def world_snapshot(world):
    """Per-step arrays over all agents, shared by every ego in the world."""
    n = world.n_agents
    pos = np.empty((n, 2))
    headings = np.empty(n)
    speeds = np.empty(n)
    dims = np.empty((n, 4))
    for i, agent in enumerate(world.agents):
        pos[i] = (agent.x, agent.y)
        headings[i] = agent.heading
        speeds[i] = agent.v
        dims[i] = agent.spec.dims
    active = np.array([s == ACTIVE for s in world.status])
    return pos, headings, speeds, dims, active


def noise_rng(world_seed: int, step: int, agent: int) -> np.random.Generator:
    """Deterministic per-(world, step, agent) noise stream, independent of
    worker scheduling."""
    bits = np.random.Philox(
        key=np.uint64(world_seed & 0xFFFFFFFFFFFFFFFF),
        counter=[0, 0, np.uint64(step), np.uint64(agent)],
    )
    return np.random.Generator(bits)


def build_observation(world, agent_index: int, noise_cfg: ObservationConfig = None,
                      rng: np.random.Generator = None, snapshot=None) -> Observation:
    """Observation for one active agent; noise_cfg stds of 0 (or rng None)
    disable noise entirely."""
    cfg = noise_cfg or ObservationConfig()
    if world.status[agent_index] != ACTIVE:
        raise ValueError("agent %d is not active" % agent_index)
    if snapshot is None:
        snapshot = world_snapshot(world)
    pos, headings, speeds, dims, active = snapshot

    agent = world.agents[agent_index]
    spec = agent.spec
    ego_pos = pos[agent_index]
    cos_h, sin_h = math.cos(agent.heading), math.sin(agent.heading)

    def to_ego(points):
        rel = points - ego_pos
        return np.stack(
            [rel[..., 0] * cos_h + rel[..., 1] * sin_h,
             -rel[..., 0] * sin_h + rel[..., 1] * cos_h], axis=-1
        )

    goal_rel = to_ego(np.asarray(spec.goal, dtype=float))
    goal_rel_heading = wrap_pi(world.goal_lane_heading[agent_index] - agent.heading)
    _, _, lane_rel_heading = nearest_lane_frame(world.graph, ego_pos, agent.heading)

    ego = np.concatenate([
        [agent.v, spec.dims[0], spec.dims[1], spec.dims[2], spec.dims[3],
         agent.phi, 1.0 if spec.vtype == TRUCK else 0.0,
         goal_rel[0], goal_rel[1], goal_rel_heading, spec.alpha,
         agent.a, agent.delta, lane_rel_heading],
        world.accel_history[agent_index],
        world.steer_history[agent_index],
    ])

    cond = np.array([
        spec.v_goal, spec.alpha,
        0.0 if spec.vtype == TRUCK else 1.0,
        1.0 if spec.vtype == TRUCK else 0.0,
        spec.dims[0], spec.dims[1], spec.dims[2], spec.dims[3],
    ])

    # nearest active neighbors by center distance, ties broken by agent index
    others = np.flatnonzero(active)
    others = others[others != agent_index]
    k = cfg.n_neighbors
    neighbors = np.zeros((k, NEIGHBOR_DIM))
    neighbor_mask = np.zeros(k)
    if len(others):
        d = np.linalg.norm(pos[others] - ego_pos, axis=1)
        order = np.lexsort((others, d))[:k]
        chosen = others[order]
        m = len(chosen)
        rel = to_ego(pos[chosen])
        rel_heading = wrap_angle(headings[chosen] - agent.heading)
        if rng is not None and cfg.noise_pos_std > 0:
            rel = rel + rng.normal(0.0, cfg.noise_pos_std, size=rel.shape)
        if rng is not None and cfg.noise_ang_std > 0:
            rel_heading = wrap_angle(rel_heading + rng.normal(0.0, cfg.noise_ang_std, size=m))
        neighbors[:m, 0:2] = rel
        neighbors[:m, 2] = speeds[chosen]
        neighbors[:m, 3] = rel_heading
        neighbors[:m, 4:8] = dims[chosen]
        neighbor_mask[:m] = 1.0

    points = road_points_near(world.graph, world.bundle, ego_pos, cfg.road_radius, cfg.road_points)
    r = cfg.road_points
    road = np.zeros((r, ROAD_DIM))
    road_mask = np.zeros(r)
    m = len(points)
    if m:
        rel = to_ego(points.positions)
        dirs = np.stack(
            [points.directions[:, 0] * cos_h + points.directions[:, 1] * sin_h,
             -points.directions[:, 0] * sin_h + points.directions[:, 1] * cos_h], axis=-1
        )
        if rng is not None and cfg.noise_pos_std > 0:
            rel = rel + rng.normal(0.0, cfg.noise_pos_std, size=rel.shape)
        if rng is not None and cfg.noise_ang_std > 0:
            ang = rng.normal(0.0, cfg.noise_ang_std, size=m)
            ca, sa = np.cos(ang), np.sin(ang)
            dirs = np.stack(
                [dirs[:, 0] * ca - dirs[:, 1] * sa, dirs[:, 0] * sa + dirs[:, 1] * ca], axis=-1
            )
        road[:m, 0:2] = rel
        road[:m, 2:4] = dirs
        road[np.arange(m), 4 + points.categories] = 1.0
        road_mask[:m] = 1.0

    return Observation(ego, cond, neighbors, neighbor_mask, road, road_mask)


_SCALE_CACHE = {}


def scale_vector(cfg: ObservationConfig) -> np.ndarray:
    """Per-dimension normalization constants matching the flat layout."""
    key = (cfg.n_neighbors, cfg.road_points, cfg.dist_scale, cfg.speed_scale,
           cfg.angle_scale, cfg.accel_scale)
    cached = _SCALE_CACHE.get(key)
    if cached is not None:
        return cached
    d, s, ang, acc = cfg.dist_scale, cfg.speed_scale, cfg.angle_scale, cfg.accel_scale
    ego = [s, d, d, d, d, ang, 1.0, d, d, ang, 1.0, acc, ang, ang]
    ego += [acc] * HISTORY_STEPS + [ang] * HISTORY_STEPS
    cond = [s, 1.0, 1.0, 1.0, d, d, d, d]
    neighbor_row = [d, d, s, ang, d, d, d, d]
    road_row = [d, d, 1.0, 1.0, 1.0, 1.0, 1.0]
    out = (ego + cond
           + neighbor_row * cfg.n_neighbors + [1.0] * cfg.n_neighbors
           + road_row * cfg.road_points + [1.0] * cfg.road_points)
    _SCALE_CACHE[key] = np.asarray(out)
    return _SCALE_CACHE[key]


def flatten(obs: Observation) -> np.ndarray:
    return np.concatenate([
        obs.ego, obs.cond,
        obs.neighbors.reshape(-1), obs.neighbor_mask,
        obs.road.reshape(-1), obs.road_mask,
    ])


def normalize(obs: Observation, cfg: ObservationConfig) -> np.ndarray:
    """Flatten and scale an observation into the network's input vector."""
    return flatten(obs) / scale_vector(cfg)


def denormalize(flat: np.ndarray, cfg: ObservationConfig) -> Observation:
    """Inverse of normalize (exact for un-noised fields)."""
    raw = np.asarray(flat) * scale_vector(cfg)
    return unflatten(raw, cfg)


def unflatten(raw: np.ndarray, cfg: ObservationConfig) -> Observation:
    k, r = cfg.n_neighbors, cfg.road_points
    parts = np.split(raw, np.cumsum([
        EGO_DIM, COND_DIM, k * NEIGHBOR_DIM, k, r * ROAD_DIM
    ]))
    return Observation(
        ego=parts[0], cond=parts[1],
        neighbors=parts[2].reshape(k, NEIGHBOR_DIM), neighbor_mask=parts[3],
        road=parts[4].reshape(r, ROAD_DIM), road_mask=parts[5],
    )


EGO_FIELD_NAMES = [
    "speed", "length", "width", "trailer_length", "trailer_width", "hitch_angle",
    "truck_indicator", "goal_rel_x", "goal_rel_y", "goal_rel_heading", "alpha",
    "acceleration", "steering", "lane_rel_heading",
    "accel_hist_0", "accel_hist_1", "accel_hist_2",
    "steer_hist_0", "steer_hist_1", "steer_hist_2",
]
COND_FIELD_NAMES = [
    "v_goal", "alpha", "is_car", "is_truck", "length", "width",
    "trailer_length", "trailer_width",
]
NEIGHBOR_FIELD_NAMES = [
    "rel_x", "rel_y", "speed", "rel_heading", "length", "width",
    "trailer_length", "trailer_width",
]
ROAD_FIELD_NAMES = [
    "rel_x", "rel_y", "dir_x", "dir_y", "cat_lane_center", "cat_lane_boundary",
    "cat_road_edge",
]


def layout_table(cfg: ObservationConfig):
    """(name, start, stop) index ranges of the flat vector, for documentation
    and checkpoint-compatibility checks."""
    rows = []
    offset = 0

    def block(names, prefix=""):
        nonlocal offset
        for name in names:
            rows.append((prefix + name, offset, offset + 1))
            offset += 1

    block(EGO_FIELD_NAMES, "ego.")
    block(COND_FIELD_NAMES, "cond.")
    for i in range(cfg.n_neighbors):
        block(NEIGHBOR_FIELD_NAMES, "neighbor%02d." % i)
    block(["neighbor%02d.valid" % i for i in range(cfg.n_neighbors)])
    for i in range(cfg.road_points):
        block(ROAD_FIELD_NAMES, "road%02d." % i)
    block(["road%02d.valid" % i for i in range(cfg.road_points)])
    return rows
