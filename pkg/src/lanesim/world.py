"""World engine: joint agent stepping, event detection, and termination.

All active agents advance synchronously from the pre-step joint state; the
post-step state is then checked for goal completion, unrecoverable states,
collisions (with at-fault attribution), road-edge and lane-boundary contact.
Collisions are never resolved physically; agents that hit a terminal event
freeze in place and drop out of every later check.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .dynamics import ActionLattice, AgentState, DynamicsBounds, decode_action, footprint, step_bicycle
from .geometry import boxes_intersect, wrap_pi
from .maps import nearest_lane_frame

ACTIVE = "active"
GOAL_REACHED = "goal_reached"
COLLIDED = "collided"
OFF_ROAD = "off_road"
EARLY_TERMINATED = "early_terminated"

GOAL_RADIUS = 2.0
GOAL_SPEED_BAND = 0.2
GOAL_YAW_BAND = 0.3
HISTORY_STEPS = 3


def check_unrecoverable(agent: AgentState) -> bool:
    """True when the agent's goal lies strictly behind its forward axis."""
    gx = agent.spec.goal[0] - agent.x
    gy = agent.spec.goal[1] - agent.y
    return gx * math.cos(agent.heading) + gy * math.sin(agent.heading) < 0.0


def attribute_fault(a_i: AgentState, a_j: AgentState):
    """Fault flags for a colliding pair: the agent behind the other is at
    fault; if neither is clearly behind, both are."""
    dx, dy = a_j.x - a_i.x, a_j.y - a_i.y
    f_i = dx * math.cos(a_j.heading) + dy * math.sin(a_j.heading) > 0.5 * a_j.spec.length
    f_j = -dx * math.cos(a_i.heading) - dy * math.sin(a_i.heading) > 0.5 * a_i.spec.length
    if not f_i and not f_j:
        return True, True
    return f_i, f_j


def check_goal(agent: AgentState, goal_lane_heading: float, r_goal: float = GOAL_RADIUS):
    """Goal indicator plus speed/yaw completion-quality factors in {0.1, 1}."""
    d = math.hypot(agent.spec.goal[0] - agent.x, agent.spec.goal[1] - agent.y)
    reached = d <= r_goal
    v_band = GOAL_SPEED_BAND * max(agent.spec.v_goal, 1.0)
    w_s = 1.0 if abs(agent.v - agent.spec.v_goal) <= v_band else 0.1
    w_a = 1.0 if abs(wrap_pi(agent.heading - goal_lane_heading)) <= GOAL_YAW_BAND else 0.1
    return reached, w_s, w_a


@dataclass
class StepEvents:
    """Per-agent indicators for one step, plus derived reward inputs.

    Arrays cover every agent in the world; entries for agents that were not
    active this step are zero.  `at_fault` implies `collision`.
    """

    collision: np.ndarray
    at_fault: np.ndarray
    road_edge: np.ndarray
    lane_boundary: np.ndarray
    goal: np.ndarray
    early_term: np.ndarray
    term_distance: np.ndarray
    w_speed: np.ndarray
    w_align: np.ndarray
    d_prev: np.ndarray
    d_curr: np.ndarray
    delta_theta_goal: np.ndarray
    acted: np.ndarray


class _SegmentIndex:
    """KD-tree over polyline segment midpoints for broad-phase crossing checks."""

    def __init__(self, polylines):
        seg_a, seg_b = [], []
        for poly in polylines:
            pts = np.asarray(poly, dtype=float)
            seg_a.append(pts[:-1])
            seg_b.append(pts[1:])
        if seg_a:
            self.a = np.concatenate(seg_a, axis=0)
            self.b = np.concatenate(seg_b, axis=0)
            self.half = 0.5 * np.linalg.norm(self.b - self.a, axis=1).max()
            self.tree = cKDTree(0.5 * (self.a + self.b))
        else:
            self.a = self.b = None
            self.half = 0.0
            self.tree = None

    def crosses(self, corners, radius):
        """Whether the box given by `corners` touches any indexed segment.

        Separating-axis test batched over the candidate segments: the box and
        a segment are disjoint iff one of the box axes or the segment normal
        separates them.
        """
        if self.tree is None:
            return False
        center = 0.25 * corners.sum(axis=0)
        hits = self.tree.query_ball_point(center, r=radius + self.half + 1e-9, return_sorted=False)
        if not hits:
            return False
        a, b = self.a[hits], self.b[hits]

        # box axes: project segment endpoints against corner extents
        for k in (1, 3):
            ax = corners[k] - corners[0]
            pa, pb = a @ ax, b @ ax
            lo, hi = np.minimum(pa, pb), np.maximum(pa, pb)
            c_lo, c_hi = min(corners[0] @ ax, corners[2] @ ax), max(corners[0] @ ax, corners[2] @ ax)
            separated = (hi < c_lo) | (lo > c_hi)
            if separated.all():
                return False
            keep = ~separated
            a, b = a[keep], b[keep]
        # segment normal axis: all four corners on one side of the segment line
        d = b - a
        nx, ny = -d[:, 1], d[:, 0]
        off = nx * a[:, 0] + ny * a[:, 1]
        side = corners[:, 0][:, None] * nx[None, :] + corners[:, 1][:, None] * ny[None, :] - off[None, :]
        separated = (side > 1e-12).all(axis=0) | (side < -1e-12).all(axis=0)
        return bool(np.any(~separated))


class World:
    """A set of agents on one map with per-agent status and curriculum progress."""

    def __init__(self, bundle, graph, scenario, rho: float = 0.0,
                 lattice: ActionLattice = None, bounds: DynamicsBounds = None,
                 r_goal: float = GOAL_RADIUS):
        self.bundle = bundle
        self.graph = graph
        self.scenario = scenario
        self.dt = scenario.dt
        self.horizon = scenario.horizon
        self.rho = rho
        self.r_goal = r_goal
        self.lattice = lattice or ActionLattice()
        self.bounds = bounds or DynamicsBounds()
        self.t = 0

        self.agents = [
            AgentState(x=s.start[0], y=s.start[1], heading=s.start[2], v=s.v_init, spec=s)
            for s in scenario.agents
        ]
        n = len(self.agents)
        self.status = [ACTIVE] * n
        self.goal_reached = np.zeros(n, dtype=bool)
        self.collided = np.zeros(n, dtype=bool)
        self.at_fault = np.zeros(n, dtype=bool)
        self.off_road = np.zeros(n, dtype=bool)
        self.early_terminated = np.zeros(n, dtype=bool)
        self.accel_history = np.zeros((n, HISTORY_STEPS))
        self.steer_history = np.zeros((n, HISTORY_STEPS))
        self.goal_lane_heading = np.array([
            graph.headings[nearest_lane_frame(graph, s.goal)[0]] for s in scenario.agents
        ])

        self._edge_index = _edge_index(bundle)
        self._solid_index = _solid_boundary_index(bundle)

    @property
    def n_agents(self):
        return len(self.agents)

    def active_indices(self):
        return [i for i, s in enumerate(self.status) if s == ACTIVE]

    def done(self):
        return self.t >= self.horizon or not any(s == ACTIVE for s in self.status)

    def distance_to_goal(self, i):
        a = self.agents[i]
        return math.hypot(a.spec.goal[0] - a.x, a.spec.goal[1] - a.y)


def _edge_index(bundle):
    if not hasattr(bundle, "_edge_seg_index"):
        bundle._edge_seg_index = _SegmentIndex(bundle.road_edges)
    return bundle._edge_seg_index


def _solid_boundary_index(bundle):
    if not hasattr(bundle, "_solid_seg_index"):
        bundle._solid_seg_index = _SegmentIndex(
            [pts for pts, crossable in bundle.lane_boundaries if not crossable]
        )
    return bundle._solid_seg_index


def step_world(world: World, tokens):
    """Advance every active agent one step and evaluate termination events.

    `tokens` holds one action token per active agent in ascending agent index.
    Returns (world, StepEvents); the world is updated in place.
    """
    active = world.active_indices()
    tokens = np.asarray(tokens)
    if len(tokens) != len(active):
        raise ValueError("expected %d tokens, got %d" % (len(active), len(tokens)))

    n = world.n_agents
    events = StepEvents(
        collision=np.zeros(n, dtype=bool),
        at_fault=np.zeros(n, dtype=bool),
        road_edge=np.zeros(n, dtype=bool),
        lane_boundary=np.zeros(n, dtype=bool),
        goal=np.zeros(n, dtype=bool),
        early_term=np.zeros(n, dtype=bool),
        term_distance=np.zeros(n),
        w_speed=np.zeros(n),
        w_align=np.zeros(n),
        d_prev=np.zeros(n),
        d_curr=np.zeros(n),
        delta_theta_goal=np.zeros(n),
        acted=np.zeros(n, dtype=bool),
    )

    # synchronous dynamics update from the pre-step joint state
    for i, token in zip(active, tokens):
        agent = world.agents[i]
        events.d_prev[i] = world.distance_to_goal(i)
        jerk, steer_rate = decode_action(int(token), agent.spec.alpha, world.lattice)
        world.agents[i] = step_bicycle(agent, jerk, steer_rate, world.dt, world.bounds)
        events.acted[i] = True
    world.accel_history[active, 1:] = world.accel_history[active, :-1]
    world.steer_history[active, 1:] = world.steer_history[active, :-1]
    for i in active:
        agent = world.agents[i]
        world.accel_history[i, 0] = agent.a
        world.steer_history[i, 0] = agent.delta
        events.d_curr[i] = world.distance_to_goal(i)
        events.delta_theta_goal[i] = abs(wrap_pi(agent.heading - world.goal_lane_heading[i]))

    # goal check
    for i in active:
        reached, w_s, w_a = check_goal(world.agents[i], world.goal_lane_heading[i], world.r_goal)
        events.w_speed[i], events.w_align[i] = w_s, w_a
        if reached:
            events.goal[i] = True

    # early termination (skipped for agents that just reached their goal)
    for i in active:
        if not events.goal[i] and check_unrecoverable(world.agents[i]):
            events.early_term[i] = True
            events.term_distance[i] = events.d_curr[i]

    # collision check with fault attribution
    boxes = {i: footprint(world.agents[i], world.bounds) for i in active}
    centers = np.array([[world.agents[i].x, world.agents[i].y] for i in active])
    radii = np.array([
        max(np.linalg.norm(b - centers[k], axis=1).max() for b in boxes[i])
        for k, i in enumerate(active)
    ]) if active else np.zeros(0)
    for k in range(len(active)):
        for m in range(k + 1, len(active)):
            if np.linalg.norm(centers[k] - centers[m]) > radii[k] + radii[m]:
                continue
            i, j = active[k], active[m]
            if any(boxes_intersect(bi, bj) for bi in boxes[i] for bj in boxes[j]):
                events.collision[i] = events.collision[j] = True
                f_i, f_j = attribute_fault(world.agents[i], world.agents[j])
                events.at_fault[i] |= f_i
                events.at_fault[j] |= f_j

    # road-edge and lane-boundary contact
    for k, i in enumerate(active):
        for box in boxes[i]:
            if world._edge_index.crosses(box, radii[k]):
                events.road_edge[i] = True
            if world._solid_index.crosses(box, radii[k]):
                events.lane_boundary[i] = True

    _update_status(world, events, active)
    world.t += 1
    return world, events


def _update_status(world, events, active):
    """Record terminal flags and deactivate agents, goal > collision > off-road
    > early termination when simultaneous."""
    for i in active:
        if events.goal[i]:
            world.goal_reached[i] = True
        if events.collision[i]:
            world.collided[i] = True
        if events.at_fault[i]:
            world.at_fault[i] = True
        if events.road_edge[i]:
            world.off_road[i] = True
        if events.early_term[i]:
            world.early_terminated[i] = True
        if events.goal[i]:
            world.status[i] = GOAL_REACHED
        elif events.collision[i]:
            world.status[i] = COLLIDED
        elif events.road_edge[i]:
            world.status[i] = OFF_ROAD
        elif events.early_term[i]:
            world.status[i] = EARLY_TERMINATED


TRACE_HEADER = "world,step,agent,x,y,heading,v,status"


def trace_row(world_idx: int, step: int, agent_idx: int, agent: AgentState, status: str) -> str:
    return "%d,%d,%d,%r,%r,%r,%r,%s" % (
        world_idx, step, agent_idx, agent.x, agent.y, agent.heading, agent.v, status
    )
