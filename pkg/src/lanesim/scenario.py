"""Synthetic scenario generation: offline start-goal pools and online worlds.

The offline stage runs a bounded best-first search over the lane graph from a
sampled subset of nodes, tracking a signed lane-change count c per frontier
state (left transitions subtract 1, right transitions add 1, |c| <= K).
Endpoints whose path length falls in [d_min, d_max] become pool entries,
partitioned into same-lane (c = 0) and lane-change (c != 0) sets.

The online stage draws agent counts, vehicle types, geometry, kinematics, and
start-goal pairs from the pool, rejection-sampling starts until the initial
oriented boxes do not overlap.
"""

import hashlib
import heapq
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .dynamics import CAR, TRUCK, AgentSpec, AgentState, footprint
from .geometry import boxes_intersect
from .maps import LaneGraph

SPEED_LIMIT = 40.0
PLACEMENT_ATTEMPTS = 100
EPS_INIT = 0.4
EPS_GOAL = 0.2
T_BUFFER = 3.0

CAR_LENGTH_RANGE = (4.2, 5.2)
CAR_WIDTH_RANGE = (1.8, 2.1)
TRUCK_LENGTH_RANGE = (5.5, 7.0)
TRUCK_WIDTH_RANGE = (2.4, 2.6)
TRAILER_LENGTH_RANGE = (10.0, 14.0)
TRAILER_WIDTH_RANGE = (2.4, 2.6)


class EmptyPoolError(RuntimeError):
    """The map cannot produce any start-goal pair within the distance bounds."""


@dataclass
class GeneratorParams:
    """The seven generator knobs plus sampling-mode switches.

    `count_mode` / `eps_mode` select how the +/- spreads of agent counts and
    initial speeds are interpreted: "uniform" draws from the half-range,
    "normal" treats the spread as a standard deviation.
    """

    p_lc: float = 0.4
    p_truck: float = 0.1
    n_min: int = 2
    n_max: int = 8
    d_min: float = 50.0
    d_max: float = 130.0
    k: int = 3
    start_stride: int = 5
    count_mode: str = "uniform"
    eps_mode: str = "uniform"

    def __post_init__(self):
        if not 0.0 <= self.p_lc <= 1.0 or not 0.0 <= self.p_truck <= 1.0:
            raise ValueError("p_lc and p_truck must lie in [0, 1]")
        if self.n_min > self.n_max or self.n_min < 1:
            raise ValueError("need 1 <= n_min <= n_max")
        if not 0.0 < self.d_min <= self.d_max:
            raise ValueError("need 0 < d_min <= d_max")
        if self.k < 0 or self.start_stride < 1:
            raise ValueError("k and start_stride must be non-negative")
        if self.count_mode not in ("uniform", "normal") or self.eps_mode not in ("uniform", "normal"):
            raise ValueError("count_mode/eps_mode must be 'uniform' or 'normal'")

    def hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class StartGoalPool:
    """Offline pool of (start node, goal node, path length, lane-change count)."""

    map_id: str
    params: GeneratorParams
    seed: int
    starts: np.ndarray
    goals: np.ndarray
    lengths: np.ndarray
    c_values: np.ndarray
    map_path: str | None = None
    graph: LaneGraph | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.starts)

    @property
    def same_lane(self) -> np.ndarray:
        return np.flatnonzero(self.c_values == 0)

    @property
    def lane_change(self) -> np.ndarray:
        return np.flatnonzero(self.c_values != 0)

    def attach_graph(self, graph: LaneGraph):
        self.graph = graph
        return self


def reachable_states(graph: LaneGraph, start: int, d_max: float, k: int):
    """Shortest path length to every (node, c) state reachable from start.

    Best-first over longitudinal successors (arclength cost within a lane,
    euclidean across lane joins) and lateral edges (euclidean cost, c -+ 1),
    pruned at |c| > k and length > d_max.  Returns {(node, c): length}.
    """
    dist = {(start, 0): 0.0}
    heap = [(0.0, start, 0)]
    while heap:
        d, node, c = heapq.heappop(heap)
        if d > dist[(node, c)]:
            continue
        moves = []
        for nxt in graph.next_nodes[node]:
            if graph.lane_index[nxt] == graph.lane_index[node]:
                cost = graph.arclengths[nxt] - graph.arclengths[node]
            else:
                cost = float(np.linalg.norm(graph.positions[nxt] - graph.positions[node]))
            moves.append((nxt, c, cost))
        left = graph.left_of[node]
        if left >= 0 and abs(c - 1) <= k:
            moves.append((left, c - 1, float(np.linalg.norm(graph.positions[left] - graph.positions[node]))))
        right = graph.right_of[node]
        if right >= 0 and abs(c + 1) <= k:
            moves.append((right, c + 1, float(np.linalg.norm(graph.positions[right] - graph.positions[node]))))
        for nxt, nc, cost in moves:
            nd = d + cost
            if nd > d_max:
                continue
            key = (nxt, nc)
            if nd < dist.get(key, np.inf):
                dist[key] = nd
                heapq.heappush(heap, (nd, nxt, nc))
    return dist


def build_pool(graph: LaneGraph, params: GeneratorParams, seed: int) -> StartGoalPool:
    """Enumerate start-goal candidates offline and balance them toward p_lc."""
    if len(graph) == 0:
        raise ValueError("empty lane graph")
    rng = np.random.default_rng(seed)
    n_starts = max(1, len(graph) // params.start_stride)
    start_nodes = np.sort(rng.choice(len(graph), size=n_starts, replace=False))

    starts, goals, lengths, c_values = [], [], [], []
    for start in start_nodes.tolist():
        dist = reachable_states(graph, start, params.d_max, params.k)
        # canonical entry per endpoint: smallest |c|, then smallest c
        best = {}
        for (node, c), d in dist.items():
            if d < params.d_min or node == start:
                continue
            key = (abs(c), c)
            if node not in best or key < (abs(best[node][0]), best[node][0]):
                best[node] = (c, d)
        for node in sorted(best):
            c, d = best[node]
            starts.append(start)
            goals.append(node)
            lengths.append(d)
            c_values.append(c)

    if not starts:
        raise EmptyPoolError(
            "no start-goal pair with path length in [%g, %g]" % (params.d_min, params.d_max)
        )

    starts = np.asarray(starts)
    goals = np.asarray(goals)
    lengths = np.asarray(lengths)
    c_values = np.asarray(c_values)

    keep = _balance_to_ratio(c_values, params.p_lc, rng)
    return StartGoalPool(
        map_id=graph.map_id, params=params, seed=seed,
        starts=starts[keep], goals=goals[keep], lengths=lengths[keep],
        c_values=c_values[keep], graph=graph,
    )


def _balance_to_ratio(c_values, p_lc, rng):
    """Subsample the over-represented class so lane-change fraction ~= p_lc."""
    lc = np.flatnonzero(c_values != 0)
    sl = np.flatnonzero(c_values == 0)
    if len(lc) == 0 or len(sl) == 0:
        return np.arange(len(c_values))
    if p_lc <= 0.0:
        return np.sort(sl)
    if p_lc >= 1.0:
        return np.sort(lc)
    if len(lc) / len(c_values) > p_lc:
        want = int(round(p_lc * len(sl) / (1.0 - p_lc)))
        lc = np.sort(rng.choice(lc, size=min(want, len(lc)), replace=False))
    else:
        want = int(round((1.0 - p_lc) * len(lc) / p_lc))
        sl = np.sort(rng.choice(sl, size=min(want, len(sl)), replace=False))
    return np.sort(np.concatenate([lc, sl]))


def compute_speeds(path_bounds, horizon_s: float, rng, t_buffer: float = T_BUFFER,
                   eps_mode: str = "uniform"):
    """Base/initial/goal speed and control-range alpha for one agent.

    v_base covers the average path length within the horizon minus a safety
    buffer; v_init and v_goal perturb it multiplicatively; alpha ~ U(0.1, 1).
    """
    if horizon_s <= t_buffer:
        raise ValueError("horizon %gs does not exceed the %gs safety buffer" % (horizon_s, t_buffer))
    rng = np.random.default_rng(rng) if isinstance(rng, (int, np.integer)) else rng
    d_min, d_max = path_bounds
    v_base = 0.5 * (d_min + d_max) / (horizon_s - t_buffer)
    if eps_mode == "uniform":
        eps_init = rng.uniform(-EPS_INIT, EPS_INIT)
        eps_goal = rng.uniform(-EPS_GOAL, EPS_GOAL)
    else:
        eps_init = rng.normal(0.0, EPS_INIT)
        eps_goal = rng.normal(0.0, EPS_GOAL)
    v_init = float(np.clip(v_base * (1.0 + eps_init), 0.0, SPEED_LIMIT))
    v_goal = float(np.clip(v_init * (1.0 + eps_goal), 0.0, SPEED_LIMIT))
    alpha = float(rng.uniform(0.1, 1.0))
    return v_base, v_init, v_goal, alpha


@dataclass
class ScenarioSpec:
    """One sampled world: agents, horizon, and the seed that produced it."""

    map_id: str
    seed: int
    agents: list
    horizon: int
    dt: float = 0.1
    placement_failures: int = 0


def truck_count(p_truck: float, n: int) -> int:
    """Rounded-to-nearest (ties to even) truck designation count."""
    return int(np.rint(p_truck * n))


def sample_world(pool: StartGoalPool, params: GeneratorParams, horizon_s: float,
                 seed: int, dt: float = 0.1) -> ScenarioSpec:
    """Draw one randomized world from the offline pool."""
    if len(pool) == 0:
        raise EmptyPoolError("cannot sample from an empty pool")
    if pool.graph is None:
        raise ValueError("pool has no attached lane graph")
    graph = pool.graph
    rng = np.random.default_rng(seed)

    if params.count_mode == "uniform":
        n = int(rng.integers(params.n_min, params.n_max + 1))
    else:
        mu = 0.5 * (params.n_min + params.n_max)
        sigma = 0.5 * (params.n_max - params.n_min)
        n = max(1, int(np.rint(rng.normal(mu, sigma))))
    n_trucks = truck_count(params.p_truck, n)
    is_truck = np.zeros(n, dtype=bool)
    if n_trucks > 0:
        is_truck[rng.choice(n, size=min(n_trucks, n), replace=False)] = True

    same_lane, lane_change = pool.same_lane, pool.lane_change
    agents = []
    placed_boxes = []
    failures = 0
    for i in range(n):
        if is_truck[i]:
            length = rng.uniform(*TRUCK_LENGTH_RANGE)
            width = rng.uniform(*TRUCK_WIDTH_RANGE)
            dims = (length, width, rng.uniform(*TRAILER_LENGTH_RANGE), rng.uniform(*TRAILER_WIDTH_RANGE))
            vtype = TRUCK
        else:
            dims = (rng.uniform(*CAR_LENGTH_RANGE), rng.uniform(*CAR_WIDTH_RANGE), 0.0, 0.0)
            vtype = CAR
        _, v_init, v_goal, alpha = compute_speeds(
            (params.d_min, params.d_max), horizon_s, rng, eps_mode=params.eps_mode
        )

        placed = False
        for _ in range(PLACEMENT_ATTEMPTS):
            want_lc = rng.random() < params.p_lc
            idx_set = lane_change if want_lc else same_lane
            if len(idx_set) == 0:
                idx_set = same_lane if want_lc else lane_change
            entry = int(idx_set[rng.integers(len(idx_set))])
            start_node, goal_node = pool.starts[entry], pool.goals[entry]
            x, y = graph.positions[start_node]
            heading = float(graph.headings[start_node])
            spec = AgentSpec(
                start=(float(x), float(y), heading),
                goal=tuple(map(float, graph.positions[goal_node])),
                v_init=v_init, v_goal=v_goal, alpha=alpha, vtype=vtype, dims=dims,
            )
            boxes = footprint(AgentState(x=float(x), y=float(y), heading=heading, v=v_init, spec=spec))
            if any(boxes_intersect(b, other) for b in boxes for other in placed_boxes):
                continue
            placed_boxes.extend(boxes)
            agents.append(spec)
            placed = True
            break
        if not placed:
            failures += 1

    return ScenarioSpec(
        map_id=pool.map_id, seed=seed, agents=agents,
        horizon=int(round(horizon_s / dt)), dt=dt, placement_failures=failures,
    )


# ---------------------------------------------------------------------------
# serialization

def save_pool(pool: StartGoalPool, path):
    payload = {
        "map_id": pool.map_id,
        "map_path": pool.map_path,
        "params": asdict(pool.params),
        "params_hash": pool.params.hash(),
        "seed": pool.seed,
        "entries": [
            [int(s), int(g), float(l), int(c)]
            for s, g, l, c in zip(pool.starts, pool.goals, pool.lengths, pool.c_values)
        ],
    }
    with open(path, "w") as f:
        json.dump(payload, f, sort_keys=True)


def load_pool(path) -> StartGoalPool:
    with open(path) as f:
        payload = json.load(f)
    entries = np.asarray(payload["entries"], dtype=float)
    if entries.size == 0:
        entries = entries.reshape(0, 4)
    return StartGoalPool(
        map_id=payload["map_id"],
        params=GeneratorParams(**payload["params"]),
        seed=payload["seed"],
        starts=entries[:, 0].astype(int),
        goals=entries[:, 1].astype(int),
        lengths=entries[:, 2],
        c_values=entries[:, 3].astype(int),
        map_path=payload.get("map_path"),
    )


def scenario_to_dict(spec: ScenarioSpec, references=None, map_path=None) -> dict:
    payload = {
        "map_id": spec.map_id,
        "seed": spec.seed,
        "dt": spec.dt,
        "horizon": spec.horizon,
        "agents": [
            {
                "start": {"x": a.start[0], "y": a.start[1], "heading": a.start[2]},
                "goal": {"x": a.goal[0], "y": a.goal[1]},
                "v_init": a.v_init,
                "v_goal": a.v_goal,
                "alpha": a.alpha,
                "vtype": a.vtype,
                "dims": {"l": a.dims[0], "w": a.dims[1], "l_tr": a.dims[2], "w_tr": a.dims[3]},
            }
            for a in spec.agents
        ],
    }
    if map_path is not None:
        payload["map"] = str(map_path)
    if references is not None:
        for agent_payload, ref in zip(payload["agents"], references):
            if ref is not None:
                agent_payload["reference"] = [[float(v) for v in row] for row in ref]
    return payload


def scenario_from_dict(payload: dict) -> tuple:
    """Parse a scenario file; returns (ScenarioSpec, references, map path or None)."""
    agents, references = [], []
    for entry in payload["agents"]:
        dims = entry["dims"]
        agents.append(AgentSpec(
            start=(entry["start"]["x"], entry["start"]["y"], entry["start"]["heading"]),
            goal=(entry["goal"]["x"], entry["goal"]["y"]),
            v_init=entry["v_init"],
            v_goal=entry["v_goal"],
            alpha=entry["alpha"],
            vtype=entry["vtype"],
            dims=(dims["l"], dims["w"], dims["l_tr"], dims["w_tr"]),
        ))
        ref = entry.get("reference")
        references.append(np.asarray(ref, dtype=float) if ref is not None else None)
    spec = ScenarioSpec(
        map_id=payload["map_id"], seed=payload.get("seed", 0), agents=agents,
        horizon=int(payload["horizon"]), dt=float(payload["dt"]),
    )
    return spec, references, payload.get("map")


def save_scenario(spec: ScenarioSpec, path, references=None, map_path=None):
    with open(path, "w") as f:
        json.dump(scenario_to_dict(spec, references, map_path), f, sort_keys=True)


def load_scenario(path):
    with open(path) as f:
        return scenario_from_dict(json.load(f))
