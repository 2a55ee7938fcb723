"""Task-level evaluation: closed-loop scenario rollouts, goal/collision/success
rates, displacement errors against reference trajectories, and trace export.

Success (SR) counts agents that reach their goal without *causing* a
collision: non-fault collision victims still satisfy SR.
"""

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import policy as pol
from .dynamics import ActionLattice, DynamicsBounds
from .maps import load_map, build_lane_graph
from .observation import ObservationConfig, build_observation, noise_rng, normalize, world_snapshot
from .scenario import load_scenario
from .world import ACTIVE, TRACE_HEADER, World, step_world


@dataclass
class EpisodeOutcome:
    """Final per-agent flags and the simulated trajectory (t, x, y, heading, v)."""

    goal_reached: bool
    at_fault_collision: bool
    any_agent_collision: bool
    road_edge_collision: bool
    early_terminated: bool
    trajectory: np.ndarray


@dataclass
class MetricReport:
    gr: tuple  # (mean, std) in percent
    cr_a: tuple
    cr_r: tuple
    sr: tuple
    ade: tuple | None
    fde: tuple | None
    scenario_count: int

    def to_dict(self):
        payload = {
            "GR": {"mean": self.gr[0], "std": self.gr[1]},
            "CR_a": {"mean": self.cr_a[0], "std": self.cr_a[1]},
            "CR_r": {"mean": self.cr_r[0], "std": self.cr_r[1]},
            "SR": {"mean": self.sr[0], "std": self.sr[1]},
            "scenarios": self.scenario_count,
        }
        if self.ade is not None:
            payload["ADE_5s"] = {"mean": self.ade[0], "std": self.ade[1]}
            payload["FDE_5s"] = {"mean": self.fde[0], "std": self.fde[1]}
        return payload


def score_episode(outcomes) -> tuple:
    """Per-scenario (GR, CR_a, CR_r, SR) percentages over agents."""
    n = len(outcomes)
    if n == 0:
        raise ValueError("cannot score an episode with no agents")
    gr = 100.0 * sum(o.goal_reached for o in outcomes) / n
    cr_a = 100.0 * sum(o.at_fault_collision for o in outcomes) / n
    cr_r = 100.0 * sum(o.road_edge_collision for o in outcomes) / n
    sr = 100.0 * sum(o.goal_reached and not o.at_fault_collision for o in outcomes) / n
    return gr, cr_a, cr_r, sr


def displacement_errors(sim_traj, ref_traj, horizon_s: float = 5.0):
    """(ADE, FDE, truncated) between aligned equal-dt trajectories.

    ADE averages the position error over steps in (0, horizon_s]; FDE is the
    error at exactly horizon_s.  A simulated trajectory shorter than the
    horizon is scored up to its final step and flagged truncated.
    """
    sim = np.asarray(sim_traj, dtype=float)
    ref = np.asarray(ref_traj, dtype=float)
    if sim.size == 0 or ref.size == 0:
        raise ValueError("empty trajectory")
    if len(sim) < 2 or len(ref) < 2:
        raise ValueError("trajectories need at least two samples")
    dt = ref[1, 0] - ref[0, 0]
    target = int(round(horizon_s / dt))
    last = min(len(sim), len(ref)) - 1
    k = min(target, last)
    truncated = k < target
    err = np.linalg.norm(sim[1: k + 1, 1:3] - ref[1: k + 1, 1:3], axis=1)
    return float(err.mean()), float(err[-1]), truncated


class PolicyRunner:
    """Rolls scenarios out closed-loop under a checkpointed policy."""

    def __init__(self, params, net_cfg, obs_cfg: ObservationConfig,
                 lattice: ActionLattice = None, bounds: DynamicsBounds = None,
                 noise: bool = False):
        self.params = params
        self.net_cfg = net_cfg
        self.obs_cfg = obs_cfg
        self.lattice = lattice or ActionLattice()
        self.bounds = bounds or DynamicsBounds()
        self.noise = noise

    @classmethod
    def from_checkpoint(cls, path, obs_cfg: ObservationConfig = None,
                        lattice: ActionLattice = None, bounds: DynamicsBounds = None):
        params, net_cfg, sig, extra = pol.load_params(path)
        if obs_cfg is None:
            obs_cfg = ObservationConfig(**extra["obs_config"]) if extra.get("obs_config") \
                else ObservationConfig()
        if sig != obs_cfg.layout_signature() or net_cfg.flat_dim != obs_cfg.flat_dim:
            raise pol.CheckpointError(
                "layout mismatch: checkpoint %r vs observation %r"
                % (sig, obs_cfg.layout_signature())
            )
        if lattice is None and extra.get("lattice"):
            lattice = ActionLattice(extra["lattice"]["jerk"], extra["lattice"]["steer_rate"])
        if bounds is None and extra.get("bounds"):
            from .dynamics import BoundsEntry
            bounds = DynamicsBounds(
                car=BoundsEntry(**extra["bounds"]["car"]),
                truck=BoundsEntry(**extra["bounds"]["truck"]),
            )
        return cls(params, net_cfg, obs_cfg, lattice=lattice, bounds=bounds)

    def run(self, bundle, graph, scenario, mode: str = "greedy", seed: int = 0):
        """Returns (per-agent EpisodeOutcome list, trace rows)."""
        world = World(bundle, graph, scenario, lattice=self.lattice,
                      bounds=self.bounds)
        action_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
        trajectories = [[(0.0, a.x, a.y, a.heading, a.v)] for a in world.agents]
        trace = []
        for i, agent in enumerate(world.agents):
            trace.append((0, i, agent, world.status[i]))
        while not world.done():
            active = world.active_indices()
            snap = world_snapshot(world)
            rows = []
            for agent in active:
                rng = noise_rng(seed, world.t, agent) if self.noise else None
                rows.append(normalize(
                    build_observation(world, agent, self.obs_cfg, rng, snapshot=snap),
                    self.obs_cfg,
                ))
            with ad.no_grad():
                out = pol.forward(self.params, np.stack(rows), self.net_cfg)
            tokens, _ = pol.sample_action(out, action_rng, mode=mode)
            _, _events = step_world(world, tokens)
            t = world.t * world.dt
            for agent in active:
                a = world.agents[agent]
                trajectories[agent].append((t, a.x, a.y, a.heading, a.v))
                trace.append((world.t, agent, a, world.status[agent]))
        outcomes = [
            EpisodeOutcome(
                goal_reached=bool(world.goal_reached[i]),
                at_fault_collision=bool(world.at_fault[i]),
                any_agent_collision=bool(world.collided[i]),
                road_edge_collision=bool(world.off_road[i]),
                early_terminated=bool(world.early_terminated[i]),
                trajectory=np.asarray(trajectories[i]),
            )
            for i in range(world.n_agents)
        ]
        return outcomes, trace


def replay_outcomes(bundle, graph, scenario, references):
    """Replay reference trajectories verbatim (no policy); goal flags follow
    the references' endpoints."""
    world = World(bundle, graph, scenario)
    outcomes = []
    for i, (agent, ref) in enumerate(zip(world.agents, references)):
        if ref is None:
            raise ValueError("replay requires a reference for every agent (agent %d)" % i)
        end = ref[-1]
        d = math.hypot(agent.spec.goal[0] - end[1], agent.spec.goal[1] - end[2])
        speeds = np.zeros(len(ref))
        if len(ref) > 1:
            dt = np.diff(ref[:, 0])
            speeds[1:] = np.linalg.norm(np.diff(ref[:, 1:3], axis=0), axis=1) / np.where(dt > 0, dt, 1.0)
            speeds[0] = speeds[1]
        traj = np.column_stack([ref[:, 0], ref[:, 1], ref[:, 2], ref[:, 3], speeds])
        outcomes.append(EpisodeOutcome(
            goal_reached=d <= world.r_goal,
            at_fault_collision=False,
            any_agent_collision=False,
            road_edge_collision=False,
            early_terminated=False,
            trajectory=traj,
        ))
    return outcomes


def _resolve_map(scenario_path, map_field, cache):
    if map_field is None:
        raise ValueError("scenario %s carries no map reference" % scenario_path)
    path = os.path.normpath(os.path.join(os.path.dirname(scenario_path), map_field))
    if path not in cache:
        bundle = load_map(path)
        cache[path] = (bundle, build_lane_graph(bundle))
    return cache[path]


def evaluate(runner, scenario_paths, mode: str = "greedy", seed: int = 0,
             report_path=None, alpha_rng=None):
    """Evaluate scenarios closed-loop and aggregate mean +- std task metrics.

    `mode` is "greedy", "sample", or "replay" (references required).  When
    reference trajectories are present, ADE/FDE over a 5 s horizon are also
    reported.  Writes a JSON report plus a per-scenario CSV and a score
    histogram figure next to it when report_path is given.
    """
    scenario_paths = sorted(str(p) for p in scenario_paths)
    if not scenario_paths:
        raise ValueError("no scenarios to evaluate")
    cache = {}
    per_scenario = []
    for idx, path in enumerate(scenario_paths):
        scenario, references, map_field = load_scenario(path)
        bundle, graph = _resolve_map(path, map_field, cache)
        if alpha_rng is not None:
            for agent in scenario.agents:
                agent.alpha = float(alpha_rng.uniform(0.1, 1.0))
        if mode == "replay":
            outcomes = replay_outcomes(bundle, graph, scenario, references)
        else:
            outcomes, _ = runner.run(bundle, graph, scenario, mode=mode, seed=seed + idx)
        gr, cr_a, cr_r, sr = score_episode(outcomes)
        ades, fdes = [], []
        for outcome, ref in zip(outcomes, references):
            if ref is None:
                continue
            ade, fde, _ = displacement_errors(outcome.trajectory[:, :3], ref[:, :3])
            ades.append(ade)
            fdes.append(fde)
        per_scenario.append({
            "scenario": os.path.basename(path),
            "GR": gr, "CR_a": cr_a, "CR_r": cr_r, "SR": sr,
            "ADE": float(np.mean(ades)) if ades else None,
            "FDE": float(np.mean(fdes)) if fdes else None,
        })

    def agg(key):
        vals = np.array([row[key] for row in per_scenario], dtype=float)
        return float(vals.mean()), float(vals.std())

    have_ref = all(row["ADE"] is not None for row in per_scenario)
    report = MetricReport(
        gr=agg("GR"), cr_a=agg("CR_a"), cr_r=agg("CR_r"), sr=agg("SR"),
        ade=agg("ADE") if have_ref else None,
        fde=agg("FDE") if have_ref else None,
        scenario_count=len(per_scenario),
    )
    if report_path is not None:
        _write_report(report, per_scenario, report_path)
    return report


def _write_report(report, per_scenario, report_path):
    report_path = str(report_path)
    with open(report_path, "w") as f:
        json.dump(report.to_dict(), f, sort_keys=True, indent=1)
    stem = os.path.splitext(report_path)[0]
    with open(stem + ".csv", "w") as f:
        f.write("scenario,GR,CR_a,CR_r,SR,ADE,FDE\n")
        for row in per_scenario:
            f.write("%s,%r,%r,%r,%r,%s,%s\n" % (
                row["scenario"], row["GR"], row["CR_a"], row["CR_r"], row["SR"],
                "" if row["ADE"] is None else repr(row["ADE"]),
                "" if row["FDE"] is None else repr(row["FDE"]),
            ))
    from .plots import render_metric_histogram
    render_metric_histogram(per_scenario, stem + "_scores.png")


def export_rollout(runner, scenario_path, out_prefix, mode: str = "greedy", seed: int = 0):
    """Write the trace CSV and an overhead SVG trajectory plot for one scenario."""
    scenario, references, map_field = load_scenario(str(scenario_path))
    bundle, graph = _resolve_map(str(scenario_path), map_field, {})
    if scenario.horizon > 0:
        outcomes, trace = runner.run(bundle, graph, scenario, mode=mode, seed=seed)
    else:
        outcomes, trace = [], []
    csv_path = str(out_prefix) + ".csv"
    with open(csv_path, "w") as f:
        f.write(TRACE_HEADER + "\n")
        for step, agent_idx, agent, status in trace:
            f.write("0,%d,%d,%r,%r,%r,%r,%s\n" % (
                step, agent_idx, agent.x, agent.y, agent.heading, agent.v, status))
    svg_path = str(out_prefix) + ".svg"
    from .plots import render_trajectories
    render_trajectories(bundle, [o.trajectory for o in outcomes], svg_path,
                        goals=[a.goal for a in scenario.agents])
    return csv_path, svg_path
