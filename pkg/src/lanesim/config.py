"""Run configuration: one human-editable YAML document covering scenario
generation, dynamics, observations, rewards, curriculum, network, and trainer
settings, plus the map/pool file references."""

import os
from dataclasses import dataclass, field

import yaml

from .dynamics import ActionLattice, BoundsEntry, DynamicsBounds
from .maps import build_lane_graph, load_map
from .observation import ObservationConfig
from .policy import NetConfig
from .rewards import RewardWeights
from .scenario import GeneratorParams, build_pool, load_pool
from .training import TrainConfig, WorldSampler


class ConfigError(ValueError):
    """Raised when a run configuration is malformed."""


@dataclass
class RunConfig:
    seed: int
    maps: list
    pools: list  # pool file paths or None (build on the fly)
    horizon_s: float
    dt: float
    goal_radius: float
    gen_pre: GeneratorParams
    gen_post: GeneratorParams
    lattice: ActionLattice
    bounds: DynamicsBounds
    obs: ObservationConfig
    rewards: RewardWeights
    ramp: tuple
    net_width: int
    net_heads: int
    net_seed: int
    train: TrainConfig
    raw: dict = field(repr=False, default=None)


def _section(raw, name, default=None):
    value = raw.get(name, default if default is not None else {})
    if not isinstance(value, dict):
        raise ConfigError("section %r must be a mapping" % name)
    return value


def load_run_config(path) -> RunConfig:
    try:
        with open(path) as f:
            raw = yaml.safe_load(f) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError("cannot parse config %s: %s" % (path, exc)) from exc
    return run_config_from_dict(raw, base_dir=os.path.dirname(os.path.abspath(path)))


def run_config_from_dict(raw: dict, base_dir: str = ".") -> RunConfig:
    def resolve(p):
        return p if os.path.isabs(p) else os.path.normpath(os.path.join(base_dir, p))

    maps = raw.get("maps") or ([raw["map"]] if raw.get("map") else [])
    if not maps:
        raise ConfigError("config needs a 'map' or 'maps' entry")
    maps = [resolve(m) for m in maps]
    pools = raw.get("pools") or ([raw["pool"]] if raw.get("pool") else [])
    pools = [resolve(p) for p in pools] or None
    if pools and len(pools) != len(maps):
        raise ConfigError("pools must pair one-to-one with maps")

    gen = _section(raw, "generator")
    try:
        gen_pre = GeneratorParams(**gen.get("pre", {}))
        gen_post = GeneratorParams(**gen.get("post", gen.get("pre", {})))
        lattice_cfg = _section(raw, "lattice")
        lattice = ActionLattice(**{
            k: v for k, v in (("jerk_values", lattice_cfg.get("jerk")),
                              ("steer_rate_values", lattice_cfg.get("steer_rate")))
            if v is not None
        })
        bounds_cfg = _section(raw, "bounds")
        bounds = DynamicsBounds(
            car=BoundsEntry(**bounds_cfg["car"]) if "car" in bounds_cfg else BoundsEntry(-8.0, 4.0, 0.55, 45.0),
            truck=BoundsEntry(**bounds_cfg["truck"]) if "truck" in bounds_cfg else BoundsEntry(-5.0, 2.5, 0.45, 40.0),
        )
        obs = ObservationConfig(**_section(raw, "observation"))
        rewards = RewardWeights(**_section(raw, "rewards"))
        train_section = _section(raw, "train")
        train = TrainConfig(**train_section)
        if "seed" not in train_section:
            train.seed = int(raw.get("seed", 0))
        net = _section(raw, "net")
    except (TypeError, ValueError) as exc:
        raise ConfigError("invalid config value: %s" % exc) from exc

    curriculum = _section(raw, "curriculum")
    ramp = tuple(curriculum.get("ramp", (0.2, 0.8)))
    if not (0.0 <= ramp[0] <= ramp[1] <= 1.0):
        raise ConfigError("curriculum ramp must satisfy 0 <= start <= end <= 1")

    return RunConfig(
        seed=int(raw.get("seed", 0)),
        maps=maps,
        pools=pools,
        horizon_s=float(raw.get("horizon_s", 15.0)),
        dt=float(raw.get("dt", 0.1)),
        goal_radius=float(raw.get("goal_radius", 2.0)),
        gen_pre=gen_pre,
        gen_post=gen_post,
        lattice=lattice,
        bounds=bounds,
        obs=obs,
        rewards=rewards,
        ramp=ramp,
        net_width=int(net.get("width", 256)),
        net_heads=int(net.get("heads", 4)),
        net_seed=int(net.get("init_seed", 0)),
        train=train,
        raw=raw,
    )


def net_config_for(run: RunConfig) -> NetConfig:
    return NetConfig(
        width=run.net_width,
        heads=run.net_heads,
        n_tokens=run.lattice.n_tokens,
        n_neighbors=run.obs.n_neighbors,
        n_road=run.obs.road_points,
        init_seed=run.net_seed,
    )


def build_sampler(run: RunConfig) -> WorldSampler:
    """Load maps, load or build their pools, and wire the world sampler."""
    tuples = []
    for i, map_path in enumerate(run.maps):
        bundle = load_map(map_path)
        graph = build_lane_graph(bundle)
        if run.pools:
            pool = load_pool(run.pools[i])
            if pool.map_id != bundle.map_id:
                raise ConfigError(
                    "pool %s was built for map %r, not %r"
                    % (run.pools[i], pool.map_id, bundle.map_id)
                )
            pool.attach_graph(graph)
        else:
            pool = build_pool(graph, run.gen_pre, seed=run.seed)
        tuples.append((bundle, graph, pool))
    return WorldSampler(
        tuples, run.gen_pre, run.gen_post, run.horizon_s, dt=run.dt,
        lattice=run.lattice, bounds=run.bounds, r_goal=run.goal_radius,
    )
