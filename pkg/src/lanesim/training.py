"""Closed-loop self-play training.

Every agent in every world acts with the same policy parameters.  Rollouts
are collected world-synchronously with per-world RNG streams (so results
never depend on worker scheduling), advantages use GAE over contiguous
per-agent episode segments, and the surrogate objective is PPO or DClamp-PPO
with per-world inverse-agent-count reweighting and a KL regularizer toward a
zero-centered Gaussian prior over the jerk/steering lattice.
"""

import math
import os
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from . import policy as pol
from .autodiff import Tensor
from .observation import ObservationConfig, build_observation, noise_rng, normalize, world_snapshot
from .rewards import AgentStepEvents, CurriculumState, RewardWeights, advance_curriculum, step_reward
from .scenario import sample_world
from .world import World, step_world

METRICS_HEADER = "iter,steps,rho,mean_reward,goal_rate,fault_collision_rate,offroad_rate,early_term_rate,kl_prior"


@dataclass
class TrainConfig:
    algorithm: str = "dclamp"  # "ppo" or "dclamp"
    clip_eps: float = 0.2
    dclamp_eps: float = 0.3
    gamma: float = 0.99
    gae_lambda: float = 0.95
    kl_coef: float = 0.01
    prior_sigma: tuple = (3.0, 0.1)  # (jerk m/s^3, steer rad/s)
    learning_rate: float = 3e-4
    minibatch_size: int = 1024
    epochs: int = 2
    total_steps: int = 200_000
    world_count: int = 8
    rollout_steps: int = 256
    value_coef: float = 0.5
    value_scale: float = 10.0  # value head output multiplier (termination penalties are large)
    max_grad_norm: float = 0.5
    kl_sign: float = 1.0  # +1 penalizes divergence from the prior
    init_at_prior: bool = True  # start the policy head at the lattice action prior
    workers: int = 1  # rollouts are vectorized in-process; kept for determinism contract
    checkpoint_every: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ("ppo", "dclamp"):
            raise ValueError("algorithm must be 'ppo' or 'dclamp'")
        if min(self.clip_eps, self.dclamp_eps, self.kl_coef) < 0:
            raise ValueError("clip_eps, dclamp_eps and kl_coef must be >= 0")
        if not (0 < self.gamma <= 1 and 0 < self.gae_lambda <= 1):
            raise ValueError("gamma and gae_lambda must lie in (0, 1]")


@dataclass
class RolloutBatch:
    """Flattened per-transition records plus episode segmentation.

    Transitions of one (world, agent) episode are contiguous; `segments`
    holds (start, stop, bootstrap_value) per episode piece, where bootstrap
    applies only when the final transition is not done (truncation).
    """

    obs: np.ndarray
    tokens: np.ndarray
    logp: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    n_w: np.ndarray
    world_ids: np.ndarray
    agent_ids: np.ndarray
    segments: list

    def __len__(self):
        return len(self.tokens)


class _SegmentAccumulator:
    """Grows one (world instance, agent) episode segment during collection."""

    __slots__ = ("world_uid", "agent", "n_w", "obs", "tokens", "logp", "rewards", "values")

    def __init__(self, world_uid, agent, n_w):
        self.world_uid = world_uid
        self.agent = agent
        self.n_w = n_w
        self.obs, self.tokens, self.logp, self.rewards, self.values = [], [], [], [], []


class RolloutWorld:
    """A live world plus its deterministic action/noise/resample seeds."""

    def __init__(self, world: World, seed: int, uid: int):
        self.world = world
        self.seed = seed
        self.uid = uid
        self.action_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
        self.open = {}

    def segment_for(self, agent):
        if agent not in self.open:
            self.open[agent] = _SegmentAccumulator(self.uid, agent, self.world.n_agents)
        return self.open[agent]


class WorldSampler:
    """Draws fresh worlds from (map, pool) tuples honoring the scenario phase."""

    def __init__(self, tuples, gen_pre, gen_post, horizon_s, dt=0.1,
                 lattice=None, bounds=None, r_goal=2.0):
        from .dynamics import ActionLattice, DynamicsBounds

        self.tuples = tuples  # list of (bundle, graph, pool)
        self.gen = {"pre": gen_pre, "post": gen_post}
        self.horizon_s = horizon_s
        self.dt = dt
        self.lattice = lattice or ActionLattice()
        self.bounds = bounds or DynamicsBounds()
        self.r_goal = r_goal
        self._uid = 0

    def sample(self, phase: str, seed: int, rho: float) -> RolloutWorld:
        bundle, graph, pool = self.tuples[seed % len(self.tuples)]
        params = self.gen[phase]
        scenario = sample_world(pool, params, self.horizon_s, seed, dt=self.dt)
        world = World(bundle, graph, scenario, rho=rho,
                      lattice=self.lattice, bounds=self.bounds, r_goal=self.r_goal)
        self._uid += 1
        return RolloutWorld(world, seed, self._uid)


def collect_rollouts(params, net_cfg, worlds, steps_per_world, curriculum,
                     sampler: WorldSampler, seed_stream, obs_cfg: ObservationConfig,
                     weights: RewardWeights, mode="sample", value_scale=1.0):
    """Step every world `steps_per_world` times under the shared policy.

    Finished worlds are resampled immediately from the current scenario
    phase.  Returns (RolloutBatch, episode outcome counters, refreshed world
    list).  Deterministic for fixed seeds regardless of worker count: each
    world instance owns its RNG streams and worlds are processed in slot
    order.
    """
    closed = []
    outcomes = {"episodes": 0, "agents": 0, "goal": 0, "fault": 0, "offroad": 0, "early": 0}

    for _ in range(steps_per_world):
        rows, meta = [], []
        for slot, rw in enumerate(worlds):
            world = rw.world
            snap = world_snapshot(world)
            for agent in world.active_indices():
                rng = noise_rng(rw.seed, world.t, agent)
                obs = normalize(build_observation(world, agent, obs_cfg, rng, snapshot=snap), obs_cfg)
                rows.append(obs)
                meta.append((slot, agent))
        if not rows:
            break
        with ad.no_grad():
            out = pol.forward(params, np.stack(rows), net_cfg)
        logits, values = out.logits.data, out.value.data * value_scale

        cursor = 0
        for slot, rw in enumerate(worlds):
            world = rw.world
            active = world.active_indices()
            n_active = len(active)
            block = slice(cursor, cursor + n_active)
            cursor += n_active
            if n_active == 0:
                continue
            sub = pol.PolicyOutput(Tensor(logits[block]), Tensor(values[block]))
            tokens, logps = pol.sample_action(sub, rw.action_rng, mode=mode)
            _, events = step_world(world, tokens)
            for k, agent in enumerate(active):
                seg = rw.segment_for(agent)
                seg.obs.append(rows[block.start + k])
                seg.tokens.append(tokens[k])
                seg.logp.append(logps[k])
                seg.values.append(values[block.start + k])
                reward, _ = step_reward(
                    AgentStepEvents(
                        goal=bool(events.goal[agent]),
                        w_speed=events.w_speed[agent],
                        w_align=events.w_align[agent],
                        at_fault=bool(events.at_fault[agent]),
                        road_edge=bool(events.road_edge[agent]),
                        lane_boundary=bool(events.lane_boundary[agent]),
                        early_term=bool(events.early_term[agent]),
                        term_distance=events.term_distance[agent],
                    ),
                    world.agents[agent],
                    (events.d_prev[agent], events.d_curr[agent], events.delta_theta_goal[agent]),
                    weights, world.rho,
                )
                seg.rewards.append(reward)

            ended = world.done()
            for agent in active:
                if world.status[agent] != "active" or ended:
                    seg = rw.open.pop(agent)
                    closed.append((seg, True, 0.0))
            if ended:
                _tally(outcomes, world)
                fresh_seed = int(seed_stream.integers(2**31 - 1))
                worlds[slot] = sampler.sample(curriculum.phase, fresh_seed, curriculum.rho)

    # truncated segments bootstrap with the value of the next observation
    pending = []
    for rw in worlds:
        world = rw.world
        snap = world_snapshot(world)
        for agent, seg in sorted(rw.open.items()):
            rng = noise_rng(rw.seed, world.t, agent)
            obs = normalize(build_observation(world, agent, obs_cfg, rng, snapshot=snap), obs_cfg)
            pending.append((seg, obs))
    if pending:
        with ad.no_grad():
            tail = pol.forward(params, np.stack([o for _, o in pending]), net_cfg)
        for (seg, _), v in zip(pending, tail.value.data):
            closed.append((seg, False, float(v) * value_scale))
    for rw in worlds:
        rw.open.clear()

    return _assemble(closed, net_cfg), outcomes, worlds


def _tally(outcomes, world):
    outcomes["episodes"] += 1
    outcomes["agents"] += world.n_agents
    outcomes["goal"] += int(world.goal_reached.sum())
    outcomes["fault"] += int(world.at_fault.sum())
    outcomes["offroad"] += int(world.off_road.sum())
    outcomes["early"] += int(world.early_terminated.sum())


def _assemble(closed, net_cfg) -> RolloutBatch:
    closed = [c for c in closed if len(c[0].tokens)]
    if not closed:
        dim = net_cfg.flat_dim
        return RolloutBatch(
            np.zeros((0, dim)), np.zeros(0, dtype=np.intp), np.zeros(0), np.zeros(0),
            np.zeros(0), np.zeros(0, dtype=bool), np.zeros(0), np.zeros(0, dtype=int),
            np.zeros(0, dtype=int), [],
        )
    closed.sort(key=lambda c: (c[0].world_uid, c[0].agent))
    obs, tokens, logp, rewards, values, dones = [], [], [], [], [], []
    n_w, world_ids, agent_ids, segments = [], [], [], []
    start = 0
    for seg, done, bootstrap in closed:
        t = len(seg.tokens)
        obs.extend(seg.obs)
        tokens.extend(seg.tokens)
        logp.extend(seg.logp)
        rewards.extend(seg.rewards)
        values.extend(seg.values)
        dones.extend([False] * (t - 1) + [done])
        n_w.extend([seg.n_w] * t)
        world_ids.extend([seg.world_uid] * t)
        agent_ids.extend([seg.agent] * t)
        segments.append((start, start + t, bootstrap))
        start += t
    return RolloutBatch(
        np.asarray(obs), np.asarray(tokens, dtype=np.intp), np.asarray(logp),
        np.asarray(rewards), np.asarray(values), np.asarray(dones, dtype=bool),
        np.asarray(n_w, dtype=float), np.asarray(world_ids), np.asarray(agent_ids),
        segments,
    )


def compute_advantages(batch: RolloutBatch, gamma: float, gae_lambda: float,
                       normalize_adv: bool = True):
    """Backward GAE per episode segment; bootstrap 0 at done, otherwise the
    stored next-state value.  Returns (advantages, return targets)."""
    adv = np.zeros(len(batch))
    for start, stop, bootstrap in batch.segments:
        running = 0.0
        next_value = 0.0 if batch.dones[stop - 1] else bootstrap
        for t in range(stop - 1, start - 1, -1):
            delta = batch.rewards[t] + gamma * next_value - batch.values[t]
            running = delta + gamma * gae_lambda * running
            adv[t] = running
            next_value = batch.values[t]
    returns = adv + batch.values
    if normalize_adv and len(adv):
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return adv, returns


def eq17_weights(batch: RolloutBatch) -> np.ndarray:
    """Per-transition weights realizing the inverse-agent-count world sum:
    sum_w (1/N_w) sum_i mean_t L^(w,i,t)."""
    weights = np.empty(len(batch))
    for start, stop, _ in batch.segments:
        weights[start:stop] = 1.0 / (batch.n_w[start] * (stop - start))
    return weights


def surrogate_terms(new_logp: Tensor, old_logp: np.ndarray, advantages: np.ndarray,
                    cfg: TrainConfig) -> Tensor:
    """Per-transition clipped-surrogate losses (before any weighting)."""
    ratio = ad.exp(new_logp - Tensor(old_logp))
    if cfg.algorithm == "dclamp":
        ratio = ad.clip(ratio, 1.0 / (1.0 + cfg.dclamp_eps), 1.0 + cfg.dclamp_eps)
    adv = Tensor(advantages)
    unclipped = ad.mul(ratio, adv)
    clipped = ad.mul(ad.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps), adv)
    return -ad.minimum(unclipped, clipped)


def policy_loss(batch: RolloutBatch, new_logp: Tensor, advantages: np.ndarray,
                cfg: TrainConfig, weights: np.ndarray = None) -> Tensor:
    """Full-batch reweighted surrogate: sum over worlds of the per-world mean
    agent loss, each world weighted by 1/N_w."""
    if len(new_logp.data) != len(batch):
        raise ValueError("log-prob batch misaligned with rollout batch")
    if weights is None:
        weights = eq17_weights(batch)
    terms = surrogate_terms(new_logp, batch.logp, advantages, cfg)
    return ad.sum_(ad.mul(terms, Tensor(weights)))


def value_loss(values: Tensor, returns: np.ndarray, weights: np.ndarray) -> Tensor:
    """Squared-error value loss under the same per-world reweighting."""
    err = ad.square(values - Tensor(returns))
    return ad.sum_(ad.mul(err, Tensor(weights)))


def lattice_log_prior(lattice, sigma) -> np.ndarray:
    """Log-probabilities of the discrete prior induced by a zero-mean Gaussian
    over the (jerk, steer) lattice."""
    sj, ss = sigma
    logits = -(lattice.token_jerk ** 2) / (2.0 * sj * sj) \
        - (lattice.token_steer ** 2) / (2.0 * ss * ss)
    return logits - (np.log(np.exp(logits - logits.max()).sum()) + logits.max())


def kl_action_regularizer(logits: Tensor, lattice, sigma) -> Tensor:
    """Mean KL( policy || discrete Gaussian prior ) over the batch."""
    log_q = lattice_log_prior(lattice, sigma)
    p = ad.softmax(logits, axis=-1)
    log_p = ad.log_softmax(logits, axis=-1)
    per_row = ad.sum_(ad.mul(p, log_p - Tensor(log_q)), axis=-1)
    return ad.mean(per_row)


class Adam:
    """Adam with global gradient-norm clipping."""

    def __init__(self, params: dict, lr: float, betas=(0.9, 0.999), eps=1e-8,
                 max_grad_norm: float = 0.0):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.max_grad_norm = max_grad_norm
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def step(self):
        grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
                 for k, t in self.params.items()}
        if self.max_grad_norm > 0:
            total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if total > self.max_grad_norm:
                scale = self.max_grad_norm / (total + 1e-12)
                grads = {k: g * scale for k, g in grads.items()}
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for k, tensor in self.params.items():
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            tensor.data -= self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None


def train(cfg: TrainConfig, net_cfg, obs_cfg: ObservationConfig, weights: RewardWeights,
          sampler: WorldSampler, out_dir, ramp=(0.2, 0.8), params=None, log=print):
    """Full training loop; writes metrics.csv and a checkpoint series under
    out_dir and returns (params, metrics rows)."""
    os.makedirs(out_dir, exist_ok=True)
    lattice = sampler.lattice
    if lattice.n_tokens != net_cfg.n_tokens:
        raise ValueError("lattice token count %d != network head size %d"
                         % (lattice.n_tokens, net_cfg.n_tokens))
    if params is None:
        params = pol.init_params(net_cfg)
        if cfg.init_at_prior:
            # starting at the action prior keeps early rollouts smooth and
            # near-straight instead of a destructive jerk/steer random walk
            params["pi_b"].data[:] = lattice_log_prior(lattice, cfg.prior_sigma)
    opt = Adam(params, cfg.learning_rate, max_grad_norm=cfg.max_grad_norm)

    curriculum = CurriculumState(
        rho=0.0,
        ramp_start=int(ramp[0] * cfg.total_steps),
        ramp_end=max(int(ramp[1] * cfg.total_steps), int(ramp[0] * cfg.total_steps) + 1),
    )
    seed_root = np.random.SeedSequence(cfg.seed)
    world_seed_stream = np.random.default_rng(seed_root.spawn(1)[0])
    minibatch_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7]))

    layout_sig = obs_cfg.layout_signature()
    worlds = [
        sampler.sample("pre", int(world_seed_stream.integers(2**31 - 1)), 0.0)
        for _ in range(cfg.world_count)
    ]
    _save_checkpoint(out_dir, 0, params, net_cfg, layout_sig, obs_cfg, sampler)

    metrics_rows = []
    steps_done = 0
    iteration = 0
    while steps_done < cfg.total_steps:
        iteration += 1
        curriculum = advance_curriculum(curriculum, steps_done)
        for rw in worlds:
            rw.world.rho = curriculum.rho

        batch, outcomes, worlds = collect_rollouts(
            params, net_cfg, worlds, cfg.rollout_steps, curriculum,
            sampler, world_seed_stream, obs_cfg, weights,
            value_scale=cfg.value_scale,
        )
        if len(batch) == 0:
            raise RuntimeError("iteration %d collected no transitions" % iteration)
        steps_done += len(batch)

        advantages, returns = compute_advantages(batch, cfg.gamma, cfg.gae_lambda)
        base_weights = eq17_weights(batch)
        n_worlds = max(len(np.unique(batch.world_ids)), 1)
        sample_weights = base_weights * (len(batch) / n_worlds)

        kl_value = 0.0
        for epoch in range(cfg.epochs):
            order = minibatch_rng.permutation(len(batch))
            kl_epoch = []
            for lo in range(0, len(order), cfg.minibatch_size):
                idx = order[lo: lo + cfg.minibatch_size]
                opt.zero_grad()
                out = pol.forward(params, batch.obs[idx], net_cfg)
                new_logp = ad.reshape(
                    ad.gather_last(pol.log_probs(out.logits), batch.tokens[idx]), (len(idx),)
                )
                surr = surrogate_terms(new_logp, batch.logp[idx], advantages[idx], cfg)
                pi_term = ad.mean(ad.mul(surr, Tensor(sample_weights[idx])))
                # the head regresses returns / value_scale so its gradient stays O(1)
                v_err = ad.square(out.value - Tensor(returns[idx] / cfg.value_scale))
                v_term = ad.mean(ad.mul(v_err, Tensor(sample_weights[idx])))
                kl = kl_action_regularizer(out.logits, lattice, cfg.prior_sigma)
                loss = pi_term + cfg.value_coef * v_term + cfg.kl_sign * cfg.kl_coef * kl
                if not np.isfinite(loss.data):
                    raise RuntimeError(
                        "non-finite loss at iteration %d (pi=%r v=%r kl=%r)"
                        % (iteration, pi_term.data, v_term.data, kl.data)
                    )
                loss.backward()
                opt.step()
                kl_epoch.append(float(kl.data))
            kl_value = float(np.mean(kl_epoch)) if kl_epoch else 0.0

        agents = max(outcomes["agents"], 1)
        row = (
            iteration, steps_done, curriculum.rho, float(batch.rewards.mean()),
            outcomes["goal"] / agents, outcomes["fault"] / agents,
            outcomes["offroad"] / agents, outcomes["early"] / agents, kl_value,
        )
        metrics_rows.append(row)
        log("iter %d steps %d rho %.3f reward %.4f goal %.3f fault %.3f" % (
            row[0], row[1], row[2], row[3], row[4], row[5]))
        if cfg.checkpoint_every and iteration % cfg.checkpoint_every == 0:
            _save_checkpoint(out_dir, iteration, params, net_cfg, layout_sig, obs_cfg, sampler)
        if cfg.total_steps == 0:
            break

    _write_metrics(os.path.join(out_dir, "metrics.csv"), metrics_rows)
    if iteration > 0:
        _save_checkpoint(out_dir, None, params, net_cfg, layout_sig, obs_cfg, sampler)
    return params, metrics_rows


def _save_checkpoint(out_dir, iteration, params, net_cfg, layout_sig, obs_cfg=None,
                     sampler=None):
    name = "checkpoint_final.ckpt" if iteration is None else "checkpoint_%05d.ckpt" % iteration
    extra = {}
    if obs_cfg is not None:
        extra["obs_config"] = asdict(obs_cfg)
    if sampler is not None and sampler.lattice is not None:
        extra["lattice"] = {
            "jerk": sampler.lattice.jerk_values.tolist(),
            "steer_rate": sampler.lattice.steer_rate_values.tolist(),
        }
    if sampler is not None and sampler.bounds is not None:
        extra["bounds"] = {
            "car": asdict(sampler.bounds.car),
            "truck": asdict(sampler.bounds.truck),
        }
    pol.save_params(os.path.join(out_dir, name), params, net_cfg, layout_sig,
                    extra=extra or None)


def _write_metrics(path, rows):
    with open(path, "w") as f:
        f.write(METRICS_HEADER + "\n")
        for row in rows:
            f.write("%d,%d,%r,%r,%r,%r,%r,%r,%r\n" % row)
