"""Acceptance suite: one test per release criterion, each printing a PASS line
with its measured values.

Criteria 10 and 11 train a policy end-to-end on a synthetic 3-lane highway
(2M environment steps) and are marked `slow`; everything else completes in
seconds.  Run the full gate with plain `pytest tests/test_acceptance.py`.
"""

import math
import os

import numpy as np
import pytest

from lanesim import autodiff as ad
from lanesim import policy as pol
from lanesim.autodiff import Tensor
from lanesim.dynamics import (
    CAR, ActionLattice, AgentSpec, AgentState, footprint, step_hitch,
)
from lanesim.geometry import boxes_intersect
from lanesim.maps import build_lane_graph
from lanesim.observation import ObservationConfig
from lanesim.rewards import AgentStepEvents, RewardWeights, multipliers, progress_reward, step_reward
from lanesim.scenario import GeneratorParams, build_pool, sample_world, truck_count
from lanesim.synthetic import straight_map
from lanesim.training import (
    TrainConfig, WorldSampler, kl_action_regularizer, policy_loss, train,
)
from lanesim.world import World, attribute_fault

from test_scenario import oracle_shortest
from test_policy import SMALL, random_obs


def report(criterion, detail):
    print("\nACCEPTANCE %s: PASS (%s)" % (criterion, detail))


def truck(x=0.0, y=0.0, heading=0.0, v=10.0):
    spec = AgentSpec(start=(x, y, heading), goal=(100.0, 0.0), v_init=v, v_goal=v,
                     alpha=1.0, vtype="truck", dims=(6.0, 2.5, 10.0, 2.5))
    return AgentState(x=x, y=y, heading=heading, v=v, spec=spec)


def car(x=0.0, y=0.0, heading=0.0, v=10.0, length=5.0):
    spec = AgentSpec(start=(x, y, heading), goal=(100.0, 0.0), v_init=v, v_goal=v,
                     alpha=1.0, vtype=CAR, dims=(length, 2.0, 0.0, 0.0))
    return AgentState(x=x, y=y, heading=heading, v=v, spec=spec)


def test_criterion_1_curriculum_multipliers():
    m0 = multipliers(0.0, 1.0, 1.0, lam=2.69)
    assert all(abs(m - 1.0) <= 1e-12 for m in m0)
    m_g, m_f, m_e, m_t, m_p = multipliers(1.0, 1.0, 1.0, lam=2.69)
    assert abs(m_f - 2.69) <= 1e-12 and abs(m_e - 2.69) <= 1e-12 and abs(m_t - 2.69) <= 1e-12
    assert abs(m_p) <= 1e-12
    assert abs(m_g - 1.0) <= 1e-12
    soft = multipliers(1.0, 0.1, 0.1, lam=2.69)[0]
    assert abs(soft - 0.01) <= 1e-12
    report("1 (curriculum multipliers)",
           "rho=0 -> all 1; rho=1 -> terminal 2.69, progress 0, m_g(0.1,0.1)=%.12f" % soft)


def test_criterion_2_hitch_formula():
    value = step_hitch(truck(v=10.0), theta_dot=0.0, dt=0.1)
    # state carries phi=0.1
    state = truck(v=10.0)
    state.phi = 0.1
    value = step_hitch(state, theta_dot=0.0, dt=0.1)
    assert abs(value - 0.0900167) <= 1e-7
    state.phi = 1.5
    clipped = step_hitch(state, theta_dot=50.0, dt=1.0)
    assert clipped == math.pi / 2
    state.phi = -1.5
    clipped_low = step_hitch(state, theta_dot=-50.0, dt=1.0)
    assert clipped_low == -math.pi / 2
    report("2 (hitch update)", "phi'=%.7f matches 0.0900167 +- 1e-7; clipping exact" % value)


def test_criterion_3_fault_truth_table():
    rear = attribute_fault(car(x=0.0), car(x=10.0))
    side = attribute_fault(car(x=0.0, y=0.0), car(x=0.0, y=3.0))
    head_on = attribute_fault(car(x=0.0, heading=0.0), car(x=6.0, heading=math.pi))
    assert rear == (True, False)
    assert side == (True, True)
    assert head_on == (True, True)

    rng = np.random.default_rng(2024)
    checked = 0
    while checked < 10_000:
        a = car(x=rng.uniform(-4, 4), y=rng.uniform(-4, 4),
                heading=rng.uniform(-math.pi, math.pi), length=rng.uniform(4.0, 7.0))
        b = car(x=rng.uniform(-4, 4), y=rng.uniform(-4, 4),
                heading=rng.uniform(-math.pi, math.pi), length=rng.uniform(4.0, 7.0))
        if not boxes_intersect(footprint(a)[0], footprint(b)[0]):
            continue
        checked += 1
        f_ab = attribute_fault(a, b)
        f_ba = attribute_fault(b, a)
        assert f_ab != (False, False)
        assert f_ab == (f_ba[1], f_ba[0])
    report("3 (fault attribution)",
           "truth table (1,0)/(1,1)/(1,1); %d random colliding pairs: never (0,0), symmetric" % checked)


def test_criterion_4_scenario_generator_contract():
    bundle = straight_map(n_lanes=3, length=300.0, map_id="gate4")
    graph = build_lane_graph(bundle)
    params = GeneratorParams(p_lc=0.5, p_truck=0.5, n_min=4, n_max=8,
                             d_min=50.0, d_max=130.0, k=3)
    pool = build_pool(graph, params, seed=17)

    oracle_cache = {}
    for s, g, length, c in zip(pool.starts, pool.goals, pool.lengths, pool.c_values):
        assert abs(c) <= 3
        assert 50.0 <= length <= 130.0
        if int(s) not in oracle_cache:
            oracle_cache[int(s)] = oracle_shortest(graph, int(s), 3)
        assert oracle_cache[int(s)][(int(g), int(c))] == pytest.approx(float(length), abs=1e-9)

    lc = agents = 0
    lane_of = graph.lane_index
    for seed in range(1000):
        spec = sample_world(pool, params, horizon_s=15.0, seed=seed)
        n_planned = len(spec.agents) + spec.placement_failures
        trucks = sum(a.vtype == "truck" for a in spec.agents)
        if spec.placement_failures == 0:
            assert trucks == truck_count(params.p_truck, n_planned)
        for a in spec.agents:
            s_node = int(np.argmin(np.linalg.norm(graph.positions - np.array(a.start[:2]), axis=1)))
            g_node = int(np.argmin(np.linalg.norm(graph.positions - np.array(a.goal), axis=1)))
            lc += lane_of[s_node] != lane_of[g_node]
            agents += 1
    frac = lc / agents
    assert abs(frac - 0.5) <= 0.05
    report("4 (scenario generator)",
           "%d pool entries oracle-verified; lane-change fraction %.3f in 0.5 +- 0.05 over 1000 worlds"
           % (len(pool), frac))


def test_criterion_5_reward_assembly():
    weights = RewardWeights()
    events = AgentStepEvents(goal=True, w_speed=1.0, w_align=1.0)
    total, breakdown = step_reward(events, car(v=10.0), (0.0, 0.0, 0.0), weights, rho=0.0)
    assert abs(breakdown["goal"] - 3.3) <= 1e-12

    rng = np.random.default_rng(55)
    worst = 0.0
    for _ in range(100_000):
        events = AgentStepEvents(
            goal=bool(rng.integers(2)),
            w_speed=float(rng.choice([0.1, 1.0])),
            w_align=float(rng.choice([0.1, 1.0])),
            at_fault=bool(rng.integers(2)),
            road_edge=bool(rng.integers(2)),
            lane_boundary=bool(rng.integers(2)),
            early_term=bool(rng.integers(2)),
            term_distance=float(rng.uniform(0.0, 130.0)),
        )
        agent = car(v=float(rng.uniform(0, 40)))
        agent.spec.v_goal = float(rng.uniform(0, 40))
        d_prev, d_curr = float(rng.uniform(0, 150)), float(rng.uniform(0, 150))
        derived = (d_prev, d_curr, float(rng.uniform(0, math.pi)))
        rho = float(rng.uniform(0, 1))
        total, breakdown = step_reward(events, agent, derived, weights, rho)
        worst = max(worst, abs(sum(breakdown.values()) - total))
        prog = progress_reward(d_prev, d_curr, agent.v, weights.kappa)
        assert -0.5 <= prog <= 0.5
    assert worst <= 1e-12
    report("5 (reward assembly)",
           "10^5 random combinations: max breakdown-vs-total gap %.2e; progress in [-0.5, 0.5]; "
           "goal pays 3.3 at rho=0" % worst)


def test_criterion_6_sample_reweighting():
    from test_training import toy_batch

    batch = toy_batch([1, 4])
    advantages = np.array([-2.0, -1.0, -1.0, -1.0, -1.0])
    loss = policy_loss(batch, Tensor(batch.logp.copy()), advantages, TrainConfig(algorithm="ppo"))
    assert loss.data == 3.0

    for n in (2, 5, 8):
        dup = toy_batch([n])
        dup_loss = policy_loss(dup, Tensor(dup.logp.copy()), np.full(n, -1.25),
                               TrainConfig(algorithm="ppo"))
        assert dup_loss.data == pytest.approx(1.25, abs=1e-12)
    report("6 (sample reweighting)",
           "two-world fixture totals exactly 3.0; duplicated-agent contribution invariant")


def test_criterion_7_gradient_correctness():
    params = pol.init_params(SMALL)
    rng = np.random.default_rng(77)
    obs = random_obs(SMALL, 6, rng)
    proj_l = rng.normal(size=(6, SMALL.n_tokens))
    proj_v = rng.normal(size=6)
    lattice = ActionLattice(jerk_values=(-2.0, 0.0, 2.0), steer_rate_values=(-0.1, 0.0, 0.1))
    small9 = SMALL  # 9 tokens matches this lattice

    def loss_fn(out):
        return ad.sum_(ad.mul(out.logits, Tensor(proj_l))) \
            + ad.sum_(ad.mul(out.value, Tensor(proj_v))) \
            + kl_action_regularizer(out.logits, lattice, (3.0, 0.1))

    grads = pol.gradients(params, small9, obs, loss_fn)

    def scalar():
        out = pol.forward(params, obs, small9)
        return float(loss_fn(out).data)

    coord_rng = np.random.default_rng(78)
    checked = 0
    for name in sorted(params):
        data = params[name].data
        for _ in range(5):
            idx = tuple(coord_rng.integers(s) for s in data.shape)
            keep = data[idx]
            h = 1e-6 * max(1.0, abs(keep))
            data[idx] = keep + h
            up = scalar()
            data[idx] = keep - h
            down = scalar()
            data[idx] = keep
            fd = (up - down) / (2.0 * h)
            assert abs(grads[name][idx] - fd) <= 1e-4 * max(1.0, abs(fd)), (name, idx)
            checked += 1
    assert checked >= 100
    report("7 (gradient correctness)",
           "%d coordinates vs central differences within 1e-4 (network + KL regularizer)" % checked)


def test_criterion_8_permutation_invariance():
    from test_policy import permute_block

    params = pol.init_params(SMALL)
    rng = np.random.default_rng(88)
    mismatches = 0
    for k in range(100):
        obs = random_obs(SMALL, 1, rng)
        out = pol.forward(params, obs, SMALL)
        perm = rng.permutation(SMALL.n_neighbors)
        out_p = pol.forward(params, permute_block(SMALL, obs, perm, "neighbors"), SMALL)
        if not (np.array_equal(out.logits.data, out_p.logits.data)
                and np.array_equal(out.value.data, out_p.value.data)):
            mismatches += 1
    assert mismatches == 0
    report("8 (permutation invariance)",
           "100 random observations bit-identical under neighbor permutations")


GATE_OBS = ObservationConfig(n_neighbors=4, road_points=24, road_radius=30.0)
GATE_NET = pol.NetConfig(width=32, heads=2, n_tokens=49, n_neighbors=4, n_road=24,
                         init_seed=0)


def smoke_sampler(n_agents=4, length=400.0, seed=1):
    bundle = straight_map(n_lanes=3, length=length, map_id="smoke")
    graph = build_lane_graph(bundle)
    pre = GeneratorParams(p_lc=0.4, p_truck=0.0, n_min=n_agents, n_max=n_agents,
                          d_min=50.0, d_max=70.0, k=2)
    post = GeneratorParams(p_lc=0.5, p_truck=0.0, n_min=n_agents, n_max=n_agents,
                           d_min=50.0, d_max=70.0, k=2)
    pool = build_pool(graph, pre, seed=seed)
    return bundle, graph, pool, WorldSampler([(bundle, graph, pool)], pre, post,
                                             horizon_s=10.0)


def test_criterion_9_training_determinism(tmp_path):
    def run(tag, workers):
        cfg = TrainConfig(algorithm="dclamp", total_steps=4_000, world_count=2,
                          rollout_steps=48, minibatch_size=256, epochs=2, seed=123,
                          checkpoint_every=5, workers=workers)
        _, _, _, sampler = smoke_sampler(n_agents=2)
        out = tmp_path / tag
        train(cfg, GATE_NET, GATE_OBS, RewardWeights(), sampler, out, log=lambda *a: None)
        return out

    outs = [run("a", 1), run("b", 1), run("c", 4)]
    names = sorted(os.listdir(outs[0]))
    assert "metrics.csv" in names and "checkpoint_final.ckpt" in names
    for other in outs[1:]:
        assert sorted(os.listdir(other)) == names
        for name in names:
            a = (outs[0] / name).read_bytes()
            b = (other / name).read_bytes()
            assert a == b, "file %s differs" % name
    iters = len((outs[0] / "metrics.csv").read_text().strip().splitlines()) - 1
    assert iters >= 10
    report("9 (determinism)",
           "%d iterations on 2 worlds byte-identical across executions and worker counts 1/4"
           % iters)


SMOKE_DIR = os.path.join(os.path.dirname(__file__), "_smoke_run")


def _smoke_checkpoint():
    """Train the desk-scale policy once and cache it for criteria 10 and 11."""
    ckpt = os.path.join(SMOKE_DIR, "checkpoint_final.ckpt")
    if os.path.exists(ckpt):
        return ckpt
    _, _, _, sampler = smoke_sampler()
    cfg = TrainConfig(
        algorithm="dclamp", total_steps=2_000_000, world_count=8, rollout_steps=256,
        minibatch_size=1024, epochs=2, learning_rate=3e-4, seed=7, checkpoint_every=0,
    )
    train(cfg, GATE_NET, GATE_OBS, RewardWeights(), sampler, SMOKE_DIR,
          log=lambda *a: None)
    return ckpt


@pytest.mark.slow
def test_criterion_10_learning_smoke():
    from lanesim.metrics import PolicyRunner, score_episode

    ckpt = _smoke_checkpoint()
    runner = PolicyRunner.from_checkpoint(ckpt)
    bundle, graph, pool, sampler = smoke_sampler()
    goals = faults = agents = 0
    episodes = 0
    seed = 10_000
    while episodes < 200:
        spec = sample_world(pool, sampler.gen["post"], 10.0, seed)
        seed += 1
        if len(spec.agents) != 4:
            continue
        outcomes, _ = runner.run(bundle, graph, spec, mode="greedy", seed=seed)
        episodes += 1
        agents += len(outcomes)
        goals += sum(o.goal_reached for o in outcomes)
        faults += sum(o.at_fault_collision for o in outcomes)
    goal_rate = goals / agents
    fault_rate = faults / agents
    assert goal_rate >= 0.70, "goal rate %.3f below 0.70" % goal_rate
    assert fault_rate <= 0.10, "at-fault collision rate %.3f above 0.10" % fault_rate
    report("10 (desk-scale learning)",
           "200 post-training episodes: goal rate %.3f >= 0.70, at-fault rate %.3f <= 0.10"
           % (goal_rate, fault_rate))


@pytest.mark.slow
def test_criterion_11_conditioning_effect():
    from lanesim.metrics import PolicyRunner

    ckpt = _smoke_checkpoint()
    runner = PolicyRunner.from_checkpoint(ckpt)
    bundle, graph, pool, sampler = smoke_sampler()
    base = sample_world(pool, sampler.gen["pre"], 10.0, seed=424)

    def mean_speed(scale, seed):
        import copy
        spec = copy.deepcopy(base)
        agent = spec.agents[0]
        agent.v_goal = float(np.clip(agent.v_goal * scale, 0.0, 40.0))
        outcomes, _ = runner.run(bundle, graph, spec, mode="sample", seed=seed)
        traj = outcomes[0].trajectory
        return float(traj[:, 4].mean())

    slow_speeds = [mean_speed(0.6, s) for s in range(20)]
    fast_speeds = [mean_speed(1.4, s) for s in range(20)]
    slow_mean, fast_mean = np.mean(slow_speeds), np.mean(fast_speeds)
    assert slow_mean < fast_mean, (slow_mean, fast_mean)
    report("11 (conditioning effect)",
           "mean speed %.2f m/s at 0.6x v_goal < %.2f m/s at 1.4x over 20 seeded rollouts"
           % (slow_mean, fast_mean))


def test_criterion_12_metrics_pipeline(tmp_path):
    from lanesim.metrics import displacement_errors, evaluate, PolicyRunner
    from lanesim.scenario import save_scenario, ScenarioSpec
    from lanesim.maps import save_map

    def straight_traj(speed, n=60, dt=0.1):
        t = np.arange(n) * dt
        return np.stack([t, speed * t, np.zeros(n)], axis=1)

    ade, fde, _ = displacement_errors(straight_traj(10.0), straight_traj(11.0))
    assert abs(ade - 2.55) <= 1e-9
    assert abs(fde - 5.0) <= 1e-9
    offset = straight_traj(10.0)
    shifted = offset.copy()
    shifted[:, 2] += 1.0
    ade1, fde1, _ = displacement_errors(offset, shifted)
    assert abs(ade1 - 1.0) <= 1e-12 and abs(fde1 - 1.0) <= 1e-12

    # replay of references reproduces them exactly
    bundle = straight_map(3, 300.0, map_id="gate12")
    graph = build_lane_graph(bundle)
    save_map(bundle, tmp_path / "map.json")
    spec = AgentSpec(start=(10.0, 0.0, 0.0), goal=(70.0, 0.0), v_init=8.0, v_goal=8.0, alpha=0.5)
    t = np.arange(76) * 0.1
    ref = np.stack([t, 10.0 + 8.0 * t, np.zeros_like(t), np.zeros_like(t)], axis=1)
    scen = ScenarioSpec(map_id="gate12", seed=0, agents=[spec], horizon=75, dt=0.1)
    save_scenario(scen, tmp_path / "scenario_000.json", references=[ref], map_path="map.json")
    params = pol.init_params(GATE_NET)
    runner = PolicyRunner(params, GATE_NET, GATE_OBS)
    report_obj = evaluate(runner, [tmp_path / "scenario_000.json"], mode="replay")
    assert report_obj.ade == (0.0, 0.0) and report_obj.fde == (0.0, 0.0)
    assert report_obj.gr[0] == 100.0
    report("12 (metrics pipeline)",
           "closed-form ADE/FDE 2.55/5.00 within 1e-9; replay gives ADE=FDE=0 and GR from references")
