import numpy as np
import pytest

from lanesim.dynamics import AgentSpec, AgentState
from lanesim.rewards import (
    AgentStepEvents, CurriculumState, RewardWeights, advance_curriculum,
    alignment_penalty, multipliers, progress_reward, step_reward,
)


def agent(v=10.0, v_goal=10.0):
    spec = AgentSpec(start=(0, 0, 0), goal=(100.0, 0.0), v_init=v, v_goal=v_goal, alpha=0.5)
    return AgentState(x=0.0, y=0.0, heading=0.0, v=v, spec=spec)


class TestMultipliers:
    def test_start_of_curriculum(self):
        assert multipliers(0.0, 1.0, 1.0) == (1.0, 1.0, 1.0, 1.0, 1.0)
        assert multipliers(0.0, 0.1, 0.1) == (1.0, 1.0, 1.0, 1.0, 1.0)

    def test_end_of_curriculum(self):
        m_g, m_f, m_e, m_t, m_p = multipliers(1.0, 1.0, 1.0, lam=2.69)
        assert m_f == m_e == m_t == pytest.approx(2.69, abs=1e-12)
        assert m_p == 0.0
        assert m_g == pytest.approx(1.0, abs=1e-12)

    def test_goal_quality_scaling(self):
        m_g = multipliers(1.0, 0.1, 0.1)[0]
        assert m_g == pytest.approx(0.01, abs=1e-12)

    def test_domain_checks(self):
        with pytest.raises(ValueError):
            multipliers(1.5, 1.0, 1.0)
        with pytest.raises(ValueError):
            multipliers(0.5, 0.3, 1.0)

    def test_monotone_in_rho(self):
        rhos = np.linspace(0, 1, 11)
        terminal = [multipliers(r, 1.0, 1.0)[1] for r in rhos]
        progress = [multipliers(r, 1.0, 1.0)[4] for r in rhos]
        goal_soft = [multipliers(r, 0.1, 1.0)[0] for r in rhos]
        goal_perfect = [multipliers(r, 1.0, 1.0)[0] for r in rhos]
        assert np.all(np.diff(terminal) >= 0)
        assert np.all(np.diff(progress) <= 0)
        assert np.all(np.diff(goal_soft) <= 0)
        assert np.all(np.array(goal_perfect) == 1.0)


class TestProgress:
    def test_small_forward_step(self):
        r = progress_reward(100.0, 99.0, 10.0, kappa=1.01)
        assert r == pytest.approx((100.0 - 1.01 * 99.0) / 10.0, abs=1e-12)
        assert r == pytest.approx(0.001, abs=1e-12)

    def test_stationary_clips_negative(self):
        assert progress_reward(100.0, 100.0, 0.0, kappa=1.01) == -0.5

    def test_zero_at_goal(self):
        assert progress_reward(1.0, 0.0, 5.0) == 0.0

    def test_always_bounded(self):
        rng = np.random.default_rng(0)
        for _ in range(2000):
            r = progress_reward(rng.uniform(0, 200), rng.uniform(0, 200), rng.uniform(0, 40))
            assert -0.5 <= r <= 0.5


class TestAlignment:
    def test_far_away_zero(self):
        assert alignment_penalty(0.4, d=100.0, v=10.0, t_ramp=5.0) == 0.0

    def test_at_goal_full(self):
        assert alignment_penalty(0.4, d=0.0, v=10.0, t_ramp=5.0) == pytest.approx(0.4)

    def test_half_ramp(self):
        assert alignment_penalty(0.2, d=25.0, v=10.0, t_ramp=5.0) == pytest.approx(0.1)

    def test_ramp_bounded(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            dt, d, v = rng.uniform(0, np.pi), rng.uniform(0, 300), rng.uniform(0, 40)
            pen = alignment_penalty(dt, d, v)
            assert 0.0 <= pen <= dt + 1e-12


class TestStepReward:
    def test_clean_goal_payout(self):
        events = AgentStepEvents(goal=True, w_speed=1.0, w_align=1.0)
        total, breakdown = step_reward(events, agent(), (0.0, 0.0, 0.0), RewardWeights(), rho=0.0)
        assert total == pytest.approx(3.3 + 0.005, abs=1e-12)
        assert breakdown["goal"] == pytest.approx(3.3)

    def test_at_fault_collision_end_curriculum(self):
        events = AgentStepEvents(at_fault=True)
        _, breakdown = step_reward(events, agent(), (100.0, 100.0, 0.0), RewardWeights(), rho=1.0)
        assert breakdown["collision"] == pytest.approx(-1.0 * 2.69, abs=1e-12)

    def test_early_termination_scales_with_distance(self):
        events = AgentStepEvents(early_term=True, term_distance=80.0)
        _, breakdown = step_reward(events, agent(), (80.0, 80.0, 0.0), RewardWeights(), rho=0.0)
        assert breakdown["termination"] == pytest.approx(-8.3 * 80.0, abs=1e-9)

    def test_non_fault_party_pays_nothing(self):
        events = AgentStepEvents(at_fault=False)
        _, breakdown = step_reward(events, agent(), (50.0, 49.0, 0.1), RewardWeights(), rho=0.7)
        assert breakdown["collision"] == 0.0

    def test_lane_compliance_sign(self):
        clean = step_reward(AgentStepEvents(), agent(), (50.0, 49.0, 0.0), RewardWeights(), 0.0)
        crossing = step_reward(AgentStepEvents(lane_boundary=True), agent(),
                               (50.0, 49.0, 0.0), RewardWeights(), 0.0)
        assert clean[1]["lane"] == pytest.approx(0.005)
        assert crossing[1]["lane"] == 0.0

    def test_breakdown_sums_to_total(self):
        rng = np.random.default_rng(9)
        weights = RewardWeights()
        for _ in range(5000):
            events = AgentStepEvents(
                goal=bool(rng.integers(2)),
                w_speed=float(rng.choice([0.1, 1.0])),
                w_align=float(rng.choice([0.1, 1.0])),
                at_fault=bool(rng.integers(2)),
                road_edge=bool(rng.integers(2)),
                lane_boundary=bool(rng.integers(2)),
                early_term=bool(rng.integers(2)),
                term_distance=float(rng.uniform(0, 130)),
            )
            a = agent(v=float(rng.uniform(0, 40)), v_goal=float(rng.uniform(0, 40)))
            derived = (float(rng.uniform(0, 150)), float(rng.uniform(0, 150)),
                       float(rng.uniform(0, np.pi)))
            total, breakdown = step_reward(events, a, derived, weights, float(rng.uniform(0, 1)))
            assert abs(sum(breakdown.values()) - total) < 1e-12


class TestCurriculum:
    def test_before_ramp(self):
        state = CurriculumState(ramp_start=100, ramp_end=200)
        out = advance_curriculum(state, 50)
        assert out.rho == 0.0 and out.phase == "pre"

    def test_midpoint(self):
        state = CurriculumState(ramp_start=100, ramp_end=200)
        assert advance_curriculum(state, 150).rho == pytest.approx(0.5)

    def test_completion_flips_phase(self):
        state = CurriculumState(ramp_start=100, ramp_end=200)
        out = advance_curriculum(state, 250)
        assert out.rho == 1.0 and out.phase == "post"

    def test_monotone(self):
        state = CurriculumState(rho=0.8, ramp_start=100, ramp_end=200)
        assert advance_curriculum(state, 120).rho == 0.8

    def test_weights_table_defaults(self):
        w = RewardWeights()
        assert (w.w_goal, w.w_term, w.w_collision, w.w_edge) == (3.3, 8.3, 1.0, 0.9)
        assert (w.w_lane, w.w_progress, w.w_align, w.w_speed) == (0.005, 0.25, 0.09, 0.07)
        assert (w.lam, w.kappa, w.t_ramp) == (2.69, 1.01, 5.0)
