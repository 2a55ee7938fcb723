"""Per-step reward assembly and the coupled reward/scenario curricula.

The reward mixes sparse terminal terms (goal, collision, road edge, early
termination) with dense shaping (progress, alignment, speed tracking, lane
compliance).  A curriculum progress variable rho in [0, 1] anneals the dense
shaping away, ramps terminal penalties up by a factor lambda, and scales the
goal reward by the completion-quality product once mature.  At rho = 1 the
scenario generator switches to its denser post-curriculum parameters.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class RewardWeights:
    """Fixed reward weights and curriculum constants.

    Defaults are the production constants; `d_near` and `v_eps` shape the
    progress decay and the speed floor used in divisions.
    """

    w_goal: float = 3.3
    w_term: float = 8.3
    w_collision: float = 1.0
    w_edge: float = 0.9
    w_lane: float = 0.005
    w_progress: float = 0.25
    w_align: float = 0.09
    w_speed: float = 0.07
    lam: float = 2.69
    kappa: float = 1.01
    t_ramp: float = 5.0
    d_near: float = 10.0
    v_eps: float = 0.5

    def __post_init__(self):
        if self.lam <= 1.0 or self.kappa <= 1.0:
            raise ValueError("lambda and kappa must exceed 1")


def multipliers(rho: float, w_s: float, w_a: float, lam: float = 2.69):
    """Curriculum multipliers (m_g, m_f, m_e, m_t, m_p) at progress rho."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho outside [0, 1]: %r" % rho)
    if w_s not in (0.1, 1.0) or w_a not in (0.1, 1.0):
        raise ValueError("goal-quality factors must be 0.1 or 1")
    return multipliers_unchecked(rho, w_s, w_a, lam)


def multipliers_unchecked(rho, w_s, w_a, lam=2.69):
    m_g = 1.0 - rho * (1.0 - w_s * w_a)
    m_terminal = 1.0 + (lam - 1.0) * rho
    m_p = 1.0 - rho
    return m_g, m_terminal, m_terminal, m_terminal, m_p


def progress_reward(d_prev: float, d_curr: float, v: float, kappa: float = 1.01,
                    d_near: float = 10.0, v_eps: float = 0.5) -> float:
    """Speed-normalized goal progress, decayed near the goal, clipped to +/-0.5."""
    psi = min(max(d_curr / d_near, 0.0), 1.0)
    raw = (d_prev - kappa * d_curr) / max(v, v_eps) * psi
    return min(max(raw, -0.5), 0.5)


def alignment_penalty(delta_theta: float, d: float, v: float, t_ramp: float = 5.0,
                      v_eps: float = 0.5) -> float:
    """Yaw-error penalty that ramps up as time-to-go shrinks."""
    ramp = min(max(1.0 - d / (max(v, v_eps) * t_ramp), 0.0), 1.0)
    return delta_theta * ramp


@dataclass
class AgentStepEvents:
    """Scalar event view for one agent at one step."""

    goal: bool = False
    w_speed: float = 0.1
    w_align: float = 0.1
    at_fault: bool = False
    road_edge: bool = False
    lane_boundary: bool = False
    early_term: bool = False
    term_distance: float = 0.0


def step_reward(events: AgentStepEvents, agent, derived, weights: RewardWeights, rho: float):
    """Assemble the eight-term reward for one agent step.

    `derived` is (d_prev, d_curr, delta_theta) from the same step.  Returns
    (total, breakdown) where the signed breakdown entries sum to the total.
    """
    d_prev, d_curr, delta_theta = derived
    m_g, m_f, m_e, m_t, m_p = multipliers_unchecked(
        rho, events.w_speed, events.w_align, lam=weights.lam
    )
    breakdown = {
        "goal": weights.w_goal * m_g * (1.0 if events.goal else 0.0),
        "lane": weights.w_lane * (0.0 if events.lane_boundary else 1.0),
        "collision": -weights.w_collision * m_f * (1.0 if events.at_fault else 0.0),
        "road_edge": -weights.w_edge * m_e * (1.0 if events.road_edge else 0.0),
        "termination": -weights.w_term * m_t * (events.term_distance if events.early_term else 0.0),
        "alignment": -weights.w_align * alignment_penalty(
            delta_theta, d_curr, agent.v, weights.t_ramp, weights.v_eps
        ),
        "speed": -weights.w_speed * abs(agent.v - agent.spec.v_goal),
        "progress": weights.w_progress * m_p * progress_reward(
            d_prev, d_curr, agent.v, weights.kappa, weights.d_near, weights.v_eps
        ),
    }
    return sum(breakdown.values()), breakdown


@dataclass
class CurriculumState:
    """Monotone curriculum progress and the pre/post scenario phase."""

    rho: float = 0.0
    ramp_start: int = 0
    ramp_end: int = 1
    phase: str = "pre"


def advance_curriculum(state: CurriculumState, training_step: int) -> CurriculumState:
    """Move rho along the linear ramp; flip to the post scenario phase at rho = 1."""
    span = max(state.ramp_end - state.ramp_start, 1)
    rho = min(max((training_step - state.ramp_start) / span, 0.0), 1.0)
    rho = max(rho, state.rho)
    return CurriculumState(
        rho=rho, ramp_start=state.ramp_start, ramp_end=state.ramp_end,
        phase="post" if rho >= 1.0 else "pre",
    )
