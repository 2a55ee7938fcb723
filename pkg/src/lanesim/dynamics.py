"""Vehicle kinematics: discrete-time bicycle model, trailer articulation, and
the discrete jerk/steering-rate action lattice.

States advance semi-implicitly: acceleration and steering integrate first,
then speed, then pose.  Articulated trucks carry a hitch angle that couples
tractor yaw rate and speed; passenger cars keep it at zero.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import box_corners

CAR = "car"
TRUCK = "truck"

HITCH_LIMIT = math.pi / 2.0


@dataclass
class AgentSpec:
    """Per-agent conditioning: start, goal, target speed, control range, body."""

    start: tuple  # (x, y, heading)
    goal: tuple  # (x, y)
    v_init: float
    v_goal: float
    alpha: float
    vtype: str = CAR
    dims: tuple = (4.6, 1.9, 0.0, 0.0)  # (length, width, trailer_length, trailer_width)

    def __post_init__(self):
        if self.vtype not in (CAR, TRUCK):
            raise ValueError("unknown vehicle type %r" % (self.vtype,))
        if self.vtype == CAR and (self.dims[2] != 0.0 or self.dims[3] != 0.0):
            raise ValueError("car dims must have zero trailer terms")
        if not 0.0 <= self.v_goal <= 40.0:
            raise ValueError("v_goal outside [0, 40]: %r" % self.v_goal)

    @property
    def length(self):
        return self.dims[0]

    @property
    def width(self):
        return self.dims[1]

    @property
    def trailer_length(self):
        return self.dims[2]

    @property
    def trailer_width(self):
        return self.dims[3]


@dataclass
class AgentState:
    """Kinematic state of one agent; `spec` carries its conditioning context."""

    x: float
    y: float
    heading: float
    v: float
    a: float = 0.0
    delta: float = 0.0
    phi: float = 0.0
    spec: AgentSpec = None

    @property
    def position(self):
        return np.array([self.x, self.y])

    def forward(self):
        return np.array([math.cos(self.heading), math.sin(self.heading)])


@dataclass(frozen=True)
class BoundsEntry:
    a_min: float
    a_max: float
    delta_max: float
    v_cap: float
    wheelbase_fraction: float = 0.6


@dataclass(frozen=True)
class DynamicsBounds:
    """Per-type control envelopes; trucks are slower and less agile than cars."""

    car: BoundsEntry = field(default_factory=lambda: BoundsEntry(-8.0, 4.0, 0.55, 45.0))
    truck: BoundsEntry = field(default_factory=lambda: BoundsEntry(-5.0, 2.5, 0.45, 40.0))

    def for_type(self, vtype: str) -> BoundsEntry:
        return self.car if vtype == CAR else self.truck


DEFAULT_JERK_VALUES = (-10.0, -5.0, -2.0, 0.0, 2.0, 5.0, 10.0)
DEFAULT_STEER_RATE_VALUES = (-0.3, -0.1, -0.03, 0.0, 0.03, 0.1, 0.3)


class ActionLattice:
    """Discrete Cartesian product of jerk and steering-rate commands.

    Token k maps to (jerk_values[k // n_steer], steer_rate_values[k % n_steer]).
    Both value lists must be symmetric about zero and include zero.
    """

    def __init__(self, jerk_values=DEFAULT_JERK_VALUES, steer_rate_values=DEFAULT_STEER_RATE_VALUES):
        self.jerk_values = np.asarray(jerk_values, dtype=float)
        self.steer_rate_values = np.asarray(steer_rate_values, dtype=float)
        for values, name in ((self.jerk_values, "jerk"), (self.steer_rate_values, "steer rate")):
            if 0.0 not in values:
                raise ValueError("%s values must include 0" % name)
            if not np.allclose(np.sort(values), -np.sort(values)[::-1]):
                raise ValueError("%s values must be symmetric about 0" % name)
        self.n_tokens = len(self.jerk_values) * len(self.steer_rate_values)
        # per-token command table, used for batched decoding and the action prior
        self.token_jerk = np.repeat(self.jerk_values, len(self.steer_rate_values))
        self.token_steer = np.tile(self.steer_rate_values, len(self.jerk_values))

    def token_of(self, jerk_index: int, steer_index: int) -> int:
        return jerk_index * len(self.steer_rate_values) + steer_index

    @property
    def zero_token(self) -> int:
        j = int(np.flatnonzero(self.jerk_values == 0.0)[0])
        s = int(np.flatnonzero(self.steer_rate_values == 0.0)[0])
        return self.token_of(j, s)


def decode_action(token: int, alpha: float, lattice: ActionLattice):
    """Map an action token to (jerk, steer_rate); jerk scales with alpha."""
    if not 0 <= token < lattice.n_tokens:
        raise ValueError("invalid action token %r" % token)
    return alpha * lattice.token_jerk[token], lattice.token_steer[token]


def step_bicycle(state: AgentState, jerk: float, steer_rate: float, dt: float,
                 bounds: DynamicsBounds) -> AgentState:
    """Advance one agent by dt with the kinematic bicycle model.

    Controls integrate first (clamped to the type envelope), then speed, then
    pose along the updated heading.  Never produces reverse motion.
    """
    b = bounds.for_type(state.spec.vtype)
    a = min(max(state.a + jerk * dt, b.a_min), b.a_max)
    delta = min(max(state.delta + steer_rate * dt, -b.delta_max), b.delta_max)
    v = min(max(state.v + a * dt, 0.0), b.v_cap)
    wheelbase = b.wheelbase_fraction * state.spec.length
    theta_dot = v * math.tan(delta) / wheelbase
    heading = state.heading + theta_dot * dt
    new = replace(
        state,
        x=state.x + v * dt * math.cos(heading),
        y=state.y + v * dt * math.sin(heading),
        heading=heading,
        v=v,
        a=a,
        delta=delta,
    )
    if state.spec.vtype == TRUCK:
        new.phi = step_hitch(new, theta_dot, dt)
    return new


def step_hitch(state: AgentState, theta_dot: float, dt: float) -> float:
    """Hitch-angle update for articulated trucks, clipped to [-pi/2, pi/2]."""
    if state.spec.vtype != TRUCK or state.spec.trailer_length <= 0:
        raise ValueError("hitch update requires a truck with positive trailer length")
    phi = state.phi + (theta_dot - state.v / state.spec.trailer_length * math.sin(state.phi)) * dt
    return min(max(phi, -HITCH_LIMIT), HITCH_LIMIT)


def hitch_point(state: AgentState, bounds: DynamicsBounds):
    """Trailer pivot: the tractor rear-axle point."""
    b = bounds.for_type(state.spec.vtype)
    back = 0.5 * b.wheelbase_fraction * state.spec.length
    return (
        state.x - back * math.cos(state.heading),
        state.y - back * math.sin(state.heading),
    )


def footprint(state: AgentState, bounds: DynamicsBounds = DynamicsBounds()):
    """Oriented boxes covering the agent: one for cars, tractor + trailer for trucks.

    The trailer box points along heading - phi and hangs backward from the
    hitch at the tractor rear axle.
    """
    boxes = [box_corners(state.x, state.y, state.heading, state.spec.length, state.spec.width)]
    if state.spec.vtype == TRUCK:
        hx, hy = hitch_point(state, bounds)
        trailer_heading = state.heading - state.phi
        cx = hx - 0.5 * state.spec.trailer_length * math.cos(trailer_heading)
        cy = hy - 0.5 * state.spec.trailer_length * math.sin(trailer_heading)
        boxes.append(
            box_corners(cx, cy, trailer_heading, state.spec.trailer_length, state.spec.trailer_width)
        )
    return boxes
