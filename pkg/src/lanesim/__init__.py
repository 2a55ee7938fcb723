"""lanesim: self-play highway traffic simulation and training.

Library layout:

- maps / synthetic: road geometry, the 1 m lane graph, and geometric queries
- scenario: offline start-goal pools and online world sampling
- dynamics: bicycle + trailer kinematics and the discrete action lattice
- world: joint stepping, collisions, fault attribution, termination
- observation: ego-centric feature vectors
- rewards: per-step reward assembly and curricula
- autodiff / policy: the numerical core and the attention policy/value net
- training: self-play rollout collection and policy optimization
- metrics: task metrics, evaluation, and trajectory export
- cli: the `lanesim` command-line interface
"""

__version__ = "0.1.0"
