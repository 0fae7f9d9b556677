"""Lane-change prediction toolkit.

Learns per-driver cost functions from demonstrations, classifies maneuver
intent with a recurrent sequence model, scores candidate polynomial
trajectories probabilistically, and serves online predictions through a
simulated vehicle/edge/cloud stack with HMM map matching.
"""

__version__ = "0.1.0"
