"""Decentralized intersection management on a Manhattan grid.

Vehicles agree on crossing priorities through a consensus-based auction
and avoid collisions with an on-board convex MPC; the simulator is
discrete-time, deterministic, and seedable.
"""

__version__ = "0.1.0"
