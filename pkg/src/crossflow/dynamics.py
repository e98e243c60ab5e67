"""Point-mass discrete-time longitudinal vehicle model.

State is (p, v): arc-length position along the vehicle's own path and
speed. The update is the exact double-integrator Euler form

    p(k+1) = p(k) + T_s * v(k)
    v(k+1) = v(k) + T_s * u(k)

with position integrating the pre-update speed. Saturation is the
controller's job; the simulator asserts v >= 0 on accepted states.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class VehicleState:
    p: float  # m along own path
    v: float  # m/s


@dataclass(frozen=True)
class VehicleParams:
    v_r: float    # desired cruising speed, m/s
    a_min: float  # m/s^2, < 0
    a_max: float  # m/s^2, > 0
    path_id: int = 0

    def __post_init__(self) -> None:
        if not (self.a_min < 0.0 < self.a_max):
            raise ValueError(f"need a_min < 0 < a_max, got [{self.a_min}, {self.a_max}]")


def step(state: VehicleState, u: float, t_s: float) -> VehicleState:
    """Advance one tick under acceleration u."""
    if t_s <= 0.0:
        raise ValueError(f"sampling time must be positive, got {t_s}")
    return VehicleState(p=state.p + t_s * state.v, v=state.v + t_s * u)
