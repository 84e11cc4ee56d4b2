"""Discrete-time guidance kinematics, closed-loop maps and the delta-FC bounds."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import AircraftState, GeometryError, MonoImage, zeta_to_state
from .network import evaluate


@dataclass(frozen=True)
class DynamicsParams:
    """Ground speed Vg (m/s), sample time tau (s).

    ``heading`` multiplies the position update.  With +1 the offsets grow
    along the trajectory exactly as the kinematic equations are written; -1
    makes z and y shrink, i.e. the aircraft closes in on the runway
    threshold and a positive pitch is a descent, which is what the landing
    scenarios use.
    """
    Vg: float = 25.0
    tau: float = 0.1
    heading: int = 1

    def __post_init__(self):
        if not (self.Vg > 0 and self.tau >= 0):
            raise ValueError("Vg must be positive and tau non-negative")
        if self.heading not in (1, -1):
            raise ValueError("heading must be +1 or -1")


def step_array(states, u, params):
    """Vectorised step for (n, 4) states and (n,) pitch rates."""
    s = np.atleast_2d(np.asarray(states, dtype=np.float64))
    u = np.broadcast_to(np.asarray(u, dtype=np.float64), (len(s),))
    theta, x, y, z = s.T
    d = params.heading * params.Vg * params.tau
    return np.column_stack([theta + u * params.tau, x, y + d * np.sin(theta),
                            z + d * np.cos(theta)])


def step(state, u, params):
    return AircraftState.from_array(step_array(state.as_array(), u, params)[0])


@dataclass(frozen=True)
class DeltaFcBounds:
    """Trajectory-divergence bounds from the Lyapunov function ||xi - xi'||^2.

    beta(r, tau) = sqrt(8) ||r||_2 e^tau takes the per-dimension deviation
    vector of a cell (its radius vector), so it vanishes at zero deviation.
    gamma(mu, tau) = sqrt(Vg (e^{2 tau} - 1)) mu.
    """
    Vg: float = 25.0

    def beta(self, radius, tau):
        r = np.asarray(radius, dtype=np.float64)
        if np.any(r < 0) or tau < 0:
            raise ValueError("beta needs non-negative arguments")
        return math.sqrt(8.0) * float(np.linalg.norm(r)) * math.exp(tau)

    def gamma(self, mu, tau):
        if mu < 0 or tau < 0:
            raise ValueError("gamma needs non-negative arguments")
        return math.sqrt(self.Vg * (math.exp(2.0 * tau) - 1.0)) * mu


def beta(radius, tau):
    return DeltaFcBounds().beta(radius, tau)


def gamma(mu, tau, Vg=25.0):
    return DeltaFcBounds(Vg).gamma(mu, tau)


def control_of(nn_aug, zeta_full):
    """Pitch rate from the augmented network: first output component."""
    return evaluate(nn_aug, zeta_full)[..., 0]


def closed_loop_successor_zeta(zeta_full, nn_aug, geometry, params):
    """g(zeta) = h(f(h^-1(zeta), NN_aug(zeta))).

    ``zeta_full`` is the network input (line blocks in ``geometry.lines``
    order, line L first); the state is recovered from the line-L block.
    """
    z = np.asarray(zeta_full, dtype=np.float64)
    state = zeta_to_state(z[:5], geometry.runway, geometry.camera, "L")
    u = float(control_of(nn_aug, z))
    return geometry.full_zeta(step(state, u, params))


def working_successor(states, u, geometry, params):
    """Working coordinates (z1, z2, z3) after one step from (n, 4) states."""
    return geometry.working(step_array(states, u, params))


@dataclass
class TraceRecord:
    step: int
    state: AircraftState
    u: float | None
    image: MonoImage | None


@dataclass
class Trace:
    records: list = field(default_factory=list)
    reason: str = "completed"


def simulate_trajectory(state0, nn_aug, steps, geometry, params):
    """Closed loop state -> zeta -> NN_aug -> u -> step, ``steps`` times.

    Each record holds the state, the control applied from it (None on the
    last record) and the oracle image at that state.  A geometry error ends
    the trace early and sets ``reason``.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    trace = Trace()
    state = state0
    for k in range(steps + 1):
        try:
            zeta = geometry.full_zeta(state)
            image = geometry.render(state)
        except GeometryError as exc:
            trace.reason = f"{type(exc).__name__}: {exc}"
            break
        if k == steps:
            trace.records.append(TraceRecord(k, state, None, image))
            break
        u = float(control_of(nn_aug, zeta))
        trace.records.append(TraceRecord(k, state, u, image))
        state = step(state, u, params)
    return trace
