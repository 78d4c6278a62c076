"""Fixed-step rigid-body quadrotor plant with motor lag and measurement latency.

The world frame is z-up. All state arrays may carry a leading batch axis;
one :class:`Simulator` then advances many independent episodes in lockstep.
"""
from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass

import numpy as np

from .rotation import quat_exp, quat_mul, quat_normalize, quat_to_rot, rotate, rotate_t
from .vehicle import GRAVITY, VehicleParams


class SimulationDiverged(RuntimeError):
    pass


class Status(enum.IntEnum):
    RUNNING = 0
    SUCCESS_END = 1
    CRASHED = 2


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.002
    latency: float = 0.005
    episode_max: float = 5.0
    height_loss_limit: float = 10.0
    body_rate_limit: float = 10.0
    gravity: float = GRAVITY
    disturbance_time: float | None = None
    drag_model: str = "linear"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.latency < 0:
            raise ValueError("latency must be non-negative")
        if not (self.episode_max > 0 and self.height_loss_limit > 0 and self.body_rate_limit > 0):
            raise ValueError("limits must be positive")
        if self.drag_model not in ("linear", "quadratic"):
            raise ValueError(f"unknown drag model {self.drag_model!r}")

    @property
    def delay_steps(self) -> int:
        # 5 ms at 2 ms -> 3 steps; the epsilon keeps exact multiples exact
        return int(math.ceil(self.latency / self.dt - 1e-9))

    @property
    def max_steps(self) -> int:
        return int(round(self.episode_max / self.dt))


@dataclass(frozen=True)
class SimState:
    p: np.ndarray
    v: np.ndarray
    q: np.ndarray
    omega: np.ndarray
    motor_speed: np.ndarray
    t: np.ndarray

    @classmethod
    def hover(cls, params: VehicleParams, position=(0.0, 0.0, 0.0)) -> "SimState":
        """Level hover with motors at the speed that balances gravity."""
        batch = params.batch_shape
        speed = params.hover_speed()[..., None] * np.ones(batch + (4,))
        speed = np.minimum(speed, params.max_motor_speed[..., None])
        return cls(
            p=np.broadcast_to(np.asarray(position, dtype=float), batch + (3,)).copy(),
            v=np.zeros(batch + (3,)),
            q=np.broadcast_to(np.array([1.0, 0.0, 0.0, 0.0]), batch + (4,)).copy(),
            omega=np.zeros(batch + (3,)),
            motor_speed=speed,
            t=np.zeros(batch),
        )

    def replace(self, **kw) -> "SimState":
        return dataclasses.replace(self, **kw)

    def __getitem__(self, idx) -> "SimState":
        return SimState(**{f.name: getattr(self, f.name)[idx] for f in dataclasses.fields(self)})

    @staticmethod
    def where(mask, a: "SimState", b: "SimState") -> "SimState":
        out = {}
        for f in dataclasses.fields(SimState):
            x, y = getattr(a, f.name), getattr(b, f.name)
            m = mask.reshape(mask.shape + (1,) * (x.ndim - mask.ndim))
            out[f.name] = np.where(m, x, y)
        return SimState(**out)


@dataclass(frozen=True)
class Observation:
    """What the controllers see, ``delay_steps`` old."""

    c_sigma: np.ndarray
    omega: np.ndarray
    state: SimState


def motor_step(cmd_speed, motor_speed, params: VehicleParams, dt: float):
    """Exact first-order response toward the effectiveness-scaled command."""
    wmax = params.max_motor_speed[..., None]
    cmd = np.clip(cmd_speed, 0.0, wmax)
    target = np.minimum(params.motor_effectiveness * cmd, wmax)
    decay = np.exp(-dt / params.motor_time_constant)[..., None]
    return target + (motor_speed - target) * decay


def rotor_wrench(motor_speed, params: VehicleParams):
    """Total thrust (N) and net body torque (N m), including external torque."""
    forces = params.c_f[..., None] * motor_speed**2
    wrench = np.einsum("...ij,...j->...i", params.allocation, forces)
    return wrench[..., 0], wrench[..., 1:] + params.external_torque


def specific_thrust(motor_speed, params: VehicleParams):
    """Mass-normalized collective thrust c_sigma in m/s^2."""
    return params.c_f * np.sum(motor_speed**2, axis=-1) / params.mass


def dynamics_step(state: SimState, params: VehicleParams, config: SimConfig, strict: bool = False) -> SimState:
    """Advance rigid-body states one step with semi-implicit Euler.

    Rates are updated first and the attitude is propagated with the new rate
    through the quaternion exponential; velocity uses the current attitude and
    position the new velocity. Motor speeds are left untouched.
    """
    dt = config.dt
    thrust, torque = rotor_wrench(state.motor_speed, params)
    R = quat_to_rot(state.q)
    v_body = rotate_t(R, state.v)
    if config.drag_model == "linear":
        drag_body = -params.drag * v_body
    else:
        drag_body = -params.drag * v_body * np.abs(v_body)
    force_body = drag_body.copy()
    force_body[..., 2] += thrust
    acc = rotate(R, force_body) / params.mass[..., None]
    acc[..., 2] -= config.gravity

    J = params.inertia
    w = state.omega
    omega_dot = (torque - np.cross(w, J * w)) / J
    omega = w + dt * omega_dot
    q = quat_normalize(quat_mul(state.q, quat_exp(omega * dt)))
    v = state.v + dt * acc
    p = state.p + dt * v
    out = SimState(p=p, v=v, q=q, omega=omega, motor_speed=state.motor_speed, t=state.t + dt)
    if strict and not all(np.all(np.isfinite(x)) for x in (p, v, q, omega)):
        raise SimulationDiverged("non-finite plant state")
    return out


def check_termination(state: SimState, config: SimConfig, start_height):
    """Per-episode :class:`Status` codes (int array)."""
    finite = np.all(np.isfinite(state.p), -1) & np.all(np.isfinite(state.omega), -1) & np.all(np.isfinite(state.q), -1)
    with np.errstate(invalid="ignore"):
        height_loss = (start_height - state.p[..., 2]) > config.height_loss_limit
        rate = np.max(np.abs(state.omega), axis=-1) > config.body_rate_limit
    crashed = ~finite | height_loss | rate
    done = state.t >= config.episode_max - 1e-9
    return np.where(crashed, int(Status.CRASHED), np.where(done, int(Status.SUCCESS_END), int(Status.RUNNING)))


class HistoryBuffer:
    """Ring of past plant snapshots used to model measurement latency.

    Slots not yet written hold the initial snapshot.
    """

    def __init__(self, state: SimState, c_sigma, delay_steps: int):
        self.delay = delay_steps
        n = delay_steps + 1
        self._states = [state] * n
        self._c = [np.asarray(c_sigma)] * n
        self._head = 0

    def push(self, state: SimState, c_sigma):
        self._head = (self._head + 1) % (self.delay + 1)
        self._states[self._head] = state
        self._c[self._head] = np.asarray(c_sigma)

    def delayed(self):
        idx = (self._head - self.delay) % (self.delay + 1)
        return self._states[idx], self._c[idx]


def observe(buffer: HistoryBuffer, config: SimConfig, rng: np.random.Generator | None = None, noise_std: float = 0.0) -> Observation:
    """Snapshot from ``delay_steps`` ago, optionally with Gaussian c_sigma noise."""
    state, c_sigma = buffer.delayed()
    if noise_std > 0 and rng is not None:
        c_sigma = c_sigma + rng.normal(0.0, noise_std, size=np.shape(c_sigma))
    return Observation(c_sigma=c_sigma, omega=state.omega, state=state)


class Simulator:
    """Lockstep simulation of one or many episodes.

    ``disturbed`` (optional) is the parameter set swapped in, per episode,
    once ``t`` reaches ``disturbance_time`` (scalar or per-episode array).
    Episodes that have terminated are frozen.
    """

    def __init__(
        self,
        params: VehicleParams,
        config: SimConfig = SimConfig(),
        state: SimState | None = None,
        disturbed: VehicleParams | None = None,
        disturbance_time=None,
    ):
        self.config = config
        self.params = params
        self.state = state if state is not None else SimState.hover(params)
        self.disturbed = disturbed
        if disturbance_time is None:
            disturbance_time = config.disturbance_time
        batch = params.batch_shape
        self.disturbance_time = None if disturbance_time is None else np.broadcast_to(np.asarray(disturbance_time, float), batch)
        self._dist_applied = np.zeros(batch, dtype=bool)
        self.start_height = self.state.p[..., 2].copy()
        self.status = np.zeros(batch, dtype=int)
        self.steps = 0
        self.buffer = HistoryBuffer(self.state, specific_thrust(self.state.motor_speed, params), config.delay_steps)

    @property
    def active(self):
        return self.status == int(Status.RUNNING)

    def observe(self) -> Observation:
        return observe(self.buffer, self.config)

    def _maybe_disturb(self):
        if self.disturbed is None or self.disturbance_time is None:
            return
        due = (self.state.t >= self.disturbance_time - 1e-9) & ~self._dist_applied
        if np.any(due):
            self.params = VehicleParams.where(due, self.disturbed, self.params)
            self._dist_applied |= due

    def step(self, cmd_speed) -> SimState:
        self._maybe_disturb()
        active = self.active
        speed = motor_step(cmd_speed, self.state.motor_speed, self.params, self.config.dt)
        with np.errstate(all="ignore"):
            new = dynamics_step(self.state.replace(motor_speed=speed), self.params, self.config)
        if np.all(active):
            self.state = new
        else:
            self.state = SimState.where(active, new, self.state)
        status = check_termination(self.state, self.config, self.start_height)
        self.status = np.where(active, status, self.status)
        self.steps += 1
        with np.errstate(all="ignore"):
            self.buffer.push(self.state, specific_thrust(self.state.motor_speed, self.params))
        return self.state
