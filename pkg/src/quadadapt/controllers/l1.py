"""L1 adaptive augmentation of the nominal cascade, at the low or the high level.

Both variants share the same machinery: a state predictor driven by the
nominal model plus a lumped disturbance estimate, a piecewise-constant
adaptation law that zeroes the one-step prediction error, and a first-order
low-pass filter that limits the bandwidth of the compensation.

Measurements arrive ``delay`` steps late, so the predictors run on the
measurement time line and are driven by the commands issued back then.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from ..rotation import quat_to_rot, rotate, rotate_t
from ..vehicle import GRAVITY, VehicleParams
from .base import (
    RATE_GAIN,
    Cascade,
    HighLevelCommand,
    LowLevel,
    PidHighLevel,
    desired_torque,
    force_to_speed,
    lowlevel_pd,
    mix,
)


@dataclass(frozen=True)
class L1Config:
    cutoff: float = 40.0
    a_s: float = -10.0
    level: str = "low"

    def __post_init__(self):
        if not self.cutoff >= 0:
            raise ValueError("cutoff must be non-negative")
        if not self.a_s < 0:
            raise ValueError("a_s must be negative (Hurwitz)")
        if self.level not in ("low", "high"):
            raise ValueError(f"unknown L1 level {self.level!r}")

    def adaptation_gain(self, dt: float) -> float:
        """Scalar piecewise-constant law: ``sigma = gain * prediction_error``."""
        e = np.exp(self.a_s * dt)
        return -self.a_s * e / (e - 1.0)

    def filter_coeff(self, dt: float) -> float:
        return 1.0 - np.exp(-self.cutoff * dt)


class _MotorModel:
    """Nominal first-order motor response driven by the issued speed commands."""

    def __init__(self, nominal: VehicleParams, dt: float):
        self.nominal = nominal
        self.decay = float(np.exp(-dt / nominal.motor_time_constant))

    def reset(self, batch_shape):
        self.speed = np.broadcast_to(self.nominal.hover_speed()[..., None], tuple(batch_shape) + (4,)).copy()

    def step(self, cmd_speed):
        cmd = np.clip(cmd_speed, 0.0, self.nominal.max_motor_speed[..., None])
        self.speed = cmd + (self.speed - cmd) * self.decay
        return self.speed


class L1LowLevel(LowLevel):
    """PD on the nominal vehicle plus L1 compensation of thrust and torque.

    The predictor tracks ``z = [c_sigma; omega]``:

    * ``c' = (1^T F_hat / m - c) / dt + sigma_c + a_s (c_hat - c)``
    * ``w' = J^-1 (A_tau F_hat - w x J w) + sigma_w + a_s (w_hat - w)``

    where ``F_hat`` is the rotor force of the nominal motor model one step
    after the command, so the thrust channel is exact for a matching plant. The filtered estimate is mapped back to rotor
    forces through the nominal mixer.
    """

    def __init__(self, nominal: VehicleParams, config: L1Config = L1Config(), dt: float = 0.002, delay: int = 3, gain=RATE_GAIN):
        self.nominal = nominal
        self.config = config
        self.dt = dt
        self.delay = delay
        self.gain = np.asarray(gain, dtype=float)
        self.motor = _MotorModel(nominal, dt)
        self.k_adapt = config.adaptation_gain(dt)
        self.k_filter = config.filter_coeff(dt)

    def reset(self, batch_shape=()):
        shape = tuple(batch_shape)
        self.motor.reset(shape)
        self.z_hat = None
        self.sigma_hat = np.zeros(shape + (4,))
        self.sigma_bar = np.zeros(shape + (4,))
        hover = self.motor.speed.copy()
        self.pending = deque([hover] * self.delay)
        self.pending_speed = deque([hover] * self.delay)

    def _measured(self, obs):
        return np.concatenate([np.asarray(obs.c_sigma)[..., None], obs.omega], axis=-1)

    def _propagate(self, z_meas, cmd_speed, model_speed):
        n = self.nominal
        dt = self.dt
        f_hat = n.c_f[..., None] * model_speed**2
        z_err = self.z_hat - z_meas
        c, w = z_meas[..., 0], z_meas[..., 1:]
        # one-step thrust change of the discrete nominal motor model
        c_dot = (f_hat.sum(-1) / n.mass - c) / dt
        tau = np.einsum("...ij,...j->...i", n.allocation[..., 1:, :], f_hat)
        w_dot = (tau - np.cross(w, n.inertia * w)) / n.inertia
        f = np.concatenate([c_dot[..., None], w_dot], axis=-1)
        self.z_hat = self.z_hat + dt * (f + self.sigma_hat + self.config.a_s * z_err)

    def compensation(self):
        """Rotor forces that cancel the filtered disturbance estimate."""
        n = self.nominal
        dc = -self.dt * self.sigma_bar[..., 0]
        dtau = -n.inertia * self.sigma_bar[..., 1:]
        return mix(n, n.mass * dc, dtau)

    def __call__(self, cmd: HighLevelCommand, obs, true_params):
        n = self.nominal
        z_meas = self._measured(obs)
        if self.z_hat is None:
            self.z_hat = z_meas.copy()
        z_err = self.z_hat - z_meas
        self.sigma_hat = self.k_adapt * z_err
        self.sigma_bar = self.sigma_bar + self.k_filter * (self.sigma_hat - self.sigma_bar)

        tau = desired_torque(cmd.omega_des, obs.omega, n.inertia, self.gain)
        forces = mix(n, n.mass * cmd.c_sigma_des, tau) + self.compensation()
        speed = force_to_speed(forces, n.c_f, n.max_motor_speed)

        # the command issued `delay` ticks ago is what moved the plant from
        # the measured instant to the next one
        model_speed = self.motor.step(speed)
        self.pending.append(speed)
        self.pending_speed.append(model_speed)
        old_cmd = self.pending.popleft()
        old_model = self.pending_speed.popleft()
        self._propagate(z_meas, old_cmd, old_model)
        return speed


class L1HighLevel:
    """PID high level whose commands are augmented by an L1 estimate.

    The predictor tracks ``z = [v; omega]`` with nominal thrust, drag and
    torque. The velocity disturbance is cancelled along the body thrust
    axis (collective thrust) and the rate disturbance through the rate
    command of the nominal PD low level.
    """

    def __init__(self, nominal: VehicleParams, config: L1Config = L1Config(level="high"), dt: float = 0.002, delay: int = 3, gain=RATE_GAIN, pid: PidHighLevel | None = None, gravity: float = GRAVITY):
        self.nominal = nominal
        self.config = config
        self.dt = dt
        self.delay = delay
        self.gain = np.asarray(gain, dtype=float)
        self.pid = pid or PidHighLevel(gravity=gravity)
        self.gravity = gravity
        self.motor = _MotorModel(nominal, dt)
        self.k_adapt = config.adaptation_gain(dt)
        self.k_filter = config.filter_coeff(dt)

    def reset(self, batch_shape=()):
        shape = tuple(batch_shape)
        self.pid.reset(shape)
        self.motor.reset(shape)
        self.z_hat = None
        self.sigma_hat = np.zeros(shape + (6,))
        self.sigma_bar = np.zeros(shape + (6,))
        self.pending_speed = deque([self.motor.speed.copy()] * self.delay)

    def update(self, state):
        """Adapt on the delayed state; returns the filtered estimate."""
        z_meas = np.concatenate([state.v, state.omega], axis=-1)
        if self.z_hat is None:
            self.z_hat = z_meas.copy()
        self.sigma_hat = self.k_adapt * (self.z_hat - z_meas)
        self.sigma_bar = self.sigma_bar + self.k_filter * (self.sigma_hat - self.sigma_bar)
        return self.sigma_bar

    def propagate(self, state, cmd_speed):
        """Advance the predictor with the speed command just issued."""
        n = self.nominal
        model_speed = self.motor.step(cmd_speed)
        self.pending_speed.append(model_speed)
        speed = self.pending_speed.popleft()
        z_meas = np.concatenate([state.v, state.omega], axis=-1)
        z_err = self.z_hat - z_meas
        forces = n.c_f[..., None] * speed**2
        wrench = np.einsum("...ij,...j->...i", n.allocation, forces)
        R = quat_to_rot(state.q)
        thrust_body = np.zeros(np.shape(state.v))
        thrust_body[..., 2] = wrench[..., 0]
        drag_body = -n.drag * rotate_t(R, state.v)
        v_dot = rotate(R, thrust_body + drag_body) / n.mass[..., None]
        v_dot[..., 2] -= self.gravity
        w = state.omega
        w_dot = (wrench[..., 1:] - np.cross(w, n.inertia * w)) / n.inertia
        f = np.concatenate([v_dot, w_dot], axis=-1)
        self.z_hat = self.z_hat + self.dt * (f + self.sigma_hat + self.config.a_s * z_err)

    def augment(self, base: HighLevelCommand, state) -> HighLevelCommand:
        R = quat_to_rot(state.q)
        b3 = R[..., :, 2]
        dc = -np.sum(b3 * self.sigma_bar[..., :3], axis=-1)
        dw = -self.sigma_bar[..., 3:] / self.gain
        return HighLevelCommand(np.maximum(base.c_sigma_des + dc, 0.0), base.omega_des + dw)


class L1HighCascade(Cascade):
    """PID + L1 (high level) feeding the nominal PD low level."""

    def __init__(self, nominal: VehicleParams, config: L1Config = L1Config(level="high"), dt: float = 0.002, delay: int = 3, high_every: int = 10, gain=RATE_GAIN):
        self.l1 = L1HighLevel(nominal, config, dt, delay, gain)
        self.nominal = nominal
        self.gain = np.asarray(gain, dtype=float)
        super().__init__(low=None, high=self.l1.pid, high_every=high_every)

    def reset(self, batch_shape=()):
        self.l1.reset(batch_shape)
        self.base = HighLevelCommand.hover(batch_shape, self.high.gravity)
        self.cmd = self.base
        self.tick = 0

    def __call__(self, obs, ref, true_params):
        state = obs.state
        if self.tick % self.high_every == 0:
            self.base = self.high(state, *ref)
        self.l1.update(state)
        self.cmd = self.l1.augment(self.base, state)
        speed = lowlevel_pd(self.cmd, obs.omega, self.nominal, self.gain)
        self.l1.propagate(state, speed)
        self.tick += 1
        return speed
