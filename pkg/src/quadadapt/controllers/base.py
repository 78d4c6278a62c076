"""High-level PID, the PD low-level law and the cascade that ties them together."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..rotation import quat_to_rot, rotate_t, wrap_angle, yaw_of
from ..vehicle import GRAVITY, VehicleParams

RATE_GAIN = np.array([20.0, 20.0, 4.0])
E3 = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class HighLevelCommand:
    c_sigma_des: np.ndarray
    omega_des: np.ndarray

    @classmethod
    def hover(cls, shape=(), gravity=GRAVITY):
        return cls(np.full(shape, gravity), np.zeros(tuple(shape) + (3,)))


@dataclass(frozen=True)
class PidGains:
    natural_frequency: float = 2.0
    damping_ratio: float = 0.7
    attitude_time_constant: float = 0.2
    yaw_time_constant: float = 0.2


def tilt_rates(q, thrust_dir, yaw_ref, gains: PidGains):
    """Body rates that rotate the body z-axis onto ``thrust_dir``.

    The reduced-attitude (tilt) error is handled first; yaw gets an
    independent proportional term.
    """
    R = quat_to_rot(q)
    b3 = R[..., :, 2]
    axis = np.cross(b3, thrust_dir)
    sin_a = np.linalg.norm(axis, axis=-1, keepdims=True)
    cos_a = np.sum(b3 * thrust_dir, axis=-1, keepdims=True)
    angle = np.arctan2(sin_a, cos_a)
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(sin_a > 1e-12, axis / np.where(sin_a > 1e-12, sin_a, 1.0), 0.0)
    err_body = rotate_t(R, unit * angle)
    rates = err_body / gains.attitude_time_constant
    yaw_err = wrap_angle(yaw_ref - yaw_of(q))
    rates[..., 2] += yaw_err / gains.yaw_time_constant
    return rates


def highlevel_pid(state, p_ref, v_ref, a_ref, gains: PidGains = PidGains(), gravity: float = GRAVITY, yaw_ref=0.0, eps: float = 1e-6):
    """Spring-mass-damper acceleration law mapped to thrust and body rates.

    Returns the command and a boolean mask of samples where the thrust
    vector was too small to define a direction.
    """
    wn, zeta = gains.natural_frequency, gains.damping_ratio
    a_des = a_ref + 2 * zeta * wn * (v_ref - state.v) + wn**2 * (p_ref - state.p)
    t_des = a_des + gravity * E3
    norm = np.linalg.norm(t_des, axis=-1)
    singular = norm < eps
    direction = t_des / np.where(singular, 1.0, norm)[..., None]
    omega_des = tilt_rates(state.q, direction, yaw_ref, gains)
    return HighLevelCommand(norm, omega_des), singular


class PidHighLevel:
    """Stateful wrapper that holds the last command through thrust singularities."""

    def __init__(self, gains: PidGains = PidGains(), gravity: float = GRAVITY):
        self.gains = gains
        self.gravity = gravity
        self.last = None

    def reset(self, batch_shape=()):
        self.last = HighLevelCommand.hover(batch_shape, self.gravity)

    def __call__(self, state, p_ref, v_ref, a_ref) -> HighLevelCommand:
        cmd, singular = highlevel_pid(state, p_ref, v_ref, a_ref, self.gains, self.gravity)
        if np.any(singular):
            cmd = HighLevelCommand(
                np.where(singular, self.last.c_sigma_des, cmd.c_sigma_des),
                np.where(singular[..., None], self.last.omega_des, cmd.omega_des),
            )
        self.last = cmd
        return cmd


def desired_torque(omega_des, omega, inertia, gain=RATE_GAIN):
    """Rate control: ``J K (omega_des - omega) + omega x J omega``."""
    omega_dot_des = gain * (omega_des - omega)
    return inertia * omega_dot_des + np.cross(omega, inertia * omega)


def force_to_speed(forces, c_f, max_speed, effectiveness=1.0):
    """Per-rotor speed command for a force demand; the single saturation point.

    Negative demands clamp to zero.
    """
    speed = np.sqrt(np.maximum(forces, 0.0) / c_f[..., None]) / effectiveness
    return np.minimum(speed, max_speed[..., None])


def mix(params: VehicleParams, thrust, torque):
    wrench = np.concatenate([thrust[..., None], torque], axis=-1)
    return np.einsum("...ij,...j->...i", params.mixer, wrench)


def lowlevel_pd(cmd: HighLevelCommand, omega, params: VehicleParams, gain=RATE_GAIN):
    """PD rate controller and mixer using the parameters in ``params``.

    With the true vehicle this is the expert; known external torque is
    cancelled and motor effectiveness is inverted. With the nominal vehicle
    both corrections vanish.
    """
    tau = desired_torque(cmd.omega_des, omega, params.inertia, gain) - params.external_torque
    forces = mix(params, params.mass * cmd.c_sigma_des, tau)
    return force_to_speed(forces, params.c_f, params.max_motor_speed, params.motor_effectiveness)


class LowLevel:
    """Interface for 500 Hz controllers."""

    def reset(self, batch_shape=()):
        pass

    def __call__(self, cmd: HighLevelCommand, obs, true_params: VehicleParams):
        raise NotImplementedError


class ExpertPD(LowLevel):
    """PD law with privileged access to the current true vehicle."""

    def __init__(self, gain=RATE_GAIN):
        self.gain = np.asarray(gain, dtype=float)

    def __call__(self, cmd, obs, true_params):
        return lowlevel_pd(cmd, obs.omega, true_params, self.gain)


class NominalPD(LowLevel):
    def __init__(self, nominal: VehicleParams, gain=RATE_GAIN):
        self.nominal = nominal
        self.gain = np.asarray(gain, dtype=float)

    def __call__(self, cmd, obs, true_params):
        return lowlevel_pd(cmd, obs.omega, self.nominal, self.gain)


class Cascade:
    """High-level PID at a reduced rate feeding a 500 Hz low-level law.

    ``high_every`` is the number of low-level ticks per high-level update.
    """

    name = "cascade"

    def __init__(self, low: LowLevel, high: PidHighLevel | None = None, high_every: int = 10):
        self.low = low
        self.high = high or PidHighLevel()
        self.high_every = high_every
        self.cmd = None
        self.tick = 0

    def reset(self, batch_shape=()):
        self.high.reset(batch_shape)
        self.low.reset(batch_shape)
        self.cmd = HighLevelCommand.hover(batch_shape, self.high.gravity)
        self.tick = 0

    def high_level(self, obs, ref):
        if self.tick % self.high_every == 0:
            self.cmd = self.high(obs.state, *ref)
        return self.cmd

    def __call__(self, obs, ref, true_params):
        cmd = self.high_level(obs, ref)
        out = self.low(cmd, obs, true_params)
        self.tick += 1
        return out
