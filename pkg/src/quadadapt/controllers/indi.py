"""Incremental nonlinear dynamic inversion with online effectiveness adaptation.

The control law works on increments of squared rotor speed::

    a2_des = a2 + G1 (c_des - c) + G2 (wdot_des - wdot)

with ``wdot_des = K (omega_des - omega)``. ``G = [G1 G2]`` (4x4) starts
at the nominal inverse model ``C_F^-1 M diag(m, J)``. With that G and
exact measurements the law collapses algebraically onto the PD law.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.signal import butter

from ..vehicle import GRAVITY, VehicleParams
from .base import RATE_GAIN, HighLevelCommand, LowLevel


def nominal_effectiveness(params: VehicleParams):
    """``C_F^-1 M diag(m, Jx, Jy, Jz)``: maps [c; wdot] to squared speeds."""
    scale = np.concatenate([params.mass[..., None], params.inertia], axis=-1)
    return params.mixer * scale[..., None, :] / params.c_f[..., None, None]


def indi_increment(c_des, omega_dot_des, a_sq, c, omega_dot, G):
    """Desired squared speeds from the increment equation (unclamped)."""
    dy = np.concatenate([(c_des - c)[..., None], omega_dot_des - omega_dot], axis=-1)
    return a_sq + np.einsum("...ij,...j->...i", G, dy)


def speeds_from_squares(a_sq_des, max_speed):
    """Clamp negative demands to zero, take the root and saturate."""
    return np.minimum(np.sqrt(np.maximum(a_sq_des, 0.0)), max_speed[..., None])


class Butterworth2:
    """Second-order low-pass filter (direct form II transposed), batched."""

    def __init__(self, cutoff: float, dt: float):
        nyquist = 0.5 / dt
        wn = cutoff / (2 * np.pi) / nyquist
        self.b, self.a = butter(2, wn)

    def reset(self, x0):
        x0 = np.asarray(x0, dtype=float)
        # steady-state initial condition for a constant input x0
        b, a = self.b, self.a
        self.s1 = x0 * (1.0 - b[0])
        self.s2 = x0 * (b[2] - a[2])

    def __call__(self, x):
        b, a = self.b, self.a
        y = b[0] * x + self.s1
        self.s1 = b[1] * x - a[1] * y + self.s2
        self.s2 = b[2] * x - a[2] * y
        return y


@dataclass(frozen=True)
class IndiConfig:
    mu: float = 1e-4
    filter_cutoff: float = 50.0
    eps: float = 1e-6


class IndiAdaptive(LowLevel):
    """Low-level INDI with filtered angular acceleration and NLMS adaptation of G.

    Squared motor speeds come from the nominal first-order motor model run on
    the issued commands, delayed to line up with the measurements.
    """

    def __init__(self, nominal: VehicleParams, config: IndiConfig = IndiConfig(), dt: float = 0.002, delay: int = 3, gain=RATE_GAIN):
        self.nominal = nominal
        self.config = config
        self.dt = dt
        self.delay = delay
        self.gain = np.asarray(gain, dtype=float)
        self.G0 = nominal_effectiveness(nominal)
        # per-channel regressor scale (hover thrust, unit rate error response)
        self.y_scale = np.concatenate([[GRAVITY], self.gain])
        self.decay = float(np.exp(-dt / nominal.motor_time_constant))
        self.saturations = 0

    def reset(self, batch_shape=()):
        shape = tuple(batch_shape)
        self.G = np.broadcast_to(self.G0, shape + (4, 4)).copy()
        hover = np.broadcast_to(self.nominal.hover_speed()[..., None], shape + (4,)).copy()
        self.model_speed = hover
        # the measurement at tick k reflects motor speeds after the command
        # of tick k - delay - 1
        self.pending = deque([hover**2] * (self.delay + 1))
        self.filt_a = Butterworth2(self.config.filter_cutoff, self.dt)
        self.filt_c = Butterworth2(self.config.filter_cutoff, self.dt)
        self.filt_w = Butterworth2(self.config.filter_cutoff, self.dt)
        self.prev_omega = None
        self.prev = None
        self.saturations = 0

    def _measure(self, obs):
        omega = obs.omega
        if self.prev_omega is None:
            self.prev_omega = omega.copy()
            c0 = np.broadcast_to(np.asarray(obs.c_sigma, float), omega.shape[:-1])
            self.filt_c.reset(c0)
            self.filt_w.reset(np.zeros_like(omega))
            self.filt_a.reset(self.pending[0])
        wdot = (omega - self.prev_omega) / self.dt
        self.prev_omega = omega.copy()
        a_sq = self.pending.popleft()
        return self.filt_c(np.asarray(obs.c_sigma, float)), self.filt_w(wdot), self.filt_a(a_sq)

    def _adapt(self, c_f, wdot_f, a_f):
        y = np.concatenate([c_f[..., None], wdot_f], axis=-1)
        if self.prev is not None and self.config.mu > 0:
            dy = (y - self.prev[0]) / self.y_scale
            da = a_f - self.prev[1]
            Gs = self.G * self.y_scale[..., None, :]
            err = np.einsum("...ij,...j->...i", Gs, dy) - da
            norm = self.config.eps + np.sum(dy * dy, axis=-1)
            Gs = Gs - self.config.mu * err[..., :, None] * dy[..., None, :] / norm[..., None, None]
            self.G = Gs / self.y_scale[..., None, :]
        self.prev = (y, a_f)

    def __call__(self, cmd: HighLevelCommand, obs, true_params):
        c_f, wdot_f, a_f = self._measure(obs)
        self._adapt(c_f, wdot_f, a_f)
        wdot_des = self.gain * (cmd.omega_des - obs.omega)
        a_sq_des = indi_increment(cmd.c_sigma_des, wdot_des, a_f, c_f, wdot_f, self.G)
        self.saturations += int(np.sum(a_sq_des < 0))
        speed = speeds_from_squares(a_sq_des, self.nominal.max_motor_speed)
        wmax = self.nominal.max_motor_speed[..., None]
        cmd_speed = np.clip(speed, 0.0, wmax)
        self.model_speed = cmd_speed + (self.model_speed - cmd_speed) * self.decay
        self.pending.append(self.model_speed**2)
        return speed
