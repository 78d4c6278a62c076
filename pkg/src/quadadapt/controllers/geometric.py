"""Adaptive cascade with integral-type force and moment estimates.

The position loop is the spring-mass-damper law plus an adaptive force
estimate; the attitude loop is the same tilt-prioritized reduced-attitude
rate law used elsewhere, and the rate loop is PD on the nominal inertia
plus an adaptive moment estimate. Both estimates are clipped to a box
(projection onto a bounded set).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..vehicle import GRAVITY, VehicleParams
from .base import E3, RATE_GAIN, HighLevelCommand, PidGains, desired_torque, force_to_speed, mix, tilt_rates


@dataclass(frozen=True)
class GeoGains:
    gamma_f: float = 2.0
    gamma_m: float = 2.0
    c1: float = 2.0
    force_bound: float = 2.0
    moment_bound: float = 2.0


class GeoAdaptive:
    """Full-cascade controller; ``gamma_f = gamma_m = 0`` gives the non-adaptive law."""

    name = "geo_a"

    def __init__(self, nominal: VehicleParams, gains: GeoGains = GeoGains(), pid: PidGains = PidGains(), rate_gain=RATE_GAIN, dt: float = 0.002, high_every: int = 10, gravity: float = GRAVITY):
        self.nominal = nominal
        self.gains = gains
        self.pid = pid
        self.rate_gain = np.asarray(rate_gain, dtype=float)
        self.dt = dt
        self.high_every = high_every
        self.gravity = gravity
        weight = float(np.max(nominal.mass)) * gravity
        self.f_max = gains.force_bound * weight
        self.m_max = gains.moment_bound * weight * float(np.max(nominal.arm_length))

    def reset(self, batch_shape=()):
        shape = tuple(batch_shape)
        self.theta_f = np.zeros(shape + (3,))
        self.theta_m = np.zeros(shape + (3,))
        self.cmd = HighLevelCommand.hover(shape, self.gravity)
        self.tick = 0

    def position_loop(self, state, p_ref, v_ref, a_ref):
        g, n = self.pid, self.nominal
        e_p = state.p - p_ref
        e_v = state.v - v_ref
        h = self.dt * self.high_every
        self.theta_f = np.clip(self.theta_f - h * self.gains.gamma_f * n.mass[..., None] * (e_v + self.gains.c1 * e_p), -self.f_max, self.f_max)
        wn, zeta = g.natural_frequency, g.damping_ratio
        a_des = a_ref - 2 * zeta * wn * e_v - wn**2 * e_p + self.theta_f / n.mass[..., None]
        t_des = a_des + self.gravity * E3
        norm = np.linalg.norm(t_des, axis=-1)
        ok = norm > 1e-6
        direction = t_des / np.where(ok, norm, 1.0)[..., None]
        omega_des = tilt_rates(state.q, direction, 0.0, g)
        return HighLevelCommand(
            np.where(ok, norm, self.cmd.c_sigma_des),
            np.where(ok[..., None], omega_des, self.cmd.omega_des),
        )

    def rate_loop(self, cmd: HighLevelCommand, omega):
        n = self.nominal
        e_w = cmd.omega_des - omega
        self.theta_m = np.clip(self.theta_m + self.dt * self.gains.gamma_m * n.inertia * self.rate_gain * e_w, -self.m_max, self.m_max)
        tau = desired_torque(cmd.omega_des, omega, n.inertia, self.rate_gain) + self.theta_m
        forces = mix(n, n.mass * cmd.c_sigma_des, tau)
        return force_to_speed(forces, n.c_f, n.max_motor_speed)

    def __call__(self, obs, ref, true_params):
        if self.tick % self.high_every == 0:
            self.cmd = self.position_loop(obs.state, *ref)
        self.tick += 1
        return self.rate_loop(self.cmd, obs.omega)
