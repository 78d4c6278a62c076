"""Vectorized training environment for the learned low-level controller.

Many independent episodes advance in lockstep; finished ones are redrawn in
place. The high level (PID at a tenth of the control rate) runs inside the
environment, so an agent only maps ``(x_t, e_t)`` to normalized motor
speeds. In the end-to-end variant the agent instead sees attitude, position,
velocity and position error, and the PID command only shapes the reward and
the expert action.
"""
from __future__ import annotations

import numpy as np

from ..controllers.base import HighLevelCommand, PidGains, highlevel_pid, lowlevel_pd
from ..harness.protocol import draw_episode
from ..sim import SimConfig, SimState, Status, check_termination, dynamics_step, motor_step, rotor_wrench, specific_thrust
from ..trajectory import Trajectory, TrajectoryRanges
from ..vehicle import GRAVITY, EnvNormalizer, ParamRanges, VehicleParams, env_vector
from .reward import RewardWeights, reward_terms, total_reward

# x_t = (c_sigma, omega, c_sigma_des, omega_des)
STATE_CENTER = np.array([GRAVITY, 0.0, 0.0, 0.0, GRAVITY, 0.0, 0.0, 0.0])
STATE_SCALE = np.array([GRAVITY, 2.0, 2.0, 2.0, GRAVITY, 2.0, 2.0, 2.0])


# end-to-end variant: (c_sigma, omega, q, p, v, p - p_ref)
E2E_CENTER = np.concatenate([[GRAVITY, 0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], np.zeros(9)])
E2E_SCALE = np.concatenate([[GRAVITY, 2.0, 2.0, 2.0], [1.0, 1.0, 1.0, 1.0], np.full(3, 5.0), np.full(3, 3.0), np.ones(3)])


def normalize_state(x):
    return (x - STATE_CENTER) / STATE_SCALE


def state_constants(end_to_end: bool = False):
    return (E2E_CENTER, E2E_SCALE) if end_to_end else (STATE_CENTER, STATE_SCALE)


def assemble_e2e_state(c_sigma, state, p_ref):
    return np.concatenate([np.asarray(c_sigma)[..., None], state.omega, state.q, state.p, state.v, state.p - p_ref], axis=-1)


def assemble_state(c_sigma, omega, cmd: HighLevelCommand):
    return np.concatenate([np.asarray(c_sigma)[..., None], omega, np.asarray(cmd.c_sigma_des)[..., None], cmd.omega_des], axis=-1)


_FIELDS = ("p", "v", "q", "omega", "motor_speed", "t")


class FlightEnv:
    def __init__(
        self,
        n_envs: int,
        ranges: ParamRanges | None = None,
        c_range=(0.0, 1.0),
        traj_ranges: TrajectoryRanges = TrajectoryRanges.training(),
        config: SimConfig = SimConfig(),
        seed: int = 0,
        weights: RewardWeights = RewardWeights(),
        normalizer: EnvNormalizer | None = None,
        max_hover_margin: float = 0.9,
        pid: PidGains = PidGains(),
        high_every: int = 10,
        end_to_end: bool = False,
    ):
        self.n = n_envs
        self.ranges = ranges or ParamRanges.training()
        self.c_range = c_range
        self.traj_ranges = traj_ranges
        self.config = config
        self.seed = seed
        self.weights = weights
        self.normalizer = normalizer or EnvNormalizer.from_ranges(ParamRanges.training())
        self.max_hover_margin = max_hover_margin
        self.pid = pid
        self.high_every = high_every
        self.end_to_end = end_to_end
        self.state_center, self.state_scale = state_constants(end_to_end)
        self.delay = config.delay_steps
        self.episodes_started = 0
        self.draws = [None] * n_envs
        self.reset_all()

    # -- episode management -------------------------------------------------
    def _next_seed(self):
        s = np.random.SeedSequence([self.seed, self.episodes_started]).generate_state(1)[0]
        self.episodes_started += 1
        return int(s)

    def reset_all(self):
        n = self.n
        self.state = {k: None for k in _FIELDS}
        self.ring = None
        self._reset(np.arange(n))

    def _restack(self):
        self.base = VehicleParams.stack([d.params for d in self.draws])
        self.disturbed = VehicleParams.stack([d.disturbed for d in self.draws])
        self.params = VehicleParams.where(self.dist_applied, self.disturbed, self.base)
        self.traj = Trajectory.stack([d.trajectory for d in self.draws])
        self.t_dist = np.array([d.disturbance_time for d in self.draws])
        self.a_max = self.params.max_motor_speed
        self.env_norm = self.normalizer(env_vector(self.params))

    def _reset(self, idx):
        first = self.ring is None
        for i in idx:
            self.draws[i] = draw_episode(
                self._next_seed(),
                ranges=self.ranges,
                c_range=self.c_range,
                traj_ranges=self.traj_ranges,
                config=self.config,
                max_hover_margin=self.max_hover_margin,
            )
        if first:
            self.dist_applied = np.zeros(self.n, dtype=bool)
        self.dist_applied[idx] = False
        self._restack()
        fresh = SimState.hover(self.params[idx])
        c0 = specific_thrust(fresh.motor_speed, self.params[idx])
        if first:
            self.state = {k: getattr(fresh, k).copy() for k in _FIELDS}
            self.ring = {k: np.repeat(getattr(fresh, k)[None], self.delay + 1, axis=0) for k in _FIELDS}
            self.ring["c"] = np.repeat(c0[None], self.delay + 1, axis=0)
            self.head = 0
            self.cmd_c = np.full(self.n, GRAVITY)
            self.cmd_w = np.zeros((self.n, 3))
            self.tick = np.zeros(self.n, dtype=int)
            self.steps = np.zeros(self.n, dtype=int)
            self.prev_action = np.zeros((self.n, 4))
            self.start_height = fresh.p[:, 2].copy()
        else:
            for k in _FIELDS:
                self.state[k][idx] = getattr(fresh, k)
                self.ring[k][:, idx] = getattr(fresh, k)[None]
            self.ring["c"][:, idx] = c0[None]
            self.cmd_c[idx] = GRAVITY
            self.cmd_w[idx] = 0.0
            self.tick[idx] = 0
            self.steps[idx] = 0
            self.start_height[idx] = fresh.p[:, 2]
        self.prev_action[idx] = (self.params.hover_speed()[idx] / self.a_max[idx])[:, None]

    # -- interaction ---------------------------------------------------------
    def sim_state(self) -> SimState:
        return SimState(**{k: self.state[k] for k in _FIELDS})

    def delayed(self):
        j = (self.head - self.delay) % (self.delay + 1)
        return SimState(**{k: self.ring[k][j] for k in _FIELDS}), self.ring["c"][j]

    def observe(self):
        """Delayed measurements, high-level command and privileged extras."""
        obs_state, c_obs = self.delayed()
        update = self.tick % self.high_every == 0
        ref = self.traj.evaluate(self.state["t"])
        if np.any(update):
            with np.errstate(all="ignore"):
                cmd, singular = highlevel_pid(obs_state, *ref, gains=self.pid, gravity=self.config.gravity)
            take = update & ~singular & np.isfinite(cmd.c_sigma_des)
            self.cmd_c = np.where(take, cmd.c_sigma_des, self.cmd_c)
            self.cmd_w = np.where(take[:, None], cmd.omega_des, self.cmd_w)
        cmd = HighLevelCommand(self.cmd_c.copy(), self.cmd_w.copy())
        if self.end_to_end:
            x = assemble_e2e_state(c_obs, obs_state, ref[0])
        else:
            x = assemble_state(c_obs, obs_state.omega, cmd)
        with np.errstate(all="ignore"):
            expert = lowlevel_pd(cmd, obs_state.omega, self.params) / self.a_max[:, None]
        return {
            "x": x,
            "x_norm": (x - self.state_center) / self.state_scale,
            "e_norm": self.env_norm,
            "expert": np.clip(np.nan_to_num(expert), 0.0, 1.0),
            "cmd": cmd,
            "omega_obs": obs_state.omega,
            "c_obs": c_obs,
        }

    def _maybe_disturb(self):
        due = (self.state["t"] >= self.t_dist - 1e-9) & ~self.dist_applied
        if np.any(due):
            self.dist_applied |= due
            self.params = VehicleParams.where(self.dist_applied, self.disturbed, self.base)
            self.env_norm = self.normalizer(env_vector(self.params))
            self.a_max = self.params.max_motor_speed

    def step(self, action, cmd: HighLevelCommand, exclude=()):
        """Apply normalized speeds; returns (reward, done, truncated, info).

        ``done`` marks episodes that ended at this step (crash or time
        limit); ``truncated`` marks the time-limit subset. Ended episodes are
        redrawn before returning.
        """
        self._maybe_disturb()
        params = self.params
        action = np.clip(action, 0.0, 1.0)
        state = self.sim_state()
        omega_before = state.omega
        speed = motor_step(action * self.a_max[:, None], state.motor_speed, params, self.config.dt)
        with np.errstate(all="ignore"):
            new = dynamics_step(state.replace(motor_speed=speed), params, self.config)
            _, torque = rotor_wrench(speed, params)
            c_now = specific_thrust(speed, params)
            terms = reward_terms(
                action, self.prev_action, c_now, cmd.c_sigma_des, torque, omega_before, cmd.omega_des,
                params.inertia, self.config.dt, self.weights.rate_term,
            )
        status = check_termination(new, self.config, self.start_height)
        crashed = status == int(Status.CRASHED)
        truncated = status == int(Status.SUCCESS_END)
        for k in terms:
            terms[k] = np.where(crashed | ~np.isfinite(terms[k]), 0.0, terms[k])
        reward = total_reward(terms, self.weights, exclude)
        for k in _FIELDS:
            self.state[k] = getattr(new, k)
        self.head = (self.head + 1) % (self.delay + 1)
        for k in _FIELDS:
            self.ring[k][self.head] = self.state[k]
        self.ring["c"][self.head] = c_now
        self.prev_action = action
        self.tick += 1
        self.steps += 1
        done = crashed | truncated
        info = {"terms": terms, "crashed": crashed}
        if np.any(done):
            idx = np.flatnonzero(done)
            info["ended_lengths"] = self.steps[idx] * self.config.dt / self.config.episode_max
            info["ended_idx"] = idx
            self._reset(idx)
        return reward, done, truncated, info
