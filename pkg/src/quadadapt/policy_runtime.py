"""Deployment path of the learned low-level controller.

The student estimates the latent ``z_hat = phi(history)`` from the last 100
normalized state-action pairs and feeds it to the base policy; the teacher
uses the privileged encoder output ``mu(e_t)`` instead. Both plug into the
same PID cascade as the model-based baselines.
"""
from __future__ import annotations

import csv

import numpy as np

from .controllers.base import Cascade, HighLevelCommand, PidGains, PidHighLevel
from .learning.env import assemble_e2e_state, assemble_state
from .nn import ACTION_DIM, HISTORY, STATE_DIM, PolicyNets, sigmoid
from .vehicle import EnvNormalizer, VehicleParams, env_vector


class StateActionHistory:
    """Fixed-capacity ring of ``(x_norm, a)`` rows, zero-initialized.

    ``window()`` returns ``(*batch, length, 12)`` ordered oldest first.
    """

    def __init__(self, batch_shape=(), length: int = HISTORY, state_dim: int = STATE_DIM, action_dim: int = ACTION_DIM):
        self.batch_shape = tuple(batch_shape)
        self.length = length
        self.width = state_dim + action_dim
        self.data = np.zeros(self.batch_shape + (length, self.width))
        self.head = 0  # next slot to write; also the oldest entry
        self.count = 0

    def push(self, x_norm, action):
        self.data[..., self.head, :] = np.concatenate([x_norm, action], -1)
        self.head = (self.head + 1) % self.length
        self.count += 1

    def window(self):
        return np.concatenate([self.data[..., self.head :, :], self.data[..., : self.head, :]], axis=-2)

    def clear(self, idx=None):
        """Zero all rows, or only the episodes selected by ``idx``."""
        if idx is None:
            self.data[...] = 0.0
            self.head, self.count = 0, 0
        else:
            self.data[idx] = 0.0


def _flat(a, tail: int):
    lead = a.shape[: a.ndim - tail]
    return a.reshape((-1,) + a.shape[a.ndim - tail :]), lead


def estimate_latent(nets: PolicyNets, window):
    """``phi`` over a ``(*batch, length, 12)`` window."""
    w, lead = _flat(np.asarray(window, dtype=float), 2)
    return nets.adaptation.forward(w).reshape(lead + (-1,))


def encode(nets: PolicyNets, e_norm):
    e, lead = _flat(np.asarray(e_norm, dtype=float), 1)
    return nets.encoder.forward(e).reshape(lead + (-1,))


def policy_action(nets: PolicyNets, x_norm, z):
    """Deterministic normalized action ``sigmoid(pi(x, z))`` in ``[0, 1]``."""
    inp, lead = _flat(np.concatenate([x_norm, z], -1), 1)
    return sigmoid(nets.policy.forward(inp)).reshape(lead + (ACTION_DIM,))


class Normalization:
    """State and environment normalization constants frozen in a checkpoint."""

    def __init__(self, meta: dict):
        self.state_center = np.asarray(meta["state_center"], dtype=float)
        self.state_scale = np.asarray(meta["state_scale"], dtype=float)
        self.env = EnvNormalizer(center=np.asarray(meta["env_center"]), half_width=np.asarray(meta["env_half_width"]))

    def state(self, x):
        return (x - self.state_center) / self.state_scale


def policy_step(cmd: HighLevelCommand, obs, history: StateActionHistory, nets: PolicyNets, norm: Normalization, max_speed):
    """Student step: returns ``(motor speeds, z_hat, normalized action)``."""
    x_norm = norm.state(assemble_state(obs.c_sigma, obs.omega, cmd))
    z_hat = estimate_latent(nets, history.window())
    a = policy_action(nets, x_norm, z_hat)
    history.push(x_norm, a)
    return a * np.asarray(max_speed)[..., None], z_hat, a


def teacher_step(cmd: HighLevelCommand, obs, e_t, nets: PolicyNets, norm: Normalization, max_speed, history: StateActionHistory | None = None):
    """Teacher step with the privileged ``mu(e_t)``; ``e_t`` is the raw 35-vector."""
    x_norm = norm.state(assemble_state(obs.c_sigma, obs.omega, cmd))
    z = encode(nets, norm.env(e_t))
    a = policy_action(nets, x_norm, z)
    if history is not None:
        history.push(x_norm, a)
    return a * np.asarray(max_speed)[..., None], z, a


class LearnedLowLevel:
    """Low-level law backed by the learned policy.

    ``mode`` is ``"student"`` (adaptation module) or ``"teacher"`` (encoder
    on the true parameters). With ``record=True`` every step's latent,
    normalized state and action are kept for export. The maximum motor speed
    used to scale actions is read from the vehicle parameters.
    """

    def __init__(self, nets: PolicyNets, meta: dict, mode: str = "student", record: bool = False):
        if mode not in ("student", "teacher"):
            raise ValueError(f"mode must be 'student' or 'teacher', got {mode!r}")
        self.nets = nets
        self.norm = Normalization(meta)
        self.mode = mode
        self.record = record
        self.history = StateActionHistory()
        self.z_trace, self.x_trace, self.a_trace = [], [], []

    def reset(self, batch_shape=()):
        self.history = StateActionHistory(batch_shape, self.nets.arch["history"], self.nets.arch["policy_input"])
        self.z_trace, self.x_trace, self.a_trace = [], [], []

    def act(self, x, true_params: VehicleParams):
        """One step from a raw (unnormalized) state vector; returns motor speeds."""
        x_norm = self.norm.state(x)
        if self.mode == "student":
            z = estimate_latent(self.nets, self.history.window())
        else:
            z = encode(self.nets, self.norm.env(env_vector(true_params)))
        a = policy_action(self.nets, x_norm, z)
        self.history.push(x_norm, a)
        if self.record:
            self.z_trace.append(z)
            self.x_trace.append(x_norm)
            self.a_trace.append(a)
        return a * np.asarray(true_params.max_motor_speed)[..., None]

    def __call__(self, cmd: HighLevelCommand, obs, true_params: VehicleParams):
        return self.act(assemble_state(obs.c_sigma, obs.omega, cmd), true_params)


class EndToEndController(Cascade):
    """Single learned policy from flight state and position error to motor speeds.

    The PID cascade still runs, but only so that ``cmd`` is available for
    the thrust and body-rate metrics.
    """

    name = "policy_e2e"

    def __call__(self, obs, ref, true_params):
        self.high_level(obs, ref)
        out = self.low.act(assemble_e2e_state(obs.c_sigma, obs.state, ref[0]), true_params)
        self.tick += 1
        return out


def learned_controller(nets: PolicyNets, meta: dict, mode: str = "student", record: bool = False, pid: PidGains = PidGains(), high_every: int = 10) -> Cascade:
    """PID high level at a tenth of the control rate over the learned low level."""
    cls = EndToEndController if meta.get("end_to_end") else Cascade
    ctrl = cls(LearnedLowLevel(nets, meta, mode, record), PidHighLevel(pid), high_every)
    ctrl.name = f"policy_{mode}"
    return ctrl


def load_controller(path, mode: str = "student", record: bool = False, **kw) -> Cascade:
    nets, meta = PolicyNets.load(path)
    return learned_controller(nets, meta, mode, record, **kw)


def policy_factory(nets: PolicyNets, meta: dict, mode: str = "student", **kw):
    """Zero-argument builder, as the benchmark protocols expect."""
    return lambda: learned_controller(nets, meta, mode, **kw)


# -- latent trace analysis ----------------------------------------------------

def write_latent_trace(path, low: LearnedLowLevel, dt: float, episode: int = 0):
    """Per-step ``(t, x, a, z)`` rows of one recorded episode."""
    z = np.asarray(low.z_trace)
    x = np.asarray(low.x_trace)
    a = np.asarray(low.a_trace)
    if z.ndim == 3:
        z, x, a = z[:, episode], x[:, episode], a[:, episode]
    header = ["t"] + [f"x{i}" for i in range(x.shape[-1])] + [f"a{i}" for i in range(a.shape[-1])] + [f"z{i}" for i in range(z.shape[-1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(len(z)):
            w.writerow([f"{k * dt:.6f}"] + [f"{v:.9g}" for v in np.concatenate([x[k], a[k], z[k]])])


def latent_shift(z_trace, event_step: int, window: int, lag: int = 0, floor: float = 1e-3):
    """Relative change of each component's windowed mean across an event.

    Compares the mean over ``window`` steps before ``event_step`` with the
    mean over ``window`` steps starting ``lag`` steps after it. The relative
    change is taken against ``max(|pre|, floor)``.
    """
    z = np.asarray(z_trace)
    pre = z[max(event_step - window, 0) : event_step].mean(0)
    post = z[event_step + lag : event_step + lag + window].mean(0)
    return np.abs(post - pre) / np.maximum(np.abs(pre), floor)


def flag_components(z_trace, event_step: int, window: int, threshold: float = 0.10, lag: int = 0):
    """Indices whose windowed mean moves by more than ``threshold`` (relative)."""
    return np.flatnonzero(latent_shift(z_trace, event_step, window, lag) > threshold)
