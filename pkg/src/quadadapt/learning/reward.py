"""Per-step reward for the learned low-level controller and the IL/RL blend."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..controllers.base import RATE_GAIN, desired_torque


@dataclass(frozen=True)
class RewardWeights:
    smooth: float = 1.0
    survive: float = 1.0
    thrust: float = 1.0
    torque: float = 1.0
    # "torque" tracks net body torque; "angvel" swaps in body-rate tracking
    rate_term: str = "torque"

    def __post_init__(self):
        if min(self.smooth, self.survive, self.thrust, self.torque) < 0:
            raise ValueError("reward weights must be non-negative")
        if self.rate_term not in ("torque", "angvel"):
            raise ValueError(f"unknown rate term {self.rate_term!r}")


TERMS = ("smooth", "survive", "thrust", "torque")


def reward_terms(action, prev_action, c_sigma, c_sigma_des, torque, omega, omega_des, inertia, dt, rate_term="torque", gain=RATE_GAIN):
    """Signed, weight-free reward terms (batched).

    ``action`` and ``prev_action`` are normalized by the maximum motor speed.
    ``torque`` is the net body torque produced at this step and ``omega``
    the body rate the desired torque is computed at.
    """
    smooth = -np.linalg.norm(action - prev_action, axis=-1)
    survive = np.full(np.shape(smooth), dt)
    thrust = -np.abs(c_sigma - c_sigma_des)
    if rate_term == "torque":
        tau_des = desired_torque(omega_des, omega, inertia, gain)
        rate = -np.linalg.norm(torque - tau_des, axis=-1)
    else:
        rate = -np.linalg.norm(omega - omega_des, axis=-1)
    return {"smooth": smooth, "survive": survive, "thrust": thrust, "torque": rate}


def total_reward(terms: dict, weights: RewardWeights = RewardWeights(), exclude=()):
    """Weighted sum of the terms; names in ``exclude`` are left out."""
    out = 0.0
    for name in TERMS:
        if name not in exclude:
            out = out + getattr(weights, name) * terms[name]
    return out


def blend_alpha(epoch):
    """Imitation weight after ``epoch`` completed optimization epochs."""
    return np.exp(-0.001 * np.asarray(epoch, dtype=float))
