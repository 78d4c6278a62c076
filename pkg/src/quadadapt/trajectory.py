"""Minimum-jerk reference trajectories.

Each axis is an independent quintic that minimizes the integral of squared
jerk between fully specified boundary states (position, velocity,
acceleration). Trajectories may be batched: boundary arrays of shape
``batch + (3,)`` and durations of shape ``batch``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .vehicle import InvalidParameterError


def _solve_free_coefficients(dp, dv, da, T):
    """Closed-form (alpha, beta, gamma) of the jerk polynomial.

    Position is ``alpha/120 t^5 + beta/24 t^4 + gamma/6 t^3 + a0/2 t^2 + v0 t + p0``.
    """
    T = T[..., None]
    alpha = (720 * dp - 360 * T * dv + 60 * T**2 * da) / T**5
    beta = (-360 * T * dp + 168 * T**2 * dv - 24 * T**3 * da) / T**5
    gamma = (60 * T**2 * dp - 24 * T**3 * dv + 3 * T**4 * da) / T**5
    return alpha, beta, gamma


@dataclass(frozen=True)
class Trajectory:
    p0: np.ndarray
    v0: np.ndarray
    a0: np.ndarray
    pf: np.ndarray
    vf: np.ndarray
    af: np.ndarray
    duration: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray

    @property
    def coefficients(self):
        """Monomial coefficients ``c[..., axis, k]`` of ``t**k``, k = 0..5."""
        return np.stack(
            [self.p0, self.v0, self.a0 / 2, self.gamma / 6, self.beta / 24, self.alpha / 120], axis=-1
        )

    def evaluate(self, t):
        """Reference position, velocity and acceleration at time ``t``.

        After ``duration`` the final position is held with zero velocity and
        acceleration.
        """
        t = np.asarray(t, dtype=float)
        T = self.duration
        tc = np.clip(t, 0.0, T)[..., None]
        a_, b_, g_ = self.alpha, self.beta, self.gamma
        p = a_ / 120 * tc**5 + b_ / 24 * tc**4 + g_ / 6 * tc**3 + self.a0 / 2 * tc**2 + self.v0 * tc + self.p0
        v = a_ / 24 * tc**4 + b_ / 6 * tc**3 + g_ / 2 * tc**2 + self.a0 * tc + self.v0
        a = a_ / 6 * tc**3 + b_ / 2 * tc**2 + g_ * tc + self.a0
        after = (t > T)[..., None]
        p = np.where(after, self.pf, p)
        v = np.where(after, 0.0, v)
        a = np.where(after, 0.0, a)
        return p, v, a

    def jerk(self, t):
        tc = np.clip(np.asarray(t, dtype=float), 0.0, self.duration)[..., None]
        return self.alpha / 2 * tc**2 + self.beta * tc + self.gamma

    def cost(self):
        """Integral of squared jerk over ``[0, T]``, summed over axes."""
        a, b, g = self.alpha, self.beta, self.gamma
        T = self.duration[..., None]
        per_axis = g**2 * T + b * g * T**2 + (b**2 + a * g) / 3 * T**3 + a * b / 4 * T**4 + a**2 / 20 * T**5
        return per_axis.sum(-1)

    def __getitem__(self, idx) -> "Trajectory":
        return Trajectory(**{k: getattr(self, k)[idx] for k in self.__dataclass_fields__})

    @staticmethod
    def stack(items) -> "Trajectory":
        items = list(items)
        return Trajectory(**{k: np.stack([getattr(t, k) for t in items]) for k in Trajectory.__dataclass_fields__})

    def to_csv(self, path, dt: float = 0.01):
        """Write an unbatched trajectory as a sample table."""
        ts = np.arange(0.0, float(self.duration) + 0.5 * dt, dt)
        p, v, a = self.evaluate(ts)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "px", "py", "pz", "vx", "vy", "vz", "ax", "ay", "az"])
            for i, t in enumerate(ts):
                w.writerow([f"{t:.6f}"] + [f"{x:.9g}" for x in (*p[i], *v[i], *a[i])])


def generate(p0, v0, a0, pf, vf, af, T) -> Trajectory:
    """Minimum-jerk trajectory between two full boundary states."""
    arrs = [np.asarray(x, dtype=float) for x in (p0, v0, a0, pf, vf, af)]
    T = np.asarray(T, dtype=float)
    if np.any(~(T > 0)):
        raise InvalidParameterError("duration must be positive")
    shape = np.broadcast_shapes(T.shape + (3,), *(x.shape for x in arrs))
    p0, v0, a0, pf, vf, af = (np.broadcast_to(x, shape).copy() for x in arrs)
    T = np.broadcast_to(T, shape[:-1]).copy()
    Tc = T[..., None]
    dp = pf - p0 - v0 * Tc - 0.5 * a0 * Tc**2
    dv = vf - v0 - a0 * Tc
    da = af - a0
    alpha, beta, gamma = _solve_free_coefficients(dp, dv, da, T)
    return Trajectory(p0, v0, a0, pf, vf, af, T, alpha, beta, gamma)


@dataclass(frozen=True)
class TrajectoryRanges:
    position: tuple = (-2.0, 2.0)
    velocity: tuple = (-2.0, 2.0)
    acceleration: tuple = (-2.0, 2.0)
    total_time: tuple = (1.0, 5.0)

    @classmethod
    def training(cls) -> "TrajectoryRanges":
        return cls()

    @classmethod
    def testing(cls) -> "TrajectoryRanges":
        return cls(total_time=(5.0, 5.0))


def sample_reference(rng: np.random.Generator, ranges: TrajectoryRanges = TrajectoryRanges(), size=None) -> Trajectory:
    """Reference from hover at the origin to a uniformly drawn end state."""
    shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
    pf = rng.uniform(*ranges.position, size=shape + (3,))
    vf = rng.uniform(*ranges.velocity, size=shape + (3,))
    af = rng.uniform(*ranges.acceleration, size=shape + (3,))
    lo, hi = ranges.total_time
    T = np.full(shape, lo) if lo == hi else rng.uniform(lo, hi, size=shape)
    zero = np.zeros(shape + (3,))
    return generate(zero, zero, zero, pf, vf, af, T)


def hover_reference(position=(0.0, 0.0, 0.0), size=None) -> Trajectory:
    shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
    p = np.broadcast_to(np.asarray(position, dtype=float), shape + (3,))
    zero = np.zeros(shape + (3,))
    return generate(p, zero, zero, p, zero, zero, np.ones(shape))


@dataclass(frozen=True)
class CircleReference:
    """Horizontal circle of ``radius`` about the origin's vertical axis.

    A minimum-jerk lead-in takes the vehicle from hover at the origin to the
    circle entry state ``(radius, 0, height)`` in ``lead_in`` seconds.
    """

    radius: float
    period: float
    height: float = 0.0
    lead_in: float = 2.0

    def __post_init__(self):
        if not (self.radius > 0 and self.period > 0 and self.lead_in > 0):
            raise InvalidParameterError("radius, period and lead_in must be positive")

    @property
    def rate(self):
        return 2 * np.pi / self.period

    def _entry(self):
        r, w = self.radius, self.rate
        zero = np.zeros(3)
        return generate(
            zero, zero, zero, np.array([r, 0.0, self.height]), np.array([0.0, r * w, 0.0]), np.array([-r * w * w, 0.0, 0.0]), self.lead_in
        )

    def evaluate(self, t):
        t = np.asarray(t, dtype=float)
        r, w = self.radius, self.rate
        lp, lv, la = self._entry().evaluate(np.minimum(t, self.lead_in))
        th = w * np.maximum(t - self.lead_in, 0.0)
        c, s = np.cos(th), np.sin(th)
        z = np.zeros_like(th)
        cp = np.stack([r * c, r * s, z + self.height], -1)
        cv = np.stack([-r * w * s, r * w * c, z], -1)
        ca = np.stack([-r * w * w * c, -r * w * w * s, z], -1)
        on = (t >= self.lead_in)[..., None]
        return np.where(on, cp, lp), np.where(on, cv, lv), np.where(on, ca, la)
