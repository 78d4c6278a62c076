"""Vehicle parameters, thrust allocation and design-informed randomization.

Every array field of :class:`VehicleParams` may carry leading batch axes, so a
stack of vehicles can be simulated in one vectorized pass. Scalars have shape
``batch``, vectors ``batch + (3,)`` or ``batch + (4,)``, matrices
``batch + (4, 4)``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

GRAVITY = 9.81
# front-right, back-right, back-left, front-left
ROTOR_SIGNS_X = np.array([1.0, -1.0, -1.0, 1.0])
ROTOR_SIGNS_Y = np.array([-1.0, -1.0, 1.0, 1.0])
SPIN_SIGNS = np.array([1.0, -1.0, 1.0, -1.0])
ENV_DIM = 35


class InvalidParameterError(ValueError):
    pass


def build_allocation(arm_length, c_tau):
    """Map rotor forces ``F`` to ``[F_total, tau_x, tau_y, tau_z]``.

    X-configuration: rotor ``i`` sits at ``(sx_i * d, sy_i * d, 0)`` with
    ``d = arm_length / sqrt(2)``. Roll torque is ``y_i F_i`` and pitch torque
    ``-x_i F_i``; yaw torque is ``c_tau`` times the spin sign.
    """
    arm_length = np.asarray(arm_length, dtype=float)
    c_tau = np.asarray(c_tau, dtype=float)
    if np.any(~(arm_length > 0)) or np.any(~(c_tau > 0)):
        raise InvalidParameterError("arm_length and c_tau must be positive")
    d = (arm_length / np.sqrt(2.0))[..., None]
    shape = np.broadcast_shapes(arm_length.shape, c_tau.shape)
    ones = np.broadcast_to(np.ones(4), shape + (4,))
    rows = [
        ones,
        np.broadcast_to(d * ROTOR_SIGNS_Y, shape + (4,)),
        np.broadcast_to(-d * ROTOR_SIGNS_X, shape + (4,)),
        np.broadcast_to(c_tau[..., None] * SPIN_SIGNS, shape + (4,)),
    ]
    return np.stack(rows, axis=-2)


def build_mixer(allocation):
    """Inverse of the allocation matrix: ``[m c_sigma; tau] -> F``."""
    allocation = np.asarray(allocation, dtype=float)
    if np.any(np.abs(np.linalg.det(allocation)) < 1e-14):
        raise InvalidParameterError("allocation matrix is singular")
    return np.linalg.inv(allocation)


@dataclass(frozen=True)
class VehicleParams:
    mass: np.ndarray
    arm_length: np.ndarray
    inertia: np.ndarray
    c_f: np.ndarray
    c_tau: np.ndarray
    drag: np.ndarray
    max_motor_speed: np.ndarray
    motor_time_constant: np.ndarray
    motor_effectiveness: np.ndarray
    mixer: np.ndarray
    allocation: np.ndarray
    payload_mass: np.ndarray
    payload_offset: np.ndarray
    external_torque: np.ndarray

    @classmethod
    def create(
        cls,
        mass,
        arm_length,
        inertia,
        c_f,
        c_tau,
        drag=(0.0, 0.0, 0.0),
        max_motor_speed=3000.0,
        motor_time_constant=0.01,
        motor_effectiveness=(1.0, 1.0, 1.0, 1.0),
        payload_mass=0.0,
        payload_offset=0.0,
        external_torque=(0.0, 0.0, 0.0),
    ) -> "VehicleParams":
        f = lambda x: np.asarray(x, dtype=float)  # noqa: E731
        mass, arm_length, c_f, c_tau = f(mass), f(arm_length), f(c_f), f(c_tau)
        inertia, drag = f(inertia), f(drag)
        for name, value in [
            ("mass", mass),
            ("arm_length", arm_length),
            ("inertia", inertia),
            ("c_f", c_f),
            ("c_tau", c_tau),
            ("max_motor_speed", f(max_motor_speed)),
            ("motor_time_constant", f(motor_time_constant)),
        ]:
            if np.any(~(value > 0)):
                raise InvalidParameterError(f"{name} must be strictly positive")
        if np.any(drag < 0) or np.any(f(payload_mass) < 0):
            raise InvalidParameterError("drag and payload_mass must be non-negative")
        allocation = build_allocation(arm_length, c_tau)
        return cls(
            mass=mass,
            arm_length=arm_length,
            inertia=inertia,
            c_f=c_f,
            c_tau=c_tau,
            drag=drag,
            max_motor_speed=f(max_motor_speed),
            motor_time_constant=f(motor_time_constant),
            motor_effectiveness=f(motor_effectiveness),
            mixer=build_mixer(allocation),
            allocation=allocation,
            payload_mass=f(payload_mass),
            payload_offset=f(payload_offset),
            external_torque=f(external_torque),
        )

    @property
    def batch_shape(self):
        return np.shape(self.mass)

    def replace(self, **changes) -> "VehicleParams":
        """Copy with fields replaced; geometry changes rebuild the mixer."""
        out = dataclasses.replace(self, **{k: np.asarray(v, dtype=float) for k, v in changes.items()})
        if "arm_length" in changes or "c_tau" in changes:
            allocation = build_allocation(out.arm_length, out.c_tau)
            out = dataclasses.replace(out, allocation=allocation, mixer=build_mixer(allocation))
        return out

    def hover_speed(self):
        """Per-rotor speed that balances gravity with unit effectiveness."""
        return np.sqrt(self.mass * GRAVITY / (4.0 * self.c_f))

    def __getitem__(self, idx) -> "VehicleParams":
        return VehicleParams(**{f.name: getattr(self, f.name)[idx] for f in dataclasses.fields(self)})

    def __len__(self):
        return self.batch_shape[0]

    @staticmethod
    def stack(items) -> "VehicleParams":
        items = list(items)
        return VehicleParams(
            **{f.name: np.stack([getattr(p, f.name) for p in items]) for f in dataclasses.fields(VehicleParams)}
        )

    @staticmethod
    def where(mask, a: "VehicleParams", b: "VehicleParams") -> "VehicleParams":
        """Per-vehicle select between two batches of equal shape."""
        mask = np.asarray(mask, dtype=bool)
        out = {}
        for f in dataclasses.fields(VehicleParams):
            x, y = getattr(a, f.name), getattr(b, f.name)
            m = mask.reshape(mask.shape + (1,) * (x.ndim - mask.ndim))
            out[f.name] = np.where(m, x, y)
        return VehicleParams(**out)

    def summary(self) -> dict:
        return {
            "mass": float(self.mass),
            "arm_length": float(self.arm_length),
            "c_f": float(self.c_f),
            "c_tau": float(self.c_tau),
            "max_motor_speed": float(self.max_motor_speed),
            "thrust_to_weight": float(thrust_to_weight(self)),
        }


def thrust_to_weight(params: VehicleParams):
    """Thrust-to-weight ratio at full speed, accounting for motor effectiveness."""
    eff = np.minimum(params.motor_effectiveness, 1.0)
    fmax = params.c_f[..., None] * (eff * params.max_motor_speed[..., None]) ** 2
    return fmax.sum(-1) / (params.mass * GRAVITY)


@dataclass(frozen=True)
class ParamRanges:
    """Min/max pairs of every randomized quantity.

    ``payload_offset`` is a fraction of the arm length, ``payload`` a fraction
    of the vehicle mass.
    """

    mass: tuple = (0.226, 0.950)
    arm_length: tuple = (0.046, 0.200)
    mmoi_xy: tuple = (1.93e-4, 5.40e-3)
    mmoi_z: tuple = (2.42e-4, 8.51e-3)
    c_tau: tuple = (0.0069, 0.0161)
    payload: tuple = (0.18, 0.40)
    payload_offset: tuple = (-0.50, 0.50)
    c_f: tuple = (3.88e-8, 8.40e-6)
    drag: tuple = (0.0, 0.74)
    max_motor_speed: tuple = (800.0, 8044.0)
    motor_effectiveness: tuple = (0.7, 1.3)
    motor_time_constant: tuple = (0.01, 0.01)
    noise: float = 0.2

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if f.name == "noise":
                continue
            lo, hi = getattr(self, f.name)
            if lo > hi:
                raise InvalidParameterError(f"range {f.name} has min > max")
            object.__setattr__(self, f.name, (float(lo), float(hi)))

    @classmethod
    def training(cls) -> "ParamRanges":
        return cls()

    @classmethod
    def testing(cls) -> "ParamRanges":
        return cls(
            mass=(0.205, 1.841),
            arm_length=(0.040, 0.220),
            mmoi_xy=(1.73e-5, 2.27e-2),
            mmoi_z=(2.10e-4, 3.40e-2),
            c_tau=(0.0051, 0.0170),
            c_f=(3.24e-9, 1.02e-4),
            drag=(0.0, 1.15),
            max_motor_speed=(400.0, 10021.0),
        )

    @classmethod
    def from_dict(cls, data: dict) -> "ParamRanges":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise InvalidParameterError(f"unknown range keys: {sorted(unknown)}")
        return cls(**{k: (tuple(v) if k != "noise" else float(v)) for k, v in data.items()})

    @classmethod
    def load(cls, path) -> "ParamRanges":
        """Read ranges from a YAML mapping ``key: [min, max]``.

        A top-level ``ranges`` section is used if present, so the ranges can
        live inside the full run configuration file.
        """
        data = yaml.safe_load(Path(path).read_text()) or {}
        data = data.get("ranges", data)
        base = data.pop("base", "training") if isinstance(data, dict) else "training"
        merged = dataclasses.asdict(cls.testing() if base == "testing" else cls.training())
        merged.update(data)
        return cls.from_dict(merged)

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in dataclasses.asdict(self).items()}


def _lerp(pair, s):
    lo, hi = pair
    return s * (hi - lo) + lo


def size_scaled(ranges: ParamRanges, c):
    """Noise-free parameters for size factor ``c``.

    Arm length, C_tau are linear in ``c``; mass, inertia and drag follow the
    cubic, quintic and quadratic arm-length laws; C_F is exponential in
    ``c``. Maximum motor speed is linear but decreasing, as smaller vehicles
    spin faster. Outside ``[0, 1]`` drag is floored at zero and motor speed at
    half its minimum.
    """
    c = np.asarray(c, dtype=float)
    l_min, l_max = ranges.arm_length
    arm = _lerp(ranges.arm_length, c)

    def power_law(pair, p):
        s = (arm**p - l_min**p) / (l_max**p - l_min**p)
        return _lerp(pair, s)

    mass = power_law(ranges.mass, 3)
    j_xy = power_law(ranges.mmoi_xy, 5)
    j_z = power_law(ranges.mmoi_z, 5)
    drag = np.maximum(power_law(ranges.drag, 2), 0.0)
    cf_min, cf_max = ranges.c_f
    c_f = cf_min * (cf_max / cf_min) ** c
    w_min, w_max = ranges.max_motor_speed
    max_speed = np.maximum(w_max - c * (w_max - w_min), 0.5 * w_min)
    return {
        "arm_length": arm,
        "mass": mass,
        "inertia": np.stack([j_xy, j_xy, j_z], axis=-1),
        "drag": np.stack([drag, drag, drag], axis=-1),
        "c_f": c_f,
        "c_tau": _lerp(ranges.c_tau, c),
        "max_motor_speed": max_speed,
        "motor_time_constant": np.asarray(ranges.motor_time_constant[0]),
    }


def sample_vehicle(ranges: ParamRanges, c: float, rng: np.random.Generator, noise: bool = True) -> VehicleParams:
    """Draw one vehicle at size factor ``c``.

    With ``noise`` every scaled quantity (each vector component separately)
    is multiplied by an independent ``U[1 - noise, 1 + noise]`` factor and the
    four motor effectiveness factors are drawn from their range. Without it
    the vehicle is the deterministic design point with unit effectiveness.
    """
    p = size_scaled(ranges, c)
    if noise:
        lo, hi = 1.0 - ranges.noise, 1.0 + ranges.noise
        for key in ("arm_length", "mass", "inertia", "drag", "c_f", "c_tau", "max_motor_speed"):
            p[key] = p[key] * rng.uniform(lo, hi, size=np.shape(p[key]))
        eff = rng.uniform(*ranges.motor_effectiveness, size=4)
    else:
        eff = np.ones(4)
    return VehicleParams.create(motor_effectiveness=eff, **p)


def nominal_vehicle(ranges: ParamRanges | None = None) -> VehicleParams:
    """The mid-range design point (``c = 0.5``, no noise)."""
    return sample_vehicle(ranges or ParamRanges(), 0.5, np.random.default_rng(0), noise=False)


def apply_payload(params: VehicleParams, payload_mass, offset) -> VehicleParams:
    """Attach a point mass on the body x-axis at signed ``offset`` metres."""
    payload_mass = np.asarray(payload_mass, dtype=float)
    offset = np.asarray(offset, dtype=float)
    lever = payload_mass * offset**2
    inertia = params.inertia + np.stack([np.zeros_like(lever), lever, lever], axis=-1)
    weight_moment = payload_mass * GRAVITY * offset
    torque = params.external_torque + np.stack(
        [np.zeros_like(weight_moment), weight_moment, np.zeros_like(weight_moment)], axis=-1
    )
    return params.replace(
        mass=params.mass + payload_mass,
        inertia=inertia,
        payload_mass=params.payload_mass + payload_mass,
        payload_offset=offset,
        external_torque=torque,
    )


def sample_disturbance(params: VehicleParams, rng: np.random.Generator, ranges: ParamRanges | None = None) -> VehicleParams:
    """Sudden off-center payload, sized relative to the current vehicle."""
    ranges = ranges or ParamRanges()
    frac = rng.uniform(*ranges.payload, size=np.shape(params.mass))
    off = rng.uniform(*ranges.payload_offset, size=np.shape(params.mass))
    return apply_payload(params, frac * params.mass, off * params.arm_length)


def env_vector(params: VehicleParams) -> np.ndarray:
    """Flat environment vector (35 entries, raw units)."""
    parts = [
        params.mass[..., None],
        params.arm_length[..., None],
        params.c_tau[..., None],
        params.c_f[..., None],
        params.inertia,
        params.drag,
        params.max_motor_speed[..., None],
        params.motor_effectiveness,
        params.mixer.reshape(params.mixer.shape[:-2] + (16,)),
        params.payload_mass[..., None],
        params.external_torque,
    ]
    return np.concatenate(parts, axis=-1)


@dataclass
class EnvNormalizer:
    """Affine per-dimension map of the environment vector to O(1) values."""

    center: np.ndarray
    half_width: np.ndarray = field(default=None)

    @classmethod
    def from_ranges(cls, ranges: ParamRanges, c_lo: float = 0.0, c_hi: float = 1.0) -> "EnvNormalizer":
        rng = np.random.default_rng(0)
        lo_v = env_vector(sample_vehicle(ranges, c_lo, rng, noise=False))
        hi_v = env_vector(sample_vehicle(ranges, c_hi, rng, noise=False))
        lo, hi = np.minimum(lo_v, hi_v), np.maximum(lo_v, hi_v)
        n = ranges.noise
        lo = np.where(lo > 0, lo * (1 - n), lo * (1 + n))
        hi = np.where(hi > 0, hi * (1 + n), hi * (1 - n))
        m_hi = max(lo_v[0], hi_v[0]) * (1 + n)
        l_hi = max(lo_v[1], hi_v[1]) * (1 + n)
        lo[11:15], hi[11:15] = ranges.motor_effectiveness
        lo[31], hi[31] = 0.0, ranges.payload[1] * m_hi
        t_max = ranges.payload[1] * m_hi * GRAVITY * max(abs(v) for v in ranges.payload_offset) * l_hi
        lo[32:35], hi[32:35] = -t_max, t_max
        center = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        half = np.where(half > 1e-9 * np.maximum(np.abs(center), 1.0), half, 1.0)
        return cls(center=center, half_width=half)

    def __call__(self, env):
        return (env - self.center) / self.half_width
