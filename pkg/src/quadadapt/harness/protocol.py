"""Seeded episode sampling, benchmarks and the size-factor sweep."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..controllers import BASELINES, make_controller
from ..sim import SimConfig
from ..trajectory import Trajectory, TrajectoryRanges, sample_reference
from ..vehicle import GRAVITY, ParamRanges, VehicleParams, nominal_vehicle, sample_disturbance, sample_vehicle
from .episode import EpisodeResult, run_batch

C_FLOOR = -0.15  # arm length stays above half the training minimum


def hover_margin(params: VehicleParams, gravity: float = GRAVITY):
    """Largest per-rotor static-hover speed as a fraction of the usable maximum.

    Accounts for external torque and motor effectiveness; values above one
    mean the vehicle cannot hold a level hover at all.
    """
    wrench = np.concatenate([(params.mass * gravity)[..., None], -params.external_torque], axis=-1)
    forces = np.einsum("...ij,...j->...i", params.mixer, wrench)
    speed = np.sqrt(np.maximum(forces, 0.0) / params.c_f[..., None]) / params.motor_effectiveness
    return np.max(speed / params.max_motor_speed[..., None], axis=-1)


@dataclass
class EpisodeDraw:
    seed: int
    c: float
    params: VehicleParams
    disturbed: VehicleParams
    disturbance_time: float
    trajectory: Trajectory
    rejected: int = 0


def draw_episode(
    seed: int,
    ranges: ParamRanges,
    c_range=(0.0, 1.0),
    traj_ranges: TrajectoryRanges = TrajectoryRanges.testing(),
    config: SimConfig = SimConfig(),
    max_hover_margin: float = 0.9,
    max_tries: int = 1000,
) -> EpisodeDraw:
    """Vehicle, payload event and reference for one seeded episode.

    Draws are rejected until the vehicle can hover with margin both before
    and after the payload is attached.
    """
    rng = np.random.default_rng(seed)
    for attempt in range(max_tries):
        c = float(rng.uniform(*c_range))
        params = sample_vehicle(ranges, c, rng)
        disturbed = sample_disturbance(params, rng, ranges)
        if max(hover_margin(params, config.gravity), hover_margin(disturbed, config.gravity)) <= max_hover_margin:
            break
    else:
        raise RuntimeError(f"no flyable vehicle after {max_tries} draws (seed {seed})")
    t_dist = float(rng.uniform(0.0, config.episode_max))
    traj = sample_reference(rng, traj_ranges)
    return EpisodeDraw(seed, c, params, disturbed, t_dist, traj, attempt)


def draw_batch(seeds, **kw):
    draws = [draw_episode(int(s), **kw) for s in seeds]
    return draws


def run_draws(controller, draws, config: SimConfig = SimConfig(), trace=None):
    """Run a list of draws as one lockstep batch; returns EpisodeResults."""
    if not draws:
        return []
    params = VehicleParams.stack([d.params for d in draws])
    disturbed = VehicleParams.stack([d.disturbed for d in draws])
    traj = Trajectory.stack([d.trajectory for d in draws])
    t_dist = np.array([d.disturbance_time for d in draws])
    m = run_batch(controller, params, traj, config, disturbed, t_dist, trace=trace)
    out = []
    for i, d in enumerate(draws):
        summary = d.params.summary()
        summary["c"] = d.c
        summary["payload_mass"] = float(d.disturbed.payload_mass)
        summary["payload_offset"] = float(d.disturbed.payload_offset)
        summary["disturbance_time"] = d.disturbance_time
        out.append(
            EpisodeResult(
                success=bool(m["success"][i]),
                max_pos_err=float(m["max_pos_err"][i]),
                pos_rmse=float(m["pos_rmse"][i]),
                vel_rmse=float(m["vel_rmse"][i]),
                thrust_rmse=float(m["thrust_rmse"][i]),
                angvel_rmse=float(m["angvel_rmse"][i]),
                crash_cause=str(m["crash_cause"][i]),
                duration=float(m["duration"][i]),
                seed=d.seed,
                vehicle=summary,
            )
        )
    return out


def aggregate(results) -> dict:
    """Success rate over all episodes; error statistics over successful ones."""
    n = len(results)
    ok = [r for r in results if r.success]
    out = {"episodes": n, "successes": len(ok), "success_rate": (len(ok) / n) if n else float("nan")}
    for key in ("max_pos_err", "pos_rmse", "vel_rmse", "thrust_rmse", "angvel_rmse"):
        vals = np.array([getattr(r, key) for r in ok])
        out[f"{key}_mean"] = float(vals.mean()) if len(vals) else float("nan")
        out[f"{key}_std"] = float(vals.std()) if len(vals) else float("nan")
    causes = {}
    for r in results:
        if r.crash_cause:
            causes[r.crash_cause] = causes.get(r.crash_cause, 0) + 1
    out["failures"] = causes
    return out


def episode_seeds(seed: int, n: int):
    """Per-episode seeds derived from a base seed (independent streams)."""
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n)] if n else []


def benchmark(
    controllers=BASELINES,
    ranges: ParamRanges | None = None,
    episodes: int = 100,
    seed: int = 0,
    config: SimConfig = SimConfig(),
    settings: dict | None = None,
    nominal: VehicleParams | None = None,
    traj_ranges: TrajectoryRanges = TrajectoryRanges.testing(),
    max_hover_margin: float = 0.9,
    policies: dict | None = None,
):
    """Seeded comparison on a common set of episodes.

    Returns ``(rows, summary)`` with one :class:`EpisodeResult` per
    controller and episode and one aggregate dict per controller.
    """
    ranges = ranges or ParamRanges.testing()
    nominal = nominal or nominal_vehicle(ranges)
    draws = draw_batch(
        episode_seeds(seed, episodes),
        ranges=ranges,
        traj_ranges=traj_ranges,
        config=config,
        max_hover_margin=max_hover_margin,
    )
    rows, summary = [], {}
    for name in controllers:
        ctl = build_controller(name, nominal, settings, config, policies)
        res = run_draws(ctl, draws, config)
        for r in res:
            r.controller = name
        rows.extend(res)
        summary[name] = aggregate(res)
    return rows, summary


def build_controller(name, nominal, settings, config, policies):
    """Baseline by name, or a learned controller from ``policies`` (name -> builder)."""
    if policies and name in policies:
        return policies[name]()
    if name.startswith("policy"):
        raise ValueError(f"controller {name!r} needs a trained checkpoint")
    return make_controller(name, nominal, settings, config.dt, config.delay_steps)


@dataclass
class SweepSpec:
    deltas: list = field(default_factory=lambda: [0.0, 0.5, 1.0, 2.0, 4.0, 8.0])
    episodes: int = 100
    controllers: tuple = BASELINES
    seed: int = 0
    c_floor: float = C_FLOOR

    def __post_init__(self):
        if any(d < 0 for d in self.deltas):
            raise ValueError("delta must be non-negative")

    def c_range(self, delta: float, center: float = 0.5):
        return (max(center - delta, self.c_floor), center + delta)


def delta_sweep(
    spec: SweepSpec,
    ranges: ParamRanges | None = None,
    config: SimConfig = SimConfig(),
    settings: dict | None = None,
    traj_ranges: TrajectoryRanges = TrajectoryRanges.testing(),
    max_hover_margin: float = 0.9,
    policies: dict | None = None,
):
    """Success and error statistics as the size-factor interval widens.

    The nominal vehicle is the noise-free midpoint of the training ranges;
    at ``delta = 0`` every vehicle is that design point plus noise.
    """
    ranges = ranges or ParamRanges.training()
    nominal = nominal_vehicle(ranges)
    rows, curves = [], {name: [] for name in spec.controllers}
    for delta in spec.deltas:
        draws = draw_batch(
            episode_seeds(spec.seed, spec.episodes),
            ranges=ranges,
            c_range=spec.c_range(delta),
            traj_ranges=traj_ranges,
            config=config,
            max_hover_margin=max_hover_margin,
        )
        for name in spec.controllers:
            res = run_draws(build_controller(name, nominal, settings, config, policies), draws, config)
            for r in res:
                r.controller = name
                r.delta = float(delta)
            rows.extend(res)
            agg = aggregate(res)
            errs = np.array([r.max_pos_err for r in res if r.success])
            q = np.quantile(errs, [0.0, 0.25, 0.5, 0.75, 1.0]).tolist() if len(errs) else [float("nan")] * 5
            curves[name].append({"delta": float(delta), **agg, "max_pos_err_quantiles": q})
    return rows, curves
