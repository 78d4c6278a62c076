"""Evaluations specific to the learned controller.

* paired teacher/student tracking on the nominal vehicle;
* the payload-event hover episode with latent-trace analysis.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from ..nn import PolicyNets
from ..policy_runtime import flag_components, latent_shift, learned_controller
from ..sim import SimConfig
from ..trajectory import Trajectory, TrajectoryRanges, hover_reference, sample_reference
from ..vehicle import ParamRanges, VehicleParams, apply_payload, nominal_vehicle
from .episode import Trace, run_batch
from .protocol import episode_seeds


def nominal_tracking(nets: PolicyNets, meta: dict, episodes: int = 20, seed: int = 0, config: SimConfig = SimConfig(), traj_ranges: TrajectoryRanges = TrajectoryRanges.testing(), ranges: ParamRanges | None = None):
    """Teacher and student on the same references with the nominal vehicle.

    No payload is attached. Returns ``{mode: metrics dict}`` with per-episode
    arrays from :func:`run_batch`.
    """
    params = nominal_vehicle(ranges or ParamRanges.training())
    refs = [sample_reference(np.random.default_rng(s), traj_ranges) for s in episode_seeds(seed, episodes)]
    traj = Trajectory.stack(refs)
    batch = VehicleParams.stack([params] * episodes)
    out = {}
    for mode in ("teacher", "student"):
        out[mode] = run_batch(learned_controller(nets, meta, mode), batch, traj, config)
    return out


@dataclass
class PayloadEvent:
    """Result of a mid-hover payload attachment."""

    event_time: float
    shift: np.ndarray  # relative change per latent component
    flagged: np.ndarray  # indices over the threshold
    max_err_after: float  # largest position error within the recovery horizon
    err_at_horizon: float
    crashed: bool
    trace: Trace
    z_trace: np.ndarray
    low: object

    @property
    def shifted(self) -> bool:
        return len(self.flagged) > 0

    @property
    def recovered(self) -> bool:
        return (not self.crashed) and self.max_err_after < 0.5


def payload_event(
    nets: PolicyNets,
    meta: dict,
    event_time: float = 2.0,
    mass_fraction: float = 0.3,
    offset_fraction: float = 0.3,
    params: VehicleParams | None = None,
    config: SimConfig = SimConfig(),
    window: float = 0.2,
    detect_within: float = 0.5,
    recover_within: float = 2.0,
    threshold: float = 0.10,
    mode: str = "student",
):
    """Hover, attach an off-center payload at ``event_time`` and analyse.

    The payload mass is ``mass_fraction`` of the vehicle mass, placed at
    ``offset_fraction`` of the arm length along body x. The latent shift
    compares the mean over ``window`` seconds before the event with the mean
    over the last ``window`` seconds of the detection interval.
    """
    params = params if params is not None else nominal_vehicle(ParamRanges.training())
    disturbed = apply_payload(params, mass_fraction * params.mass, offset_fraction * params.arm_length)
    t_end = event_time + max(recover_within, detect_within) + 0.1
    config = dataclasses.replace(config, episode_max=t_end)
    ctrl = learned_controller(nets, meta, mode, record=True)
    trace = Trace()
    m = run_batch(ctrl, params, hover_reference(), config, disturbed, event_time, trace)
    dt = config.dt
    # the controller sees step k's observation before step k is simulated
    ev = int(round(event_time / dt))
    w = int(round(window / dt))
    lag = int(round(detect_within / dt)) - w
    z = np.asarray(ctrl.low.z_trace)
    shift = latent_shift(z, ev, w, lag)
    flagged = flag_components(z, ev, w, threshold, lag)
    t = np.asarray(trace.t)
    err = np.linalg.norm(np.asarray(trace.p) - np.asarray(trace.p_ref), axis=-1)
    after = (t > event_time) & (t <= event_time + recover_within + 1e-9)
    horizon = int(np.argmin(np.abs(t - (event_time + recover_within))))
    return PayloadEvent(
        event_time=event_time,
        shift=shift,
        flagged=flagged,
        max_err_after=float(err[after].max()) if after.any() else float("inf"),
        err_at_horizon=float(err[horizon]) if len(err) else float("inf"),
        crashed=str(m["crash_cause"]) not in ("", "tracking"),
        trace=trace,
        z_trace=z,
        low=ctrl.low,
    )
