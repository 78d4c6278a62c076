"""Closed-loop episode execution and per-episode metrics."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field

import numpy as np

from ..sim import SimConfig, Simulator, SimState, Status, specific_thrust
from ..vehicle import VehicleParams

SUCCESS_RADIUS = 2.0


@dataclass
class EpisodeResult:
    success: bool
    max_pos_err: float
    pos_rmse: float
    vel_rmse: float
    thrust_rmse: float
    angvel_rmse: float
    crash_cause: str
    duration: float
    seed: int = -1
    delta: float = float("nan")
    controller: str = ""
    vehicle: dict = field(default_factory=dict)

    def row(self) -> dict:
        out = asdict(self)
        vehicle = out.pop("vehicle")
        out.update({f"vehicle_{k}": v for k, v in vehicle.items()})
        return out


@dataclass
class Trace:
    """Per-step arrays of a batch run, shaped ``(steps, batch, ...)``."""

    t: list = field(default_factory=list)
    p: list = field(default_factory=list)
    v: list = field(default_factory=list)
    q: list = field(default_factory=list)
    omega: list = field(default_factory=list)
    motor_speed: list = field(default_factory=list)
    command: list = field(default_factory=list)
    c_sigma_des: list = field(default_factory=list)
    omega_des: list = field(default_factory=list)
    p_ref: list = field(default_factory=list)

    def append(self, state: SimState, cmd_speed, hl, p_ref):
        self.t.append(state.t.copy())
        self.p.append(state.p.copy())
        self.v.append(state.v.copy())
        self.q.append(state.q.copy())
        self.omega.append(state.omega.copy())
        self.motor_speed.append(state.motor_speed.copy())
        self.command.append(np.array(cmd_speed, copy=True))
        self.c_sigma_des.append(np.array(hl.c_sigma_des, copy=True))
        self.omega_des.append(np.array(hl.omega_des, copy=True))
        self.p_ref.append(np.array(p_ref, copy=True))

    def write_csv(self, path, index: int | None = None):
        """Write one episode of the trace (``index`` into the batch, if batched)."""
        pick = (lambda a: a) if index is None else (lambda a: a[index])
        header = (
            ["t"]
            + [f"p{a}" for a in "xyz"]
            + [f"v{a}" for a in "xyz"]
            + [f"q{a}" for a in "wxyz"]
            + [f"omega{a}" for a in "xyz"]
            + [f"motor{i}" for i in range(4)]
            + [f"cmd{i}" for i in range(4)]
            + ["c_sigma_des"]
            + [f"omega_des{a}" for a in "xyz"]
            + [f"pref{a}" for a in "xyz"]
        )
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k in range(len(self.t)):
                vals = [pick(self.t[k])]
                for arr in (self.p, self.v, self.q, self.omega, self.motor_speed, self.command):
                    vals.extend(np.ravel(pick(arr[k])))
                vals.append(pick(self.c_sigma_des[k]))
                vals.extend(np.ravel(pick(self.omega_des[k])))
                vals.extend(np.ravel(pick(self.p_ref[k])))
                w.writerow([f"{float(x):.9g}" for x in vals])


def run_batch(
    controller,
    params: VehicleParams,
    trajectory,
    config: SimConfig = SimConfig(),
    disturbed: VehicleParams | None = None,
    disturbance_time=None,
    trace: Trace | None = None,
    initial_state: SimState | None = None,
):
    """Run a batch of episodes in lockstep; returns a dict of metric arrays.

    ``trajectory`` is any object with ``evaluate(t) -> (p, v, a)`` that
    broadcasts against the batch.
    """
    batch = params.batch_shape
    sim = Simulator(params, config, state=initial_state, disturbed=disturbed, disturbance_time=disturbance_time)
    controller.reset(batch)
    n = config.max_steps
    sq_pos = np.zeros(batch)
    sq_vel = np.zeros(batch)
    sq_thr = np.zeros(batch)
    sq_ang = np.zeros(batch)
    max_err = np.zeros(batch)
    count = np.zeros(batch)
    for _ in range(n):
        active = sim.active
        if not np.any(active):
            break
        obs = sim.observe()
        t = sim.state.t
        ref = trajectory.evaluate(t)
        with np.errstate(all="ignore"):
            cmd_speed = controller(obs, ref, sim.params)
        hl = controller.cmd
        state = sim.step(cmd_speed)
        p_ref, v_ref, _ = trajectory.evaluate(state.t)
        if trace is not None:
            trace.append(state, cmd_speed, hl, p_ref)
        with np.errstate(all="ignore"):
            e_p = np.linalg.norm(state.p - p_ref, axis=-1)
            e_v = np.linalg.norm(state.v - v_ref, axis=-1)
            e_c = specific_thrust(state.motor_speed, sim.params) - hl.c_sigma_des
            e_w = state.omega - hl.omega_des
        e_p = np.where(np.isfinite(e_p), e_p, np.inf)
        sq_pos += np.where(active, e_p**2, 0.0)
        sq_vel += np.where(active, e_v**2, 0.0)
        sq_thr += np.where(active, e_c**2, 0.0)
        sq_ang += np.where(active, np.mean(e_w**2, axis=-1), 0.0)
        max_err = np.where(active, np.maximum(max_err, e_p), max_err)
        count += active
    count = np.maximum(count, 1)
    crashed = sim.status == int(Status.CRASHED)
    with np.errstate(invalid="ignore"):
        height_loss = (sim.start_height - sim.state.p[..., 2]) > config.height_loss_limit
        rate = np.max(np.abs(sim.state.omega), -1) > config.body_rate_limit
    cause = np.where(
        ~crashed,
        np.where(max_err > SUCCESS_RADIUS, "tracking", ""),
        np.where(rate, "body_rate", np.where(height_loss, "height_loss", "diverged")),
    )
    return {
        "success": ~crashed & (max_err <= SUCCESS_RADIUS),
        "max_pos_err": max_err,
        "pos_rmse": np.sqrt(sq_pos / count),
        "vel_rmse": np.sqrt(sq_vel / count),
        "thrust_rmse": np.sqrt(sq_thr / count),
        "angvel_rmse": np.sqrt(sq_ang / count),
        "crash_cause": cause,
        "duration": count * config.dt,
    }
