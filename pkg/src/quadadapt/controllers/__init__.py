"""Classical controller suite and a name-based factory."""
from __future__ import annotations

from .base import (
    RATE_GAIN,
    Cascade,
    ExpertPD,
    HighLevelCommand,
    LowLevel,
    NominalPD,
    PidGains,
    PidHighLevel,
    desired_torque,
    force_to_speed,
    highlevel_pid,
    lowlevel_pd,
    mix,
    tilt_rates,
)
from .geometric import GeoAdaptive, GeoGains
from .indi import IndiAdaptive, IndiConfig, indi_increment, nominal_effectiveness
from .l1 import L1Config, L1HighCascade, L1HighLevel, L1LowLevel

BASELINES = ("pd_star", "pd_n", "l1_low", "l1_high", "geo_a", "indi_a")


def make_controller(name: str, nominal, settings: dict | None = None, dt: float = 0.002, delay: int = 3):
    """Build a full-cascade controller by name.

    ``settings`` may hold per-controller overrides, e.g.
    ``{"l1": {"cutoff": 40}, "geo": {"gamma_f": 1.0}, "indi": {"mu": 1e-4}}``.
    """
    s = settings or {}
    pid = PidGains(**s.get("pid", {}))
    if name == "pd_star":
        return Cascade(ExpertPD(), PidHighLevel(pid))
    if name == "pd_n":
        return Cascade(NominalPD(nominal), PidHighLevel(pid))
    if name == "l1_low":
        cfg = L1Config(**{"level": "low", **s.get("l1", {})})
        return Cascade(L1LowLevel(nominal, cfg, dt, delay), PidHighLevel(pid))
    if name == "l1_high":
        cfg = L1Config(**{**s.get("l1_high", s.get("l1", {})), "level": "high"})
        ctl = L1HighCascade(nominal, cfg, dt, delay)
        ctl.high.gains = pid
        return ctl
    if name == "geo_a":
        return GeoAdaptive(nominal, GeoGains(**s.get("geo", {})), pid, dt=dt)
    if name == "indi_a":
        return Cascade(IndiAdaptive(nominal, IndiConfig(**s.get("indi", {})), dt, delay), PidHighLevel(pid))
    raise ValueError(f"unknown controller {name!r}; choose from {', '.join(BASELINES)} or 'policy'")
