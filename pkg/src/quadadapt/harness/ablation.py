"""Training-method ablation: IL+RL against RL-only, IL-only and end-to-end.

Every variant is trained with the same seed and step budget and evaluated
on the same seeded episodes across a set of size-factor intervals. The
learned variants are evaluated through the privileged encoder (teacher
path), which isolates the effect of the training method from the
adaptation module.
"""
from __future__ import annotations

import dataclasses

from ..learning.train import Phase1Config, phase1_train, tail_episode_length
from ..policy_runtime import policy_factory
from ..sim import SimConfig
from ..trajectory import TrajectoryRanges
from ..vehicle import ParamRanges
from .protocol import SweepSpec, delta_sweep

VARIANTS = ("il_rl", "rl", "il", "e2e")


def train_variant(base: Phase1Config, variant: str, ranges=None, sim_config=SimConfig(), traj_ranges=TrajectoryRanges.training(), log=None):
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    cfg = dataclasses.replace(base, mode="il_rl" if variant == "e2e" else variant, end_to_end=variant == "e2e")
    return phase1_train(cfg, ranges, sim_config, traj_ranges, log)


def ablation_suite(
    base: Phase1Config,
    variants=VARIANTS,
    deltas=(0.1, 0.5, 1.0),
    episodes: int = 50,
    sim_config: SimConfig = SimConfig(),
    train_ranges: ParamRanges | None = None,
    eval_ranges: ParamRanges | None = None,
    train_traj: TrajectoryRanges = TrajectoryRanges.training(),
    eval_traj: TrajectoryRanges = TrajectoryRanges.testing(),
    log=None,
):
    """Returns ``(rows, curves, training)``.

    ``rows`` and ``curves`` come from the size-factor sweep over the trained
    variants; ``training`` maps each variant to its curves, tail episode
    length and trained networks.
    """
    training, policies = {}, {}
    for v in variants:
        nets, curves = train_variant(base, v, train_ranges, sim_config, train_traj, log)
        training[v] = {"curves": curves, "tail_episode_length": tail_episode_length(curves), "nets": nets}
        policies[v] = policy_factory(nets, nets.meta, "teacher")
    spec = SweepSpec(deltas=list(deltas), episodes=episodes, controllers=tuple(variants), seed=base.seed)
    rows, curves = delta_sweep(spec, eval_ranges, sim_config, traj_ranges=eval_traj, policies=policies)
    return rows, curves, training
