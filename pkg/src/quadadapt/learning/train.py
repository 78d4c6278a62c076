"""Phase 1 (policy + encoder, blended IL/RL) and Phase 2 (adaptation module)."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from ..harness.protocol import C_FLOOR
from ..nn import Adam, PolicyNets, sigmoid
from ..policy_runtime import Normalization, StateActionHistory, encode, estimate_latent, policy_action
from ..sim import SimConfig
from ..trajectory import TrajectoryRanges
from ..vehicle import EnvNormalizer, ParamRanges
from .env import FlightEnv, state_constants
from .ppo import Learner, NonFiniteLoss, PpoConfig, RunningStat, gae, gaussian_logp
from .reward import TERMS, RewardWeights, blend_alpha

MODES = ("il_rl", "rl", "il")


@dataclass
class Phase1Config:
    total_steps: int = 2_000_000
    n_envs: int = 128
    delta: float = 0.1
    mode: str = "il_rl"
    seed: int = 0
    log_std_init: float = -1.0
    end_to_end: bool = False
    ppo: PpoConfig = field(default_factory=PpoConfig)
    weights: RewardWeights = field(default_factory=RewardWeights)
    # reward terms left out of the logged "comparable" reward
    compare_exclude: tuple = ()

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    def c_range(self):
        return (max(0.5 - self.delta, C_FLOOR), 0.5 + self.delta)


def alpha_for(mode: str, epoch: int) -> float:
    if mode == "il":
        return 1.0
    if mode == "rl":
        return 0.0
    return float(blend_alpha(epoch))


def checkpoint_meta(normalizer: EnvNormalizer, extra: dict | None = None, end_to_end: bool = False) -> dict:
    center, scale = state_constants(end_to_end)
    return {
        "env_center": normalizer.center.tolist(),
        "env_half_width": normalizer.half_width.tolist(),
        "state_center": center.tolist(),
        "state_scale": scale.tolist(),
        "end_to_end": end_to_end,
        **(extra or {}),
    }


def phase1_train(
    cfg: Phase1Config,
    ranges: ParamRanges | None = None,
    sim_config: SimConfig = SimConfig(),
    traj_ranges: TrajectoryRanges = TrajectoryRanges.training(),
    log=None,
):
    """Train policy, value and encoder; returns ``(nets, curves)``.

    ``curves`` has one row per epoch with the step count, blend weight,
    mean per-step reward and per-term sums, the normalized length of the
    episodes that ended during the epoch and the optimizer losses.
    """
    ranges = ranges or ParamRanges.training()
    normalizer = EnvNormalizer.from_ranges(ParamRanges.training())
    center, _ = state_constants(cfg.end_to_end)
    nets = PolicyNets(seed=cfg.seed, policy_input=len(center))
    nets.log_std[...] = cfg.log_std_init
    learner = Learner(nets, cfg.ppo)
    env = FlightEnv(
        cfg.n_envs, ranges, cfg.c_range(), traj_ranges, sim_config, seed=cfg.seed, weights=cfg.weights,
        normalizer=normalizer, end_to_end=cfg.end_to_end,
    )
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    ret_stat = RunningStat()
    disc_ret = np.zeros(cfg.n_envs)
    T, N = cfg.ppo.rollout, cfg.n_envs
    steps, epoch = 0, 0
    curves = []
    obs = env.observe()
    while steps + T * N <= cfg.total_steps:  # whole epochs within the budget
        buf = {k: [] for k in ("x_norm", "e_norm", "u", "logp", "expert", "value", "reward", "done", "trunc")}
        term_sums = {k: 0.0 for k in TERMS}
        ended = []
        raw_reward = 0.0
        compare_reward = 0.0
        for _ in range(T):
            mu, v, u = learner.act(obs["x_norm"], obs["e_norm"], rng)
            r, done, trunc, info = env.step(sigmoid(u), obs["cmd"])
            buf["x_norm"].append(obs["x_norm"])
            buf["e_norm"].append(obs["e_norm"])
            buf["u"].append(u)
            buf["logp"].append(gaussian_logp(u, mu, nets.log_std))
            buf["expert"].append(obs["expert"])
            buf["value"].append(v)
            disc_ret = disc_ret * cfg.ppo.gamma + r
            ret_stat.update(disc_ret)
            disc_ret = np.where(done, 0.0, disc_ret)
            buf["reward"].append(r)
            buf["done"].append(done)
            buf["trunc"].append(trunc)
            for k in TERMS:
                term_sums[k] += float(np.sum(info["terms"][k]))
            raw_reward += float(np.sum(r))
            compare_reward += float(
                np.sum(sum(getattr(cfg.weights, k) * info["terms"][k] for k in TERMS if k not in cfg.compare_exclude))
            )
            if "ended_lengths" in info:
                ended.extend(info["ended_lengths"].tolist())
            obs = env.observe()
        _, last_v, _ = learner.act(obs["x_norm"], obs["e_norm"])
        arr = {k: np.array(v) for k, v in buf.items()}
        scale = max(ret_stat.std, 1e-8)
        adv, ret = gae(arr["reward"] / scale, arr["value"], arr["done"], arr["trunc"], last_v, cfg.ppo.gamma, cfg.ppo.gae_lambda)
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        flat = lambda a: a.reshape((T * N,) + a.shape[2:])  # noqa: E731
        batch = {
            "x_norm": flat(arr["x_norm"]),
            "e_norm": flat(arr["e_norm"]),
            "u": flat(arr["u"]),
            "logp": flat(arr["logp"]),
            "expert": flat(arr["expert"]),
            "adv": flat(adv),
            "ret": flat(ret),
        }
        alpha = alpha_for(cfg.mode, epoch)
        stats = learner.update(batch, alpha, rng)
        if not all(np.isfinite(list(stats.values()))):
            raise NonFiniteLoss(f"non-finite statistics at epoch {epoch}: {stats}")
        steps += T * N
        epoch += 1
        row = {
            "epoch": epoch,
            "steps": steps,
            "alpha": alpha,
            "reward": raw_reward / (T * N),
            "comparable_reward": compare_reward / (T * N),
            **{f"reward_{k}": term_sums[k] / (T * N) for k in TERMS},
            "episodes_ended": len(ended),
            "episode_length": float(np.mean(ended)) if ended else float("nan"),
            "log_std": float(np.mean(nets.log_std)),
            **stats,
        }
        curves.append(row)
        if log is not None:
            log(row)
    extra = {"phase": 1, "mode": cfg.mode, "delta": cfg.delta, "seed": cfg.seed}
    nets.meta = checkpoint_meta(normalizer, extra, cfg.end_to_end)
    return nets, curves


@dataclass
class Phase2Config:
    iterations: int = 12
    n_envs: int = 64
    rollout_steps: int = 1000
    sample_every: int = 4
    epochs: int = 2
    batch: int = 256
    lr: float = 1e-3
    dataset_max: int = 60_000
    delta: float = 0.1
    seed: int = 0
    val_envs: int = 32
    val_steps: int = 1000

    def c_range(self):
        return (max(0.5 - self.delta, C_FLOOR), 0.5 + self.delta)


def _student_rollout(nets, env, steps, sample_every, teacher=False):
    """Roll out the policy, driven by phi (or mu when ``teacher``).

    Returns windows (float32), true latents and the number of crashes.
    """
    hist = StateActionHistory((env.n,), nets.arch["history"], nets.arch["policy_input"])
    windows, targets = [], []
    crashes = 0
    obs = env.observe()
    for k in range(steps):
        z_true = encode(nets, obs["e_norm"])
        window = hist.window()
        z = z_true if teacher else estimate_latent(nets, window)
        a = policy_action(nets, obs["x_norm"], z)
        if k % sample_every == 0:
            windows.append(window.astype(np.float32))
            targets.append(z_true)
        hist.push(obs["x_norm"], a)
        _, _, _, info = env.step(a, obs["cmd"])
        crashes += int(np.sum(info["crashed"]))
        if "ended_idx" in info:
            hist.clear(info["ended_idx"])
        obs = env.observe()
    return np.concatenate(windows), np.concatenate(targets), crashes


def latent_errors(nets, windows, targets, batch: int = 512):
    """``(mse, zero_predictor_mse)`` of phi on a dataset."""
    err = 0.0
    for i in range(0, len(windows), batch):
        pred = estimate_latent(nets, windows[i : i + batch].astype(float))
        err += float(np.sum((pred - targets[i : i + batch]) ** 2))
    n = targets.size
    return err / n, float(np.mean(targets**2))


def phase2_train(
    nets: PolicyNets,
    cfg: Phase2Config = Phase2Config(),
    ranges: ParamRanges | None = None,
    sim_config: SimConfig = SimConfig(),
    traj_ranges: TrajectoryRanges = TrajectoryRanges.training(),
    log=None,
):
    """Fit the adaptation module to the frozen encoder; returns ``(nets, curves)``.

    Data are gathered on-policy: the first iteration is driven by the
    teacher latent, later ones by the module's own estimate. Each iteration
    adds to a bounded dataset, fits phi by Adam on the latent MSE and then
    scores it on fresh held-out vehicles against the zero predictor.
    """
    ranges = ranges or ParamRanges.training()
    meta = dict(nets.meta)
    norm = Normalization(meta)
    e2e = bool(meta.get("end_to_end", False))
    mk = lambda n, s: FlightEnv(n, ranges, cfg.c_range(), traj_ranges, sim_config, seed=s, normalizer=norm.env, end_to_end=e2e)  # noqa: E731
    seeds = np.random.SeedSequence([cfg.seed, 2]).generate_state(2)
    env = mk(cfg.n_envs, int(seeds[0]))
    val_env = mk(cfg.val_envs, int(seeds[1]))
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3]))
    phi = nets.adaptation
    opt = Adam(phi.params, lr=cfg.lr)
    data_w, data_z = None, None
    curves = []
    t0 = time.time()
    for it in range(cfg.iterations):
        w, z, crashes = _student_rollout(nets, env, cfg.rollout_steps, cfg.sample_every, teacher=(it == 0))
        if data_w is None:
            data_w, data_z = w, z
        else:
            data_w, data_z = np.concatenate([data_w, w]), np.concatenate([data_z, z])
        if len(data_w) > cfg.dataset_max:
            keep = rng.choice(len(data_w), cfg.dataset_max, replace=False)
            keep.sort()
            data_w, data_z = data_w[keep], data_z[keep]
        losses = []
        for _ in range(cfg.epochs):
            order = rng.permutation(len(data_w))
            for i in range(0, len(order), cfg.batch):
                idx = order[i : i + cfg.batch]
                phi.zero_grad()
                pred = phi.forward(data_w[idx].astype(float))
                diff = pred - data_z[idx]
                losses.append(float(np.mean(diff**2)))
                if not np.isfinite(losses[-1]):
                    raise NonFiniteLoss(f"non-finite adaptation loss at iteration {it}")
                phi.backward(2.0 * diff / diff.size)
                opt.step(phi.grads)
        vw, vz, val_crashes = _student_rollout(nets, val_env, cfg.val_steps, cfg.sample_every)
        mse, zero = latent_errors(nets, vw, vz)
        row = {
            "iteration": it + 1,
            "samples": len(data_w),
            "train_loss": float(np.mean(losses)),
            "val_mse": mse,
            "val_zero_mse": zero,
            "val_ratio": mse / zero if zero > 0 else float("nan"),
            "rollout_crashes": crashes,
            "val_crashes": val_crashes,
            "seconds": time.time() - t0,
        }
        curves.append(row)
        if log is not None:
            log(row)
    nets.meta = {**meta, "phase": 2, "phase2_seed": cfg.seed}
    return nets, curves


def tail_episode_length(curves, fraction: float = 0.1):
    """Mean normalized episode length over episodes ending in the last ``fraction`` of steps."""
    if not curves:
        return float("nan")
    total = curves[-1]["steps"]
    cut = total * (1.0 - fraction)
    num = sum(r["episode_length"] * r["episodes_ended"] for r in curves if r["steps"] > cut and r["episodes_ended"])
    den = sum(r["episodes_ended"] for r in curves if r["steps"] > cut)
    return num / den if den else float("nan")


def write_curves(path, rows):
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.9g}" if isinstance(v, float) else v) for k, v in r.items()})
