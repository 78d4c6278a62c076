"""Command-line entry point (``quadadapt``)."""
from __future__ import annotations

import functools
from pathlib import Path

import click
import numpy as np

from ..learning.train import phase1_train, phase2_train, tail_episode_length
from ..nn import PolicyNets
from ..policy_runtime import policy_factory, write_latent_trace
from ..vehicle import nominal_vehicle
from .ablation import ablation_suite
from .config import (
    ConfigError,
    config_hash,
    load_config,
    param_ranges,
    phase1_config,
    phase2_config,
    sim_config,
    trajectory_ranges,
)
from .episode import Trace
from .evaluation import nominal_tracking, payload_event
from .io import write_json, write_rows
from .protocol import SweepSpec, benchmark, build_controller, delta_sweep, draw_episode, run_draws


def _split(value, cast=str):
    if value is None:
        return None
    return [cast(v.strip()) for v in value.split(",") if v.strip()]


def common(f):
    """Flags shared by every subcommand."""

    @click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="YAML file overriding the defaults.")
    @click.option("--seed", type=int, help="Base seed (overrides the config).")
    @click.option("--out", "out_dir", type=click.Path(file_okay=False), default="runs", show_default=True, help="Output directory.")
    @functools.wraps(f)
    def wrapper(config_path, seed, out_dir, **kw):
        try:
            cfg = load_config(config_path, {"seed": seed} if seed is not None else None)
        except ConfigError as exc:
            raise click.UsageError(str(exc)) from exc
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        return f(cfg, out, **kw)

    return wrapper


def _rows(results, cfg):
    return [dict(r.row(), config_hash=config_hash(cfg)) for r in results]


def _print_summary(summary):
    cols = ("success_rate", "max_pos_err_mean", "pos_rmse_mean", "vel_rmse_mean")
    click.echo(f"{'controller':<16}" + "".join(f"{c:>18}" for c in cols))
    for name, agg in summary.items():
        click.echo(f"{name:<16}" + "".join(f"{agg[c]:>18.4f}" for c in cols))


def _checkpoint(cfg, checkpoint):
    path = checkpoint or cfg["policy"]["checkpoint"]
    if not path:
        raise click.UsageError("a checkpoint is needed (--checkpoint or policy.checkpoint in the config)")
    return PolicyNets.load(path)


def _policies(cfg, names, checkpoint):
    """Builders for any learned controllers named in ``names``."""
    wanted = [n for n in names if n.startswith("policy")]
    if not wanted:
        return None
    nets, meta = _checkpoint(cfg, checkpoint)
    out = {}
    for n in wanted:
        mode = {"policy": cfg["policy"]["mode"], "policy_student": "student", "policy_teacher": "teacher"}.get(n)
        if mode is None:
            raise click.UsageError(f"unknown learned controller {n!r}; use policy, policy_student or policy_teacher")
        out[n] = policy_factory(nets, meta, mode, high_every=10)
    return out


@click.group()
def main():
    """Quadrotor adaptive low-level control benchmark."""


@main.command()
@common
@click.option("--controller", help="Controller name.")
@click.option("--delta", type=float, help="Half-width of the size-factor interval around 0.5.")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), help="Checkpoint for learned controllers.")
def simulate(cfg, out, controller, delta, checkpoint):
    """Run one seeded episode and write its per-step trace."""
    name = (_split(controller) or [cfg["simulate"]["controller"]])[0]
    delta = cfg["simulate"]["delta"] if delta is None else delta
    sim = sim_config(cfg)
    spec = SweepSpec(c_floor=cfg["sweep"]["c_floor"])
    draw = draw_episode(
        cfg["seed"],
        ranges=param_ranges(cfg, "sweep"),
        c_range=spec.c_range(delta),
        traj_ranges=trajectory_ranges(cfg, "benchmark"),
        config=sim,
        max_hover_margin=cfg["feasibility"]["max_hover_margin"],
    )
    ctl = build_controller(name, nominal_vehicle(param_ranges(cfg, "sweep")), cfg["controllers"], sim, _policies(cfg, [name], checkpoint))
    trace = Trace()
    (res,) = run_draws(ctl, [draw], sim, trace=trace)
    res.controller, res.delta = name, float(delta)
    trace.write_csv(out / "trace.csv", index=0)
    write_rows(out / "episode.csv", _rows([res], cfg))
    write_json(out / "summary.json", {"config_hash": config_hash(cfg), "result": res.row()})
    click.echo(f"{name}: success={res.success} max_pos_err={res.max_pos_err:.4f} pos_rmse={res.pos_rmse:.4f}")


@main.command("benchmark")
@common
@click.option("--episodes", type=int, help="Episodes per controller.")
@click.option("--controller", help="Comma-separated controller names.")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), help="Checkpoint for learned controllers.")
def benchmark_cmd(cfg, out, episodes, controller, checkpoint):
    """Seeded comparison on the testing ranges."""
    names = _split(controller) or cfg["benchmark"]["controllers"]
    n = cfg["benchmark"]["episodes"] if episodes is None else episodes
    rows, summary = benchmark(
        names,
        ranges=param_ranges(cfg, "benchmark"),
        episodes=n,
        seed=cfg["seed"],
        config=sim_config(cfg),
        settings=cfg["controllers"],
        traj_ranges=trajectory_ranges(cfg, "benchmark"),
        max_hover_margin=cfg["feasibility"]["max_hover_margin"],
        policies=_policies(cfg, names, checkpoint),
    )
    write_rows(out / "episodes.csv", _rows(rows, cfg))
    write_rows(out / "summary.csv", [{"controller": k, **{a: b for a, b in v.items() if a != "failures"}} for k, v in summary.items()])
    write_json(out / "summary.json", {"config_hash": config_hash(cfg), "seed": cfg["seed"], "controllers": summary})
    _print_summary(summary)


@main.command()
@common
@click.option("--episodes", type=int, help="Episodes per interval and controller.")
@click.option("--delta", help="Comma-separated interval half-widths.")
@click.option("--controller", help="Comma-separated controller names.")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), help="Checkpoint for learned controllers.")
def sweep(cfg, out, episodes, delta, controller, checkpoint):
    """Success rate and errors as the size-factor interval widens."""
    names = _split(controller) or cfg["sweep"]["controllers"]
    spec = SweepSpec(
        deltas=_split(delta, float) or cfg["sweep"]["deltas"],
        episodes=cfg["sweep"]["episodes"] if episodes is None else episodes,
        controllers=tuple(names),
        seed=cfg["seed"],
        c_floor=cfg["sweep"]["c_floor"],
    )
    rows, curves = delta_sweep(
        spec,
        ranges=param_ranges(cfg, "sweep"),
        config=sim_config(cfg),
        settings=cfg["controllers"],
        traj_ranges=trajectory_ranges(cfg, "benchmark"),
        max_hover_margin=cfg["feasibility"]["max_hover_margin"],
        policies=_policies(cfg, names, checkpoint),
    )
    write_rows(out / "episodes.csv", _rows(rows, cfg))
    flat = [
        {"controller": k, **{a: b for a, b in pt.items() if a != "failures"}}
        for k, pts in curves.items()
        for pt in pts
    ]
    write_rows(out / "curves.csv", flat)
    write_json(out / "summary.json", {"config_hash": config_hash(cfg), "seed": cfg["seed"], "curves": curves})
    for k, pts in curves.items():
        click.echo(f"{k:<16}" + " ".join(f"{p['delta']:g}:{p['success_rate']:.2f}" for p in pts))


def _echo_epoch(row):
    if row["epoch"] % 10 == 0:
        click.echo(
            f"epoch {row['epoch']:5d} steps {row['steps']:9d} alpha {row['alpha']:.3f} "
            f"reward {row['reward']:+.4f} length {row['episode_length']:.3f}"
        )


@main.command("train-phase1")
@common
@click.option("--mode", type=click.Choice(["il_rl", "rl", "il"]), help="Training objective.")
@click.option("--steps", type=int, help="Environment step budget.")
@click.option("--delta", type=float, help="Half-width of the training size-factor interval.")
def train_phase1(cfg, out, mode, steps, delta):
    """Train base policy, value function and encoder."""
    changes = {k: v for k, v in {"mode": mode, "total_steps": steps, "delta": delta}.items() if v is not None}
    p1 = phase1_config(cfg, **changes)
    nets, curves = phase1_train(p1, param_ranges(cfg, "learning"), sim_config(cfg), trajectory_ranges(cfg, "learning"), log=_echo_epoch)
    nets.meta["config_hash"] = config_hash(cfg)
    nets.save(out / "phase1.npz", nets.meta)
    write_rows(out / "curves.csv", curves)
    tail = tail_episode_length(curves)
    write_json(out / "summary.json", {"config_hash": config_hash(cfg), "mode": p1.mode, "steps": curves[-1]["steps"] if curves else 0, "tail_episode_length": tail})
    click.echo(f"tail normalized episode length: {tail:.4f}")


@main.command("train-phase2")
@common
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), help="Phase-1 checkpoint.")
def train_phase2(cfg, out, checkpoint):
    """Fit the adaptation module to a frozen Phase-1 encoder."""
    nets, meta = _checkpoint(cfg, checkpoint)
    nets.meta = meta
    p2 = phase2_config(cfg)

    def log(row):
        click.echo(f"iteration {row['iteration']} val_mse {row['val_mse']:.5f} zero {row['val_zero_mse']:.5f} ratio {row['val_ratio']:.3f}")

    nets, curves = phase2_train(nets, p2, param_ranges(cfg, "learning"), sim_config(cfg), trajectory_ranges(cfg, "learning"), log=log)
    nets.meta["config_hash"] = config_hash(cfg)
    nets.save(out / "phase2.npz", nets.meta)
    write_rows(out / "curves.csv", [{k: v for k, v in r.items() if k != "seconds"} for r in curves])
    write_json(out / "summary.json", {"config_hash": config_hash(cfg), "final": {k: v for k, v in curves[-1].items() if k != "seconds"}})


@main.command("eval-policy")
@common
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), help="Phase-2 checkpoint.")
@click.option("--episodes", type=int, help="Episodes for the comparison.")
@click.option("--delta", type=float, help="Half-width of the evaluation size-factor interval.")
@click.option("--controller", help="Comma-separated baselines to include.")
def eval_policy(cfg, out, checkpoint, episodes, delta, controller):
    """Student/teacher comparison, nominal tracking and a payload-event latent trace."""
    nets, meta = _checkpoint(cfg, checkpoint)
    ev = cfg["eval_policy"]
    sim = sim_config(cfg)
    n = ev["episodes"] if episodes is None else episodes
    d = ev["delta"] if delta is None else delta
    names = ["policy_student", "policy_teacher"] + (_split(controller) or ev["controllers"])
    policies = {"policy_student": policy_factory(nets, meta, "student"), "policy_teacher": policy_factory(nets, meta, "teacher")}
    spec = SweepSpec(deltas=[d], episodes=n, controllers=tuple(names), seed=cfg["seed"], c_floor=cfg["sweep"]["c_floor"])
    rows, curves = delta_sweep(
        spec,
        ranges=param_ranges(cfg, "sweep"),
        config=sim,
        settings=cfg["controllers"],
        traj_ranges=trajectory_ranges(cfg, "benchmark"),
        max_hover_margin=cfg["feasibility"]["max_hover_margin"],
        policies=policies,
    )
    write_rows(out / "episodes.csv", _rows(rows, cfg))
    track = nominal_tracking(nets, meta, episodes=min(n, 20) or 1, seed=cfg["seed"], config=sim)
    tracking = {m: {"pos_rmse": float(np.mean(r["pos_rmse"])), "success_rate": float(np.mean(r["success"]))} for m, r in track.items()}
    event = payload_event(nets, meta, ev["payload_time"], ev["payload_mass_fraction"], ev["payload_offset"], config=sim)
    write_latent_trace(out / "latent_trace.csv", event.low, sim.dt)
    event.trace.write_csv(out / "payload_trace.csv")
    summary = {
        "config_hash": config_hash(cfg),
        "delta": d,
        "controllers": {k: v[0] for k, v in curves.items()},
        "nominal_tracking": tracking,
        "payload_event": {
            "latent_shift": event.shift.tolist(),
            "flagged_components": event.flagged.tolist(),
            "max_pos_err_after": event.max_err_after,
            "pos_err_at_horizon": event.err_at_horizon,
            "crashed": event.crashed,
        },
    }
    write_json(out / "summary.json", summary)
    _print_summary({k: v[0] for k, v in curves.items()})
    click.echo(f"nominal pos RMSE teacher {tracking['teacher']['pos_rmse']:.4f} student {tracking['student']['pos_rmse']:.4f}")
    click.echo(f"payload event: flagged z components {event.flagged.tolist()}, max error after {event.max_err_after:.3f} m")


@main.command()
@common
@click.option("--episodes", type=int, help="Evaluation episodes per interval and variant.")
@click.option("--delta", help="Comma-separated evaluation interval half-widths.")
@click.option("--steps", type=int, help="Training budget per variant.")
@click.option("--controller", help="Comma-separated variants (il_rl, rl, il, e2e).")
def ablate(cfg, out, episodes, delta, steps, controller):
    """Train and compare the training-method variants."""
    ab = cfg["ablation"]
    base = phase1_config(cfg, total_steps=ab["total_steps"] if steps is None else steps)
    variants = _split(controller) or ab["variants"]
    rows, curves, training = ablation_suite(
        base,
        variants=variants,
        deltas=_split(delta, float) or ab["deltas"],
        episodes=ab["episodes"] if episodes is None else episodes,
        sim_config=sim_config(cfg),
        train_ranges=param_ranges(cfg, "learning"),
        eval_ranges=param_ranges(cfg, "sweep"),
        train_traj=trajectory_ranges(cfg, "learning"),
        eval_traj=trajectory_ranges(cfg, "benchmark"),
        log=_echo_epoch,
    )
    write_rows(out / "episodes.csv", _rows(rows, cfg))
    write_rows(out / "curves.csv", [{"variant": k, **{a: b for a, b in pt.items() if a != "failures"}} for k, pts in curves.items() for pt in pts])
    for v, info in training.items():
        write_rows(out / f"train_{v}.csv", info["curves"])
        info["nets"].save(out / f"{v}.npz", info["nets"].meta)
    write_json(
        out / "summary.json",
        {
            "config_hash": config_hash(cfg),
            "tail_episode_length": {v: info["tail_episode_length"] for v, info in training.items()},
            "curves": curves,
        },
    )
    for k, pts in curves.items():
        click.echo(f"{k:<8} tail {training[k]['tail_episode_length']:.3f} " + " ".join(f"{p['delta']:g}:{p['success_rate']:.2f}" for p in pts))


if __name__ == "__main__":
    main()
