"""Command line entry points.

Four subcommands mirror the workflow: ``collect`` logs expert data,
``train`` fits an agent offline, ``deploy`` runs a checkpoint on the test
season with optional nightly fine-tuning, and ``compare`` produces the
three-controller metrics table. Outputs are deterministic byte for byte
given the same config and seed: no timestamps, repr-formatted floats.

Failures print one line to stderr, ``error: <class>: <detail>``, and exit
nonzero, so scripts can branch on the class without parsing prose.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import pipeline
from .config import RunConfig, config_hash, load_config
from .ddpg import load_agent, save_agent
from .exceptions import RacewayError
from .pipeline import SimSettings


def _settings(cfg: RunConfig, season) -> SimSettings:
    return SimSettings(plant=cfg.plant, season=season,
                       obs_cfg=cfg.observation, ts=cfg.ts)


def _outpath(out_dir: str, name: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    return os.path.join(out_dir, name)


def _fmt(value: float) -> str:
    return repr(float(value))


def cmd_collect(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    days = cfg.collect_days if args.days is None else args.days
    dataset, trace = pipeline.collect_pid_dataset(
        _settings(cfg, cfg.train_season), cfg.pid, days, seed)
    trace.metadata["config"] = config_hash(cfg)
    dataset_path = _outpath(args.out, "dataset.csv")
    trace_path = _outpath(args.out, "trace_collect.csv")
    pipeline.write_dataset(dataset_path, dataset)
    pipeline.write_trace(trace_path, trace)
    print(f"collected {len(dataset)} transitions over {days} day(s) "
          f"at seed {seed}")
    print(f"wrote {dataset_path}")
    print(f"wrote {trace_path}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    dataset = pipeline.read_dataset(args.dataset)
    epochs = args.epochs
    if args.resume:
        agent = load_agent(args.resume)
        from .ddpg import ReplayBuffer, train_epochs

        capacity = agent.config.buffer_capacity or len(dataset)
        buffer = ReplayBuffer(capacity, agent.actor.input_dim,
                              pipeline._stream_rng(seed, 3))
        buffer.extend(dataset)
        n = agent.config.offline_epochs if epochs is None else epochs
        history = train_epochs(agent, buffer, n)
    else:
        agent, history = pipeline.offline_train(
            dataset, cfg.agent, cfg.observation, seed, epochs=epochs)
    ckpt_path = _outpath(args.out, "agent.ckpt")
    hist_path = _outpath(args.out, "training.csv")
    save_agent(ckpt_path, agent)
    pipeline.write_history(hist_path, history)
    ran = len(history.critic_loss)
    print(f"trained {ran} epoch(s) on {len(dataset)} transitions "
          f"at seed {seed}")
    if ran:
        print(f"final critic loss {_fmt(history.critic_loss[-1])}, "
              f"actor objective {_fmt(history.actor_objective[-1])}")
    print(f"wrote {ckpt_path}")
    print(f"wrote {hist_path}")
    return 0


def cmd_deploy(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    days = cfg.test_days if args.days is None else args.days
    agent = load_agent(args.checkpoint)
    dataset = pipeline.read_dataset(args.dataset) if args.dataset else None
    trace, tuned, history = pipeline.deploy(
        agent, _settings(cfg, cfg.test_season), days,
        fine_tune=args.fine_tune, seed=seed, dataset=dataset)
    trace.metadata["config"] = config_hash(cfg)
    trace_path = _outpath(args.out, "trace.csv")
    ckpt_path = _outpath(args.out, "agent_out.ckpt")
    pipeline.write_trace(trace_path, trace)
    save_agent(ckpt_path, tuned)
    row = pipeline.compute_metrics(trace)
    mode = "with nightly fine-tuning" if args.fine_tune else "frozen"
    print(f"deployed {row.controller} {mode} for {days} day(s) "
          f"at seed {seed}")
    print(f"iae {_fmt(row.iae)}  cce {_fmt(row.cce)}")
    if history.critic_loss:
        print(f"fine-tune epochs run: {len(history.critic_loss)}")
    print(f"wrote {trace_path}")
    print(f"wrote {ckpt_path}")
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    result = pipeline.compare_experiment(
        cfg.plant, cfg.train_season, cfg.test_season, cfg.pid,
        cfg.observation, cfg.agent, seed,
        collect_days=cfg.collect_days, test_days=cfg.test_days, ts=cfg.ts)
    metrics_path = _outpath(args.out, "metrics.csv")
    pipeline.write_metrics(metrics_path, result.rows)
    for name, trace in result.traces.items():
        trace.metadata["config"] = config_hash(cfg)
        tag = name.lower().replace("-", "_")
        pipeline.write_trace(_outpath(args.out, f"trace_{tag}.csv"), trace)
    print(f"seed {seed}, {result.dataset_size} expert transitions")
    print("controller  iae  cce")
    for row in result.rows:
        print(f"{row.controller}  {_fmt(row.iae)}  {_fmt(row.cce)}")
    print(f"wrote {metrics_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="raceway",
        description="pH control experiments on a raceway pond simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True,
                       help="YAML run configuration")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", default=".",
                       help="directory for output files")

    p = sub.add_parser("collect", help="log expert controller transitions")
    common(p)
    p.add_argument("--days", type=int, default=None,
                   help="override collect_days")
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("train", help="train an agent on a logged dataset")
    common(p)
    p.add_argument("--dataset", required=True, help="transition CSV file")
    p.add_argument("--epochs", type=int, default=None,
                   help="override offline_epochs")
    p.add_argument("--resume", default=None,
                   help="continue from an agent checkpoint, optimizer "
                        "state included")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("deploy", help="run a trained agent on the test season")
    common(p)
    p.add_argument("--checkpoint", required=True, help="agent checkpoint")
    p.add_argument("--days", type=int, default=None,
                   help="override test_days")
    p.add_argument("--fine-tune", action="store_true",
                   help="run nightly training at each day boundary")
    p.add_argument("--dataset", default=None,
                   help="seed the rolling buffer from this transition file")
    p.set_defaults(func=cmd_deploy)

    p = sub.add_parser("compare", help="expert vs frozen vs fine-tuned study")
    common(p)
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except RacewayError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: file-not-found: {exc.filename}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
