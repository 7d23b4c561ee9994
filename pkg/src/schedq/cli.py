"""Command-line pipeline: gen-env -> collect -> train -> evaluate -> report.

Every subcommand writes its outputs plus one ``manifest.json`` into ``--out``.
The manifest records the fully resolved options, so ``schedq rerun MANIFEST``
repeats the stage exactly.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

from . import __version__, kernels
from . import env as E
from . import nn
from . import qlearn as Q
from .baseline import greedy_action
from .errors import CheckpointFormatError, ConfigError, OracleInfeasibleError, TrainingDivergedError
from .evaluation import EvalReport, build_report, report_files

log = logging.getLogger("schedq")

MANIFEST = "manifest.json"


def write_atomic(path: Path, data) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _resolved(args: argparse.Namespace) -> dict:
    skip = {"func", "config", "out", "verbose"}
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in skip:
            continue
        if isinstance(v, Path):
            v = str(v.resolve())
        out[k] = v
    return out


def write_manifest(args, outputs, started, inputs=None, extra=None) -> None:
    out = Path(args.out)
    manifest = {
        "tool": "schedq",
        "version": __version__,
        "kernel_backend": kernels.BACKEND,
        "subcommand": args.command,
        "seed": getattr(args, "seed", None),
        "config": _resolved(args),
        "inputs": {k: str(Path(v).resolve()) for k, v in (inputs or {}).items()},
        "output_dir": str(out.resolve()),
        "outputs": sorted(outputs),
        "started_at": started,
        "finished_at": _now(),
    }
    if extra:
        manifest.update(extra)
    write_atomic(out / MANIFEST, json.dumps(manifest, indent=1) + "\n")


def _require(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


# -- subcommands -------------------------------------------------------------------


def cmd_gen_env(args) -> int:
    started = _now()
    ranges = E.SuiteRanges()
    if args.ranges:
        ranges = E.SuiteRanges.from_dict(json.loads(_require(args.ranges, "ranges file").read_text()))
    if args.n_users is not None:
        ranges.n_users = args.n_users
    suite = E.generate_env_suite(args.seed, args.count, ranges)
    write_atomic(Path(args.out) / "suite.json", E.dumps_suite(suite))
    write_manifest(args, ["suite.json"], started, extra={"ranges": ranges.to_dict()})
    print(f"wrote {len(suite)} environments to {Path(args.out) / 'suite.json'}")
    return 0


def _select_envs(suite, env_ids):
    if not env_ids:
        return suite
    for i in env_ids:
        if not 1 <= i <= len(suite):
            raise ConfigError(f"--env-id {i} out of range 1..{len(suite)}")
    return [suite[i - 1] for i in env_ids]


def cmd_collect(args) -> int:
    started = _now()
    suite = _select_envs(E.load_suite(_require(args.suite, "environment suite")), args.env_id)
    if args.episodes == 0:
        log.warning("--episodes 0: writing an empty replay buffer")
    buf = Q.collect_samples(suite, args.episodes, args.epsilon, args.seed, capacity=args.capacity, jobs=args.jobs)
    write_atomic(Path(args.out) / "buffer.bin", buf.dumps())
    outputs = ["buffer.bin"]
    if args.csv:
        tmp = io.StringIO()
        buf.to_csv_stream(tmp)
        write_atomic(Path(args.out) / "buffer.csv", tmp.getvalue())
        outputs.append("buffer.csv")
    write_manifest(args, outputs, started, inputs={"suite": args.suite},
                   extra={"transition_count": len(buf), "episode_lengths": buf.episode_lengths})
    print(f"collected {len(buf)} transitions from {len(buf.episode_lengths)} episodes")
    return 0


def _train_config(args) -> Q.TrainConfig:
    return Q.TrainConfig(
        gamma=args.gamma,
        target_update_period=args.target_update_period,
        step_size=args.step_size,
        batch_size=args.batch_size,
        train_steps=args.train_steps,
        seed=args.seed,
        optimizer=args.optimizer,
        momentum=args.momentum,
        sampling=args.sampling,
        reward_scale=args.reward_scale,
    ).validate()


def cmd_train(args) -> int:
    started = _now()
    buf = Q.ReplayBuffer.load(_require(args.buffer, "replay buffer"))
    arch = nn.PROFILES[args.profile](buf.n_users)
    if args.hidden_layers or args.hidden_width:
        arch = nn.NetArchitecture(arch.input_dim, args.hidden_layers or arch.hidden_layers,
                                  args.hidden_width or arch.hidden_width, arch.output_dim)
    cfg = _train_config(args)
    net, losses = Q.train(buf, arch, cfg)
    out = Path(args.out)
    write_atomic(out / "checkpoint.bin", nn.dumps_checkpoint(net, extra={"profile": args.profile}))
    s = io.StringIO()
    w = csv.writer(s, lineterminator="\n")
    w.writerow(["iteration", "loss"])
    w.writerows((i + 1, repr(float(v))) for i, v in enumerate(losses))
    write_atomic(out / "loss.csv", s.getvalue())
    write_manifest(args, ["checkpoint.bin", "loss.csv"], started, inputs={"buffer": args.buffer},
                   extra={"architecture": arch.to_dict(), "train_config": cfg.to_dict()})
    final = f"{losses[-1]:.6g}" if losses else "n/a"
    print(f"trained {arch.hidden_layers}x{arch.hidden_width} network for {cfg.train_steps} steps (final loss {final})")
    return 0


def _parse_checkpoint_spec(spec: str):
    env_id, sep, path = spec.partition("=")
    if sep and env_id.isdigit():
        return int(env_id), path
    return None, spec


def _load_agents(args, suite):
    """``{env_index: [agents]}`` from ``--checkpoint [ENV_ID=]PATH`` and ``--greedy-stub``."""
    agents = {i: [] for i in range(len(suite))}
    for spec in args.checkpoint or []:
        env_id, path = _parse_checkpoint_spec(spec)
        net = nn.load_checkpoint(_require(path, "checkpoint"))
        targets = range(len(suite)) if env_id is None else [env_id - 1]
        for i in targets:
            if not 0 <= i < len(suite):
                raise ConfigError(f"checkpoint {path}: environment id {env_id} out of range 1..{len(suite)}")
            cfg = suite[i]
            a = net.architecture
            if a.output_dim != cfg.n_users or a.input_dim != cfg.state_dim:
                raise ValueError(
                    f"checkpoint {path} has input_dim={a.input_dim}, output_dim={a.output_dim} but "
                    f"environment {i + 1} has {cfg.n_users} users (state_dim={cfg.state_dim})"
                )
            agents[i].append(net)
    if args.greedy_stub:
        for i in agents:
            agents[i].append(greedy_action)
    missing = [i + 1 for i, a in agents.items() if not a]
    if missing:
        raise ConfigError(f"no agents for environment(s) {missing}; pass --checkpoint or --greedy-stub")
    return agents


def _write_report_files(report: EvalReport, out: Path, grid_points: int) -> list:
    files = report_files(report, grid_points)
    for name, text in files.items():
        write_atomic(out / name, text)
    return list(files)


def _absolute_spec(spec: str) -> str:
    env_id, path = _parse_checkpoint_spec(spec)
    path = str(Path(path).resolve())
    return path if env_id is None else f"{env_id}={path}"


def cmd_evaluate(args) -> int:
    started = _now()
    args.checkpoint = [_absolute_spec(s) for s in args.checkpoint or []]
    suite = E.load_suite(_require(args.suite, "environment suite"))
    agents = _load_agents(args, suite)
    report = build_report(suite, agents, args.episodes, args.seed, jobs=args.jobs)
    out = Path(args.out)
    write_atomic(out / "report.json", report.to_json())
    outputs = ["report.json"] + _write_report_files(report, out, args.grid_points)
    inputs = {"suite": args.suite}
    for k, spec in enumerate(args.checkpoint or []):
        inputs[f"checkpoint_{k}"] = _parse_checkpoint_spec(spec)[1]
    write_manifest(args, outputs, started, inputs=inputs)
    sys.stdout.write(report.table_csv())
    return 0


def cmd_report(args) -> int:
    started = _now()
    src = _require(args.report, "report.json")
    report = EvalReport.from_dict(json.loads(src.read_text()))
    report.check_sums()
    outputs = _write_report_files(report, Path(args.out), args.grid_points)
    write_manifest(args, outputs, started, inputs={"report": args.report})
    sys.stdout.write(report.table_csv())
    return 0


def cmd_rerun(args) -> int:
    manifest = json.loads(_require(args.manifest, "manifest").read_text())
    ns = argparse.Namespace(**manifest["config"])
    ns.command = manifest["subcommand"]
    ns.out = args.out
    ns.func = COMMANDS[ns.command]
    return ns.func(ns)


COMMANDS = {
    "gen-env": cmd_gen_env,
    "collect": cmd_collect,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


# -- parser ------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser, seed=True, jobs=False) -> None:
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--config", type=Path, help="JSON file of option defaults (keys are option names)")
    if seed:
        p.add_argument("--seed", type=int, default=0)
    if jobs:
        p.add_argument("--jobs", type=int, default=1, help="worker processes for episode simulation")


def build_parser():
    parser = argparse.ArgumentParser(prog="schedq", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"schedq {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = sub.add_parser("gen-env", help="generate an environment suite")
    _common(p)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--n-users", type=int, default=None)
    p.add_argument("--ranges", type=Path, help="JSON file of SuiteRanges fields")
    subs["gen-env"] = p

    p = sub.add_parser("collect", help="simulate episodes into a replay buffer")
    _common(p, jobs=True)
    p.add_argument("--suite", type=Path, required=True)
    p.add_argument("--env-id", type=int, action="append", help="1-based environment id (repeatable); default all")
    p.add_argument("--episodes", type=int, default=10, help="episodes per environment")
    p.add_argument("--epsilon", type=float, default=0.5, help="probability of a uniform random action")
    p.add_argument("--capacity", type=int, default=None)
    p.add_argument("--csv", action="store_true", help="also export the buffer as CSV")
    subs["collect"] = p

    d = Q.TrainConfig()
    p = sub.add_parser("train", help="offline Q-learning from a replay buffer")
    _common(p)
    p.add_argument("--buffer", type=Path, required=True)
    p.add_argument("--profile", choices=sorted(nn.PROFILES), default="test")
    p.add_argument("--hidden-layers", type=int, default=None)
    p.add_argument("--hidden-width", type=int, default=None)
    p.add_argument("--train-steps", type=int, default=d.train_steps)
    p.add_argument("--gamma", type=float, default=d.gamma)
    p.add_argument("--target-update-period", "--upd", type=int, default=d.target_update_period)
    p.add_argument("--step-size", type=float, default=d.step_size)
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--optimizer", choices=["sgd", "momentum", "adam"], default=d.optimizer)
    p.add_argument("--momentum", type=float, default=d.momentum)
    p.add_argument("--sampling", choices=["uniform", "sequential"], default=d.sampling)
    p.add_argument("--reward-scale", type=float, default=d.reward_scale)
    subs["train"] = p

    p = sub.add_parser("evaluate", help="evaluate checkpoints against greedy on a suite")
    _common(p, jobs=True)
    p.add_argument("--suite", type=Path, required=True)
    p.add_argument("--checkpoint", action="append", metavar="[ENV_ID=]PATH",
                   help="agent checkpoint, optionally bound to one 1-based environment id (repeatable)")
    p.add_argument("--greedy-stub", action="store_true", help="add an agent that acts greedily")
    p.add_argument("--episodes", type=int, default=100, help="evaluation episodes per (env, policy)")
    p.add_argument("--grid-points", type=int, default=256)
    subs["evaluate"] = p

    p = sub.add_parser("report", help="regenerate tables, KDE curves and plots from report.json")
    _common(p, seed=False)
    p.add_argument("--report", type=Path, required=True)
    p.add_argument("--grid-points", type=int, default=256)
    subs["report"] = p

    p = sub.add_parser("rerun", help="repeat a stage from its manifest")
    p.add_argument("manifest", type=Path)
    p.add_argument("--out", type=Path, required=True)
    subs["rerun"] = p
    return parser, subs


def parse_args(argv=None):
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        defaults = json.loads(_require(args.config, "config file").read_text())
        sp = subs[args.command]
        defaults = {k.replace("-", "_"): v for k, v in defaults.items()}
        unknown = set(defaults) - {a.dest for a in sp._actions}
        if unknown:
            parser.error(f"unknown keys in {args.config}: {sorted(unknown)}")
        sp.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    func = cmd_rerun if args.command == "rerun" else COMMANDS[args.command]
    try:
        return func(args)
    except TrainingDivergedError as exc:
        print(f"error: training diverged at iteration {exc.iteration}: {exc}", file=sys.stderr)
        return 3
    except (FileNotFoundError, ConfigError, CheckpointFormatError, OracleInfeasibleError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
