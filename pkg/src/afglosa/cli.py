"""Command line entry point: ``afglosa {train,eval,export-trajectory,ablate}``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure (NaN/inf
during training or evaluation).
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import LEARNABLE, METHODS, ConfigError, RunConfig, load_run_config
from .estimator import GlosaAgent
from .experiments import (ABLATIONS, ARRIVAL_KINDS, agent_for, eval_seeds, export_trajectories,
                          format_table, header_lines, results_table, run_ablation, write_per_seed,
                          write_table)
from .hppo import EPISODE_FIELDS, UPDATE_FIELDS, TrainingDiverged, write_rows
from .nets import NumericError
from .sim import SimulationError

EXIT_OK, EXIT_CONFIG, EXIT_NAN = 0, 2, 3
log = logging.getLogger("afglosa")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _common(p: argparse.ArgumentParser, methods=METHODS):
    p.add_argument("--config", help="run config YAML (defaults when omitted)")
    p.add_argument("--method", help=f"comma separated, from: {', '.join(methods)}")
    p.add_argument("--seed", type=int, help="master seed (beats AFGLOSA_SEED)")
    p.add_argument("--episodes", type=int, help="training episodes")
    p.add_argument("--density", type=float, help="traffic density in veh/h")
    p.add_argument("--control-step", type=int, dest="control_step", help="seconds per decision")
    p.add_argument("--out", help="output directory (beats AFGLOSA_OUT)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="afglosa", description="Adaptive-frequency GLOSA experiments.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("train", help="train a learned policy and write its checkpoint")
    _common(p, LEARNABLE)
    p = sub.add_parser("eval", help="evaluate methods over the seed schedule")
    _common(p)
    p.add_argument("--checkpoint", action="append", default=[], metavar="METHOD=PATH",
                   help="checkpoint for a learned method (default OUT/METHOD/checkpoint.txt)")
    p = sub.add_parser("export-trajectory", help="write single-vehicle traces")
    _common(p)
    p.add_argument("--case", choices=ARRIVAL_KINDS, default="red_arrival")
    p.add_argument("--checkpoint", action="append", default=[], metavar="METHOD=PATH")
    p = sub.add_parser("ablate", help="paired ablation runs")
    _common(p, LEARNABLE)
    p.add_argument("--which", choices=sorted(ABLATIONS), required=True)
    return ap


def resolve_config(args) -> RunConfig:
    cfg = load_run_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    if args.episodes is not None:
        if args.episodes < 0:
            raise ConfigError("--episodes must be >= 0")
        cfg.episodes = args.episodes
        cfg.trainer = replace(cfg.trainer, total_episodes=args.episodes)
    if args.density is not None:
        cfg.densities = (args.density,)
    if args.control_step is not None:
        if args.control_step < 1:
            raise ConfigError("--control-step must be >= 1")
        cfg.env = replace(cfg.env, control_step=args.control_step)
    if args.method is not None:
        methods = [m.strip() for m in args.method.split(",") if m.strip()]
        bad = [m for m in methods if m not in METHODS]
        if bad or not methods:
            raise ConfigError(f"unknown method(s) {bad}; choose from {', '.join(METHODS)}")
        cfg.method = ",".join(methods)
    return _validate(cfg)


def _validate(cfg: RunConfig) -> RunConfig:
    for m in cfg.method.split(","):
        replace(cfg, method=m).validate()
    return cfg


def _methods(cfg: RunConfig) -> list[str]:
    return cfg.method.split(",")


def _checkpoints(args, cfg) -> dict:
    paths = {}
    for item in args.checkpoint:
        name, sep, path = item.partition("=")
        if not sep or name not in LEARNABLE:
            raise ConfigError(f"--checkpoint expects METHOD=PATH with METHOD in {LEARNABLE}")
        paths[name] = path
    return paths


def _agents(args, cfg) -> dict:
    ckpts = _checkpoints(args, cfg)
    agents = {}
    for m in _methods(cfg):
        if m in LEARNABLE:
            path = Path(ckpts.get(m, Path(cfg.out_dir) / m / "checkpoint.txt"))
            if not path.exists():
                raise ConfigError(f"no checkpoint for {m}: {path} (run 'afglosa train' first)")
            base = agent_for(cfg, m)
            agent = GlosaAgent.load(path, **{k: v for k, v in base.get_params().items()
                                             if k not in ("random_state",)})
        else:
            agent = agent_for(cfg, m).fit()
        agents[m] = agent
    return agents


def cmd_train(args, cfg: RunConfig) -> int:
    for m in _methods(cfg):
        if m not in LEARNABLE:
            raise ConfigError(f"'train' needs a learnable method ({', '.join(LEARNABLE)}), got {m}")
        out = Path(cfg.out_dir) / m
        out.mkdir(parents=True, exist_ok=True)
        agent = agent_for(cfg, m)
        every = max(1, cfg.episodes // 20)

        def progress(row):
            if (row["episode"] + 1) % every == 0:
                log.info("%s episode %d reward %.1f", m, row["episode"] + 1, row["reward"])

        agent.fit(on_episode=progress)
        hdr = header_lines(cfg, f"method {m}", f"density {agent.density:g}")
        write_rows(out / "metrics_episodes.csv", EPISODE_FIELDS, agent.curves_["episodes"], hdr)
        write_rows(out / "metrics_updates.csv", UPDATE_FIELDS, agent.curves_["updates"], hdr)
        agent.save(out / "checkpoint.txt")
        print(f"{m}: {len(agent.curves_['episodes'])} episodes, "
              f"{len(agent.curves_['updates'])} updates -> {out}")
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    agents = _agents(args, cfg)
    table, per_seed = results_table(agents, cfg.densities, eval_seeds(cfg))
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    hdr = header_lines(cfg, f"eval_seeds {cfg.seed}..{cfg.seed + cfg.eval_repeats - 1}")
    write_table(out / "eval_table.csv", table, hdr)
    write_per_seed(out / "eval_per_seed.csv", per_seed, hdr)
    print(format_table(table))
    return EXIT_OK


def cmd_export(args, cfg: RunConfig) -> int:
    agents = _agents(args, cfg)
    res = export_trajectories(agents, args.case, cfg, cfg.out_dir)
    for name, p in res["paths"].items():
        print(f"{name}: {p} (episode seed {res['seed']})")
    return EXIT_OK


def cmd_ablate(args, cfg: RunConfig) -> int:
    m = _methods(cfg)[0]
    if m not in LEARNABLE:
        raise ConfigError(f"'ablate' needs a learnable method, got {m}")
    res = run_ablation(args.which, cfg, Path(cfg.out_dir), method=m)
    print(format_table(res["table"]))
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "export-trajectory": cmd_export,
            "ablate": cmd_ablate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        try:
            cfg = resolve_config(args)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingDiverged, NumericError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NAN
    except SimulationError as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
