"""Evaluation campaigns, trajectory export and paired ablations.

Every output file opens with ``#`` header lines naming the package version,
the config hash and the master seed, so a table can be traced back to the
run that produced it.
"""
from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from . import __version__
from .config import LEARNABLE, RunConfig
from .env import write_trace
from .estimator import GlosaAgent
from .hppo import EPISODE_FIELDS, UPDATE_FIELDS, smooth, write_rows

log = logging.getLogger(__name__)

TABLE_FIELDS = ("method", "density", "wti", "wco", "co2", "fuel", "episodes")
CO2_PER_FUEL = 3.135


def header_lines(cfg: RunConfig, *extra: str) -> list[str]:
    return [f"afglosa {__version__}", f"config_hash {cfg.digest()}", f"seed {cfg.seed}", *extra]


def agent_for(cfg: RunConfig, method: Optional[str] = None, **overrides) -> GlosaAgent:
    """Estimator configured from a run config."""
    tr, env = cfg.trainer, cfg.env
    params = dict(
        method=method or cfg.method, episodes=cfg.episodes, density=float(cfg.densities[0]),
        control_step=env.control_step, wt_mode=env.wt_mode, horizon=env.horizon,
        depart_window=env.depart_window, gamma=tr.gamma, clip_eps=tr.clip_eps,
        buffer_capacity=tr.buffer_capacity, batch_size=tr.batch_size,
        epochs_per_update=tr.epochs_per_update, lr_discrete=tr.adam.lr_discrete,
        lr_continuous=tr.adam.lr_continuous, lr_critic=tr.adam.lr_critic,
        reward_scale=tr.reward_scale, sigma_init=tr.sigma_init,
        normalize_advantage=tr.normalize_advantage, minibatch_mode=tr.minibatch_mode,
        random_state=cfg.seed, scenario=cfg.scenario, reward=cfg.reward)
    params.update(overrides)
    return GlosaAgent(**params)


def eval_seeds(cfg: RunConfig) -> list[int]:
    """Evaluation seeds shared by every method: ``seed, seed+1, ...``."""
    return [cfg.seed + i for i in range(cfg.eval_repeats)]


def evaluate(agent: GlosaAgent, density: float, seeds: Iterable[int]) -> list[dict]:
    """Per-seed metrics rows for one method at one density."""
    env = agent.make_env(density)
    rows = []
    for s in seeds:
        m, total, _ = agent.run_episode(s, density, env=env)
        rows.append({"seed": s, "wti": m.wti, "wco": float(m.wco), "co2": m.co2, "fuel": m.fuel,
                     "reward": total})
    return rows


def summarize(method: str, density: float, rows: list[dict]) -> dict:
    out = {"method": method, "density": density, "episodes": len(rows)}
    for k in ("wti", "wco", "co2", "fuel"):
        out[k] = float(np.mean([r[k] for r in rows]))
    return out


def improvement(row: dict, bench: dict) -> dict:
    """``imp.`` row: method mean minus benchmark mean (negative is better)."""
    out = {"method": f"imp.{row['method']}", "density": row["density"], "episodes": row["episodes"]}
    for k in ("wti", "wco", "co2", "fuel"):
        out[k] = row[k] - bench[k]
    return out


def results_table(agents: dict, densities, seeds) -> tuple[list[dict], dict]:
    """Means per (method, density) plus ``imp.`` rows against the benchmark.

    Returns ``(table_rows, per_seed)`` where ``per_seed[(method, density)]``
    holds the raw rows.
    """
    if "benchmark" not in agents:
        agents = {"benchmark": None, **agents}
    per_seed, table = {}, []
    for d in densities:
        means = {}
        for name, agent in agents.items():
            agent = agent if agent is not None else GlosaAgent(method="benchmark").fit()
            rows = evaluate(agent, d, seeds)
            per_seed[(name, d)] = rows
            means[name] = summarize(name, d, rows)
            table.append(means[name])
        for name in agents:
            if name != "benchmark":
                table.append(improvement(means[name], means["benchmark"]))
    return table, per_seed


def format_table(rows: list[dict]) -> str:
    lines = [f"{'method':<18}{'density':>8}{'WTI':>9}{'WCO':>8}{'CO2':>12}{'FUEL':>12}"]
    for r in rows:
        lines.append(f"{r['method']:<18}{r['density']:>8g}{r['wti']:>9.2f}{r['wco']:>8.2f}"
                     f"{r['co2']:>12.0f}{r['fuel']:>12.0f}")
    return "\n".join(lines)


def write_table(path, rows, header=()) -> None:
    write_rows(path, TABLE_FIELDS, rows, header)


# -- single-vehicle trajectories -----------------------------------------

ARRIVAL_KINDS = ("red_arrival", "green_arrival")


def find_arrival_seed(kind: str, cfg: RunConfig, density: float, search: int = 500) -> int:
    """First seed from ``cfg.seed`` onwards that produces the requested case.

    ``red_arrival``: the unassisted vehicle stops at the line and the
    rule-based advisory reacts. ``green_arrival``: the unassisted vehicle
    passes without stopping and a constant-speed projection at zone entry
    already lands in green, so the rule-based advisory stays silent.
    """
    if kind not in ARRIVAL_KINDS:
        raise ValueError(f"kind must be one of {ARRIVAL_KINDS}")
    bench = agent_for(cfg, "benchmark").fit()
    rule = agent_for(cfg, "rule_glosa").fit()
    env = bench.make_env(density)
    for s in range(cfg.seed, cfg.seed + search):
        mb, _, _ = bench.run_episode(s, density, env=env)
        pol = rule.policy()
        pol.begin_episode()
        obs, done = env.reset(s, density), False
        while not done:
            obs, _, done, _ = env.step(pol(obs))
        if kind == "red_arrival" and mb.wco >= 1 and pol.events > 0:
            return s
        if kind == "green_arrival" and mb.wco == 0 and pol.decided and pol.events == 0:
            return s
    raise LookupError(f"no {kind} seed within {search} seeds of {cfg.seed}")


def export_trajectories(agents: dict, kind: str, cfg: RunConfig, out_dir, density=None) -> dict:
    """Write one trace CSV per method for the chosen arrival case."""
    density = float(density if density is not None else cfg.densities[0])
    seed = find_arrival_seed(kind, cfg, density)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, agent in agents.items():
        _, _, env = agent.run_episode(seed, density, record_trace=True)
        p = out_dir / f"trace_{kind}_{name}.csv"
        write_trace(env.trace, p, header_lines(cfg, f"method {name}", f"case {kind}",
                                               f"episode_seed {seed}", f"density {density:g}"))
        paths[name] = p
    return {"seed": seed, "paths": paths}


# -- ablations -----------------------------------------------------------

ABLATIONS = {
    "wt": [("s1", {"wt_mode": "s1"}), ("s2", {"wt_mode": "s2"})],
    "r3": [("r3_on", {}), ("r3_off", {"omega": 0.0})],
    "control_step": [(f"step{k}", {"control_step": k}) for k in (1, 2, 3)],
}


def run_ablation(which: str, cfg: RunConfig, out_dir, method: str = "af_glosa",
                 smooth_window: int = 500) -> dict:
    """Train and evaluate paired arms that differ only in the ablated setting.

    Every arm uses the same training seed and the same evaluation seeds.
    Writes ``ablation_<which>_episodes.csv``, ``ablation_<which>_updates.csv``
    and ``ablation_<which>_table.csv`` under ``out_dir``.
    """
    if which not in ABLATIONS:
        raise ValueError(f"ablation must be one of {', '.join(ABLATIONS)}")
    if method not in LEARNABLE:
        raise ValueError("ablations train a learnable method")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = eval_seeds(cfg)
    density = float(cfg.densities[0])
    ep_rows, up_rows, table = [], [], []
    for arm, change in ABLATIONS[which]:
        agent = agent_for(cfg, method, **change)
        agent.fit()
        eps = agent.curves_["episodes"]
        sm = smooth([e["reward"] for e in eps], smooth_window) if eps else []
        for e, s in zip(eps, sm):
            ep_rows.append({"arm": arm, **e, "reward_smoothed": float(s)})
        for u in agent.curves_["updates"]:
            up_rows.append({"arm": arm, **u})
        row = summarize(arm, density, evaluate(agent, density, seeds))
        table.append(row)
        log.info("ablation %s arm %s: wti=%.2f wco=%.2f", which, arm, row["wti"], row["wco"])
    hdr = header_lines(cfg, f"ablation {which}", f"train_seed {cfg.seed}",
                       f"eval_seeds {seeds[0]}..{seeds[-1]}", "arms share both seed schedules")
    write_rows(out_dir / f"ablation_{which}_episodes.csv",
               ("arm",) + EPISODE_FIELDS + ("reward_smoothed",), ep_rows, hdr)
    write_rows(out_dir / f"ablation_{which}_updates.csv", ("arm",) + UPDATE_FIELDS, up_rows, hdr)
    write_table(out_dir / f"ablation_{which}_table.csv", table, hdr)
    return {"table": table, "episodes": ep_rows, "updates": up_rows}


def co2_ratio_ok(rows: list[dict], tol: float = 1e-9) -> bool:
    """Every non-``imp.`` row with fuel keeps CO2/FUEL at the fixed factor."""
    return all(abs(r["co2"] / r["fuel"] - CO2_PER_FUEL) <= tol
               for r in rows if not str(r["method"]).startswith("imp.") and r["fuel"] > 0)


def write_per_seed(path, per_seed: dict, header=()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        wr = csv.writer(fh)
        wr.writerow(["method", "density", "seed", "wti", "wco", "co2", "fuel", "reward"])
        for (name, d), rows in per_seed.items():
            for r in rows:
                wr.writerow([name, d, r["seed"], r["wti"], r["wco"], repr(r["co2"]),
                             repr(r["fuel"]), repr(r["reward"])])
