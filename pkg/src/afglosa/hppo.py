"""Hybrid PPO: buffer pool, one-step advantages, per-head clipped updates."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .env import GlosaEnv, HybridAction, normalize
from .nets import (AdamConfig, AdamState, CONTINUOUS_KEYS, CRITIC_KEYS, DISCRETE_KEYS,
                   PolicySet, adam_step, categorical_entropy, gaussian_entropy, gaussian_logpdf,
                   ratio_of)

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    """A loss became non-finite; ``snapshot`` holds the offending minibatch."""

    def __init__(self, msg, snapshot):
        super().__init__(msg)
        self.snapshot = snapshot


@dataclass
class Transition:
    obs: np.ndarray          # normalized observation
    gap_bit: int
    accel_adv: float
    accel_raw: float         # pre-clip Gaussian sample; logp_c_old is evaluated here
    logp_d_old: float
    logp_c_old: float
    reward: float
    obs_next: np.ndarray
    done: bool


@dataclass(frozen=True)
class TrainerConfig:
    gamma: float = 0.99
    clip_eps: float = 0.1
    buffer_capacity: int = 10000
    batch_size: int = 256
    epochs_per_update: int = 8
    total_episodes: int = 40000
    normalize_advantage: bool = True
    reward_scale: float = 0.01
    minibatch_mode: str = "epochs"   # or "minibatch8": 256 samples per update, minibatches of 8
    density: float = 300.0
    entropy_log_every: int = 1
    sigma_init: float = 1.0
    adam: AdamConfig = field(default_factory=AdamConfig)

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if not 0 < self.clip_eps < 1:
            raise ValueError("clip_eps must be in (0, 1)")
        if not 0 < self.batch_size <= self.buffer_capacity:
            raise ValueError("need 0 < batch_size <= buffer_capacity")
        if self.minibatch_mode not in ("epochs", "minibatch8"):
            raise ValueError("minibatch_mode must be 'epochs' or 'minibatch8'")
        if self.reward_scale <= 0 or self.epochs_per_update < 1 or self.total_episodes < 0:
            raise ValueError("bad reward_scale / epochs_per_update / total_episodes")


def advantage(reward, v_s, v_next, done, gamma):
    """One-step advantage ``r + gamma*V(s')*(1-done) - V(s)``."""
    return reward + gamma * v_next * (1.0 - np.asarray(done, dtype=np.float64)) - v_s


def clipped_loss(ratio, adv, eps) -> float:
    """Mean clipped surrogate loss to minimize."""
    ratio = np.asarray(ratio, dtype=np.float64)
    adv = np.asarray(adv, dtype=np.float64)
    return float(np.mean(-np.minimum(ratio * adv, np.clip(ratio, 1 - eps, 1 + eps) * adv)))


def critic_loss(pol: PolicySet, obs, target) -> float:
    return pol.critic_loss(obs, target)[0]


class Buffer:
    def __init__(self, capacity: int):
        self.capacity = capacity
        self.items: list[Transition] = []

    def __len__(self):
        return len(self.items)

    def add(self, tr: Transition) -> None:
        if len(self.items) >= self.capacity:
            raise OverflowError("buffer pool is full; run an update first")
        self.items.append(tr)

    @property
    def full(self) -> bool:
        return len(self.items) >= self.capacity

    def clear(self) -> None:
        self.items.clear()

    def arrays(self) -> dict:
        it = self.items
        return {
            "obs": np.array([t.obs for t in it]),
            "obs_next": np.array([t.obs_next for t in it]),
            "gap": np.array([t.gap_bit for t in it], dtype=np.int64),
            "raw": np.array([t.accel_raw for t in it]),
            "logp_d": np.array([t.logp_d_old for t in it]),
            "logp_c": np.array([t.logp_c_old for t in it]),
            "reward": np.array([t.reward for t in it]),
            "done": np.array([t.done for t in it], dtype=np.float64),
        }


class HPPO:
    """Learner state: policy, three Adam optimizers and the buffer pool."""

    def __init__(self, policy: PolicySet, cfg: TrainerConfig, seed: int = 0):
        self.policy = policy
        self.cfg = cfg
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
        p = policy.params
        self.opt_d = AdamState(DISCRETE_KEYS, p)
        self.opt_c = AdamState(CONTINUOUS_KEYS, p)
        self.opt_v = AdamState(CRITIC_KEYS, p)
        self.buffer = Buffer(cfg.buffer_capacity)
        self.n_updates = 0

    def fresh_ratios(self) -> tuple[np.ndarray, np.ndarray]:
        """Ratios of the current policy against the stored log-probabilities."""
        b = self.buffer.arrays()
        pol = self.policy
        h = pol.encode(b["obs"])
        if pol.discrete:
            probs = pol.discrete_forward(h)
            rd = ratio_of(np.log(probs[np.arange(len(b["gap"])), b["gap"]]), b["logp_d"])
        else:
            rd = np.ones(len(b["gap"]))
        mu, sigma = pol.continuous_forward(h, b["gap"])
        rc = ratio_of(gaussian_logpdf(b["raw"], mu, sigma), b["logp_c"])
        return rd, rc

    def update(self) -> dict:
        if not self.buffer.full:
            raise RuntimeError(f"update needs a full buffer ({len(self.buffer)}/{self.cfg.buffer_capacity})")
        cfg, pol = self.cfg, self.policy
        b = self.buffer.arrays()
        n = len(b["reward"])
        v_s = pol.critic_forward(b["obs"])
        v_next = pol.critic_forward(b["obs_next"])
        target = b["reward"] + cfg.gamma * v_next * (1.0 - b["done"])
        adv = target - v_s
        if cfg.normalize_advantage:
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)

        h = pol.encode(b["obs"])
        ent_d = float(np.mean(categorical_entropy(pol.discrete_forward(h)))) if pol.discrete else 0.0
        ent_c = float(gaussian_entropy(pol.sigma()))

        if cfg.minibatch_mode == "epochs":
            epochs, mb, per_epoch = cfg.epochs_per_update, cfg.batch_size, n
        else:
            epochs, mb, per_epoch = 1, 8, min(cfg.batch_size, n)
        clip_hits = clip_total = 0
        ratios_d, ratios_c, first = [], [], None
        closs = []
        for _ in range(epochs):
            perm = self.rng.permutation(n)[:per_epoch]
            for start in range(0, per_epoch, mb):
                idx = perm[start:start + mb]
                x, gap, a = b["obs"][idx], b["gap"][idx], adv[idx]
                stats = {}
                if pol.discrete:
                    ld, gd, sd = pol.discrete_loss(x, gap, b["logp_d"][idx], a, cfg.clip_eps)
                    self._check(ld, "discrete", idx, b)
                    adam_step(pol.params, gd, self.opt_d, cfg.adam.lr_discrete, cfg.adam)
                    stats["rd"] = sd["ratio"]
                mask = gap == 1
                lc, gc, sc = pol.continuous_loss(x, gap, b["raw"][idx], b["logp_c"][idx], a,
                                                 cfg.clip_eps, mask=mask)
                self._check(lc, "continuous", idx, b)
                if mask.any():
                    adam_step(pol.params, gc, self.opt_c, cfg.adam.lr_continuous, cfg.adam)
                lv, gv = pol.critic_loss(x, target[idx])
                self._check(lv, "critic", idx, b)
                adam_step(pol.params, gv, self.opt_v, cfg.adam.lr_critic, cfg.adam)
                closs.append(lv)

                rd = stats.get("rd", np.ones(len(idx)))
                rc = sc["ratio"][mask] if mask.any() else np.ones(0)
                if first is None:
                    first = (float(rd.mean()), float(rc.mean()) if rc.size else 1.0)
                ratios_d.append(rd)
                ratios_c.append(rc)
                for r in (rd, rc):
                    clip_hits += int(np.sum(np.abs(r - 1.0) > cfg.clip_eps))
                    clip_total += r.size
        self.buffer.clear()
        self.n_updates += 1
        rd_all = np.concatenate(ratios_d)
        rc_all = np.concatenate(ratios_c)
        return {
            "update": self.n_updates,
            "entropy_d": ent_d,
            "entropy_c": ent_c,
            "clip_frac": clip_hits / clip_total if clip_total else 0.0,
            "mean_ratio_d": float(rd_all.mean()),
            "mean_ratio_c": float(rc_all.mean()) if rc_all.size else 1.0,
            "first_ratio_d": first[0],
            "first_ratio_c": first[1],
            "critic_loss": float(np.mean(closs)),
            "mean_reward": float(b["reward"].mean() / cfg.reward_scale),
        }

    @staticmethod
    def _check(loss, name, idx, b):
        if not np.isfinite(loss):
            snap = {k: v[idx] for k, v in b.items()}
            raise TrainingDiverged(f"non-finite {name} loss", snap)


EPISODE_FIELDS = ("episode", "steps", "reward", "fuel", "wti", "wco")
UPDATE_FIELDS = ("update", "episode", "entropy_d", "entropy_c", "clip_frac", "mean_ratio_d", "mean_ratio_c")


def train(env_factory: Callable[[], GlosaEnv], cfg: TrainerConfig, seed: int,
          discrete: bool = True, on_episode: Optional[Callable[[dict], None]] = None,
          on_update: Optional[Callable[[dict], None]] = None) -> tuple[PolicySet, dict]:
    """Run ``cfg.total_episodes`` training episodes.

    The buffer fills across episode boundaries and an update fires each time
    it reaches capacity. Returns the trained policy and the learning curves.
    """
    env = env_factory()
    policy = PolicySet(seed=seed, discrete=discrete, sigma_init=cfg.sigma_init)
    learner = HPPO(policy, cfg, seed)
    act_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    episodes, updates = [], []
    for ep in range(cfg.total_episodes):
        obs = env.reset([seed, ep, 3], density=cfg.density)
        x = normalize(obs)
        total, steps, done = 0.0, 0, False
        while not done:
            gap, a, raw, lpd, lpc = policy.act(x, act_rng)
            obs, R, done, _ = env.step(HybridAction(gap, a, lpd, lpc))
            x_next = normalize(obs)
            learner.buffer.add(Transition(x, gap, a, raw, lpd, lpc, R * cfg.reward_scale, x_next, done))
            total += R
            steps += 1
            x = x_next
            if learner.buffer.full:
                st = learner.update()
                st["episode"] = ep
                updates.append(st)
                if on_update:
                    on_update(st)
                log.info("update %d: H_d=%.3f H_c=%.3f clip=%.3f", st["update"],
                         st["entropy_d"], st["entropy_c"], st["clip_frac"])
        m = env.metrics
        row = {"episode": ep, "steps": steps, "reward": total, "fuel": m.fuel,
               "wti": m.wti, "wco": m.wco}
        episodes.append(row)
        if on_episode:
            on_episode(row)
    return policy, {"episodes": episodes, "updates": updates}


def smooth(values, window: int) -> np.ndarray:
    """Trailing moving average (shorter windows at the start)."""
    v = np.asarray(values, dtype=np.float64)
    c = np.cumsum(np.insert(v, 0, 0.0))
    idx = np.arange(1, len(v) + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)


def write_rows(path, fields, rows, header_lines=()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        wr = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        wr.writeheader()
        for r in rows:
            wr.writerow({k: (repr(float(r[k])) if isinstance(r[k], (float, np.floating)) else r[k])
                         for k in fields})
