"""scikit-learn style front end for the advisory methods."""
from __future__ import annotations

from dataclasses import replace
from typing import Optional

import numpy as np
import yaml
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array, check_is_fitted

from .baselines import BenchmarkPolicy, LearnedPolicy, RuleGlosaPolicy
from .config import LEARNABLE, METHODS
from .env import EnvConfig, GlosaEnv, Observation, RewardConfig, Scenario, normalize
from .hppo import TrainerConfig, train
from .nets import AdamConfig, load_checkpoint, save_checkpoint

_T, _E, _A = TrainerConfig(), EnvConfig(), AdamConfig()


def check_observations(X) -> np.ndarray:
    """Validate a batch of raw 8-field observations; a single row is promoted."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    X = check_array(X, dtype=np.float64, ensure_all_finite=True)
    if X.shape[1] != 8:
        raise ValueError(f"expected 8 observation fields, got {X.shape[1]}")
    return X


class GlosaAgent(BaseEstimator):
    """One advisory method as an estimator.

    ``fit`` trains the learnable methods (``af_glosa``, ``l_glosa``) on
    simulated episodes and is a no-op for ``benchmark`` and ``rule_glosa``.
    ``predict`` maps raw observations to ``[gap_bit, accel]`` rows.

    Parameters mirror the trainer, environment and reward settings; see
    :class:`~afglosa.hppo.TrainerConfig`, :class:`~afglosa.env.EnvConfig` and
    :class:`~afglosa.env.RewardConfig`.
    """

    def __init__(self, method="af_glosa", episodes=5000, density=300.0, control_step=2,
                 wt_mode="s2", omega=None, horizon=_E.horizon, depart_window=_E.depart_window,
                 gamma=_T.gamma, clip_eps=_T.clip_eps, buffer_capacity=_T.buffer_capacity,
                 batch_size=_T.batch_size, epochs_per_update=_T.epochs_per_update,
                 lr_discrete=_A.lr_discrete, lr_continuous=_A.lr_continuous,
                 lr_critic=_A.lr_critic, reward_scale=_T.reward_scale, sigma_init=_T.sigma_init,
                 normalize_advantage=_T.normalize_advantage, minibatch_mode=_T.minibatch_mode,
                 deterministic=True, random_state=7, scenario=None, reward=None):
        self.method = method
        self.episodes = episodes
        self.density = density
        self.control_step = control_step
        self.wt_mode = wt_mode
        self.omega = omega
        self.horizon = horizon
        self.depart_window = depart_window
        self.gamma = gamma
        self.clip_eps = clip_eps
        self.buffer_capacity = buffer_capacity
        self.batch_size = batch_size
        self.epochs_per_update = epochs_per_update
        self.lr_discrete = lr_discrete
        self.lr_continuous = lr_continuous
        self.lr_critic = lr_critic
        self.reward_scale = reward_scale
        self.sigma_init = sigma_init
        self.normalize_advantage = normalize_advantage
        self.minibatch_mode = minibatch_mode
        self.deterministic = deterministic
        self.random_state = random_state
        self.scenario = scenario
        self.reward = reward

    # -- configuration views -------------------------------------------
    def env_config(self) -> EnvConfig:
        return EnvConfig(control_step=int(self.control_step), horizon=self.horizon,
                         depart_window=int(self.depart_window), wt_mode=self.wt_mode)

    def reward_config(self) -> RewardConfig:
        base = self.reward or RewardConfig()
        return base if self.omega is None else replace(base, omega=float(self.omega))

    def trainer_config(self) -> TrainerConfig:
        return TrainerConfig(
            gamma=self.gamma, clip_eps=self.clip_eps, buffer_capacity=self.buffer_capacity,
            batch_size=self.batch_size, epochs_per_update=self.epochs_per_update,
            total_episodes=self.episodes, normalize_advantage=self.normalize_advantage,
            reward_scale=self.reward_scale, minibatch_mode=self.minibatch_mode,
            density=self.density, sigma_init=self.sigma_init,
            adam=AdamConfig(lr_discrete=self.lr_discrete, lr_continuous=self.lr_continuous,
                            lr_critic=self.lr_critic))

    def make_env(self, density: Optional[float] = None) -> GlosaEnv:
        return GlosaEnv(self.scenario or Scenario(), self.env_config(), self.reward_config(),
                        density=self.density if density is None else density)

    # -- estimator API -------------------------------------------------
    def fit(self, X=None, y=None, on_episode=None, on_update=None):
        """Train on simulated episodes. ``X`` and ``y`` are ignored."""
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        self.n_features_in_ = 8
        if self.method in LEARNABLE:
            self.policy_, self.curves_ = train(
                self.make_env, self.trainer_config(), int(self.random_state),
                discrete=self.method == "af_glosa", on_episode=on_episode, on_update=on_update)
        else:
            self.policy_, self.curves_ = None, {"episodes": [], "updates": []}
        return self

    def _check_fitted(self):
        check_is_fitted(self, "n_features_in_")
        if self.method in LEARNABLE and self.policy_ is None:
            raise NotFittedError(f"{self.method} needs a trained policy")

    def policy(self, seed: int = 0):
        """Per-episode decision callable for this method."""
        self._check_fitted()
        if self.method == "benchmark":
            return BenchmarkPolicy()
        if self.method == "rule_glosa":
            sc = self.scenario or Scenario()
            return RuleGlosaPolicy(sc.road.guidance_zone_length, sc.green_duration,
                                   sc.red_duration, int(self.control_step), self.reward_config())
        return LearnedPolicy(self.policy_, self.deterministic, seed, name=self.method)

    def predict(self, X) -> np.ndarray:
        """Advisory for each observation row: columns ``gap_bit``, ``accel``.

        Learned methods act greedily; rule_glosa is evaluated as if each row
        were the zone-entry decision.
        """
        self._check_fitted()
        X = check_observations(X)
        out = np.zeros((len(X), 2))
        for i, row in enumerate(X):
            if self.method in LEARNABLE:
                g, a, *_ = self.policy_.act(normalize(row), None, deterministic=True)
                out[i] = g, a
            else:
                pol = self.policy()
                act = pol(Observation(*row[:7], int(row[7])))
                out[i] = act.gap_bit, act.accel_adv
        return out

    def predict_proba(self, X) -> np.ndarray:
        """Gap-bit probabilities ``[P(gap=0), P(gap=1)]`` per row."""
        self._check_fitted()
        X = check_observations(X)
        if self.method == "af_glosa":
            return self.policy_.discrete_forward(self.policy_.encode(normalize(X)))
        p1 = self.predict(X)[:, 0]
        return np.column_stack([1.0 - p1, p1])

    def run_episode(self, seed: int, density: Optional[float] = None, record_trace=False,
                    env: Optional[GlosaEnv] = None, **reset_kw):
        """Drive one evaluation episode; returns ``(metrics, total_reward, env)``."""
        self._check_fitted()
        env = env or self.make_env(density)
        env.record_trace = record_trace
        obs = env.reset(seed, density=density, **reset_kw)
        pol = self.policy(seed)
        if isinstance(pol, LearnedPolicy):
            pol.begin_episode(seed)
        else:
            pol.begin_episode()
        total, done = 0.0, False
        while not done:
            obs, r, done, _ = env.step(pol(obs))
            total += r
        return env.metrics, total, env

    def score(self, X=None, y=None, seeds=range(100), density: Optional[float] = None) -> float:
        """Mean episode return over evaluation seeds (higher is better)."""
        env = self.make_env(density)
        return float(np.mean([self.run_episode(s, density, env=env)[1] for s in seeds]))

    # -- persistence ---------------------------------------------------
    def save(self, path) -> None:
        """Write the trained parameters plus the scalar hyperparameters."""
        self._check_fitted()
        if self.policy_ is None:
            raise ValueError(f"{self.method} has no parameters to save")
        hyper = {k: v for k, v in self.get_params().items() if k not in ("scenario", "reward")}
        save_checkpoint(self.policy_, path, hyper)

    @classmethod
    def load(cls, path, **overrides) -> "GlosaAgent":
        """Rebuild a fitted agent from :meth:`save` output; ``overrides`` win
        over the stored hyperparameters."""
        pol, hyper = load_checkpoint(path)
        known = cls().get_params()
        params = {k: yaml.safe_load(v) for k, v in hyper.items() if k in known}
        params.update(overrides)
        params.setdefault("method", "af_glosa" if pol.discrete else "l_glosa")
        agent = cls(**params)
        agent.policy_ = pol
        agent.curves_ = {"episodes": [], "updates": []}
        agent.n_features_in_ = 8
        return agent
