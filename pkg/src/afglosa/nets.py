"""Hybrid actor-critic networks with hand-derived gradients.

Shapes (row-vector batches, weights stored ``(fan_in, fan_out)``)::

    encoder     8   -> 128   tanh
    discrete    128 -> 2     softmax
    continuous  129 -> 1     3*tanh  (encoded state + gap bit), plus a free log-std
    critic      8   -> 128 -> 1
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

OBS_DIM = 8
HIDDEN = 128
ACCEL_LIMIT = 3.0
SIGMA_MIN, SIGMA_MAX = 1e-3, 3.0
LOG_2PI = math.log(2.0 * math.pi)

PARAM_ORDER = ("enc_W", "enc_b", "dis_W", "dis_b", "con_W", "con_b", "log_sigma",
               "cri_W1", "cri_b1", "cri_W2", "cri_b2")
DISCRETE_KEYS = ("enc_W", "enc_b", "dis_W", "dis_b")
CONTINUOUS_KEYS = ("enc_W", "enc_b", "con_W", "con_b", "log_sigma")
CRITIC_KEYS = ("cri_W1", "cri_b1", "cri_W2", "cri_b2")

CHECKPOINT_VERSION = 1


class NumericError(FloatingPointError):
    pass


def orthogonal(rng: np.random.Generator, fan_in: int, fan_out: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(fan_in, fan_out), min(fan_in, fan_out)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if fan_in < fan_out:
        q = q.T
    return gain * q[:fan_in, :fan_out]


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def categorical_entropy(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    return -np.sum(np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0), axis=-1)


def gaussian_entropy(sigma) -> np.ndarray:
    return 0.5 * np.log(2.0 * math.pi * math.e * np.square(sigma))


def gaussian_logpdf(x, mu, sigma):
    z = (np.asarray(x) - mu) / sigma
    return -0.5 * z * z - np.log(sigma) - 0.5 * LOG_2PI


def sample_categorical(probs: np.ndarray, rng: np.random.Generator) -> tuple[int, float]:
    """Draw an index from ``probs``; returns ``(action, log-probability)``."""
    u = rng.random()
    a = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    a = min(a, len(probs) - 1)
    while probs[a] <= 0.0 and a > 0:
        a -= 1
    return a, float(np.log(probs[a]))


def sample_gaussian(mu: float, sigma: float, rng: np.random.Generator) -> tuple[float, float, float]:
    """Return ``(clipped action, raw sample, log-density at the raw sample)``."""
    x = mu + sigma * rng.standard_normal()
    return min(max(x, -ACCEL_LIMIT), ACCEL_LIMIT), x, float(gaussian_logpdf(x, mu, sigma))


@dataclass(frozen=True)
class AdamConfig:
    lr_discrete: float = 3e-5
    lr_continuous: float = 3e-5
    lr_critic: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if min(self.lr_discrete, self.lr_continuous, self.lr_critic) <= 0:
            raise ValueError("learning rates must be positive")


class AdamState:
    def __init__(self, keys, params):
        self.keys = tuple(keys)
        self.m = {k: np.zeros_like(params[k]) for k in self.keys}
        self.v = {k: np.zeros_like(params[k]) for k in self.keys}
        self.t = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float, cfg: AdamConfig = AdamConfig()):
    """Bias-corrected Adam update of ``params[k]`` for ``k`` in ``state.keys``, in place."""
    for k in state.keys:
        if np.shape(grads[k]) != np.shape(params[k]):
            raise ValueError(f"gradient shape {np.shape(grads[k])} != parameter shape "
                             f"{np.shape(params[k])} for {k}")
    state.t += 1
    c1 = 1.0 - cfg.beta1 ** state.t
    c2 = 1.0 - cfg.beta2 ** state.t
    for k in state.keys:
        g = grads[k]
        m, v = state.m[k], state.v[k]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        params[k] -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    return params


class PolicySet:
    """All learnable parameters of the hybrid actor and the critic.

    Set ``discrete=False`` for the continuous-only ablation; the gap bit is
    then always 1.
    """

    def __init__(self, seed: int = 0, discrete: bool = True, sigma_init: float = 1.0,
                 params: dict | None = None):
        self.discrete = discrete
        if params is not None:
            self.params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
            return
        rng = np.random.default_rng(seed)
        p = {
            "enc_W": orthogonal(rng, OBS_DIM, HIDDEN, 1.0),
            "enc_b": np.zeros(HIDDEN),
            "dis_W": orthogonal(rng, HIDDEN, 2, 0.01),
            "dis_b": np.zeros(2),
            "con_W": orthogonal(rng, HIDDEN + 1, 1, 0.01),
            "con_b": np.zeros(1),
            "log_sigma": np.array([math.log(sigma_init)]),
            "cri_W1": orthogonal(rng, OBS_DIM, HIDDEN, 1.0),
            "cri_b1": np.zeros(HIDDEN),
            "cri_W2": orthogonal(rng, HIDDEN, 1, 1.0),
            "cri_b2": np.zeros(1),
        }
        if not discrete:
            p["dis_W"][:] = 0.0
        self.params = p

    def keys(self):
        return PARAM_ORDER

    def copy(self) -> "PolicySet":
        return PolicySet(discrete=self.discrete, params=self.params)

    # -- forward -------------------------------------------------------
    def encode(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if not np.all(np.isfinite(x)):
            raise NumericError("non-finite network input")
        return np.tanh(x @ self.params["enc_W"] + self.params["enc_b"])

    def discrete_forward(self, h: np.ndarray) -> np.ndarray:
        return softmax(h @ self.params["dis_W"] + self.params["dis_b"])

    def sigma(self) -> float:
        return float(np.clip(math.exp(self.params["log_sigma"][0]), SIGMA_MIN, SIGMA_MAX))

    def continuous_forward(self, h: np.ndarray, gap_bit) -> tuple[np.ndarray, float]:
        h = np.asarray(h)
        g = np.broadcast_to(np.asarray(gap_bit, dtype=np.float64), h.shape[:-1])[..., None]
        raw = np.concatenate([h, g], axis=-1) @ self.params["con_W"] + self.params["con_b"]
        return ACCEL_LIMIT * np.tanh(raw[..., 0]), self.sigma()

    def critic_forward(self, x: np.ndarray) -> np.ndarray:
        p = self.params
        z = np.tanh(np.asarray(x, dtype=np.float64) @ p["cri_W1"] + p["cri_b1"])
        return (z @ p["cri_W2"] + p["cri_b2"])[..., 0]

    def act(self, x: np.ndarray, rng: np.random.Generator, deterministic: bool = False):
        """Sample a hybrid action for one normalized observation.

        Returns ``(gap_bit, accel, accel_raw, logp_d, logp_c)``.
        """
        h = self.encode(x)
        if self.discrete:
            probs = self.discrete_forward(h)
            if deterministic:
                gap = int(np.argmax(probs))
                logp_d = float(np.log(probs[gap]))
            else:
                gap, logp_d = sample_categorical(probs, rng)
        else:
            gap, logp_d = 1, 0.0
        mu, sigma = self.continuous_forward(h, gap)
        mu = float(mu)
        if deterministic:
            return gap, mu, mu, logp_d, float(gaussian_logpdf(mu, mu, sigma))
        a, raw, logp_c = sample_gaussian(mu, sigma, rng)
        return gap, a, raw, logp_d, logp_c

    # -- losses and gradients ------------------------------------------
    def discrete_loss(self, x, gap, logp_old, adv, eps):
        """Clipped surrogate loss of the gap head and its gradient."""
        p = self.params
        h = self.encode(x)
        probs = self.discrete_forward(h)
        n = len(gap)
        logp = np.log(probs[np.arange(n), gap])
        ratio, dl_dlogp, loss = _clipped(logp, logp_old, adv, eps)
        dz = dl_dlogp[:, None] * (np.eye(2)[gap] - probs)
        grads = {"dis_W": h.T @ dz, "dis_b": dz.sum(0)}
        dh = dz @ p["dis_W"].T
        grads.update(_encoder_grads(x, h, dh))
        return loss, grads, {"ratio": ratio, "probs": probs}

    def continuous_loss(self, x, gap, raw_action, logp_old, adv, eps, mask=None):
        """Clipped surrogate loss of the acceleration head and its gradient.

        ``mask`` selects the samples that contribute (the advisory samples);
        the loss is averaged over the selected count.
        """
        p = self.params
        h = self.encode(x)
        g = np.asarray(gap, dtype=np.float64)
        inp = np.concatenate([h, g[:, None]], axis=1)
        pre = (inp @ p["con_W"] + p["con_b"])[:, 0]
        t = np.tanh(pre)
        mu = ACCEL_LIMIT * t
        ls = p["log_sigma"][0]
        sig_raw = math.exp(ls)
        sigma = min(max(sig_raw, SIGMA_MIN), SIGMA_MAX)
        logp = gaussian_logpdf(raw_action, mu, sigma)
        w = np.ones(len(gap)) if mask is None else np.asarray(mask, dtype=np.float64)
        ratio, dl_dlogp, loss = _clipped(logp, logp_old, adv, eps, weights=w)
        z = (raw_action - mu) / sigma
        dmu = dl_dlogp * z / sigma
        dpre = dmu * ACCEL_LIMIT * (1.0 - t * t)
        grads = {"con_W": inp.T @ dpre[:, None], "con_b": np.array([dpre.sum()])}
        dls = float(np.sum(dl_dlogp * (z * z - 1.0))) if SIGMA_MIN < sig_raw < SIGMA_MAX else 0.0
        grads["log_sigma"] = np.array([dls])
        dh = dpre[:, None] * p["con_W"][:HIDDEN, 0][None, :]
        grads.update(_encoder_grads(x, h, dh))
        return loss, grads, {"ratio": ratio, "mu": mu, "sigma": sigma}

    def critic_loss(self, x, target):
        p = self.params
        x = np.asarray(x, dtype=np.float64)
        z = np.tanh(x @ p["cri_W1"] + p["cri_b1"])
        v = (z @ p["cri_W2"] + p["cri_b2"])[:, 0]
        err = v - target
        n = len(err)
        loss = float(np.mean(err * err))
        dv = 2.0 * err / n
        dz = dv[:, None] * p["cri_W2"][:, 0][None, :]
        dpre = dz * (1.0 - z * z)
        grads = {"cri_W2": z.T @ dv[:, None], "cri_b2": np.array([dv.sum()]),
                 "cri_W1": x.T @ dpre, "cri_b1": dpre.sum(0)}
        return loss, grads

    # -- persistence ---------------------------------------------------
    def save(self, path, hyper: dict | None = None) -> None:
        save_checkpoint(self, path, hyper)

    @classmethod
    def load(cls, path) -> "PolicySet":
        return load_checkpoint(path)[0]


def _clipped(logp, logp_old, adv, eps, weights=None):
    """Per-sample clipped surrogate; returns (ratio, dLoss/dlogp, mean loss)."""
    ratio = ratio_of(logp, logp_old)
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps)
    unclipped_term = ratio * adv
    clipped_term = clipped * adv
    use_unclipped = unclipped_term <= clipped_term
    per_sample = -np.minimum(unclipped_term, clipped_term)
    w = np.ones_like(ratio) if weights is None else weights
    denom = w.sum()
    if denom == 0:
        return ratio, np.zeros_like(ratio), 0.0
    loss = float(np.sum(w * per_sample) / denom)
    dl_dlogp = np.where(use_unclipped, -adv * ratio, 0.0) * w / denom
    return ratio, dl_dlogp, loss


RATIO_CAP = 1e6


class RatioOverflow:
    count = 0


def ratio_of(logp_new, logp_old):
    """Probability ratio exp(new - old), capped at ``RATIO_CAP``."""
    d = np.asarray(logp_new, dtype=np.float64) - np.asarray(logp_old, dtype=np.float64)
    over = d > math.log(RATIO_CAP)
    if np.any(over):
        RatioOverflow.count += int(np.sum(over))
        d = np.where(over, math.log(RATIO_CAP), d)
    return np.exp(d)


def _encoder_grads(x, h, dh):
    dpre = dh * (1.0 - h * h)
    return {"enc_W": np.asarray(x).T @ dpre, "enc_b": dpre.sum(0)}


def clipped_surrogate(ratio, adv, eps):
    """Per-sample loss ``-min(r*A, clip(r, 1-eps, 1+eps)*A)``."""
    ratio = np.asarray(ratio, dtype=np.float64)
    return -np.minimum(ratio * adv, np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv)


# -- checkpoint file -----------------------------------------------------

def save_checkpoint(pol: PolicySet, path, hyper: dict | None = None) -> None:
    """Plain-text checkpoint: header lines, then one ``param`` block per array.

    Values are written with ``repr`` so a reload is bit-identical. The
    discrete head block is omitted for continuous-only policies.
    """
    keys = [k for k in PARAM_ORDER if pol.discrete or k not in ("dis_W", "dis_b")]
    lines = ["afglosa-checkpoint", f"format_version {CHECKPOINT_VERSION}",
             f"discrete {int(pol.discrete)}",
             f"dims obs={OBS_DIM} hidden={HIDDEN} discrete_out=2 continuous_in={HIDDEN + 1}"]
    for k, v in sorted((hyper or {}).items()):
        lines.append(f"hyper {k}={v}")
    for k in keys:
        arr = np.atleast_1d(pol.params[k])
        lines.append(f"param {k} {' '.join(str(d) for d in arr.shape)}")
        lines.extend(repr(float(x)) for x in arr.ravel())
    lines.append("end")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> tuple[PolicySet, dict]:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "afglosa-checkpoint":
        raise ValueError(f"{path}: not a checkpoint file")
    version = int(lines[1].split()[1])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    discrete = bool(int(lines[2].split()[1]))
    hyper, params = {}, {}
    i = 3
    while i < len(lines) and lines[i] != "end":
        parts = lines[i].split()
        if parts[0] == "hyper":
            k, _, v = lines[i][6:].partition("=")
            hyper[k] = v
            i += 1
        elif parts[0] == "param":
            shape = tuple(int(d) for d in parts[2:])
            n = int(np.prod(shape))
            params[parts[1]] = np.array([float(s) for s in lines[i + 1:i + 1 + n]]).reshape(shape)
            i += 1 + n
        else:
            i += 1
    if not discrete:
        params["dis_W"] = np.zeros((HIDDEN, 2))
        params["dis_b"] = np.zeros(2)
    missing = set(PARAM_ORDER) - set(params)
    if missing:
        raise ValueError(f"{path}: missing parameters {sorted(missing)}")
    return PolicySet(discrete=discrete, params=params), hyper
