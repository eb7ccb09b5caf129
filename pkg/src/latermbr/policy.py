"""Gaussian policy over the score weights (alpha, beta), trained with REINFORCE.

A shared tanh layer feeds two linear heads, ``mu`` and ``softplus(.) = sigma``.
The baseline is a separate two-layer net regressed onto observed rewards.
Updates are plain gradient steps, so a batch whose rewards all equal the
baseline leaves every parameter untouched.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .checkpoint import load_tensors, save_tensors
from .ngram_bleu import InvalidInput, smoothed_bleu

log = logging.getLogger(__name__)

NUM_ACTIONS = 2
POLICY_NAMES = ("W", "b", "Wmu", "bmu", "Wsig", "bsig")
BASELINE_NAMES = ("U", "ub", "u", "u0")
LOG_2PI = math.log(2.0 * math.pi)


class UpdateRejected(RuntimeError):
    pass


def softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class PolicyParams:
    W: np.ndarray     # (features, hidden), shared layer
    b: np.ndarray     # (hidden,)
    Wmu: np.ndarray   # (hidden, actions)
    bmu: np.ndarray   # (actions,)
    Wsig: np.ndarray  # (hidden, actions), pre-softplus
    bsig: np.ndarray  # (actions,)
    U: np.ndarray     # baseline: (features, hidden)
    ub: np.ndarray    # (hidden,)
    u: np.ndarray     # (hidden,)
    u0: np.ndarray    # ()

    @property
    def num_features(self) -> int:
        return self.W.shape[0]

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in POLICY_NAMES + BASELINE_NAMES}

    def copy(self) -> "PolicyParams":
        return PolicyParams(**{k: np.array(v, copy=True) for k, v in self.as_dict().items()})

    @classmethod
    def init(cls, num_features: int, hidden: int = 100, num_actions: int = NUM_ACTIONS, seed: int = 0,
             scale: float = 0.1) -> "PolicyParams":
        rng = np.random.default_rng(seed)

        def u(*shape):
            return rng.uniform(-scale, scale, shape)

        return cls(u(num_features, hidden), u(hidden), u(hidden, num_actions), np.zeros(num_actions),
                   u(hidden, num_actions), np.zeros(num_actions),
                   u(num_features, hidden), u(hidden), u(hidden), np.array(0.0))

    @classmethod
    def zeros(cls, num_features: int, hidden: int = 100, num_actions: int = NUM_ACTIONS) -> "PolicyParams":
        p = cls.init(num_features, hidden, num_actions)
        for k, v in p.as_dict().items():
            setattr(p, k, np.zeros_like(v))
        return p


def _features(params: PolicyParams, s) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.shape != (params.num_features,):
        raise InvalidInput(f"expected {params.num_features} features, got shape {s.shape}")
    if not np.isfinite(s).all():
        raise InvalidInput("non-finite features")
    return s


def _hidden(params: PolicyParams, s: np.ndarray) -> np.ndarray:
    return np.tanh(s @ params.W + params.b)


def policy_forward(params: PolicyParams, s) -> tuple[np.ndarray, np.ndarray]:
    """Mean and standard deviation of the action distribution at ``s``."""
    h = _hidden(params, _features(params, s))
    return h @ params.Wmu + params.bmu, softplus(h @ params.Wsig + params.bsig)


def log_density(mu, sigma, a) -> float:
    mu, sigma, a = (np.asarray(x, dtype=np.float64) for x in (mu, sigma, a))
    if np.any(sigma <= 0):
        raise InvalidInput("sigma must be positive")
    return float(np.sum(-(a - mu) ** 2 / (2.0 * sigma ** 2) - np.log(sigma) - 0.5 * LOG_2PI))


def grad_log_prob(params: PolicyParams, s, a) -> dict:
    """Gradient of ``log pi(a|s)`` with respect to the policy parameters."""
    s = _features(params, s)
    a = np.asarray(a, dtype=np.float64)
    h = _hidden(params, s)
    mu = h @ params.Wmu + params.bmu
    zs = h @ params.Wsig + params.bsig
    sigma = softplus(zs)
    diff = a - mu
    g_mu = diff / sigma ** 2
    g_zs = (diff ** 2 / sigma ** 3 - 1.0 / sigma) * _sigmoid(zs)
    g_pre = (params.Wmu @ g_mu + params.Wsig @ g_zs) * (1.0 - h * h)
    return {"W": np.outer(s, g_pre), "b": g_pre, "Wmu": np.outer(h, g_mu), "bmu": g_mu,
            "Wsig": np.outer(h, g_zs), "bsig": g_zs}


def baseline(params: PolicyParams, s) -> float:
    h = np.tanh(_features(params, s) @ params.U + params.ub)
    return float(h @ params.u + params.u0)


def _baseline_grads(params: PolicyParams, s, target: float) -> dict:
    """Gradient of ``(b(s) - target)^2``."""
    h = np.tanh(s @ params.U + params.ub)
    err = 2.0 * (float(h @ params.u + params.u0) - target)
    g_pre = err * params.u * (1.0 - h * h)
    return {"U": np.outer(s, g_pre), "ub": g_pre, "u": err * h, "u0": np.array(err)}


@dataclass(frozen=True)
class Episode:
    features: np.ndarray
    action: np.ndarray  # the raw sample, before clamping
    reward: float


def reinforce_update(params: PolicyParams, episodes: Sequence[Episode], learning_rate: float,
                     baseline_lr: Optional[float] = None) -> tuple[PolicyParams, dict]:
    """One ascent step on mean (R - b(s)) * grad log pi, and one descent step
    of the baseline on its squared error. Returns new params and stats."""
    if len(episodes) == 0:
        raise InvalidInput("no episodes")
    baseline_lr = learning_rate if baseline_lr is None else baseline_lr
    pg = {k: np.zeros_like(getattr(params, k)) for k in POLICY_NAMES}
    bg = {k: np.zeros_like(getattr(params, k)) for k in BASELINE_NAMES}
    sq_err = 0.0
    with np.errstate(invalid="ignore", over="ignore"):
        for ep in episodes:
            s = _features(params, ep.features)
            adv = float(ep.reward) - baseline(params, s)
            sq_err += adv * adv
            if adv != 0.0:
                for k, g in grad_log_prob(params, s, ep.action).items():
                    pg[k] += adv * g
            for k, g in _baseline_grads(params, s, float(ep.reward)).items():
                bg[k] += g
    n = len(episodes)
    bad = [k for k, g in list(pg.items()) + list(bg.items()) if not np.isfinite(g).all()]
    if bad:
        raise UpdateRejected(f"non-finite gradient in {', '.join(bad)} over {n} episodes")
    new = params.copy()
    for k in POLICY_NAMES:
        if pg[k].any():
            setattr(new, k, getattr(params, k) + learning_rate * pg[k] / n)
    for k in BASELINE_NAMES:
        if bg[k].any():
            setattr(new, k, getattr(params, k) - baseline_lr * bg[k] / n)
    stats = {"mean_reward": float(np.mean([ep.reward for ep in episodes])), "baseline_mse": sq_err / n}
    return new, stats


def sample_action(params: PolicyParams, s, mode: str, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Raw action: ``mu`` in deterministic mode, a Gaussian draw otherwise."""
    mu, sigma = policy_forward(params, s)
    if mode == "deterministic":
        return mu
    if mode != "sample":
        raise InvalidInput(f"unknown mode {mode!r}")
    if rng is None:
        raise InvalidInput("sample mode needs a generator")
    return mu + sigma * rng.standard_normal(mu.shape)


def act(params: PolicyParams, s, mode: str = "deterministic",
        rng: Optional[np.random.Generator] = None) -> tuple[float, float]:
    """(alpha, beta) ready for the score function, clamped at zero."""
    a = np.maximum(sample_action(params, s, mode, rng), 0.0)
    return float(a[0]), float(a[1])


@dataclass(frozen=True)
class PolicyTrainConfig:
    updates: int = 500
    episodes_per_update: int = 16
    learning_rate: float = 0.01
    baseline_lr: float = 0.01
    seed: int = 0


def train_policy(params: PolicyParams, num_instances: int, features: Callable[[int], np.ndarray],
                 reward: Callable[[int, np.ndarray], float],
                 config: PolicyTrainConfig = PolicyTrainConfig()) -> tuple[PolicyParams, list]:
    """Cycle through instances, sampling one action each, and update after
    every ``episodes_per_update`` episodes. ``reward`` sees the raw action.

    Returns the final params and one log row per update:
    ``(update, mean_reward, baseline_mse)``.
    """
    if num_instances < 1:
        raise InvalidInput("no training instances")
    rng = np.random.default_rng(config.seed)
    feats = [np.asarray(features(i), dtype=np.float64) for i in range(num_instances)]
    rows = []
    k = 0
    for update in range(1, config.updates + 1):
        episodes = []
        for _ in range(config.episodes_per_update):
            i = k % num_instances
            k += 1
            a = sample_action(params, feats[i], "sample", rng)
            episodes.append(Episode(feats[i], a, float(reward(i, a))))
        params, stats = reinforce_update(params, episodes, config.learning_rate, config.baseline_lr)
        rows.append((update, stats["mean_reward"], stats["baseline_mse"]))
        log.info("update %d reward %.4f baseline mse %.4f", *rows[-1])
    return params, rows


def bandit_reward(a) -> float:
    """Synthetic task with its optimum at (2, 0.5)."""
    return -(float(a[0]) - 2.0) ** 2 - (float(a[1]) - 0.5) ** 2


BANDIT_FEATURES = np.ones(5)


def train_bandit(config: PolicyTrainConfig = PolicyTrainConfig(), hidden: int = 100) -> tuple[PolicyParams, list]:
    params = PolicyParams.init(len(BANDIT_FEATURES), hidden, seed=config.seed)
    return train_policy(params, 1, lambda i: BANDIT_FEATURES, lambda i, a: bandit_reward(a), config)


class DecodeEnvironment:
    """Episodes over a toy corpus: the reward is smoothed BLEU of the
    later-stage MBR output (weights from the action) against the reference."""

    def __init__(self, model, sources: Sequence, references: Sequence, config):
        from .search import decode_features, init_state

        if len(sources) != len(references) or not sources:
            raise InvalidInput("need matching, non-empty sources and references")
        self.model, self.sources, self.references, self.config = model, list(sources), list(references), config
        self._features = [decode_features(init_state(model, src, config), src, config) for src in self.sources]

    def __len__(self) -> int:
        return len(self.sources)

    def features(self, i: int) -> np.ndarray:
        return self._features[i]

    def reward(self, i: int, a) -> float:
        from .search import later_stage_mbr_decode

        alpha, beta = max(0.0, float(a[0])), max(0.0, float(a[1]))
        out = later_stage_mbr_decode(self.model, self.sources[i], self.config, weights=lambda st: (alpha, beta))
        return smoothed_bleu(out.output.content, self.references[i]) if out.output.content else 0.0


def save_policy(params: PolicyParams, path, meta: Optional[dict] = None) -> None:
    save_tensors(path, params.as_dict(), dict(meta or {}, kind="policy"))


def load_policy(path) -> PolicyParams:
    tensors, meta = load_tensors(path)
    if meta.get("kind") != "policy" or set(tensors) != set(POLICY_NAMES + BASELINE_NAMES):
        raise InvalidInput(f"{path}: not a policy checkpoint")
    return PolicyParams(**tensors)


def write_log(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["update", "mean_reward", "baseline_mse"])
        for update, reward, mse in rows:
            w.writerow([update, repr(float(reward)), repr(float(mse))])
