"""Batch-terminal reward measurement, warm-up shaping, and the learned
redistribution stack.

One training batch forms one fixed-length episode whose only reward
arrives at the end. A recurrent corrector predicts the cumulative batch
return after every action; first differences of those predictions become
the per-instance rewards handed to the agent. A residual state updater
and a return estimator keep the stored states predictive of those returns.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .config import RewardSettings
from .distill import evaluate_model
from .nn import Mlp, Rnn, SgdMomentum, all_finite, sigmoid


def measure_batch_reward(student_before: Mlp, student_after: Mlp, probe_features, probe_labels) -> float:
    """Probe-set cross-entropy improvement; positive means the update helped."""
    if len(np.atleast_1d(probe_labels)) == 0:
        raise ValueError("probe set must be non-empty")
    before_ce, _ = evaluate_model(student_before, probe_features, probe_labels)
    after_ce, _ = evaluate_model(student_after, probe_features, probe_labels)
    return before_ce - after_ce


def warmup_scale(raw_reward: float, epoch: int, n: int) -> float:
    """Scale the raw reward by sigmoid(epoch / n) to damp early-training spikes."""
    if n < 1:
        raise ValueError("warm-up horizon must be at least 1")
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return float(sigmoid(epoch / n) * raw_reward)


class Corrector:
    """Recurrent predictor of the cumulative batch return after each action.

    The recurrent head emits one increment per step and the cumulative
    prediction is their running sum, so the first differences handed to
    the agent read the head directly instead of subtracting two noisy
    carried sums.
    """

    def __init__(self, rng: np.random.Generator, *, state_size: int = 3, hidden_size: int = 32):
        self.state_size = state_size
        self.rnn = Rnn(state_size + 1, hidden_size, rng)

    def params(self) -> list[np.ndarray]:
        return self.rnn.params()

    def copy(self) -> "Corrector":
        dup = Corrector.__new__(Corrector)
        dup.state_size = self.state_size
        dup.rnn = self.rnn.copy()
        return dup

    @staticmethod
    def _stack(states, actions) -> np.ndarray:
        s = np.asarray(states, dtype=np.float64)
        a = np.asarray(actions, dtype=np.float64)
        if s.ndim == 2:
            s = s[None, ...]
            a = a[None, ...]
        if a.shape != s.shape[:2]:
            raise ValueError("states and actions are misaligned")
        return np.concatenate([s, a[..., None]], axis=2)

    def predict(self, states, actions) -> np.ndarray:
        """Cumulative predictions for a single episode ``[T, state]`` / ``[T]``."""
        return self.predict_batch(states[None] if np.ndim(states) == 2 else states,
                                  actions[None] if np.ndim(actions) == 1 else actions)[0]

    def predict_batch(self, states, actions) -> np.ndarray:
        return np.cumsum(self.rnn.forward(self._stack(states, actions)), axis=-1)

    def forward_with_cache(self, states, actions):
        increments, cache = self.rnn.forward_with_cache(self._stack(states, actions))
        return np.cumsum(increments, axis=-1), cache

    def backward(self, cache, dcumulative):
        # increment t feeds every cumulative output from t on, so it
        # collects the reversed running sum of their gradients
        dincrements = np.cumsum(np.asarray(dcumulative)[:, ::-1], axis=1)[:, ::-1]
        return self.rnn.backward(cache, dincrements)


def _sequential_sum(values) -> float:
    total = 0.0
    for v in values:
        total += float(v)
    return total


def _snap_to_grid(values: np.ndarray) -> np.ndarray:
    """Round onto a power-of-two grid ~2^-32 below the largest magnitude.

    On that grid every difference and every running sum of the episode is
    an integer multiple of the grid step far inside the 53-bit mantissa,
    so differencing telescopes back to the final value bit-exactly.
    """
    peak = float(np.max(np.abs(values)))
    if peak == 0.0 or not math.isfinite(peak):
        return values.copy()
    step = 2.0 ** (math.floor(math.log2(peak)) - 32)
    return np.round(values / step) * step


@dataclass
class RewardBatch:
    raw_reward: float
    shaped_reward: float
    per_instance_rewards: np.ndarray
    cumulative_predictions: np.ndarray
    returns: np.ndarray

    def telescoping_gap(self) -> float:
        return _sequential_sum(self.per_instance_rewards) - float(self.cumulative_predictions[-1])


def calibrate_rewards(states, raw_actions, shaped_reward: float, corrector: Corrector,
                      *, raw_reward: float = float("nan")) -> RewardBatch:
    """Redistribute a terminal batch reward into per-instance rewards.

    The corrector emits cumulative predictions g_1..g_n over the episode;
    instance i receives g_i - g_{i-1} (g_0 = 0), so the rewards telescope
    to g_n exactly. Returns are the sequence-wide shaped reward at every
    step.
    """
    s = np.asarray(states, dtype=np.float64)
    a = np.asarray(raw_actions, dtype=np.float64)
    if len(s) == 0 or len(s) != len(a):
        raise ValueError("states and actions must be non-empty and aligned")
    cumulative = corrector.predict(s, a)
    if not np.all(np.isfinite(cumulative)):
        raise RuntimeError("corrector produced non-finite cumulative predictions")
    cumulative = _snap_to_grid(cumulative)
    per_instance = np.diff(cumulative, prepend=0.0)
    returns = np.full(len(per_instance), float(shaped_reward))
    return RewardBatch(
        raw_reward=float(raw_reward),
        shaped_reward=float(shaped_reward),
        per_instance_rewards=per_instance,
        cumulative_predictions=cumulative,
        returns=returns,
    )


def corrector_loss_and_grads(episodes, corrector: Corrector, config: RewardSettings):
    """Loss and gradients of the corrector over stored episodes.

    Per episode the loss is ``alpha_c * (g_T - r)^2 + (beta_c / T) *
    sum_i (g_i - G_i)^2`` with G_i the sequence-wide shaped reward; the
    result is averaged over episodes. Episodes of different lengths are
    grouped so each group runs as one batched sequence pass.
    """
    if not episodes:
        raise ValueError("need at least one stored episode")
    by_length: dict[int, list] = {}
    for ep in episodes:
        by_length.setdefault(len(ep[1]), []).append(ep)
    total = len(episodes)
    loss = 0.0
    grads = [np.zeros_like(p) for p in corrector.params()]
    for steps, group in by_length.items():
        states = np.stack([np.asarray(ep[0], dtype=np.float64) for ep in group])
        actions = np.stack([np.asarray(ep[1], dtype=np.float64) for ep in group])
        rewards = np.array([float(ep[2]) for ep in group])
        cumulative, cache = corrector.forward_with_cache(states, actions)
        targets = rewards[:, None]  # G_i equals the episode reward at every step
        err_terminal = cumulative[:, -1] - rewards
        err_steps = cumulative - targets
        loss += float(
            config.alpha_c * (err_terminal ** 2).sum()
            + (config.beta_c / steps) * (err_steps ** 2).sum(axis=1).sum()
        )
        dout = (2.0 * config.beta_c / steps) * err_steps
        dout[:, -1] += 2.0 * config.alpha_c * err_terminal
        for g, piece in zip(grads, corrector.backward(cache, dout / total)):
            g += piece
    return loss / total, grads


def corrector_train_step(episodes, corrector: Corrector, optimizer: SgdMomentum,
                         config: RewardSettings) -> tuple[float, bool]:
    """One optimizer step on the stored-episode corrector loss."""
    loss, grads = corrector_loss_and_grads(episodes, corrector, config)
    if not np.isfinite(loss):
        return loss, False
    stepped = optimizer.step(corrector.params(), grads)
    return loss, stepped


class StateUpdater:
    """Residual adjustment of stored states, clamped back to [0, 1].

    The final layer starts at zero so the map begins as the identity and
    early training is not destabilized.
    """

    def __init__(self, rng: np.random.Generator, *, state_size: int = 3, hidden_size: int = 32):
        self.net = Mlp([state_size, hidden_size, state_size], rng, final_scale=0.0)

    def params(self) -> list[np.ndarray]:
        return self.net.params()

    def apply(self, states) -> np.ndarray:
        adjusted, _ = self.apply_with_cache(states)
        return adjusted

    def apply_with_cache(self, states):
        s = np.atleast_2d(np.asarray(states, dtype=np.float64))
        delta, cache = self.net.forward_with_cache(s)
        raw = s + delta
        return np.clip(raw, 0.0, 1.0), (cache, raw)

    def backward(self, cache, dadjusted):
        net_cache, raw = cache
        inside = (raw > 0.0) & (raw < 1.0)
        grads, _ = self.net.backward(net_cache, np.asarray(dadjusted) * inside)
        return grads


def make_estimator(rng: np.random.Generator, *, state_size: int = 3, hidden_size: int = 32) -> Mlp:
    """Scalar return predictor used to train the state updater."""
    return Mlp([state_size, hidden_size, 1], rng)


def update_loss_and_grads(states, returns, updater: StateUpdater, estimator: Mlp):
    """Joint return-prediction loss through updater and estimator.

    Returns ``(loss, updater_grads, estimator_grads, adjusted_states)``.
    """
    g = np.asarray(returns, dtype=np.float64)
    adjusted, ucache = updater.apply_with_cache(states)
    if len(adjusted) != len(g):
        raise ValueError("returns must align with states")
    pred, ecache = estimator.forward_with_cache(adjusted)
    err = pred[:, 0] - g
    loss = float((err * err).mean())
    dpred = (2.0 * err / len(err))[:, None]
    egrads, dadjusted = estimator.backward(ecache, dpred)
    ugrads = updater.backward(ucache, dadjusted)
    return loss, ugrads, egrads, adjusted


def update_states(states, returns, updater: StateUpdater, estimator: Mlp,
                  updater_opt: SgdMomentum, estimator_opt: SgdMomentum) -> tuple[np.ndarray, float]:
    """One joint gradient step on the return-prediction loss.

    Returns the adjusted states computed before the step (the ones the
    loss was evaluated on) plus the pre-step loss. A non-finite loss skips
    the step and hands back the original states unchanged.
    """
    loss, ugrads, egrads, adjusted = update_loss_and_grads(states, returns, updater, estimator)
    if not np.isfinite(loss) or not all_finite(ugrads) or not all_finite(egrads):
        return np.atleast_2d(np.asarray(states, dtype=np.float64)), loss
    updater_opt.step(updater.params(), ugrads)
    estimator_opt.step(estimator.params(), egrads)
    return adjusted, loss


class EpisodeHistory:
    """Rolling window of recent episodes for calibration-model training."""

    def __init__(self, window: int):
        if window < 1:
            raise ValueError("window must be at least 1")
        self._episodes: deque = deque(maxlen=window)

    def append(self, states, raw_actions, shaped_reward: float) -> None:
        self._episodes.append((
            np.array(states, dtype=np.float64),
            np.array(raw_actions, dtype=np.float64),
            float(shaped_reward),
        ))

    def __len__(self) -> int:
        return len(self._episodes)

    @property
    def episodes(self) -> list:
        return list(self._episodes)

    def pooled_states_returns(self) -> tuple[np.ndarray, np.ndarray]:
        states = np.concatenate([ep[0] for ep in self._episodes])
        returns = np.concatenate([np.full(len(ep[1]), ep[2]) for ep in self._episodes])
        return states, returns
