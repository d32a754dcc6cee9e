"""PPO actor-critic mapping state observations to instance temperatures.

The actor emits the mean and log standard deviation of a Gaussian over an
unbounded raw action; ``temperature_of`` squashes the sampled raw action
onto (0, 10). Log-probabilities are recorded for the raw Gaussian sample,
so the clipped-ratio objective stays exactly Gaussian; the squash is part
of how the environment interprets the action, not part of the density.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import PPOSettings
from .nn import LOG_2PI, Mlp, SgdMomentum, sigmoid

ACTOR_LAYERS = (3, 64, 64, 2)
CRITIC_LAYERS = (3, 64, 64, 1)


def make_actor(rng: np.random.Generator) -> Mlp:
    return Mlp(list(ACTOR_LAYERS), rng, final_scale=0.01)


def make_critic(rng: np.random.Generator) -> Mlp:
    return Mlp(list(CRITIC_LAYERS), rng, final_scale=0.01)


def temperature_of(raw_action):
    """Map an unbounded raw action onto the open temperature interval (0, 10)."""
    return 10.0 * sigmoid(raw_action)


def gaussian_log_prob(x, mu, sigma):
    z = (np.asarray(x, dtype=np.float64) - mu) / sigma
    return -0.5 * z * z - np.log(sigma) - 0.5 * LOG_2PI


@dataclass
class PolicyDecision:
    raw_action: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    log_prob: np.ndarray
    value: np.ndarray
    temperature: np.ndarray


def act_batch(states, actor: Mlp, critic: Mlp, rng: np.random.Generator, sigma_floor: float) -> PolicyDecision:
    """Sample one raw action per state row and record its log-density and value."""
    s = np.atleast_2d(np.asarray(states, dtype=np.float64))
    out = actor.forward(s)
    if not np.all(np.isfinite(out)):
        raise RuntimeError("actor produced non-finite outputs; aborting the run")
    mu = out[:, 0]
    sigma = np.maximum(np.exp(out[:, 1]), sigma_floor)
    raw = rng.normal(mu, sigma)
    log_prob = gaussian_log_prob(raw, mu, sigma)
    value = critic.forward(s)[:, 0]
    if not np.all(np.isfinite(value)):
        raise RuntimeError("critic produced non-finite values; aborting the run")
    return PolicyDecision(raw, mu, sigma, log_prob, value, temperature_of(raw))


def act(state, actor: Mlp, critic: Mlp, rng: np.random.Generator, sigma_floor: float) -> PolicyDecision:
    """Single-state convenience wrapper around ``act_batch``."""
    arr = state.as_array() if hasattr(state, "as_array") else np.asarray(state, dtype=np.float64)
    decision = act_batch(arr[None, :], actor, critic, rng, sigma_floor)
    return PolicyDecision(*(field[0] for field in (
        decision.raw_action, decision.mu, decision.sigma,
        decision.log_prob, decision.value, decision.temperature,
    )))


def discounted_return(rewards, gamma: float) -> np.ndarray:
    """Backward-recursive discounted return of a reward sequence."""
    r = np.asarray(rewards, dtype=np.float64)
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    out = np.zeros_like(r)
    acc = 0.0
    for t in range(len(r) - 1, -1, -1):
        acc = r[t] + gamma * acc
        out[t] = acc
    return out


class ReplayBuffer:
    """Transitions of one batch episode, stored as parallel arrays.

    Filled in three stages: construction from a policy decision, reward
    calibration (``set_rewards`` and optionally ``replace_states``), then
    ``compute_advantages``. Cleared by the PPO update that consumes it.
    """

    def __init__(self, states, raw_actions, log_probs, values):
        self.states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        self.raw_actions = np.asarray(raw_actions, dtype=np.float64)
        self.log_probs = np.asarray(log_probs, dtype=np.float64)
        self.values = np.asarray(values, dtype=np.float64)
        n = len(self.states)
        if not (len(self.raw_actions) == len(self.log_probs) == len(self.values) == n):
            raise ValueError("buffer fields must share one length")
        self.rewards: np.ndarray | None = None
        self.returns: np.ndarray | None = None
        self.advantages: np.ndarray | None = None

    @classmethod
    def from_decision(cls, states, decision: PolicyDecision) -> "ReplayBuffer":
        return cls(states, decision.raw_action, decision.log_prob, decision.value)

    def __len__(self) -> int:
        return len(self.states)

    def set_rewards(self, rewards) -> None:
        r = np.asarray(rewards, dtype=np.float64)
        if r.shape != (len(self),):
            raise ValueError("need one reward per transition")
        self.rewards = r

    def replace_states(self, states) -> None:
        s = np.atleast_2d(np.asarray(states, dtype=np.float64))
        if s.shape != self.states.shape:
            raise ValueError("replacement states must match the stored shape")
        self.states = s

    def clear(self) -> None:
        empty = np.zeros((0, self.states.shape[1]))
        self.states = empty
        self.raw_actions = np.zeros(0)
        self.log_probs = np.zeros(0)
        self.values = np.zeros(0)
        self.rewards = None
        self.returns = None
        self.advantages = None


def compute_advantages(buffer: ReplayBuffer, config: PPOSettings) -> None:
    """Fill returns (discounted rewards) and normalized GAE advantages.

    The episode is terminal: the value beyond the last step is 0.
    Advantages are normalized to zero mean and unit variance within the
    episode, with a variance floor of 1e-8.
    """
    if len(buffer) == 0:
        return
    if buffer.rewards is None:
        raise ValueError("rewards must be set before computing advantages")
    rewards = buffer.rewards
    values = buffer.values
    buffer.returns = discounted_return(rewards, config.gamma)
    adv = np.zeros_like(rewards)
    gae = 0.0
    next_value = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        delta = rewards[t] + config.gamma * next_value - values[t]
        gae = delta + config.gamma * config.gae_lambda * gae
        adv[t] = gae
        next_value = values[t]
    mean = adv.mean()
    scale = np.sqrt(max(adv.var(), 1e-8))
    buffer.advantages = (adv - mean) / scale


@dataclass
class PpoDiagnostics:
    actor_loss: float
    critic_loss: float
    clip_fraction: float
    mean_ratio: float
    dropped: int


def actor_loss_and_grads(actor: Mlp, states, raw_actions, old_log_probs, advantages, config: PPOSettings):
    """Clipped-surrogate actor loss (negated objective) and its gradients.

    Transitions with a non-finite probability ratio are dropped and
    counted. Returns ``(loss, grads, clip_fraction, mean_ratio, dropped)``.
    """
    out, cache = actor.forward_with_cache(states)
    mu = out[:, 0]
    log_sigma = out[:, 1]
    raw_sigma = np.exp(log_sigma)
    sigma = np.maximum(raw_sigma, config.sigma_floor)
    log_probs = gaussian_log_prob(raw_actions, mu, sigma)
    with np.errstate(over="ignore"):
        ratio = np.exp(log_probs - old_log_probs)
    valid = np.isfinite(ratio)
    dropped = int(len(ratio) - valid.sum())
    if valid.sum() == 0:
        zero = [np.zeros_like(p) for p in actor.params()]
        return 0.0, zero, 0.0, float("nan"), dropped
    adv = np.asarray(advantages, dtype=np.float64)
    eps = config.clip_epsilon
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
    objective = np.where(valid, np.minimum(unclipped, clipped), 0.0)
    n_valid = int(valid.sum())
    loss = -float(objective.sum()) / n_valid
    # The gradient flows through the ratio only where the unclipped branch
    # is active; a binding clip zeroes the contribution entirely.
    clipped_out = ((ratio > 1.0 + eps) & (adv >= 0)) | ((ratio < 1.0 - eps) & (adv < 0))
    dobj_dratio = np.where(valid & ~clipped_out, adv, 0.0)
    dloss_dlp = -(dobj_dratio * np.where(valid, ratio, 0.0)) / n_valid
    z = (raw_actions - mu) / sigma
    dmu = dloss_dlp * z / sigma
    dlog_sigma = dloss_dlp * (z * z - 1.0) * (raw_sigma > config.sigma_floor)
    grads, _ = actor.backward(cache, np.column_stack([dmu, dlog_sigma]))
    clip_fraction = float((np.abs(ratio[valid] - 1.0) > eps).mean())
    mean_ratio = float(ratio[valid].mean())
    return loss, grads, clip_fraction, mean_ratio, dropped


def critic_loss_and_grads(critic: Mlp, states, returns):
    """Mean squared error of the value head against episode returns."""
    values, cache = critic.forward_with_cache(states)
    err = values[:, 0] - np.asarray(returns, dtype=np.float64)
    loss = float((err * err).mean())
    grads, _ = critic.backward(cache, (2.0 * err / len(err))[:, None])
    return loss, grads


def ppo_update(
    buffer: ReplayBuffer,
    actor: Mlp,
    critic: Mlp,
    actor_opt: SgdMomentum,
    critic_opt: SgdMomentum,
    config: PPOSettings,
) -> PpoDiagnostics:
    """Run ``update_epochs`` clipped-surrogate passes and clear the buffer."""
    if buffer.advantages is None or buffer.returns is None:
        raise ValueError("advantages must be computed before the PPO update")
    actor_losses = []
    critic_losses = []
    clip_fractions = []
    ratios = []
    dropped_total = 0
    for _ in range(config.update_epochs):
        a_loss, a_grads, clip_frac, mean_ratio, dropped = actor_loss_and_grads(
            actor, buffer.states, buffer.raw_actions, buffer.log_probs, buffer.advantages, config)
        actor_opt.step(actor.params(), a_grads)
        c_loss, c_grads = critic_loss_and_grads(critic, buffer.states, buffer.returns)
        critic_opt.step(critic.params(), c_grads)
        actor_losses.append(a_loss)
        critic_losses.append(c_loss)
        clip_fractions.append(clip_frac)
        if np.isfinite(mean_ratio):
            ratios.append(mean_ratio)
        dropped_total += dropped
    buffer.clear()
    return PpoDiagnostics(
        actor_loss=float(np.mean(actor_losses)),
        critic_loss=float(np.mean(critic_losses)),
        clip_fraction=float(np.mean(clip_fractions)),
        mean_ratio=float(np.mean(ratios)) if ratios else float("nan"),
        dropped=dropped_total,
    )
