"""Shared test oracles: straight-line formula recomputations and a central
finite-difference gradient checker kept independent of the kernel."""
from __future__ import annotations

import math

import numpy as np


def straightline_softmax(logits, temperature):
    scaled = [v / temperature for v in logits]
    peak = max(scaled)
    exps = [math.exp(v - peak) for v in scaled]
    total = sum(exps)
    return [v / total for v in exps]


def straightline_kl(p, q):
    total = 0.0
    for pi, qi in zip(p, q):
        if pi > 0:
            total += pi * math.log(pi / max(qi, 1e-12))
    return total


def straightline_entropy(p):
    total = 0.0
    for pi in p:
        if pi > 0:
            total -= pi * math.log(pi)
    return total


def straightline_cross_entropy(target, predicted):
    total = 0.0
    for ti, qi in zip(target, predicted):
        total -= ti * math.log(max(qi, 1e-12))
    return total


def straightline_uncertainty(p):
    ordered = sorted(p, reverse=True)
    return 1.0 - (ordered[0] - ordered[1])


def straightline_temperature(raw):
    return 10.0 / (1.0 + math.exp(-raw))


def straightline_warmup(raw_reward, epoch, n):
    return raw_reward / (1.0 + math.exp(-epoch / n))


def straightline_discounted_return(rewards, gamma):
    out = []
    for t in range(len(rewards)):
        total = 0.0
        for k, r in enumerate(rewards[t:]):
            total += (gamma ** k) * r
        out.append(total)
    return out


def straightline_clip_objective(ratio, advantage, epsilon):
    clipped = min(max(ratio, 1.0 - epsilon), 1.0 + epsilon)
    return min(ratio * advantage, clipped * advantage)


def straightline_corrector_loss(cumulative, batch_reward, returns, alpha, beta):
    n = len(cumulative)
    loss = alpha * (cumulative[-1] - batch_reward) ** 2
    loss += (beta / n) * sum((g - gi) ** 2 for g, gi in zip(cumulative, returns))
    return loss


def straightline_gae(rewards, values, gamma, lam):
    """Unrolled GAE: advantage_t as the explicit discounted sum of deltas."""
    n = len(rewards)
    deltas = []
    for t in range(n):
        next_value = values[t + 1] if t + 1 < n else 0.0
        deltas.append(rewards[t] + gamma * next_value - values[t])
    advantages = []
    for t in range(n):
        total = 0.0
        for k in range(n - t):
            total += ((gamma * lam) ** k) * deltas[t + k]
        advantages.append(total)
    return advantages


def finite_difference_check(loss_fn, params, analytic_grads, rng, *,
                            n_coords=20, step=1e-5, rtol=1e-4):
    """Compare analytic gradients against central differences.

    Samples ``n_coords`` coordinates across the parameter arrays; the
    relative error at each must be below ``rtol`` (with a small absolute
    guard for near-zero derivatives). Returns the worst relative error.
    """
    sizes = np.array([p.size for p in params])
    total = int(sizes.sum())
    picked = rng.choice(total, size=min(n_coords, total), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    for flat_index in picked:
        array_index = int(np.searchsorted(offsets, flat_index, side="right") - 1)
        local = int(flat_index - offsets[array_index])
        param = params[array_index]
        original = param.flat[local]
        param.flat[local] = original + step
        up = loss_fn()
        param.flat[local] = original - step
        down = loss_fn()
        param.flat[local] = original
        numeric = (up - down) / (2.0 * step)
        analytic = analytic_grads[array_index].flat[local]
        err = abs(analytic - numeric)
        denom = max(abs(numeric), abs(analytic))
        if denom < 1e-8:
            assert err < 1e-8, f"near-zero gradient mismatch: {analytic} vs {numeric}"
            continue
        rel = err / denom
        worst = max(worst, rel)
        assert rel < rtol, (
            f"gradient mismatch at array {array_index} offset {local}: "
            f"analytic {analytic}, numeric {numeric}, rel {rel}")
    return worst


def random_distribution(rng, k):
    raw = rng.uniform(0.05, 1.0, size=k)
    return raw / raw.sum()
