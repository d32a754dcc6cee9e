"""Entropy-ranked instance selection and mix-up for early agent training.

During the exploration phase the student's prediction entropies rank all
training instances; the 10-20% band is mixed with the 40-50% band and the
mixture drives extra agent-learning cycles. The student itself only ever
sees shadow updates here — exploration trains the agent, not the student.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import ExplorationSettings
from .data import InstanceSet
from .nn import Mlp, prediction_entropy, softmax_with_temperature


@dataclass
class EntropyRanking:
    order: np.ndarray      # dataset indices, highest entropy first
    entropies: np.ndarray  # aligned with `order`, non-increasing
    epoch_computed: int


def rank_by_entropy(features, student: Mlp, *, epoch: int = 0) -> EntropyRanking:
    """Rank instances by the student's prediction entropy, descending.

    Ties break by ascending dataset index (stable sort on the negated
    entropies).
    """
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if len(x) == 0:
        raise ValueError("cannot rank an empty dataset")
    probs = softmax_with_temperature(student.forward(x), 1.0)
    entropies = prediction_entropy(probs)
    order = np.argsort(-entropies, kind="stable")
    return EntropyRanking(order=order, entropies=entropies[order], epoch_computed=epoch)


def select_bands(ranking: EntropyRanking, config: ExplorationSettings) -> tuple[np.ndarray, np.ndarray]:
    """Slice the configured rank bands out of the ordering, equalized in size."""
    n = len(ranking.order)
    if n < 10:
        raise ValueError(f"dataset of {n} instances is too small to form entropy bands")
    high = ranking.order[math.floor(config.band_high[0] * n):math.floor(config.band_high[1] * n)]
    low = ranking.order[math.floor(config.band_low[0] * n):math.floor(config.band_low[1] * n)]
    if len(high) == 0 or len(low) == 0:
        raise ValueError("an entropy band came out empty; dataset too small")
    size = min(len(high), len(low))
    return high[:size], low[:size]


def mixup_pairs(high: InstanceSet, low: InstanceSet, lambda_mix: float, teacher: Mlp) -> tuple[InstanceSet, np.ndarray]:
    """Convexly combine paired instances and their one-hot labels.

    The i-th high-band instance pairs with the i-th low-band instance.
    Returns the mixed set plus teacher logits recomputed on the mixed
    features (the teacher defines targets as a function of the input).
    """
    if len(high) != len(low):
        raise ValueError(f"band sizes differ: {len(high)} vs {len(low)}")
    if not 0.5 < lambda_mix <= 1.0:
        raise ValueError(f"lambda_mix must lie in (0.5, 1], got {lambda_mix}")
    features = lambda_mix * high.features + (1.0 - lambda_mix) * low.features
    k = high.num_classes
    soft = lambda_mix * high.target_distributions() + (1.0 - lambda_mix) * low.target_distributions()
    mixed = InstanceSet(features, high.labels.copy(), k, soft_labels=soft)
    return mixed, teacher.forward(features)


@dataclass
class ExplorationDiagnostics:
    steps: int
    warnings: list


def exploration_step(
    mixed: InstanceSet | None,
    *,
    epoch: int,
    phase_epochs: int,
    config: ExplorationSettings,
    batch_size: int,
    rng: np.random.Generator,
    agent_cycle,
) -> ExplorationDiagnostics:
    """Run extra agent-learning cycles on mini-batches of the mixed set.

    ``agent_cycle(instances, picked)`` is supplied by the harness and must
    perform one full shadow cycle (state build, act, shadow student update,
    reward, calibration, PPO update) without touching the real student;
    ``picked`` are the mixed-set indices of the mini-batch. Outside the
    exploration phase, or with no steps configured, this is a no-op.
    """
    if epoch >= phase_epochs or config.extra_steps_per_batch == 0:
        return ExplorationDiagnostics(steps=0, warnings=[])
    if mixed is None or len(mixed) == 0:
        return ExplorationDiagnostics(steps=0, warnings=["exploration skipped: empty mixed set"])
    for _ in range(config.extra_steps_per_batch):
        take = min(batch_size, len(mixed))
        idx = rng.choice(len(mixed), size=take, replace=False)
        agent_cycle(mixed.subset(idx), idx)
    return ExplorationDiagnostics(steps=config.extra_steps_per_batch, warnings=[])
